#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fit/model.hpp"
#include "fit/store.hpp"

namespace fit {

/// Runs the item tower over the whole catalog (batched), pairs each item's
/// representation with its hard-query index at the temperature floor, and
/// writes the store file. `n_items` is the dense item count; categories come
/// from `item_cat` (dense ids).
void precompute_store(FitModel& model, const std::vector<int>& item_cat,
                      const std::string& out_path);

struct ServeRequest {
  UserContext user;
  std::vector<std::uint64_t> candidates;  // dense item ids
};

struct ScoredItem {
  std::uint64_t id = 0;
  float score = 0.0f;
  bool ok = false;
  std::string error;  // set when ok is false (e.g. id missing from store)
};

/// The decoupled online path: one user-tower pass over the whole query
/// group, then per candidate a store lookup + scorer application. Results
/// keep the request order; unknown ids produce per-item errors without
/// failing the request.
std::vector<ScoredItem> serve_score(FitModel& model, const ItemStore& store,
                                    const ServeRequest& request);

struct BenchReport {
  int k = 0;
  int repetitions = 0;
  double user_ms = 0.0;    // user-tower (query-group) phase, median
  double cand_ms = 0.0;    // candidate scoring phase, median
  double total_ms = 0.0;
  double single_tower_ms = 0.0;  // joint forward per candidate, median
  double speedup = 0.0;          // single_tower_ms / total_ms
};

/// Medians over `repetitions` timed runs of both paths for the given k.
/// `item_cat` (dense item id -> category) lets the single-tower oracle run
/// the joint forward over the same candidates the store path scored.
BenchReport latency_bench(FitModel& model, const ItemStore& store, const UserContext& user,
                          const std::vector<std::uint64_t>& candidates,
                          const std::vector<int>& item_cat, int repetitions);

/// Least-squares fit of y = a + b*k; returns R^2. Used to verify the
/// affine-in-k latency claim.
double affine_r2(const std::vector<double>& ks, const std::vector<double>& ys);

}  // namespace fit
