#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fit/rng.hpp"
#include "fit/tensor.hpp"

namespace fit {

struct Interaction {
  int item = 0;       // dense 0-based item id
  int cat = 0;        // dense 0-based category id
  std::int64_t ts = 0;
};

/// Per-user, time-sorted interaction histories with densely re-indexed ids.
struct InteractionLog {
  std::vector<std::vector<Interaction>> users;  // index = dense user id
  std::vector<int> item_cat;                    // dense item id -> category id
  int n_items = 0;
  int n_cats = 0;
  std::int64_t n_ratings = 0;
  // Counts as seen in the raw files, before dropping unrated movies.
  int raw_users = 0;
  int raw_movies = 0;
  int rated_movies = 0;
};

struct TrainingExample {
  int user = 0;
  std::vector<std::pair<int, int>> seq;  // (item, cat), oldest -> newest, <= max_len
  int cand_item = 0;
  int cand_cat = 0;
  int label = 0;

  bool operator==(const TrainingExample&) const = default;
};

/// One padded mini-batch. Ids are shifted by +1 for table lookups; 0 is the
/// reserved padding row. Sequences occupy a valid prefix of each K-slot row;
/// the mask holds 1.0 on valid positions.
struct Batch {
  int size = 0;
  int seq_len = 0;
  std::vector<int> user_ids;              // B
  std::vector<int> seq_items, seq_cats;   // B*K
  std::vector<int> cand_items, cand_cats; // B
  Tensor mask;                            // [B*K]
  Tensor labels;                          // [B]
  std::vector<int> labels_int;            // B
};

/// Reads `ratings.dat` and `movies.dat` (MovieLens-1M format, `::`-separated)
/// from `dir`. Category = first listed genre. Users and rated movies are
/// re-indexed densely by ascending original id; unrated movies are dropped
/// (their count is reported via raw_movies vs rated_movies).
InteractionLog load_movielens(const std::string& dir);

struct BuildResult {
  std::vector<TrainingExample> examples;
  int dropped_users = 0;
};

/// Leave-last-out construction: per user with >= 2 events, the last event is
/// the positive candidate and one never-interacted item (uniform) is the
/// negative; both share the <= max_len most recent preceding events.
BuildResult build_examples(const InteractionLog& log, int max_len, std::uint64_t seed);

struct SyntheticData {
  std::vector<TrainingExample> examples;
  std::vector<int> item_cluster;  // dense item id -> cluster
  int n_users = 0;
  int n_items = 0;
  int n_cats = 0;      // == n_clusters (category id doubles as cluster id)
  int n_clusters = 0;
  int max_seq_len = 0;
  bool degenerate = false;  // n_clusters == 1: every label is positive
};

/// Planted-structure generator: items fall into equal-size clusters (the
/// category id is the cluster id), each user's sequence mixes a preferred
/// cluster with uniform noise, and the label is 1 iff the candidate's
/// cluster is the majority cluster of the realized sequence (ties to the
/// lowest cluster id). Negatives are drawn from clusters whose count trails
/// the majority by at least 2 when possible. The rule is only computable by
/// crossing the sequence with the candidate, which is what makes the data an
/// oracle for sequence-item interaction.
SyntheticData synthetic_planted(std::uint64_t seed, int n_users, int n_items,
                                int n_clusters, int seq_min = 8, int seq_max = 16,
                                float mix = 0.5f);

struct Split {
  std::vector<TrainingExample> train, val, test;
};

/// User-level split: a fixed 10% of users are held out as test, then
/// val_frac of the remaining pool becomes validation. No user appears in
/// two parts.
Split split_examples(const std::vector<TrainingExample>& examples, float val_frac,
                     std::uint64_t seed);

/// Cuts examples into batches of `batch_size` (last one partial), padding
/// sequences to `max_seq_len`. Pass a Rng to shuffle example order first
/// (training); pass nullptr to keep input order (evaluation).
std::vector<Batch> make_batches(const std::vector<TrainingExample>& examples,
                                int batch_size, int max_seq_len, Rng* shuffle_rng);

/// Binary example cache, little-endian: header (magic "FITD", version u16,
/// example count u32, n_users/n_items/n_cats u32, max_len u16), then one
/// fixed-width record per example.
void save_examples(const std::string& path, const std::vector<TrainingExample>& examples,
                   int n_users, int n_items, int n_cats, int max_len);

struct CacheContents {
  std::vector<TrainingExample> examples;
  int n_users = 0, n_items = 0, n_cats = 0, max_len = 0;
};

CacheContents load_examples(const std::string& path);

}  // namespace fit
