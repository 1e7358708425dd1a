#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fit {

/// Rank-based (Mann-Whitney) AUC; tied scores contribute 1/2 pair weight
/// via average ranks. Throws if only one class is present.
double auc(const std::vector<float>& scores, const std::vector<int>& labels);

/// Mean negative log likelihood over probabilities clamped to
/// [1e-7, 1 - 1e-7]. Accumulated in f64.
double logloss(const std::vector<float>& probs, const std::vector<int>& labels);

/// Relative improvement over a base model above the 0.5 random-AUC floor,
/// in percent: ((auc_m - 0.5) / (auc_b - 0.5) - 1) * 100.
/// Throws if the base is exactly 0.5.
double rela_impr(double auc_measured, double auc_base);

struct EvalReport {
  double auc = 0.0;
  double logloss = 0.0;
  double rela_impr = 0.0;      // vs base_name when set
  std::string base_name;
  std::int64_t n_examples = 0;
  double wall_seconds = 0.0;
};

}  // namespace fit
