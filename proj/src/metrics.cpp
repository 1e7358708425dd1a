#include "fit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fit {

double auc(const std::vector<float>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::runtime_error("auc: scores/labels size mismatch or empty");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::runtime_error("auc: labels must be 0/1");
    n_pos += static_cast<std::size_t>(y);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::runtime_error("auc: both classes must be present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of average ranks (1-based) of the positives; ties share the mean
  // rank of their block, which makes each tied pos/neg pair count 1/2.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]] == 1) rank_sum += avg_rank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double logloss(const std::vector<float>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size() || probs.empty())
    throw std::runtime_error("logloss: probs/labels size mismatch or empty");
  constexpr double kClamp = 1e-7;
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(static_cast<double>(probs[i]), kClamp, 1.0 - kClamp);
    acc -= labels[i] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return acc / static_cast<double>(probs.size());
}

double rela_impr(double auc_measured, double auc_base) {
  if (auc_base == 0.5) throw std::runtime_error("rela_impr: base AUC is exactly 0.5");
  return ((auc_measured - 0.5) / (auc_base - 0.5) - 1.0) * 100.0;
}

}  // namespace fit
