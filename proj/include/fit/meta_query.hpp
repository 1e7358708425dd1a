#pragma once

#include <map>
#include <string>
#include <vector>

#include "fit/rng.hpp"
#include "fit/tensor.hpp"

namespace fit {

/// Linear temperature decay: tau(step) = max(min(1.0, 1 - step/threshold), floor).
/// The threshold is the number of optimizer steps in one epoch; the schedule
/// advances once per step.
struct TemperatureSchedule {
  long threshold = 1;
  float floor = 0.001f;
};

float temperature(long step, const TemperatureSchedule& schedule);

/// The learnable item meta matrix and its derived quantities: the query
/// group (parameter-free self-attention), per-candidate mixing weights,
/// the soft query used in training, and the hard-query index stored for
/// serving.
class MetaQuery {
 public:
  MetaQuery() = default;
  /// Q is [n x d_in], fan-in-scaled uniform init.
  MetaQuery(int n, int d_in, Rng& rng);

  /// Q* = (Q Q^T) Q, differentiable w.r.t. Q.
  Tensor self_attention(Tape* tape) const;

  /// Row-wise softmax over e_c . Q_i / tau. e_c is [B x d_in]; result [B x n].
  /// The logits intentionally use rows of Q, not Q*.
  Tensor candidate_weights(const Tensor& e_c, float tau, Tape* tape) const;

  /// k [B x n] times Q* [n x d_in] -> soft queries [B x d_in].
  static Tensor soft_query(const Tensor& k, const Tensor& q_star, Tape* tape);

  /// Per-row argmax of the weights; ties take the lowest index.
  static std::vector<int> query_indices(const Tensor& k);

  void register_params(std::map<std::string, Tensor>& out) const;

  int n() const { return Q.dim(0); }
  int d_in() const { return Q.dim(1); }

  Tensor Q;
};

/// Cosine similarity with the same 1e-12 zero-norm guard as l2_normalize.
double query_similarity(const std::vector<float>& a, const std::vector<float>& b);

}  // namespace fit
