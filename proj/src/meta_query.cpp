#include "fit/meta_query.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fit {

float temperature(long step, const TemperatureSchedule& schedule) {
  if (schedule.threshold <= 0) throw std::runtime_error("temperature: threshold <= 0");
  if (step < 0) throw std::runtime_error("temperature: negative step");
  const double t = 1.0 - static_cast<double>(step) / static_cast<double>(schedule.threshold);
  return static_cast<float>(
      std::max(std::min(1.0, t), static_cast<double>(schedule.floor)));
}

MetaQuery::MetaQuery(int n, int d_in, Rng& rng) {
  Q = Tensor::zeros({n, d_in}, true);
  fill_kaiming_uniform(Q, rng, d_in);
}

Tensor MetaQuery::self_attention(Tape* tape) const {
  Tensor qqt = matmul_nt(Q, Q, tape);
  return matmul(qqt, Q, tape);
}

Tensor MetaQuery::candidate_weights(const Tensor& e_c, float tau, Tape* tape) const {
  Tensor logits = matmul_nt(e_c, Q, tape);
  return softmax_temperature(logits, tau, tape);
}

Tensor MetaQuery::soft_query(const Tensor& k, const Tensor& q_star, Tape* tape) {
  return matmul(k, q_star, tape);
}

std::vector<int> MetaQuery::query_indices(const Tensor& k) {
  const int rows = k.rank() == 2 ? k.dim(0) : 1;
  const int cols = k.rank() == 2 ? k.dim(1) : k.dim(0);
  std::vector<int> out(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r)
    out[static_cast<std::size_t>(r)] = argmax(
        std::span<const float>(k.data() + static_cast<std::size_t>(r) * cols,
                               static_cast<std::size_t>(cols)));
  return out;
}

void MetaQuery::register_params(std::map<std::string, Tensor>& out) const {
  out["mqm.Q"] = Q;
}

double query_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::runtime_error("query_similarity: size mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  constexpr double kEps = 1e-12;
  return dot / (std::max(std::sqrt(na), kEps) * std::max(std::sqrt(nb), kEps));
}

}  // namespace fit
