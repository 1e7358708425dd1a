#include "fit/optim.hpp"

#include <cmath>

namespace fit {

Adam::Adam(const std::map<std::string, Tensor>& params, AdamConfig cfg) : cfg_(cfg) {
  slots_.reserve(params.size());
  for (const auto& [name, t] : params) {
    (void)name;
    Slot s;
    s.param = t;
    s.m.assign(static_cast<std::size_t>(t.size()), 0.0f);
    s.v.assign(static_cast<std::size_t>(t.size()), 0.0f);
    slots_.push_back(std::move(s));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
  for (Slot& s : slots_) {
    const std::vector<float>* g = s.param.grad_if_allocated();
    float* w = s.param.data();
    const std::size_t n = s.m.size();
    for (std::size_t i = 0; i < n; ++i) {
      const float gi = g ? (*g)[i] : 0.0f;
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0f - cfg_.beta1) * gi;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0f - cfg_.beta2) * gi * gi;
      const float mhat = s.m[i] / static_cast<float>(bc1);
      const float vhat = s.v[i] / static_cast<float>(bc2);
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Slot& s : slots_) s.param.zero_grad();
}

}  // namespace fit
