#pragma once

#include <map>
#include <string>
#include <vector>

#include "fit/tensor.hpp"

namespace fit {

struct AdamConfig {
  float lr = 0.001f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Standard bias-corrected Adam over a named parameter set. Parameters are
/// visited in map (name) order so updates are deterministic. Slots are
/// created lazily; a parameter whose gradient was never touched this step
/// still advances its moments (with zero gradient), matching the usual
/// framework semantics.
class Adam {
 public:
  explicit Adam(const std::map<std::string, Tensor>& params, AdamConfig cfg = {});

  /// Applies one update from the gradients currently stored on the params.
  void step();
  void zero_grad();
  long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  struct Slot {
    Tensor param;
    std::vector<float> m, v;
  };
  std::vector<Slot> slots_;
  AdamConfig cfg_;
  long t_ = 0;
};

}  // namespace fit
