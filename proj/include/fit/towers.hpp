#pragma once

#include <map>
#include <string>
#include <vector>

#include "fit/layers.hpp"
#include "fit/rng.hpp"
#include "fit/tensor.hpp"

namespace fit {

/// FC stack (batch-normalized, ReLU) topped with an L2-normalized output and
/// optional multi-head projections taken from the pre-normalization top
/// layer:
///   h^L  = stack(e)
///   h    = l2_normalize(h^L)
///   z^i  = W^i h^L + b^i           (all heads in one batched transform)
class Tower {
 public:
  Tower() = default;
  /// heads == 0 skips the projections (the dot scorer consumes h directly).
  Tower(int in, const std::vector<int>& widths, int heads, int head_dim,
        const std::string& name, Rng& rng);

  struct Out {
    Tensor h_top;  // [B x widths.back()]
    Tensor h;      // [B x widths.back()], unit rows
    Tensor z;      // [B x heads*head_dim]; undefined when heads == 0
  };
  Out forward(const Tensor& e, bool training, Tape* tape);

  void register_params(std::map<std::string, Tensor>& out) const;
  void register_buffers(std::map<std::string, Tensor>& out) const;

  int heads() const { return heads_; }
  int head_dim() const { return head_dim_; }
  int out_width() const { return out_width_; }

  std::vector<DenseLayer> stack;
  Tensor head_w, head_b;  // [heads*head_dim x widths.back()], [heads*head_dim]

 private:
  std::string name_;
  int heads_ = 0;
  int head_dim_ = 0;
  int out_width_ = 0;
};

/// DIN-style attention pooling. The per-position weight net sees
/// [e || q || e*q] and emits one unnormalized scalar per position; masked
/// positions contribute nothing to the sum and (through the masked batch
/// norm inside dice) nothing to anyone's statistics.
class DinAttention {
 public:
  DinAttention() = default;
  DinAttention(int d_in, const std::vector<int>& hidden, const std::string& name, Rng& rng);

  /// seq [B*K x d_in], query [B x d_in], mask [B*K] -> pooled [B x d_in].
  Tensor pool(const Tensor& seq, const Tensor& query, const Tensor& mask, int batch,
              int seq_len, bool training, Tape* tape);

  /// Raw per-position weights (before masking), for oracle tests.
  Tensor weights(const Tensor& seq, const Tensor& query, const Tensor& mask, int batch,
                 int seq_len, bool training, Tape* tape);

  void register_params(std::map<std::string, Tensor>& out) const;
  void register_buffers(std::map<std::string, Tensor>& out) const;

  std::vector<DenseLayer> net;
};

/// e_u = [profile features || pooled sequence || query], in that fixed order;
/// parts not used by an ablation are simply omitted by the caller.
Tensor assemble_user_input(const std::vector<Tensor>& parts, Tape* tape);

}  // namespace fit
