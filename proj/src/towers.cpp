#include "fit/towers.hpp"

#include <stdexcept>

namespace fit {

Tower::Tower(int in, const std::vector<int>& widths, int heads, int head_dim,
             const std::string& name, Rng& rng)
    : name_(name), heads_(heads), head_dim_(head_dim) {
  if (widths.empty()) throw std::runtime_error("tower: empty width list");
  int prev = in;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    stack.emplace_back(prev, widths[i], Activation::relu, /*batch_norm=*/true,
                       name + ".fc" + std::to_string(i), rng);
    prev = widths[i];
  }
  out_width_ = prev;
  if (heads > 0) {
    head_w = Tensor::zeros({heads * head_dim, prev}, true);
    fill_kaiming_uniform(head_w, rng, prev);
    head_b = Tensor::zeros({heads * head_dim}, true);
  }
}

Tower::Out Tower::forward(const Tensor& e, bool training, Tape* tape) {
  Out out;
  Tensor x = e;
  for (DenseLayer& layer : stack) x = layer.forward(x, training, tape);
  out.h_top = x;
  out.h = l2_normalize(x, tape);
  if (heads_ > 0) out.z = add_bias(matmul_nt(x, head_w, tape), head_b, tape);
  return out;
}

void Tower::register_params(std::map<std::string, Tensor>& out) const {
  for (const DenseLayer& l : stack) l.register_params(out);
  if (heads_ > 0) {
    out[name_ + ".head_w"] = head_w;
    out[name_ + ".head_b"] = head_b;
  }
}

void Tower::register_buffers(std::map<std::string, Tensor>& out) const {
  for (const DenseLayer& l : stack) l.register_buffers(out);
}

DinAttention::DinAttention(int d_in, const std::vector<int>& hidden, const std::string& name,
                           Rng& rng) {
  int prev = 3 * d_in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    net.emplace_back(prev, hidden[i], Activation::dice, /*batch_norm=*/false,
                     name + ".fc" + std::to_string(i), rng);
    prev = hidden[i];
  }
  net.emplace_back(prev, 1, Activation::none, /*batch_norm=*/false,
                   name + ".fc" + std::to_string(hidden.size()), rng);
}

Tensor DinAttention::weights(const Tensor& seq, const Tensor& query, const Tensor& mask,
                             int batch, int seq_len, bool training, Tape* tape) {
  (void)batch;
  Tensor q_rep = repeat_rows(query, seq_len, tape);
  Tensor x = concat_cols({seq, q_rep, mul(seq, q_rep, tape)}, tape);
  for (DenseLayer& layer : net) x = layer.forward(x, training, tape, &mask);
  return x;  // [B*K x 1]
}

Tensor DinAttention::pool(const Tensor& seq, const Tensor& query, const Tensor& mask,
                          int batch, int seq_len, bool training, Tape* tape) {
  Tensor w = weights(seq, query, mask, batch, seq_len, training, tape);
  return masked_weighted_sum(seq, w, mask, batch, seq_len, tape);
}

void DinAttention::register_params(std::map<std::string, Tensor>& out) const {
  for (const DenseLayer& l : net) l.register_params(out);
}

void DinAttention::register_buffers(std::map<std::string, Tensor>& out) const {
  for (const DenseLayer& l : net) l.register_buffers(out);
}

Tensor assemble_user_input(const std::vector<Tensor>& parts, Tape* tape) {
  return concat_cols(parts, tape);
}

}  // namespace fit
