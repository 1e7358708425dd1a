#include "fit/scorers.hpp"

#include <stdexcept>

namespace fit {

Scorer scorer_from_string(const std::string& s) {
  if (s == "dot") return Scorer::dot;
  if (s == "summax") return Scorer::summax;
  if (s == "flatten_fc") return Scorer::flatten_fc;
  if (s == "lss") return Scorer::lss;
  throw std::runtime_error("unknown scorer '" + s + "' (want dot|summax|flatten_fc|lss)");
}

std::string to_string(Scorer s) {
  switch (s) {
    case Scorer::dot: return "dot";
    case Scorer::summax: return "summax";
    case Scorer::flatten_fc: return "flatten_fc";
    case Scorer::lss: return "lss";
  }
  return "?";
}

LssParams make_lss_params(int hu, int hv, int d, const std::string& name, Rng& rng,
                          std::map<std::string, Tensor>* reg) {
  LssParams p;
  p.W1 = Tensor::zeros({d, hv}, true);
  fill_kaiming_uniform(p.W1, rng, hv);
  p.b1 = Tensor::zeros({d}, true);
  p.W2 = Tensor::zeros({d, hu}, true);
  fill_kaiming_uniform(p.W2, rng, hu);
  p.b2 = Tensor::zeros({d}, true);
  p.w = Tensor::zeros({d * d}, true);
  fill_kaiming_uniform(p.w, rng, d * d);
  if (reg) {
    (*reg)[name + ".W1"] = p.W1;
    (*reg)[name + ".b1"] = p.b1;
    (*reg)[name + ".W2"] = p.W2;
    (*reg)[name + ".b2"] = p.b2;
    (*reg)[name + ".w"] = p.w;
  }
  return p;
}

FlattenFcParams make_flatten_fc_params(int hu, int hv, int d, const std::string& name,
                                       Rng& rng, std::map<std::string, Tensor>* reg) {
  FlattenFcParams p;
  p.W3 = Tensor::zeros({d, hu * hv}, true);
  fill_kaiming_uniform(p.W3, rng, hu * hv);
  p.b3 = Tensor::zeros({d}, true);
  p.w = Tensor::zeros({d}, true);
  fill_kaiming_uniform(p.w, rng, d);
  if (reg) {
    (*reg)[name + ".W3"] = p.W3;
    (*reg)[name + ".b3"] = p.b3;
    (*reg)[name + ".w"] = p.w;
  }
  return p;
}

Tensor dot_score(const Tensor& h_u, const Tensor& h_v, Tape* tape) {
  if (h_u.shape() != h_v.shape() || h_u.rank() != 2)
    throw std::runtime_error("dot_score: inputs must be equal [B x d]");
  Tensor s = pairwise_head_dots(h_u, h_v, 1, 1, h_u.dim(1), tape);
  return reshape(s, {h_u.dim(0)}, tape);
}

Tensor similarity_matrix(const Tensor& z_u, const Tensor& z_v, int hu, int hv, int p,
                         Tape* tape) {
  return pairwise_head_dots(z_u, z_v, hu, hv, p, tape);
}

Tensor summax_score(const Tensor& sim, int hu, int hv, Tape* tape) {
  return summax_from_sim(sim, hu, hv, tape);
}

Tensor lss_score(const Tensor& sim, const LssParams& params, int hu, int hv, Tape* tape) {
  const int b = sim.dim(0);
  const int d = params.W1.dim(0);
  // Row-wise: the B*hu rows of length hv each go through W1.
  Tensor rows = reshape(sim, {b * hu, hv}, tape);
  Tensor s1 = relu(add_bias(matmul_nt(rows, params.W1, tape), params.b1, tape), tape);
  // Column-wise: transpose each example's [hu x d] block so its d columns
  // (length hu) become rows for W2.
  Tensor s1t = batched_transpose(reshape(s1, {b, hu * d}, tape), hu, d, tape);
  Tensor cols = reshape(s1t, {b * d, hu}, tape);
  Tensor s2t = relu(add_bias(matmul_nt(cols, params.W2, tape), params.b2, tape), tape);
  // s2t rows are S'' columns; transpose back so the flatten is row-major
  // over S'' as documented.
  Tensor s2 = batched_transpose(reshape(s2t, {b, d * d}, tape), d, d, tape);
  return rowwise_dot(s2, params.w, tape);
}

Tensor flatten_fc_score(const Tensor& sim, const FlattenFcParams& params, int hu, int hv,
                        Tape* tape) {
  if (sim.dim(1) != hu * hv) throw std::runtime_error("flatten_fc_score: width mismatch");
  Tensor y = add_bias(matmul_nt(sim, params.W3, tape), params.b3, tape);
  return rowwise_dot(y, params.w, tape);
}

long lss_param_count(int hu, int hv, int d) {
  return static_cast<long>(d) * hv + d + static_cast<long>(d) * hu + d +
         static_cast<long>(d) * d;
}

long flatten_fc_param_count(int hu, int hv, int d) {
  return static_cast<long>(d) * hu * hv + d + d;
}

}  // namespace fit
