#pragma once

#include <map>
#include <string>
#include <vector>

#include "fit/rng.hpp"
#include "fit/tensor.hpp"

namespace fit {

enum class Scorer { dot, summax, flatten_fc, lss };

Scorer scorer_from_string(const std::string& s);
std::string to_string(Scorer s);

/// Row-then-column transform of the head similarity matrix, projected to a
/// scalar:
///   S'_{i,:}  = ReLU(W1 S_{i,:} + b1)      row-wise,    S'  is [hu x d]
///   S''_{:,j} = ReLU(W2 S'_{:,j} + b2)     column-wise, S'' is [d x d]
///   score     = w . flatten_rowmajor(S'')
struct LssParams {
  Tensor W1, b1;  // [d x hv], [d]
  Tensor W2, b2;  // [d x hu], [d]
  Tensor w;       // [d*d]
};

LssParams make_lss_params(int hu, int hv, int d, const std::string& name, Rng& rng,
                          std::map<std::string, Tensor>* reg);

/// score = w . (W3 flatten_rowmajor(S) + b3), no nonlinearity.
struct FlattenFcParams {
  Tensor W3, b3;  // [d x hu*hv], [d]
  Tensor w;       // [d]
};

FlattenFcParams make_flatten_fc_params(int hu, int hv, int d, const std::string& name,
                                       Rng& rng, std::map<std::string, Tensor>* reg);

/// All scoring functions are batched: one score per row.

/// h_u, h_v [B x d] -> [B] of row dot products.
Tensor dot_score(const Tensor& h_u, const Tensor& h_v, Tape* tape);

/// z_u [B x hu*p], z_v [B x hv*p] -> [B x hu*hv], entry (i,j) = z_u^i . z_v^j.
Tensor similarity_matrix(const Tensor& z_u, const Tensor& z_v, int hu, int hv, int p,
                         Tape* tape);

/// sim [B x hu*hv] -> [B]: sum over user heads of the max over item heads.
Tensor summax_score(const Tensor& sim, int hu, int hv, Tape* tape);

Tensor lss_score(const Tensor& sim, const LssParams& params, int hu, int hv, Tape* tape);

Tensor flatten_fc_score(const Tensor& sim, const FlattenFcParams& params, int hu, int hv,
                        Tape* tape);

/// Trainable parameter counts (for the efficiency comparison).
long lss_param_count(int hu, int hv, int d);
long flatten_fc_param_count(int hu, int hv, int d);

}  // namespace fit
