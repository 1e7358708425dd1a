#pragma once

#include <map>
#include <string>
#include <vector>

#include "fit/rng.hpp"
#include "fit/tensor.hpp"

namespace fit {

/// Per-feature batch normalization over the rows of a [m x n] tensor.
/// Train mode normalizes with batch statistics (biased variance) and folds
/// them into the running estimates (unbiased variance, momentum 0.1); eval
/// mode uses the frozen running statistics. An optional row mask restricts
/// the statistics to valid rows, so masked rows never influence — and never
/// receive gradient through — the batch moments.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(int features, bool affine, const std::string& name);

  /// mask, when given, holds one 0/1 float per row of x.
  Tensor forward(const Tensor& x, bool training, Tape* tape, const Tensor* mask = nullptr);

  void register_params(std::map<std::string, Tensor>& out) const;
  void register_buffers(std::map<std::string, Tensor>& out) const;

  Tensor gamma, beta;               // affine only
  Tensor running_mean, running_var; // buffers, never on tape
  float momentum = 0.1f;
  float eps = 1e-5f;

 private:
  std::string name_;
  bool affine_ = false;
  int features_ = 0;
};

/// Fully connected layer y = act(x W^T + b) with W stored [out x in],
/// optionally batch-normalized before the activation. The dice activation
/// gates the pre-activation through a non-affine batch norm:
///   p = sigmoid(BN(x)),  y = p*x + (1-p)*alpha*x  with learned alpha.
class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(int in, int out, Activation act, bool batch_norm, const std::string& name,
             Rng& rng);

  Tensor forward(const Tensor& x, bool training, Tape* tape, const Tensor* mask = nullptr);

  void register_params(std::map<std::string, Tensor>& out) const;
  void register_buffers(std::map<std::string, Tensor>& out) const;

  Tensor weight, bias;  // weight [out x in]
  Activation activation = Activation::none;

 private:
  std::string name_;
  bool use_bn_ = false;
  BatchNorm bn_;        // post-linear, affine (when use_bn_)
  BatchNorm dice_bn_;   // inside dice, non-affine
  Tensor dice_alpha_;
};

/// Embedding table with row 0 reserved as the all-zero padding row. Rows
/// 1..vocab are trainable; gradient flow skips row 0 and Adam's zero-moment
/// start keeps it frozen at zero.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(int vocab, int dim, const std::string& name, Rng& rng);

  Tensor lookup(const std::vector<int>& ids, Tape* tape) const;
  void register_params(std::map<std::string, Tensor>& out) const;

  int rows() const { return table.dim(0); }  // vocab + 1
  int dim() const { return table.dim(1); }

  Tensor table;

 private:
  std::string name_;
};

}  // namespace fit
