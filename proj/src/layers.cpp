#include "fit/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace fit {

namespace {
void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}
}  // namespace

// --------------------------------------------------------------------------
// BatchNorm
// --------------------------------------------------------------------------

BatchNorm::BatchNorm(int features, bool affine, const std::string& name)
    : name_(name), affine_(affine), features_(features) {
  if (affine) {
    gamma = Tensor::full({features}, 1.0f, true);
    beta = Tensor::zeros({features}, true);
  }
  running_mean = Tensor::zeros({features});
  running_var = Tensor::full({features}, 1.0f);
}

Tensor BatchNorm::forward(const Tensor& x, bool training, Tape* tape, const Tensor* mask) {
  require(x.rank() == 2 && x.dim(1) == features_, "batch_norm: expected [m," +
                                                      std::to_string(features_) + "], got " +
                                                      shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  if (mask)
    require(mask->size() == m, "batch_norm: mask must hold one entry per row");

  Tensor out = Tensor::zeros(x.shape());

  if (!training) {
    // Frozen statistics: a per-feature affine map.
    std::vector<float> a(static_cast<std::size_t>(n)), c(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      const float inv = 1.0f / std::sqrt(running_var.at(j) + eps);
      const float g = affine_ ? gamma.at(j) : 1.0f;
      a[static_cast<std::size_t>(j)] = g * inv;
      c[static_cast<std::size_t>(j)] =
          (affine_ ? beta.at(j) : 0.0f) - g * inv * running_mean.at(j);
    }
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        out.data()[static_cast<std::size_t>(i) * n + j] =
            a[static_cast<std::size_t>(j)] * x.data()[static_cast<std::size_t>(i) * n + j] +
            c[static_cast<std::size_t>(j)];
    check_finite(out, "batch_norm");
    if (tape && (x.requires_grad() || (affine_ && gamma.requires_grad()))) {
      out.set_requires_grad(true);
      Tensor xc = x, oc = out, gm = gamma, bt = beta;
      const bool aff = affine_;
      tape->record([xc, oc, gm, bt, a, m, n, aff]() mutable {
        const auto* g = oc.grad_if_allocated();
        if (!g) return;
        if (xc.requires_grad()) {
          auto& gx = xc.grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
              gx[static_cast<std::size_t>(i) * n + j] +=
                  (*g)[static_cast<std::size_t>(i) * n + j] * a[static_cast<std::size_t>(j)];
        }
        if (aff && gm.requires_grad()) {
          auto& gg = gm.grad();
          auto& gb = bt.grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
              const float gij = (*g)[static_cast<std::size_t>(i) * n + j];
              // xhat = (out - beta) / gamma; fall back to the raw affine
              // when gamma is exactly zero.
              const float denom = gm.at(j) != 0.0f ? gm.at(j) : 1.0f;
              const float xhat =
                  (oc.data()[static_cast<std::size_t>(i) * n + j] - bt.at(j)) / denom;
              gg[j] += gij * xhat;
              gb[j] += gij;
            }
        }
      });
    }
    return out;
  }

  // Training mode: batch statistics over valid rows.
  double cnt = 0.0;
  if (mask) {
    for (int i = 0; i < m; ++i) cnt += mask->data()[i];
  } else {
    cnt = static_cast<double>(m);
  }
  require(cnt >= 2.0, "batch_norm: training needs >= 2 valid rows, got " +
                          std::to_string(static_cast<long>(cnt)));
  const double c = cnt;

  std::vector<double> mean(static_cast<std::size_t>(n), 0.0);
  std::vector<double> var(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < m; ++i) {
    if (mask && mask->data()[i] == 0.0f) continue;
    for (int j = 0; j < n; ++j)
      mean[static_cast<std::size_t>(j)] += x.data()[static_cast<std::size_t>(i) * n + j];
  }
  for (int j = 0; j < n; ++j) mean[static_cast<std::size_t>(j)] /= c;
  for (int i = 0; i < m; ++i) {
    if (mask && mask->data()[i] == 0.0f) continue;
    for (int j = 0; j < n; ++j) {
      const double d = x.data()[static_cast<std::size_t>(i) * n + j] -
                       mean[static_cast<std::size_t>(j)];
      var[static_cast<std::size_t>(j)] += d * d;
    }
  }
  for (int j = 0; j < n; ++j) var[static_cast<std::size_t>(j)] /= c;  // biased

  // Fold into running stats with the unbiased variance.
  for (int j = 0; j < n; ++j) {
    const float ub = static_cast<float>(var[static_cast<std::size_t>(j)] * c / (c - 1.0));
    running_mean.data()[j] = (1.0f - momentum) * running_mean.data()[j] +
                             momentum * static_cast<float>(mean[static_cast<std::size_t>(j)]);
    running_var.data()[j] = (1.0f - momentum) * running_var.data()[j] + momentum * ub;
  }

  std::vector<float> inv_std(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j)
    inv_std[static_cast<std::size_t>(j)] =
        static_cast<float>(1.0 / std::sqrt(var[static_cast<std::size_t>(j)] + eps));

  // xhat for every row (masked rows are normalized too; they just do not
  // contribute to the statistics, so loss paths that zero them downstream
  // leave them with exactly zero gradient).
  Tensor xhat = Tensor::zeros(x.shape());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      xhat.data()[static_cast<std::size_t>(i) * n + j] =
          static_cast<float>((x.data()[static_cast<std::size_t>(i) * n + j] -
                              mean[static_cast<std::size_t>(j)]) *
                             inv_std[static_cast<std::size_t>(j)]);

  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      float v = xhat.data()[static_cast<std::size_t>(i) * n + j];
      if (affine_) v = v * gamma.at(j) + beta.at(j);
      out.data()[static_cast<std::size_t>(i) * n + j] = v;
    }
  check_finite(out, "batch_norm");

  if (tape && (x.requires_grad() || (affine_ && gamma.requires_grad()))) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out, xh = xhat, gm = gamma, bt = beta;
    Tensor mk = mask ? *mask : Tensor();
    const bool aff = affine_;
    tape->record([xc, oc, xh, gm, bt, mk, inv_std, m, n, c, aff]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      if (aff && gm.requires_grad()) {
        auto& gg = gm.grad();
        auto& gb = bt.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const std::size_t ij = static_cast<std::size_t>(i) * n + j;
            gg[j] += (*g)[ij] * xh.data()[ij];
            gb[j] += (*g)[ij];
          }
      }
      if (!xc.requires_grad()) return;
      auto& gx = xc.grad();
      // dxhat = g * gamma; for valid rows the batch moments couple rows:
      // dx = inv_std * (dxhat - mean_valid(dxhat) - xhat * mean_valid(dxhat*xhat))
      // where the means run over ALL rows' dxhat (every row consumed the
      // moments) divided by the valid count c. Masked rows only get the
      // direct term.
      for (int j = 0; j < n; ++j) {
        double s1 = 0.0, s2 = 0.0;
        for (int i = 0; i < m; ++i) {
          const std::size_t ij = static_cast<std::size_t>(i) * n + j;
          const double dxh = static_cast<double>((*g)[ij]) * (aff ? gm.at(j) : 1.0f);
          s1 += dxh;
          s2 += dxh * xh.data()[ij];
        }
        const double m1 = s1 / c, m2 = s2 / c;
        for (int i = 0; i < m; ++i) {
          const std::size_t ij = static_cast<std::size_t>(i) * n + j;
          const double dxh = static_cast<double>((*g)[ij]) * (aff ? gm.at(j) : 1.0f);
          const bool valid = !mk.defined() || mk.data()[i] != 0.0f;
          const double dx = valid ? inv_std[static_cast<std::size_t>(j)] *
                                        (dxh - m1 - xh.data()[ij] * m2)
                                  : inv_std[static_cast<std::size_t>(j)] * dxh;
          gx[ij] += static_cast<float>(dx);
        }
      }
    });
  }
  return out;
}

void BatchNorm::register_params(std::map<std::string, Tensor>& out) const {
  if (affine_) {
    out[name_ + ".gamma"] = gamma;
    out[name_ + ".beta"] = beta;
  }
}

void BatchNorm::register_buffers(std::map<std::string, Tensor>& out) const {
  out[name_ + ".running_mean"] = running_mean;
  out[name_ + ".running_var"] = running_var;
}

// --------------------------------------------------------------------------
// DenseLayer
// --------------------------------------------------------------------------

DenseLayer::DenseLayer(int in, int out, Activation act, bool batch_norm,
                       const std::string& name, Rng& rng)
    : activation(act), name_(name), use_bn_(batch_norm) {
  weight = Tensor::zeros({out, in}, true);
  fill_kaiming_uniform(weight, rng, in);
  bias = Tensor::zeros({out}, true);
  if (use_bn_) bn_ = BatchNorm(out, /*affine=*/true, name + ".bn");
  if (act == Activation::dice) {
    dice_bn_ = BatchNorm(out, /*affine=*/false, name + ".dice_bn");
    dice_alpha_ = Tensor::zeros({out}, true);
  }
}

Tensor DenseLayer::forward(const Tensor& x, bool training, Tape* tape, const Tensor* mask) {
  Tensor pre = add_bias(matmul_nt(x, weight, tape), bias, tape);
  if (use_bn_) pre = bn_.forward(pre, training, tape, mask);
  switch (activation) {
    case Activation::none:
      return pre;
    case Activation::relu:
      return relu(pre, tape);
    case Activation::dice: {
      Tensor p = sigmoid(dice_bn_.forward(pre, training, tape, mask), tape);
      Tensor lhs = mul(p, pre, tape);
      Tensor rhs = mul_rowvec(mul(sub(Tensor::full(p.shape(), 1.0f), p, tape), pre, tape),
                              dice_alpha_, tape);
      return add(lhs, rhs, tape);
    }
  }
  throw std::runtime_error("dense_layer: unknown activation");
}

void DenseLayer::register_params(std::map<std::string, Tensor>& out) const {
  out[name_ + ".weight"] = weight;
  out[name_ + ".bias"] = bias;
  if (use_bn_) bn_.register_params(out);
  if (activation == Activation::dice) out[name_ + ".dice_alpha"] = dice_alpha_;
}

void DenseLayer::register_buffers(std::map<std::string, Tensor>& out) const {
  if (use_bn_) bn_.register_buffers(out);
  if (activation == Activation::dice) dice_bn_.register_buffers(out);
}

// --------------------------------------------------------------------------
// EmbeddingTable
// --------------------------------------------------------------------------

EmbeddingTable::EmbeddingTable(int vocab, int dim, const std::string& name, Rng& rng)
    : name_(name) {
  table = Tensor::zeros({vocab + 1, dim}, true);
  fill_uniform(table, rng, -0.05f, 0.05f);
  for (int j = 0; j < dim; ++j) table.data()[j] = 0.0f;  // padding row
}

Tensor EmbeddingTable::lookup(const std::vector<int>& ids, Tape* tape) const {
  return embedding_lookup(table, ids, tape);
}

void EmbeddingTable::register_params(std::map<std::string, Tensor>& out) const {
  out[name_] = table;
}

}  // namespace fit
