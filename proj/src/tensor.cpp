#include "fit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace fit {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

// C[m x n] (+)= op(A) * op(B). A is [m x k] (or [k x m] when ta),
// B is [k x n] (or [n x k] when tb). Fixed loop order per case keeps the
// accumulation order independent of the row count, so batched and row-wise
// execution agree bitwise.
void gemm(const float* a, const float* b, float* c, int m, int n, int k,
          bool ta, bool tb, bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0f);
  if (!ta && !tb) {
    for (int i = 0; i < m; ++i) {
      const float* arow = a + static_cast<std::size_t>(i) * k;
      float* crow = c + static_cast<std::size_t>(i) * n;
      for (int t = 0; t < k; ++t) {
        const float av = arow[t];
        if (av == 0.0f) continue;
        const float* brow = b + static_cast<std::size_t>(t) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (int i = 0; i < m; ++i) {
      const float* arow = a + static_cast<std::size_t>(i) * k;
      float* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const float* brow = b + static_cast<std::size_t>(j) * k;
        float acc = 0.0f;
        for (int t = 0; t < k; ++t) acc += arow[t] * brow[t];
        crow[j] += acc;
      }
    }
  } else if (ta && !tb) {
    for (int t = 0; t < k; ++t) {
      const float* arow = a + static_cast<std::size_t>(t) * m;
      const float* brow = b + static_cast<std::size_t>(t) * n;
      for (int i = 0; i < m; ++i) {
        const float av = arow[i];
        if (av == 0.0f) continue;
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      float* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        float acc = 0.0f;
        for (int t = 0; t < k; ++t)
          acc += a[static_cast<std::size_t>(t) * m + i] * b[static_cast<std::size_t>(j) * k + t];
        crow[j] += acc;
      }
    }
  }
}

bool taped(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace

// --------------------------------------------------------------------------
// Tensor
// --------------------------------------------------------------------------

std::int64_t shape_size(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
  require(!shape.empty() && shape.size() <= 3, "tensor rank must be 1..3");
  for (int d : shape) require(d > 0, "tensor dims must be positive");
  auto n = std::make_shared<Node>();
  n->values.assign(static_cast<std::size_t>(shape_size(shape)), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<float> values,
                           bool requires_grad) {
  require(shape_size(shape) == static_cast<std::int64_t>(values.size()),
          "from_values: shape " + shape_str(shape) + " does not match value count");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::row(std::initializer_list<float> values, bool requires_grad) {
  return from_values({static_cast<int>(values.size())}, std::vector<float>(values),
                     requires_grad);
}

Tensor::Node& Tensor::node() {
  require(node_ != nullptr, "use of undefined tensor");
  return *node_;
}
const Tensor::Node& Tensor::node() const {
  require(node_ != nullptr, "use of undefined tensor");
  return *node_;
}

const std::vector<int>& Tensor::shape() const { return node().shape; }
int Tensor::rank() const { return static_cast<int>(node().shape.size()); }
int Tensor::dim(int i) const { return node().shape.at(static_cast<std::size_t>(i)); }
std::int64_t Tensor::size() const { return static_cast<std::int64_t>(node().values.size()); }
float* Tensor::data() { return node().values.data(); }
const float* Tensor::data() const { return node().values.data(); }
std::vector<float>& Tensor::values() { return node().values; }
const std::vector<float>& Tensor::values() const { return node().values; }

float Tensor::item() const {
  require(size() == 1, "item() on non-scalar tensor " + shape_str(shape()));
  return node().values[0];
}

float Tensor::at(int i) const { return node().values.at(static_cast<std::size_t>(i)); }
float Tensor::at(int i, int j) const {
  require(rank() == 2, "at(i,j) requires rank-2 tensor");
  return node().values.at(static_cast<std::size_t>(i) * dim(1) + j);
}

bool Tensor::requires_grad() const { return node().requires_grad; }
void Tensor::set_requires_grad(bool rg) { node().requires_grad = rg; }

std::vector<float>& Tensor::grad() {
  Node& n = node();
  if (n.grad.size() != n.values.size()) n.grad.assign(n.values.size(), 0.0f);
  return n.grad;
}

const std::vector<float>* Tensor::grad_if_allocated() const {
  const Node& n = node();
  return n.grad.size() == n.values.size() ? &n.grad : nullptr;
}

void Tensor::zero_grad() {
  Node& n = node();
  if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0f);
}

void Tensor::accumulate_grad(std::span<const float> g) {
  require(static_cast<std::int64_t>(g.size()) == size(), "gradient size mismatch");
  auto& dst = grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

// --------------------------------------------------------------------------
// Tape
// --------------------------------------------------------------------------

void Tape::record(std::function<void()> backward_rule) {
  require(!consumed_, "recording onto a consumed tape; clear() it first");
  ops_.push_back(std::move(backward_rule));
}

void Tape::backward(const Tensor& root) {
  require(!consumed_, "backward() called twice without re-recording");
  require(root.size() == 1, "backward() root must be scalar, got " + shape_str(root.shape()));
  consumed_ = true;
  Tensor r = root;
  auto& g = r.grad();
  std::fill(g.begin(), g.end(), 0.0f);
  g[0] = 1.0f;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

void Tape::clear() {
  ops_.clear();
  consumed_ = false;
}

void check_finite(const Tensor& t, const char* op_name) {
  for (float v : t.values()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string("non-finite value produced by ") + op_name);
    }
  }
}

// --------------------------------------------------------------------------
// Elementwise ops
// --------------------------------------------------------------------------

namespace {

Tensor elementwise_binary(const Tensor& a, const Tensor& b, Tape* tape, const char* name,
                          float (*fwd)(float, float),
                          void (*bwd)(float av, float bv, float g, float* da, float* db)) {
  require(a.shape() == b.shape(), std::string(name) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.values().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i], b.data()[i]);
  check_finite(out, name);
  if (taped(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, bwd]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      const std::size_t n = ac.values().size();
      std::vector<float>* ga = ac.requires_grad() ? &ac.grad() : nullptr;
      std::vector<float>* gb = bc.requires_grad() ? &bc.grad() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        float da = 0.0f, db = 0.0f;
        bwd(ac.data()[i], bc.data()[i], (*g)[i], &da, &db);
        if (ga) (*ga)[i] += da;
        if (gb) (*gb)[i] += db;
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  return elementwise_binary(
      a, b, tape, "add", [](float x, float y) { return x + y; },
      [](float, float, float g, float* da, float* db) {
        *da = g;
        *db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  return elementwise_binary(
      a, b, tape, "sub", [](float x, float y) { return x - y; },
      [](float, float, float g, float* da, float* db) {
        *da = g;
        *db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  return elementwise_binary(
      a, b, tape, "mul", [](float x, float y) { return x * y; },
      [](float x, float y, float g, float* da, float* db) {
        *da = g * y;
        *db = g * x;
      });
}

Tensor scale(const Tensor& a, float c, Tape* tape) { return affine(a, c, 0.0f, tape); }

Tensor affine(const Tensor& x, float a, float b, Tape* tape) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.values().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a * x.data()[i] + b;
  check_finite(out, "affine");
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, a]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      auto& gx = xc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += a * (*g)[i];
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b, Tape* tape) {
  require(x.rank() == 2 && b.rank() == 1 && x.dim(1) == b.dim(0),
          "add_bias: expected [m,n] + [n], got " + shape_str(x.shape()) + " + " +
              shape_str(b.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[i * n + j] + b.data()[j];
  check_finite(out, "add_bias");
  if (taped(tape, {&x, &b})) {
    out.set_requires_grad(true);
    Tensor xc = x, bc = b, oc = out;
    tape->record([xc, bc, oc, m, n]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      if (xc.requires_grad()) {
        auto& gx = xc.grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*g)[i];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[j] += (*g)[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

Tensor mul_rowvec(const Tensor& x, const Tensor& a, Tape* tape) {
  require(x.rank() == 2 && a.rank() == 1 && x.dim(1) == a.dim(0),
          "mul_rowvec: expected [m,n] * [n]");
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data()[i * n + j] = x.data()[i * n + j] * a.data()[j];
  check_finite(out, "mul_rowvec");
  if (taped(tape, {&x, &a})) {
    out.set_requires_grad(true);
    Tensor xc = x, ac = a, oc = out;
    tape->record([xc, ac, oc, m, n]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      if (xc.requires_grad()) {
        auto& gx = xc.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            gx[static_cast<std::size_t>(i) * n + j] +=
                (*g)[static_cast<std::size_t>(i) * n + j] * ac.data()[j];
      }
      if (ac.requires_grad()) {
        auto& ga = ac.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            ga[j] += (*g)[static_cast<std::size_t>(i) * n + j] *
                     xc.data()[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// Matrix products
// --------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  gemm(a.data(), b.data(), out.data(), m, n, k, false, false, false);
  check_finite(out, "matmul");
  if (taped(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, m, n, k]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      if (ac.requires_grad())
        gemm(g->data(), bc.data(), ac.grad().data(), m, k, n, false, true, true);
      if (bc.requires_grad())
        gemm(ac.data(), g->data(), bc.grad().data(), k, n, m, true, false, true);
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
          "matmul_nt: shape mismatch " + shape_str(a.shape()) + " x " +
              shape_str(b.shape()) + "^T");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out = Tensor::zeros({m, n});
  gemm(a.data(), b.data(), out.data(), m, n, k, false, true, false);
  check_finite(out, "matmul_nt");
  if (taped(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, m, n, k]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      if (ac.requires_grad())
        gemm(g->data(), bc.data(), ac.grad().data(), m, k, n, false, false, true);
      if (bc.requires_grad())
        gemm(g->data(), ac.data(), bc.grad().data(), n, k, m, true, false, true);
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// Nonlinearities
// --------------------------------------------------------------------------

Tensor relu(const Tensor& x, Tape* tape) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.values().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0.0f ? x.data()[i] : 0.0f;
  check_finite(out, "relu");
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      auto& gx = xc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (oc.data()[i] > 0.0f) gx[i] += (*g)[i];
    });
  }
  return out;
}

namespace {
float stable_sigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x, Tape* tape) {
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t n = x.values().size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = stable_sigmoid(x.data()[i]);
  check_finite(out, "sigmoid");
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      auto& gx = xc.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const float y = oc.data()[i];
        gx[i] += (*g)[i] * y * (1.0f - y);
      }
    });
  }
  return out;
}

Tensor l2_normalize(const Tensor& x, Tape* tape) {
  require(x.rank() == 1 || x.rank() == 2, "l2_normalize: rank-1/2 only");
  const int rows = x.rank() == 2 ? x.dim(0) : 1;
  const int cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
  constexpr float kEps = 1e-12f;
  Tensor out = Tensor::zeros(x.shape());
  std::vector<float> denom(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const float* row = x.data() + static_cast<std::size_t>(r) * cols;
    double ss = 0.0;
    for (int j = 0; j < cols; ++j) ss += static_cast<double>(row[j]) * row[j];
    const float norm = static_cast<float>(std::sqrt(ss));
    const float d = std::max(norm, kEps);
    denom[static_cast<std::size_t>(r)] = d;
    float* orow = out.data() + static_cast<std::size_t>(r) * cols;
    for (int j = 0; j < cols; ++j) orow[j] = row[j] / d;
  }
  check_finite(out, "l2_normalize");
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, denom, rows, cols]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      auto& gx = xc.grad();
      for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        const float d = denom[static_cast<std::size_t>(r)];
        // Below the epsilon the denominator is constant, so the map is linear.
        if (d <= kEps) {
          for (int j = 0; j < cols; ++j) gx[off + j] += (*g)[off + j] / d;
          continue;
        }
        double ydotg = 0.0;
        for (int j = 0; j < cols; ++j)
          ydotg += static_cast<double>(oc.data()[off + j]) * (*g)[off + j];
        for (int j = 0; j < cols; ++j)
          gx[off + j] +=
              ((*g)[off + j] - oc.data()[off + j] * static_cast<float>(ydotg)) / d;
      }
    });
  }
  return out;
}

Tensor softmax_temperature(const Tensor& logits, float tau, Tape* tape) {
  require(tau > 0.0f, "softmax_temperature: tau must be > 0");
  require(logits.rank() == 1 || logits.rank() == 2, "softmax_temperature: rank-1/2 only");
  const int rows = logits.rank() == 2 ? logits.dim(0) : 1;
  const int cols = logits.rank() == 2 ? logits.dim(1) : logits.dim(0);
  Tensor out = Tensor::zeros(logits.shape());
  for (int r = 0; r < rows; ++r) {
    const float* row = logits.data() + static_cast<std::size_t>(r) * cols;
    float* orow = out.data() + static_cast<std::size_t>(r) * cols;
    float mx = row[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      const float e = std::exp((row[j] - mx) / tau);
      orow[j] = e;
      sum += e;
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (int j = 0; j < cols; ++j) orow[j] *= inv;
  }
  check_finite(out, "softmax_temperature");
  if (taped(tape, {&logits})) {
    out.set_requires_grad(true);
    Tensor xc = logits, oc = out;
    tape->record([xc, oc, rows, cols, tau]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      auto& gx = xc.grad();
      for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        double gdoty = 0.0;
        for (int j = 0; j < cols; ++j)
          gdoty += static_cast<double>((*g)[off + j]) * oc.data()[off + j];
        for (int j = 0; j < cols; ++j)
          gx[off + j] +=
              oc.data()[off + j] * ((*g)[off + j] - static_cast<float>(gdoty)) / tau;
      }
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// Shape ops
// --------------------------------------------------------------------------

Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape) {
  require(!parts.empty(), "concat_cols: no parts");
  const int m = parts[0].dim(0);
  int total = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == 2 && p.dim(0) == m, "concat_cols: row counts differ");
    total += p.dim(1);
  }
  Tensor out = Tensor::zeros({m, total});
  int col = 0;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < m; ++i)
      std::memcpy(out.data() + static_cast<std::size_t>(i) * total + col,
                  p.data() + static_cast<std::size_t>(i) * w, sizeof(float) * w);
    col += w;
  }
  check_finite(out, "concat_cols");
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    out.set_requires_grad(true);
    std::vector<Tensor> pc = parts;
    Tensor oc = out;
    tape->record([pc, oc, m, total]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      int col = 0;
      for (Tensor& p : pc) {
        const int w = p.dim(1);
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              gp[static_cast<std::size_t>(i) * w + j] +=
                  (*g)[static_cast<std::size_t>(i) * total + col + j];
        }
        col += w;
      }
    });
  }
  return out;
}

Tensor repeat_rows(const Tensor& x, int reps, Tape* tape) {
  require(x.rank() == 2 && reps > 0, "repeat_rows: rank-2 input and reps > 0");
  const int m = x.dim(0), d = x.dim(1);
  Tensor out = Tensor::zeros({m * reps, d});
  for (int i = 0; i < m; ++i)
    for (int r = 0; r < reps; ++r)
      std::memcpy(out.data() + (static_cast<std::size_t>(i) * reps + r) * d,
                  x.data() + static_cast<std::size_t>(i) * d, sizeof(float) * d);
  check_finite(out, "repeat_rows");
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, m, d, reps]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      auto& gx = xc.grad();
      for (int i = 0; i < m; ++i)
        for (int r = 0; r < reps; ++r)
          for (int j = 0; j < d; ++j)
            gx[static_cast<std::size_t>(i) * d + j] +=
                (*g)[(static_cast<std::size_t>(i) * reps + r) * d + j];
    });
  }
  return out;
}

Tensor batched_transpose(const Tensor& x, int rows, int cols, Tape* tape) {
  require(x.rank() == 2 && x.dim(1) == rows * cols, "batched_transpose: width != rows*cols");
  const int b = x.dim(0);
  Tensor out = Tensor::zeros({b, cols * rows});
  for (int e = 0; e < b; ++e) {
    const float* src = x.data() + static_cast<std::size_t>(e) * rows * cols;
    float* dst = out.data() + static_cast<std::size_t>(e) * rows * cols;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  }
  check_finite(out, "batched_transpose");
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, b, rows, cols]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      auto& gx = xc.grad();
      for (int e = 0; e < b; ++e) {
        const std::size_t off = static_cast<std::size_t>(e) * rows * cols;
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < cols; ++j) gx[off + i * cols + j] += (*g)[off + j * rows + i];
      }
    });
  }
  return out;
}

Tensor rowwise_dot(const Tensor& x, const Tensor& w, Tape* tape) {
  require(x.rank() == 2 && w.rank() == 1 && x.dim(1) == w.dim(0),
          "rowwise_dot: expected [m,n] . [n]");
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({m});
  for (int i = 0; i < m; ++i) {
    float acc = 0.0f;
    const float* row = x.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) acc += row[j] * w.data()[j];
    out.data()[i] = acc;
  }
  check_finite(out, "rowwise_dot");
  if (taped(tape, {&x, &w})) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = w, oc = out;
    tape->record([xc, wc, oc, m, n]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      if (xc.requires_grad()) {
        auto& gx = xc.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            gx[static_cast<std::size_t>(i) * n + j] += (*g)[i] * wc.data()[j];
      }
      if (wc.requires_grad()) {
        auto& gw = wc.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            gw[j] += (*g)[i] * xc.data()[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x, Tape* tape) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  check_finite(out, "sum_all");
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      auto& gx = xc.grad();
      for (float& v : gx) v += (*g)[0];
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x, Tape* tape) {
  Tensor s = sum_all(x, tape);
  return scale(s, 1.0f / static_cast<float>(x.size()), tape);
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape, Tape* tape) {
  require(shape_size(new_shape) == x.size(),
          "reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
              shape_str(new_shape));
  Tensor out = Tensor::from_values(std::move(new_shape), x.values());
  if (taped(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      xc.accumulate_grad(*g);
    });
  }
  return out;
}

Tensor pairwise_head_dots(const Tensor& zu, const Tensor& zv, int hu, int hv, int p,
                          Tape* tape) {
  require(zu.rank() == 2 && zu.dim(1) == hu * p, "pairwise_head_dots: zu width");
  require(zv.rank() == 2 && zv.dim(1) == hv * p, "pairwise_head_dots: zv width");
  require(zu.dim(0) == zv.dim(0), "pairwise_head_dots: batch mismatch");
  const int b = zu.dim(0);
  Tensor out = Tensor::zeros({b, hu * hv});
  for (int e = 0; e < b; ++e) {
    const float* u = zu.data() + static_cast<std::size_t>(e) * hu * p;
    const float* v = zv.data() + static_cast<std::size_t>(e) * hv * p;
    float* o = out.data() + static_cast<std::size_t>(e) * hu * hv;
    for (int i = 0; i < hu; ++i)
      for (int j = 0; j < hv; ++j) {
        float acc = 0.0f;
        for (int t = 0; t < p; ++t) acc += u[i * p + t] * v[j * p + t];
        o[i * hv + j] = acc;
      }
  }
  check_finite(out, "pairwise_head_dots");
  if (taped(tape, {&zu, &zv})) {
    out.set_requires_grad(true);
    Tensor uc = zu, vc = zv, oc = out;
    tape->record([uc, vc, oc, b, hu, hv, p]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      std::vector<float>* gu = uc.requires_grad() ? &uc.grad() : nullptr;
      std::vector<float>* gv = vc.requires_grad() ? &vc.grad() : nullptr;
      for (int e = 0; e < b; ++e) {
        const std::size_t uo = static_cast<std::size_t>(e) * hu * p;
        const std::size_t vo = static_cast<std::size_t>(e) * hv * p;
        const float* go = g->data() + static_cast<std::size_t>(e) * hu * hv;
        for (int i = 0; i < hu; ++i)
          for (int j = 0; j < hv; ++j) {
            const float gij = go[i * hv + j];
            if (gij == 0.0f) continue;
            for (int t = 0; t < p; ++t) {
              if (gu) (*gu)[uo + i * p + t] += gij * vc.data()[vo + j * p + t];
              if (gv) (*gv)[vo + j * p + t] += gij * uc.data()[uo + i * p + t];
            }
          }
      }
    });
  }
  return out;
}

Tensor summax_from_sim(const Tensor& sim, int hu, int hv, Tape* tape) {
  require(sim.rank() == 2 && sim.dim(1) == hu * hv, "summax_from_sim: width != hu*hv");
  const int b = sim.dim(0);
  Tensor out = Tensor::zeros({b});
  std::vector<int> picks(static_cast<std::size_t>(b) * hu);
  for (int e = 0; e < b; ++e) {
    const float* s = sim.data() + static_cast<std::size_t>(e) * hu * hv;
    double acc = 0.0;
    for (int i = 0; i < hu; ++i) {
      int best = 0;
      for (int j = 1; j < hv; ++j)
        if (s[i * hv + j] > s[i * hv + best]) best = j;
      picks[static_cast<std::size_t>(e) * hu + i] = best;
      acc += s[i * hv + best];
    }
    out.data()[e] = static_cast<float>(acc);
  }
  check_finite(out, "summax_from_sim");
  if (taped(tape, {&sim})) {
    out.set_requires_grad(true);
    Tensor sc = sim, oc = out;
    tape->record([sc, oc, picks, b, hu, hv]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      auto& gs = sc.grad();
      for (int e = 0; e < b; ++e)
        for (int i = 0; i < hu; ++i)
          gs[static_cast<std::size_t>(e) * hu * hv + i * hv +
             picks[static_cast<std::size_t>(e) * hu + i]] += (*g)[e];
    });
  }
  return out;
}

// --------------------------------------------------------------------------
// Embedding and sequence ops
// --------------------------------------------------------------------------

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, Tape* tape) {
  require(table.rank() == 2, "embedding_lookup: table must be rank-2");
  const int v = table.dim(0), d = table.dim(1);
  const int m = static_cast<int>(ids.size());
  require(m > 0, "embedding_lookup: empty id list");
  Tensor out = Tensor::zeros({m, d});
  for (int i = 0; i < m; ++i) {
    require(ids[static_cast<std::size_t>(i)] >= 0 && ids[static_cast<std::size_t>(i)] < v,
            "embedding_lookup: id out of range");
    std::memcpy(out.data() + static_cast<std::size_t>(i) * d,
                table.data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d,
                sizeof(float) * d);
  }
  check_finite(out, "embedding_lookup");
  if (taped(tape, {&table})) {
    out.set_requires_grad(true);
    Tensor tc = table, oc = out;
    std::vector<int> idc = ids;
    tape->record([tc, oc, idc, m, d]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      auto& gt = tc.grad();
      for (int i = 0; i < m; ++i) {
        const int id = idc[static_cast<std::size_t>(i)];
        if (id == 0) continue;  // padding row stays frozen
        for (int j = 0; j < d; ++j)
          gt[static_cast<std::size_t>(id) * d + j] += (*g)[static_cast<std::size_t>(i) * d + j];
      }
    });
  }
  return out;
}

Tensor masked_weighted_sum(const Tensor& seq, const Tensor& weights, const Tensor& mask,
                           int batch, int seq_len, Tape* tape) {
  require(seq.rank() == 2 && seq.dim(0) == batch * seq_len, "masked_weighted_sum: seq rows");
  require(weights.size() == static_cast<std::int64_t>(batch) * seq_len,
          "masked_weighted_sum: weight count");
  require(mask.size() == static_cast<std::int64_t>(batch) * seq_len,
          "masked_weighted_sum: mask count");
  const int d = seq.dim(1);
  Tensor out = Tensor::zeros({batch, d});
  for (int b = 0; b < batch; ++b)
    for (int k = 0; k < seq_len; ++k) {
      const std::size_t r = static_cast<std::size_t>(b) * seq_len + k;
      const float mw = mask.data()[r] * weights.data()[r];
      if (mw == 0.0f) continue;
      const float* e = seq.data() + r * d;
      float* o = out.data() + static_cast<std::size_t>(b) * d;
      for (int j = 0; j < d; ++j) o[j] += mw * e[j];
    }
  check_finite(out, "masked_weighted_sum");
  if (taped(tape, {&seq, &weights})) {
    out.set_requires_grad(true);
    Tensor sc = seq, wc = weights, mc = mask, oc = out;
    tape->record([sc, wc, mc, oc, batch, seq_len, d]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      std::vector<float>* gs = sc.requires_grad() ? &sc.grad() : nullptr;
      std::vector<float>* gw = wc.requires_grad() ? &wc.grad() : nullptr;
      for (int b = 0; b < batch; ++b) {
        const float* go = g->data() + static_cast<std::size_t>(b) * d;
        for (int k = 0; k < seq_len; ++k) {
          const std::size_t r = static_cast<std::size_t>(b) * seq_len + k;
          const float m = mc.data()[r];
          if (m == 0.0f) continue;
          const float* e = sc.data() + r * d;
          if (gw) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j) acc += static_cast<double>(go[j]) * e[j];
            (*gw)[r] += m * static_cast<float>(acc);
          }
          if (gs) {
            const float w = wc.data()[r] * m;
            for (int j = 0; j < d; ++j) (*gs)[r * d + j] += w * go[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor masked_average(const Tensor& seq, const Tensor& mask, int batch, int seq_len,
                      Tape* tape) {
  require(seq.rank() == 2 && seq.dim(0) == batch * seq_len, "masked_average: seq rows");
  require(mask.size() == static_cast<std::int64_t>(batch) * seq_len, "masked_average: mask");
  const int d = seq.dim(1);
  Tensor out = Tensor::zeros({batch, d});
  std::vector<float> inv_count(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    double cnt = 0.0;
    for (int k = 0; k < seq_len; ++k)
      cnt += mask.data()[static_cast<std::size_t>(b) * seq_len + k];
    const float inv = 1.0f / std::max(1.0f, static_cast<float>(cnt));
    inv_count[static_cast<std::size_t>(b)] = inv;
    float* o = out.data() + static_cast<std::size_t>(b) * d;
    for (int k = 0; k < seq_len; ++k) {
      const std::size_t r = static_cast<std::size_t>(b) * seq_len + k;
      if (mask.data()[r] == 0.0f) continue;
      const float* e = seq.data() + r * d;
      for (int j = 0; j < d; ++j) o[j] += e[j];
    }
    for (int j = 0; j < d; ++j) o[j] *= inv;
  }
  check_finite(out, "masked_average");
  if (taped(tape, {&seq})) {
    out.set_requires_grad(true);
    Tensor sc = seq, mc = mask, oc = out;
    tape->record([sc, mc, oc, batch, seq_len, d, inv_count]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      auto& gs = sc.grad();
      for (int b = 0; b < batch; ++b) {
        const float inv = inv_count[static_cast<std::size_t>(b)];
        const float* go = g->data() + static_cast<std::size_t>(b) * d;
        for (int k = 0; k < seq_len; ++k) {
          const std::size_t r = static_cast<std::size_t>(b) * seq_len + k;
          if (mc.data()[r] == 0.0f) continue;
          for (int j = 0; j < d; ++j) gs[r * d + j] += inv * go[j];
        }
      }
    });
  }
  return out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& labels, Tape* tape) {
  require(logits.size() == labels.size(), "bce_with_logits: size mismatch");
  const std::size_t n = logits.values().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits.data()[i];
    const double y = labels.data()[i];
    acc += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  check_finite(out, "bce_with_logits");
  if (taped(tape, {&logits})) {
    out.set_requires_grad(true);
    Tensor xc = logits, yc = labels, oc = out;
    tape->record([xc, yc, oc, n]() mutable {
      const auto* g = oc.grad_if_allocated();
      if (!g) return;
      auto& gx = xc.grad();
      const float inv = (*g)[0] / static_cast<float>(n);
      for (std::size_t i = 0; i < n; ++i)
        gx[i] += inv * (stable_sigmoid(xc.data()[i]) - yc.data()[i]);
    });
  }
  return out;
}

int argmax(std::span<const float> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
  return best;
}

Tensor detach(const Tensor& x) {
  return Tensor::from_values(x.shape(), x.values(), false);
}

double finite_difference_check(const std::function<Tensor(Tape*)>& make_loss,
                               const std::vector<Tensor>& inputs, float h) {
  for (const Tensor& t : inputs)
    require(t.requires_grad(), "finite_difference_check: inputs must require grad");
  Tape tape;
  for (Tensor t : inputs) t.zero_grad();
  Tensor loss = make_loss(&tape);
  require(loss.size() == 1, "finite_difference_check: loss must be scalar");
  tape.backward(loss);

  std::vector<std::vector<float>> analytic;
  analytic.reserve(inputs.size());
  for (Tensor t : inputs) {
    const auto* g = t.grad_if_allocated();
    analytic.push_back(g ? *g : std::vector<float>(static_cast<std::size_t>(t.size()), 0.0f));
  }

  double max_rel = 0.0;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor t = inputs[ti];
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const float orig = t.data()[i];
      t.data()[i] = orig + h;
      const double fp = make_loss(nullptr).item();
      t.data()[i] = orig - h;
      const double fm = make_loss(nullptr).item();
      t.data()[i] = orig;
      const double central = (fp - fm) / (2.0 * static_cast<double>(h));
      const double a = analytic[ti][static_cast<std::size_t>(i)];
      const double rel =
          std::abs(a - central) / std::max({std::abs(a), std::abs(central), 1e-6});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace fit
