#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fit {

/// Dense row-major float32 tensor with optional gradient storage.
///
/// Tensor is a cheap handle: copies share the underlying buffer, so a
/// parameter held by a model and captured by a tape closure are the same
/// storage. Rank 1..3 is supported; all model math uses rank 1/2 plus
/// explicit (B, K, H, p) arguments to shaped kernels.
///
/// Gradients are allocated lazily on first accumulation and live next to
/// the values. Every forward op validates that its output is finite and
/// throws if not; NaN/Inf never propagates silently.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
  static Tensor from_values(std::vector<int> shape, std::vector<float> values,
                            bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor row(std::initializer_list<float> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const;
  int dim(int i) const;
  std::int64_t size() const;

  float* data();
  const float* data() const;
  std::vector<float>& values();
  const std::vector<float>& values() const;
  float item() const;  // scalar tensors only
  float at(int i) const;
  float at(int i, int j) const;

  bool requires_grad() const;
  void set_requires_grad(bool rg);

  /// Gradient buffer, allocated (zeroed) on first access.
  std::vector<float>& grad();
  /// Gradient buffer if it has been allocated, else nullptr.
  const std::vector<float>* grad_if_allocated() const;
  void zero_grad();
  void accumulate_grad(std::span<const float> g);

  /// Stable identity of the underlying buffer (for param bookkeeping).
  const void* id() const { return node_.get(); }

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<float> values;
    bool requires_grad = false;
    std::vector<float> grad;  // empty until first accumulation
  };
  std::shared_ptr<Node> node_;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  Node& node();
  const Node& node() const;
};

/// Reverse-mode tape: an ordered list of backward rules recorded during the
/// forward pass. backward() replays them in exact reverse recording order.
///
/// A tape is consumed by backward(); calling backward() again without
/// recording new ops is an error. clear() drops all recorded ops and makes
/// the tape reusable.
class Tape {
 public:
  void record(std::function<void()> backward_rule);
  /// Seeds d(root)/d(root)=1 and runs all rules in reverse. Root must be a
  /// scalar. Throws if the tape was already consumed.
  void backward(const Tensor& root);
  void clear();
  std::size_t op_count() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

std::int64_t shape_size(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

/// Throws std::runtime_error if any element of t is NaN/Inf.
void check_finite(const Tensor& t, const char* op_name);

// ---------------------------------------------------------------------------
// Differentiable ops. Every op takes the tape last; pass nullptr for
// inference (nothing is recorded and outputs never require grad).
// ---------------------------------------------------------------------------

enum class Activation { relu, dice, none };

Tensor add(const Tensor& a, const Tensor& b, Tape* tape);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape);
Tensor scale(const Tensor& a, float c, Tape* tape);
/// a*x + b elementwise with scalar coefficients.
Tensor affine(const Tensor& x, float a, float b, Tape* tape);
/// x[m x n] + b[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& b, Tape* tape);
/// x[m x n] * a[n] broadcast over rows.
Tensor mul_rowvec(const Tensor& x, const Tensor& a, Tape* tape);

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b, Tape* tape);  // [m,k]x[n,k]^T

Tensor relu(const Tensor& x, Tape* tape);
Tensor sigmoid(const Tensor& x, Tape* tape);

/// Row-wise L2 normalization with denominator max(||row||, 1e-12).
/// A zero row maps to a zero row.
Tensor l2_normalize(const Tensor& x, Tape* tape);

/// Softmax over the last dimension with temperature tau (> 0), computed
/// with max-subtraction. Rank-1 input is one distribution; rank-2 is
/// row-wise. Output rows are positive and sum to 1.
Tensor softmax_temperature(const Tensor& logits, float tau, Tape* tape);

/// Concatenate [m x d_i] blocks along columns.
Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape);
/// Repeat each row of x[m x d] `reps` times consecutively -> [m*reps x d].
Tensor repeat_rows(const Tensor& x, int reps, Tape* tape);
/// Per-example transpose: x[B x r*c] viewed as B matrices [r x c] -> [B x c*r].
Tensor batched_transpose(const Tensor& x, int rows, int cols, Tape* tape);
/// out[i] = sum_j x[i,j] * w[j].
Tensor rowwise_dot(const Tensor& x, const Tensor& w, Tape* tape);

Tensor sum_all(const Tensor& x, Tape* tape);
Tensor mean_all(const Tensor& x, Tape* tape);

/// Same values, new shape (element count must match). Copying reshape with
/// pass-through gradient.
Tensor reshape(const Tensor& x, std::vector<int> new_shape, Tape* tape);

/// Per-example all-pairs head dot products. zu[B x hu*p], zv[B x hv*p],
/// each row holding heads back to back -> out[B x hu*hv] with
/// out[b, i*hv + j] = zu_head(b,i) . zv_head(b,j).
Tensor pairwise_head_dots(const Tensor& zu, const Tensor& zv, int hu, int hv, int p,
                          Tape* tape);

/// sim[B x hu*hv] viewed per example as [hu x hv] -> out[B]:
/// out[b] = sum_i max_j sim[b, i*hv + j]. Backward routes each row's
/// gradient to its max entry; ties take the lowest item-head index.
Tensor summax_from_sim(const Tensor& sim, int hu, int hv, Tape* tape);

/// Row gather: out[r, :] = table[ids[r], :]. Gradient scatter-adds into the
/// table, skipping id 0 (the reserved padding row is never updated).
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids, Tape* tape);

/// pooled[b,:] = sum_k mask[b,k] * w[b*K+k] * e[b*K+k,:]
Tensor masked_weighted_sum(const Tensor& seq, const Tensor& weights, const Tensor& mask,
                           int batch, int seq_len, Tape* tape);
/// pooled[b,:] = sum_k mask[b,k] * e[b*K+k,:] / max(1, sum_k mask[b,k])
Tensor masked_average(const Tensor& seq, const Tensor& mask, int batch, int seq_len,
                      Tape* tape);

/// Mean over the batch of the numerically stable binary cross entropy with
/// logits: max(x,0) - x*y + log(1 + exp(-|x|)). Labels are not a grad path.
Tensor bce_with_logits(const Tensor& logits, const Tensor& labels, Tape* tape);

// Non-differentiable helpers.
int argmax(std::span<const float> v);  // ties -> lowest index
Tensor detach(const Tensor& x);        // copy without grad tracking

/// Max relative error between analytic gradients and central differences,
/// taken over every coordinate of every tensor in `inputs`.
/// `make_loss` must rebuild the graph from scratch on the given tape and
/// return a scalar. rel_err = |a - c| / max(|a|, |c|, 1e-6).
double finite_difference_check(const std::function<Tensor(Tape*)>& make_loss,
                               const std::vector<Tensor>& inputs, float h = 1e-3f);

}  // namespace fit
