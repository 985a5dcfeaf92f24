#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "genrec/errors.hpp"
#include "genrec/rng.hpp"

namespace genrec {

// Masked positions carry a large negative sentinel instead of a true -inf so
// downstream arithmetic stays total. Tests compare against this constant.
inline constexpr double kNegInf = -1e30;

namespace detail {

struct TensorImpl {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  int64_t node_index = -1;  // producing tape node, -1 for leaves
  uint64_t tape_epoch = 0;
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
// Values are immutable once produced by an operation; only optimizer updates
// mutate parameter storage, between recording sessions.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data);
  static Tensor scalar(double value);
  // Leaf with requires_grad set; gradients accumulate here on backward.
  static Tensor parameter(std::vector<int> shape, std::vector<double> data);
  static Tensor randn(std::vector<int> shape, double stddev, Rng& rng,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }
  int rows() const;
  int cols() const;
  bool is_scalar() const { return size() == 1; }

  std::span<const double> data() const { return impl_->data; }
  std::span<const double> grad() const;
  double item() const;
  double value_at(int64_t i) const { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  // True if gradient can flow into this tensor right now (parameter leaf or
  // produced on the active tape).
  bool tracked() const;

  void zero_grad();
  // Parameter storage access for the optimizer and checkpoint loading.
  std::span<double> mutable_data() { return impl_->data; }

  detail::ImplPtr impl() const { return impl_; }
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  detail::ImplPtr impl_;
};

// ---- tape ------------------------------------------------------------------
// Dynamic reverse-mode tape. Recording is per-thread; inference paths disable
// it with NoGradGuard so frozen models can be shared across threads.

void clear_tape();
size_t tape_size();
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Populates grad buffers of everything reachable from `loss`. Repeated calls
// accumulate; callers zero grads between steps.
void backward(const Tensor& loss);

// ---- operations ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// m: [n,d], v: [d] (or [1,d]) broadcast over rows.
Tensor add_rowvec(const Tensor& m, const Tensor& v);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
// Elementwise addition of a constant buffer (no gradient into the buffer).
Tensor add_buffer(const Tensor& a, std::span<const double> buf,
                  double buf_scale = 1.0);
Tensor negate(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& a, std::vector<int> shape);

Tensor sum(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor pick(const Tensor& a, int64_t flat_index);

Tensor gelu(const Tensor& a);
Tensor sqrt_elem(const Tensor& a);
Tensor log_elem(const Tensor& a);

// Row-wise layer normalization with affine terms; gamma/beta are [cols].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
Tensor softmax_rows(const Tensor& a);
// Log-softmax over `allowed` indices only; all other entries are kNegInf.
Tensor masked_log_softmax(const Tensor& logits, std::span<const int> allowed);
Tensor log_softmax(const Tensor& logits);
Tensor l2_normalize_rows(const Tensor& a);

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

// Per-head relative attention bias: out[q,k] =
//   across[bucket_across[q*n+k], head] + within[bucket_within[q*n+k], head].
Tensor attention_bias(const Tensor& across, const Tensor& within,
                      std::span<const int> bucket_across,
                      std::span<const int> bucket_within, int n, int head);

// Inverted dropout; identity when disabled or p == 0.
Tensor dropout(const Tensor& a, double p, Rng& rng, bool enabled);

}  // namespace genrec
