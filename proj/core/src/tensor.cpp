#include "genrec/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace genrec {

namespace {

using detail::ImplPtr;
using detail::TensorImpl;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EMat>;
using MapConst = Eigen::Map<const EMat>;

struct Node {
  std::function<void()> fn;
};

thread_local std::vector<Node> t_tape;
thread_local uint64_t t_epoch = 1;
thread_local bool t_grad_enabled = true;

bool is_live(const ImplPtr& p) {
  return p->requires_grad || (p->node_index >= 0 && p->tape_epoch == t_epoch);
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!t_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && is_live(t->impl())) return true;
  }
  return false;
}

void record(const ImplPtr& out, std::function<void()> fn) {
  t_tape.push_back(Node{std::move(fn)});
  out->node_index = static_cast<int64_t>(t_tape.size()) - 1;
  out->tape_epoch = t_epoch;
}

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

ImplPtr make_impl(std::vector<int> shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(op) + ": shapes " + shape_str(a.shape()) +
                        " and " + shape_str(b.shape()) + " differ");
  }
}

void require_2d(const Tensor& a, const char* op) {
  if (a.shape().size() != 2) {
    throw ShapeMismatch(std::string(op) + ": expected a 2-d tensor, got " +
                        shape_str(a.shape()));
  }
}

// Accumulate helper: ensures grad storage then adds.
void accum(const ImplPtr& p, int64_t i, double v) {
  p->ensure_grad();
  p->grad[i] += v;
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape) {
  int64_t n = shape_size(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  int64_t n = shape_size(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data) {
  if (shape_size(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeMismatch("from_data: shape " + shape_str(shape) + " expects " +
                        std::to_string(shape_size(shape)) + " values, got " +
                        std::to_string(data.size()));
  }
  return Tensor(make_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double value) {
  return Tensor(make_impl({1}, {value}));
}

Tensor Tensor::parameter(std::vector<int> shape, std::vector<double> data) {
  Tensor t = from_data(std::move(shape), std::move(data));
  t.impl()->requires_grad = true;
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, double stddev, Rng& rng,
                     bool requires_grad) {
  int64_t n = shape_size(shape);
  std::vector<double> data(n);
  for (auto& v : data) v = stddev * normal(rng);
  Tensor t = from_data(std::move(shape), std::move(data));
  t.impl()->requires_grad = requires_grad;
  return t;
}

int Tensor::rows() const {
  const auto& s = impl_->shape;
  if (s.size() == 2) return s[0];
  if (s.size() == 1) return 1;
  throw ShapeMismatch("rows(): tensor is not 1-d or 2-d: " + shape_str(s));
}

int Tensor::cols() const {
  const auto& s = impl_->shape;
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  throw ShapeMismatch("cols(): tensor is not 1-d or 2-d: " + shape_str(s));
}

std::span<const double> Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeMismatch("item(): tensor has " + std::to_string(size()) +
                        " elements");
  }
  return impl_->data[0];
}

void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

bool Tensor::tracked() const { return impl_ && is_live(impl_); }

// ---- tape ------------------------------------------------------------------

void clear_tape() {
  t_tape.clear();
  ++t_epoch;
}

size_t tape_size() { return t_tape.size(); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw NonScalarLoss("backward: loss must be a defined scalar tensor");
  }
  auto impl = loss.impl();
  impl->ensure_grad();
  impl->grad[0] += 1.0;
  if (impl->node_index < 0 || impl->tape_epoch != t_epoch) {
    return;  // leaf or detached: nothing upstream
  }
  // Tape order is topological; walking backwards visits each node once.
  for (int64_t i = impl->node_index; i >= 0; --i) {
    t_tape[static_cast<size_t>(i)].fn();
  }
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (should_record({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = r.impl();
    record(oi, [ai, bi, oi] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      bi->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        ai->grad[i] += oi->grad[i];
        bi->grad[i] += oi->grad[i];
      }
    });
  }
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (should_record({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = r.impl();
    record(oi, [ai, bi, oi] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      bi->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        ai->grad[i] += oi->grad[i];
        bi->grad[i] -= oi->grad[i];
      }
    });
  }
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (should_record({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = r.impl();
    record(oi, [ai, bi, oi] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      bi->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        ai->grad[i] += oi->grad[i] * bi->data[i];
        bi->grad[i] += oi->grad[i] * ai->data[i];
      }
    });
  }
  return r;
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  require_2d(m, "add_rowvec");
  int n = m.rows(), d = m.cols();
  if (v.size() != d) {
    throw ShapeMismatch("add_rowvec: matrix " + shape_str(m.shape()) +
                        " vs vector " + shape_str(v.shape()));
  }
  std::vector<double> out(m.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out[static_cast<size_t>(i) * d + j] =
          m.data()[static_cast<size_t>(i) * d + j] + v.data()[j];
  Tensor r = Tensor::from_data(m.shape(), std::move(out));
  if (should_record({&m, &v})) {
    auto mi = m.impl(), vi = v.impl(), oi = r.impl();
    record(oi, [mi, vi, oi, n, d] {
      if (oi->grad.empty()) return;
      mi->ensure_grad();
      vi->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
          double g = oi->grad[static_cast<size_t>(i) * d + j];
          mi->grad[static_cast<size_t>(i) * d + j] += g;
          vi->grad[j] += g;
        }
    });
  }
  return r;
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] * c;
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi, c] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += c * oi->grad[i];
    });
  }
  return r;
}

Tensor add_const(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] + c;
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    });
  }
  return r;
}

Tensor add_buffer(const Tensor& a, std::span<const double> buf,
                  double buf_scale) {
  if (static_cast<int64_t>(buf.size()) != a.size()) {
    throw ShapeMismatch("add_buffer: tensor " + shape_str(a.shape()) +
                        " vs buffer of " + std::to_string(buf.size()));
  }
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i)
    out[i] = a.data()[i] + buf_scale * buf[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    });
  }
  return r;
}

Tensor negate(const Tensor& a) { return scale(a, -1.0); }

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) {
    throw ShapeMismatch("matmul: inner extents disagree: " +
                        shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m) * n);
  {
    MapConst A(a.data().data(), m, k);
    MapConst B(b.data().data(), k, n);
    MapMat C(out.data(), m, n);
    C.noalias() = A * B;
  }
  Tensor r = Tensor::from_data({m, n}, std::move(out));
  if (should_record({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = r.impl();
    record(oi, [ai, bi, oi, m, k, n] {
      if (oi->grad.empty()) return;
      MapConst dC(oi->grad.data(), m, n);
      MapConst A(ai->data.data(), m, k);
      MapConst B(bi->data.data(), k, n);
      ai->ensure_grad();
      bi->ensure_grad();
      MapMat dA(ai->grad.data(), m, k);
      MapMat dB(bi->grad.data(), k, n);
      dA.noalias() += dC * B.transpose();
      dB.noalias() += A.transpose() * dC;
    });
  }
  return r;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = a.data()[static_cast<size_t>(i) * n + j];
  Tensor r = Tensor::from_data({n, m}, std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi, m, n] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ai->grad[static_cast<size_t>(i) * n + j] +=
              oi->grad[static_cast<size_t>(j) * m + i];
    });
  }
  return r;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  require_2d(a, "slice_rows");
  int m = a.rows(), n = a.cols();
  if (r0 < 0 || r1 > m || r0 >= r1) {
    throw IndexOutOfRange("slice_rows: [" + std::to_string(r0) + "," +
                          std::to_string(r1) + ") of " + std::to_string(m) +
                          " rows");
  }
  std::vector<double> out(a.data().begin() + static_cast<size_t>(r0) * n,
                          a.data().begin() + static_cast<size_t>(r1) * n);
  Tensor r = Tensor::from_data({r1 - r0, n}, std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi, r0, n] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i)
        ai->grad[static_cast<size_t>(r0) * n + i] += oi->grad[i];
    });
  }
  return r;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  require_2d(a, "slice_cols");
  int m = a.rows(), n = a.cols();
  if (c0 < 0 || c1 > n || c0 >= c1) {
    throw IndexOutOfRange("slice_cols: [" + std::to_string(c0) + "," +
                          std::to_string(c1) + ") of " + std::to_string(n) +
                          " cols");
  }
  int w = c1 - c0;
  std::vector<double> out(static_cast<size_t>(m) * w);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j)
      out[static_cast<size_t>(i) * w + j] =
          a.data()[static_cast<size_t>(i) * n + c0 + j];
  Tensor r = Tensor::from_data({m, w}, std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi, m, n, c0, w] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          ai->grad[static_cast<size_t>(i) * n + c0 + j] +=
              oi->grad[static_cast<size_t>(i) * w + j];
    });
  }
  return r;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no parts");
  int m = parts[0].rows();
  int total = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != m) {
      throw ShapeMismatch("concat_cols: row counts differ: " +
                          shape_str(parts[0].shape()) + " vs " +
                          shape_str(p.shape()));
    }
    total += p.cols();
  }
  std::vector<double> out(static_cast<size_t>(m) * total);
  int off = 0;
  for (const Tensor& p : parts) {
    int w = p.cols();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        out[static_cast<size_t>(i) * total + off + j] =
            p.data()[static_cast<size_t>(i) * w + j];
    off += w;
  }
  Tensor r = Tensor::from_data({m, total}, std::move(out));
  bool track = false;
  for (const Tensor& p : parts) track = track || should_record({&p});
  if (track) {
    std::vector<ImplPtr> pis;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
      pis.push_back(p.impl());
      widths.push_back(p.cols());
    }
    auto oi = r.impl();
    record(oi, [pis, widths, oi, m, total] {
      if (oi->grad.empty()) return;
      int off = 0;
      for (size_t pi = 0; pi < pis.size(); ++pi) {
        pis[pi]->ensure_grad();
        int w = widths[pi];
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            pis[pi]->grad[static_cast<size_t>(i) * w + j] +=
                oi->grad[static_cast<size_t>(i) * total + off + j];
        off += w;
      }
    });
  }
  return r;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no parts");
  int n = parts[0].cols();
  int total = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != n) {
      throw ShapeMismatch("concat_rows: col counts differ: " +
                          shape_str(parts[0].shape()) + " vs " +
                          shape_str(p.shape()));
    }
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(total) * n);
  for (const Tensor& p : parts)
    out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor r = Tensor::from_data({total, n}, std::move(out));
  bool track = false;
  for (const Tensor& p : parts) track = track || should_record({&p});
  if (track) {
    std::vector<ImplPtr> pis;
    for (const Tensor& p : parts) pis.push_back(p.impl());
    auto oi = r.impl();
    record(oi, [pis, oi] {
      if (oi->grad.empty()) return;
      size_t off = 0;
      for (const auto& pi : pis) {
        pi->ensure_grad();
        for (size_t i = 0; i < pi->data.size(); ++i) pi->grad[i] += oi->grad[off + i];
        off += pi->data.size();
      }
    });
  }
  return r;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeMismatch("reshape: " + shape_str(a.shape()) + " to " +
                        shape_str(shape));
  }
  Tensor r = Tensor::from_data(std::move(shape),
                               std::vector<double>(a.data().begin(), a.data().end()));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    });
  }
  return r;
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor r = Tensor::scalar(s);
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      double g = oi->grad[0];
      for (auto& v : ai->grad) v += g;
    });
  }
  return r;
}

Tensor mean_all(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor pick(const Tensor& a, int64_t flat_index) {
  if (flat_index < 0 || flat_index >= a.size()) {
    throw IndexOutOfRange("pick: index " + std::to_string(flat_index) +
                          " out of " + std::to_string(a.size()));
  }
  Tensor r = Tensor::scalar(a.data()[flat_index]);
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi, flat_index] {
      if (oi->grad.empty()) return;
      accum(ai, flat_index, oi->grad[0]);
    });
  }
  return r;
}

// ---- nonlinearities --------------------------------------------------------

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) {
    double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        double x = ai->data[i];
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ai->grad[i] += oi->grad[i] * (cdf + x * pdf);
      }
    });
  }
  return r;
}

Tensor sqrt_elem(const Tensor& a) {
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = std::sqrt(a.data()[i]);
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        // derivative clamped near zero to keep degenerate pairs finite
        double denom = std::max(oi->data[i], 1e-12);
        ai->grad[i] += oi->grad[i] * 0.5 / denom;
      }
    });
  }
  return r;
}

Tensor log_elem(const Tensor& a) {
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = std::log(a.data()[i]);
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i)
        ai->grad[i] += oi->grad[i] / ai->data[i];
    });
  }
  return r;
}

// ---- normalizations --------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require_2d(x, "layer_norm");
  int n = x.rows(), d = x.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeMismatch("layer_norm: affine shapes " + shape_str(gamma.shape()) +
                        "/" + shape_str(beta.shape()) + " vs row width " +
                        std::to_string(d));
  }
  std::vector<double> out(x.size());
  std::vector<double> inv_std(n), mean(n);
  for (int i = 0; i < n; ++i) {
    const double* row = x.data().data() + static_cast<size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    mean[i] = mu;
    inv_std[i] = is;
    for (int j = 0; j < d; ++j) {
      double xhat = (row[j] - mu) * is;
      out[static_cast<size_t>(i) * d + j] = xhat * gamma.data()[j] + beta.data()[j];
    }
  }
  Tensor r = Tensor::from_data(x.shape(), std::move(out));
  if (should_record({&x, &gamma, &beta})) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = r.impl();
    record(oi, [xi, gi, bi, oi, n, d, mean, inv_std] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      gi->ensure_grad();
      bi->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double* row = xi->data.data() + static_cast<size_t>(i) * d;
        const double* gout = oi->grad.data() + static_cast<size_t>(i) * d;
        double is = inv_std[i], mu = mean[i];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < d; ++j) {
          double xhat = (row[j] - mu) * is;
          double dxhat = gout[j] * gi->data[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          gi->grad[j] += gout[j] * xhat;
          bi->grad[j] += gout[j];
        }
        for (int j = 0; j < d; ++j) {
          double xhat = (row[j] - mu) * is;
          double dxhat = gout[j] * gi->data[j];
          xi->grad[static_cast<size_t>(i) * d + j] +=
              is * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / d);
        }
      }
    });
  }
  return r;
}

Tensor softmax_rows(const Tensor& a) {
  require_2d(a, "softmax_rows");
  int n = a.rows(), d = a.cols();
  std::vector<double> out(a.size());
  for (int i = 0; i < n; ++i) {
    const double* row = a.data().data() + static_cast<size_t>(i) * d;
    double m = row[0];
    for (int j = 1; j < d; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      double e = std::exp(row[j] - m);
      out[static_cast<size_t>(i) * d + j] = e;
      z += e;
    }
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] /= z;
  }
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi, n, d] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double* y = oi->data.data() + static_cast<size_t>(i) * d;
        const double* dy = oi->grad.data() + static_cast<size_t>(i) * d;
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += dy[j] * y[j];
        for (int j = 0; j < d; ++j)
          ai->grad[static_cast<size_t>(i) * d + j] += y[j] * (dy[j] - dot);
      }
    });
  }
  return r;
}

Tensor masked_log_softmax(const Tensor& logits, std::span<const int> allowed) {
  if (allowed.empty()) {
    throw EmptyAllowedSet("masked_log_softmax: allowed set is empty");
  }
  int64_t n = logits.size();
  for (int idx : allowed) {
    if (idx < 0 || idx >= n) {
      throw IndexOutOfRange("masked_log_softmax: allowed index " +
                            std::to_string(idx) + " out of " + std::to_string(n));
    }
  }
  double m = -std::numeric_limits<double>::infinity();
  for (int idx : allowed) m = std::max(m, logits.data()[idx]);
  double z = 0.0;
  for (int idx : allowed) z += std::exp(logits.data()[idx] - m);
  double lse = m + std::log(z);
  std::vector<double> out(n, kNegInf);
  for (int idx : allowed) out[idx] = logits.data()[idx] - lse;
  Tensor r = Tensor::from_data(logits.shape(), std::move(out));
  if (should_record({&logits})) {
    std::vector<int> allow(allowed.begin(), allowed.end());
    auto ai = logits.impl(), oi = r.impl();
    record(oi, [ai, oi, allow = std::move(allow)] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      double gsum = 0.0;
      for (int idx : allow) gsum += oi->grad[idx];
      for (int idx : allow) {
        double p = std::exp(oi->data[idx]);
        ai->grad[idx] += oi->grad[idx] - p * gsum;
      }
    });
  }
  return r;
}

Tensor log_softmax(const Tensor& logits) {
  std::vector<int> all(logits.size());
  std::iota(all.begin(), all.end(), 0);
  return masked_log_softmax(logits, all);
}

Tensor l2_normalize_rows(const Tensor& a) {
  require_2d(a, "l2_normalize_rows");
  int n = a.rows(), d = a.cols();
  std::vector<double> out(a.size());
  std::vector<double> norms(n);
  for (int i = 0; i < n; ++i) {
    const double* row = a.data().data() + static_cast<size_t>(i) * d;
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += row[j] * row[j];
    double nr = std::max(std::sqrt(s), 1e-12);
    norms[i] = nr;
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(i) * d + j] = row[j] / nr;
  }
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi, n, d, norms] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double* y = oi->data.data() + static_cast<size_t>(i) * d;
        const double* dy = oi->grad.data() + static_cast<size_t>(i) * d;
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += dy[j] * y[j];
        for (int j = 0; j < d; ++j)
          ai->grad[static_cast<size_t>(i) * d + j] += (dy[j] - y[j] * dot) / norms[i];
      }
    });
  }
  return r;
}

// ---- lookups ---------------------------------------------------------------

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_2d(table, "embedding_lookup");
  int v = table.rows(), d = table.cols();
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw IndexOutOfRange("embedding_lookup: id " + std::to_string(id) +
                            " out of vocabulary " + std::to_string(v));
    }
  }
  int n = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    std::copy_n(table.data().data() + static_cast<size_t>(ids[i]) * d, d,
                out.data() + static_cast<size_t>(i) * d);
  Tensor r = Tensor::from_data({n, d}, std::move(out));
  if (should_record({&table})) {
    std::vector<int> idv(ids.begin(), ids.end());
    auto ti = table.impl(), oi = r.impl();
    record(oi, [ti, oi, idv = std::move(idv), d] {
      if (oi->grad.empty()) return;
      ti->ensure_grad();
      for (size_t i = 0; i < idv.size(); ++i)
        for (int j = 0; j < d; ++j)
          ti->grad[static_cast<size_t>(idv[i]) * d + j] += oi->grad[i * d + j];
    });
  }
  return r;
}

Tensor attention_bias(const Tensor& across, const Tensor& within,
                      std::span<const int> bucket_across,
                      std::span<const int> bucket_within, int n, int head) {
  require_2d(across, "attention_bias");
  require_2d(within, "attention_bias");
  if (static_cast<int>(bucket_across.size()) != n * n ||
      static_cast<int>(bucket_within.size()) != n * n) {
    throw ShapeMismatch("attention_bias: bucket maps must be n*n");
  }
  int ha = across.cols();
  if (head < 0 || head >= ha || within.cols() != ha) {
    throw IndexOutOfRange("attention_bias: head " + std::to_string(head));
  }
  std::vector<double> out(static_cast<size_t>(n) * n);
  for (int i = 0; i < n * n; ++i) {
    out[i] = across.data()[static_cast<size_t>(bucket_across[i]) * ha + head] +
             within.data()[static_cast<size_t>(bucket_within[i]) * ha + head];
  }
  Tensor r = Tensor::from_data({n, n}, std::move(out));
  if (should_record({&across, &within})) {
    std::vector<int> ba(bucket_across.begin(), bucket_across.end());
    std::vector<int> bw(bucket_within.begin(), bucket_within.end());
    auto ai = across.impl(), wi = within.impl(), oi = r.impl();
    record(oi, [ai, wi, oi, ba = std::move(ba), bw = std::move(bw), ha, head] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      wi->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) {
        ai->grad[static_cast<size_t>(ba[i]) * ha + head] += oi->grad[i];
        wi->grad[static_cast<size_t>(bw[i]) * ha + head] += oi->grad[i];
      }
    });
  }
  return r;
}

Tensor dropout(const Tensor& a, double p, Rng& rng, bool enabled) {
  if (!enabled || p <= 0.0) return a;
  if (p >= 1.0) throw ShapeMismatch("dropout: p must be < 1");
  double keep = 1.0 - p;
  std::vector<double> mask(a.size());
  for (auto& m : mask) m = (uniform_double(rng) >= p) ? 1.0 / keep : 0.0;
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] * mask[i];
  Tensor r = Tensor::from_data(a.shape(), std::move(out));
  if (should_record({&a})) {
    auto ai = a.impl(), oi = r.impl();
    record(oi, [ai, oi, mask = std::move(mask)] {
      if (oi->grad.empty()) return;
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i)
        ai->grad[i] += oi->grad[i] * mask[i];
    });
  }
  return r;
}

}  // namespace genrec
