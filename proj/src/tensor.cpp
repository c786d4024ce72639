#include "safecfg/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace safecfg {

namespace {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw std::runtime_error("tensor: non-positive extent " + std::to_string(e));
    n *= e;
  }
  return n;
}

[[noreturn]] void shape_error(const char* prim, const std::string& detail) {
  throw std::runtime_error(std::string(prim) + ": " + detail);
}

void check_finite(const char* prim, const Tensor& t) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(prim) + ": non-finite value in output");
    }
  }
}

bool want_record(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor::Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)),
      values_(std::make_shared<std::vector<double>>(std::move(values))),
      requires_grad_(requires_grad) {
  if (shape_numel(shape_) != static_cast<int64_t>(values_->size())) {
    throw std::runtime_error("tensor: value count " + std::to_string(values_->size()) +
                             " does not match shape " + shape_str());
  }
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor({}, {v}, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
  int64_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v), requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
  int64_t n = shape_numel(shape);
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

int Tensor::rows() const {
  if (rank() != 2) throw std::runtime_error("tensor: rows() on rank-" + std::to_string(rank()));
  return shape_[0];
}

int Tensor::cols() const {
  if (rank() == 0) return 1;
  return shape_.back();
}

double Tensor::value() const {
  if (numel() != 1) throw std::runtime_error("tensor: value() on non-scalar " + shape_str());
  return (*values_)[0];
}

Tensor Tensor::deep_copy() const {
  Tensor t(shape_, *values_, requires_grad_);
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tape

int Tape::slot_for(const Tensor& t) {
  auto it = slots_.find(t.key());
  if (it != slots_.end()) return it->second;
  int idx = static_cast<int>(grads_.size());
  slots_.emplace(t.key(), idx);
  grads_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
  keepalive_.push_back(t);
  return idx;
}

int Tape::find_slot(const void* key) const {
  auto it = slots_.find(key);
  return it == slots_.end() ? -1 : it->second;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::runtime_error("backward: loss must be scalar, got " + loss.shape_str());
  }
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
  int loss_slot = find_slot(loss.key());
  if (loss_slot < 0) return;  // constant loss: every gradient is zero
  grads_[static_cast<size_t>(loss_slot)][0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    (*it)(*this);
  }
}

std::vector<double> Tape::grad(const Tensor& t) const {
  int slot = find_slot(t.key());
  if (slot < 0) return std::vector<double>(static_cast<size_t>(t.numel()), 0.0);
  return grads_[static_cast<size_t>(slot)];
}

void Tape::reset() {
  grads_.clear();
  slots_.clear();
  nodes_.clear();
  keepalive_.clear();
}

// ---------------------------------------------------------------------------
// Primitives

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  bool broadcast = false;
  if (a.shape() != b.shape()) {
    // rank-1 b broadcast over the rows of rank-2 a
    if (a.rank() == 2 && b.rank() == 1 && a.cols() == b.cols()) {
      broadcast = true;
    } else {
      shape_error("add", "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
  }
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  if (!broadcast) {
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
  } else {
    int r = a.rows(), c = a.cols();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) po[i * c + j] = pa[i * c + j] + pb[j];
  }
  check_finite("add", out);
  if (want_record(tape, {&a, &b})) {
    out.set_requires_grad(true);
    int sa = a.requires_grad() ? tape->slot_for(a) : -1;
    int sb = b.requires_grad() ? tape->slot_for(b) : -1;
    int so = tape->slot_for(out);
    int r = broadcast ? a.rows() : 0, c = broadcast ? a.cols() : 0;
    int64_t n = a.numel();
    tape->push_node([sa, sb, so, broadcast, r, c, n](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      if (sa >= 0) {
        auto& ga = tp.grad_slot(sa);
        for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
      }
      if (sb >= 0) {
        auto& gb = tp.grad_slot(sb);
        if (!broadcast) {
          for (int64_t i = 0; i < n; ++i) gb[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
        } else {
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) gb[static_cast<size_t>(j)] += g[static_cast<size_t>(i * c + j)];
        }
      }
    });
  }
  return out;
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error("sub", "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
  check_finite("sub", out);
  if (want_record(tape, {&a, &b})) {
    out.set_requires_grad(true);
    int sa = a.requires_grad() ? tape->slot_for(a) : -1;
    int sb = b.requires_grad() ? tape->slot_for(b) : -1;
    int so = tape->slot_for(out);
    int64_t n = a.numel();
    tape->push_node([sa, sb, so, n](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      if (sa >= 0) {
        auto& ga = tp.grad_slot(sa);
        for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
      }
      if (sb >= 0) {
        auto& gb = tp.grad_slot(sb);
        for (int64_t i = 0; i < n; ++i) gb[static_cast<size_t>(i)] -= g[static_cast<size_t>(i)];
      }
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error("mul", "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
  check_finite("mul", out);
  if (want_record(tape, {&a, &b})) {
    out.set_requires_grad(true);
    int sa = a.requires_grad() ? tape->slot_for(a) : -1;
    int sb = b.requires_grad() ? tape->slot_for(b) : -1;
    int so = tape->slot_for(out);
    Tensor ca = a, cb = b;
    tape->push_node([sa, sb, so, ca, cb](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      int64_t n = ca.numel();
      if (sa >= 0) {
        auto& ga = tp.grad_slot(sa);
        const double* pb2 = cb.data();
        for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * pb2[i];
      }
      if (sb >= 0) {
        auto& gb = tp.grad_slot(sb);
        const double* pa2 = ca.data();
        for (int64_t i = 0; i < n; ++i) gb[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * pa2[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& a, double c) {
  if (!std::isfinite(c)) shape_error("scale", "non-finite factor");
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = c * pa[i];
  check_finite("scale", out);
  if (want_record(tape, {&a})) {
    out.set_requires_grad(true);
    int sa = tape->slot_for(a);
    int so = tape->slot_for(out);
    int64_t n = a.numel();
    tape->push_node([sa, so, c, n](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      auto& ga = tp.grad_slot(sa);
      for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += c * g[static_cast<size_t>(i)];
    });
  }
  return out;
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    shape_error("matmul", "expects rank-2 inputs, got " + a.shape_str() + " and " + b.shape_str());
  }
  if (a.cols() != b.rows()) {
    shape_error("matmul", "inner extents differ: " + a.shape_str() + " x " + b.shape_str());
  }
  int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      double av = pa[i * k + l];
      const double* prow = pb + l * n;
      double* orow = po + i * n;
      for (int j = 0; j < n; ++j) orow[j] += av * prow[j];
    }
  }
  check_finite("matmul", out);
  if (want_record(tape, {&a, &b})) {
    out.set_requires_grad(true);
    int sa = a.requires_grad() ? tape->slot_for(a) : -1;
    int sb = b.requires_grad() ? tape->slot_for(b) : -1;
    int so = tape->slot_for(out);
    Tensor ca = a, cb = b;
    tape->push_node([sa, sb, so, ca, cb, m, k, n](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      if (sa >= 0) {
        // dA += G * B^T
        auto& ga = tp.grad_slot(sa);
        const double* pb2 = cb.data();
        for (int i = 0; i < m; ++i)
          for (int l = 0; l < k; ++l) {
            double acc = 0.0;
            const double* grow = g.data() + i * n;
            const double* brow = pb2 + l * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[static_cast<size_t>(i * k + l)] += acc;
          }
      }
      if (sb >= 0) {
        // dB += A^T * G
        auto& gb = tp.grad_slot(sb);
        const double* pa2 = ca.data();
        for (int i = 0; i < m; ++i) {
          const double* arow = pa2 + i * k;
          const double* grow = g.data() + i * n;
          for (int l = 0; l < k; ++l) {
            double av = arow[l];
            double* brow = gb.data() + l * n;
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(Tape* tape, const Tensor& a) {
  if (a.rank() != 2) shape_error("transpose", "expects rank-2, got " + a.shape_str());
  int r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros({c, r});
  const double* pa = a.data();
  double* po = out.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) po[j * r + i] = pa[i * c + j];
  if (want_record(tape, {&a})) {
    out.set_requires_grad(true);
    int sa = tape->slot_for(a);
    int so = tape->slot_for(out);
    tape->push_node([sa, so, r, c](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      auto& ga = tp.grad_slot(sa);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) ga[static_cast<size_t>(i * c + j)] += g[static_cast<size_t>(j * r + i)];
    });
  }
  return out;
}

Tensor mean_all(Tape* tape, const Tensor& a) {
  if (a.numel() == 0) shape_error("mean", "empty input");
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a.at(i);
  double inv = 1.0 / static_cast<double>(a.numel());
  Tensor out = Tensor::scalar(acc * inv);
  check_finite("mean", out);
  if (want_record(tape, {&a})) {
    out.set_requires_grad(true);
    int sa = tape->slot_for(a);
    int so = tape->slot_for(out);
    int64_t n = a.numel();
    tape->push_node([sa, so, inv, n](Tape& tp) {
      double g = tp.grad_slot(so)[0];
      auto& ga = tp.grad_slot(sa);
      for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g * inv;
    });
  }
  return out;
}

Tensor sum_all(Tape* tape, const Tensor& a) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += a.at(i);
  Tensor out = Tensor::scalar(acc);
  check_finite("sum", out);
  if (want_record(tape, {&a})) {
    out.set_requires_grad(true);
    int sa = tape->slot_for(a);
    int so = tape->slot_for(out);
    int64_t n = a.numel();
    tape->push_node([sa, so, n](Tape& tp) {
      double g = tp.grad_slot(so)[0];
      auto& ga = tp.grad_slot(sa);
      for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g;
    });
  }
  return out;
}

Tensor softmax_last(Tape* tape, const Tensor& a) {
  if (a.rank() < 1) shape_error("softmax", "expects rank >= 1, got " + a.shape_str());
  int c = a.cols();
  int64_t rows = a.numel() / c;
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = pa + r * c;
    double* y = po + r * c;
    double mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    double inv = 1.0 / z;
    for (int j = 0; j < c; ++j) y[j] *= inv;
  }
  check_finite("softmax", out);
  if (want_record(tape, {&a})) {
    out.set_requires_grad(true);
    int sa = tape->slot_for(a);
    int so = tape->slot_for(out);
    Tensor cy = out;
    tape->push_node([sa, so, cy, rows, c](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      auto& ga = tp.grad_slot(sa);
      const double* y = cy.data();
      for (int64_t r = 0; r < rows; ++r) {
        const double* gr = g.data() + r * c;
        const double* yr = y + r * c;
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += gr[j] * yr[j];
        double* gar = ga.data() + r * c;
        for (int j = 0; j < c; ++j) gar[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

Tensor rmsnorm(Tape* tape, const Tensor& x, const Tensor& gain) {
  if (x.rank() < 1) shape_error("rmsnorm", "expects rank >= 1, got " + x.shape_str());
  if (gain.rank() != 1 || gain.cols() != x.cols()) {
    shape_error("rmsnorm", "gain " + gain.shape_str() + " does not match width of " + x.shape_str());
  }
  int c = x.cols();
  int64_t rows = x.numel() / c;
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> inv_rms(static_cast<size_t>(rows));
  const double* px = x.data();
  const double* pg = gain.data();
  double* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * c;
    double ms = 0.0;
    for (int j = 0; j < c; ++j) ms += xr[j] * xr[j];
    ms /= c;
    double inv = 1.0 / std::sqrt(ms + kRmsNormEps);
    inv_rms[static_cast<size_t>(r)] = inv;
    double* yr = po + r * c;
    for (int j = 0; j < c; ++j) yr[j] = xr[j] * inv * pg[j];
  }
  check_finite("rmsnorm", out);
  if (want_record(tape, {&x, &gain})) {
    out.set_requires_grad(true);
    int sx = x.requires_grad() ? tape->slot_for(x) : -1;
    int sg = gain.requires_grad() ? tape->slot_for(gain) : -1;
    int so = tape->slot_for(out);
    Tensor cx = x, cgain = gain;
    tape->push_node([sx, sg, so, cx, cgain, inv_rms, rows, c](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      const double* px2 = cx.data();
      const double* pg2 = cgain.data();
      for (int64_t r = 0; r < rows; ++r) {
        const double* xr = px2 + r * c;
        const double* gr = g.data() + r * c;
        double inv = inv_rms[static_cast<size_t>(r)];
        if (sx >= 0) {
          // y_i = x_i * gain_i * inv;  d inv/d x_j = -inv^3 * x_j / c
          double dot = 0.0;
          for (int j = 0; j < c; ++j) dot += gr[j] * pg2[j] * xr[j];
          double* gx = tp.grad_slot(sx).data() + r * c;
          double inv3 = inv * inv * inv;
          for (int j = 0; j < c; ++j) {
            gx[j] += gr[j] * pg2[j] * inv - xr[j] * inv3 * dot / c;
          }
        }
        if (sg >= 0) {
          double* gg = tp.grad_slot(sg).data();
          for (int j = 0; j < c; ++j) gg[j] += gr[j] * xr[j] * inv;
        }
      }
    });
  }
  return out;
}

Tensor relu(Tape* tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  check_finite("relu", out);
  if (want_record(tape, {&a})) {
    out.set_requires_grad(true);
    int sa = tape->slot_for(a);
    int so = tape->slot_for(out);
    Tensor ca = a;
    tape->push_node([sa, so, ca](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      auto& ga = tp.grad_slot(sa);
      const double* pa2 = ca.data();
      for (int64_t i = 0; i < ca.numel(); ++i)
        if (pa2[i] > 0.0) ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
    });
  }
  return out;
}

Tensor gelu(Tape* tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    double x = pa[i];
    po[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  check_finite("gelu", out);
  if (want_record(tape, {&a})) {
    out.set_requires_grad(true);
    int sa = tape->slot_for(a);
    int so = tape->slot_for(out);
    Tensor ca = a;
    tape->push_node([sa, so, ca](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      auto& ga = tp.grad_slot(sa);
      const double* pa2 = ca.data();
      for (int64_t i = 0; i < ca.numel(); ++i) {
        double x = pa2[i];
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

Tensor squared_l2(Tape* tape, const Tensor& a) {
  double acc = 0.0;
  const double* pa = a.data();
  for (int64_t i = 0; i < a.numel(); ++i) acc += pa[i] * pa[i];
  Tensor out = Tensor::scalar(acc);
  check_finite("squared_l2", out);
  if (want_record(tape, {&a})) {
    out.set_requires_grad(true);
    int sa = tape->slot_for(a);
    int so = tape->slot_for(out);
    Tensor ca = a;
    tape->push_node([sa, so, ca](Tape& tp) {
      double g = tp.grad_slot(so)[0];
      auto& ga = tp.grad_slot(sa);
      const double* pa2 = ca.data();
      for (int64_t i = 0; i < ca.numel(); ++i) ga[static_cast<size_t>(i)] += 2.0 * pa2[i] * g;
    });
  }
  return out;
}

Tensor concat_last(Tape* tape, std::span<const Tensor> parts) {
  if (parts.empty()) shape_error("concat", "no inputs");
  int rank = parts[0].rank();
  if (rank < 1 || rank > 2) shape_error("concat", "expects rank 1 or 2, got " + parts[0].shape_str());
  int rows = rank == 2 ? parts[0].rows() : 1;
  int total_cols = 0;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    if (p.rank() != rank || (rank == 2 && p.rows() != rows)) {
      shape_error("concat", "leading extents differ: " + parts[0].shape_str() + " vs " + p.shape_str());
    }
    total_cols += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  std::vector<int> oshape = rank == 2 ? std::vector<int>{rows, total_cols}
                                      : std::vector<int>{total_cols};
  Tensor out = Tensor::zeros(oshape);
  double* po = out.data();
  int off = 0;
  for (const Tensor& p : parts) {
    int c = p.cols();
    const double* pp = p.data();
    for (int r = 0; r < rows; ++r)
      std::memcpy(po + r * total_cols + off, pp + r * c, sizeof(double) * static_cast<size_t>(c));
    off += c;
  }
  if (tape && any_grad) {
    out.set_requires_grad(true);
    struct Piece { int slot; int cols; int offset; };
    std::vector<Piece> pieces;
    int o2 = 0;
    for (const Tensor& p : parts) {
      if (p.requires_grad()) pieces.push_back({tape->slot_for(p), p.cols(), o2});
      o2 += p.cols();
    }
    int so = tape->slot_for(out);
    tape->push_node([pieces, so, rows, total_cols](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      for (const Piece& pc : pieces) {
        auto& gp = tp.grad_slot(pc.slot);
        for (int r = 0; r < rows; ++r)
          for (int j = 0; j < pc.cols; ++j)
            gp[static_cast<size_t>(r * pc.cols + j)] += g[static_cast<size_t>(r * total_cols + pc.offset + j)];
      }
    });
  }
  return out;
}

Tensor stack_rows(Tape* tape, std::span<const Tensor> rows) {
  if (rows.empty()) shape_error("stack_rows", "no inputs");
  int c = rows[0].cols();
  bool any_grad = false;
  for (const Tensor& r : rows) {
    bool row_like = (r.rank() == 1) || (r.rank() == 2 && r.rows() == 1);
    if (!row_like || r.cols() != c) {
      shape_error("stack_rows", "expects [n] or [1,n] rows of equal width, got " + r.shape_str());
    }
    any_grad = any_grad || r.requires_grad();
  }
  int b = static_cast<int>(rows.size());
  Tensor out = Tensor::zeros({b, c});
  double* po = out.data();
  for (int i = 0; i < b; ++i)
    std::memcpy(po + i * c, rows[i].data(), sizeof(double) * static_cast<size_t>(c));
  if (tape && any_grad) {
    out.set_requires_grad(true);
    std::vector<int> slots(rows.size(), -1);
    for (size_t i = 0; i < rows.size(); ++i)
      if (rows[i].requires_grad()) slots[i] = tape->slot_for(rows[i]);
    int so = tape->slot_for(out);
    tape->push_node([slots, so, c](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      for (size_t i = 0; i < slots.size(); ++i) {
        if (slots[i] < 0) continue;
        auto& gr = tp.grad_slot(slots[i]);
        for (int j = 0; j < c; ++j) gr[static_cast<size_t>(j)] += g[i * static_cast<size_t>(c) + static_cast<size_t>(j)];
      }
    });
  }
  return out;
}

Tensor slice_cols(Tape* tape, const Tensor& a, int from, int to) {
  if (a.rank() != 2) shape_error("slice_cols", "expects rank-2, got " + a.shape_str());
  if (from < 0 || to <= from || to > a.cols()) {
    shape_error("slice_cols", "window [" + std::to_string(from) + "," + std::to_string(to) +
                                  ") outside " + a.shape_str());
  }
  int r = a.rows(), c = a.cols(), w = to - from;
  Tensor out = Tensor::zeros({r, w});
  const double* pa = a.data();
  double* po = out.data();
  for (int i = 0; i < r; ++i)
    std::memcpy(po + i * w, pa + i * c + from, sizeof(double) * static_cast<size_t>(w));
  if (want_record(tape, {&a})) {
    out.set_requires_grad(true);
    int sa = tape->slot_for(a);
    int so = tape->slot_for(out);
    tape->push_node([sa, so, r, c, w, from](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      auto& ga = tp.grad_slot(sa);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < w; ++j)
          ga[static_cast<size_t>(i * c + from + j)] += g[static_cast<size_t>(i * w + j)];
    });
  }
  return out;
}

Tensor rowwise_bilinear(Tape* tape, const Tensor& mats, const Tensor& e, int out_dim) {
  if (mats.rank() != 2 || e.rank() != 2) {
    shape_error("rowwise_bilinear", "expects rank-2 inputs, got " + mats.shape_str() + " and " +
                                        e.shape_str());
  }
  int b = mats.rows(), d = e.cols();
  if (e.rows() != b || mats.cols() != out_dim * d) {
    shape_error("rowwise_bilinear", "shapes " + mats.shape_str() + " and " + e.shape_str() +
                                        " do not factor as [B," + std::to_string(out_dim) +
                                        "*d] x [B,d]");
  }
  Tensor out = Tensor::zeros({b, out_dim});
  const double* pm = mats.data();
  const double* pe = e.data();
  double* po = out.data();
  for (int r = 0; r < b; ++r) {
    const double* mrow = pm + static_cast<int64_t>(r) * out_dim * d;
    const double* erow = pe + static_cast<int64_t>(r) * d;
    for (int i = 0; i < out_dim; ++i) {
      double acc = 0.0;
      const double* mi = mrow + static_cast<int64_t>(i) * d;
      for (int j = 0; j < d; ++j) acc += mi[j] * erow[j];
      po[static_cast<int64_t>(r) * out_dim + i] = acc;
    }
  }
  check_finite("rowwise_bilinear", out);
  if (want_record(tape, {&mats, &e})) {
    out.set_requires_grad(true);
    int sm = mats.requires_grad() ? tape->slot_for(mats) : -1;
    int se = e.requires_grad() ? tape->slot_for(e) : -1;
    int so = tape->slot_for(out);
    Tensor cm = mats, ce = e;
    tape->push_node([sm, se, so, cm, ce, b, d, out_dim](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      for (int r = 0; r < b; ++r) {
        const double* grow = g.data() + static_cast<int64_t>(r) * out_dim;
        if (sm >= 0) {
          auto& gm = tp.grad_slot(sm);
          const double* erow = ce.data() + static_cast<int64_t>(r) * d;
          double* gmrow = gm.data() + static_cast<int64_t>(r) * out_dim * d;
          for (int i = 0; i < out_dim; ++i)
            for (int j = 0; j < d; ++j) gmrow[static_cast<int64_t>(i) * d + j] += grow[i] * erow[j];
        }
        if (se >= 0) {
          auto& ge = tp.grad_slot(se);
          const double* mrow = cm.data() + static_cast<int64_t>(r) * out_dim * d;
          double* gerow = ge.data() + static_cast<int64_t>(r) * d;
          for (int i = 0; i < out_dim; ++i)
            for (int j = 0; j < d; ++j) gerow[j] += grow[i] * mrow[static_cast<int64_t>(i) * d + j];
        }
      }
    });
  }
  return out;
}

Tensor dropout(Tape* tape, const Tensor& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) shape_error("dropout", "rate must be in [0,1)");
  double keep = 1.0 - rate;
  std::vector<double> mask(static_cast<size_t>(a.numel()));
  for (double& m : mask) m = (rng.uniform() < keep) ? 1.0 / keep : 0.0;
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * mask[static_cast<size_t>(i)];
  check_finite("dropout", out);
  if (want_record(tape, {&a})) {
    out.set_requires_grad(true);
    int sa = tape->slot_for(a);
    int so = tape->slot_for(out);
    int64_t n = a.numel();
    tape->push_node([sa, so, mask, n](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      auto& ga = tp.grad_slot(sa);
      for (int64_t i = 0; i < n; ++i)
        ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * mask[static_cast<size_t>(i)];
    });
  }
  return out;
}

const char* primitive_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Add: return "add";
    case PrimitiveKind::Mul: return "mul";
    case PrimitiveKind::Matmul: return "matmul";
    case PrimitiveKind::Mean: return "mean";
    case PrimitiveKind::Sum: return "sum";
    case PrimitiveKind::SoftmaxLast: return "softmax-last-axis";
    case PrimitiveKind::RmsNorm: return "rmsnorm";
    case PrimitiveKind::Relu: return "relu";
    case PrimitiveKind::Gelu: return "gelu";
    case PrimitiveKind::SquaredL2: return "squared-l2";
    case PrimitiveKind::Concat: return "concat";
  }
  return "?";
}

Tensor apply_primitive(Tape* tape, PrimitiveKind kind, std::span<const Tensor> inputs) {
  auto need = [&](size_t n) {
    if (inputs.size() != n) {
      throw std::runtime_error(std::string(primitive_name(kind)) + ": expects " +
                               std::to_string(n) + " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case PrimitiveKind::Add: need(2); return add(tape, inputs[0], inputs[1]);
    case PrimitiveKind::Mul: need(2); return mul(tape, inputs[0], inputs[1]);
    case PrimitiveKind::Matmul: need(2); return matmul(tape, inputs[0], inputs[1]);
    case PrimitiveKind::Mean: need(1); return mean_all(tape, inputs[0]);
    case PrimitiveKind::Sum: need(1); return sum_all(tape, inputs[0]);
    case PrimitiveKind::SoftmaxLast: need(1); return softmax_last(tape, inputs[0]);
    case PrimitiveKind::RmsNorm: need(2); return rmsnorm(tape, inputs[0], inputs[1]);
    case PrimitiveKind::Relu: need(1); return relu(tape, inputs[0]);
    case PrimitiveKind::Gelu: need(1); return gelu(tape, inputs[0]);
    case PrimitiveKind::SquaredL2: need(1); return squared_l2(tape, inputs[0]);
    case PrimitiveKind::Concat: return concat_last(tape, inputs);
  }
  throw std::runtime_error("apply_primitive: unknown kind");
}

namespace detail {

Tensor custom_unary(Tape* tape, const Tensor& a,
                    const std::function<double(double)>& fwd,
                    const std::function<double(double)>& dfwd) {
  Tensor out = Tensor::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = fwd(a.at(i));
  if (want_record(tape, {&a})) {
    out.set_requires_grad(true);
    int sa = tape->slot_for(a);
    int so = tape->slot_for(out);
    Tensor ca = a;
    tape->push_node([sa, so, ca, dfwd](Tape& tp) {
      const auto& g = tp.grad_slot(so);
      auto& ga = tp.grad_slot(sa);
      for (int64_t i = 0; i < ca.numel(); ++i)
        ga[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * dfwd(ca.at(i));
    });
  }
  return out;
}

}  // namespace detail

uint64_t fnv1a64(const void* data, size_t bytes) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t checksum_values(const std::vector<double>& v) {
  return fnv1a64(v.data(), v.size() * sizeof(double));
}

}  // namespace safecfg
