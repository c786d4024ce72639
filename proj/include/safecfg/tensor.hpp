#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "safecfg/rng.hpp"

namespace safecfg {

// Dense row-major tensor of doubles, rank 0..2. Values are shared between
// copies; primitives always allocate fresh outputs.
class Tensor {
 public:
  Tensor() : values_(std::make_shared<std::vector<double>>()) {}
  Tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(values_->size()); }
  int rows() const;  // rank-2 only
  int cols() const;  // last extent (rank 1 or 2)

  double* data() { return values_->data(); }
  const double* data() const { return values_->data(); }
  std::vector<double>& values() { return *values_; }
  const std::vector<double>& values() const { return *values_; }

  double value() const;      // scalar tensors only
  double at(int64_t i) const { return (*values_)[static_cast<size_t>(i)]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool rg) { requires_grad_ = rg; }

  // identity key for gradient lookup (shared across copies)
  const void* key() const { return values_.get(); }

  Tensor deep_copy() const;
  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> values_;
  bool requires_grad_ = false;
};

// Wengert-list tape. Primitives append pull closures in execution order;
// backward walks them once in reverse, which is a valid topological order by
// construction. Gradient buffers live in the tape, so independent tapes
// share nothing even when they touch the same parameter tensors.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and accumulates into every recorded tensor's
  // grad slot. Repeated calls re-zero first, so results are bit-identical.
  void backward(const Tensor& loss);

  // Gradient of the last backward() w.r.t. t; zeros if t never touched the tape.
  std::vector<double> grad(const Tensor& t) const;

  bool recorded(const Tensor& t) const { return slots_.count(t.key()) > 0; }
  size_t node_count() const { return nodes_.size(); }
  void reset();

  // -- used by primitive implementations --
  int slot_for(const Tensor& t);            // allocates on first sight
  int find_slot(const void* key) const;
  std::vector<double>& grad_slot(int idx) { return grads_[static_cast<size_t>(idx)]; }
  void push_node(std::function<void(Tape&)> pull) { nodes_.push_back(std::move(pull)); }

 private:
  std::vector<std::vector<double>> grads_;
  std::unordered_map<const void*, int> slots_;
  std::vector<std::function<void(Tape&)>> nodes_;
  // keeps every recorded buffer alive so pointer keys stay unique for the
  // tape's lifetime
  std::vector<Tensor> keepalive_;
};

// Primitives. `tape == nullptr` evaluates without recording; recording also
// requires at least one input with requires_grad. Shape violations throw
// std::runtime_error naming the primitive and the offending extents. Every
// output is checked finite.
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);  // same shape, or b rank-1 broadcast over rows
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(Tape* tape, const Tensor& a, double c);
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape* tape, const Tensor& a);
Tensor mean_all(Tape* tape, const Tensor& a);   // -> scalar
Tensor sum_all(Tape* tape, const Tensor& a);    // -> scalar
Tensor softmax_last(Tape* tape, const Tensor& a);
Tensor rmsnorm(Tape* tape, const Tensor& x, const Tensor& gain);  // last axis
Tensor relu(Tape* tape, const Tensor& a);
Tensor gelu(Tape* tape, const Tensor& a);       // exact erf form
Tensor squared_l2(Tape* tape, const Tensor& a); // -> scalar
Tensor concat_last(Tape* tape, std::span<const Tensor> parts);
Tensor stack_rows(Tape* tape, std::span<const Tensor> rows);  // [n] or [1,n] parts -> [B,n]
// column window [from, to) of a rank-2 tensor
Tensor slice_cols(Tape* tape, const Tensor& a, int from, int to);
// out[b,i] = sum_j mats[b, i*cols(e) + j] * e[b,j]; a row-wise matrix-vector
// product with a per-row matrix flattened into mats
Tensor rowwise_bilinear(Tape* tape, const Tensor& mats, const Tensor& e, int out_dim);
// Inverted dropout with a seed-driven mask recorded on the tape. Training
// only; evaluation paths simply skip the call.
Tensor dropout(Tape* tape, const Tensor& a, double rate, Rng& rng);

constexpr double kRmsNormEps = 1e-8;

enum class PrimitiveKind {
  Add,
  Mul,
  Matmul,
  Mean,
  Sum,
  SoftmaxLast,
  RmsNorm,
  Relu,
  Gelu,
  SquaredL2,
  Concat,
};

const char* primitive_name(PrimitiveKind kind);
Tensor apply_primitive(Tape* tape, PrimitiveKind kind, std::span<const Tensor> inputs);

namespace detail {
// Extension hook for tests: records a unary node with caller-supplied value
// map and pull rule.
Tensor custom_unary(Tape* tape, const Tensor& a,
                    const std::function<double(double)>& fwd,
                    const std::function<double(double)>& dfwd);
}  // namespace detail

uint64_t fnv1a64(const void* data, size_t bytes);
uint64_t checksum_values(const std::vector<double>& v);

}  // namespace safecfg
