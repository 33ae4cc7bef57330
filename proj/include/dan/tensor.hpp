#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dan/error.hpp"
#include "dan/rng.hpp"

// Dense double-precision tensors with tape-based reverse-mode differentiation.
//
// Every operation that touches a tensor requiring gradients records a node
// linking the output to its inputs together with the adjoint rule. backward()
// on a scalar walks those links once in reverse topological order. All
// reductions use a fixed (ascending-index) summation order and everything runs
// single-threaded, so identical inputs give bitwise-identical values and
// gradients.

namespace dan {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl;

// One recorded primitive: the inputs of the op that produced a tensor and a
// closure applying its adjoint rule. The links between nodes form the
// differentiation graph; creation order guarantees acyclicity.
struct GradFn {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> apply;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // allocated lazily; same extent as values
  std::shared_ptr<GradFn> grad_fn;

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  void ensure_grad();
  void accumulate(const double* g, std::int64_t n);
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t dim(std::size_t i) const;
  std::int64_t numel() const;

  std::span<const double> values() const;
  // Direct write access to the stored values. Intended for leaves
  // (initialization, optimizer updates); never call on a tensor that is part
  // of a live graph.
  std::span<double> mutable_values();

  bool requires_grad() const;
  void set_requires_grad(bool b);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  double item() const;                              // scalar tensors only
  double at(std::initializer_list<std::int64_t> idx) const;

  void backward() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// ---- construction ----------------------------------------------------------

Tensor zeros(Shape s, bool requires_grad = false);
Tensor full(Shape s, double v, bool requires_grad = false);
Tensor from_values(Shape s, std::vector<double> v, bool requires_grad = false);
Tensor scalar(double v, bool requires_grad = false);
Tensor randn(Shape s, Rng& rng, double stddev = 1.0, bool requires_grad = false);
Tensor uniform(Shape s, Rng& rng, double lo, double hi, bool requires_grad = false);

// ---- autograd control ------------------------------------------------------

bool grad_enabled();

// Disables graph recording for its scope (evaluation, metrics).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Populates grad buffers of every requires_grad tensor reachable from `loss`.
// `loss` must be scalar.
void backward(const Tensor& loss);

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor scalar_div(double s, const Tensor& a);  // s / a, elementwise

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);

// ---- reductions & shape ----------------------------------------------------

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
Tensor reshape(const Tensor& a, Shape s);

// ---- axis-1 helpers (head axis of [B, K, ...] stacks) ----------------------

// Stacks K same-shape tensors [B, rest...] into [B, K, rest...].
Tensor stack_axis1(const std::vector<Tensor>& parts);
Tensor sum_axis1(const Tensor& a);                     // [B,K,L] -> [B,L]
Tensor mean_axis1(const Tensor& a);                    // [B,K,L] -> [B,L]
Tensor expand_axis1(const Tensor& a, std::int64_t k);  // [B,L] -> [B,K,L]
// Log-softmax across axis 1 of [B,K,L], computed with max subtraction.
Tensor log_softmax_axis1(const Tensor& a);

// ---- gather / broadcast ----------------------------------------------------

// out[i, d] = m[d, idx[i]] for a [D, Y] matrix; adjoint scatters back.
Tensor take_columns(const Tensor& m, const std::vector<int>& idx);
// x[B,C,H,W] * g[B,C] with g broadcast over the spatial plane.
Tensor scale_channels(const Tensor& x, const Tensor& g);

namespace detail {
// C[M,N] += A[M,K] * B[K,N], row-major, k ascending for every output element.
void mm_nn_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n);
// C[M,N] += A^T * B where A is [K,M]; k ascending per element.
void mm_tn_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n);
void check_same_shape(const char* op, const Tensor& a, const Tensor& b);
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<std::shared_ptr<TensorImpl>> inputs, const char* op,
                   std::function<void(const TensorImpl&)> apply);
}  // namespace detail

}  // namespace dan
