#include "dan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dan {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  if (s.empty()) os << "scalar";
  return os.str();
}

void TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
}

void TensorImpl::accumulate(const double* g, std::int64_t n) {
  ensure_grad();
  for (std::int64_t i = 0; i < n; ++i) grad[static_cast<std::size_t>(i)] += g[i];
}

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> values) {
  auto impl = std::make_shared<TensorImpl>();
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                     shape_str(shape));
  }
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  return impl;
}

const TensorImpl& need(const Tensor& t, const char* op) {
  if (!t.defined()) throw ValueError(std::string(op) + ": undefined tensor");
  return *t.impl();
}

}  // namespace

const Shape& Tensor::shape() const { return need(*this, "shape").shape; }

std::int64_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) throw ShapeError("dim index " + std::to_string(i) + " out of rank " + std::to_string(s.size()));
  return s[i];
}

std::int64_t Tensor::numel() const { return need(*this, "numel").numel(); }

std::span<const double> Tensor::values() const {
  const auto& im = need(*this, "values");
  return {im.values.data(), im.values.size()};
}

std::span<double> Tensor::mutable_values() {
  auto& im = const_cast<TensorImpl&>(need(*this, "mutable_values"));
  return {im.values.data(), im.values.size()};
}

bool Tensor::requires_grad() const { return need(*this, "requires_grad").requires_grad; }

void Tensor::set_requires_grad(bool b) {
  auto& im = const_cast<TensorImpl&>(need(*this, "set_requires_grad"));
  im.requires_grad = b;
}

bool Tensor::has_grad() const { return !need(*this, "has_grad").grad.empty(); }

std::span<const double> Tensor::grad() const {
  const auto& im = need(*this, "grad");
  if (im.grad.empty()) throw ValueError("grad: no gradient has been accumulated");
  return {im.grad.data(), im.grad.size()};
}

void Tensor::zero_grad() {
  auto& im = const_cast<TensorImpl&>(need(*this, "zero_grad"));
  std::fill(im.grad.begin(), im.grad.end(), 0.0);
}

double Tensor::item() const {
  const auto& im = need(*this, "item");
  if (im.numel() != 1) throw ShapeError("item: tensor has shape " + shape_str(im.shape) + ", expected a single element");
  return im.values[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  const auto& im = need(*this, "at");
  if (idx.size() != im.shape.size()) {
    throw ShapeError("at: " + std::to_string(idx.size()) + " indices for rank " + std::to_string(im.shape.size()));
  }
  std::int64_t flat = 0;
  std::size_t d = 0;
  for (auto i : idx) {
    if (i < 0 || i >= im.shape[d]) throw ShapeError("at: index out of bounds");
    flat = flat * im.shape[d] + i;
    ++d;
  }
  return im.values[static_cast<std::size_t>(flat)];
}

void Tensor::backward() const { dan::backward(*this); }

// ---- construction ----------------------------------------------------------

Tensor zeros(Shape s, bool requires_grad) {
  const auto n = static_cast<std::size_t>(shape_numel(s));
  auto impl = make_impl(std::move(s), std::vector<double>(n, 0.0));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor full(Shape s, double v, bool requires_grad) {
  const auto n = static_cast<std::size_t>(shape_numel(s));
  auto impl = make_impl(std::move(s), std::vector<double>(n, v));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor from_values(Shape s, std::vector<double> v, bool requires_grad) {
  auto impl = make_impl(std::move(s), std::move(v));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor scalar(double v, bool requires_grad) { return from_values({1}, {v}, requires_grad); }

Tensor randn(Shape s, Rng& rng, double stddev, bool requires_grad) {
  const auto n = static_cast<std::size_t>(shape_numel(s));
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return from_values(std::move(s), std::move(v), requires_grad);
}

Tensor uniform(Shape s, Rng& rng, double lo, double hi, bool requires_grad) {
  const auto n = static_cast<std::size_t>(shape_numel(s));
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return from_values(std::move(s), std::move(v), requires_grad);
}

// ---- autograd control ------------------------------------------------------

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Tensor& loss) {
  const auto& root = need(loss, "backward");
  if (root.numel() != 1) {
    throw ShapeError("backward: loss has shape " + shape_str(root.shape) + ", expected scalar");
  }

  // Post-order DFS; reversing the finish order gives a topological order in
  // which every node is visited exactly once.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    TensorImpl* node;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  auto* rootp = const_cast<TensorImpl*>(&root);
  if (!seen.insert(rootp).second) return;
  stack.push_back({rootp, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.node->grad_fn && f.next_child < f.node->grad_fn->inputs.size()) {
      TensorImpl* child = f.node->grad_fn->inputs[f.next_child].get();
      ++f.next_child;
      if (seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  rootp->ensure_grad();
  rootp->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->grad_fn && !node->grad.empty()) node->grad_fn->apply(*node);
  }
}

// ---- op plumbing -----------------------------------------------------------

namespace detail {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<std::shared_ptr<TensorImpl>> inputs, const char* op,
                   std::function<void(const TensorImpl&)> apply) {
  auto out = make_impl(std::move(shape), std::move(values));
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in->requires_grad) {
        needs = true;
        break;
      }
    }
  }
  if (needs) {
    out->requires_grad = true;
    auto fn = std::make_shared<GradFn>();
    fn->op = op;
    fn->inputs = std::move(inputs);
    fn->apply = std::move(apply);
    out->grad_fn = std::move(fn);
  }
  return Tensor(out);
}

void mm_nn_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void mm_tn_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

using detail::check_same_shape;
using detail::make_result;

// ---- elementwise -----------------------------------------------------------

namespace {

using Elemwise2 = double (*)(double, double);

Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Elemwise2 f,
                 std::function<void(const TensorImpl&, TensorImpl&, TensorImpl&)> back) {
  check_same_shape(op, a, b);
  const auto& av = a.impl()->values;
  const auto& bv = b.impl()->values;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
  auto ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), {ai, bi}, op,
                     [ai, bi, back](const TensorImpl& o) { back(o, *ai, *bi); });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](const TensorImpl& o, TensorImpl& ai, TensorImpl& bi) {
        const std::int64_t n = o.numel();
        if (ai.requires_grad) ai.accumulate(o.grad.data(), n);
        if (bi.requires_grad) bi.accumulate(o.grad.data(), n);
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](const TensorImpl& o, TensorImpl& ai, TensorImpl& bi) {
        const std::int64_t n = o.numel();
        if (ai.requires_grad) ai.accumulate(o.grad.data(), n);
        if (bi.requires_grad) {
          bi.ensure_grad();
          for (std::int64_t i = 0; i < n; ++i) bi.grad[static_cast<std::size_t>(i)] -= o.grad[static_cast<std::size_t>(i)];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](const TensorImpl& o, TensorImpl& ai, TensorImpl& bi) {
        const std::size_t n = o.values.size();
        if (ai.requires_grad) {
          ai.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) ai.grad[i] += o.grad[i] * bi.values[i];
        }
        if (bi.requires_grad) {
          bi.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) bi.grad[i] += o.grad[i] * ai.values[i];
        }
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](const TensorImpl& o, TensorImpl& ai, TensorImpl& bi) {
        const std::size_t n = o.values.size();
        if (ai.requires_grad) {
          ai.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) ai.grad[i] += o.grad[i] / bi.values[i];
        }
        if (bi.requires_grad) {
          bi.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            const double d = bi.values[i];
            bi.grad[i] -= o.grad[i] * ai.values[i] / (d * d);
          }
        }
      });
}

namespace {

Tensor unary_op(const char* op, const Tensor& a, std::function<double(double)> f,
                std::function<void(const TensorImpl&, TensorImpl&)> back) {
  const auto& av = need(a, op).values;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  auto ai = a.impl();
  return make_result(a.shape(), std::move(out), {ai}, op,
                     [ai, back](const TensorImpl& o) { back(o, *ai); });
}

}  // namespace

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      "add_scalar", a, [s](double x) { return x + s; },
      [](const TensorImpl& o, TensorImpl& ai) {
        if (ai.requires_grad) ai.accumulate(o.grad.data(), o.numel());
      });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(
      "mul_scalar", a, [s](double x) { return x * s; },
      [s](const TensorImpl& o, TensorImpl& ai) {
        if (!ai.requires_grad) return;
        ai.ensure_grad();
        for (std::size_t i = 0; i < o.values.size(); ++i) ai.grad[i] += o.grad[i] * s;
      });
}

Tensor scalar_div(double s, const Tensor& a) {
  return unary_op(
      "scalar_div", a, [s](double x) { return s / x; },
      [s](const TensorImpl& o, TensorImpl& ai) {
        if (!ai.requires_grad) return;
        ai.ensure_grad();
        for (std::size_t i = 0; i < o.values.size(); ++i) {
          const double x = ai.values[i];
          ai.grad[i] -= o.grad[i] * s / (x * x);
        }
      });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](const TensorImpl& o, TensorImpl& ai) {
        if (!ai.requires_grad) return;
        ai.ensure_grad();
        for (std::size_t i = 0; i < o.values.size(); ++i) {
          if (ai.values[i] > 0.0) ai.grad[i] += o.grad[i];
        }
      });
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a, [](double x) { return stable_sigmoid(x); },
      [](const TensorImpl& o, TensorImpl& ai) {
        if (!ai.requires_grad) return;
        ai.ensure_grad();
        for (std::size_t i = 0; i < o.values.size(); ++i) {
          const double y = o.values[i];
          ai.grad[i] += o.grad[i] * y * (1.0 - y);
        }
      });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](const TensorImpl& o, TensorImpl& ai) {
        if (!ai.requires_grad) return;
        ai.ensure_grad();
        for (std::size_t i = 0; i < o.values.size(); ++i) ai.grad[i] += o.grad[i] * o.values[i];
      });
}

Tensor log(const Tensor& a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](const TensorImpl& o, TensorImpl& ai) {
        if (!ai.requires_grad) return;
        ai.ensure_grad();
        for (std::size_t i = 0; i < o.values.size(); ++i) ai.grad[i] += o.grad[i] / ai.values[i];
      });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](const TensorImpl& o, TensorImpl& ai) {
        if (!ai.requires_grad) return;
        ai.ensure_grad();
        for (std::size_t i = 0; i < o.values.size(); ++i) ai.grad[i] += o.grad[i] * 0.5 / o.values[i];
      });
}

Tensor clamp_min(const Tensor& a, double lo) {
  return unary_op(
      "clamp_min", a, [lo](double x) { return x > lo ? x : lo; },
      [lo](const TensorImpl& o, TensorImpl& ai) {
        if (!ai.requires_grad) return;
        ai.ensure_grad();
        for (std::size_t i = 0; i < o.values.size(); ++i) {
          if (ai.values[i] > lo) ai.grad[i] += o.grad[i];
        }
      });
}

// ---- reductions & shape ----------------------------------------------------

Tensor sum(const Tensor& a) {
  const auto av = a.values();
  double s = 0.0;
  for (double x : av) s += x;
  auto ai = a.impl();
  return make_result({1}, {s}, {ai}, "sum", [ai](const TensorImpl& o) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    const double g = o.grad[0];
    for (auto& x : ai->grad) x += g;
  });
}

Tensor mean(const Tensor& a) {
  const auto av = a.values();
  if (av.empty()) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double x : av) s += x;
  const double inv = 1.0 / static_cast<double>(av.size());
  auto ai = a.impl();
  return make_result({1}, {s * inv}, {ai}, "mean", [ai, inv](const TensorImpl& o) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    const double g = o.grad[0] * inv;
    for (auto& x : ai->grad) x += g;
  });
}

Tensor reshape(const Tensor& a, Shape s) {
  if (shape_numel(s) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
  }
  auto ai = a.impl();
  std::vector<double> v(ai->values);
  return make_result(std::move(s), std::move(v), {ai}, "reshape", [ai](const TensorImpl& o) {
    if (!ai->requires_grad) return;
    ai->accumulate(o.grad.data(), o.numel());
  });
}

// ---- axis-1 helpers --------------------------------------------------------

Tensor stack_axis1(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack_axis1: empty input list");
  const Shape& s0 = parts[0].shape();
  if (s0.empty()) throw ShapeError("stack_axis1: parts must have a leading batch axis");
  for (const auto& p : parts) check_same_shape("stack_axis1", parts[0], p);

  const std::int64_t b = s0[0];
  const std::int64_t rest = shape_numel(s0) / b;
  const std::int64_t k = static_cast<std::int64_t>(parts.size());
  Shape out_shape;
  out_shape.push_back(b);
  out_shape.push_back(k);
  for (std::size_t i = 1; i < s0.size(); ++i) out_shape.push_back(s0[i]);

  std::vector<double> out(static_cast<std::size_t>(b * k * rest));
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  inputs.reserve(parts.size());
  for (const auto& p : parts) inputs.push_back(p.impl());
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t j = 0; j < k; ++j) {
      const double* src = inputs[static_cast<std::size_t>(j)]->values.data() + bi * rest;
      double* dst = out.data() + (bi * k + j) * rest;
      std::copy(src, src + rest, dst);
    }
  }
  auto ins = inputs;
  return make_result(std::move(out_shape), std::move(out), std::move(inputs), "stack_axis1",
                     [ins, b, k, rest](const TensorImpl& o) {
                       for (std::int64_t j = 0; j < k; ++j) {
                         auto& in = *ins[static_cast<std::size_t>(j)];
                         if (!in.requires_grad) continue;
                         in.ensure_grad();
                         for (std::int64_t bi = 0; bi < b; ++bi) {
                           const double* g = o.grad.data() + (bi * k + j) * rest;
                           double* dst = in.grad.data() + bi * rest;
                           for (std::int64_t r = 0; r < rest; ++r) dst[r] += g[r];
                         }
                       }
                     });
}

namespace {

void check_rank3(const char* op, const Tensor& a) {
  if (a.rank() != 3) {
    throw ShapeError(std::string(op) + ": expected rank-3 [B,K,L], got " + shape_str(a.shape()));
  }
}

}  // namespace

Tensor sum_axis1(const Tensor& a) {
  check_rank3("sum_axis1", a);
  const std::int64_t b = a.dim(0), k = a.dim(1), l = a.dim(2);
  const auto av = a.values();
  std::vector<double> out(static_cast<std::size_t>(b * l), 0.0);
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t j = 0; j < k; ++j)
      for (std::int64_t li = 0; li < l; ++li)
        out[static_cast<std::size_t>(bi * l + li)] += av[static_cast<std::size_t>((bi * k + j) * l + li)];
  auto ai = a.impl();
  return make_result({b, l}, std::move(out), {ai}, "sum_axis1", [ai, b, k, l](const TensorImpl& o) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t j = 0; j < k; ++j)
        for (std::int64_t li = 0; li < l; ++li)
          ai->grad[static_cast<std::size_t>((bi * k + j) * l + li)] += o.grad[static_cast<std::size_t>(bi * l + li)];
  });
}

Tensor mean_axis1(const Tensor& a) {
  check_rank3("mean_axis1", a);
  const std::int64_t b = a.dim(0), k = a.dim(1), l = a.dim(2);
  const double inv = 1.0 / static_cast<double>(k);
  const auto av = a.values();
  std::vector<double> out(static_cast<std::size_t>(b * l), 0.0);
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t j = 0; j < k; ++j)
      for (std::int64_t li = 0; li < l; ++li)
        out[static_cast<std::size_t>(bi * l + li)] += av[static_cast<std::size_t>((bi * k + j) * l + li)];
  for (auto& x : out) x *= inv;
  auto ai = a.impl();
  return make_result({b, l}, std::move(out), {ai}, "mean_axis1", [ai, b, k, l, inv](const TensorImpl& o) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t j = 0; j < k; ++j)
        for (std::int64_t li = 0; li < l; ++li)
          ai->grad[static_cast<std::size_t>((bi * k + j) * l + li)] += o.grad[static_cast<std::size_t>(bi * l + li)] * inv;
  });
}

Tensor expand_axis1(const Tensor& a, std::int64_t k) {
  if (a.rank() != 2) throw ShapeError("expand_axis1: expected rank-2 [B,L], got " + shape_str(a.shape()));
  if (k < 1) throw ShapeError("expand_axis1: k must be >= 1");
  const std::int64_t b = a.dim(0), l = a.dim(1);
  const auto av = a.values();
  std::vector<double> out(static_cast<std::size_t>(b * k * l));
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t j = 0; j < k; ++j)
      std::copy(av.data() + bi * l, av.data() + (bi + 1) * l, out.data() + (bi * k + j) * l);
  auto ai = a.impl();
  return make_result({b, k, l}, std::move(out), {ai}, "expand_axis1", [ai, b, k, l](const TensorImpl& o) {
    if (!ai->requires_grad) return;
    ai->ensure_grad();
    for (std::int64_t bi = 0; bi < b; ++bi)
      for (std::int64_t j = 0; j < k; ++j)
        for (std::int64_t li = 0; li < l; ++li)
          ai->grad[static_cast<std::size_t>(bi * l + li)] += o.grad[static_cast<std::size_t>((bi * k + j) * l + li)];
  });
}

Tensor log_softmax_axis1(const Tensor& a) {
  check_rank3("log_softmax_axis1", a);
  const std::int64_t b = a.dim(0), k = a.dim(1), l = a.dim(2);
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t li = 0; li < l; ++li) {
      double m = -HUGE_VAL;
      for (std::int64_t j = 0; j < k; ++j) m = std::max(m, av[static_cast<std::size_t>((bi * k + j) * l + li)]);
      double z = 0.0;
      for (std::int64_t j = 0; j < k; ++j) z += std::exp(av[static_cast<std::size_t>((bi * k + j) * l + li)] - m);
      const double lse = m + std::log(z);
      for (std::int64_t j = 0; j < k; ++j) {
        const auto idx = static_cast<std::size_t>((bi * k + j) * l + li);
        out[idx] = av[idx] - lse;
      }
    }
  }
  auto ai = a.impl();
  return make_result(a.shape(), std::move(out), {ai}, "log_softmax_axis1",
                     [ai, b, k, l](const TensorImpl& o) {
                       if (!ai->requires_grad) return;
                       ai->ensure_grad();
                       for (std::int64_t bi = 0; bi < b; ++bi) {
                         for (std::int64_t li = 0; li < l; ++li) {
                           double gsum = 0.0;
                           for (std::int64_t j = 0; j < k; ++j) gsum += o.grad[static_cast<std::size_t>((bi * k + j) * l + li)];
                           for (std::int64_t j = 0; j < k; ++j) {
                             const auto idx = static_cast<std::size_t>((bi * k + j) * l + li);
                             ai->grad[idx] += o.grad[idx] - std::exp(o.values[idx]) * gsum;
                           }
                         }
                       }
                     });
}

// ---- gather / broadcast ----------------------------------------------------

Tensor take_columns(const Tensor& m, const std::vector<int>& idx) {
  if (m.rank() != 2) throw ShapeError("take_columns: expected rank-2 [D,Y], got " + shape_str(m.shape()));
  const std::int64_t d = m.dim(0), y = m.dim(1);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= y) {
      throw ValueError("take_columns: index " + std::to_string(idx[i]) + " at position " +
                       std::to_string(i) + " outside [0, " + std::to_string(y) + ")");
    }
  }
  const std::int64_t n = static_cast<std::int64_t>(idx.size());
  const auto mv = m.values();
  std::vector<double> out(static_cast<std::size_t>(n * d));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t di = 0; di < d; ++di)
      out[static_cast<std::size_t>(i * d + di)] = mv[static_cast<std::size_t>(di * y + idx[static_cast<std::size_t>(i)])];
  auto mi = m.impl();
  auto idx_copy = idx;
  return make_result({n, d}, std::move(out), {mi}, "take_columns",
                     [mi, idx_copy, d, y, n](const TensorImpl& o) {
                       if (!mi->requires_grad) return;
                       mi->ensure_grad();
                       for (std::int64_t i = 0; i < n; ++i)
                         for (std::int64_t di = 0; di < d; ++di)
                           mi->grad[static_cast<std::size_t>(di * y + idx_copy[static_cast<std::size_t>(i)])] +=
                               o.grad[static_cast<std::size_t>(i * d + di)];
                     });
}

Tensor scale_channels(const Tensor& x, const Tensor& g) {
  if (x.rank() != 4) throw ShapeError("scale_channels: x must be [B,C,H,W], got " + shape_str(x.shape()));
  if (g.rank() != 2 || g.dim(0) != x.dim(0) || g.dim(1) != x.dim(1)) {
    throw ShapeError("scale_channels: gate " + shape_str(g.shape()) + " does not match input " +
                     shape_str(x.shape()));
  }
  const std::int64_t b = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const auto xv = x.values();
  const auto gv = g.values();
  std::vector<double> out(xv.size());
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const double s = gv[static_cast<std::size_t>(bi * c + ci)];
      const double* src = xv.data() + (bi * c + ci) * plane;
      double* dst = out.data() + (bi * c + ci) * plane;
      for (std::int64_t p = 0; p < plane; ++p) dst[p] = src[p] * s;
    }
  auto xi = x.impl(), gi = g.impl();
  return make_result(x.shape(), std::move(out), {xi, gi}, "scale_channels",
                     [xi, gi, b, c, plane](const TensorImpl& o) {
                       if (xi->requires_grad) {
                         xi->ensure_grad();
                         for (std::int64_t bi = 0; bi < b; ++bi)
                           for (std::int64_t ci = 0; ci < c; ++ci) {
                             const double s = gi->values[static_cast<std::size_t>(bi * c + ci)];
                             const double* go = o.grad.data() + (bi * c + ci) * plane;
                             double* dst = xi->grad.data() + (bi * c + ci) * plane;
                             for (std::int64_t p = 0; p < plane; ++p) dst[p] += go[p] * s;
                           }
                       }
                       if (gi->requires_grad) {
                         gi->ensure_grad();
                         for (std::int64_t bi = 0; bi < b; ++bi)
                           for (std::int64_t ci = 0; ci < c; ++ci) {
                             const double* go = o.grad.data() + (bi * c + ci) * plane;
                             const double* xs = xi->values.data() + (bi * c + ci) * plane;
                             double acc = 0.0;
                             for (std::int64_t p = 0; p < plane; ++p) acc += go[p] * xs[p];
                             gi->grad[static_cast<std::size_t>(bi * c + ci)] += acc;
                           }
                       }
                     });
}

}  // namespace dan
