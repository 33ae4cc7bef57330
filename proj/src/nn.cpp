#include "dan/nn.hpp"

#include <cmath>
#include <vector>

#include "dan/conv.hpp"

namespace dan {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 2) throw ShapeError("linear: input must be [N,In], got " + shape_str(x.shape()));
  if (w.rank() != 2) throw ShapeError("linear: weight must be [Out,In], got " + shape_str(w.shape()));
  const std::int64_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in) {
    throw ShapeError("linear: weight expects " + std::to_string(w.dim(1)) + " inputs, got " + std::to_string(in));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias must be [Out], got " + shape_str(bias.shape()));
  }

  std::vector<double> out(static_cast<std::size_t>(n * out_dim), 0.0);
  detail::mm_nt_acc(x.values().data(), w.values().data(), out.data(), n, in, out_dim);
  if (has_bias) {
    const double* bv = bias.values().data();
    for (std::int64_t i = 0; i < n; ++i) {
      double* row = out.data() + i * out_dim;
      for (std::int64_t o = 0; o < out_dim; ++o) row[o] += bv[o];
    }
  }

  auto xi = x.impl(), wi = w.impl();
  std::vector<std::shared_ptr<TensorImpl>> inputs{xi, wi};
  std::shared_ptr<TensorImpl> bimpl;
  if (has_bias) {
    bimpl = bias.impl();
    inputs.push_back(bimpl);
  }
  return detail::make_result(
      {n, out_dim}, std::move(out), std::move(inputs), "linear",
      [xi, wi, bimpl, n, in, out_dim](const TensorImpl& o) {
        if (xi->requires_grad) {
          xi->ensure_grad();
          // dx[N,In] += g[N,Out] * w[Out,In]
          detail::mm_nn_acc(o.grad.data(), wi->values.data(), xi->grad.data(), n, out_dim, in);
        }
        if (wi->requires_grad) {
          wi->ensure_grad();
          // dw[Out,In] += g^T[Out,N] * x[N,In]
          detail::mm_tn_acc(o.grad.data(), xi->values.data(), wi->grad.data(), out_dim, n, in);
        }
        if (bimpl && bimpl->requires_grad) {
          bimpl->ensure_grad();
          for (std::int64_t i = 0; i < n; ++i) {
            const double* row = o.grad.data() + i * out_dim;
            for (std::int64_t ob = 0; ob < out_dim; ++ob) bimpl->grad[static_cast<std::size_t>(ob)] += row[ob];
          }
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: input must be [B,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t b = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (plane == 0) throw ShapeError("global_avg_pool: empty spatial plane");
  const double inv = 1.0 / static_cast<double>(plane);
  const double* xv = x.values().data();
  std::vector<double> out(static_cast<std::size_t>(b * c));
  for (std::int64_t i = 0; i < b * c; ++i) {
    const double* src = xv + i * plane;
    double acc = 0.0;
    for (std::int64_t p = 0; p < plane; ++p) acc += src[p];
    out[static_cast<std::size_t>(i)] = acc * inv;
  }
  auto xi = x.impl();
  return detail::make_result({b, c}, std::move(out), {xi}, "global_avg_pool",
                             [xi, b, c, plane, inv](const TensorImpl& o) {
                               if (!xi->requires_grad) return;
                               xi->ensure_grad();
                               for (std::int64_t i = 0; i < b * c; ++i) {
                                 const double g = o.grad[static_cast<std::size_t>(i)] * inv;
                                 double* dst = xi->grad.data() + i * plane;
                                 for (std::int64_t p = 0; p < plane; ++p) dst[p] += g;
                               }
                             });
}

BatchNormState make_batch_norm_state(std::int64_t channels) {
  BatchNormState s;
  s.running_mean = zeros({channels});
  s.running_var = full({channels}, 1.0);
  return s;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training, bool update_running, double momentum, double eps) {
  if (x.rank() != 4) throw ShapeError("batch_norm: input must be [B,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t b = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  auto check_vec = [c](const char* name, const Tensor& t) {
    if (t.rank() != 1 || t.dim(0) != c) {
      throw ShapeError(std::string("batch_norm: ") + name + " must be [C], got " + shape_str(t.shape()));
    }
  };
  check_vec("gamma", gamma);
  check_vec("beta", beta);
  check_vec("running_mean", state.running_mean);
  check_vec("running_var", state.running_var);
  const std::int64_t count = b * plane;
  if (training && count < 2) throw ValueError("batch_norm: training mode needs at least 2 samples per channel");

  const double* xv = x.values().data();
  const double* gv = gamma.values().data();
  const double* bv = beta.values().data();

  std::vector<double> mean_c(static_cast<std::size_t>(c));
  std::vector<double> var_c(static_cast<std::size_t>(c));
  if (training) {
    const double inv_count = 1.0 / static_cast<double>(count);
    for (std::int64_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (std::int64_t bi = 0; bi < b; ++bi) {
        const double* src = xv + (bi * c + ci) * plane;
        for (std::int64_t p = 0; p < plane; ++p) s += src[p];
      }
      const double m = s * inv_count;
      double v = 0.0;
      for (std::int64_t bi = 0; bi < b; ++bi) {
        const double* src = xv + (bi * c + ci) * plane;
        for (std::int64_t p = 0; p < plane; ++p) {
          const double d = src[p] - m;
          v += d * d;
        }
      }
      mean_c[static_cast<std::size_t>(ci)] = m;
      var_c[static_cast<std::size_t>(ci)] = v * inv_count;
    }
    if (update_running) {
      auto rm = state.running_mean.mutable_values();
      auto rv = state.running_var.mutable_values();
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const auto i = static_cast<std::size_t>(ci);
        rm[i] = (1.0 - momentum) * rm[i] + momentum * mean_c[i];
        rv[i] = (1.0 - momentum) * rv[i] + momentum * var_c[i];
      }
    }
  } else {
    const auto rm = state.running_mean.values();
    const auto rv = state.running_var.values();
    std::copy(rm.begin(), rm.end(), mean_c.begin());
    std::copy(rv.begin(), rv.end(), var_c.begin());
  }

  std::vector<double> invstd_c(static_cast<std::size_t>(c));
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const auto i = static_cast<std::size_t>(ci);
    invstd_c[i] = 1.0 / std::sqrt(var_c[i] + eps);
  }

  auto xhat = std::make_shared<std::vector<double>>(x.values().size());
  std::vector<double> out(x.values().size());
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const auto i = static_cast<std::size_t>(ci);
      const double m = mean_c[i], is = invstd_c[i], ga = gv[i], be = bv[i];
      const double* src = xv + (bi * c + ci) * plane;
      double* xh = xhat->data() + (bi * c + ci) * plane;
      double* dst = out.data() + (bi * c + ci) * plane;
      for (std::int64_t p = 0; p < plane; ++p) {
        const double h = (src[p] - m) * is;
        xh[p] = h;
        dst[p] = ga * h + be;
      }
    }
  }

  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi_ = beta.impl();
  auto invstd = std::make_shared<std::vector<double>>(std::move(invstd_c));
  return detail::make_result(
      x.shape(), std::move(out), {xi, gi, bi_}, "batch_norm",
      [xi, gi, bi_, xhat, invstd, b, c, plane, count, training](const TensorImpl& o) {
        const double* gv = gi->values.data();
        const bool need_x = xi->requires_grad;
        const bool need_g = gi->requires_grad;
        const bool need_b = bi_->requires_grad;
        if (need_x) xi->ensure_grad();
        if (need_g) gi->ensure_grad();
        if (need_b) bi_->ensure_grad();
        const double inv_count = 1.0 / static_cast<double>(count);
        for (std::int64_t ci = 0; ci < c; ++ci) {
          const auto i = static_cast<std::size_t>(ci);
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::int64_t bb = 0; bb < b; ++bb) {
            const double* g = o.grad.data() + (bb * c + ci) * plane;
            const double* xh = xhat->data() + (bb * c + ci) * plane;
            for (std::int64_t p = 0; p < plane; ++p) {
              sum_dy += g[p];
              sum_dy_xhat += g[p] * xh[p];
            }
          }
          if (need_g) gi->grad[i] += sum_dy_xhat;
          if (need_b) bi_->grad[i] += sum_dy;
          if (need_x) {
            const double ga_is = gv[i] * (*invstd)[i];
            if (training) {
              const double mean_dy = sum_dy * inv_count;
              const double mean_dy_xhat = sum_dy_xhat * inv_count;
              for (std::int64_t bb = 0; bb < b; ++bb) {
                const double* g = o.grad.data() + (bb * c + ci) * plane;
                const double* xh = xhat->data() + (bb * c + ci) * plane;
                double* dx = xi->grad.data() + (bb * c + ci) * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                  dx[p] += ga_is * (g[p] - mean_dy - xh[p] * mean_dy_xhat);
                }
              }
            } else {
              for (std::int64_t bb = 0; bb < b; ++bb) {
                const double* g = o.grad.data() + (bb * c + ci) * plane;
                double* dx = xi->grad.data() + (bb * c + ci) * plane;
                for (std::int64_t p = 0; p < plane; ++p) dx[p] += ga_is * g[p];
              }
            }
          }
        }
      });
}

}  // namespace dan
