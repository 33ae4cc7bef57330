#include "dan/conv.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dan {

namespace {

thread_local ConvPath g_conv_path = ConvPath::Im2col;

struct ConvDims {
  std::int64_t b, cin, h, w;
  std::int64_t cout, kh, kw;
  std::int64_t oh, ow;
  std::int64_t stride, pad_h, pad_w;
  std::int64_t patch() const { return cin * kh * kw; }
  std::int64_t plane_out() const { return oh * ow; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, std::int64_t stride, std::int64_t pad_h,
                   std::int64_t pad_w) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
  if (w.rank() != 4) throw ShapeError("conv2d: weight must be [Cout,Cin,KH,KW], got " + shape_str(w.shape()));
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (pad_h < 0 || pad_w < 0) throw ValueError("conv2d: padding must be >= 0");
  ConvDims d{};
  d.b = x.dim(0);
  d.cin = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.cout = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad_h = pad_h;
  d.pad_w = pad_w;
  if (w.dim(1) != d.cin) {
    throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, input has " +
                     std::to_string(d.cin));
  }
  if (d.h + 2 * pad_h < d.kh || d.w + 2 * pad_w < d.kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  d.oh = (d.h + 2 * pad_h - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad_w - d.kw) / stride + 1;
  return d;
}

// Fills col[K, OH*OW] for one image, zero where the patch leaves the input.
void im2col(const double* x, const ConvDims& d, double* col) {
  const std::int64_t nsp = d.plane_out();
  for (std::int64_t ci = 0; ci < d.cin; ++ci) {
    const double* plane = x + ci * d.h * d.w;
    for (std::int64_t kh = 0; kh < d.kh; ++kh) {
      for (std::int64_t kw = 0; kw < d.kw; ++kw) {
        double* row = col + ((ci * d.kh + kh) * d.kw + kw) * nsp;
        for (std::int64_t oh = 0; oh < d.oh; ++oh) {
          const std::int64_t ih = oh * d.stride - d.pad_h + kh;
          double* dst = row + oh * d.ow;
          if (ih < 0 || ih >= d.h) {
            std::fill(dst, dst + d.ow, 0.0);
            continue;
          }
          const double* src = plane + ih * d.w;
          for (std::int64_t ow = 0; ow < d.ow; ++ow) {
            const std::int64_t iw = ow * d.stride - d.pad_w + kw;
            dst[ow] = (iw >= 0 && iw < d.w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

// Scatters dcol[K, OH*OW] back into dx for one image (additive).
void col2im_acc(const double* dcol, const ConvDims& d, double* dx) {
  const std::int64_t nsp = d.plane_out();
  for (std::int64_t ci = 0; ci < d.cin; ++ci) {
    double* plane = dx + ci * d.h * d.w;
    for (std::int64_t kh = 0; kh < d.kh; ++kh) {
      for (std::int64_t kw = 0; kw < d.kw; ++kw) {
        const double* row = dcol + ((ci * d.kh + kh) * d.kw + kw) * nsp;
        for (std::int64_t oh = 0; oh < d.oh; ++oh) {
          const std::int64_t ih = oh * d.stride - d.pad_h + kh;
          if (ih < 0 || ih >= d.h) continue;
          double* dst = plane + ih * d.w;
          const double* src = row + oh * d.ow;
          for (std::int64_t ow = 0; ow < d.ow; ++ow) {
            const std::int64_t iw = ow * d.stride - d.pad_w + kw;
            if (iw >= 0 && iw < d.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void forward_direct(const double* x, const double* w, const double* bias, const ConvDims& d,
                    double* out) {
  for (std::int64_t co = 0; co < d.cout; ++co) {
    const double* wk = w + co * d.patch();
    for (std::int64_t oh = 0; oh < d.oh; ++oh) {
      for (std::int64_t ow = 0; ow < d.ow; ++ow) {
        double acc = 0.0;
        std::int64_t k = 0;
        for (std::int64_t ci = 0; ci < d.cin; ++ci) {
          const double* plane = x + ci * d.h * d.w;
          for (std::int64_t kh = 0; kh < d.kh; ++kh) {
            const std::int64_t ih = oh * d.stride - d.pad_h + kh;
            for (std::int64_t kw = 0; kw < d.kw; ++kw, ++k) {
              const std::int64_t iw = ow * d.stride - d.pad_w + kw;
              if (ih >= 0 && ih < d.h && iw >= 0 && iw < d.w) {
                acc += wk[k] * plane[ih * d.w + iw];
              }
            }
          }
        }
        if (bias) acc += bias[co];
        out[(co * d.oh + oh) * d.ow + ow] = acc;
      }
    }
  }
}

}  // namespace

ConvPath conv_path() { return g_conv_path; }
void set_conv_path(ConvPath p) { g_conv_path = p; }

namespace detail {

void mm_nt_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

}  // namespace detail

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
              std::int64_t pad_h, std::int64_t pad_w) {
  const ConvDims d = conv_dims(x, w, stride, pad_h, pad_w);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != d.cout)) {
    throw ShapeError("conv2d: bias must be [Cout], got " + shape_str(bias.shape()));
  }

  const std::int64_t nsp = d.plane_out();
  const std::int64_t in_plane = d.cin * d.h * d.w;
  const std::int64_t out_plane = d.cout * nsp;
  std::vector<double> out(static_cast<std::size_t>(d.b * out_plane));
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  const double* bv = has_bias ? bias.values().data() : nullptr;

  if (g_conv_path == ConvPath::Direct) {
    for (std::int64_t bi = 0; bi < d.b; ++bi) {
      forward_direct(xv + bi * in_plane, wv, bv, d, out.data() + bi * out_plane);
    }
  } else {
    std::vector<double> col(static_cast<std::size_t>(d.patch() * nsp));
    for (std::int64_t bi = 0; bi < d.b; ++bi) {
      im2col(xv + bi * in_plane, d, col.data());
      double* o = out.data() + bi * out_plane;
      std::fill(o, o + out_plane, 0.0);
      dan::detail::mm_nn_acc(wv, col.data(), o, d.cout, d.patch(), nsp);
      if (bv) {
        for (std::int64_t co = 0; co < d.cout; ++co) {
          double* row = o + co * nsp;
          const double bval = bv[co];
          for (std::int64_t p = 0; p < nsp; ++p) row[p] += bval;
        }
      }
    }
  }

  auto xi = x.impl(), wi = w.impl();
  std::vector<std::shared_ptr<TensorImpl>> inputs{xi, wi};
  std::shared_ptr<TensorImpl> bimpl;
  if (has_bias) {
    bimpl = bias.impl();
    inputs.push_back(bimpl);
  }
  return dan::detail::make_result(
      {d.b, d.cout, d.oh, d.ow}, std::move(out), std::move(inputs), "conv2d",
      [xi, wi, bimpl, d, nsp, in_plane, out_plane](const TensorImpl& o) {
        const bool need_x = xi->requires_grad;
        const bool need_w = wi->requires_grad;
        const bool need_b = bimpl && bimpl->requires_grad;
        if (need_x) xi->ensure_grad();
        if (need_w) wi->ensure_grad();
        if (need_b) bimpl->ensure_grad();

        std::vector<double> col;
        std::vector<double> dcol;
        if (need_w) col.resize(static_cast<std::size_t>(d.patch() * nsp));
        if (need_x) dcol.resize(static_cast<std::size_t>(d.patch() * nsp));

        for (std::int64_t bi = 0; bi < d.b; ++bi) {
          const double* g = o.grad.data() + bi * out_plane;
          if (need_w) {
            im2col(xi->values.data() + bi * in_plane, d, col.data());
            dan::detail::mm_nt_acc(g, col.data(), wi->grad.data(), d.cout, nsp, d.patch());
          }
          if (need_x) {
            std::fill(dcol.begin(), dcol.end(), 0.0);
            dan::detail::mm_tn_acc(wi->values.data(), g, dcol.data(), d.patch(), d.cout, nsp);
            col2im_acc(dcol.data(), d, xi->grad.data() + bi * in_plane);
          }
          if (need_b) {
            for (std::int64_t co = 0; co < d.cout; ++co) {
              const double* row = g + co * nsp;
              double acc = 0.0;
              for (std::int64_t p = 0; p < nsp; ++p) acc += row[p];
              bimpl->grad[static_cast<std::size_t>(co)] += acc;
            }
          }
        }
      });
}

Tensor max_pool2d(const Tensor& x, std::int64_t ksize, std::int64_t stride, std::int64_t pad) {
  if (x.rank() != 4) throw ShapeError("max_pool2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
  if (ksize < 1 || stride < 1 || pad < 0) throw ValueError("max_pool2d: bad ksize/stride/pad");
  if (pad >= ksize) throw ValueError("max_pool2d: pad must be < ksize so every window sees data");
  const std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h + 2 * pad < ksize || w + 2 * pad < ksize) throw ShapeError("max_pool2d: window larger than padded input");
  const std::int64_t oh = (h + 2 * pad - ksize) / stride + 1;
  const std::int64_t ow = (w + 2 * pad - ksize) / stride + 1;

  const double* xv = x.values().data();
  std::vector<double> out(static_cast<std::size_t>(b * c * oh * ow));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  std::size_t oi = 0;
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const double* plane = xv + (bi * c + ci) * h * w;
      const std::int64_t plane_off = (bi * c + ci) * h * w;
      for (std::int64_t ohc = 0; ohc < oh; ++ohc) {
        for (std::int64_t owc = 0; owc < ow; ++owc, ++oi) {
          double best = -HUGE_VAL;
          std::int64_t best_idx = -1;
          for (std::int64_t kh = 0; kh < ksize; ++kh) {
            const std::int64_t ih = ohc * stride - pad + kh;
            if (ih < 0 || ih >= h) continue;
            for (std::int64_t kw = 0; kw < ksize; ++kw) {
              const std::int64_t iw = owc * stride - pad + kw;
              if (iw < 0 || iw >= w) continue;
              const double v = plane[ih * w + iw];
              if (v > best) {
                best = v;
                best_idx = plane_off + ih * w + iw;
              }
            }
          }
          out[oi] = best;
          (*argmax)[oi] = best_idx;
        }
      }
    }
  }

  auto xi = x.impl();
  return dan::detail::make_result({b, c, oh, ow}, std::move(out), {xi}, "max_pool2d",
                                  [xi, argmax](const TensorImpl& o) {
                                    if (!xi->requires_grad) return;
                                    xi->ensure_grad();
                                    for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                      xi->grad[static_cast<std::size_t>((*argmax)[i])] += o.grad[i];
                                    }
                                  });
}

}  // namespace dan
