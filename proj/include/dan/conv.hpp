#pragma once

#include "dan/tensor.hpp"

// 2-D convolution and max pooling on [B, C, H, W] tensors.
//
// conv2d has two forward paths: a direct nested-loop evaluation and an
// im2col + GEMM evaluation. Both accumulate the products for each output
// element over k = (ci, kh, kw) in ascending order and add the bias last, so
// they produce bitwise-identical results; the path switch exists to let tests
// assert exactly that and to keep a slow reference around.

namespace dan {

enum class ConvPath { Direct, Im2col };

ConvPath conv_path();
void set_conv_path(ConvPath p);

// Restores the previous path on destruction.
class ConvPathGuard {
 public:
  explicit ConvPathGuard(ConvPath p) : prev_(conv_path()) { set_conv_path(p); }
  ~ConvPathGuard() { set_conv_path(prev_); }
  ConvPathGuard(const ConvPathGuard&) = delete;
  ConvPathGuard& operator=(const ConvPathGuard&) = delete;

 private:
  ConvPath prev_;
};

// x [B, Cin, H, W], w [Cout, Cin, KH, KW], optional bias [Cout] (pass a
// default-constructed Tensor for none). Zero padding, possibly asymmetric
// (pad_h rows above/below, pad_w columns left/right), equal stride in both
// directions. Output [B, Cout, OH, OW] with OH = (H + 2*pad_h - KH)/stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
              std::int64_t pad_h, std::int64_t pad_w);

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t stride,
                     std::int64_t pad) {
  return conv2d(x, w, bias, stride, pad, pad);
}

// Max pooling with zero-padding excluded from the max (padded cells never
// win). Ties go to the first element in (kh, kw) scan order.
Tensor max_pool2d(const Tensor& x, std::int64_t ksize, std::int64_t stride, std::int64_t pad);

namespace detail {
// C[M,N] += A[M,K] * B[N,K]^T; the inner dot product runs p ascending.
void mm_nt_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n);
}  // namespace detail

}  // namespace dan
