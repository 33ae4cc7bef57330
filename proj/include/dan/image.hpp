#pragma once

#include <string>

#include "dan/tensor.hpp"

// Minimal image I/O for the data pipeline: 8-bit grayscale / RGB PNG
// (non-interlaced, zlib-compressed) and binary PPM/PGM. Images are CHW
// tensors with values in [0,1]; writers quantize with round(v * 255) and
// readers map byte k to k / 255.0, so quantized images round-trip bit-exactly.

namespace dan {

// Decodes by content (PNG signature) falling back to the PPM/PGM magic.
// Returns [1,H,W] or [3,H,W]. Throws IoError naming the path on any problem.
Tensor read_image(const std::string& path);

// Writers accept [1,H,W] (gray) or [3,H,W] (RGB); values are clamped to
// [0,1] before quantization.
void write_png(const std::string& path, const Tensor& image);
void write_pnm(const std::string& path, const Tensor& image);  // P5 / P6 by channel count

// Bilinear resampling with half-pixel centers and clamp-to-edge.
Tensor resize_bilinear(const Tensor& image, std::int64_t out_h, std::int64_t out_w);

}  // namespace dan
