#include "dan/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "dan/error.hpp"

namespace dan {
namespace {

constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

[[noreturn]] void io_fail(const std::string& path, const std::string& why) {
  throw IoError(path + ": " + why);
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail(path, "cannot open for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof()) io_fail(path, "read failed");
  return bytes;
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) io_fail(path, "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out.good()) io_fail(path, "write failed");
}

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void push_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

Tensor bytes_to_tensor(const std::vector<unsigned char>& interleaved, std::int64_t c,
                       std::int64_t h, std::int64_t w) {
  std::vector<double> pix(static_cast<std::size_t>(c * h * w));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t ch = 0; ch < c; ++ch)
        pix[static_cast<std::size_t>((ch * h + y) * w + x)] =
            static_cast<double>(interleaved[static_cast<std::size_t>((y * w + x) * c + ch)]) /
            255.0;
  return from_values({c, h, w}, std::move(pix));
}

std::vector<unsigned char> tensor_to_bytes(const Tensor& image) {
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<unsigned char> interleaved(static_cast<std::size_t>(c * h * w));
  auto v = image.values();
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double p = v[static_cast<std::size_t>((ch * h + y) * w + x)];
        p = std::clamp(p, 0.0, 1.0);
        interleaved[static_cast<std::size_t>((y * w + x) * c + ch)] =
            static_cast<unsigned char>(std::lround(p * 255.0));
      }
  return interleaved;
}

void check_image_arg(const Tensor& image, const std::string& path) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw ShapeError("write image '" + path + "': expected [1,H,W] or [3,H,W], got " +
                     shape_str(image.shape()));
}

// ---------------------------------------------------------------------------
// PNG

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

Tensor decode_png(const std::string& path, const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 8 + 25) io_fail(path, "truncated PNG");
  std::size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  std::int64_t width = 0, height = 0, channels = 0;
  std::vector<unsigned char> idat;
  while (pos + 12 <= bytes.size() && !saw_iend) {
    const std::uint32_t len = be32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) io_fail(path, "truncated PNG chunk");
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const unsigned char* data = &bytes[pos + 8];
    const std::uint32_t want_crc = be32(&bytes[pos + 8 + len]);
    const std::uint32_t got_crc = static_cast<std::uint32_t>(
        crc32(crc32(0L, &bytes[pos + 4], 4), data, static_cast<uInt>(len)));
    if (want_crc != got_crc) io_fail(path, "PNG chunk CRC mismatch");

    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) io_fail(path, "bad IHDR length");
      width = be32(data);
      height = be32(data + 4);
      const int bit_depth = data[8], color_type = data[9];
      const int compression = data[10], filter = data[11], interlace = data[12];
      if (width <= 0 || height <= 0) io_fail(path, "bad PNG dimensions");
      if (bit_depth != 8) io_fail(path, "unsupported PNG bit depth (only 8)");
      if (color_type == 0)
        channels = 1;
      else if (color_type == 2)
        channels = 3;
      else
        io_fail(path, "unsupported PNG color type (only 8-bit gray or RGB)");
      if (compression != 0 || filter != 0) io_fail(path, "nonstandard PNG compression/filter");
      if (interlace != 0) io_fail(path, "interlaced PNG not supported");
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      if (!saw_ihdr) io_fail(path, "IDAT before IHDR");
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
    }  // ancillary chunks are skipped
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend) io_fail(path, "missing PNG IHDR/IEND");
  if (idat.empty()) io_fail(path, "PNG has no IDAT data");

  const std::int64_t stride = width * channels;
  std::vector<unsigned char> raw(static_cast<std::size_t>(height * (1 + stride)));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  const int zrc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || raw_len != raw.size()) io_fail(path, "PNG inflate failed");

  // Undo per-scanline filtering in place into `flat`.
  std::vector<unsigned char> flat(static_cast<std::size_t>(height * stride));
  const int bpp = static_cast<int>(channels);
  for (std::int64_t y = 0; y < height; ++y) {
    const unsigned char ftype = raw[static_cast<std::size_t>(y * (1 + stride))];
    const unsigned char* src = &raw[static_cast<std::size_t>(y * (1 + stride) + 1)];
    unsigned char* dst = &flat[static_cast<std::size_t>(y * stride)];
    const unsigned char* up = y > 0 ? &flat[static_cast<std::size_t>((y - 1) * stride)] : nullptr;
    for (std::int64_t i = 0; i < stride; ++i) {
      const int a = i >= bpp ? dst[i - bpp] : 0;           // left
      const int b = up ? up[i] : 0;                        // above
      const int c = (up && i >= bpp) ? up[i - bpp] : 0;    // upper-left
      int v = src[i];
      switch (ftype) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: io_fail(path, "unknown PNG filter type");
      }
      dst[i] = static_cast<unsigned char>(v & 0xff);
    }
  }
  return bytes_to_tensor(flat, channels, height, width);
}

void push_chunk(std::vector<unsigned char>& out, const char type[4],
                const std::vector<unsigned char>& data) {
  push_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, &out[type_at], static_cast<uInt>(4 + data.size())));
  push_be32(out, crc);
}

std::vector<unsigned char> encode_png(const std::string& path, const Tensor& image) {
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<unsigned char> interleaved = tensor_to_bytes(image);

  std::vector<unsigned char> out(kPngSig, kPngSig + 8);
  std::vector<unsigned char> ihdr;
  push_be32(ihdr, static_cast<std::uint32_t>(w));
  push_be32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);                                      // bit depth
  ihdr.push_back(c == 1 ? 0 : 2);                         // color type
  ihdr.push_back(0);                                      // compression
  ihdr.push_back(0);                                      // filter method
  ihdr.push_back(0);                                      // no interlace
  push_chunk(out, "IHDR", ihdr);

  const std::int64_t stride = w * c;
  std::vector<unsigned char> raw(static_cast<std::size_t>(h * (1 + stride)));
  for (std::int64_t y = 0; y < h; ++y) {
    raw[static_cast<std::size_t>(y * (1 + stride))] = 0;  // filter type "none"
    std::memcpy(&raw[static_cast<std::size_t>(y * (1 + stride) + 1)],
                &interleaved[static_cast<std::size_t>(y * stride)],
                static_cast<std::size_t>(stride));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> deflated(bound);
  if (compress2(deflated.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK)
    io_fail(path, "PNG deflate failed");
  deflated.resize(bound);
  push_chunk(out, "IDAT", deflated);
  push_chunk(out, "IEND", {});
  return out;
}

// ---------------------------------------------------------------------------
// PPM / PGM (binary, maxval 255)

// Reads the next header token, skipping whitespace and '#' comments.
std::string pnm_token(const std::vector<unsigned char>& bytes, std::size_t& pos,
                      const std::string& path) {
  while (pos < bytes.size()) {
    if (std::isspace(bytes[pos])) {
      ++pos;
    } else if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#')
    tok.push_back(static_cast<char>(bytes[pos++]));
  if (tok.empty()) io_fail(path, "truncated PNM header");
  return tok;
}

std::int64_t pnm_int(const std::vector<unsigned char>& bytes, std::size_t& pos,
                     const std::string& path) {
  const std::string tok = pnm_token(bytes, pos, path);
  try {
    return std::stoll(tok);
  } catch (const std::exception&) {
    io_fail(path, "bad PNM header integer '" + tok + "'");
  }
}

Tensor decode_pnm(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::size_t pos = 0;
  const std::string magic = pnm_token(bytes, pos, path);
  std::int64_t channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    io_fail(path, "unsupported PNM magic '" + magic + "' (only binary P5/P6)");
  const std::int64_t w = pnm_int(bytes, pos, path);
  const std::int64_t h = pnm_int(bytes, pos, path);
  const std::int64_t maxval = pnm_int(bytes, pos, path);
  if (w <= 0 || h <= 0) io_fail(path, "bad PNM dimensions");
  if (maxval != 255) io_fail(path, "unsupported PNM maxval (only 255)");
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(channels * h * w);
  if (bytes.size() < pos + need) io_fail(path, "truncated PNM pixel data");
  std::vector<unsigned char> interleaved(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return bytes_to_tensor(interleaved, channels, h, w);
}

}  // namespace

Tensor read_image(const std::string& path) {
  const std::vector<unsigned char> bytes = read_file(path);
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0)
    return decode_png(path, bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'))
    return decode_pnm(path, bytes);
  io_fail(path, "unrecognized image format (expected PNG or binary PPM/PGM)");
}

void write_png(const std::string& path, const Tensor& image) {
  check_image_arg(image, path);
  write_file(path, encode_png(path, image));
}

void write_pnm(const std::string& path, const Tensor& image) {
  check_image_arg(image, path);
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::string header = std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(w) + " " +
                       std::to_string(h) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  std::vector<unsigned char> interleaved = tensor_to_bytes(image);
  out.insert(out.end(), interleaved.begin(), interleaved.end());
  write_file(path, out);
}

Tensor resize_bilinear(const Tensor& image, std::int64_t out_h, std::int64_t out_w) {
  if (image.rank() != 3)
    throw ShapeError("resize_bilinear: expected [C,H,W], got " + shape_str(image.shape()));
  if (out_h < 1 || out_w < 1) throw ValueError("resize_bilinear: output size must be positive");
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w)
    return from_values({c, h, w}, std::vector<double>(image.values().begin(), image.values().end()));
  auto src = image.values();
  std::vector<double> out(static_cast<std::size_t>(c * out_h * out_w));
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < out_h; ++y) {
      const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                   static_cast<double>(h - 1));
      const std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
      const std::int64_t y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::int64_t x = 0; x < out_w; ++x) {
        const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                     static_cast<double>(w - 1));
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
        const std::int64_t x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - static_cast<double>(x0);
        auto at = [&](std::int64_t yy, std::int64_t xx) {
          return src[static_cast<std::size_t>((ch * h + yy) * w + xx)];
        };
        const double top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
        const double bot = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
        out[static_cast<std::size_t>((ch * out_h + y) * out_w + x)] =
            top * (1.0 - wy) + bot * wy;
      }
    }
  return from_values({c, out_h, out_w}, std::move(out));
}

}  // namespace dan
