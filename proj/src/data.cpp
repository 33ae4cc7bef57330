#include "dan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "dan/error.hpp"
#include "dan/image.hpp"

namespace dan {
namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

Tensor to_three_channels(const Tensor& image) {
  if (image.dim(0) == 3)
    return from_values(image.shape(),
                       std::vector<double>(image.values().begin(), image.values().end()));
  const std::int64_t h = image.dim(1), w = image.dim(2);
  std::vector<double> pix(static_cast<std::size_t>(3 * h * w));
  for (int c = 0; c < 3; ++c)
    std::copy(image.values().begin(), image.values().end(),
              pix.begin() + static_cast<std::ptrdiff_t>(c * h * w));
  return from_values({3, h, w}, std::move(pix));
}

double quantize(double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

// One synthetic image of `size` x `size`; the class picks the pattern family
// and its fixed parameters, the per-sample rng adds bounded jitter.
Tensor synth_image(std::int64_t cls, std::int64_t size, Rng& rng, double noise) {
  const std::int64_t family = cls % 4;
  const double variant = static_cast<double>(cls / 4);
  const double pi = std::numbers::pi;

  // Bounded per-sample jitter, small enough that class centroids keep their
  // structure (nearest-centroid separability is part of the contract).
  const double j1 = rng.uniform() * 2.0 - 1.0;
  const double j2 = rng.uniform() * 2.0 - 1.0;
  const double j3 = rng.uniform() * 2.0 - 1.0;

  // Each class confines its pattern to one quadrant via a smooth window over
  // a neutral background, so the informative pixels for different classes
  // live in different regions of the image (as with parts of a face).
  const int region = static_cast<int>(cls % 4);
  const double wu = ((region & 1) ? 0.72 : 0.28) + 0.03 * j2;
  const double wv = ((region & 2) ? 0.72 : 0.28) + 0.03 * j3;

  auto pattern = [&](double u, double v) -> double {
    switch (family) {
      case 0: {  // oriented grating
        const double theta = (25.0 + 40.0 * variant) * pi / 180.0;
        const double freq = 3.0 + variant;
        const double phase = 0.4 * j1;
        const double t = u * std::cos(theta) + v * std::sin(theta);
        return 0.5 + 0.35 * std::sin(2.0 * pi * freq * t + phase);
      }
      case 1: {  // concentric rings
        const double freq = 2.5 + variant;
        const double cu = 0.5 + 0.06 * j1, cv = 0.5 + 0.06 * j2;
        const double r = std::hypot(u - cu, v - cv);
        return 0.5 + 0.35 * std::cos(2.0 * pi * freq * r);
      }
      case 2: {  // blob centered in the class region
        const double sigma = 0.16 + 0.02 * variant + 0.02 * j1;
        const double du = u - wu, dv = v - wv;
        return 0.15 + 0.75 * std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
      }
      default: {  // checkerboard
        const double cells = 3.0 + variant;
        const double du = 0.15 * j1 / cells, dv = 0.15 * j2 / cells;
        const auto cell = static_cast<std::int64_t>(std::floor((u + du) * cells)) +
                          static_cast<std::int64_t>(std::floor((v + dv) * cells));
        return ((cell % 2 + 2) % 2 == 0) ? 0.25 : 0.75;
      }
    }
  };

  // Fixed per-(class, channel) tint keeps all channels informative.
  double tint[3];
  for (int ch = 0; ch < 3; ++ch) {
    const std::uint64_t h = (static_cast<std::uint64_t>(cls) * 3 + static_cast<std::uint64_t>(ch) + 1) *
                            0x9e3779b97f4a7c15ULL;
    tint[ch] = 0.7 + 0.3 * static_cast<double>((h >> 40) & 0xff) / 255.0;
  }

  std::vector<double> pix(static_cast<std::size_t>(3 * size * size));
  for (std::int64_t y = 0; y < size; ++y)
    for (std::int64_t x = 0; x < size; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(size);
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(size);
      const double p = pattern(u, v);
      const double du = u - wu, dv = v - wv;
      const double win = std::exp(-(du * du + dv * dv) / (2.0 * 0.16 * 0.16));
      for (int ch = 0; ch < 3; ++ch) {
        // Outside the window every class looks like the same mid gray, so
        // the class signal (tinted pattern) is spatially localized.
        double val = 0.5 + win * (p * tint[ch] - 0.5);
        if (noise > 0.0) val += noise * (2.0 * rng.uniform() - 1.0);
        pix[static_cast<std::size_t>((ch * size + y) * size + x)] = quantize(val);
      }
    }
  return from_values({3, size, size}, std::move(pix));
}

void check_classes_covered(const Dataset& ds) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(ds.num_classes), 0);
  for (const Sample& s : ds.samples) ++counts[static_cast<std::size_t>(s.label)];
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0)
      throw ValueError("dataset: class " + std::to_string(c) + " has no samples");
}

}  // namespace

Dataset load_dataset(const std::string& root, const std::string& manifest_file,
                     std::int64_t target_size, std::int64_t num_classes) {
  if (target_size < 1) throw ValueError("load_dataset: target_size must be >= 1");
  const std::string manifest_path = (fs::path(root) / manifest_file).string();
  std::ifstream in(manifest_path);
  if (!in) throw IoError(manifest_path + ": cannot open manifest");

  std::string line;
  if (!std::getline(in, line)) throw IoError(manifest_path + ": empty manifest");
  {
    std::string header = trim(line);
    if (header != "path,label")
      throw IoError(manifest_path + ": expected header 'path,label', got '" + header + "'");
  }

  Dataset ds;
  std::unordered_set<std::string> seen;
  int max_label = -1;
  std::int64_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto comma = t.find_last_of(',');
    if (comma == std::string::npos)
      throw IoError(manifest_path + " row " + std::to_string(row) + ": expected 'path,label'");
    const std::string rel = trim(t.substr(0, comma));
    const std::string label_str = trim(t.substr(comma + 1));
    if (rel.empty())
      throw IoError(manifest_path + " row " + std::to_string(row) + ": empty path");
    int label = 0;
    try {
      std::size_t used = 0;
      label = std::stoi(label_str, &used);
      if (used != label_str.size()) throw std::invalid_argument(label_str);
    } catch (const std::exception&) {
      throw IoError(manifest_path + " row " + std::to_string(row) + ": bad label '" + label_str +
                    "'");
    }
    if (label < 0 || (num_classes > 0 && label >= num_classes))
      throw IoError(manifest_path + " row " + std::to_string(row) + ": label " +
                    std::to_string(label) + " outside [0, " +
                    std::to_string(num_classes > 0 ? num_classes : 0) + ")");
    if (!seen.insert(rel).second)
      throw IoError(manifest_path + " row " + std::to_string(row) + ": duplicate path '" + rel +
                    "'");

    const std::string img_path = (fs::path(root) / rel).string();
    Tensor image = to_three_channels(read_image(img_path));
    if (image.dim(1) != target_size || image.dim(2) != target_size)
      image = resize_bilinear(image, target_size, target_size);
    ds.samples.push_back(Sample{image, label, rel});
    max_label = std::max(max_label, label);
  }
  if (ds.samples.empty()) throw IoError(manifest_path + ": manifest lists no samples");
  ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  if (ds.num_classes < 2)
    throw ValueError("load_dataset: need at least 2 classes, got " +
                     std::to_string(ds.num_classes));
  check_classes_covered(ds);
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& dir) {
  if (dataset.samples.empty()) throw ValueError("save_dataset: empty dataset");
  const fs::path base(dir);
  std::error_code ec;
  fs::create_directories(base / "images", ec);
  if (ec) throw IoError(dir + ": cannot create directory (" + ec.message() + ")");

  std::ostringstream manifest;
  manifest << "path,label\n";
  std::int64_t i = 0;
  for (const Sample& s : dataset.samples) {
    std::string name = s.id.empty() ? ("sample" + std::to_string(i)) : s.id;
    for (char& ch : name)
      if (ch == '/' || ch == '\\' || ch == ',' || ch == ' ') ch = '_';
    const std::string rel = "images/" + name + ".png";
    write_png((base / rel).string(), s.image);
    manifest << rel << "," << s.label << "\n";
    ++i;
  }
  std::ofstream out(base / "manifest.csv", std::ios::trunc);
  if (!out) throw IoError((base / "manifest.csv").string() + ": cannot open for writing");
  out << manifest.str();
  if (!out.good()) throw IoError((base / "manifest.csv").string() + ": write failed");
}

Dataset synth_dataset(std::int64_t classes, std::int64_t per_class, std::int64_t size,
                      std::uint64_t seed, double noise) {
  if (classes < 2) throw ValueError("synth_dataset: need >= 2 classes");
  if (per_class < 1) throw ValueError("synth_dataset: need >= 1 sample per class");
  if (size < 8) throw ValueError("synth_dataset: size must be >= 8");
  if (!(noise >= 0.0) || noise > 1.0) throw ValueError("synth_dataset: noise must be in [0, 1]");

  Dataset ds;
  ds.num_classes = classes;
  ds.samples.reserve(static_cast<std::size_t>(classes * per_class));
  for (std::int64_t c = 0; c < classes; ++c)
    for (std::int64_t s = 0; s < per_class; ++s) {
      // A private stream per sample: generation order never matters.
      Rng rng(Rng::derive(seed, 0x73796e74680000ULL + static_cast<std::uint64_t>(c) * 1000003ULL +
                                    static_cast<std::uint64_t>(s)));
      char id[64];
      std::snprintf(id, sizeof id, "c%02lld_s%04lld", static_cast<long long>(c),
                    static_cast<long long>(s));
      ds.samples.push_back(Sample{synth_image(c, size, rng, noise), static_cast<int>(c), id});
    }
  return ds;
}

std::vector<double> channel_means(const Dataset& dataset) {
  if (dataset.samples.empty()) throw ValueError("channel_means: empty dataset");
  std::vector<double> mean(3, 0.0);
  std::int64_t count = 0;
  for (const Sample& s : dataset.samples) {
    const std::int64_t plane = s.image.dim(1) * s.image.dim(2);
    auto v = s.image.values();
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < plane; ++i)
        acc += v[static_cast<std::size_t>(c * plane + i)];
      mean[static_cast<std::size_t>(c)] += acc / static_cast<double>(plane);
    }
    ++count;
  }
  for (double& m : mean) m /= static_cast<double>(count);
  return mean;
}

void AugmentConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0))
      throw ConfigError(std::string("augment: ") + name + " must be in [0, 1]");
  };
  prob(flip_prob, "flip_prob");
  prob(rotate_prob, "rotate_prob");
  prob(erase_prob, "erase_prob");
  if (!(rotate_max_deg >= 0.0) || !std::isfinite(rotate_max_deg))
    throw ConfigError("augment: rotate_max_deg must be finite and >= 0");
  if (!(erase_min_area >= 0.0 && erase_min_area <= erase_max_area && erase_max_area <= 1.0))
    throw ConfigError("augment: need 0 <= erase_min_area <= erase_max_area <= 1");
}

Sample augment(const Sample& sample, Rng& rng, const AugmentConfig& cfg,
               const std::vector<double>& fill) {
  cfg.validate();
  if (sample.image.rank() != 3)
    throw ShapeError("augment: image must be [C,H,W], got " + shape_str(sample.image.shape()));
  if (fill.size() != static_cast<std::size_t>(sample.image.dim(0)))
    throw ValueError("augment: fill needs one value per channel");
  const std::int64_t C = sample.image.dim(0), H = sample.image.dim(1), W = sample.image.dim(2);

  std::vector<double> pix(sample.image.values().begin(), sample.image.values().end());
  auto at = [&](std::vector<double>& buf, std::int64_t c, std::int64_t y,
                std::int64_t x) -> double& {
    return buf[static_cast<std::size_t>((c * H + y) * W + x)];
  };

  if (rng.uniform() < cfg.flip_prob) {
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W / 2; ++x)
          std::swap(at(pix, c, y, x), at(pix, c, y, W - 1 - x));
  }

  if (rng.uniform() < cfg.rotate_prob) {
    const double deg = cfg.rotate_max_deg * (2.0 * rng.uniform() - 1.0);
    const double rad = deg * std::numbers::pi / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (static_cast<double>(H) - 1.0) / 2.0;
    const double cx = (static_cast<double>(W) - 1.0) / 2.0;
    std::vector<double> rotated(pix.size());
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        // Inverse map: rotate the destination coordinate back into the source.
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        const double sy = std::clamp(cs * dy - sn * dx + cy, 0.0, static_cast<double>(H - 1));
        const double sx = std::clamp(sn * dy + cs * dx + cx, 0.0, static_cast<double>(W - 1));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
        const std::int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
        const double wy = sy - static_cast<double>(y0), wx = sx - static_cast<double>(x0);
        for (std::int64_t c = 0; c < C; ++c) {
          const double top = at(pix, c, y0, x0) * (1.0 - wx) + at(pix, c, y0, x1) * wx;
          const double bot = at(pix, c, y1, x0) * (1.0 - wx) + at(pix, c, y1, x1) * wx;
          rotated[static_cast<std::size_t>((c * H + y) * W + x)] = top * (1.0 - wy) + bot * wy;
        }
      }
    pix = std::move(rotated);
  }

  if (rng.uniform() < cfg.erase_prob) {
    const double area = cfg.erase_min_area + (cfg.erase_max_area - cfg.erase_min_area) * rng.uniform();
    const double aspect = std::exp(std::log(0.5) + (std::log(2.0) - std::log(0.5)) * rng.uniform());
    const double target = area * static_cast<double>(H * W);
    std::int64_t eh = std::clamp<std::int64_t>(
        static_cast<std::int64_t>(std::lround(std::sqrt(target / aspect))), 1, H);
    std::int64_t ew = std::clamp<std::int64_t>(
        static_cast<std::int64_t>(std::lround(std::sqrt(target * aspect))), 1, W);
    const std::int64_t y0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(H - eh + 1)));
    const std::int64_t x0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(W - ew + 1)));
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t y = y0; y < y0 + eh; ++y)
        for (std::int64_t x = x0; x < x0 + ew; ++x)
          at(pix, c, y, x) = fill[static_cast<std::size_t>(c)];
  }

  return Sample{from_values(sample.image.shape(), std::move(pix)), sample.label, sample.id};
}

std::vector<std::int64_t> balanced_sampler(const Dataset& dataset, std::int64_t epoch_size,
                                           std::uint64_t seed) {
  if (dataset.samples.empty()) throw ValueError("balanced_sampler: empty dataset");
  if (dataset.num_classes < 1) throw ValueError("balanced_sampler: dataset has no label space");
  if (epoch_size < 1) throw ValueError("balanced_sampler: epoch_size must be >= 1");
  const std::int64_t Y = dataset.num_classes;

  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(Y));
  for (std::int64_t i = 0; i < dataset.size(); ++i) {
    const int label = dataset.samples[static_cast<std::size_t>(i)].label;
    if (label < 0 || label >= Y)
      throw ValueError("balanced_sampler: sample " + std::to_string(i) + " has label " +
                       std::to_string(label) + " outside [0, " + std::to_string(Y) + ")");
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }
  for (std::int64_t c = 0; c < Y; ++c)
    if (by_class[static_cast<std::size_t>(c)].empty())
      throw ValueError("balanced_sampler: class " + std::to_string(c) + " has no samples");

  Rng rng(Rng::derive(seed, 0x62616c616e636572ULL));
  auto shuffle = [&rng](std::vector<std::int64_t>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  };

  // Quotas: floor(E/Y) each, remainder distributed to seeded-random classes.
  std::vector<std::int64_t> quota(static_cast<std::size_t>(Y), epoch_size / Y);
  std::vector<std::int64_t> order(static_cast<std::size_t>(Y));
  for (std::int64_t c = 0; c < Y; ++c) order[static_cast<std::size_t>(c)] = c;
  shuffle(order);
  for (std::int64_t r = 0; r < epoch_size % Y; ++r)
    ++quota[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];

  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(epoch_size));
  for (std::int64_t c = 0; c < Y; ++c) {
    std::vector<std::int64_t>& pool = by_class[static_cast<std::size_t>(c)];
    std::int64_t need = quota[static_cast<std::size_t>(c)];
    while (need > 0) {  // whole passes without replacement, repeating as needed
      shuffle(pool);
      const std::int64_t take = std::min<std::int64_t>(need, static_cast<std::int64_t>(pool.size()));
      out.insert(out.end(), pool.begin(), pool.begin() + take);
      need -= take;
    }
  }
  shuffle(out);
  return out;
}

}  // namespace dan
