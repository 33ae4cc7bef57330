#pragma once

#include <string>
#include <vector>

#include "dan/rng.hpp"
#include "dan/tensor.hpp"

// Dataset ingestion (image folder + CSV manifest), a deterministic synthetic
// pattern generator for desk-scale runs, augmentation, and class-balanced
// sampling.

namespace dan {

struct Sample {
  Tensor image;  // [3, H, W], values in [0, 1]
  int label = 0;
  std::string id;
};

struct Dataset {
  std::vector<Sample> samples;
  std::int64_t num_classes = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
};

// Loads `root`/`manifest_file`, a CSV with header `path,label` whose paths are
// relative to `root`. Images are decoded (PNG or PPM/PGM), expanded to three
// channels if grayscale, and resized to `target_size` square. `num_classes`
// fixes the label space; 0 infers it as max label + 1. Duplicate paths,
// unreadable files, out-of-range labels and empty classes are errors naming
// the offending path or row.
Dataset load_dataset(const std::string& root, const std::string& manifest_file,
                     std::int64_t target_size, std::int64_t num_classes = 0);

// Writes `dataset` under `dir` as PNG files plus `manifest.csv` in the layout
// load_dataset reads back. Pixel values are assumed already quantized to
// k/255; the round trip is then bit-exact.
void save_dataset(const Dataset& dataset, const std::string& dir);

// Deterministic synthetic dataset: each class is a distinct parametric
// pattern family (oriented gratings, rings, corner blobs, checkerboards) with
// bounded per-sample jitter plus `noise` uniform pixel noise. Pixels are
// quantized to k/255. Identical arguments give bitwise-identical datasets.
Dataset synth_dataset(std::int64_t classes, std::int64_t per_class, std::int64_t size,
                      std::uint64_t seed, double noise = 0.05);

// Per-channel mean over every pixel of the dataset (the erase fill color).
std::vector<double> channel_means(const Dataset& dataset);

struct AugmentConfig {
  double flip_prob = 0.5;
  double rotate_prob = 0.5;
  double rotate_max_deg = 10.0;  // rotation angle drawn uniformly in +-this
  double erase_prob = 0.5;
  double erase_min_area = 0.02;  // fraction of image area
  double erase_max_area = 0.25;
  void validate() const;
};

// Applies, in order: horizontal flip, rotation (inverse-mapped bilinear with
// clamp-to-edge fill), rectangle erase filled with `fill` (one value per
// channel). Shape and label are never changed.
Sample augment(const Sample& sample, Rng& rng, const AugmentConfig& cfg,
               const std::vector<double>& fill);

// Stratified class-balanced index sequence: every class contributes exactly
// floor(epoch_size/|Y|) indices or one more (remainder classes chosen by
// seed), sampling without replacement until a class is exhausted, then
// repeating. The concatenation is shuffled. Deterministic under `seed`.
std::vector<std::int64_t> balanced_sampler(const Dataset& dataset, std::int64_t epoch_size,
                                           std::uint64_t seed);

}  // namespace dan
