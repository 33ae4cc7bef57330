#pragma once

#include <cstdint>
#include <string>

#include "dan/afn.hpp"
#include "dan/data.hpp"

// Run configuration: a single INI-style text file ([section] headers,
// key = value lines, '#' comments) covering the model, losses, optimizer,
// dataset, augmentation and run control. Unknown keys are errors.

namespace dan {

struct OptimSpec {
  std::string kind = "sgd";      // sgd | adam
  double lr = 0.1;               // sensible for sgd; use ~1e-4 for adam
  double momentum = 0.9;         // sgd only
  std::string schedule = "cosine";  // cosine | constant
  double min_lr_frac = 0.01;     // cosine floor as a fraction of lr
};

struct DataSpec {
  std::string source = "synth";  // synth | folder
  std::int64_t synth_per_class = 200;
  double synth_noise = 0.05;
  std::string root;              // folder source: dataset root
  std::string manifest = "manifest.csv";
  double holdout_fraction = 0.2;  // stratified eval split; 0 evaluates on train
  std::int64_t epoch_size = 0;    // balanced-sampler draws per epoch; 0 = train size
};

struct RunConfig {
  std::string plan = "toy";      // backbone plan name
  std::int64_t heads = 4;        // K
  std::int64_t classes = 4;      // |Y|
  std::int64_t image_size = 32;
  LossWeights loss;              // lambda1, lambda2
  OptimSpec optim;
  std::int64_t epochs = 40;
  std::int64_t batch_size = 256;
  DataSpec data;
  AugmentConfig augment_cfg;
  std::uint64_t seed = 1;
  bool deterministic = true;
  std::string out_dir = "runs/out";

  void validate() const;
};

// Parses `path` (or a raw config string) on top of the defaults above.
RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text, const std::string& origin = "<string>");

// Canonical serialization: every field, fixed order, %.17g reals. Parsing the
// output reproduces the config; checkpoints embed and digest this text.
std::string config_to_text(const RunConfig& cfg);

}  // namespace dan
