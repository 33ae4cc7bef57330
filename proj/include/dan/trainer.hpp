#pragma once

#include <string>
#include <vector>

#include "dan/checkpoint.hpp"
#include "dan/config.hpp"
#include "dan/data.hpp"
#include "dan/metrics.hpp"
#include "dan/model.hpp"
#include "dan/optim.hpp"

// Training / evaluation / ablation harness. Everything is deterministic under
// the run seed: dataset generation, the train/holdout split, per-epoch
// sampling and augmentation streams, and model initialization.

namespace dan {

struct SplitDataset {
  Dataset train;
  Dataset holdout;  // empty when holdout_fraction = 0
};

// Builds the configured dataset and applies the stratified holdout split.
SplitDataset load_split(const RunConfig& cfg);

struct EvalOutput {
  // af/pt/cls are means of per-batch values; total is the weighted identity
  // lambda1*af + lambda2*pt + cls recomputed from those means.
  double af = 0.0, pt = 0.0, cls = 0.0, total = 0.0;
  double accuracy = 0.0;
  ConfusionMatrix confusion{2};
  std::vector<std::vector<PrPoint>> pr;           // per class, softmax scores
  std::vector<std::vector<double>> head_overlap;  // K x K; empty when K = 1
  double mean_overlap_offdiag = 0.0;              // 0 when K = 1
  double center_distance = 0.0;  // mean ||feature - own center|| / sigma_c
};

EvalOutput evaluate_model(DanModel& model, const Dataset& ds, const LossWeights& weights,
                          std::int64_t batch_size);

struct TrainResult {
  std::vector<EpochRow> rows;
  EvalOutput final_eval;
  double final_train_acc = 0.0;
  std::string csv_path, report_path, checkpoint_path;
};

// Runs the configured training loop, writing metrics.csv, report.json and
// checkpoint.bin under cfg.out_dir. Non-finite loss components abort with an
// error naming the first bad component.
TrainResult train(const RunConfig& cfg);

struct AblationRow {
  std::int64_t k = 0;
  std::int64_t params = 0;
  double train_acc = 0.0;
  double eval_acc = 0.0;
};

// Trains one model per K (same seed; K = 1 forces lambda2 = 0) and writes a
// `k,params,train_acc,eval_acc` table to out_csv.
std::vector<AblationRow> ablate_heads(const RunConfig& base, const std::vector<std::int64_t>& ks,
                                      const std::string& out_csv);

// Writes one channel-averaged, min-max-normalized PGM gate map per (sample,
// head) for the first `count` samples, plus the head-overlap matrix CSV
// (K >= 2) computed on that batch.
void export_attention_maps(DanModel& model, const Dataset& ds, std::int64_t count,
                           const std::string& out_dir);

// Checkpoint glue: parameters, batch-norm buffers and optimizer state under
// the model's canonical names, plus the canonical config text.
Checkpoint make_model_checkpoint(DanModel& model, Optimizer& optimizer, const RunConfig& cfg,
                                 std::int64_t epoch);
// Rebuilds the model a checkpoint describes and restores parameters/buffers.
DanModel restore_model(const Checkpoint& ckpt);

// Stacks samples [first, first + count) into a [count, 3, S, S] batch.
Tensor stack_images(const Dataset& ds, const std::vector<std::int64_t>& indices);

}  // namespace dan
