// Command-line harness: train / eval / ablate-heads / export-attn /
// count-params / gradcheck / synth-data.

#include <cinttypes>
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dan/checkpoint.hpp"
#include "dan/config.hpp"
#include "dan/data.hpp"
#include "dan/error.hpp"
#include "dan/flops.hpp"
#include "dan/gradcheck.hpp"
#include "dan/metrics.hpp"
#include "dan/model.hpp"
#include "dan/trainer.hpp"

namespace {

int cmd_train(const std::string& config_path) {
  dan::RunConfig cfg = dan::parse_run_config(config_path);
  dan::TrainResult result = dan::train(cfg);
  for (const dan::EpochRow& row : result.rows)
    std::printf("epoch %3" PRId64 "  train_total %.6f  train_acc %.4f  eval_acc %.4f\n",
                row.epoch, row.train_total, row.train_acc, row.eval_acc);
  std::printf("final train accuracy %.4f, eval accuracy %.4f\n", result.final_train_acc,
              result.final_eval.accuracy);
  std::printf("metrics: %s\nreport: %s\ncheckpoint: %s\n", result.csv_path.c_str(),
              result.report_path.c_str(), result.checkpoint_path.c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt_path) {
  dan::Checkpoint ckpt = dan::load_checkpoint(ckpt_path);
  dan::DanModel model = dan::restore_model(ckpt);
  dan::RunConfig cfg = dan::parse_run_config_text(ckpt.config_text, ckpt_path + " (config)");
  dan::SplitDataset split = dan::load_split(cfg);
  const dan::Dataset& eval_set = split.holdout.samples.empty() ? split.train : split.holdout;
  dan::EvalOutput out = dan::evaluate_model(model, eval_set, cfg.loss, cfg.batch_size);
  std::printf("samples %" PRId64 "  accuracy %.4f\n", eval_set.size(), out.accuracy);
  std::printf("af %.6f  pt %.6f  cls %.6f  total %.6f\n", out.af, out.pt, out.cls, out.total);
  std::printf("normalized center distance %.6f", out.center_distance);
  if (model.k >= 2) std::printf("  mean head overlap %.6f", out.mean_overlap_offdiag);
  std::printf("\nconfusion (rows = truth):\n");
  for (std::int64_t i = 0; i < out.confusion.num_classes(); ++i) {
    for (std::int64_t j = 0; j < out.confusion.num_classes(); ++j)
      std::printf("%6" PRId64, out.confusion.at(i, j));
    std::printf("\n");
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, std::vector<std::int64_t> ks,
               const std::string& out_csv) {
  dan::RunConfig cfg = dan::parse_run_config(config_path);
  if (ks.empty()) ks = {1, 2, 4, 8};
  auto rows = dan::ablate_heads(cfg, ks, out_csv);
  std::printf("%4s %12s %10s %10s\n", "k", "params", "train_acc", "eval_acc");
  for (const dan::AblationRow& r : rows)
    std::printf("%4" PRId64 " %12" PRId64 " %10.4f %10.4f\n", r.k, r.params, r.train_acc,
                r.eval_acc);
  std::printf("table: %s\n", out_csv.c_str());
  return 0;
}

int cmd_export_attn(const std::string& ckpt_path, std::int64_t count, const std::string& out_dir) {
  dan::Checkpoint ckpt = dan::load_checkpoint(ckpt_path);
  dan::DanModel model = dan::restore_model(ckpt);
  dan::RunConfig cfg = dan::parse_run_config_text(ckpt.config_text, ckpt_path + " (config)");
  dan::SplitDataset split = dan::load_split(cfg);
  const dan::Dataset& ds = split.holdout.samples.empty() ? split.train : split.holdout;
  dan::export_attention_maps(model, ds, count, out_dir);
  std::printf("wrote %" PRId64 " x %" PRId64 " gate maps to %s\n",
              std::min<std::int64_t>(count, ds.size()), model.k, out_dir.c_str());
  return 0;
}

int cmd_count_params(const std::string& plan_name, std::int64_t heads, std::int64_t classes,
                     std::int64_t input) {
  dan::BackbonePlan plan = dan::BackbonePlan::by_name(plan_name);
  dan::CostBreakdown cost = dan::count_params_flops(plan, heads, classes, input);
  std::printf("plan %s, K=%" PRId64 ", classes=%" PRId64 ", input %" PRId64 "x%" PRId64 "\n",
              plan_name.c_str(), heads, classes, input, input);
  std::printf("backbone params   %12" PRId64 "\n", cost.backbone_params);
  std::printf("attention params  %12" PRId64 "\n", cost.attention_params);
  std::printf("center params     %12" PRId64 "\n", cost.center_params);
  std::printf("classifier params %12" PRId64 "\n", cost.classifier_params);
  std::printf("total params      %12" PRId64 "  (%.2f M)\n", cost.total_params,
              static_cast<double>(cost.total_params) / 1e6);
  std::printf("total MACs        %15.0f  (%.3f G)\n", cost.total_macs, cost.total_macs / 1e9);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, double step, double tol) {
  dan::DanModel model = dan::make_dan_model(dan::BackbonePlan::mini(), 2, 3, seed);
  dan::Rng rng(dan::Rng::derive(seed, 0x636c69ULL));
  dan::Tensor images = dan::uniform({3, 3, 8, 8}, rng, 0.0, 1.0);
  std::vector<int> labels{0, 2, 1};
  dan::LossWeights weights;
  auto params = model.named_params();
  dan::GradCheckOptions opts;
  opts.step = step;
  opts.tol = tol;
  opts.max_entries_per_param = 4;
  opts.rng = &rng;
  auto report = dan::gradcheck(
      [&] { return model.forward(images, labels, weights, true, false).total; }, params, opts);
  std::printf("checked %" PRId64 " entries, max relative error %.3e\n", report.entries_checked,
              report.max_rel_err);
  if (!report.passed) {
    std::printf("FAIL at %s[%" PRId64 "]: analytic %.9e vs numeric %.9e\n",
                report.worst.param.c_str(), report.worst.index, report.worst.analytic,
                report.worst.numeric);
    return 1;
  }
  std::printf("PASS (tolerance %.1e)\n", opts.tol);
  return 0;
}

int cmd_synth_data(std::int64_t classes, std::int64_t per_class, std::int64_t size,
                   std::uint64_t seed, double noise, const std::string& out_dir) {
  dan::Dataset ds = dan::synth_dataset(classes, per_class, size, seed, noise);
  dan::save_dataset(ds, out_dir);
  std::printf("wrote %" PRId64 " samples (%" PRId64 " classes x %" PRId64 ") to %s\n", ds.size(),
              classes, per_class, out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-head attention expression classifier harness"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, out_path;
  std::vector<std::int64_t> ks;
  std::int64_t count = 8, heads = 4, classes = 8, input = 224;
  std::int64_t sd_classes = 4, sd_per_class = 10, sd_size = 32;
  std::uint64_t seed = 1;
  double noise = 0.05;
  std::string plan_name = "resnet18";

  CLI::App* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", config_path, "run config file")->required();

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on its configured dataset");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();

  CLI::App* ablate = app.add_subcommand("ablate-heads", "Train once per head count K");
  ablate->add_option("--config", config_path, "run config file")->required();
  ablate->add_option("--ks", ks, "K values (default 1 2 4 8)")->delimiter(',');
  ablate->add_option("--out", out_path, "output CSV path")->required();

  CLI::App* attn = app.add_subcommand("export-attn", "Export per-head spatial gate maps");
  attn->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  attn->add_option("--count", count, "number of samples to export");
  attn->add_option("--out", out_path, "output directory")->required();

  CLI::App* cparams = app.add_subcommand("count-params", "Parameter/FLOP accounting for a plan");
  cparams->add_option("--plan", plan_name, "backbone plan (toy|resnet18|mini)");
  cparams->add_option("--heads", heads, "attention head count K");
  cparams->add_option("--classes", classes, "number of classes");
  cparams->add_option("--input", input, "square input size");

  double gc_step = 1e-6, gc_tol = 1e-4;
  CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full model");
  gc->add_option("--seed", seed, "seed");
  gc->add_option("--step", gc_step, "finite-difference step");
  gc->add_option("--tol", gc_tol, "relative-error tolerance");

  CLI::App* synth = app.add_subcommand("synth-data", "Generate a synthetic dataset folder");
  synth->add_option("--classes", sd_classes, "number of classes");
  synth->add_option("--per-class", sd_per_class, "samples per class");
  synth->add_option("--size", sd_size, "square image size");
  synth->add_option("--seed", seed, "seed");
  synth->add_option("--noise", noise, "uniform pixel noise amplitude");
  synth->add_option("--out", out_path, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (eval->parsed()) return cmd_eval(ckpt_path);
    if (ablate->parsed()) return cmd_ablate(config_path, ks, out_path);
    if (attn->parsed()) return cmd_export_attn(ckpt_path, count, out_path);
    if (cparams->parsed()) return cmd_count_params(plan_name, heads, classes, input);
    if (gc->parsed()) return cmd_gradcheck(seed, gc_step, gc_tol);
    if (synth->parsed())
      return cmd_synth_data(sd_classes, sd_per_class, sd_size, seed, noise, out_path);
  } catch (const dan::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
  return 0;
}
