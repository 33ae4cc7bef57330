#include "dan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dan/error.hpp"
#include "dan/flops.hpp"
#include "dan/image.hpp"

namespace dan {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;      // dataset split
constexpr std::uint64_t kSampleStream = 0x380000000000ULL;   // + epoch
constexpr std::uint64_t kAugmentStream = 0x390000000000ULL;  // + epoch

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir + ": cannot create directory (" + ec.message() + ")");
}

int argmax_row(std::span<const double> row) {
  int best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  return best;
}

void check_finite(double v, const char* what, std::int64_t epoch, std::int64_t step) {
  if (!std::isfinite(v))
    throw ValueError("train: non-finite " + std::string(what) + " (" + std::to_string(v) +
                     ") at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                     "; aborting");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Tensor stack_images(const Dataset& ds, const std::vector<std::int64_t>& indices) {
  if (indices.empty()) throw ValueError("stack_images: empty batch");
  const Tensor& first = ds.samples[static_cast<std::size_t>(indices[0])].image;
  const std::int64_t c = first.dim(0), h = first.dim(1), w = first.dim(2);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(static_cast<std::int64_t>(indices.size()) * c * h * w));
  for (std::int64_t idx : indices) {
    const Tensor& img = ds.samples[static_cast<std::size_t>(idx)].image;
    if (img.shape() != first.shape())
      throw ShapeError("stack_images: sample " + std::to_string(idx) + " has shape " +
                       shape_str(img.shape()) + ", expected " + shape_str(first.shape()));
    out.insert(out.end(), img.values().begin(), img.values().end());
  }
  return from_values({static_cast<std::int64_t>(indices.size()), c, h, w}, std::move(out));
}

SplitDataset load_split(const RunConfig& cfg) {
  Dataset full;
  if (cfg.data.source == "synth") {
    full = synth_dataset(cfg.classes, cfg.data.synth_per_class, cfg.image_size, cfg.seed,
                         cfg.data.synth_noise);
  } else {
    full = load_dataset(cfg.data.root, cfg.data.manifest, cfg.image_size, cfg.classes);
  }

  SplitDataset split;
  split.train.num_classes = full.num_classes;
  split.holdout.num_classes = full.num_classes;
  if (cfg.data.holdout_fraction == 0.0) {
    split.train.samples = std::move(full.samples);
    return split;
  }

  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(full.num_classes));
  for (std::int64_t i = 0; i < full.size(); ++i)
    by_class[static_cast<std::size_t>(full.samples[static_cast<std::size_t>(i)].label)].push_back(i);

  Rng rng(Rng::derive(cfg.seed, kSplitStream));
  for (auto& pool : by_class) {
    for (std::int64_t i = static_cast<std::int64_t>(pool.size()) - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    // Round the holdout count but always keep at least one training sample.
    auto hold = static_cast<std::int64_t>(
        std::lround(cfg.data.holdout_fraction * static_cast<double>(pool.size())));
    hold = std::min<std::int64_t>(hold, static_cast<std::int64_t>(pool.size()) - 1);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      Sample& s = full.samples[static_cast<std::size_t>(pool[i])];
      (static_cast<std::int64_t>(i) < hold ? split.holdout : split.train)
          .samples.push_back(std::move(s));
    }
  }
  return split;
}

EvalOutput evaluate_model(DanModel& model, const Dataset& ds, const LossWeights& weights,
                          std::int64_t batch_size) {
  if (ds.samples.empty()) throw ValueError("evaluate: empty dataset");
  if (ds.num_classes != model.num_classes)
    throw ValueError("evaluate: dataset has " + std::to_string(ds.num_classes) +
                     " classes, model expects " + std::to_string(model.num_classes));
  if (batch_size < 1) throw ValueError("evaluate: batch_size must be >= 1");

  NoGradGuard no_grad;
  EvalOutput out;
  out.confusion = ConfusionMatrix(model.num_classes);
  const std::int64_t n = ds.size();
  const std::int64_t k = model.k;

  std::vector<std::vector<double>> scores(static_cast<std::size_t>(model.num_classes));
  std::vector<std::vector<int>> positives(static_cast<std::size_t>(model.num_classes));
  std::vector<std::vector<double>> overlap_sum;
  if (k >= 2)
    overlap_sum.assign(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(k), 0.0));

  double af_sum = 0.0, pt_sum = 0.0, cls_sum = 0.0, dist_sum = 0.0;
  std::int64_t batches = 0, correct = 0, overlap_weight = 0;

  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t stop = std::min(n, start + batch_size);
    std::vector<std::int64_t> indices;
    std::vector<int> labels;
    for (std::int64_t i = start; i < stop; ++i) {
      indices.push_back(i);
      labels.push_back(ds.samples[static_cast<std::size_t>(i)].label);
    }
    Tensor images = stack_images(ds, indices);
    DanForward fwd = model.forward(images, labels, weights, false, false);
    af_sum += fwd.af.item();
    pt_sum += fwd.pt.item();
    cls_sum += fwd.cls.item();
    ++batches;

    const std::int64_t b = stop - start;
    const std::int64_t y = model.num_classes;
    auto logit_vals = fwd.logits.values();
    for (std::int64_t i = 0; i < b; ++i) {
      auto row = logit_vals.subspan(static_cast<std::size_t>(i * y), static_cast<std::size_t>(y));
      const int pred = argmax_row(row);
      const int truth = labels[static_cast<std::size_t>(i)];
      out.confusion.add(truth, pred);
      if (pred == truth) ++correct;
      // Softmax scores for the PR sweep.
      double mx = row[0];
      for (std::size_t c = 1; c < row.size(); ++c) mx = std::max(mx, row[c]);
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      for (std::int64_t c = 0; c < y; ++c) {
        scores[static_cast<std::size_t>(c)].push_back(
            std::exp(row[static_cast<std::size_t>(c)] - mx) / z);
        positives[static_cast<std::size_t>(c)].push_back(truth == c ? 1 : 0);
      }
    }

    // Mean feature-to-own-center Euclidean distance, normalized later.
    {
      Tensor own = take_columns(model.centers.c, labels);
      Tensor diff = sub(fwd.features, own);
      Tensor sq = mul(diff, diff);
      const std::int64_t d = model.feature_dim();
      for (std::int64_t i = 0; i < b; ++i) {
        double row = 0.0;
        for (std::int64_t j = 0; j < d; ++j) row += sq.at({i, j});
        dist_sum += std::sqrt(row);
      }
    }

    if (k >= 2) {
      auto m = head_overlap(fwd.man.spatial_gates);
      for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t j = 0; j < k; ++j)
          overlap_sum[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
              m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * static_cast<double>(b);
      overlap_weight += b;
    }
  }

  out.af = af_sum / static_cast<double>(batches);
  out.pt = pt_sum / static_cast<double>(batches);
  out.cls = cls_sum / static_cast<double>(batches);
  out.total = weights.lambda1 * out.af + weights.lambda2 * out.pt + out.cls;
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  out.center_distance = dist_sum / static_cast<double>(n) / center_std(model.centers.c).item();
  for (std::int64_t c = 0; c < model.num_classes; ++c)
    out.pr.push_back(pr_curve(scores[static_cast<std::size_t>(c)],
                              positives[static_cast<std::size_t>(c)]));
  if (k >= 2) {
    out.head_overlap = std::move(overlap_sum);
    for (auto& row : out.head_overlap)
      for (double& v : row) v /= static_cast<double>(overlap_weight);
    out.mean_overlap_offdiag = mean_off_diagonal(out.head_overlap);
  }
  return out;
}

Checkpoint make_model_checkpoint(DanModel& model, Optimizer& optimizer, const RunConfig& cfg,
                                 std::int64_t epoch) {
  Checkpoint ckpt;
  ckpt.config_text = config_to_text(cfg);
  ckpt.epoch = epoch;
  for (auto& [name, t] : model.named_params()) ckpt.tensors.emplace_back(name, t);
  for (auto& [name, t] : model.named_buffers()) ckpt.tensors.emplace_back(name, t);
  for (auto& [name, t] : optimizer.named_state()) ckpt.tensors.emplace_back(name, t);
  return ckpt;
}

DanModel restore_model(const Checkpoint& ckpt) {
  RunConfig cfg = parse_run_config_text(ckpt.config_text, "<checkpoint config>");
  cfg.validate();
  DanModel model =
      make_dan_model(BackbonePlan::by_name(cfg.plan), cfg.heads, cfg.classes, cfg.seed);
  restore_tensors(ckpt, model.named_params());
  restore_tensors(ckpt, model.named_buffers());
  return model;
}

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  ensure_dir(cfg.out_dir);
  SplitDataset split = load_split(cfg);
  const Dataset& eval_set = split.holdout.samples.empty() ? split.train : split.holdout;

  DanModel model = make_dan_model(BackbonePlan::by_name(cfg.plan), cfg.heads, cfg.classes, cfg.seed);
  auto params = model.named_params();
  Optimizer optimizer(cfg.optim, params);
  const std::vector<double> fill = channel_means(split.train);

  const std::int64_t epoch_size =
      cfg.data.epoch_size > 0 ? cfg.data.epoch_size : split.train.size();
  const std::int64_t steps_per_epoch = epoch_size / cfg.batch_size;
  if (steps_per_epoch < 1)
    throw ConfigError("train: epoch_size " + std::to_string(epoch_size) +
                      " yields no full batch of " + std::to_string(cfg.batch_size));
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  TrainResult result;
  result.csv_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
  result.report_path = (fs::path(cfg.out_dir) / "report.json").string();
  result.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.bin").string();

  std::int64_t global_step = 0;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::int64_t> order = balanced_sampler(
        split.train, epoch_size, Rng::derive(cfg.seed, kSampleStream + static_cast<std::uint64_t>(epoch)));
    Rng aug_rng(Rng::derive(cfg.seed, kAugmentStream + static_cast<std::uint64_t>(epoch)));

    double af_sum = 0.0, pt_sum = 0.0, cls_sum = 0.0, last_lr = 0.0;
    std::int64_t correct = 0, seen = 0;
    for (std::int64_t step = 0; step < steps_per_epoch; ++step) {
      Dataset batch_ds;
      batch_ds.num_classes = cfg.classes;
      std::vector<std::int64_t> batch_idx;
      std::vector<int> labels;
      for (std::int64_t i = 0; i < cfg.batch_size; ++i) {
        const std::int64_t idx = order[static_cast<std::size_t>(step * cfg.batch_size + i)];
        Sample s = augment(split.train.samples[static_cast<std::size_t>(idx)], aug_rng,
                           cfg.augment_cfg, fill);
        labels.push_back(s.label);
        batch_ds.samples.push_back(std::move(s));
        batch_idx.push_back(i);
      }
      Tensor images = stack_images(batch_ds, batch_idx);

      DanForward fwd = model.forward(images, labels, cfg.loss, true, true);
      check_finite(fwd.af.item(), "affinity loss", epoch, step);
      check_finite(fwd.pt.item(), "partition loss", epoch, step);
      check_finite(fwd.cls.item(), "classification loss", epoch, step);
      check_finite(fwd.total.item(), "total loss", epoch, step);

      for (auto& [name, p] : params) p.zero_grad();
      backward(fwd.total);
      last_lr = scheduled_lr(cfg.optim, global_step, total_steps);
      optimizer.step(params, last_lr);
      ++global_step;

      af_sum += fwd.af.item();
      pt_sum += fwd.pt.item();
      cls_sum += fwd.cls.item();
      auto logit_vals = fwd.logits.values();
      for (std::int64_t i = 0; i < cfg.batch_size; ++i) {
        auto row = logit_vals.subspan(static_cast<std::size_t>(i * cfg.classes),
                                      static_cast<std::size_t>(cfg.classes));
        if (argmax_row(row) == labels[static_cast<std::size_t>(i)]) ++correct;
        ++seen;
      }
    }

    EpochRow row;
    row.epoch = epoch;
    row.lr = last_lr;
    row.train_af = af_sum / static_cast<double>(steps_per_epoch);
    row.train_pt = pt_sum / static_cast<double>(steps_per_epoch);
    row.train_cls = cls_sum / static_cast<double>(steps_per_epoch);
    // The logged total is this exact expression of the logged components.
    row.train_total =
        cfg.loss.lambda1 * row.train_af + cfg.loss.lambda2 * row.train_pt + row.train_cls;
    row.train_acc = static_cast<double>(correct) / static_cast<double>(seen);

    EvalOutput ev = evaluate_model(model, eval_set, cfg.loss, cfg.batch_size);
    row.eval_af = ev.af;
    row.eval_pt = ev.pt;
    row.eval_cls = ev.cls;
    row.eval_total = ev.total;
    row.eval_acc = ev.accuracy;
    result.rows.push_back(row);
    result.final_train_acc = row.train_acc;
    if (epoch + 1 == cfg.epochs) result.final_eval = std::move(ev);

    Checkpoint ckpt = make_model_checkpoint(model, optimizer, cfg, epoch);
    save_checkpoint(result.checkpoint_path, ckpt);
  }

  write_epoch_csv(result.csv_path, result.rows);
  FinalReport report;
  report.af = result.final_eval.af;
  report.pt = result.final_eval.pt;
  report.cls = result.final_eval.cls;
  report.total = result.final_eval.total;
  report.accuracy = result.final_eval.accuracy;
  report.center_distance = result.final_eval.center_distance;
  report.mean_overlap_offdiag = result.final_eval.mean_overlap_offdiag;
  const std::int64_t y = result.final_eval.confusion.num_classes();
  report.confusion.assign(static_cast<std::size_t>(y), std::vector<std::int64_t>(static_cast<std::size_t>(y), 0));
  for (std::int64_t i = 0; i < y; ++i)
    for (std::int64_t j = 0; j < y; ++j)
      report.confusion[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          result.final_eval.confusion.at(i, j);
  report.pr = result.final_eval.pr;
  report.head_overlap = result.final_eval.head_overlap;
  write_final_report(result.report_path, report);
  return result;
}

std::vector<AblationRow> ablate_heads(const RunConfig& base, const std::vector<std::int64_t>& ks,
                                      const std::string& out_csv) {
  if (ks.empty()) throw ValueError("ablate_heads: no K values");
  std::vector<AblationRow> rows;
  for (std::int64_t k : ks) {
    if (k < 1) throw ConfigError("ablate_heads: K must be >= 1");
    RunConfig cfg = base;
    cfg.heads = k;
    if (k == 1) cfg.loss.lambda2 = 0.0;  // partition loss undefined for one head
    cfg.out_dir = (fs::path(base.out_dir) / ("k" + std::to_string(k))).string();
    TrainResult r = train(cfg);
    AblationRow row;
    row.k = k;
    row.params =
        count_params_flops(BackbonePlan::by_name(cfg.plan), k, cfg.classes, cfg.image_size)
            .total_params;
    row.train_acc = r.final_train_acc;
    row.eval_acc = r.final_eval.accuracy;
    rows.push_back(row);
  }
  std::string text = "k,params,train_acc,eval_acc\n";
  for (const AblationRow& r : rows)
    text += std::to_string(r.k) + "," + std::to_string(r.params) + "," + fmt(r.train_acc) + "," +
            fmt(r.eval_acc) + "\n";
  ensure_dir(fs::path(out_csv).parent_path().string().empty()
                 ? std::string(".")
                 : fs::path(out_csv).parent_path().string());
  std::ofstream out(out_csv, std::ios::trunc);
  if (!out) throw IoError(out_csv + ": cannot open for writing");
  out << text;
  if (!out.good()) throw IoError(out_csv + ": write failed");
  return rows;
}

void export_attention_maps(DanModel& model, const Dataset& ds, std::int64_t count,
                           const std::string& out_dir) {
  if (ds.samples.empty()) throw ValueError("export_attn: empty dataset");
  count = std::min<std::int64_t>(count, ds.size());
  if (count < 1) throw ValueError("export_attn: need at least one sample");
  ensure_dir(out_dir);

  NoGradGuard no_grad;
  std::vector<std::int64_t> indices;
  std::vector<int> labels;
  for (std::int64_t i = 0; i < count; ++i) {
    indices.push_back(i);
    labels.push_back(ds.samples[static_cast<std::size_t>(i)].label);
  }
  Tensor images = stack_images(ds, indices);
  DanPrediction pred = model.predict(images, false, false);

  const Tensor& gates = pred.man.spatial_gates;  // [B, K, D, h, w]
  const std::int64_t b = gates.dim(0), k = gates.dim(1), d = gates.dim(2);
  const std::int64_t h = gates.dim(3), w = gates.dim(4);
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < k; ++j) {
      std::vector<double> map(static_cast<std::size_t>(h * w), 0.0);
      for (std::int64_t c = 0; c < d; ++c)
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t x = 0; x < w; ++x)
            map[static_cast<std::size_t>(y * w + x)] += gates.at({i, j, c, y, x});
      double lo = map[0], hi = map[0];
      for (double v : map) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      // Constant gates normalize to mid-gray rather than dividing by zero.
      for (double& v : map) v = hi > lo ? (v - lo) / (hi - lo) : 0.5;
      char name[64];
      std::snprintf(name, sizeof name, "sample%03lld_head%lld.pgm", static_cast<long long>(i),
                    static_cast<long long>(j));
      write_pnm((fs::path(out_dir) / name).string(),
                from_values({1, h, w}, std::move(map)));
    }

  if (k >= 2) {
    auto m = head_overlap(gates);
    std::string text;
    for (std::int64_t i = 0; i < k; ++i) {
      for (std::int64_t j = 0; j < k; ++j) {
        if (j) text += ",";
        text += fmt(m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
      }
      text += "\n";
    }
    const std::string path = (fs::path(out_dir) / "overlap.csv").string();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(path + ": cannot open for writing");
    out << text;
    if (!out.good()) throw IoError(path + ": write failed");
  }
}

}  // namespace dan
