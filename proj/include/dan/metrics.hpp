#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Metrics plumbing: per-epoch CSV rows, confusion matrix, threshold-sweep
// precision-recall curves, and the final JSON report.

namespace dan {

struct EpochRow {
  std::int64_t epoch = 0;
  double lr = 0.0;
  double train_af = 0.0, train_pt = 0.0, train_cls = 0.0, train_total = 0.0, train_acc = 0.0;
  double eval_af = 0.0, eval_pt = 0.0, eval_cls = 0.0, eval_total = 0.0, eval_acc = 0.0;
};

// Fixed header + %.17g values: reals round-trip exactly and identical runs
// produce identical bytes.
std::string epoch_csv_header();
std::string epoch_csv_row(const EpochRow& row);
void write_epoch_csv(const std::string& path, const std::vector<EpochRow>& rows);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t num_classes);
  void add(int truth, int predicted);
  std::int64_t at(std::int64_t truth, std::int64_t predicted) const;
  std::int64_t num_classes() const { return y_; }
  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(std::int64_t truth) const;
  double accuracy() const;  // trace / total

 private:
  std::int64_t y_;
  std::vector<std::int64_t> counts_;  // row = truth, column = predicted
};

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Threshold sweep over the distinct scores (descending): one point per
// threshold, predicting positive where score >= threshold. Empty-positive
// convention: precision 1 when nothing is predicted positive.
std::vector<PrPoint> pr_curve(const std::vector<double>& scores,
                              const std::vector<int>& is_positive);

// Final JSON report: losses, accuracy, confusion matrix, per-class PR curves
// and the head-overlap matrix.
struct FinalReport {
  double af = 0.0, pt = 0.0, cls = 0.0, total = 0.0, accuracy = 0.0;
  double center_distance = 0.0;       // mean feature-to-own-center distance / sigma_c
  double mean_overlap_offdiag = 0.0;  // mean off-diagonal head overlap
  std::vector<std::vector<std::int64_t>> confusion;
  std::vector<std::vector<PrPoint>> pr;           // indexed by class
  std::vector<std::vector<double>> head_overlap;  // K x K; empty when K = 1
};

std::string final_report_json(const FinalReport& report);
void write_final_report(const std::string& path, const FinalReport& report);

}  // namespace dan
