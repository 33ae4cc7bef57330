#include "dan/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dan/error.hpp"

namespace dan {
namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << text;
  if (!out.good()) throw IoError(path + ": write failed");
}

}  // namespace

std::string epoch_csv_header() {
  return "epoch,lr,train_af,train_pt,train_cls,train_total,train_acc,"
         "eval_af,eval_pt,eval_cls,eval_total,eval_acc";
}

std::string epoch_csv_row(const EpochRow& r) {
  std::string out = std::to_string(r.epoch);
  for (double v : {r.lr, r.train_af, r.train_pt, r.train_cls, r.train_total, r.train_acc,
                   r.eval_af, r.eval_pt, r.eval_cls, r.eval_total, r.eval_acc})
    out += "," + fmt(v);
  return out;
}

void write_epoch_csv(const std::string& path, const std::vector<EpochRow>& rows) {
  std::string text = epoch_csv_header() + "\n";
  for (const EpochRow& r : rows) text += epoch_csv_row(r) + "\n";
  write_text(path, text);
}

ConfusionMatrix::ConfusionMatrix(std::int64_t num_classes) : y_(num_classes) {
  if (num_classes < 2) throw ValueError("confusion matrix needs >= 2 classes");
  counts_.assign(static_cast<std::size_t>(y_ * y_), 0);
}

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || truth >= y_ || predicted < 0 || predicted >= y_)
    throw ValueError("confusion matrix: label (" + std::to_string(truth) + ", " +
                     std::to_string(predicted) + ") outside [0, " + std::to_string(y_) + ")");
  ++counts_[static_cast<std::size_t>(truth * y_ + predicted)];
}

std::int64_t ConfusionMatrix::at(std::int64_t truth, std::int64_t predicted) const {
  return counts_[static_cast<std::size_t>(truth * y_ + predicted)];
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (std::int64_t c : counts_) n += c;
  return n;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t n = 0;
  for (std::int64_t i = 0; i < y_; ++i) n += at(i, i);
  return n;
}

std::int64_t ConfusionMatrix::row_sum(std::int64_t truth) const {
  std::int64_t n = 0;
  for (std::int64_t j = 0; j < y_; ++j) n += at(truth, j);
  return n;
}

double ConfusionMatrix::accuracy() const {
  const std::int64_t n = total();
  if (n == 0) throw ValueError("confusion matrix: accuracy of an empty matrix");
  return static_cast<double>(trace()) / static_cast<double>(n);
}

std::vector<PrPoint> pr_curve(const std::vector<double>& scores,
                              const std::vector<int>& is_positive) {
  if (scores.size() != is_positive.size())
    throw ValueError("pr_curve: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(is_positive.size()) + " labels");
  if (scores.empty()) throw ValueError("pr_curve: empty input");

  std::int64_t positives = 0;
  for (int p : is_positive) positives += p ? 1 : 0;

  std::vector<double> thresholds(scores);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<PrPoint> out;
  out.reserve(thresholds.size());
  for (double th : thresholds) {
    std::int64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= th) {
        if (is_positive[i])
          ++tp;
        else
          ++fp;
      }
    }
    PrPoint p;
    p.threshold = th;
    p.precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = positives == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(positives);
    out.push_back(p);
  }
  return out;
}

std::string final_report_json(const FinalReport& report) {
  nlohmann::json j;
  j["loss"] = {{"af", report.af},
               {"pt", report.pt},
               {"cls", report.cls},
               {"total", report.total}};
  j["accuracy"] = report.accuracy;
  j["center_distance"] = report.center_distance;
  j["mean_overlap_offdiag"] = report.mean_overlap_offdiag;
  j["confusion"] = report.confusion;
  nlohmann::json pr = nlohmann::json::array();
  for (const auto& cls_points : report.pr) {
    nlohmann::json pts = nlohmann::json::array();
    for (const PrPoint& p : cls_points)
      pts.push_back({{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}});
    pr.push_back(pts);
  }
  j["pr_curves"] = pr;
  j["head_overlap"] = report.head_overlap;
  return j.dump(2) + "\n";
}

void write_final_report(const std::string& path, const FinalReport& report) {
  write_text(path, final_report_json(report));
}

}  // namespace dan
