#include "dan/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dan/error.hpp"
#include "dan/fcn.hpp"

namespace dan {
namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad(const std::string& origin, std::int64_t line, const std::string& why) {
  throw ConfigError(origin + " line " + std::to_string(line) + ": " + why);
}

double parse_real(const std::string& origin, std::int64_t line, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    bad(origin, line, "bad real '" + v + "'");
  }
}

std::int64_t parse_int(const std::string& origin, std::int64_t line, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long r = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    bad(origin, line, "bad integer '" + v + "'");
  }
}

std::uint64_t parse_uint(const std::string& origin, std::int64_t line, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long r = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    bad(origin, line, "bad unsigned integer '" + v + "'");
  }
}

bool parse_bool(const std::string& origin, std::int64_t line, const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  bad(origin, line, "bad boolean '" + v + "' (use true/false)");
}

}  // namespace

void RunConfig::validate() const {
  BackbonePlan::by_name(plan).validate();  // throws on unknown plan
  if (heads < 1) throw ConfigError("config: heads must be >= 1");
  if (heads == 1 && loss.lambda2 != 0.0)
    throw ConfigError(
        "config: with a single head the partition loss is undefined; set lambda2 = 0");
  if (classes < 2) throw ConfigError("config: classes must be >= 2");
  if (image_size < 8) throw ConfigError("config: image_size must be >= 8");
  loss.validate();
  if (optim.kind != "sgd" && optim.kind != "adam")
    throw ConfigError("config: optim.kind must be sgd or adam, got '" + optim.kind + "'");
  if (!(optim.lr > 0.0) || !std::isfinite(optim.lr))
    throw ConfigError("config: optim.lr must be positive and finite");
  if (!(optim.momentum >= 0.0 && optim.momentum < 1.0))
    throw ConfigError("config: optim.momentum must be in [0, 1)");
  if (optim.schedule != "cosine" && optim.schedule != "constant")
    throw ConfigError("config: optim.schedule must be cosine or constant, got '" +
                      optim.schedule + "'");
  if (!(optim.min_lr_frac >= 0.0 && optim.min_lr_frac <= 1.0))
    throw ConfigError("config: optim.min_lr_frac must be in [0, 1]");
  if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
  if (batch_size < 2)
    throw ConfigError("config: batch_size must be >= 2 (batch statistics need it)");
  if (data.source != "synth" && data.source != "folder")
    throw ConfigError("config: data.source must be synth or folder, got '" + data.source + "'");
  if (data.source == "synth") {
    if (data.synth_per_class < 1) throw ConfigError("config: data.synth_per_class must be >= 1");
    if (!(data.synth_noise >= 0.0 && data.synth_noise <= 1.0))
      throw ConfigError("config: data.synth_noise must be in [0, 1]");
  } else if (data.root.empty()) {
    throw ConfigError("config: data.source = folder requires data.root");
  }
  if (!(data.holdout_fraction >= 0.0 && data.holdout_fraction < 1.0))
    throw ConfigError("config: data.holdout_fraction must be in [0, 1)");
  if (data.epoch_size < 0) throw ConfigError("config: data.epoch_size must be >= 0");
  augment_cfg.validate();
  if (out_dir.empty()) throw ConfigError("config: out_dir must be set");
}

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') bad(origin, lineno, "unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) bad(origin, lineno, "expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (key.empty()) bad(origin, lineno, "empty key");
    const std::string qual = section + "." + key;

    if (qual == "model.plan") cfg.plan = val;
    else if (qual == "model.heads") cfg.heads = parse_int(origin, lineno, val);
    else if (qual == "model.classes") cfg.classes = parse_int(origin, lineno, val);
    else if (qual == "model.image_size") cfg.image_size = parse_int(origin, lineno, val);
    else if (qual == "loss.lambda1") cfg.loss.lambda1 = parse_real(origin, lineno, val);
    else if (qual == "loss.lambda2") cfg.loss.lambda2 = parse_real(origin, lineno, val);
    else if (qual == "optim.kind") cfg.optim.kind = val;
    else if (qual == "optim.lr") cfg.optim.lr = parse_real(origin, lineno, val);
    else if (qual == "optim.momentum") cfg.optim.momentum = parse_real(origin, lineno, val);
    else if (qual == "optim.schedule") cfg.optim.schedule = val;
    else if (qual == "optim.min_lr_frac") cfg.optim.min_lr_frac = parse_real(origin, lineno, val);
    else if (qual == "run.epochs") cfg.epochs = parse_int(origin, lineno, val);
    else if (qual == "run.batch_size") cfg.batch_size = parse_int(origin, lineno, val);
    else if (qual == "data.source") cfg.data.source = val;
    else if (qual == "data.synth_per_class") cfg.data.synth_per_class = parse_int(origin, lineno, val);
    else if (qual == "data.synth_noise") cfg.data.synth_noise = parse_real(origin, lineno, val);
    else if (qual == "data.root") cfg.data.root = val;
    else if (qual == "data.manifest") cfg.data.manifest = val;
    else if (qual == "data.holdout_fraction") cfg.data.holdout_fraction = parse_real(origin, lineno, val);
    else if (qual == "data.epoch_size") cfg.data.epoch_size = parse_int(origin, lineno, val);
    else if (qual == "augment.flip_prob") cfg.augment_cfg.flip_prob = parse_real(origin, lineno, val);
    else if (qual == "augment.rotate_prob") cfg.augment_cfg.rotate_prob = parse_real(origin, lineno, val);
    else if (qual == "augment.rotate_max_deg") cfg.augment_cfg.rotate_max_deg = parse_real(origin, lineno, val);
    else if (qual == "augment.erase_prob") cfg.augment_cfg.erase_prob = parse_real(origin, lineno, val);
    else if (qual == "augment.erase_min_area") cfg.augment_cfg.erase_min_area = parse_real(origin, lineno, val);
    else if (qual == "augment.erase_max_area") cfg.augment_cfg.erase_max_area = parse_real(origin, lineno, val);
    else if (qual == "run.seed") cfg.seed = parse_uint(origin, lineno, val);
    else if (qual == "run.deterministic") cfg.deterministic = parse_bool(origin, lineno, val);
    else if (qual == "run.out_dir") cfg.out_dir = val;
    else bad(origin, lineno, "unknown key '" + qual + "'");
  }
  return cfg;
}

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path + ": cannot open config");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config_text(buf.str(), path);
}

std::string config_to_text(const RunConfig& cfg) {
  std::ostringstream out;
  out << "[model]\n"
      << "plan = " << cfg.plan << "\n"
      << "heads = " << cfg.heads << "\n"
      << "classes = " << cfg.classes << "\n"
      << "image_size = " << cfg.image_size << "\n"
      << "\n[loss]\n"
      << "lambda1 = " << fmt_real(cfg.loss.lambda1) << "\n"
      << "lambda2 = " << fmt_real(cfg.loss.lambda2) << "\n"
      << "\n[optim]\n"
      << "kind = " << cfg.optim.kind << "\n"
      << "lr = " << fmt_real(cfg.optim.lr) << "\n"
      << "momentum = " << fmt_real(cfg.optim.momentum) << "\n"
      << "schedule = " << cfg.optim.schedule << "\n"
      << "min_lr_frac = " << fmt_real(cfg.optim.min_lr_frac) << "\n"
      << "\n[data]\n"
      << "source = " << cfg.data.source << "\n"
      << "synth_per_class = " << cfg.data.synth_per_class << "\n"
      << "synth_noise = " << fmt_real(cfg.data.synth_noise) << "\n"
      << "root = " << cfg.data.root << "\n"
      << "manifest = " << cfg.data.manifest << "\n"
      << "holdout_fraction = " << fmt_real(cfg.data.holdout_fraction) << "\n"
      << "epoch_size = " << cfg.data.epoch_size << "\n"
      << "\n[augment]\n"
      << "flip_prob = " << fmt_real(cfg.augment_cfg.flip_prob) << "\n"
      << "rotate_prob = " << fmt_real(cfg.augment_cfg.rotate_prob) << "\n"
      << "rotate_max_deg = " << fmt_real(cfg.augment_cfg.rotate_max_deg) << "\n"
      << "erase_prob = " << fmt_real(cfg.augment_cfg.erase_prob) << "\n"
      << "erase_min_area = " << fmt_real(cfg.augment_cfg.erase_min_area) << "\n"
      << "erase_max_area = " << fmt_real(cfg.augment_cfg.erase_max_area) << "\n"
      << "\n[run]\n"
      << "epochs = " << cfg.epochs << "\n"
      << "batch_size = " << cfg.batch_size << "\n"
      << "seed = " << cfg.seed << "\n"
      << "deterministic = " << (cfg.deterministic ? "true" : "false") << "\n"
      << "out_dir = " << cfg.out_dir << "\n";
  return out.str();
}

}  // namespace dan
