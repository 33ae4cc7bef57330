#include "dan/model.hpp"

#include <cmath>

namespace dan {

std::vector<std::pair<std::string, Tensor>> DanModel::named_params() {
  std::vector<std::pair<std::string, Tensor>> out;
  backbone.visit_params([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  for (std::size_t j = 0; j < heads.size(); ++j) {
    const std::string p = "man.head" + std::to_string(j);
    auto add = [&](const std::string& suffix, Tensor& t) { out.emplace_back(p + suffix, t); };
    add(".spatial.reduce.w", heads[j].spatial.w_reduce);
    add(".spatial.reduce.b", heads[j].spatial.b_reduce);
    add(".spatial.c3x3.w", heads[j].spatial.w_3x3);
    add(".spatial.c3x3.b", heads[j].spatial.b_3x3);
    add(".spatial.c1x3.w", heads[j].spatial.w_1x3);
    add(".spatial.c1x3.b", heads[j].spatial.b_1x3);
    add(".spatial.c3x1.w", heads[j].spatial.w_3x1);
    add(".spatial.c3x1.b", heads[j].spatial.b_3x1);
    add(".channel.squeeze.w", heads[j].channel.w_squeeze);
    add(".channel.squeeze.b", heads[j].channel.b_squeeze);
    add(".channel.excite.w", heads[j].channel.w_excite);
    add(".channel.excite.b", heads[j].channel.b_excite);
  }
  out.emplace_back("centers.c", centers.c);
  out.emplace_back("classifier.w", cls_w);
  out.emplace_back("classifier.b", cls_b);
  return out;
}

std::vector<std::pair<std::string, Tensor>> DanModel::named_buffers() {
  std::vector<std::pair<std::string, Tensor>> out;
  backbone.visit_buffers([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::int64_t DanModel::param_count() {
  std::int64_t n = 0;
  for (auto& [name, t] : named_params()) n += t.numel();
  return n;
}

DanPrediction DanModel::predict(const Tensor& images, bool training, bool update_running) {
  DanPrediction p;
  p.feature_map = backbone.forward(images, training, update_running);
  p.features = pooled_features(p.feature_map);
  p.man = man_forward(p.feature_map, heads);
  p.v = scale_features(p.man.vectors);
  p.logits = fuse_and_classify(p.v, cls_w, cls_b);
  return p;
}

DanForward DanModel::forward(const Tensor& images, const std::vector<int>& labels,
                             const LossWeights& w, bool training, bool update_running) {
  DanPrediction p = predict(images, training, update_running);
  DanForward f;
  f.feature_map = p.feature_map;
  f.features = p.features;
  f.man = p.man;
  f.v = p.v;
  f.logits = p.logits;
  f.af = affinity_loss(f.features, labels, centers.c);
  f.pt = (k >= 2) ? partition_loss(f.v) : scalar(0.0);
  f.cls = cross_entropy(f.logits, labels);
  f.total = total_loss(f.af, f.pt, f.cls, w);
  return f;
}

DanModel make_dan_model(const BackbonePlan& plan, std::int64_t k, std::int64_t num_classes,
                        std::uint64_t seed) {
  plan.validate();
  if (k < 1) throw ConfigError("head count must be >= 1, got " + std::to_string(k));
  if (num_classes < 2) throw ConfigError("need at least 2 classes, got " + std::to_string(num_classes));
  Rng rng(Rng::derive(seed, 0x6d6f64656cULL));  // model-init stream
  DanModel m;
  m.plan = plan;
  m.k = k;
  m.num_classes = num_classes;
  m.backbone = make_backbone(plan, rng);
  const std::int64_t d = plan.feature_dim();
  m.heads = make_heads(k, d, rng);
  m.centers = make_centers(d, num_classes, rng);
  m.cls_w = randn({num_classes, d}, rng, std::sqrt(1.0 / static_cast<double>(d)), true);
  m.cls_b = zeros({num_classes}, true);
  return m;
}

}  // namespace dan
