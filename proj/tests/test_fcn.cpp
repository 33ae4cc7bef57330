#include <cmath>
#include <vector>

#include "dan/fcn.hpp"
#include "dan/gradcheck.hpp"
#include "doctest.h"

using namespace dan;

TEST_CASE("backbone plans produce the architecture-forced shapes") {
  NoGradGuard no_grad;
  Rng rng(51);

  SUBCASE("toy: 32x32 -> 128 channels at 4x4") {
    Backbone bb = make_backbone(BackbonePlan::toy(), rng);
    Tensor x = uniform({2, 3, 32, 32}, rng, 0.0, 1.0);
    Tensor y = bb.forward(x, false, false);
    CHECK(y.shape() == Shape{2, 128, 4, 4});
  }

  SUBCASE("mini: 8x8 -> 8 channels at 4x4") {
    Backbone bb = make_backbone(BackbonePlan::mini(), rng);
    Tensor x = uniform({2, 3, 8, 8}, rng, 0.0, 1.0);
    Tensor y = bb.forward(x, false, false);
    CHECK(y.shape() == Shape{2, 8, 4, 4});
  }

  SUBCASE("resnet18: 224x224 -> 512 channels at 7x7") {
    Backbone bb = make_backbone(BackbonePlan::resnet18(), rng);
    Tensor x = uniform({1, 3, 224, 224}, rng, 0.0, 1.0);
    Tensor y = bb.forward(x, false, false);
    CHECK(y.shape() == Shape{1, 512, 7, 7});
  }
}

TEST_CASE("backbone rejects spatial sizes the stride plan cannot divide") {
  Rng rng(52);
  Backbone bb = make_backbone(BackbonePlan::toy(), rng);
  Tensor x = uniform({1, 3, 30, 30}, rng, 0.0, 1.0);
  CHECK_THROWS_AS(bb.forward(x, false, false), ConfigError);
}

TEST_CASE("zero-initialized final block passes the skip branch through unchanged") {
  // Same-width, stride-1 plan so every block has an identity skip.
  BackbonePlan full_plan;
  full_plan.name = "two-stage";
  full_plan.stem_channels = 4;
  full_plan.stage_channels = {4, 4};
  full_plan.stage_blocks = {1, 1};
  full_plan.stage_strides = {1, 1};
  BackbonePlan trunc_plan = full_plan;
  trunc_plan.stage_channels = {4};
  trunc_plan.stage_blocks = {1};
  trunc_plan.stage_strides = {1};

  Rng rng(53);
  Backbone full_bb = make_backbone(full_plan, rng);
  // Zero the final block's residual branch.
  auto zero_fill = [](Tensor& t) { std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0); };
  zero_fill(full_bb.stages[1][0].conv1.w);
  zero_fill(full_bb.stages[1][0].conv2.w);

  // Reference: the same network truncated before the final block.
  Rng rng2(53);
  Backbone trunc_bb = make_backbone(trunc_plan, rng2);
  auto copy_into = [](Tensor& dst, const Tensor& src) {
    auto d = dst.mutable_values();
    auto s = src.values();
    REQUIRE(d.size() == s.size());
    std::copy(s.begin(), s.end(), d.begin());
  };
  copy_into(trunc_bb.stem.w, full_bb.stem.w);
  copy_into(trunc_bb.stem.gamma, full_bb.stem.gamma);
  copy_into(trunc_bb.stem.beta, full_bb.stem.beta);
  copy_into(trunc_bb.stages[0][0].conv1.w, full_bb.stages[0][0].conv1.w);
  copy_into(trunc_bb.stages[0][0].conv1.gamma, full_bb.stages[0][0].conv1.gamma);
  copy_into(trunc_bb.stages[0][0].conv1.beta, full_bb.stages[0][0].conv1.beta);
  copy_into(trunc_bb.stages[0][0].conv2.w, full_bb.stages[0][0].conv2.w);
  copy_into(trunc_bb.stages[0][0].conv2.gamma, full_bb.stages[0][0].conv2.gamma);
  copy_into(trunc_bb.stages[0][0].conv2.beta, full_bb.stages[0][0].conv2.beta);

  NoGradGuard no_grad;
  Rng data_rng(54);
  Tensor x = uniform({2, 3, 8, 8}, data_rng, 0.0, 1.0);
  Tensor y_full = full_bb.forward(x, true, false);
  Tensor y_skip = trunc_bb.forward(x, true, false);
  REQUIRE(y_full.shape() == y_skip.shape());
  for (std::size_t i = 0; i < y_full.values().size(); ++i)
    CHECK(y_full.values()[i] == y_skip.values()[i]);  // bitwise: the block adds exactly zero
}

TEST_CASE("backbone parameter count is a pure function of the plan") {
  Rng a(55), b(56);
  auto count = [](Backbone& bb) {
    std::int64_t n = 0;
    bb.visit_params([&](const std::string&, Tensor& t) { n += t.numel(); });
    return n;
  };
  Backbone bb1 = make_backbone(BackbonePlan::toy(), a);
  Backbone bb2 = make_backbone(BackbonePlan::toy(), b);
  CHECK(count(bb1) == count(bb2));
  CHECK(count(bb1) > 0);
}

TEST_CASE("pooled_features flattens the spatial plane") {
  Rng rng(57);
  SUBCASE("1x1 maps copy through") {
    Tensor x = uniform({3, 5, 1, 1}, rng, -1.0, 1.0);
    Tensor p = pooled_features(x);
    REQUIRE(p.shape() == Shape{3, 5});
    for (std::int64_t b = 0; b < 3; ++b)
      for (std::int64_t c = 0; c < 5; ++c) CHECK(p.at({b, c}) == x.at({b, c, 0, 0}));
  }
  SUBCASE("constant planes give the constant") {
    Tensor x = full({2, 3, 4, 4}, 0.875);
    Tensor p = pooled_features(x);
    for (double v : p.values()) CHECK(v == 0.875);
  }
  SUBCASE("random input matches the mean oracle") {
    Tensor x = uniform({2, 4, 3, 3}, rng, -1.0, 1.0);
    Tensor p = pooled_features(x);
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t c = 0; c < 4; ++c) {
        double acc = 0.0;
        for (std::int64_t h = 0; h < 3; ++h)
          for (std::int64_t w = 0; w < 3; ++w) acc += x.at({b, c, h, w});
        CHECK(p.at({b, c}) == doctest::Approx(acc / 9.0).epsilon(1e-14));
      }
  }
}

TEST_CASE("center_std hand-computed anchor: D=1, centers {0,2} -> 1.0") {
  Tensor c = from_values({1, 2}, {0.0, 2.0});
  CHECK(center_std(c).item() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("identical centers floor the spread at 1e-8") {
  Tensor c = full({4, 3}, 2.5);
  CHECK(center_std(c).item() == doctest::Approx(1e-8).epsilon(1e-12));
}

TEST_CASE("center_std is translation invariant") {
  Rng rng(58);
  Tensor c = uniform({5, 4}, rng, -1.0, 1.0);
  const double base = center_std(c).item();
  Tensor shifted = from_values({5, 4}, std::vector<double>(c.values().begin(), c.values().end()));
  for (std::int64_t d = 0; d < 5; ++d) {
    const double offset = 3.7 + static_cast<double>(d);  // constant per dimension
    for (std::int64_t y = 0; y < 4; ++y)
      shifted.mutable_values()[static_cast<std::size_t>(d * 4 + y)] += offset;
  }
  CHECK(center_std(shifted).item() == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("center_std requires at least two classes") {
  Tensor c = full({4, 1}, 1.0);
  CHECK_THROWS_AS(center_std(c), ValueError);
}

TEST_CASE("affinity loss vanishes when features sit on their centers") {
  Tensor centers = from_values({2, 3}, {0, 1, 2, 3, 4, 5});  // distinct columns
  std::vector<int> labels{0, 2, 1};
  std::vector<double> feats;
  for (int lab : labels) {
    feats.push_back(centers.at({0, lab}));
    feats.push_back(centers.at({1, lab}));
  }
  Tensor features = from_values({3, 2}, std::move(feats));
  CHECK(affinity_loss(features, labels, centers).item() == 0.0);
}

TEST_CASE("affinity loss hand anchor: N=2, D=1, centers (0,2), features (1,1) -> 2.0") {
  Tensor centers = from_values({1, 2}, {0.0, 2.0});
  Tensor features = from_values({2, 1}, {1.0, 1.0});
  Tensor loss = affinity_loss(features, {0, 1}, centers);
  CHECK(loss.item() == doctest::Approx(2.0).epsilon(1e-12));

  SUBCASE("jointly scaling features and centers by 10 leaves the value") {
    Tensor c10 = from_values({1, 2}, {0.0, 20.0});
    Tensor f10 = from_values({2, 1}, {10.0, 10.0});
    CHECK(affinity_loss(f10, {0, 1}, c10).item() == doctest::Approx(2.0).epsilon(1e-10));
  }
}

TEST_CASE("affinity loss is scale invariant and non-negative") {
  Rng rng(59);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor centers = uniform({4, 3}, rng, -1.0, 1.0);
    Tensor features = uniform({5, 4}, rng, -1.0, 1.0);
    std::vector<int> labels;
    for (int i = 0; i < 5; ++i) labels.push_back(static_cast<int>(rng.below(3)));
    const double base = affinity_loss(features, labels, centers).item();
    CHECK(base >= 0.0);
    for (double t : {0.5, 10.0, 1000.0}) {
      Tensor cs = mul_scalar(centers, t);
      Tensor fs = mul_scalar(features, t);
      const double scaled = affinity_loss(fs, labels, cs).item();
      CHECK(std::abs(scaled - base) / std::max(1.0, std::abs(base)) < 1e-8);
    }
  }
}

TEST_CASE("affinity loss rejects out-of-range labels, naming the offender") {
  Rng rng(60);
  Tensor centers = uniform({2, 3}, rng, -1.0, 1.0);
  Tensor features = uniform({2, 2}, rng, -1.0, 1.0);
  CHECK_THROWS_WITH_AS(affinity_loss(features, {0, 3}, centers),
                       doctest::Contains("index 3"), ValueError);
}

TEST_CASE("affinity loss gradient flows through numerator and sigma_c") {
  Rng rng(61);
  Tensor centers = uniform({3, 4}, rng, -1.0, 1.0, true);
  Tensor features = uniform({4, 3}, rng, -1.0, 1.0, true);
  std::vector<int> labels{1, 0, 3, 2};
  auto report = gradcheck([&] { return affinity_loss(features, labels, centers); },
                          {{"features", features}, {"centers", centers}});
  CHECK(report.passed);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("one descent step on the affinity loss tightens clusters") {
  Rng rng(62);
  Tensor centers = uniform({6, 3}, rng, -1.0, 1.0, true);
  Tensor features = uniform({9, 6}, rng, -1.0, 1.0, true);
  std::vector<int> labels;
  for (int i = 0; i < 9; ++i) labels.push_back(i % 3);

  // Center-normalized distance (distance in units of sigma_c): the gradient on the
  // centers both pulls them toward their features and pushes them apart (the sigma_c
  // term), so the raw distance need not shrink — the normalized one does.
  auto normalized_distance = [&] {
    NoGradGuard ng;
    Tensor own = take_columns(centers, labels);
    Tensor diff = sub(features, own);
    double acc = 0.0;
    Tensor sq = mul(diff, diff);
    for (std::int64_t i = 0; i < 9; ++i) {
      double row = 0.0;
      for (std::int64_t d = 0; d < 6; ++d) row += sq.at({i, d});
      acc += std::sqrt(row);
    }
    return acc / 9.0 / center_std(centers).item();
  };

  const double before = normalized_distance();
  Tensor loss = affinity_loss(features, labels, centers);
  const double loss_before = loss.item();
  backward(loss);
  const double lr = 1e-3;
  for (Tensor* t : {&features, &centers}) {
    auto v = t->mutable_values();
    auto g = t->grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
  const double after = normalized_distance();
  CHECK(after < before);
  NoGradGuard ng;
  CHECK(affinity_loss(features, labels, centers).item() < loss_before);
}
