#include <cmath>
#include <vector>

#include "dan/afn.hpp"
#include "dan/gradcheck.hpp"
#include "dan/model.hpp"
#include "doctest.h"

using namespace dan;

TEST_CASE("scale_features symmetry anchors") {
  SUBCASE("two equal heads -> both entries -ln 2") {
    Tensor a = from_values({1, 2, 1}, {0.7, 0.7});
    Tensor v = scale_features(a);
    CHECK(v.at({0, 0, 0}) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    CHECK(v.at({0, 1, 0}) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("four equal heads -> -ln 4") {
    Tensor a = full({2, 4, 3}, -1.25);
    Tensor v = scale_features(a);
    for (double x : v.values()) CHECK(x == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("K=2, (0, ln 3) -> (-ln 4, ln 3 - ln 4)") {
    Tensor a = from_values({1, 2, 1}, {0.0, std::log(3.0)});
    Tensor v = scale_features(a);
    CHECK(v.at({0, 0, 0}) == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
    CHECK(v.at({0, 1, 0}) == doctest::Approx(std::log(3.0) - std::log(4.0)).epsilon(1e-12));
  }
}

TEST_CASE("scaled features exp-sum to one across heads and are non-positive") {
  Rng rng(90);
  Tensor a = uniform({3, 4, 5}, rng, -5.0, 5.0);
  Tensor v = scale_features(a);
  for (std::int64_t b = 0; b < 3; ++b)
    for (std::int64_t l = 0; l < 5; ++l) {
      double s = 0.0;
      for (std::int64_t j = 0; j < 4; ++j) {
        CHECK(v.at({b, j, l}) <= 0.0);
        s += std::exp(v.at({b, j, l}));
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("scale_features is shift invariant per (batch, l) column") {
  Rng rng(91);
  Tensor a = uniform({2, 3, 4}, rng, -1.0, 1.0);
  Tensor v = scale_features(a);
  Tensor shifted = from_values({2, 3, 4}, std::vector<double>(a.values().begin(), a.values().end()));
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t l = 0; l < 4; ++l) {
      const double c = 10.0 * static_cast<double>(b + 1) + static_cast<double>(l);
      for (std::int64_t j = 0; j < 3; ++j)
        shifted.mutable_values()[static_cast<std::size_t>((b * 3 + j) * 4 + l)] += c;
    }
  Tensor vs = scale_features(shifted);
  for (std::size_t i = 0; i < v.values().size(); ++i)
    CHECK(std::abs(vs.values()[i] - v.values()[i]) < 1e-10);
}

TEST_CASE("scale_features survives extreme magnitudes (max subtraction)") {
  Tensor a = from_values({1, 2, 1}, {1000.0, 1000.0 + std::log(3.0)});
  Tensor v = scale_features(a);
  CHECK(v.at({0, 0, 0}) == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
  CHECK(v.at({0, 1, 0}) == doctest::Approx(std::log(3.0) - std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("scale_features rejects non-finite inputs") {
  Tensor a = from_values({1, 2, 1}, {0.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(scale_features(a), ValueError);
}

TEST_CASE("partition loss hand anchors") {
  SUBCASE("v = (0, 2): sigma^2 = 1 -> ln 3") {
    Tensor v = from_values({1, 2, 1}, {0.0, 2.0});
    CHECK(partition_loss(v).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
  SUBCASE("v = (0, 4): sigma^2 = 4 -> ln 1.5, smaller") {
    Tensor v = from_values({1, 2, 1}, {0.0, 4.0});
    CHECK(partition_loss(v).item() == doctest::Approx(std::log(1.5)).epsilon(1e-12));
    CHECK(partition_loss(v).item() < std::log(3.0));
  }
  SUBCASE("collapsed heads hit the variance floor: K=4 -> ln(1 + 4e6)") {
    Tensor v = full({2, 4, 3}, -1.386294);
    const double want = std::log(1.0 + 4.0 / kPartitionVarFloor);
    CHECK(partition_loss(v).item() == doctest::Approx(want).epsilon(1e-12));
    CHECK(partition_loss(v).item() == doctest::Approx(15.2018).epsilon(1e-4));
  }
}

TEST_CASE("partition loss matches a brute-force oracle and stays positive") {
  Rng rng(92);
  for (int rep = 0; rep < 30; ++rep) {
    const std::int64_t B = 1 + static_cast<std::int64_t>(rng.below(3));
    const std::int64_t K = 2 + static_cast<std::int64_t>(rng.below(4));
    const std::int64_t L = 1 + static_cast<std::int64_t>(rng.below(5));
    Tensor v = uniform({B, K, L}, rng, -3.0, 3.0);
    double acc = 0.0;
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t l = 0; l < L; ++l) {
        double mean = 0.0;
        for (std::int64_t j = 0; j < K; ++j) mean += v.at({b, j, l});
        mean /= static_cast<double>(K);
        double var = 0.0;
        for (std::int64_t j = 0; j < K; ++j) {
          const double d = v.at({b, j, l}) - mean;
          var += d * d;
        }
        var /= static_cast<double>(K);
        acc += std::log(1.0 + static_cast<double>(K) / std::max(var, kPartitionVarFloor));
      }
    const double want = acc / static_cast<double>(B * L);
    const double got = partition_loss(v).item();
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    CHECK(got > 0.0);
  }
}

TEST_CASE("partition loss falls strictly as head variance grows") {
  Rng rng(93);
  Tensor v = uniform({2, 3, 4}, rng, -1.0, 1.0);
  const double base = partition_loss(v).item();
  // Widen every (b, l) column about its mean: variances scale by 4 everywhere.
  Tensor wide = from_values({2, 3, 4}, std::vector<double>(v.values().begin(), v.values().end()));
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t l = 0; l < 4; ++l) {
      double mean = 0.0;
      for (std::int64_t j = 0; j < 3; ++j) mean += v.at({b, j, l});
      mean /= 3.0;
      for (std::int64_t j = 0; j < 3; ++j) {
        auto& x = wide.mutable_values()[static_cast<std::size_t>((b * 3 + j) * 4 + l)];
        x = mean + 2.0 * (x - mean);
      }
    }
  CHECK(partition_loss(wide).item() < base);
}

TEST_CASE("partition loss rejects a single head with advice") {
  Tensor v = full({2, 1, 3}, 0.0);
  CHECK_THROWS_WITH_AS(partition_loss(v), doctest::Contains("lambda2"), ValueError);
}

TEST_CASE("fuse_and_classify sums heads then applies the affine map") {
  Rng rng(94);
  SUBCASE("K=1 applies the classifier to the single head") {
    Tensor v = uniform({2, 1, 4}, rng, -1.0, 1.0);
    Tensor w = uniform({3, 4}, rng, -1.0, 1.0);
    Tensor b = uniform({3}, rng, -1.0, 1.0);
    Tensor logits = fuse_and_classify(v, w, b);
    REQUIRE(logits.shape() == Shape{2, 3});
    for (std::int64_t i = 0; i < 2; ++i)
      for (std::int64_t o = 0; o < 3; ++o) {
        double want = b.at({o});
        for (std::int64_t l = 0; l < 4; ++l) want += w.at({o, l}) * v.at({i, 0, l});
        CHECK(logits.at({i, o}) == doctest::Approx(want).epsilon(1e-12));
      }
  }
  SUBCASE("identity classifier exposes the fused vector") {
    Tensor v = uniform({2, 3, 4}, rng, -1.0, 1.0);
    std::vector<double> eye(16, 0.0);
    for (int i = 0; i < 4; ++i) eye[static_cast<std::size_t>(i * 4 + i)] = 1.0;
    Tensor w = from_values({4, 4}, std::move(eye));
    Tensor b = zeros({4});
    Tensor logits = fuse_and_classify(v, w, b);
    for (std::int64_t i = 0; i < 2; ++i)
      for (std::int64_t l = 0; l < 4; ++l) {
        double fused = 0.0;
        for (std::int64_t j = 0; j < 3; ++j) fused += v.at({i, j, l});
        CHECK(std::abs(logits.at({i, l}) - fused) < 1e-12);
      }
  }
  SUBCASE("seeded case matches the sum-then-affine oracle") {
    Tensor v = uniform({3, 4, 5}, rng, -1.0, 1.0);
    Tensor w = uniform({2, 5}, rng, -1.0, 1.0);
    Tensor b = uniform({2}, rng, -1.0, 1.0);
    Tensor logits = fuse_and_classify(v, w, b);
    for (std::int64_t i = 0; i < 3; ++i)
      for (std::int64_t o = 0; o < 2; ++o) {
        double want = b.at({o});
        for (std::int64_t l = 0; l < 5; ++l) {
          double fused = 0.0;
          for (std::int64_t j = 0; j < 4; ++j) fused += v.at({i, j, l});
          want += w.at({o, l}) * fused;
        }
        CHECK(std::abs(logits.at({i, o}) - want) < 1e-12);
      }
  }
  SUBCASE("width mismatch is rejected") {
    Tensor v = uniform({2, 2, 4}, rng, -1.0, 1.0);
    Tensor w = uniform({3, 5}, rng, -1.0, 1.0);
    Tensor b = zeros({3});
    CHECK_THROWS_AS(fuse_and_classify(v, w, b), ShapeError);
  }
}

TEST_CASE("cross entropy anchors") {
  SUBCASE("uniform logits over 7 classes -> ln 7") {
    Tensor logits = full({3, 7}, 0.3);
    Tensor loss = cross_entropy(logits, {0, 4, 6});
    CHECK(loss.item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  }
  SUBCASE("dominant true logit saturates to ~0") {
    Tensor logits = zeros({1, 4});
    logits.mutable_values()[2] = 1000.0;
    Tensor loss = cross_entropy(logits, {2});
    CHECK(loss.item() >= 0.0);
    CHECK(loss.item() < 1e-12);
  }
  SUBCASE("seeded logits vs the direct softmax-then-log oracle") {
    Rng rng(95);
    for (int rep = 0; rep < 20; ++rep) {
      Tensor logits = uniform({4, 5}, rng, -4.0, 4.0);
      std::vector<int> labels;
      for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.below(5)));
      double want = 0.0;
      for (std::int64_t i = 0; i < 4; ++i) {
        double mx = logits.at({i, 0});
        for (std::int64_t c = 1; c < 5; ++c) mx = std::max(mx, logits.at({i, c}));
        double z = 0.0;
        for (std::int64_t c = 0; c < 5; ++c) z += std::exp(logits.at({i, c}) - mx);
        want += -(logits.at({i, labels[static_cast<std::size_t>(i)]}) - mx - std::log(z));
      }
      want /= 4.0;
      CHECK(cross_entropy(logits, labels).item() == doctest::Approx(want).epsilon(1e-12));
    }
  }
  SUBCASE("out-of-range label is rejected") {
    Tensor logits = zeros({2, 3});
    CHECK_THROWS_AS(cross_entropy(logits, {0, 3}), ValueError);
  }
}

TEST_CASE("total loss composes the three terms with the configured weights") {
  Tensor af = scalar(2.0);
  Tensor pt = scalar(std::log(3.0));
  Tensor cls = scalar(std::log(7.0));
  SUBCASE("unit weights reproduce the arithmetic anchor 5.044522") {
    LossWeights w;  // defaults 1.0 / 1.0
    CHECK(w.lambda1 == 1.0);
    CHECK(w.lambda2 == 1.0);
    Tensor total = total_loss(af, pt, cls, w);
    CHECK(total.item() == doctest::Approx(5.044522).epsilon(1e-6));
  }
  SUBCASE("zero weights sink to the classification term exactly") {
    LossWeights w;
    w.lambda1 = 0.0;
    w.lambda2 = 0.0;
    Tensor total = total_loss(af, pt, cls, w);
    CHECK(total.item() == cls.item());
  }
  SUBCASE("weights must be finite and non-negative") {
    LossWeights w;
    w.lambda1 = -0.5;
    CHECK_THROWS_AS(w.validate(), ConfigError);
    w.lambda1 = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(w.validate(), ConfigError);
  }
}

TEST_CASE("gradients of the AFN ops match finite differences") {
  Rng rng(96);
  SUBCASE("scale_features") {
    Tensor a = uniform({2, 3, 4}, rng, -1.0, 1.0, true);
    Tensor probe = uniform({2, 3, 4}, rng, -1.0, 1.0);
    auto report = gradcheck([&] { return sum(mul(scale_features(a), probe)); }, {{"a", a}});
    CHECK(report.passed);
  }
  SUBCASE("partition_loss") {
    Tensor v = uniform({2, 3, 4}, rng, -1.0, 1.0, true);
    auto report = gradcheck([&] { return partition_loss(v); }, {{"v", v}});
    CHECK(report.passed);
  }
  SUBCASE("cross_entropy") {
    Tensor logits = uniform({3, 5}, rng, -2.0, 2.0, true);
    std::vector<int> labels{1, 4, 0};
    auto report = gradcheck([&] { return cross_entropy(logits, labels); }, {{"logits", logits}});
    CHECK(report.passed);
  }
  SUBCASE("fuse_and_classify") {
    Tensor v = uniform({2, 3, 4}, rng, -1.0, 1.0, true);
    Tensor w = uniform({3, 4}, rng, -1.0, 1.0, true);
    Tensor b = uniform({3}, rng, -1.0, 1.0, true);
    Tensor probe = uniform({2, 3}, rng, -1.0, 1.0);
    auto report = gradcheck([&] { return sum(mul(fuse_and_classify(v, w, b), probe)); },
                            {{"v", v}, {"w", w}, {"b", b}});
    CHECK(report.passed);
  }
}

TEST_CASE("full model forward wires every component together") {
  DanModel model = make_dan_model(BackbonePlan::mini(), 2, 3, 123);
  Rng rng(97);
  Tensor images = uniform({4, 3, 8, 8}, rng, 0.0, 1.0);
  std::vector<int> labels{0, 1, 2, 1};
  LossWeights w;
  DanForward out = model.forward(images, labels, w, true, false);

  CHECK(out.feature_map.shape() == Shape{4, 8, 4, 4});
  CHECK(out.features.shape() == Shape{4, 8});
  CHECK(out.man.vectors.shape() == Shape{4, 2, 8});
  CHECK(out.v.shape() == Shape{4, 2, 8});
  CHECK(out.logits.shape() == Shape{4, 3});
  CHECK(std::isfinite(out.total.item()));
  // The weighted identity holds by construction.
  CHECK(out.total.item() ==
        doctest::Approx(w.lambda1 * out.af.item() + w.lambda2 * out.pt.item() + out.cls.item())
            .epsilon(1e-12));

  SUBCASE("K=1 model pins the partition term to zero") {
    DanModel m1 = make_dan_model(BackbonePlan::mini(), 1, 3, 124);
    LossWeights w1;
    w1.lambda2 = 0.0;
    DanForward o1 = m1.forward(images, labels, w1, true, false);
    CHECK(o1.pt.item() == 0.0);
    CHECK(o1.total.item() == doctest::Approx(w1.lambda1 * o1.af.item() + o1.cls.item()).epsilon(1e-12));
  }
}

TEST_CASE("end-to-end gradient of the joint loss matches finite differences") {
  DanModel model = make_dan_model(BackbonePlan::mini(), 2, 3, 321);
  Rng rng(98);
  Tensor images = uniform({3, 3, 8, 8}, rng, 0.0, 1.0);
  std::vector<int> labels{2, 0, 1};
  LossWeights w;

  auto params = model.named_params();
  GradCheckOptions opts;
  opts.max_entries_per_param = 4;
  opts.rng = &rng;
  auto report = gradcheck(
      [&] {
        DanForward out = model.forward(images, labels, w, true, false);
        return out.total;
      },
      params, opts);
  CAPTURE(report.worst.param);
  CAPTURE(report.worst.index);
  CAPTURE(report.max_rel_err);
  CHECK(report.passed);
}
