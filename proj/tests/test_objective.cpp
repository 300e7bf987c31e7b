#include <doctest.h>

#include <cmath>

#include "mcinet/objective.hpp"
#include "support.hpp"

using namespace mcinet;
using testing::TD;
using testing::VD;

namespace {

double bce_oracle(const TD& z, const TD& m) {
  double sum = 0;
  for (Index i = 0; i < z.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-z[i]));
    sum += -(m[i] * std::log(s) + (1 - m[i]) * std::log(1 - s));
  }
  return sum / static_cast<double>(z.size());
}

Mask mask_from(std::initializer_list<std::initializer_list<int>> rows) {
  Mask m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index r = 0;
  for (const auto& row : rows) {
    Index c = 0;
    for (int v : row) m(r, c++) = static_cast<std::uint8_t>(v);
    ++r;
  }
  return m;
}

MaskLogits<double> logits_for(const TD& large, const TD& small) { return {VD::constant(small), VD::constant(large)}; }

}  // namespace

TEST_SUITE("bce") {
  TEST_CASE("analytic values and saturation") {
    CHECK(bce(VD::constant(TD({1, 1, 1, 1})), TD({1, 1, 1, 1}, 1.0)).value().item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    const double sat = bce(VD::constant(TD({1, 1, 1, 1}, 50.0)), TD({1, 1, 1, 1}, 1.0)).value().item();
    CHECK(std::isfinite(sat));
    CHECK(sat < 1e-20);
    for (double z : {-1e4, 1e4}) {
      CHECK(std::isfinite(bce(VD::constant(TD({1, 1, 1, 1}, z)), TD({1, 1, 1, 1}, 1.0)).value().item()));
      CHECK(std::isfinite(bce(VD::constant(TD({1, 1, 1, 1}, z)), TD({1, 1, 1, 1}, 0.0)).value().item()));
    }
  }

  TEST_CASE("random 3x3 instances match the per-pixel formula") {
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
      const TD z = oracle::random_tensor({1, 1, 3, 3}, rng, -6, 6), m = oracle::random_tensor({1, 1, 3, 3}, rng, 0, 1);
      CHECK(bce(VD::constant(z), m).value().item() == doctest::Approx(bce_oracle(z, m)).epsilon(1e-9));
    }
  }

  TEST_CASE("increasing a foreground logit never increases the loss") {
    TD m({1, 1, 1, 1}, 1.0);
    double prev = INFINITY;
    for (double z = -30; z <= 30; z += 0.5) {
      const double l = bce(VD::constant(TD({1, 1, 1, 1}, z)), m).value().item();
      CHECK(l <= prev);
      prev = l;
    }
  }

  TEST_CASE("targets outside [0, 1] and shape mismatches are rejected") {
    CHECK_THROWS_AS(bce(VD::constant(TD({1, 1, 2, 2})), TD({1, 1, 2, 2}, 1.5)), ValidationError);
    CHECK_THROWS_AS(bce(VD::constant(TD({1, 1, 2, 2})), TD({1, 1, 2, 3})), ShapeError);
  }
}

TEST_SUITE("total_loss") {
  TEST_CASE("two-term algebra is exact") {
    Rng rng(4);
    const TD large = oracle::random_tensor({1, 1, 8, 8}, rng, -3, 3), small = oracle::random_tensor({1, 1, 2, 2}, rng, -3, 3);
    TD mask({1, 1, 8, 8});
    for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.4;
    for (double lambda : {0.0, 0.6, 1.0, 2.5}) {
      const auto loss = total_loss(logits_for(large, small), mask, lambda);
      const auto b = loss.breakdown();
      CHECK(b.total == b.large_bce + lambda * b.small_bce);
      CHECK(b.lambda == lambda);
      if (lambda == 0.0) CHECK(b.total == b.large_bce);
    }
  }

  TEST_CASE("small target is the area average of the mask") {
    TD mask({1, 1, 4, 4});
    mask[0] = 1;  // one pixel in the top-left 2x2 block
    const auto loss = total_loss(logits_for(TD({1, 1, 4, 4}), TD({1, 1, 2, 2})), mask, 1.0);
    // zero logits: bce = ln 2 regardless of a soft target
    CHECK(loss.small.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    TD small({1, 1, 2, 2});
    small[0] = 1.0;
    TD target({1, 1, 2, 2});
    target[0] = 0.25;
    const auto l2 = total_loss(logits_for(TD({1, 1, 4, 4}), small), mask, 1.0);
    CHECK(l2.small.value().item() == doctest::Approx(bce_oracle(small, target)).epsilon(1e-12));
  }

  TEST_CASE("perfect saturated predictions give a vanishing loss") {
    TD mask({1, 1, 8, 8});
    for (Index r = 0; r < 8; ++r)
      for (Index c = 0; c < 8; ++c) mask[r * 8 + c] = (r < 4 && c < 4) ? 1.0 : 0.0;
    TD large(mask.shape()), small({1, 1, 2, 2}, -50.0);
    for (Index i = 0; i < mask.size(); ++i) large[i] = mask[i] > 0 ? 50.0 : -50.0;
    small[0] = 50.0;
    CHECK(total_loss(logits_for(large, small), mask, 0.6).breakdown().total < 1e-10);
  }

  TEST_CASE("negative lambda is a configuration error") {
    CHECK_THROWS_AS(total_loss(logits_for(TD({1, 1, 4, 4}), TD({1, 1, 1, 1})), TD({1, 1, 4, 4}), -0.1), ConfigError);
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("hand-enumerated IoU cases") {
    const Mask gt = mask_from({{1, 0}, {1, 0}});
    CHECK(foreground_counts(gt, gt).iou() == 1.0);
    CHECK(foreground_counts(mask_from({{0, 1}, {0, 1}}), gt).iou() == 0.0);
    const auto c = foreground_counts(mask_from({{1, 1}, {0, 0}}), gt);
    CHECK(c.intersection == 1);
    CHECK(c.union_ == 3);
    CHECK(c.iou() == 1.0 / 3.0);
    const Mask empty = Mask::Zero(2, 2);
    CHECK(foreground_counts(empty, empty).iou() == 1.0);
    CHECK(foreground_counts(gt, empty).iou() == 0.0);
  }

  TEST_CASE("miou pools counts per class and averages the present classes") {
    const std::vector<Mask> preds{mask_from({{1, 1}, {0, 0}}), mask_from({{1, 0}, {0, 0}}), mask_from({{0, 0}, {0, 1}})};
    const std::vector<Mask> gts{mask_from({{1, 0}, {1, 0}}), mask_from({{1, 0}, {0, 0}}), mask_from({{0, 0}, {1, 1}})};
    // class 4: episodes 0 and 1 pooled -> (1 + 1) / (3 + 1); class 5: 1 / 2
    const double want = (2.0 / 4.0 + 1.0 / 2.0) / 2.0;
    CHECK(miou(preds, gts, {4, 4, 5}, {4, 5, 6, 7}) == want);
    CHECK(miou({preds[2], preds[0], preds[1]}, {gts[2], gts[0], gts[1]}, {5, 4, 4}, {4, 5, 6, 7}) == want);
    CHECK_THROWS_AS(miou(preds, gts, {4, 4, 9}, {4, 5, 6, 7}), ValidationError);
  }

  TEST_CASE("fb_iou: perfect, inverted and a two-episode enumeration") {
    const Mask a = mask_from({{1, 0}, {0, 0}}), b = mask_from({{1, 1}, {0, 1}});
    CHECK(fb_iou({a, b}, {a, b}) == 1.0);
    CHECK(fb_iou({Mask::Ones(2, 2)}, {Mask::Zero(2, 2)}) == 0.0);
    // episode 1: pred a vs gt b; episode 2: pred b vs gt a
    // fg: inter 1 + 1, union 3 + 3; bg: inter 1 + 1, union 3 + 3
    CHECK(fb_iou({a, b}, {b, a}) == doctest::Approx(0.5 * (2.0 / 6.0 + 2.0 / 6.0)).epsilon(1e-15));
    CHECK_THROWS_AS(fb_iou({}, {}), ValidationError);
  }

  TEST_CASE("accumulator merge equals sequential accumulation") {
    Rng rng(5);
    MetricAccumulator whole({0, 1, 2}), left({0, 1, 2}), right({0, 1, 2});
    for (int i = 0; i < 12; ++i) {
      Mask p(4, 4), g(4, 4);
      for (Index j = 0; j < 16; ++j) {
        p.data()[j] = rng.uniform() < 0.5;
        g.data()[j] = rng.uniform() < 0.5;
      }
      whole.add(i % 3, p, g);
      (i < 5 ? left : right).add(i % 3, p, g);
    }
    left.merge(right);
    const auto a = whole.report(), b = left.report();
    CHECK(a.miou == b.miou);
    CHECK(a.fb_iou == b.fb_iou);
    CHECK(a.per_class_iou == b.per_class_iou);
    CHECK(b.episodes == 12);
    for (const auto& [c, v] : a.per_class_iou) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(whole.add(7, Mask::Zero(4, 4), Mask::Zero(4, 4)), ValidationError);
  }

  TEST_CASE("threshold at zero logit") {
    TD z({1, 1, 1, 3});
    z.data() << -1e-9, 0.0, 2.0;
    const Mask m = threshold_logits(z.cast<float>());
    CHECK(m(0, 0) == 0);
    CHECK(m(0, 1) == 1);
    CHECK(m(0, 2) == 1);
  }
}
