#include <doctest.h>

#include <cmath>

#include "apd/losses.hpp"

using namespace apd;

TEST_CASE("change loss at a uniform half prediction equals ln 2") {
  LabelMap p(3, 3), y(3, 3);
  p.data.setConstant(0.5);
  y.at(1, 1) = 1;
  CHECK(change_loss(p, y) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("change loss matches a per-pixel hand computation") {
  LabelMap p(1, 2), y(1, 2);
  p.data << 0.8, 0.3;
  y.data << 1.0, 0.0;
  const double want = (-std::log(0.8) - std::log(0.7)) / 2.0;
  CHECK(change_loss(p, y) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("margin comparative loss is zero for changed pixels on the margin") {
  // two pixels, both changed, embedding distance exactly gamma
  FeatureMap f0(2, 1, 2), f1(2, 1, 2);
  f0.data << 1, 0, 0, 1;
  f1.data << 0, 0, 0, 0;  // distance 1 at both pixels
  LabelMap y(1, 2);
  y.data << 1, 1;
  CHECK(comparative_loss(f0, f1, y, 1.0, ComparativeForm::kMargin) ==
        doctest::Approx(0.0));
}

TEST_CASE("margin comparative loss matches its formula") {
  FeatureMap f0(1, 1, 3), f1(1, 1, 3);
  f0.data << 0.2, 3.0, 1.0;
  f1.data << 0.0, 0.0, 0.0;
  LabelMap y(1, 3);
  y.data << 1, 1, 0;  // d = 0.2 (changed), 3.0 (changed), 1.0 (unchanged)
  const double want = ((1.0 - 0.2) + 0.0 + 1.0) / 3.0;
  CHECK(comparative_loss(f0, f1, y, 1.0, ComparativeForm::kMargin) ==
        doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("literal comparative form penalizes distance beyond the margin") {
  FeatureMap f0(1, 1, 3), f1(1, 1, 3);
  f0.data << 0.2, 3.0, 1.0;
  f1.data << 0.0, 0.0, 0.0;
  LabelMap y(1, 3);
  y.data << 1, 1, 0;
  const double want = (0.0 + (3.0 - 1.0) + 1.0) / 3.0;
  CHECK(comparative_loss(f0, f1, y, 1.0, ComparativeForm::kLiteral) ==
        doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("total loss applies the two weights") {
  LossConfig cfg;
  cfg.lambda1 = 0.5;
  cfg.lambda2 = 2.0;
  CHECK(total_loss(1.0, {0.25, 0.75}, 3.0, cfg) ==
        doctest::Approx(1.0 + 0.5 * 1.0 + 2.0 * 3.0).epsilon(1e-12));
}

TEST_CASE("zero weights degenerate the total to the change loss") {
  LossConfig cfg;
  cfg.lambda1 = 0.0;
  cfg.lambda2 = 0.0;
  CHECK(total_loss(0.7, {10.0, 20.0}, 99.0, cfg) == doctest::Approx(0.7));
}

TEST_CASE("negative loss parts are rejected") {
  LossConfig cfg;
  CHECK_THROWS_AS(total_loss(-0.1, {}, 0.0, cfg), std::logic_error);
  CHECK_THROWS_AS(total_loss(0.1, {-1.0}, 0.0, cfg), std::logic_error);
  CHECK_THROWS_AS(total_loss(0.1, {}, -2.0, cfg), std::logic_error);
}

TEST_CASE("dice loss vanishes on a perfect binary match") {
  LabelMap m(2, 2), y(2, 2);
  m.at(0, 0) = m.at(1, 1) = 1;
  y.at(0, 0) = y.at(1, 1) = 1;
  CHECK(dice_loss(m, y) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("dice loss matches a hand computation") {
  LabelMap m(1, 2), y(1, 2);
  m.data << 0.5, 0.5;
  y.data << 1.0, 0.0;
  // 1 - (2*0.5 + 1) / (1 + 1 + 1)
  CHECK(dice_loss(m, y) == doctest::Approx(1.0 - 2.0 / 3.0).epsilon(1e-12));
}
