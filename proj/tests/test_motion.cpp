#include <gtest/gtest.h>

#include <cmath>

#include "lcdc/motion.hpp"
#include "lcdc/rng.hpp"

using lcdc::DenseOffsets;
using lcdc::KernelSpec;
using lcdc::LocalOffsets;
using lcdc::MotionField;
using lcdc::MultilinearCoeffs;
using lcdc::Tensor;

namespace {

Tensor random_tensor(const std::vector<std::size_t>& shape, lcdc::Xorshift64Star& rng,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(ReceptiveFieldDiffTest, ConstantOverTimeIsExactlyZero) {
  // The standard/dilated degenerate cases: identical offsets across frames
  // carry no temporal information.
  lcdc::Xorshift64Star rng(31);
  const Tensor f = random_tensor({4, 5, 2, 9, 2}, rng);
  const Tensor d = lcdc::receptive_field_diff(DenseOffsets(f), DenseOffsets(f));
  for (std::size_t i = 0; i < d.numel(); ++i) EXPECT_EQ(d[i], 0.0);
}

TEST(ReceptiveFieldDiffTest, ConstantShiftRecovered) {
  lcdc::Xorshift64Star rng(32);
  const Tensor prev = random_tensor({3, 3, 1, 4, 2}, rng);
  Tensor now(prev.shape());
  for (std::size_t i = 0; i < prev.numel(); ++i) now[i] = prev[i] + 0.25;
  const Tensor d = lcdc::receptive_field_diff(DenseOffsets(now), DenseOffsets(prev));
  for (std::size_t i = 0; i < d.numel(); ++i) EXPECT_DOUBLE_EQ(d[i], 0.25);
}

TEST(ReceptiveFieldDiffTest, MatchesElementwiseOracle) {
  lcdc::Xorshift64Star rng(33);
  const Tensor a = random_tensor({4, 4, 2, 9, 2}, rng);
  const Tensor b = random_tensor({4, 4, 2, 9, 2}, rng);
  const Tensor d = lcdc::receptive_field_diff(DenseOffsets(a), DenseOffsets(b));
  for (std::size_t i = 0; i < d.numel(); ++i) EXPECT_EQ(d[i], a[i] - b[i]);
}

TEST(LocalMotionTest, ZeroAndConstant) {
  lcdc::Xorshift64Star rng(34);
  const Tensor f = random_tensor({5, 5, 2}, rng);
  const MotionField zero = lcdc::local_motion(LocalOffsets(f), LocalOffsets(f));
  for (std::size_t i = 0; i < zero.tensor().numel(); ++i) EXPECT_EQ(zero.tensor()[i], 0.0);

  Tensor g(f.shape());
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      g.at(r, c, 0) = f.at(r, c, 0) + 3.0;
      g.at(r, c, 1) = f.at(r, c, 1) + 4.0;
    }
  const MotionField m = lcdc::local_motion(LocalOffsets(g), LocalOffsets(f));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_DOUBLE_EQ(m.row(r, c), 3.0);
      EXPECT_DOUBLE_EQ(m.col(r, c), 4.0);
    }
}

TEST(LocalMotionTest, Antisymmetry) {
  lcdc::Xorshift64Star rng(35);
  const Tensor a = random_tensor({4, 6, 2}, rng);
  const Tensor b = random_tensor({4, 6, 2}, rng);
  const MotionField ab = lcdc::local_motion(LocalOffsets(a), LocalOffsets(b));
  const MotionField ba = lcdc::local_motion(LocalOffsets(b), LocalOffsets(a));
  for (std::size_t i = 0; i < ab.tensor().numel(); ++i)
    EXPECT_EQ(ab.tensor()[i], -ba.tensor()[i]);
}

TEST(LocalMotionTest, TelescopingSum) {
  lcdc::Xorshift64Star rng(36);
  std::vector<Tensor> fields;
  for (int t = 0; t < 6; ++t) fields.push_back(random_tensor({3, 4, 2}, rng));
  Tensor sum({3, 4, 2});
  for (int t = 1; t < 6; ++t) {
    const MotionField m = lcdc::local_motion(LocalOffsets(fields[t]), LocalOffsets(fields[t - 1]));
    for (std::size_t i = 0; i < sum.numel(); ++i) sum[i] += m.tensor()[i];
  }
  for (std::size_t i = 0; i < sum.numel(); ++i)
    EXPECT_NEAR(sum[i], fields[5][i] - fields[0][i], 1e-12);
}

TEST(EnergyMapTest, ZeroAndNorm) {
  const MotionField zero = MotionField::constant(4, 4, 0.0, 0.0);
  const Tensor z = lcdc::energy_map({zero});
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_EQ(z[i], 0.0);

  Tensor f({2, 2, 2});
  f.at(1, 0, 0) = 3.0;
  f.at(1, 0, 1) = 4.0;
  const Tensor e = lcdc::energy_map({MotionField(f)});
  EXPECT_DOUBLE_EQ(e.at(1, 0), 5.0);
  EXPECT_DOUBLE_EQ(e.at(0, 0), 0.0);
}

TEST(EnergyMapTest, SumsNormsAcrossLayers) {
  const MotionField a = MotionField::constant(3, 3, 1.0, 0.0);
  const MotionField b = MotionField::constant(3, 3, 0.0, 1.0);
  const Tensor e = lcdc::energy_map({a, b});
  for (std::size_t i = 0; i < e.numel(); ++i) EXPECT_DOUBLE_EQ(e[i], 2.0);
}

TEST(EnergyMapTest, ResamplesCoarserLayersToFinestGrid) {
  const MotionField fine = MotionField::constant(4, 4, 0.0, 1.0);
  const MotionField coarse = MotionField::constant(2, 2, 1.0, 0.0);
  const Tensor e = lcdc::energy_map({fine, coarse});
  ASSERT_EQ(e.dim(0), 4u);
  for (std::size_t i = 0; i < e.numel(); ++i) EXPECT_DOUBLE_EQ(e[i], 2.0);
}

TEST(EnergyMapTest, EmptyListIsError) {
  EXPECT_THROW(lcdc::energy_map({}), std::invalid_argument);
}

TEST(SuppressTest, DropsSmallVectors) {
  Tensor f({1, 2, 2});
  f.at(0, 0, 0) = 0.05;
  f.at(0, 1, 0) = 3.0;
  const MotionField m = lcdc::suppress_small(MotionField(f), 0.1);
  EXPECT_EQ(m.row(0, 0), 0.0);
  EXPECT_EQ(m.row(0, 1), 3.0);
}

namespace {

struct Prop1Fixture {
  Tensor x;
  LocalOffsets d_prev = LocalOffsets::zeros(12, 12);
  Tensor w;
  KernelSpec spec;

  explicit Prop1Fixture(double b = 1.0, double c = 2.0, double d = 0.03) {
    x = lcdc::multilinear_image(12, 12, {{0.5, b, c, d}});
    spec.kh = spec.kw = 3;
    spec.padding = 1;
    spec.in_ch = 1;
    spec.out_ch = 1;
    w = Tensor(spec.weight_shape());
    // a fixed non-trivial kernel
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = 0.1 * static_cast<double>(i + 1) - 0.3;
  }
};

}  // namespace

TEST(Proposition1Test, ZeroTranslationGivesZeroGap) {
  Prop1Fixture fx;
  const MotionField o = MotionField::constant(12, 12, 0.0, 0.0);
  const auto rep = lcdc::check_proposition1(fx.x, o, fx.d_prev, fx.w, fx.spec, 1e-9);
  EXPECT_EQ(rep.max_output_gap, 0.0);
  EXPECT_EQ(rep.max_motion_gap, 0.0);
  EXPECT_TRUE(rep.pass);
}

TEST(Proposition1Test, ConstantTranslationsHoldToTolerance) {
  Prop1Fixture fx;
  const double translations[][2] = {{1.0, 0.0}, {0.0, 1.0}, {0.5, 0.25}, {-1.0, 0.5}};
  for (const auto& t : translations) {
    const MotionField o = MotionField::constant(12, 12, t[0], t[1]);
    const auto rep = lcdc::check_proposition1(fx.x, o, fx.d_prev, fx.w, fx.spec, 1e-9);
    EXPECT_LE(rep.max_output_gap, 1e-9) << "translation (" << t[0] << "," << t[1] << ")";
    EXPECT_LE(rep.max_motion_gap, 1e-9);
    EXPECT_TRUE(rep.pass);
    EXPECT_GT(rep.compared, 0u);
  }
}

TEST(Proposition1Test, NonzeroPriorOffsetsStillConsistent) {
  Prop1Fixture fx;
  Tensor prev({12, 12, 2});
  for (std::size_t i = 0; i < prev.numel(); ++i) prev[i] = 0.2;
  const MotionField o = MotionField::constant(12, 12, 0.5, -0.25);
  const auto rep =
      lcdc::check_proposition1(fx.x, o, LocalOffsets(prev), fx.w, fx.spec, 1e-9);
  EXPECT_TRUE(rep.pass);
}

TEST(Proposition1Test, ViolatedConstraintBreaksConsistency) {
  Prop1Fixture fx;
  const MotionField o = MotionField::constant(12, 12, 1.0, 0.0);
  // Keep the old offsets: the recovered motion is 0, not o.
  const LocalOffsets violate = LocalOffsets::zeros(12, 12);
  const auto rep = lcdc::check_proposition1(fx.x, o, fx.d_prev, fx.w, fx.spec, 1e-9, &violate);
  EXPECT_GT(rep.max_output_gap, 1e-3);
  EXPECT_FALSE(rep.pass);
}

TEST(Proposition1Test, ZeroKernelViolatesHypothesis) {
  Prop1Fixture fx;
  Tensor wz(fx.spec.weight_shape());
  const MotionField o = MotionField::constant(12, 12, 1.0, 0.0);
  try {
    lcdc::check_proposition1(fx.x, o, fx.d_prev, wz, fx.spec, 1e-9);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "proposition hypothesis violated");
  }
}
