#include <gtest/gtest.h>

#include <cmath>

#include "lcdc/conv.hpp"
#include "lcdc/deform.hpp"
#include "lcdc/rng.hpp"

using lcdc::DenseOffsets;
using lcdc::ExpandMode;
using lcdc::KernelSpec;
using lcdc::LocalOffsets;
using lcdc::Tensor;

namespace {

Tensor random_tensor(const std::vector<std::size_t>& shape, lcdc::Xorshift64Star& rng,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

LocalOffsets constant_offsets(std::size_t h, std::size_t w, double dr, double dc) {
  Tensor f({h, w, 2});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      f.at(r, c, 0) = dr;
      f.at(r, c, 1) = dc;
    }
  return LocalOffsets(std::move(f));
}

}  // namespace

TEST(DeformableConvTest, ZeroOffsetsReduceToConv2d) {
  lcdc::Xorshift64Star rng(3);
  KernelSpec s;
  s.kh = s.kw = 3;
  s.padding = 1;
  s.in_ch = 4;
  s.out_ch = 3;
  s.groups = 2;
  const Tensor x = random_tensor({6, 7, 4}, rng);
  const Tensor w = random_tensor(s.weight_shape(), rng);
  const DenseOffsets zero = DenseOffsets::zeros(s.out_h(6), s.out_w(7), 2, 9);
  const Tensor got = lcdc::deformable_conv2d(x, w, zero, s);
  const Tensor want = lcdc::conv2d(x, w, s);
  ASSERT_EQ(got.shape(), want.shape());
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_EQ(got[i], want[i]);  // bit-for-bit
}

TEST(DeformableConvTest, IntegerOffsetShiftsInput) {
  lcdc::Xorshift64Star rng(4);
  KernelSpec s;
  s.kh = s.kw = 1;
  s.in_ch = s.out_ch = 1;
  const std::size_t h = 5, w = 6;
  const Tensor x = random_tensor({h, w, 1}, rng);
  const Tensor kernel({1, 1, 1, 1}, {1.0});
  Tensor off({h, w, 1, 1, 2});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      off.at(r, c, std::size_t{0}, std::size_t{0}, std::size_t{1}) = 1.0;
  const Tensor y = lcdc::deformable_conv2d(x, kernel, DenseOffsets(off), s);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double want = c + 1 < w ? x.at(r, c + 1, std::size_t{0}) : 0.0;
      EXPECT_EQ(y.at(r, c, std::size_t{0}), want);
    }
}

TEST(DeformableConvTest, FractionalOffsetOnMultilinearInput) {
  // x sampled from f(u,v) = u + 2v; offset (0.5,0.5) at location (1,1) reads
  // f(1.5, 1.5) = 4.5 exactly.
  const std::size_t h = 4, w = 4;
  Tensor x({h, w, 1});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) x.at(r, c, std::size_t{0}) = r + 2.0 * c;
  KernelSpec s;
  s.kh = s.kw = 1;
  s.in_ch = s.out_ch = 1;
  const Tensor kernel({1, 1, 1, 1}, {1.0});
  Tensor off({h, w, 1, 1, 2});
  for (std::size_t i = 0; i < off.numel(); ++i) off[i] = 0.5;
  const Tensor y = lcdc::deformable_conv2d(x, kernel, DenseOffsets(off), s);
  EXPECT_NEAR(y.at(1, 1, std::size_t{0}), 4.5, 1e-12);
}

TEST(DeformableConvTest, GroupMismatchError) {
  KernelSpec s;
  s.kh = s.kw = 1;
  s.in_ch = 2;
  s.out_ch = 1;
  s.groups = 2;
  Tensor x({3, 3, 2});
  Tensor w({1, 2, 1, 1});
  const DenseOffsets off = DenseOffsets::zeros(3, 3, 1, 1);  // one group, spec wants two
  try {
    lcdc::deformable_conv2d(x, w, off, s);
    FAIL() << "expected group mismatch";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("group"), std::string::npos);
  }
}

TEST(OffsetLearnerTest, ZeroKernelGivesZeroField) {
  Tensor x({4, 4, 3});
  KernelSpec s;
  s.kh = s.kw = 3;
  s.padding = 1;
  s.in_ch = 3;
  s.out_ch = 2;
  Tensor phi(s.weight_shape());
  const LocalOffsets d = lcdc::offset_learner(x, phi, s);
  for (std::size_t i = 0; i < d.tensor().numel(); ++i) EXPECT_EQ(d.tensor()[i], 0.0);
}

TEST(OffsetLearnerTest, IdentityExtraction) {
  lcdc::Xorshift64Star rng(6);
  const Tensor x = random_tensor({3, 4, 2}, rng);
  KernelSpec s;
  s.kh = s.kw = 1;
  s.in_ch = 2;
  s.out_ch = 2;
  Tensor phi({2, 2, 1, 1});
  phi.at(0, 0, 0, 0) = 1.0;  // row offset reads channel 0
  phi.at(1, 1, 0, 0) = 1.0;  // col offset reads channel 1
  const LocalOffsets d = lcdc::offset_learner(x, phi, s);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_EQ(d.row(r, c), x.at(r, c, std::size_t{0}));
      EXPECT_EQ(d.col(r, c), x.at(r, c, std::size_t{1}));
    }
}

TEST(OffsetLearnerTest, ConstantInputPropagatesTapSums) {
  const double cval = 0.75;
  Tensor x({5, 5, 1}, std::vector<double>(25, cval));
  KernelSpec s;
  s.kh = s.kw = 3;
  s.padding = 1;
  s.in_ch = 1;
  s.out_ch = 2;
  lcdc::Xorshift64Star rng(8);
  const Tensor phi = random_tensor(s.weight_shape(), rng);
  double s0 = 0.0, s1 = 0.0;
  for (std::size_t k = 0; k < 9; ++k) {
    s0 += phi[k];
    s1 += phi[9 + k];
  }
  const LocalOffsets d = lcdc::offset_learner(x, phi, s);
  // interior locations see the full kernel footprint
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t c = 1; c < 4; ++c) {
      EXPECT_NEAR(d.row(r, c), cval * s0, 1e-12);
      EXPECT_NEAR(d.col(r, c), cval * s1, 1e-12);
    }
}

TEST(OffsetLearnerTest, RequiresTwoChannels) {
  Tensor x({4, 4, 1});
  KernelSpec s;
  s.kh = s.kw = 3;
  s.padding = 1;
  s.in_ch = 1;
  s.out_ch = 3;
  Tensor phi(s.weight_shape());
  try {
    lcdc::offset_learner(x, phi, s);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "offset learner must emit 2 channels");
  }
}

TEST(DenseOffsetLearnerTest, ZeroAndDegenerateK) {
  lcdc::Xorshift64Star rng(9);
  const Tensor x = random_tensor({4, 4, 2}, rng);
  KernelSpec s;
  s.kh = s.kw = 3;
  s.padding = 1;
  s.in_ch = 2;
  s.out_ch = 2;  // G=1, K=1 -> 2 channels
  const Tensor h = random_tensor(s.weight_shape(), rng);
  const DenseOffsets dd = lcdc::dense_offset_learner(x, h, s, 1, 1);
  const LocalOffsets d = lcdc::offset_learner(x, h, s);
  ASSERT_EQ(dd.taps(), 1u);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_EQ(dd.tensor().at(r, c, std::size_t{0}, std::size_t{0}, std::size_t{0}), d.row(r, c));
      EXPECT_EQ(dd.tensor().at(r, c, std::size_t{0}, std::size_t{0}, std::size_t{1}), d.col(r, c));
    }

  Tensor hz(s.weight_shape());
  const DenseOffsets zero = lcdc::dense_offset_learner(x, hz, s, 1, 1);
  for (std::size_t i = 0; i < zero.tensor().numel(); ++i) EXPECT_EQ(zero.tensor()[i], 0.0);
}

TEST(ExpandTest, ConstantFieldIsModeInvariant) {
  KernelSpec s;
  s.kh = s.kw = 3;
  s.padding = 1;
  s.in_ch = 1;
  s.out_ch = 1;
  const LocalOffsets d = constant_offsets(5, 5, 0.3, -0.7);
  const DenseOffsets a = lcdc::expand_local_to_dense(d, s, ExpandMode::shifted);
  const DenseOffsets b = lcdc::expand_local_to_dense(d, s, ExpandMode::replicated);
  ASSERT_EQ(a.tensor().shape(), b.tensor().shape());
  for (std::size_t i = 0; i < a.tensor().numel(); ++i) {
    // taps whose source lands outside the field pick up the zero extension in
    // shifted mode; everywhere else the constant makes the modes agree
    if (a.tensor()[i] != 0.0) EXPECT_EQ(a.tensor()[i], b.tensor()[i]);
  }
  // interior of the shifted expansion equals the constant
  EXPECT_EQ(a.tensor().at(2, 2, std::size_t{0}, std::size_t{4}, std::size_t{0}), 0.3);
}

TEST(ExpandTest, ShiftedModeFollowsTapArithmetic) {
  KernelSpec s;
  s.kh = s.kw = 3;
  s.padding = 1;
  s.in_ch = 1;
  s.out_ch = 1;
  const std::size_t h = 6, w = 6;
  Tensor f({h, w, 2});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) f.at(r, c, 0) = static_cast<double>(r);
  const LocalOffsets d{std::move(f)};
  const DenseOffsets dd = lcdc::expand_local_to_dense(d, s, ExpandMode::shifted);
  // interior n: dd[n,g,k] = d[n + tap(k)], tap rows in {-1,0,1} for a
  // same-padded 3x3 kernel
  for (std::size_t r = 1; r + 1 < h; ++r)
    for (std::size_t c = 1; c + 1 < w; ++c)
      for (std::size_t kr = 0; kr < 3; ++kr)
        for (std::size_t kc = 0; kc < 3; ++kc) {
          const std::size_t k = kr * 3 + kc;
          EXPECT_EQ(dd.tensor().at(r, c, std::size_t{0}, k, std::size_t{0}),
                    static_cast<double>(r + kr - 1));
          EXPECT_EQ(dd.tensor().at(r, c, std::size_t{0}, k, std::size_t{1}), 0.0);
        }
  // taps landing outside the field contribute the zero extension
  EXPECT_EQ(
      dd.tensor().at(std::size_t{0}, std::size_t{0}, std::size_t{0}, std::size_t{0}, std::size_t{0}),
      0.0);
}

TEST(DeformInputTest, ZeroOffsetsIdentity) {
  lcdc::Xorshift64Star rng(10);
  const Tensor x = random_tensor({4, 5, 3}, rng);
  const Tensor got = lcdc::deform_input(x, LocalOffsets::zeros(4, 5));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(got[i], x[i]);
}

TEST(DeformInputTest, IntegerShiftWithZeroFill) {
  lcdc::Xorshift64Star rng(12);
  const std::size_t h = 4, w = 3;
  const Tensor x = random_tensor({h, w, 2}, rng);
  const Tensor got = lcdc::deform_input(x, constant_offsets(h, w, 1.0, 0.0));
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t i = 0; i < 2; ++i) {
        const double want = r + 1 < h ? x.at(r + 1, c, i) : 0.0;
        EXPECT_EQ(got.at(r, c, i), want);
      }
}

TEST(DeformInputTest, HalfPixelOnMultilinear) {
  const std::size_t h = 5, w = 4;
  Tensor x({h, w, 1});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) x.at(r, c, std::size_t{0}) = 2.0 + 3.0 * r - 1.0 * c;
  const Tensor got = lcdc::deform_input(x, constant_offsets(h, w, 0.5, 0.0));
  for (std::size_t r = 0; r + 1 < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      EXPECT_NEAR(got.at(r, c, std::size_t{0}), 2.0 + 3.0 * (r + 0.5) - 1.0 * c, 1e-12);
}

TEST(LcdcTest, ZeroOffsetsReduceToConv2d) {
  lcdc::Xorshift64Star rng(13);
  KernelSpec s;
  s.kh = s.kw = 3;
  s.padding = 1;
  s.in_ch = 3;
  s.out_ch = 2;
  const Tensor x = random_tensor({7, 6, 3}, rng);
  const Tensor w = random_tensor(s.weight_shape(), rng);
  const Tensor got = lcdc::lcdc_conv2d(x, w, LocalOffsets::zeros(7, 6), s);
  const Tensor want = lcdc::conv2d(x, w, s);
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_EQ(got[i], want[i]);
}

TEST(LcdcTest, EquivalenceSuiteOnRandomInstances) {
  // The three algebraic identities on seeded random instances, including
  // strides, dilation and valid/same padding.
  lcdc::Xorshift64Star rng(77);
  int tested = 0;
  for (int trial = 0; trial < 60; ++trial) {
    KernelSpec s;
    s.kh = 1 + rng.below(3);
    s.kw = 1 + rng.below(3);
    s.stride = 1 + rng.below(2);
    s.dilation = 1 + rng.below(2);
    s.padding = rng.below(3);
    s.in_ch = 1 + rng.below(4);
    s.out_ch = 1 + rng.below(4);
    s.groups = 1 + rng.below(2);
    while (s.in_ch % s.groups != 0) ++s.in_ch;
    const std::size_t h = 5 + rng.below(6), w = 5 + rng.below(6);
    if (s.out_h(h) == 0 || s.out_w(w) == 0) continue;
    ++tested;
    const Tensor x = random_tensor({h, w, s.in_ch}, rng);
    const Tensor wt = random_tensor(s.weight_shape(), rng);
    Tensor f({h, w, 2});
    for (std::size_t i = 0; i < f.numel(); ++i) f[i] = rng.uniform(-2.0, 2.0);
    const LocalOffsets d{std::move(f)};

    const Tensor direct = lcdc::lcdc_conv2d(x, wt, d, s);
    const Tensor via_dense =
        lcdc::deformable_conv2d(x, wt, lcdc::expand_local_to_dense(d, s, ExpandMode::shifted), s);
    const Tensor via_factored = lcdc::conv2d(lcdc::deform_input(x, d), wt, s);

    ASSERT_EQ(direct.shape(), via_dense.shape());
    ASSERT_EQ(direct.shape(), via_factored.shape());
    for (std::size_t i = 0; i < direct.numel(); ++i) {
      EXPECT_EQ(direct[i], via_dense[i]);     // same sampling routine: bit-for-bit
      EXPECT_EQ(direct[i], via_factored[i]);  // deformed-input factorization
    }
  }
  EXPECT_GE(tested, 30);
}

TEST(LcdcTest, DilatedConvolutionViaZeroOffsets) {
  // conv2d with dilation equals the deformable construction with zero offsets
  // and the same dilation.
  lcdc::Xorshift64Star rng(21);
  KernelSpec s;
  s.kh = s.kw = 3;
  s.dilation = 2;
  s.padding = 2;
  s.in_ch = 2;
  s.out_ch = 2;
  const Tensor x = random_tensor({9, 9, 2}, rng);
  const Tensor w = random_tensor(s.weight_shape(), rng);
  const DenseOffsets zero = DenseOffsets::zeros(s.out_h(9), s.out_w(9), 1, 9);
  const Tensor got = lcdc::deformable_conv2d(x, w, zero, s);
  const Tensor want = lcdc::conv2d(x, w, s);
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_EQ(got[i], want[i]);
}

TEST(OffsetStorageTest, DenseOverLocalRatioIsGroupsTimesTaps) {
  KernelSpec s;
  s.kh = 3;
  s.kw = 3;
  s.in_ch = 8;
  s.out_ch = 8;
  s.groups = 4;
  s.padding = 1;
  const LocalOffsets d = LocalOffsets::zeros(10, 12);
  const DenseOffsets dd = lcdc::expand_local_to_dense(d, s, ExpandMode::shifted);
  EXPECT_EQ(dd.tensor().numel(), d.tensor().numel() * s.groups * s.taps());
}
