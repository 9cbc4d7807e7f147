#include <gtest/gtest.h>

#include <cmath>

#include "lcdc/conv.hpp"
#include "lcdc/rng.hpp"

using lcdc::KernelSpec;
using lcdc::Tensor;

namespace {

// Independent reference: direct summation straight from the definition,
// no im2col, used as the oracle for the GEMM path.
Tensor conv2d_reference(const Tensor& x, const Tensor& w, const KernelSpec& s) {
  const std::size_t oh = s.out_h(x.dim(0)), ow = s.out_w(x.dim(1));
  Tensor y({oh, ow, s.out_ch});
  for (std::size_t orow = 0; orow < oh; ++orow)
    for (std::size_t ocol = 0; ocol < ow; ++ocol)
      for (std::size_t j = 0; j < s.out_ch; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < s.in_ch; ++i)
          for (std::size_t kr = 0; kr < s.kh; ++kr)
            for (std::size_t kc = 0; kc < s.kw; ++kc) {
              const long long r = static_cast<long long>(orow * s.stride) -
                                  static_cast<long long>(s.padding) +
                                  static_cast<long long>(s.dilation * kr);
              const long long c = static_cast<long long>(ocol * s.stride) -
                                  static_cast<long long>(s.padding) +
                                  static_cast<long long>(s.dilation * kc);
              if (r < 0 || c < 0 || r >= static_cast<long long>(x.dim(0)) ||
                  c >= static_cast<long long>(x.dim(1)))
                continue;
              acc += w.at(j, i, kr, kc) *
                     x.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), i);
            }
        y.at(orow, ocol, j) = acc;
      }
  return y;
}

Tensor random_tensor(const std::vector<std::size_t>& shape, lcdc::Xorshift64Star& rng,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(BilinearTest, IntegerLatticePointIsExact) {
  Tensor plane({3, 3});
  plane.at(1, 1) = 5.0;
  EXPECT_EQ(lcdc::bilinear_sample(plane, 1.0, 1.0), 5.0);
}

TEST(BilinearTest, CenterOfUnitCell) {
  Tensor plane({2, 2}, {0.0, 1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(lcdc::bilinear_sample(plane, 0.5, 0.5), 1.5);
}

TEST(BilinearTest, ZeroPaddingOutside) {
  Tensor plane({2, 2});
  plane.at(0, 0) = 4.0;
  // Hand evaluation: corners (-1,0) and (0,0) carry weight 0.5 each, the
  // out-of-bounds one contributes 0.
  EXPECT_DOUBLE_EQ(lcdc::bilinear_sample(plane, -0.5, 0.0), 2.0);
  EXPECT_DOUBLE_EQ(lcdc::bilinear_sample(plane, 5.0, 5.0), 0.0);
}

TEST(BilinearTest, LastRowColumnUsesStoredValue) {
  Tensor plane({2, 3});
  plane.at(1, 2) = 9.0;
  EXPECT_EQ(lcdc::bilinear_sample(plane, 1.0, 2.0), 9.0);
}

TEST(BilinearTest, RejectsNonFinitePoint) {
  Tensor plane({2, 2});
  EXPECT_THROW(lcdc::bilinear_sample(plane, std::nan(""), 0.0), std::invalid_argument);
  EXPECT_THROW(lcdc::bilinear_sample(plane, 0.0, std::numeric_limits<double>::infinity()),
               std::invalid_argument);
}

TEST(BilinearTest, ExactOnMultilinearFunctions) {
  // f(u,v) = a + bu + cv + duv is reproduced exactly at interior points.
  lcdc::Xorshift64Star rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2), c = rng.uniform(-2, 2),
                 d = rng.uniform(-2, 2);
    Tensor plane({6, 7});
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t col = 0; col < 7; ++col)
        plane.at(r, col) = a + b * r + c * col + d * r * col;
    for (int s = 0; s < 20; ++s) {
      const double pr = rng.uniform(0.0, 5.0);
      const double pc = rng.uniform(0.0, 6.0);
      const double expect = a + b * pr + c * pc + d * pr * pc;
      EXPECT_NEAR(lcdc::bilinear_sample(plane, pr, pc), expect, 1e-12);
    }
  }
}

TEST(Conv2dTest, OneByOneKernelScales) {
  lcdc::Xorshift64Star rng(1);
  const Tensor x = random_tensor({4, 5, 1}, rng);
  KernelSpec s;
  s.kh = s.kw = 1;
  s.in_ch = s.out_ch = 1;
  const Tensor w({1, 1, 1, 1}, {2.0});
  const Tensor y = lcdc::conv2d(x, w, s);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], 2.0 * x[i]);
}

TEST(Conv2dTest, AveragingKernelOnConstant) {
  const double c = 3.25;
  Tensor x({5, 5, 1}, std::vector<double>(25, c));
  KernelSpec s;
  s.kh = s.kw = 3;
  s.in_ch = s.out_ch = 1;
  Tensor w({1, 1, 3, 3}, std::vector<double>(9, 1.0 / 9.0));
  const Tensor y = lcdc::conv2d(x, w, s);
  ASSERT_EQ(y.dim(0), 3u);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], c, 1e-12);
}

TEST(Conv2dTest, RampWindowSums) {
  Tensor x({3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  KernelSpec s;
  s.kh = s.kw = 2;
  s.in_ch = s.out_ch = 1;
  Tensor w({1, 1, 2, 2}, std::vector<double>(4, 1.0));
  const Tensor y = lcdc::conv2d(x, w, s);
  ASSERT_EQ(y.dim(0), 2u);
  ASSERT_EQ(y.dim(1), 2u);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0), 12.0);
  EXPECT_DOUBLE_EQ(y.at(0, 1, 0), 16.0);
  EXPECT_DOUBLE_EQ(y.at(1, 0, 0), 24.0);
  EXPECT_DOUBLE_EQ(y.at(1, 1, 0), 28.0);
}

TEST(Conv2dTest, ShapeErrorsAreDescriptive) {
  Tensor x({4, 4, 2});
  KernelSpec s;
  s.kh = s.kw = 3;
  s.in_ch = 3;  // wrong
  s.out_ch = 1;
  Tensor w({1, 3, 3, 3});
  try {
    lcdc::conv2d(x, w, s);
    FAIL() << "expected shape error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos);
  }
}

TEST(Conv2dTest, MatchesReferenceOnRandomSpecs) {
  lcdc::Xorshift64Star rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    KernelSpec s;
    s.kh = 1 + rng.below(3);
    s.kw = 1 + rng.below(3);
    s.stride = 1 + rng.below(2);
    s.dilation = 1 + rng.below(2);
    s.padding = rng.below(3);
    s.in_ch = 1 + rng.below(3);
    s.out_ch = 1 + rng.below(3);
    const std::size_t h = 4 + rng.below(5), w = 4 + rng.below(5);
    if (s.out_h(h) == 0 || s.out_w(w) == 0) continue;
    const Tensor x = random_tensor({h, w, s.in_ch}, rng);
    const Tensor wt = random_tensor(s.weight_shape(), rng);
    const Tensor got = lcdc::conv2d(x, wt, s);
    const Tensor want = conv2d_reference(x, wt, s);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2dTest, Linearity) {
  lcdc::Xorshift64Star rng(5);
  KernelSpec s;
  s.kh = s.kw = 3;
  s.padding = 1;
  s.in_ch = 2;
  s.out_ch = 2;
  const Tensor x1 = random_tensor({6, 6, 2}, rng);
  const Tensor x2 = random_tensor({6, 6, 2}, rng);
  const Tensor w = random_tensor(s.weight_shape(), rng);
  const double a = 1.7, b = -0.3;
  Tensor mix({6, 6, 2});
  for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = a * x1[i] + b * x2[i];
  const Tensor y_mix = lcdc::conv2d(mix, w, s);
  const Tensor y1 = lcdc::conv2d(x1, w, s);
  const Tensor y2 = lcdc::conv2d(x2, w, s);
  for (std::size_t i = 0; i < y_mix.numel(); ++i) {
    const double want = a * y1[i] + b * y2[i];
    const double scale = std::max(1.0, std::fabs(want));
    EXPECT_NEAR(y_mix[i], want, 1e-12 * scale);
  }
}

TEST(Conv3dTest, OneByOneScales) {
  lcdc::Xorshift64Star rng(2);
  const Tensor x = random_tensor({3, 2, 2, 1}, rng);
  lcdc::Conv3dSpec s3;
  s3.spatial.kh = s3.spatial.kw = 1;
  s3.spatial.in_ch = s3.spatial.out_ch = 1;
  s3.kt = 1;
  const Tensor w({1, 1, 1, 1, 1}, {3.0});
  const Tensor y = lcdc::conv3d(x, w, s3);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], 3.0 * x[i]);
}

TEST(Conv3dTest, AveragingKernelOnConstant) {
  const double c = -1.5;
  Tensor x({4, 5, 5, 1}, std::vector<double>(100, c));
  lcdc::Conv3dSpec s3;
  s3.spatial.kh = s3.spatial.kw = 3;
  s3.spatial.in_ch = s3.spatial.out_ch = 1;
  s3.kt = 2;
  Tensor w({1, 1, 2, 3, 3}, std::vector<double>(18, 1.0 / 18.0));
  const Tensor y = lcdc::conv3d(x, w, s3);
  // valid in time, unpadded in space here: every output is the average of a
  // full window of the constant.
  ASSERT_EQ(y.dim(0), 3u);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], c, 1e-12);
}

TEST(Conv3dTest, TemporalHandSum) {
  Tensor x({2, 1, 1, 1}, {1.0, 2.0});
  lcdc::Conv3dSpec s3;
  s3.spatial.kh = s3.spatial.kw = 1;
  s3.spatial.in_ch = s3.spatial.out_ch = 1;
  s3.kt = 2;
  Tensor w({1, 1, 2, 1, 1}, {1.0, 1.0});
  const Tensor y = lcdc::conv3d(x, w, s3);
  ASSERT_EQ(y.dim(0), 1u);
  EXPECT_DOUBLE_EQ(y[0], 3.0);
}

TEST(Conv3dTest, SnippetTooShort) {
  Tensor x({2, 3, 3, 1});
  lcdc::Conv3dSpec s3;
  s3.spatial.kh = s3.spatial.kw = 1;
  s3.spatial.in_ch = s3.spatial.out_ch = 1;
  s3.kt = 3;
  Tensor w({1, 1, 3, 1, 1});
  try {
    lcdc::conv3d(x, w, s3);
    FAIL() << "expected error";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "snippet too short");
  }
}

TEST(KernelSpecTest, OutputExtentFormula) {
  // floor((in + 2p - d*(k-1) - 1)/s) + 1
  EXPECT_EQ(KernelSpec::out_extent(32, 3, 2, 1, 1), 16u);
  EXPECT_EQ(KernelSpec::out_extent(5, 3, 1, 2, 0), 1u);
  EXPECT_EQ(KernelSpec::out_extent(3, 5, 1, 1, 0), 0u);
}
