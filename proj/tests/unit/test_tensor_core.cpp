// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "cutie/errors.hpp"
#include "cutie/tensor_ops.hpp"
#include "test_support.hpp"

using namespace cutie;
using cutie::testing::random_tensor;

namespace {

constexpr float kInf = std::numeric_limits<float>::infinity();

TensorD matmul_oracle(const TensorD &a, const TensorD &b) {
  TensorD out({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) {
        s += a.at(i, k) * b.at(k, j);
      }
      out.at(i, j) = s;
    }
  }
  return out;
}

// Direct 6-loop convolution with zero padding.
TensorD conv_oracle(const TensorD &x, const TensorD &w, const TensorD &b, std::size_t stride, std::size_t pad) {
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  TensorD out({cout, oh, ow});
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = b.empty() ? 0.0 : b[co];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long y = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long xx = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(wd)) {
                continue;
              }
              s += x.at(ci, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)) *
                   w[((co * cin + ci) * kh + ky) * kw + kx];
            }
          }
        }
        out.at(co, oy, ox) = s;
      }
    }
  }
  return out;
}

} // namespace

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  std::mt19937_64 rng(1);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) {
    eye.at(i, i) = 1.0f;
  }
  const Tensor b = random_tensor({3, 4}, rng);
  EXPECT_EQ(max_abs_diff(matmul(eye, b), b), 0.0f);
}

TEST(Matmul, SmallAnalytic) {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 1}, {1, 1});
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 3.0f);
  EXPECT_EQ(c[1], 7.0f);
}

TEST(Matmul, MatchesTripleLoop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor a = random_tensor({7, 5}, rng), b = random_tensor({5, 3}, rng);
    const TensorD ref = matmul_oracle(a.cast<double>(), b.cast<double>());
    EXPECT_LT(max_abs_diff(matmul(a, b).cast<double>(), ref), 1e-5);
  }
}

TEST(Matmul, TransposedVariantsAgree) {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({9, 37}, rng), b = random_tensor({11, 37}, rng);
  EXPECT_EQ(max_abs_diff(matmul_bt(a, b), matmul(a, transpose(b))), 0.0f);
  const Tensor c = random_tensor({37, 9}, rng), d = random_tensor({37, 5}, rng);
  EXPECT_LT(max_abs_diff(matmul_at(c, d), matmul(transpose(c), d)), 1e-5f);
}

TEST(Matmul, RejectsMismatchedInnerDims) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({4, 2})), DimensionError);
}

TEST(Transpose, LargeBlockedMatchesElementwise) {
  std::mt19937_64 rng(4);
  const Tensor a = random_tensor({45, 70}, rng);
  const Tensor t = transpose(a);
  for (std::size_t i = 0; i < 45; ++i) {
    for (std::size_t j = 0; j < 70; ++j) {
      ASSERT_EQ(t.at(j, i), a.at(i, j));
    }
  }
}

TEST(MaskedSoftmax, EqualLogitsSplitEvenly) {
  const Tensor s = masked_softmax_rows(Tensor({1, 2}, {1, 1}), Tensor({1, 2}));
  EXPECT_FLOAT_EQ(s[0], 0.5f);
  EXPECT_FLOAT_EQ(s[1], 0.5f);
}

TEST(MaskedSoftmax, LogThree) {
  const Tensor s = masked_softmax_rows(Tensor({1, 2}, {0.0f, std::log(3.0f)}), Tensor({1, 2}));
  EXPECT_NEAR(s[0], 0.25f, 1e-7f);
  EXPECT_NEAR(s[1], 0.75f, 1e-7f);
}

TEST(MaskedSoftmax, SingleAllowedEntry) {
  const Tensor s = masked_softmax_rows(Tensor({1, 2}, {5, 9}), Tensor({1, 2}, {0.0f, -kInf}));
  EXPECT_EQ(s[0], 1.0f);
  EXPECT_EQ(s[1], 0.0f);
}

TEST(MaskedSoftmax, FullyMaskedRowSaturatesToZero) {
  const Tensor s = masked_softmax_rows(Tensor({1, 2}, {0.3f, -2.0f}), Tensor({1, 2}, -kInf));
  EXPECT_EQ(s[0], 0.0f);
  EXPECT_EQ(s[1], 0.0f);
  EXPECT_TRUE(all_finite(s));
}

TEST(MaskedSoftmax, RowsSumToOneAndMaskedAreExactZero) {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor logits = random_tensor({6, 13}, rng, 3.0);
    Tensor mask({6, 13});
    for (std::size_t i = 0; i < mask.numel(); ++i) {
      mask[i] = coin(rng) ? -kInf : 0.0f;
    }
    const Tensor s = masked_softmax_rows(logits, mask);
    for (std::size_t r = 0; r < 6; ++r) {
      double sum = 0.0;
      bool any = false;
      for (std::size_t c = 0; c < 13; ++c) {
        if (mask.at(r, c) != 0.0f) {
          ASSERT_EQ(s.at(r, c), 0.0f);
        } else {
          any = true;
        }
        sum += s.at(r, c);
      }
      EXPECT_NEAR(sum, any ? 1.0 : 0.0, 1e-6);
    }
  }
}

TEST(Conv2d, UnitPointwiseKernelIsIdentity) {
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({1, 5, 7}, rng);
  const Tensor y = conv2d(x, Tensor({1, 1, 1, 1}, 1.0f), Tensor());
  EXPECT_EQ(max_abs_diff(x, y), 0.0f);
}

TEST(Conv2d, OnesKernelOnConstantInterior) {
  const float c = 1.75f;
  const Tensor y = conv2d(Tensor({1, 6, 6}, c), Tensor({1, 1, 3, 3}, 1.0f), Tensor());
  EXPECT_FLOAT_EQ(y.at(0, 2, 3), 9.0f * c);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0), 4.0f * c); // corner sees 4 taps under zero padding
}

TEST(Conv2d, MatchesDirectLoops) {
  struct Case {
    std::size_t cin, cout, h, w, k, stride;
  };
  const Case cases[] = {{3, 5, 9, 11, 3, 1}, {4, 6, 16, 16, 3, 2}, {2, 9, 7, 5, 1, 1},
                        {5, 3, 10, 12, 1, 2}, {7, 13, 33, 17, 3, 1}, {1, 1, 4, 4, 3, 2}};
  std::uint64_t seed = 0;
  for (const Case &c : cases) {
    std::mt19937_64 rng(seed++);
    const Tensor x = random_tensor({c.cin, c.h, c.w}, rng);
    const Tensor w = random_tensor({c.cout, c.cin, c.k, c.k}, rng, 0.5);
    const Tensor b = random_tensor({c.cout}, rng);
    const Tensor y = conv2d(x, w, b, {c.stride, -1});
    const TensorD ref = conv_oracle(x.cast<double>(), w.cast<double>(), b.cast<double>(), c.stride, c.k / 2);
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_LT(max_abs_diff(y.cast<double>(), ref), 1e-5) << "cin=" << c.cin << " k=" << c.k;
  }
}

TEST(BilinearResize, SameSizeIsIdentity) {
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({2, 5, 6}, rng);
  EXPECT_LT(max_abs_diff(bilinear_resize(x, 5, 6), x), 1e-6f);
}

TEST(BilinearResize, ConstantStaysConstant) {
  const Tensor y = bilinear_resize(Tensor({1, 3, 5}, 0.3f), 11, 4);
  for (float v : y.values()) {
    EXPECT_EQ(v, 0.3f);
  }
}

TEST(BilinearResize, TwoByTwoToFourByFour) {
  // Half-pixel centers: output i samples input coordinate (i + 0.5) / 2 - 0.5,
  // clamped at the borders, giving per-axis weights on (lo, hi):
  //   (1, 0), (3/4, 1/4), (1/4, 3/4), (0, 1).
  const double wts[4][2] = {{1, 0}, {0.75, 0.25}, {0.25, 0.75}, {0, 1}};
  const Tensor x({1, 2, 2}, {1, 2, 3, 5});
  const Tensor y = bilinear_resize(x, 4, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double expected = 0.0;
      for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t b = 0; b < 2; ++b) {
          expected += wts[i][a] * wts[j][b] * x.at(0, a, b);
        }
      }
      EXPECT_NEAR(y.at(0, i, j), expected, 1e-6) << i << "," << j;
    }
  }
}

TEST(AreaDownsample, AveragesWindowsIncludingPartial) {
  const Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor y = area_downsample(x, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2}));
  EXPECT_FLOAT_EQ(y[0], 3.0f);
  EXPECT_FLOAT_EQ(y[1], 4.5f);
  EXPECT_FLOAT_EQ(y[2], 7.5f);
  EXPECT_FLOAT_EQ(y[3], 9.0f);
}

TEST(Layout, TokensRoundTrip) {
  std::mt19937_64 rng(8);
  const Tensor m = random_tensor({4, 3, 5}, rng);
  const Tensor t = map_to_tokens(m);
  ASSERT_EQ(t.shape(), (Shape{15, 4}));
  EXPECT_EQ(t.at(7, 2), m.at(2, 1, 2));
  EXPECT_EQ(max_abs_diff(tokens_to_map(t, 3, 5), m), 0.0f);
}

TEST(Tensor, ValueCountMustMatchShape) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), DimensionError);
}
