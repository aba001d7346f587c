#include "uvs/geometry.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "uvs/grad_check.hpp"
#include "uvs/rng.hpp"

using uvs::Interp;
using uvs::Pose;
using uvs::Rng;
using uvs::RotationMatrix;
using uvs::rotate_volume;
using uvs::rotation_between;
using uvs::Shape;
using uvs::Tensor;

namespace {

Tensor<double> random_volume(int64_t n, int64_t c, int64_t d, Rng& rng, bool grad = false) {
  std::vector<double> v(n * c * d * d * d);
  for (auto& x : v) x = rng.uniform();
  return Tensor<double>::from({n, c, d, d, d}, std::move(v), grad);
}

// All 24 proper rotations of the cube: signed permutation matrices with
// determinant +1, enumerated independently of the geometry module.
std::vector<std::array<int, 9>> proper_signed_permutations() {
  std::vector<std::array<int, 9>> out;
  int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (auto& p : perms) {
    for (int signs = 0; signs < 8; ++signs) {
      std::array<int, 9> m{};
      for (int r = 0; r < 3; ++r) m[r * 3 + p[r]] = (signs >> r) & 1 ? -1 : 1;
      // integer determinant
      int det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                m[2] * (m[3] * m[7] - m[4] * m[6]);
      if (det == 1) out.push_back(m);
    }
  }
  return out;
}

// Brute-force voxel permutation oracle: integer arithmetic only. Output voxel
// (d,h,w) <-> physical (z,y,x) picks up input voxel at Minv*(centered coords).
std::vector<double> permute_voxels_oracle(const std::vector<double>& in, int64_t D,
                                          const std::array<int, 9>& M) {
  // invert by transpose (signed permutation matrices are orthogonal)
  std::array<int, 9> Mi{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) Mi[r * 3 + c] = M[c * 3 + r];
  std::vector<double> out(in.size(), 0.0);
  int64_t L = D - 1;  // doubled-center convention: q = 2*i - (D-1)
  for (int64_t d = 0; d < D; ++d)
    for (int64_t h = 0; h < D; ++h)
      for (int64_t w = 0; w < D; ++w) {
        int64_t q[3] = {2 * w - L, 2 * h - L, 2 * d - L};
        int64_t s[3];
        for (int r = 0; r < 3; ++r)
          s[r] = Mi[r * 3 + 0] * q[0] + Mi[r * 3 + 1] * q[1] + Mi[r * 3 + 2] * q[2];
        int64_t sx = (s[0] + L) / 2, sy = (s[1] + L) / 2, sz = (s[2] + L) / 2;
        out[(d * D + h) * D + w] = in[(sz * D + sy) * D + sx];
      }
  return out;
}

}  // namespace

TEST(Pose, NormalizationAndRange) {
  Pose p(370.0, 10.0);
  EXPECT_DOUBLE_EQ(p.azimuth, 10.0);
  Pose q(-90.0, 0.0);
  EXPECT_DOUBLE_EQ(q.azimuth, 270.0);
  EXPECT_THROW(Pose(0.0, 91.0), uvs::GeometryError);
  EXPECT_EQ(Pose(360.0, 5.0), Pose(0.0, 5.0));
}

TEST(RotationBetween, SamePoseIsIdentity) {
  auto R = rotation_between(Pose(123.4, -7.0), Pose(123.4, -7.0));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(R.m[i * 3 + j], i == j ? 1.0 : 0.0);
}

TEST(RotationBetween, CompositionProperty) {
  auto a = rotation_between(Pose(0, 0), Pose(90, 0));
  auto b = rotation_between(Pose(90, 0), Pose(180, 0));
  auto direct = rotation_between(Pose(0, 0), Pose(180, 0));
  auto composed = b * a;
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(composed.m[i], direct.m[i], 1e-6);
}

TEST(RotationBetween, NinetyDegreeAzimuthMapsXhatToMinusZhat) {
  auto R = rotation_between(Pose(0, 0), Pose(90, 0));
  auto v = R.apply({1.0, 0.0, 0.0});
  EXPECT_NEAR(v[0], 0.0, 1e-12);
  EXPECT_NEAR(v[1], 0.0, 1e-12);
  EXPECT_NEAR(v[2], -1.0, 1e-12);
}

TEST(RotationBetween, AlwaysOrthonormalDetOne) {
  Rng rng(21);
  for (int i = 0; i < 50; ++i) {
    Pose a(rng.uniform() * 360.0, rng.uniform() * 180.0 - 90.0);
    Pose b(rng.uniform() * 360.0, rng.uniform() * 180.0 - 90.0);
    EXPECT_TRUE(rotation_between(a, b).is_orthonormal());
  }
}

TEST(PoseGrid, PaperCountAndSpacing) {
  auto g = uvs::pose_grid(18, {0, 10, 20});
  EXPECT_EQ(g.size(), 54u);
  auto single = uvs::pose_grid(1, {0});
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0], Pose(0, 0));
  auto four = uvs::pose_grid(4, {0});
  ASSERT_EQ(four.size(), 4u);
  EXPECT_DOUBLE_EQ(four[0].azimuth, 0.0);
  EXPECT_DOUBLE_EQ(four[1].azimuth, 90.0);
  EXPECT_DOUBLE_EQ(four[2].azimuth, 180.0);
  EXPECT_DOUBLE_EQ(four[3].azimuth, 270.0);
}

TEST(PoseGrid, AzimuthMajorOrder) {
  auto g = uvs::pose_grid(2, {0, 10});
  ASSERT_EQ(g.size(), 4u);
  EXPECT_EQ(g[0], Pose(0, 0));
  EXPECT_EQ(g[1], Pose(0, 10));
  EXPECT_EQ(g[2], Pose(180, 0));
  EXPECT_EQ(g[3], Pose(180, 10));
}

TEST(RotateVolume, IdentityTrilinearIsExact) {
  Rng rng(31);
  for (int64_t d : {5, 7, 16}) {
    auto v = random_volume(1, 2, d, rng);
    auto r = rotate_volume(v, RotationMatrix::identity(), Interp::trilinear);
    EXPECT_EQ(r.values(), v.values()) << "D=" << d;
  }
}

TEST(RotateVolume, All24AxisAlignedRotationsMatchPermutationOracle) {
  Rng rng(32);
  auto mats = proper_signed_permutations();
  ASSERT_EQ(mats.size(), 24u);
  const int64_t D = 7;
  auto v = random_volume(1, 1, D, rng);
  for (const auto& mi : mats) {
    RotationMatrix R;
    for (int i = 0; i < 9; ++i) R.m[i] = static_cast<double>(mi[i]);
    auto got = rotate_volume(v, R, Interp::nearest);
    auto expect = permute_voxels_oracle(v.values(), D, mi);
    EXPECT_EQ(got.values(), expect);
  }
}

TEST(RotateVolume, SumPreservedUnderNinetyMultiples) {
  // 90-degree-multiple nearest rotations permute voxels, so the value multiset
  // (hence the exact real-arithmetic sum) is preserved.
  Rng rng(33);
  auto v = random_volume(1, 1, 7, rng);
  std::vector<double> orig = v.values();
  std::sort(orig.begin(), orig.end());
  for (const auto& mi : proper_signed_permutations()) {
    RotationMatrix R;
    for (int i = 0; i < 9; ++i) R.m[i] = static_cast<double>(mi[i]);
    auto got = rotate_volume(v, R, Interp::nearest);
    std::vector<double> vals = got.values();
    std::sort(vals.begin(), vals.end());
    EXPECT_EQ(vals, orig);
  }
}

TEST(RotateVolume, OutputWithinConvexBounds) {
  Rng rng(34);
  auto v = random_volume(1, 1, 6, rng);
  double lo = 0.0, hi = 0.0;
  for (int64_t i = 0; i < v.numel(); ++i) {
    lo = std::min(lo, v[i]);
    hi = std::max(hi, v[i]);
  }
  for (int i = 0; i < 5; ++i) {
    auto R = rotation_between(Pose(0, 0), Pose(rng.uniform() * 360, rng.uniform() * 40 - 20));
    auto r = rotate_volume(v, R, Interp::trilinear);
    for (int64_t j = 0; j < r.numel(); ++j) {
      EXPECT_GE(r[j], lo - 1e-12);
      EXPECT_LE(r[j], hi + 1e-12);
    }
  }
}

TEST(RotateVolume, GradCheckTrilinear) {
  for (uint64_t seed : {41u, 42u, 43u}) {
    Rng rng(seed);
    auto v = random_volume(1, 1, 5, rng, true);
    auto R = rotation_between(Pose(0, 0), Pose(rng.uniform() * 360, rng.uniform() * 40 - 20));
    auto f = [&](Tensor<double> t) {
      auto r = rotate_volume(t, R, Interp::trilinear);
      return uvs::mean(uvs::mul(r, r));
    };
    auto rep = uvs::grad_check(f, v, 1e-5, 1e-4);
    EXPECT_TRUE(rep.pass) << "seed " << seed << " err " << rep.max_rel_err;
  }
}

TEST(RotateVolume, GaussianBlobRoundTripLosesLittleMass) {
  const int64_t D = 15;
  std::vector<double> v(D * D * D);
  double c = (D - 1) / 2.0, sigma = D / 5.0;
  for (int64_t d = 0; d < D; ++d)
    for (int64_t h = 0; h < D; ++h)
      for (int64_t w = 0; w < D; ++w) {
        double dz = d - c - 0.5, dy = h - c + 0.4, dx = w - c - 0.3;
        v[(d * D + h) * D + w] = std::exp(-(dx * dx + dy * dy + dz * dz) / (2 * sigma * sigma));
      }
  auto vol = Tensor<double>::from({1, 1, D, D, D}, v);
  double mass = uvs::sum(uvs::abs(vol)).item();
  auto R = rotation_between(Pose(0, 0), Pose(35, 15));
  auto there = rotate_volume(vol, R, Interp::trilinear);
  auto back = rotate_volume(there, R.transpose(), Interp::trilinear);
  double l1 = uvs::sum(uvs::abs(uvs::sub(back, vol))).item();
  EXPECT_LE(l1, 0.05 * mass) << "lost " << l1 / mass * 100 << "% of mass";
}

TEST(RotateVolume, PerSampleRotations) {
  Rng rng(55);
  auto v = random_volume(2, 1, 5, rng);
  auto Ra = rotation_between(Pose(0, 0), Pose(90, 0));
  auto Rb = RotationMatrix::identity();
  auto r = rotate_volume(v, std::vector<RotationMatrix>{Ra, Rb}, Interp::trilinear);
  // sample 1 used identity
  for (int64_t i = 0; i < 125; ++i) EXPECT_DOUBLE_EQ(r[125 + i], v[125 + i]);
  // sample 0 used Ra: equals rotating sample 0 alone
  auto v0 = Tensor<double>::from({1, 1, 5, 5, 5},
                                 std::vector<double>(v.values().begin(), v.values().begin() + 125));
  auto r0 = rotate_volume(v0, Ra, Interp::trilinear);
  for (int64_t i = 0; i < 125; ++i) EXPECT_DOUBLE_EQ(r[i], r0[i]);
}

TEST(RotateVolume, ErrorsOnBadInput) {
  auto vol = Tensor<double>::zeros({1, 1, 4, 4, 5});
  EXPECT_THROW(rotate_volume(vol, RotationMatrix::identity(), Interp::nearest),
               uvs::GeometryError);
  auto cube = Tensor<double>::zeros({1, 1, 4, 4, 4});
  RotationMatrix bad;
  bad.m = {2, 0, 0, 0, 1, 0, 0, 0, 1};
  EXPECT_THROW(rotate_volume(cube, bad, Interp::nearest), uvs::GeometryError);
}
