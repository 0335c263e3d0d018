#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gmmloc/errors.hpp"
#include "gmmloc/geometry.hpp"

using namespace gmmloc;

namespace {

void expect_pose_near(const Pose& a, const Pose& b, double tol) {
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a.position[i], b.position[i], tol);
  // q and -q are the same rotation
  EXPECT_NEAR(std::abs(a.orientation.dot(b.orientation)), 1.0, tol);
}

Pose random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Quat q(n(rng), n(rng), n(rng), n(rng));
  return Pose(Vec3(n(rng), n(rng), n(rng)), q);
}

CameraIntrinsics unit_camera(int w, int h) {
  CameraIntrinsics k;
  k.fx = k.fy = 1.0;
  k.cx = k.cy = 0.0;
  k.width = w;
  k.height = h;
  return k;
}

}  // namespace

TEST(BackProject, PrincipalAxisPixel) {
  DepthRaster d(1, 1, 1.0f);
  const auto pc = back_project(d, unit_camera(1, 1));
  ASSERT_EQ(pc.size(), 1u);
  EXPECT_EQ(pc.points[0], Vec3(0, 0, 1));
}

TEST(BackProject, PrincipalPointMapsToOpticalAxis) {
  CameraIntrinsics k;
  DepthRaster d(k.width, k.height, 0.0f);
  d.at(static_cast<int>(k.cx), static_cast<int>(k.cy)) = 3.25f;
  const auto pc = back_project(d, k);
  ASSERT_EQ(pc.size(), 1u);
  EXPECT_DOUBLE_EQ(pc.points[0].x(), 0.0);
  EXPECT_DOUBLE_EQ(pc.points[0].y(), 0.0);
  EXPECT_DOUBLE_EQ(pc.points[0].z(), 3.25);
}

TEST(BackProject, HandEvaluatedPinhole) {
  CameraIntrinsics k;
  k.fx = k.fy = 100.0;
  k.cx = 50.0;
  k.cy = 10.0;
  k.width = 200;
  k.height = 20;
  DepthRaster d(k.width, k.height, 0.0f);
  d.at(150, 10) = 2.0f;
  const auto pc = back_project(d, k);
  ASSERT_EQ(pc.size(), 1u);
  // x = z (u - cx) / fx = 2 * 100 / 100
  EXPECT_NEAR(pc.points[0].x(), 2.0, 1e-12);
  EXPECT_NEAR(pc.points[0].y(), 0.0, 1e-12);
  EXPECT_NEAR(pc.points[0].z(), 2.0, 1e-12);
}

TEST(BackProject, DimensionMismatchIsConfigError) {
  CameraIntrinsics k;
  DepthRaster d(k.width + 1, k.height, 1.0f);
  EXPECT_THROW(back_project(d, k), ConfigError);
}

TEST(BackProject, StrideMustBePositive) {
  CameraIntrinsics k;
  DepthRaster d(k.width, k.height, 1.0f);
  EXPECT_THROW(back_project(d, k, 0), ConfigError);
}

TEST(BackProject, SkipsInvalidPixelsInRowMajorOrder) {
  CameraIntrinsics k = unit_camera(3, 2);
  DepthRaster d(3, 2, 1.0f);
  d.at(1, 0) = 0.0f;
  d.at(2, 0) = -1.0f;
  d.at(0, 1) = std::nanf("");
  d.at(1, 1) = std::numeric_limits<float>::infinity();
  const auto pc = back_project(d, k);
  ASSERT_EQ(pc.size(), 2u);
  EXPECT_EQ(pc.points[0], Vec3(0, 0, 1));
  EXPECT_EQ(pc.points[1], Vec3(2, 1, 1));
}

TEST(BackProject, SizeEqualsValidStrideGridPixels) {
  CameraIntrinsics k;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> z(-1.0f, 5.0f);
  DepthRaster d(k.width, k.height);
  for (auto& v : d.data) v = z(rng);
  for (int stride : {1, 2, 3, 8, 13}) {
    std::size_t expected = 0;
    for (int v = 0; v < d.height; v += stride)
      for (int u = 0; u < d.width; u += stride) expected += d.valid(u, v) ? 1 : 0;
    EXPECT_EQ(back_project(d, k, stride).size(), expected) << "stride " << stride;
  }
}

TEST(BackProject, ProjectRoundTrip) {
  CameraIntrinsics k;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uu(0.0, k.width - 1), vv(0.0, k.height - 1),
      zz(0.2, 20.0);
  for (int i = 0; i < 1000; ++i) {
    const int u = static_cast<int>(uu(rng)), v = static_cast<int>(vv(rng));
    const double z = zz(rng);
    const Vec3 p = z * k.ray(u, v);
    const auto proj = project(p, k);
    ASSERT_TRUE(proj);
    DepthRaster d(k.width, k.height, 0.0f);
    const int pu = static_cast<int>(std::lround(proj->u));
    const int pv = static_cast<int>(std::lround(proj->v));
    ASSERT_EQ(pu, u);
    ASSERT_EQ(pv, v);
    d.at(pu, pv) = static_cast<float>(proj->depth);
    const auto pc = back_project(d, k);
    ASSERT_EQ(pc.size(), 1u);
    // float storage of depth limits the round trip to ~1e-7 relative
    EXPECT_LT((pc.points[0] - p).norm(), 1e-6 * std::max(1.0, z));
  }
}

TEST(TransformCloud, IdentityAndTranslation) {
  PointCloud pc{{Vec3(1, 2, 3), Vec3(-4, 5, 0.5)}};
  EXPECT_EQ(transform_cloud(pc, Pose::identity()).points, pc.points);
  const auto t = transform_cloud(PointCloud{{Vec3::Zero()}}, Pose::translation(1, 2, 3));
  EXPECT_EQ(t.points[0], Vec3(1, 2, 3));
}

TEST(TransformCloud, QuarterTurnYaw) {
  const double h = std::sqrt(0.5);
  const Pose yaw(Vec3::Zero(), Quat(h, 0, 0, h));
  const auto out = transform_cloud(PointCloud{{Vec3(1, 0, 0)}}, yaw);
  EXPECT_NEAR(out.points[0].x(), 0.0, 1e-9);
  EXPECT_NEAR(out.points[0].y(), 1.0, 1e-9);
  EXPECT_NEAR(out.points[0].z(), 0.0, 1e-9);
}

TEST(TransformCloud, InverseRoundTripPreservesLengths) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 3.0);
  PointCloud pc;
  for (int i = 0; i < 200; ++i) pc.points.emplace_back(n(rng), n(rng), n(rng));
  for (int trial = 0; trial < 20; ++trial) {
    const Pose p = random_pose(rng);
    const auto fwd = transform_cloud(pc, p);
    ASSERT_EQ(fwd.size(), pc.size());
    const auto back = transform_cloud(fwd, inverse(p));
    for (std::size_t i = 0; i < pc.size(); ++i)
      EXPECT_LT((back.points[i] - pc.points[i]).norm(), 1e-6);
    // rigid: pairwise distances preserved
    EXPECT_NEAR((fwd.points[0] - fwd.points[1]).norm(), (pc.points[0] - pc.points[1]).norm(),
                1e-9);
  }
}

TEST(Pose, ComposeBasics) {
  const Pose b = Pose(Vec3(0.3, -1, 2), Quat(0.9, 0.1, -0.3, 0.2));
  expect_pose_near(compose(Pose::identity(), b), b, 1e-12);
  expect_pose_near(inverse(Pose::identity()), Pose::identity(), 0.0);
  expect_pose_near(compose(Pose::translation(1, 0, 0), Pose::translation(2, 0, 0)),
                   Pose::translation(3, 0, 0), 1e-15);
}

TEST(Pose, GroupProperties) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 500; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    EXPECT_NEAR(a.orientation.norm(), 1.0, 1e-9);
    const Pose ab = compose(a, b);
    EXPECT_NEAR(ab.orientation.norm(), 1.0, 1e-9);
    const Pose right = compose(a, Pose::identity());
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(right.position[j], a.position[j], 1e-12);
    EXPECT_NEAR(right.orientation.w(), a.orientation.w(), 1e-12);
    EXPECT_NEAR(right.orientation.x(), a.orientation.x(), 1e-12);
    expect_pose_near(compose(a, inverse(a)), Pose::identity(), 1e-9);
    expect_pose_near(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9);
    const Vec3 p(0.3, -0.7, 1.1);
    EXPECT_LT((ab.apply(p) - a.apply(b.apply(p))).norm(), 1e-9);
  }
}

TEST(Pose, ExpRotationAngle) {
  const Quat q = exp_rotation(Vec3(0, 0, 0.3));
  EXPECT_NEAR(rotation_angle(q, Quat::Identity()), 0.3, 1e-12);
  EXPECT_NEAR(rotation_angle(q, Quat(-q.coeffs())), 0.0, 1e-7);
}

TEST(Camera, IntrinsicsValidation) {
  CameraIntrinsics k;
  EXPECT_NO_THROW(k.validate());
  k.fx = 0.0;
  EXPECT_THROW(k.validate(), ConfigError);
  k = CameraIntrinsics{};
  k.cx = k.width;
  EXPECT_THROW(k.validate(), ConfigError);
}

TEST(Camera, LookAtFacesTarget) {
  const Vec3 eye(1.5, 0.2, 0.0), target(0, 0, -1);
  const Quat q = look_at(eye, target);
  const Vec3 forward = q * Vec3::UnitZ();
  EXPECT_LT((forward - (target - eye).normalized()).norm(), 1e-12);
  // image "down" has a negative world z component when looking roughly level
  EXPECT_LT((q * Vec3::UnitY()).z(), 0.0);
}
