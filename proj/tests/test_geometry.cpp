#include <doctest.h>

#include <cmath>
#include <map>

#include "fbocc/geometry.hpp"
#include "fbocc/tensor.hpp"

using namespace fbocc;

namespace {

CameraModel simple_camera(double f, double cx, double cy, int h, int w,
                          const RigidTransform& pose = RigidTransform::identity()) {
  CameraModel cam;
  cam.intrinsics = Eigen::Matrix3d::Identity();
  cam.intrinsics(0, 0) = f;
  cam.intrinsics(1, 1) = f;
  cam.intrinsics(0, 2) = cx;
  cam.intrinsics(1, 2) = cy;
  cam.cam_to_ego = pose;
  cam.height = h;
  cam.width = w;
  return cam;
}

/// Independent projection oracle: a full 4x4 homogeneous pipeline with
/// a numerically inverted extrinsic matrix.
std::optional<PixelDepth> project_oracle(const Eigen::Vector3d& p, const CameraModel& cam) {
  Eigen::Matrix4d ego_from_cam = Eigen::Matrix4d::Identity();
  ego_from_cam.block<3, 3>(0, 0) = cam.cam_to_ego.rotation;
  ego_from_cam.block<3, 1>(0, 3) = cam.cam_to_ego.translation;
  const Eigen::Matrix4d cam_from_ego = ego_from_cam.inverse();
  const Eigen::Vector4d pc = cam_from_ego * Eigen::Vector4d(p.x(), p.y(), p.z(), 1.0);
  if (pc.z() <= 0.0) return std::nullopt;
  const Eigen::Vector3d pix = cam.intrinsics * Eigen::Vector3d(pc.x(), pc.y(), pc.z());
  const double u = pix.x() / pix.z();
  const double v = pix.y() / pix.z();
  if (u < 0.0 || u >= cam.width || v < 0.0 || v >= cam.height) return std::nullopt;
  return PixelDepth{u, v, pc.z()};
}

}  // namespace

TEST_CASE("project_ego_point principal point") {
  const auto cam = simple_camera(100.0, 50.0, 50.0, 100, 100);
  const auto hit = project_ego_point(Eigen::Vector3d(0.0, 0.0, 1.0), cam);
  REQUIRE(hit.has_value());
  CHECK(hit->u == doctest::Approx(50.0));
  CHECK(hit->v == doctest::Approx(50.0));
  CHECK(hit->depth == doctest::Approx(1.0));
}

TEST_CASE("project_ego_point culls points behind the camera") {
  const auto cam = simple_camera(100.0, 50.0, 50.0, 100, 100);
  CHECK_FALSE(project_ego_point(Eigen::Vector3d(0.0, 0.0, -1.0), cam).has_value());
}

TEST_CASE("project_ego_point matches the homogeneous-matrix oracle") {
  // Camera under a 90 degree yaw, optical axis along ego +y.
  RigidTransform pose;
  pose.rotation.col(0) = Eigen::Vector3d(1.0, 0.0, 0.0);   // camera x
  pose.rotation.col(1) = Eigen::Vector3d(0.0, 0.0, -1.0);  // camera y (down)
  pose.rotation.col(2) = Eigen::Vector3d(0.0, 1.0, 0.0);   // optical axis
  pose.translation = Eigen::Vector3d(0.2, -0.1, 1.5);
  const auto cam = simple_camera(100.0, 320.0, 180.0, 360, 640, pose);

  const Eigen::Vector3d p(2.0, 1.0, 0.0);
  const auto got = project_ego_point(p, cam);
  const auto want = project_oracle(p, cam);
  REQUIRE(got.has_value());
  REQUIRE(want.has_value());
  CHECK(got->u == doctest::Approx(want->u).epsilon(1e-12));
  CHECK(got->v == doctest::Approx(want->v).epsilon(1e-12));
  CHECK(got->depth == doctest::Approx(want->depth).epsilon(1e-12));

  DeterministicRng rng(7);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector3d q(rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0),
                            rng.uniform(-2.0, 4.0));
    const auto a = project_ego_point(q, cam);
    const auto b = project_oracle(q, cam);
    REQUIRE(a.has_value() == b.has_value());
    if (a) {
      CHECK(a->u == doctest::Approx(b->u).epsilon(1e-10));
      CHECK(a->v == doctest::Approx(b->v).epsilon(1e-10));
      CHECK(a->depth == doctest::Approx(b->depth).epsilon(1e-10));
    }
  }
}

TEST_CASE("unproject inverts project for in-frustum points") {
  // Forward-looking camera with yaw 0.3 and a slight downward pitch.
  RigidTransform pose;
  const double yaw = 0.3, pitch = 0.1;
  const Eigen::Vector3d forward(std::cos(yaw) * std::cos(pitch), std::sin(yaw) * std::cos(pitch),
                                -std::sin(pitch));
  const Eigen::Vector3d right = Eigen::Vector3d(std::sin(yaw), -std::cos(yaw), 0.0);
  const Eigen::Vector3d down = forward.cross(right);
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  pose.translation = Eigen::Vector3d(1.0, -0.5, 1.2);
  const auto cam = simple_camera(90.0, 79.5, 31.5, 64, 160, pose);

  DeterministicRng rng(11);
  int tested = 0;
  for (int i = 0; i < 500 && tested < 100; ++i) {
    const Eigen::Vector3d p(rng.uniform(-12.0, 12.0), rng.uniform(-12.0, 12.0),
                            rng.uniform(-1.0, 3.0));
    const auto hit = project_ego_point(p, cam);
    if (!hit) continue;
    ++tested;
    const Eigen::Vector3d back = unproject_pixel(hit->u, hit->v, hit->depth, cam);
    CHECK((back - p).norm() < 1e-6);
  }
  CHECK(tested >= 50);
}

TEST_CASE("voxel_index on the nuScenes grid") {
  const auto grid = VoxelGridSpec::nuscenes_default();
  grid.validate();
  CHECK(grid.shape() == std::array<std::size_t, 3>{200, 200, 16});

  const auto at_min = grid.voxel_index(Eigen::Vector3d(-40.0, -40.0, -1.0));
  REQUIRE(at_min.has_value());
  CHECK(*at_min == std::array<std::size_t, 3>{0, 0, 0});

  const auto near_max = grid.voxel_index(Eigen::Vector3d(39.99, 39.99, 5.39));
  REQUIRE(near_max.has_value());
  CHECK(*near_max == std::array<std::size_t, 3>{199, 199, 15});

  const auto origin = grid.voxel_index(Eigen::Vector3d(0.0, 0.0, 0.0));
  REQUIRE(origin.has_value());
  CHECK(*origin == std::array<std::size_t, 3>{100, 100, 2});

  CHECK_FALSE(grid.voxel_index(Eigen::Vector3d(40.0, 0.0, 0.0)).has_value());
  CHECK_FALSE(grid.voxel_index(Eigen::Vector3d(0.0, 0.0, 5.4)).has_value());
}

TEST_CASE("voxel_index boundary sweep: inside iff in the half-open box") {
  VoxelGridSpec grid;
  grid.min_corner = Eigen::Vector3d(-2.0, -1.0, 0.0);
  grid.max_corner = Eigen::Vector3d(2.0, 1.0, 1.0);
  grid.voxel_size = 0.5;
  grid.validate();

  DeterministicRng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const Eigen::Vector3d p(rng.uniform(-2.6, 2.6), rng.uniform(-1.4, 1.4),
                            rng.uniform(-0.4, 1.4));
    bool inside = true;
    for (int axis = 0; axis < 3; ++axis) {
      inside = inside && p[axis] >= grid.min_corner[axis] && p[axis] < grid.max_corner[axis];
    }
    const auto idx = grid.voxel_index(p);
    CHECK(idx.has_value() == inside);
    if (idx) {
      const Eigen::Vector3d center = grid.voxel_center((*idx)[0], (*idx)[1], (*idx)[2]);
      for (int axis = 0; axis < 3; ++axis) {
        CHECK(std::abs(center[axis] - p[axis]) <= grid.voxel_size * 0.5 + 1e-12);
      }
    }
  }
}

TEST_CASE("transform_points basics and rigidity") {
  const std::vector<Eigen::Vector3d> pts = {{1.0, 0.0, 0.0}, {0.0, 2.0, -1.0}, {3.0, -2.0, 0.5}};

  SUBCASE("identity") {
    const auto out = transform_points(pts, RigidTransform::identity());
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK((out[i] - pts[i]).norm() == 0.0);
  }

  SUBCASE("pure translation") {
    const auto t = RigidTransform::translate(Eigen::Vector3d(1.0, 2.0, 3.0));
    const auto out = transform_points(std::vector<Eigen::Vector3d>{{0.0, 0.0, 0.0}}, t);
    CHECK((out[0] - Eigen::Vector3d(1.0, 2.0, 3.0)).norm() == 0.0);
  }

  SUBCASE("90 degree yaw") {
    const auto out = transform_points(std::vector<Eigen::Vector3d>{{1.0, 0.0, 0.0}},
                                      RigidTransform::yaw(M_PI / 2.0));
    CHECK((out[0] - Eigen::Vector3d(0.0, 1.0, 0.0)).norm() < 1e-9);
  }

  SUBCASE("compose with inverse is identity; distances preserved") {
    RigidTransform t = RigidTransform::yaw(0.7);
    t.translation = Eigen::Vector3d(0.3, -1.2, 2.0);
    const auto fwd = transform_points(pts, t);
    const auto back = transform_points(fwd, t.inverse());
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK((back[i] - pts[i]).norm() < 1e-9);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      for (std::size_t j = i + 1; j < pts.size(); ++j) {
        CHECK(std::abs((fwd[i] - fwd[j]).norm() - (pts[i] - pts[j]).norm()) < 1e-9);
      }
    }
    const auto round = t.compose(t.inverse());
    CHECK((round.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-9);
    CHECK(round.translation.norm() < 1e-9);
  }
}

TEST_CASE("RigidTransform validation rejects improper rotations") {
  RigidTransform t;
  t.rotation(0, 0) = -1.0;  // reflection, det = -1
  CHECK_THROWS(t.validate());
}

TEST_CASE("lidar_to_image") {
  const auto cam = simple_camera(100.0, 50.0, 50.0, 100, 100);

  SUBCASE("empty frame") {
    CHECK(lidar_to_image(LidarFrame{}, cam).empty());
  }

  SUBCASE("nearest depth wins on collisions") {
    LidarFrame frame;
    frame.points = {{0.0, 0.0, 5.0}, {0.0, 0.0, 3.0}};
    const auto map = lidar_to_image(frame, cam);
    REQUIRE(map.size() == 1);
    CHECK(map.at({50, 50}).depth == doctest::Approx(3.0));
  }

  SUBCASE("labels carried through") {
    LidarFrame frame;
    frame.points = {{0.1, 0.0, 4.0}};
    frame.labels = {7};
    const auto map = lidar_to_image(frame, cam);
    REQUIRE(map.size() == 1);
    CHECK(map.begin()->second.label == 7);
  }

  SUBCASE("1000 random points match a naive oracle") {
    RigidTransform pose = RigidTransform::yaw(-0.4);
    pose.translation = Eigen::Vector3d(0.5, 0.2, 1.0);
    const auto cam2 = simple_camera(80.0, 79.5, 47.5, 96, 160, pose);
    LidarFrame frame;
    DeterministicRng rng(99);
    for (int i = 0; i < 1000; ++i) {
      frame.points.emplace_back(rng.uniform(-15.0, 15.0), rng.uniform(-15.0, 15.0),
                                rng.uniform(-1.0, 3.0));
      frame.labels.push_back(static_cast<int>(rng.index(18)));
    }
    const auto got = lidar_to_image(frame, cam2);

    std::map<std::pair<int, int>, DepthSample> want;
    for (std::size_t i = 0; i < frame.points.size(); ++i) {
      const auto hit = project_oracle(frame.points[i], cam2);
      if (!hit) continue;
      const int pu = static_cast<int>(std::llround(hit->u));
      const int pv = static_cast<int>(std::llround(hit->v));
      if (pu < 0 || pu >= cam2.width || pv < 0 || pv >= cam2.height) continue;
      const auto key = std::make_pair(pv, pu);
      auto it = want.find(key);
      if (it == want.end() || hit->depth < it->second.depth) {
        want[key] = {hit->depth, frame.labels[i]};
      }
    }
    REQUIRE(got.size() == want.size());
    for (const auto& [key, sample] : want) {
      REQUIRE(got.count(key) == 1);
      CHECK(got.at(key).depth == doctest::Approx(sample.depth).epsilon(1e-9));
      CHECK(got.at(key).label == sample.label);
    }
  }
}

TEST_CASE("downsample_depth_map keeps the nearest depth per cell") {
  SparseDepthMap image_res;
  image_res[{0, 0}] = {5.0, {}};
  image_res[{1, 15}] = {3.0, {}};
  image_res[{17, 2}] = {4.0, {}};
  const auto coarse = downsample_depth_map(image_res, 16);
  REQUIRE(coarse.size() == 2);
  CHECK(coarse.at({0, 0}).depth == doctest::Approx(3.0));
  CHECK(coarse.at({1, 0}).depth == doctest::Approx(4.0));
}

TEST_CASE("lidar XYZ text parsing") {
  const auto frame = parse_lidar_xyz(
      "# comment\n"
      "1.0 2.0 3.0 4\n"
      "\n"
      "-0.5 0.25 1.5 17  # trailing comment\n");
  REQUIRE(frame.points.size() == 2);
  CHECK(frame.points[1].x() == -0.5);
  REQUIRE(frame.labels.size() == 2);
  CHECK(frame.labels[0] == 4);
  CHECK(frame.labels[1] == 17);

  const auto unlabeled = parse_lidar_xyz("0 0 1\n5 5 5\n");
  CHECK(unlabeled.points.size() == 2);
  CHECK_FALSE(unlabeled.has_labels());

  CHECK_THROWS(parse_lidar_xyz("1 2\n"));
  CHECK_THROWS(parse_lidar_xyz("1 2 3 4\n1 2 3\n"));
  CHECK_THROWS(parse_lidar_xyz("1 2 3\n1 2 3 4\n"));
  CHECK_THROWS(parse_lidar_xyz("1 2 3 99\n"));  // label out of range
}

TEST_CASE("camera rig JSON round trip") {
  const auto cam = simple_camera(75.0, 60.0, 40.0, 80, 120, RigidTransform::yaw(0.25));
  const std::vector<CameraModel> rig = {cam, cam};
  const auto parsed = parse_camera_rig(camera_rig_to_json(rig));
  REQUIRE(parsed.size() == 2);
  CHECK((parsed[0].intrinsics - cam.intrinsics).norm() == 0.0);
  CHECK((parsed[0].cam_to_ego.rotation - cam.cam_to_ego.rotation).norm() == 0.0);
  CHECK(parsed[0].width == 120);

  CHECK_THROWS(parse_camera_rig("{\"not\": \"an array\"}"));
  CHECK_THROWS(parse_camera_rig(
      R"([{"intrinsics": [1,2,3], "rotation": [1,0,0,0,1,0,0,0,1],
          "translation": [0,0,0], "height": 4, "width": 4}])"));
}
