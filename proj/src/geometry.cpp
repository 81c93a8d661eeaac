#include "fbocc/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fbocc {

RigidTransform RigidTransform::translate(const Eigen::Vector3d& t) {
  RigidTransform out;
  out.translation = t;
  return out;
}

RigidTransform RigidTransform::yaw(double rad) {
  RigidTransform out;
  const double c = std::cos(rad), s = std::sin(rad);
  out.rotation << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  RigidTransform out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

void RigidTransform::validate(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw std::invalid_argument("RigidTransform: non-finite entries");
  }
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
  if (ortho > tol) {
    throw std::invalid_argument("RigidTransform: rotation is not orthonormal");
  }
  if (std::abs(rotation.determinant() - 1.0) > tol) {
    throw std::invalid_argument("RigidTransform: rotation determinant != 1");
  }
}

void CameraModel::validate() const {
  cam_to_ego.validate();
  if (!intrinsics.allFinite()) throw std::invalid_argument("CameraModel: non-finite intrinsics");
  if (intrinsics(0, 0) <= 0.0 || intrinsics(1, 1) <= 0.0) {
    throw std::invalid_argument("CameraModel: focal lengths must be positive");
  }
  if (height <= 0 || width <= 0) {
    throw std::invalid_argument("CameraModel: image size must be positive");
  }
}

std::optional<PixelDepth> project_ego_point(const Eigen::Vector3d& point, const CameraModel& cam) {
  const RigidTransform ego_to_cam = cam.cam_to_ego.inverse();
  const Eigen::Vector3d pc = ego_to_cam.apply(point);
  if (pc.z() <= 0.0) return std::nullopt;
  const double u = cam.intrinsics(0, 0) * pc.x() / pc.z() + cam.intrinsics(0, 2) +
                   cam.intrinsics(0, 1) * pc.y() / pc.z();
  const double v = cam.intrinsics(1, 1) * pc.y() / pc.z() + cam.intrinsics(1, 2);
  if (u < 0.0 || u >= static_cast<double>(cam.width)) return std::nullopt;
  if (v < 0.0 || v >= static_cast<double>(cam.height)) return std::nullopt;
  return PixelDepth{u, v, pc.z()};
}

Eigen::Vector3d unproject_pixel(double u, double v, double depth, const CameraModel& cam) {
  const double fy = cam.intrinsics(1, 1);
  const double y = (v - cam.intrinsics(1, 2)) / fy * depth;
  const double fx = cam.intrinsics(0, 0);
  const double x = (u - cam.intrinsics(0, 2) - cam.intrinsics(0, 1) * (y / depth)) / fx * depth;
  return cam.cam_to_ego.apply(Eigen::Vector3d(x, y, depth));
}

void VoxelGridSpec::validate() const {
  if (!min_corner.allFinite() || !max_corner.allFinite() || !std::isfinite(voxel_size)) {
    throw std::invalid_argument("VoxelGridSpec: non-finite entries");
  }
  if (voxel_size <= 0.0) throw std::invalid_argument("VoxelGridSpec: voxel_size must be positive");
  for (int a = 0; a < 3; ++a) {
    const double extent = max_corner[a] - min_corner[a];
    if (extent <= 0.0) throw std::invalid_argument("VoxelGridSpec: max_corner must exceed min_corner");
    const double cells = extent / voxel_size;
    if (std::abs(cells - std::round(cells)) > 1e-6) {
      throw std::invalid_argument("VoxelGridSpec: (max-min)/voxel_size is not integral");
    }
  }
}

std::array<std::size_t, 3> VoxelGridSpec::shape() const {
  std::array<std::size_t, 3> s{};
  for (int a = 0; a < 3; ++a) {
    s[a] = static_cast<std::size_t>(std::llround((max_corner[a] - min_corner[a]) / voxel_size));
  }
  return s;
}

std::size_t VoxelGridSpec::voxel_count() const {
  const auto s = shape();
  return s[0] * s[1] * s[2];
}

bool VoxelGridSpec::contains(const Eigen::Vector3d& p) const {
  for (int a = 0; a < 3; ++a) {
    if (p[a] < min_corner[a] || p[a] >= max_corner[a]) return false;
  }
  return true;
}

std::optional<std::array<std::size_t, 3>> VoxelGridSpec::voxel_index(const Eigen::Vector3d& p) const {
  if (!contains(p)) return std::nullopt;
  const auto s = shape();
  std::array<std::size_t, 3> idx{};
  for (int a = 0; a < 3; ++a) {
    auto i = static_cast<long long>(std::floor((p[a] - min_corner[a]) / voxel_size));
    if (i < 0) i = 0;  // guards float round-down at the exact min corner
    if (i >= static_cast<long long>(s[a])) i = static_cast<long long>(s[a]) - 1;
    idx[a] = static_cast<std::size_t>(i);
  }
  return idx;
}

Eigen::Vector3d VoxelGridSpec::voxel_center(std::size_t ix, std::size_t iy, std::size_t iz) const {
  return {min_corner.x() + (static_cast<double>(ix) + 0.5) * voxel_size,
          min_corner.y() + (static_cast<double>(iy) + 0.5) * voxel_size,
          min_corner.z() + (static_cast<double>(iz) + 0.5) * voxel_size};
}

double VoxelGridSpec::max_horizontal_distance() const {
  double best = 0.0;
  for (double x : {min_corner.x(), max_corner.x()}) {
    for (double y : {min_corner.y(), max_corner.y()}) {
      best = std::max(best, std::hypot(x, y));
    }
  }
  return best;
}

std::size_t VoxelGridSpec::flat_index(std::size_t ix, std::size_t iy, std::size_t iz) const {
  const auto s = shape();
  return (ix * s[1] + iy) * s[2] + iz;
}

void LidarFrame::validate() const {
  for (const auto& p : points) {
    if (!p.allFinite()) throw std::invalid_argument("LidarFrame: non-finite point");
  }
  if (!labels.empty()) {
    if (labels.size() != points.size()) {
      throw std::invalid_argument("LidarFrame: labels/points size mismatch");
    }
    for (int l : labels) {
      if (l < 0 || l > 17) throw std::invalid_argument("LidarFrame: label out of [0,17]");
    }
  }
}

SparseDepthMap lidar_to_image(const LidarFrame& frame, const CameraModel& cam) {
  SparseDepthMap out;
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const auto hit = project_ego_point(frame.points[i], cam);
    if (!hit) continue;
    const int pu = static_cast<int>(std::llround(hit->u));
    const int pv = static_cast<int>(std::llround(hit->v));
    if (pu < 0 || pu >= cam.width || pv < 0 || pv >= cam.height) continue;
    DepthSample sample;
    sample.depth = hit->depth;
    if (frame.has_labels()) sample.label = frame.labels[i];
    const auto key = std::make_pair(pv, pu);
    auto it = out.find(key);
    if (it == out.end() || sample.depth < it->second.depth) {
      out[key] = sample;
    }
  }
  return out;
}

std::vector<Eigen::Vector3d> transform_points(std::span<const Eigen::Vector3d> points,
                                              const RigidTransform& t) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t.apply(p));
  return out;
}

SparseDepthMap downsample_depth_map(const SparseDepthMap& image_res, int stride) {
  if (stride < 1) throw std::invalid_argument("downsample_depth_map: stride must be >= 1");
  SparseDepthMap out;
  for (const auto& [key, sample] : image_res) {
    const auto cell = std::make_pair(key.first / stride, key.second / stride);
    auto it = out.find(cell);
    if (it == out.end() || sample.depth < it->second.depth) {
      out[cell] = sample;
    }
  }
  return out;
}

LidarFrame parse_lidar_xyz(const std::string& text) {
  LidarFrame frame;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    double x, y, z;
    if (!(fields >> x)) continue;  // blank or comment-only line
    if (!(fields >> y >> z)) {
      throw std::invalid_argument("lidar: line " + std::to_string(line_no) +
                                  ": expected 'x y z [label]'");
    }
    int label;
    const bool has_label = static_cast<bool>(fields >> label);
    if (!frame.points.empty() && has_label != !frame.labels.empty()) {
      throw std::invalid_argument("lidar: line " + std::to_string(line_no) +
                                  ": all points must carry a label, or none");
    }
    if (has_label) frame.labels.push_back(label);
    frame.points.emplace_back(x, y, z);
  }
  frame.validate();
  return frame;
}

LidarFrame load_lidar_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("lidar: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_lidar_xyz(ss.str());
}

namespace {

CameraModel camera_from_json(const nlohmann::json& j) {
  CameraModel cam;
  const auto k = j.at("intrinsics").get<std::vector<double>>();
  const auto r = j.at("rotation").get<std::vector<double>>();
  const auto t = j.at("translation").get<std::vector<double>>();
  if (k.size() != 9) throw std::invalid_argument("camera rig: intrinsics must have 9 entries");
  if (r.size() != 9) throw std::invalid_argument("camera rig: rotation must have 9 entries");
  if (t.size() != 3) throw std::invalid_argument("camera rig: translation must have 3 entries");
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 3; ++c) {
      cam.intrinsics(i, c) = k[static_cast<std::size_t>(i * 3 + c)];
      cam.cam_to_ego.rotation(i, c) = r[static_cast<std::size_t>(i * 3 + c)];
    }
    cam.cam_to_ego.translation[i] = t[static_cast<std::size_t>(i)];
  }
  cam.height = j.at("height").get<int>();
  cam.width = j.at("width").get<int>();
  cam.validate();
  return cam;
}

}  // namespace

std::vector<CameraModel> parse_camera_rig(const std::string& json_text) {
  const auto doc = nlohmann::json::parse(json_text);
  if (!doc.is_array()) throw std::invalid_argument("camera rig: top-level JSON must be an array");
  std::vector<CameraModel> rig;
  for (const auto& j : doc) rig.push_back(camera_from_json(j));
  return rig;
}

std::vector<CameraModel> load_camera_rig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("camera rig: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_camera_rig(ss.str());
}

std::string camera_rig_to_json(std::span<const CameraModel> rig) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& cam : rig) {
    nlohmann::json j;
    std::vector<double> k(9), r(9), t(3);
    for (int i = 0; i < 3; ++i) {
      for (int c = 0; c < 3; ++c) {
        k[static_cast<std::size_t>(i * 3 + c)] = cam.intrinsics(i, c);
        r[static_cast<std::size_t>(i * 3 + c)] = cam.cam_to_ego.rotation(i, c);
      }
      t[static_cast<std::size_t>(i)] = cam.cam_to_ego.translation[i];
    }
    j["intrinsics"] = k;
    j["rotation"] = r;
    j["translation"] = t;
    j["height"] = cam.height;
    j["width"] = cam.width;
    arr.push_back(j);
  }
  return arr.dump(2);
}

}  // namespace fbocc
