// Python bindings for the occupancy engine: geometry, both view
// transformations, the head, losses, metrics, post-processing and the
// end-to-end pipeline, all over numpy arrays.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "fbocc/pipeline.hpp"

namespace py = pybind11;
using namespace fbocc;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor tensor_from(const DoubleArray& arr) {
  std::vector<std::size_t> shape(static_cast<std::size_t>(arr.ndim()));
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arr.shape(i));
  }
  Tensor t(shape);
  std::memcpy(t.data(), arr.data(), t.size() * sizeof(double));
  return t;
}

py::array_t<double> array_from(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> arr(shape);
  std::memcpy(arr.mutable_data(), t.data(), t.size() * sizeof(double));
  return arr;
}

OccupancyGrid grid_from(const ByteArray& labels, const std::optional<ByteArray>& mask) {
  if (labels.ndim() != 3) throw std::invalid_argument("labels must be a 3-d array");
  OccupancyGrid gt;
  gt.shape = {static_cast<std::size_t>(labels.shape(0)),
              static_cast<std::size_t>(labels.shape(1)),
              static_cast<std::size_t>(labels.shape(2))};
  gt.labels.assign(labels.data(), labels.data() + labels.size());
  if (mask) {
    if (mask->size() != labels.size()) {
      throw std::invalid_argument("mask shape must match labels");
    }
    gt.camera_mask.assign(mask->data(), mask->data() + mask->size());
  } else {
    gt.camera_mask.assign(gt.labels.size(), 1);
  }
  gt.validate();
  return gt;
}

PredictionResult prediction_from(const DoubleArray& probs) {
  if (probs.ndim() != 4 || probs.shape(0) != static_cast<py::ssize_t>(kNumClasses)) {
    throw std::invalid_argument("probs must have shape (18, X, Y, Z)");
  }
  PredictionResult pred;
  pred.probs = tensor_from(probs);
  return pred;
}

py::array_t<std::uint8_t> labels_array(const std::vector<std::uint8_t>& labels,
                                       const std::array<std::size_t, 3>& shape) {
  py::array_t<std::uint8_t> arr({static_cast<py::ssize_t>(shape[0]),
                                 static_cast<py::ssize_t>(shape[1]),
                                 static_cast<py::ssize_t>(shape[2])});
  std::memcpy(arr.mutable_data(), labels.data(), labels.size());
  return arr;
}

EncoderOutput encoder_output_from(const DoubleArray& features, const DoubleArray& depth,
                                  int stride) {
  EncoderOutput enc;
  enc.features.values = tensor_from(features);
  enc.features.stride = stride;
  enc.depth.probs = tensor_from(depth);
  return enc;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Forward-backward view transformation occupancy engine";

  py::class_<RigidTransform>(m, "RigidTransform")
      .def(py::init<>())
      .def(py::init([](const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
             RigidTransform out;
             out.rotation = r;
             out.translation = t;
             out.validate();
             return out;
           }),
           py::arg("rotation"), py::arg("translation"))
      .def_static("yaw", &RigidTransform::yaw)
      .def_static("translate", &RigidTransform::translate)
      .def_readwrite("rotation", &RigidTransform::rotation)
      .def_readwrite("translation", &RigidTransform::translation)
      .def("apply", &RigidTransform::apply)
      .def("inverse", &RigidTransform::inverse)
      .def("compose", &RigidTransform::compose);

  py::class_<CameraModel>(m, "CameraModel")
      .def(py::init([](const Eigen::Matrix3d& k, const RigidTransform& pose, int height,
                       int width) {
             CameraModel cam;
             cam.intrinsics = k;
             cam.cam_to_ego = pose;
             cam.height = height;
             cam.width = width;
             cam.validate();
             return cam;
           }),
           py::arg("intrinsics"), py::arg("cam_to_ego"), py::arg("height"), py::arg("width"))
      .def_readwrite("intrinsics", &CameraModel::intrinsics)
      .def_readwrite("cam_to_ego", &CameraModel::cam_to_ego)
      .def_readonly("height", &CameraModel::height)
      .def_readonly("width", &CameraModel::width);

  py::class_<VoxelGridSpec>(m, "VoxelGridSpec")
      .def(py::init([](const Eigen::Vector3d& mn, const Eigen::Vector3d& mx, double vs) {
             VoxelGridSpec g;
             g.min_corner = mn;
             g.max_corner = mx;
             g.voxel_size = vs;
             g.validate();
             return g;
           }),
           py::arg("min_corner"), py::arg("max_corner"), py::arg("voxel_size"))
      .def_static("nuscenes_default", &VoxelGridSpec::nuscenes_default)
      .def_readonly("min_corner", &VoxelGridSpec::min_corner)
      .def_readonly("max_corner", &VoxelGridSpec::max_corner)
      .def_readonly("voxel_size", &VoxelGridSpec::voxel_size)
      .def("shape", &VoxelGridSpec::shape)
      .def("voxel_index", &VoxelGridSpec::voxel_index)
      .def("voxel_center", &VoxelGridSpec::voxel_center);

  py::class_<DepthBinSpec>(m, "DepthBinSpec")
      .def(py::init([](std::size_t bins, double mn, double mx) {
             DepthBinSpec s;
             s.num_bins = bins;
             s.min_depth = mn;
             s.max_depth = mx;
             s.validate();
             return s;
           }),
           py::arg("num_bins") = 80, py::arg("min_depth") = 2.0, py::arg("max_depth") = 42.0)
      .def_readonly("num_bins", &DepthBinSpec::num_bins)
      .def_readonly("min_depth", &DepthBinSpec::min_depth)
      .def_readonly("max_depth", &DepthBinSpec::max_depth)
      .def("edges", &DepthBinSpec::edges)
      .def("bin_of", &DepthBinSpec::bin_of)
      .def("bin_center", &DepthBinSpec::bin_center)
      .def("bin_width", &DepthBinSpec::bin_width);

  // Geometry.
  m.def(
      "project_ego_point",
      [](const Eigen::Vector3d& p, const CameraModel& cam)
          -> std::optional<std::tuple<double, double, double>> {
        const auto hit = project_ego_point(p, cam);
        if (!hit) return std::nullopt;
        return std::make_tuple(hit->u, hit->v, hit->depth);
      },
      py::arg("point"), py::arg("camera"));
  m.def("unproject_pixel", &unproject_pixel, py::arg("u"), py::arg("v"), py::arg("depth"),
        py::arg("camera"));
  m.def(
      "transform_points",
      [](const DoubleArray& pts, const RigidTransform& t) {
        if (pts.ndim() != 2 || pts.shape(1) != 3) {
          throw std::invalid_argument("points must have shape (N, 3)");
        }
        py::array_t<double> out({pts.shape(0), pts.shape(1)});
        for (py::ssize_t i = 0; i < pts.shape(0); ++i) {
          const Eigen::Vector3d p(pts.at(i, 0), pts.at(i, 1), pts.at(i, 2));
          const Eigen::Vector3d q = t.apply(p);
          out.mutable_at(i, 0) = q.x();
          out.mutable_at(i, 1) = q.y();
          out.mutable_at(i, 2) = q.z();
        }
        return out;
      },
      py::arg("points"), py::arg("transform"));

  // Forward path.
  m.def(
      "lift",
      [](const DoubleArray& features, const DoubleArray& depth, int stride) {
        ImageFeatureMap f;
        f.values = tensor_from(features);
        f.stride = stride;
        DepthDistribution d;
        d.probs = tensor_from(depth);
        return array_from(lift(f, d).values);
      },
      py::arg("features"), py::arg("depth_probs"), py::arg("stride") = 16);
  m.def(
      "splat",
      [](const DoubleArray& frustum, int stride, const CameraModel& cam, const DepthBinSpec& bins,
         const VoxelGridSpec& grid) {
        FrustumFeatures f;
        f.values = tensor_from(frustum);
        f.stride = stride;
        return array_from(splat(f, cam, bins, grid).values);
      },
      py::arg("frustum"), py::arg("stride"), py::arg("camera"), py::arg("bins"), py::arg("grid"));

  // Backward path and head.
  m.def("compress_voxel_to_bev", [](const DoubleArray& vol) {
    VoxelFeatureVolume v;
    v.values = tensor_from(vol);
    return array_from(compress_voxel_to_bev(v).values);
  });
  m.def(
      "expand_bev_to_voxel",
      [](const DoubleArray& bev, std::size_t z) {
        BevFeatureMap b;
        b.values = tensor_from(bev);
        return array_from(expand_bev_to_voxel(b, z).values);
      },
      py::arg("bev"), py::arg("z"));
  m.def("fuse", [](const DoubleArray& a, const DoubleArray& b) {
    VoxelFeatureVolume va, vb;
    va.values = tensor_from(a);
    vb.values = tensor_from(b);
    return array_from(fuse(va, vb).values);
  });
  m.def(
      "bilinear_sample",
      [](const DoubleArray& map, double u, double v) -> std::optional<std::vector<double>> {
        ImageFeatureMap f;
        f.values = tensor_from(map);
        return bilinear_sample(f, u, v);
      },
      py::arg("feature_map"), py::arg("u"), py::arg("v"));
  m.def(
      "backward_project",
      [](const DoubleArray& bev, const std::vector<DoubleArray>& features,
         const std::vector<DoubleArray>& depths, int stride,
         const std::vector<CameraModel>& rig, const DepthBinSpec& bins, const VoxelGridSpec& grid,
         const DoubleArray& weight, const DoubleArray& bias, std::size_t n_heights) {
        if (features.size() != depths.size() || features.size() != rig.size()) {
          throw std::invalid_argument("features, depths and rig must have equal lengths");
        }
        std::vector<EncoderOutput> cams;
        for (std::size_t i = 0; i < features.size(); ++i) {
          cams.push_back(encoder_output_from(features[i], depths[i], stride));
        }
        BevFeatureMap b;
        b.values = tensor_from(bev);
        BackwardLayerWeights w;
        w.weight = tensor_from(weight);
        w.bias = tensor_from(bias);
        return array_from(backward_project(b, cams, rig, bins, grid, w, n_heights).values);
      },
      py::arg("bev"), py::arg("features"), py::arg("depth_probs"), py::arg("stride"),
      py::arg("rig"), py::arg("bins"), py::arg("grid"), py::arg("weight"), py::arg("bias"),
      py::arg("n_heights") = 4);
  m.def(
      "head_forward",
      [](const DoubleArray& vol, const DoubleArray& c1w, const DoubleArray& c1b,
         const DoubleArray& c2w, const DoubleArray& c2b, const DoubleArray& cw,
         const DoubleArray& cb) {
        VoxelFeatureVolume v;
        v.values = tensor_from(vol);
        HeadWeights w;
        w.conv1_w = tensor_from(c1w);
        w.conv1_b = tensor_from(c1b);
        w.conv2_w = tensor_from(c2w);
        w.conv2_b = tensor_from(c2b);
        w.cls_w = tensor_from(cw);
        w.cls_b = tensor_from(cb);
        return array_from(head_forward(v, w).probs);
      },
      py::arg("volume"), py::arg("conv1_w"), py::arg("conv1_b"), py::arg("conv2_w"),
      py::arg("conv2_b"), py::arg("cls_w"), py::arg("cls_b"));
  m.def("decode", [](const DoubleArray& probs) {
    const auto pred = prediction_from(probs);
    return labels_array(decode(pred), pred.grid_shape());
  });
  m.def(
      "align_voxel_features",
      [](const DoubleArray& prev, const RigidTransform& prev_from_current,
         const VoxelGridSpec& grid) {
        VoxelFeatureVolume v;
        v.values = tensor_from(prev);
        return array_from(align_voxel_features(v, prev_from_current, grid).values);
      },
      py::arg("prev"), py::arg("prev_from_current"), py::arg("grid"));

  // Losses.
  m.def(
      "distance_aware_focal",
      [](const DoubleArray& probs, const ByteArray& labels, const std::optional<ByteArray>& mask,
         const VoxelGridSpec& grid) {
        return distance_aware_focal(prediction_from(probs), grid_from(labels, mask), grid);
      },
      py::arg("probs"), py::arg("labels"), py::arg("mask"), py::arg("grid"));
  m.def(
      "dice_loss",
      [](const DoubleArray& probs, const ByteArray& labels, const std::optional<ByteArray>& mask) {
        return dice_loss(prediction_from(probs), grid_from(labels, mask));
      },
      py::arg("probs"), py::arg("labels"), py::arg("mask") = std::nullopt);
  m.def(
      "scal_geo",
      [](const DoubleArray& probs, const ByteArray& labels, const std::optional<ByteArray>& mask) {
        return scal_geo(prediction_from(probs), grid_from(labels, mask));
      },
      py::arg("probs"), py::arg("labels"), py::arg("mask") = std::nullopt);
  m.def(
      "scal_sem",
      [](const DoubleArray& probs, const ByteArray& labels, const std::optional<ByteArray>& mask) {
        return scal_sem(prediction_from(probs), grid_from(labels, mask));
      },
      py::arg("probs"), py::arg("labels"), py::arg("mask") = std::nullopt);
  m.def(
      "lovasz_softmax",
      [](const DoubleArray& probs, const ByteArray& labels, const std::optional<ByteArray>& mask) {
        return lovasz_softmax(prediction_from(probs), grid_from(labels, mask));
      },
      py::arg("probs"), py::arg("labels"), py::arg("mask") = std::nullopt);
  m.def(
      "depth_ce",
      [](const DoubleArray& depth_probs, const std::map<std::pair<int, int>, double>& gt,
         const DepthBinSpec& bins) {
        DepthDistribution d;
        d.probs = tensor_from(depth_probs);
        SparseDepthMap sparse;
        for (const auto& [key, value] : gt) sparse[key] = {value, {}};
        return depth_ce(d, sparse, bins);
      },
      py::arg("depth_probs"), py::arg("gt_depth"), py::arg("bins"));
  m.def(
      "semantic2d_ce",
      [](const DoubleArray& logits, const std::map<std::pair<int, int>, int>& gt) {
        SemanticLogits2D l;
        l.logits = tensor_from(logits);
        return semantic2d_ce(l, gt);
      },
      py::arg("logits"), py::arg("gt_labels"));

  // Metrics.
  m.def(
      "confusion_matrix",
      [](const ByteArray& pred, const ByteArray& gt_labels, const std::optional<ByteArray>& mask,
         bool use_mask) {
        const auto gt = grid_from(gt_labels, mask);
        std::vector<std::uint8_t> labels(pred.data(), pred.data() + pred.size());
        const auto cm = accumulate(labels, gt, use_mask);
        py::array_t<std::uint64_t> out({static_cast<py::ssize_t>(kNumClasses),
                                        static_cast<py::ssize_t>(kNumClasses)});
        for (std::size_t g = 0; g < kNumClasses; ++g) {
          for (std::size_t p = 0; p < kNumClasses; ++p) {
            out.mutable_at(static_cast<py::ssize_t>(g), static_cast<py::ssize_t>(p)) = cm.at(g, p);
          }
        }
        return out;
      },
      py::arg("pred"), py::arg("gt"), py::arg("mask") = std::nullopt, py::arg("use_mask") = true);
  m.def(
      "iou_per_class",
      [](const py::array_t<std::uint64_t>& counts) {
        if (counts.ndim() != 2 || counts.shape(0) != counts.shape(1)) {
          throw std::invalid_argument("confusion matrix must be square");
        }
        ConfusionMatrix cm(static_cast<std::size_t>(counts.shape(0)));
        for (py::ssize_t g = 0; g < counts.shape(0); ++g) {
          for (py::ssize_t p = 0; p < counts.shape(1); ++p) {
            cm.add(static_cast<std::size_t>(g), static_cast<std::size_t>(p), counts.at(g, p));
          }
        }
        return iou_per_class(cm);
      },
      py::arg("confusion"));
  m.def(
      "miou",
      [](const std::vector<std::optional<double>>& per_class,
         const std::optional<std::vector<std::size_t>>& classes) {
        const auto cls = classes ? *classes : default_eval_classes();
        return miou(per_class, cls);
      },
      py::arg("per_class"), py::arg("classes") = std::nullopt);
  m.attr("CLASS_NAMES") = [] {
    py::list names;
    for (const auto& n : kClassNames) names.append(std::string(n));
    return names;
  }();
  m.attr("NUM_CLASSES") = kNumClasses;
  m.attr("FREE_CLASS") = kFreeClass;

  // Post-processing.
  m.def("tta_flips", [](const py::function& model) {
    const auto wrapped = [&model](const FlipCombo& combo) {
      const py::object result = model(combo.image_hflip, combo.flip_x, combo.flip_y);
      return prediction_from(result.cast<DoubleArray>());
    };
    return array_from(tta_flips(wrapped).probs);
  });
  m.def(
      "temporal_tta",
      [](const DoubleArray& current, const std::vector<std::pair<DoubleArray, RigidTransform>>&
                                         history,
         const RigidTransform& current_pose, const VoxelGridSpec& grid,
         const std::optional<std::set<std::uint8_t>>& static_classes, double near_radius) {
        std::vector<TemporalRecord> records;
        for (const auto& [probs, pose] : history) {
          records.push_back({prediction_from(probs), pose});
        }
        const auto& classes = static_classes ? *static_classes : default_static_classes();
        return array_from(
            temporal_tta(prediction_from(current), records, current_pose, grid, classes,
                         near_radius)
                .probs);
      },
      py::arg("current"), py::arg("history"), py::arg("current_pose"), py::arg("grid"),
      py::arg("static_classes") = std::nullopt, py::arg("near_radius") = 8.0);
  m.def(
      "ensemble",
      [](const std::vector<DoubleArray>& predictions, const std::vector<double>& model_mious,
         const std::vector<std::vector<double>>& class_ious) {
        if (predictions.size() != model_mious.size() || predictions.size() != class_ious.size()) {
          throw std::invalid_argument("member lists must have equal lengths");
        }
        std::vector<EnsembleMember> members(predictions.size());
        for (std::size_t i = 0; i < predictions.size(); ++i) {
          members[i].prediction = prediction_from(predictions[i]);
          members[i].model_miou = model_mious[i];
          if (class_ious[i].size() != kNumClasses) {
            throw std::invalid_argument("class_ious rows must have 18 entries");
          }
          std::copy(class_ious[i].begin(), class_ious[i].end(), members[i].class_ious.begin());
        }
        return array_from(ensemble(members).probs);
      },
      py::arg("predictions"), py::arg("model_mious"), py::arg("class_ious"));
  m.def(
      "search_weights",
      [](const std::vector<DoubleArray>& predictions, const ByteArray& gt_labels,
         const std::optional<ByteArray>& mask, std::size_t budget, std::uint64_t seed) {
        std::vector<EnsembleMember> members(predictions.size());
        for (std::size_t i = 0; i < predictions.size(); ++i) {
          members[i].prediction = prediction_from(predictions[i]);
          members[i].model_miou = 1.0;
          members[i].class_ious.fill(1.0);
        }
        const auto result = search_weights(members, grid_from(gt_labels, mask), budget, seed);
        py::dict out;
        out["achieved_miou"] = result.achieved_miou;
        out["model_weights"] = result.weights.model;
        py::list rows;
        for (const auto& row : result.weights.per_class) {
          rows.append(std::vector<double>(row.begin(), row.end()));
        }
        out["class_weights"] = rows;
        return out;
      },
      py::arg("predictions"), py::arg("gt"), py::arg("mask") = std::nullopt,
      py::arg("budget") = 64, py::arg("seed") = 0);

  // Harness and pipeline.
  m.def("make_preset_scene",
        [](const std::string& preset, std::uint64_t seed) {
          return make_preset_scene(preset, seed).to_json_text();
        },
        py::arg("preset") = "simple", py::arg("seed") = 0);
  m.def(
      "rasterize_scene",
      [](const std::string& scene_json) {
        const auto scene = SceneSpec::from_json_text(scene_json);
        const auto gt = rasterize_scene(scene.at_frame(0), scene.grid);
        return labels_array(gt.labels, gt.shape);
      },
      py::arg("scene_json"));
  m.def(
      "visibility_mask",
      [](const std::string& scene_json, int threads) {
        const auto scene = SceneSpec::from_json_text(scene_json);
        const auto gt = rasterize_scene(scene.at_frame(0), scene.grid);
        const auto mask = visibility_mask(gt.labels, scene.grid, scene.rig, threads);
        return labels_array(mask, gt.shape);
      },
      py::arg("scene_json"), py::arg("threads") = 1);
  m.def(
      "run_pipeline",
      [](const std::string& scene_json, const std::optional<std::string>& config_json,
         std::uint64_t seed, bool flip_tta, bool temporal_tta_flag, bool oracle, int threads) {
        const auto scene = SceneSpec::from_json_text(scene_json);
        PipelineConfig cfg;
        if (config_json) cfg = PipelineConfig::from_json(nlohmann::json::parse(*config_json));
        cfg.threads = threads;
        const auto weights = ModelWeights::random(cfg, seed);
        PipelineOptions opts;
        opts.flip_tta = flip_tta;
        opts.temporal_tta = temporal_tta_flag;
        opts.oracle = oracle;
        opts.seed = seed;
        const auto result = run_pipeline(scene, weights, cfg, opts);
        py::list preds;
        for (const auto& p : result.predictions) preds.append(array_from(p.probs));
        py::dict out;
        out["report"] = result.report.dump();
        out["predictions"] = preds;
        return out;
      },
      py::arg("scene_json"), py::arg("config_json") = std::nullopt, py::arg("seed") = 42,
      py::arg("flip_tta") = false, py::arg("temporal_tta") = false, py::arg("oracle") = false,
      py::arg("threads") = 1);

  // Container IO.
  m.def("read_prediction",
        [](const std::string& path) { return array_from(read_prediction(path).probs); });
  m.def("write_prediction", [](const std::string& path, const DoubleArray& probs) {
    write_prediction(path, prediction_from(probs));
  });
  m.def("read_occupancy_gt", [](const std::string& path) {
    const auto gt = read_occupancy_gt(path);
    return py::make_tuple(labels_array(gt.labels, gt.shape),
                          labels_array(gt.camera_mask, gt.shape));
  });
  m.def("write_occupancy_gt",
        [](const std::string& path, const ByteArray& labels, const std::optional<ByteArray>& mask) {
          write_occupancy_gt(path, grid_from(labels, mask));
        },
        py::arg("path"), py::arg("labels"), py::arg("mask") = std::nullopt);
}
