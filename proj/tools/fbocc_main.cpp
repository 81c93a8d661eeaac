// Command-line front end for the occupancy pipeline: scene generation,
// inference, evaluation, losses, TTA, ensembling and weight search.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fbocc/container.hpp"
#include "fbocc/pipeline.hpp"

namespace {

using nlohmann::json;

struct GlobalArgs {
  std::string config_path;
  std::uint64_t seed = 42;
  int threads = 0;  // 0: keep the config's value

  fbocc::PipelineConfig load_config() const {
    fbocc::PipelineConfig cfg;
    if (!config_path.empty()) cfg = fbocc::PipelineConfig::load(config_path);
    if (threads > 0) cfg.threads = threads;
    return cfg;
  }
};

void write_json(const std::string& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << doc.dump(2) << "\n";
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json doc;
  in >> doc;
  return doc;
}

std::string frame_path(const std::string& path, std::size_t frame, std::size_t frames) {
  if (frames <= 1) return path;
  const std::filesystem::path p(path);
  std::filesystem::path out = p.parent_path();
  out /= p.stem().string() + "_frame" + std::to_string(frame) + p.extension().string();
  return out.string();
}

struct MemberEntry {
  std::string id;
  fbocc::EnsembleMember member;
};

std::vector<MemberEntry> load_members(const std::string& manifest_path) {
  const json doc = read_json(manifest_path);
  if (!doc.is_array()) throw std::runtime_error("member manifest must be a JSON array");
  std::vector<MemberEntry> members;
  std::size_t index = 0;
  for (const auto& j : doc) {
    MemberEntry entry;
    entry.id = j.value("id", "member_" + std::to_string(index));
    entry.member.prediction = fbocc::read_prediction(j.at("prediction").get<std::string>());
    entry.member.model_miou = j.value("model_miou", 1.0);
    if (j.contains("class_ious")) {
      const auto ious = j["class_ious"].get<std::vector<double>>();
      if (ious.size() != fbocc::kNumClasses) {
        throw std::runtime_error("member '" + entry.id + "': class_ious must have 18 entries");
      }
      std::copy(ious.begin(), ious.end(), entry.member.class_ious.begin());
    } else {
      entry.member.class_ious.fill(1.0);
    }
    members.push_back(std::move(entry));
    ++index;
  }
  if (members.empty()) throw std::runtime_error("member manifest is empty");
  return members;
}

json weights_to_json(const fbocc::EnsembleWeights& w, std::span<const MemberEntry> members) {
  json rows = json::array();
  for (std::size_t m = 0; m < members.size(); ++m) {
    json cw;
    for (std::size_t c = 0; c < fbocc::kNumClasses; ++c) {
      cw[std::string(fbocc::kClassNames[c])] = w.per_class[m][c];
    }
    rows.push_back({{"id", members[m].id},
                    {"model_weight", w.model[m]},
                    {"class_weights", cw}});
  }
  return {{"members", rows}};
}

fbocc::EnsembleWeights weights_from_json(const json& doc,
                                         std::span<const MemberEntry> members) {
  fbocc::EnsembleWeights w;
  w.model.assign(members.size(), 1.0);
  std::array<double, fbocc::kNumClasses> ones;
  ones.fill(1.0);
  w.per_class.assign(members.size(), ones);
  for (const auto& row : doc.at("members")) {
    const auto id = row.at("id").get<std::string>();
    std::optional<std::size_t> idx;
    for (std::size_t m = 0; m < members.size(); ++m) {
      if (members[m].id == id) idx = m;
    }
    if (!idx) throw std::runtime_error("weight table references unknown member '" + id + "'");
    w.model[*idx] = row.value("model_weight", 1.0);
    if (row.contains("class_weights")) {
      for (std::size_t c = 0; c < fbocc::kNumClasses; ++c) {
        const std::string name(fbocc::kClassNames[c]);
        if (row["class_weights"].contains(name)) {
          w.per_class[*idx][c] = row["class_weights"][name].get<double>();
        }
      }
    }
  }
  return w;
}

fbocc::ModelWeights resolve_weights(const std::string& weights_path,
                                    const std::string& save_weights_path,
                                    const fbocc::PipelineConfig& cfg, std::uint64_t seed) {
  fbocc::ModelWeights w = weights_path.empty()
                              ? fbocc::ModelWeights::random(cfg, seed)
                              : fbocc::ModelWeights::load(weights_path, cfg);
  if (!save_weights_path.empty()) w.save(save_weights_path);
  return w;
}

int run_infer(const GlobalArgs& global, const std::string& scene_path,
              const std::string& weights_path, const std::string& save_weights_path,
              const std::string& out_path, const std::string& gt_out_path,
              const std::string& report_path, const std::string& timings_path, bool flip_tta,
              bool temporal_tta, bool oracle) {
  const auto cfg = global.load_config();
  const auto scene = fbocc::SceneSpec::load(scene_path);
  const auto weights = resolve_weights(weights_path, save_weights_path, cfg, global.seed);

  fbocc::PipelineOptions opts;
  opts.flip_tta = flip_tta;
  opts.temporal_tta = temporal_tta;
  opts.oracle = oracle;
  opts.seed = global.seed;
  const auto result = fbocc::run_pipeline(scene, weights, cfg, opts);

  if (!out_path.empty()) {
    for (std::size_t f = 0; f < result.predictions.size(); ++f) {
      fbocc::write_prediction(frame_path(out_path, f, result.predictions.size()),
                              result.predictions[f]);
    }
  }
  if (!gt_out_path.empty()) {
    for (std::size_t f = 0; f < result.ground_truth.size(); ++f) {
      fbocc::write_occupancy_gt(frame_path(gt_out_path, f, result.ground_truth.size()),
                                result.ground_truth[f]);
    }
  }
  if (!report_path.empty()) write_json(report_path, result.report);
  if (!timings_path.empty()) write_json(timings_path, result.timings.to_json());
  std::cout << result.report.dump(2) << "\n";
  std::cerr << "timings: " << result.timings.to_json().dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale forward-backward occupancy prediction engine"};
  app.require_subcommand(1);

  GlobalArgs global;
  app.add_option("--config", global.config_path, "Pipeline config JSON");
  app.add_option("--seed", global.seed, "Seed for scene/weight generation and search");
  app.add_option("--threads", global.threads, "Worker threads for parallel stages");

  // gen-scene
  auto* gen = app.add_subcommand("gen-scene", "Write a synthetic scene spec (and optional GT)");
  std::string gen_preset = "simple", gen_out, gen_gt;
  gen->add_option("--preset", gen_preset, "simple|random");
  gen->add_option("--out", gen_out, "Scene JSON output path")->required();
  gen->add_option("--gt", gen_gt, "Also write frame-0 ground truth container");

  // infer / tta
  std::string scene_path, weights_path, save_weights_path, pred_out, gt_out, report_path,
      timings_path;
  bool opt_tta = false, opt_temporal = false, opt_oracle = false;
  auto add_infer_options = [&](CLI::App* cmd, bool with_tta_flag) {
    cmd->add_option("--scene", scene_path, "Scene JSON")->required();
    cmd->add_option("--weights", weights_path, "Model weights container (seeded random if absent)");
    cmd->add_option("--save-weights", save_weights_path, "Write the weights actually used");
    cmd->add_option("--out", pred_out, "Prediction container output");
    cmd->add_option("--gt-out", gt_out, "Ground-truth container output");
    cmd->add_option("--report", report_path, "Metrics report JSON output");
    cmd->add_option("--timings", timings_path, "Stage timing JSON output");
    cmd->add_flag("--temporal-tta", opt_temporal, "Enable temporal TTA");
    cmd->add_flag("--oracle", opt_oracle, "Replace the model with one-hot ground truth");
    if (with_tta_flag) cmd->add_flag("--tta", opt_tta, "Enable 8-way flip TTA");
  };
  auto* infer = app.add_subcommand("infer", "Run the pipeline on a scene");
  add_infer_options(infer, true);
  auto* tta = app.add_subcommand("tta", "Run the pipeline with 8-way flip TTA");
  add_infer_options(tta, false);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate predictions against ground truth");
  std::vector<std::string> eval_preds, eval_gts;
  std::string eval_out;
  bool eval_no_mask = false;
  eval->add_option("--pred", eval_preds, "Prediction containers")->required();
  eval->add_option("--gt", eval_gts, "Ground-truth containers")->required();
  eval->add_option("--out", eval_out, "Report JSON output");
  eval->add_flag("--no-mask", eval_no_mask, "Ignore the camera-visibility mask");

  // eval-loss
  auto* eval_loss = app.add_subcommand("eval-loss", "Per-term loss breakdown as JSON");
  std::string loss_pred, loss_gt, loss_scene, loss_weights_path, loss_lidar, loss_out;
  eval_loss->add_option("--pred", loss_pred, "Prediction container")->required();
  eval_loss->add_option("--gt", loss_gt,
                        "Ground-truth container (without --scene, assumes 0.4 m voxels centered "
                        "horizontally with the ground at -1 m)")
      ->required();
  eval_loss->add_option("--scene", loss_scene,
                        "Scene JSON; adds the 2D depth/semantic terms from rendered views");
  eval_loss->add_option("--weights", loss_weights_path, "Model weights for the 2D terms");
  eval_loss->add_option("--lidar", loss_lidar,
                        "XYZ[+label] text point cloud; 2D supervision comes from projected "
                        "points instead of rendered views");
  eval_loss->add_option("--out", loss_out, "Breakdown JSON output");

  // ensemble
  auto* ens = app.add_subcommand("ensemble", "Weighted combination of member predictions");
  std::string ens_manifest, ens_weights, ens_out;
  ens->add_option("--members", ens_manifest, "Member manifest JSON")->required();
  ens->add_option("--weights", ens_weights, "Weight table JSON (defaults to member scores)");
  ens->add_option("--out", ens_out, "Combined prediction output")->required();

  // search-weights
  auto* search = app.add_subcommand("search-weights", "Search ensemble weights on validation GT");
  std::string sw_manifest, sw_gt, sw_out;
  std::size_t sw_budget = 64;
  search->add_option("--members", sw_manifest, "Member manifest JSON")->required();
  search->add_option("--gt", sw_gt, "Validation ground-truth container")->required();
  search->add_option("--budget", sw_budget, "Trial budget");
  search->add_option("--out", sw_out, "Weight table JSON output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto scene = fbocc::make_preset_scene(gen_preset, global.seed);
      scene.save(gen_out);
      if (!gen_gt.empty()) {
        auto gt = fbocc::rasterize_scene(scene.at_frame(0), scene.grid);
        gt.camera_mask = fbocc::visibility_mask(gt.labels, scene.grid, scene.rig, global.threads);
        fbocc::write_occupancy_gt(gen_gt, gt);
      }
      std::cout << "wrote " << gen_out << "\n";
      return 0;
    }
    if (infer->parsed() || tta->parsed()) {
      const bool flip = tta->parsed() || opt_tta;
      return run_infer(global, scene_path, weights_path, save_weights_path, pred_out, gt_out,
                       report_path, timings_path, flip, opt_temporal, opt_oracle);
    }
    if (eval->parsed()) {
      if (eval_preds.size() != eval_gts.size()) {
        throw std::runtime_error("eval: need one --gt per --pred");
      }
      const auto cfg = global.load_config();
      fbocc::ConfusionMatrix cm(fbocc::kNumClasses);
      for (std::size_t i = 0; i < eval_preds.size(); ++i) {
        const auto pred = fbocc::read_prediction(eval_preds[i]);
        const auto gt = fbocc::read_occupancy_gt(eval_gts[i]);
        cm += fbocc::accumulate(fbocc::decode(pred), gt, !eval_no_mask);
      }
      const auto classes = cfg.eval_classes();
      const auto report = fbocc::metrics_report(cm, classes);
      if (!eval_out.empty()) write_json(eval_out, report);
      std::cout << report.dump(2) << "\n";
      return 0;
    }
    if (eval_loss->parsed()) {
      const auto cfg = global.load_config();
      const auto pred = fbocc::read_prediction(loss_pred);
      const auto gt = fbocc::read_occupancy_gt(loss_gt);
      fbocc::LossTerms terms;
      // 3D terms need the metric grid; infer it from the GT shape with
      // the scene's grid when given, else assume the desk preset extent.
      fbocc::VoxelGridSpec grid;
      std::optional<fbocc::SceneSpec> scene;
      if (!loss_scene.empty()) {
        scene = fbocc::SceneSpec::load(loss_scene);
        grid = scene->grid;
      } else {
        // Without a scene, assume 0.4 m voxels centered horizontally
        // with the ground at -1 m (the nuScenes occupancy layout).
        grid.voxel_size = 0.4;
        grid.min_corner = Eigen::Vector3d(-0.2 * static_cast<double>(gt.shape[0]),
                                          -0.2 * static_cast<double>(gt.shape[1]), -1.0);
        grid.max_corner = Eigen::Vector3d(0.2 * static_cast<double>(gt.shape[0]),
                                          0.2 * static_cast<double>(gt.shape[1]),
                                          -1.0 + 0.4 * static_cast<double>(gt.shape[2]));
      }
      terms.focal = fbocc::distance_aware_focal(pred, gt, grid);
      terms.dice = fbocc::dice_loss(pred, gt);
      terms.scal_geo = fbocc::scal_geo(pred, gt);
      terms.scal_sem = fbocc::scal_sem(pred, gt);
      terms.lovasz = fbocc::lovasz_softmax(pred, gt);
      if (scene && !loss_weights_path.empty()) {
        const auto weights = fbocc::ModelWeights::load(loss_weights_path, cfg);
        const auto frame_scene = scene->at_frame(0);
        const auto labels = fbocc::rasterize_scene(frame_scene, scene->grid).labels;
        const auto views =
            fbocc::render_views(labels, scene->grid, scene->rig, global.threads);
        std::optional<fbocc::LidarFrame> lidar;
        if (!loss_lidar.empty()) lidar = fbocc::load_lidar_xyz(loss_lidar);
        double depth_sum = 0.0, sem_sum = 0.0;
        for (std::size_t m = 0; m < views.size(); ++m) {
          const auto img = fbocc::view_to_image(views[m], cfg.bins.max_depth);
          const auto enc = fbocc::predict_depth_and_context(img, cfg.encoder, weights.encoder);
          fbocc::SparseDepthMap gt_depth;
          fbocc::SparseLabelMap gt_sem;
          const int stride = enc.features.stride;
          if (lidar) {
            // Projected points, min-pooled to feature resolution.
            const auto image_res = fbocc::lidar_to_image(*lidar, scene->rig[m]);
            gt_depth = fbocc::downsample_depth_map(image_res, stride);
            for (const auto& [key, sample] : gt_depth) {
              if (sample.label) gt_sem[key] = *sample.label;
            }
          } else {
            // Rendered depth/semantics at the feature-cell centers.
            const std::size_t hf = enc.features.values.dim(1), wf = enc.features.values.dim(2);
            for (std::size_t y = 0; y < hf; ++y) {
              for (std::size_t x = 0; x < wf; ++x) {
                const auto py = static_cast<std::size_t>(y) * stride + stride / 2;
                const auto px = static_cast<std::size_t>(x) * stride + stride / 2;
                const std::size_t pix = py * static_cast<std::size_t>(views[m].width) + px;
                if (views[m].depth[pix] == fbocc::kDepthMiss) continue;
                gt_depth[{static_cast<int>(y), static_cast<int>(x)}] = {views[m].depth[pix], {}};
                gt_sem[{static_cast<int>(y), static_cast<int>(x)}] = views[m].semantic[pix];
              }
            }
          }
          depth_sum += fbocc::depth_ce(enc.depth, gt_depth, cfg.bins);
          sem_sum += fbocc::semantic2d_ce(enc.semantics, gt_sem);
        }
        terms.depth = depth_sum / static_cast<double>(views.size());
        terms.semantic2d = sem_sum / static_cast<double>(views.size());
      }
      const auto breakdown = fbocc::total_loss(terms, cfg.loss_weights);
      json doc;
      doc["terms"] = breakdown.weighted_terms;
      doc["total"] = breakdown.total;
      if (!loss_out.empty()) write_json(loss_out, doc);
      std::cout << doc.dump(2) << "\n";
      return 0;
    }
    if (ens->parsed()) {
      const auto members = load_members(ens_manifest);
      std::vector<fbocc::EnsembleMember> plain;
      for (const auto& e : members) plain.push_back(e.member);
      std::optional<fbocc::EnsembleWeights> weights;
      if (!ens_weights.empty()) weights = weights_from_json(read_json(ens_weights), members);
      const auto combined = fbocc::ensemble(plain, weights);
      fbocc::write_prediction(ens_out, combined);
      std::cout << "wrote " << ens_out << "\n";
      return 0;
    }
    if (search->parsed()) {
      const auto members = load_members(sw_manifest);
      std::vector<fbocc::EnsembleMember> plain;
      for (const auto& e : members) plain.push_back(e.member);
      const auto gt = fbocc::read_occupancy_gt(sw_gt);
      const auto result = fbocc::search_weights(plain, gt, sw_budget, global.seed);
      json doc = weights_to_json(result.weights, members);
      doc["achieved_miou"] = result.achieved_miou;
      if (!sw_out.empty()) write_json(sw_out, doc);
      std::cout << doc.dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
