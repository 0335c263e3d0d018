#pragma once

// End-to-end commands behind the gmmloc CLI. Each command reads and writes
// artifacts in one output directory and records itself in `manifest.txt`.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gmmloc/adaptation.hpp"
#include "gmmloc/config.hpp"
#include "gmmloc/depth.hpp"
#include "gmmloc/evaluation.hpp"
#include "gmmloc/filter.hpp"
#include "gmmloc/gmm.hpp"
#include "gmmloc/io.hpp"
#include "gmmloc/scene.hpp"

namespace gmmloc::cli {

namespace fs = std::filesystem;

inline constexpr const char* kManifest = "manifest.txt";

/// Sectioned manifest: one "[name]" block per command run. Re-running a
/// command replaces its own block; blocks are kept sorted by name.
class Manifest {
 public:
  explicit Manifest(fs::path dir) : path_(std::move(dir) / kManifest) {
    std::ifstream f(path_);
    std::string line, current;
    while (std::getline(f, line)) {
      if (line.size() > 2 && line.front() == '[' && line.back() == ']') {
        current = line.substr(1, line.size() - 2);
        sections_[current];
      } else if (!current.empty() && !line.empty()) {
        sections_[current].push_back(line);
      }
    }
  }

  void put(const std::string& section, std::vector<std::string> lines) {
    sections_[section] = std::move(lines);
    std::ofstream f(path_);
    if (!f) throw InputError("cannot write " + path_.string());
    f << "# gmmloc run manifest\n";
    for (const auto& [name, body] : sections_) {
      f << '[' << name << "]\n";
      for (const auto& l : body) f << l << '\n';
    }
  }

  const std::map<std::string, std::vector<std::string>>& sections() const { return sections_; }

  /// Value of "key = value" inside a section.
  std::optional<std::string> value(const std::string& section, const std::string& key) const {
    const auto it = sections_.find(section);
    if (it == sections_.end()) return std::nullopt;
    const std::string prefix = key + " = ";
    for (const auto& l : it->second)
      if (l.rfind(prefix, 0) == 0) return l.substr(prefix.size());
    return std::nullopt;
  }

 private:
  fs::path path_;
  std::map<std::string, std::vector<std::string>> sections_;
};

/// Collects the manifest block for one command run.
class RunRecord {
 public:
  RunRecord(const RunConfig& cfg, fs::path out) : cfg_(cfg), out_(std::move(out)) {
    lines_.push_back("config_hash = " + cfg.hash());
  }

  fs::path file(const std::string& rel) {
    files_.push_back(rel);
    return out_ / rel;
  }

  template <typename T>
  void metric(const std::string& key, const T& v) {
    std::ostringstream os;
    os << std::setprecision(io::kTablePrecision) << v;
    lines_.push_back(key + " = " + os.str());
  }

  void commit(const std::string& section) {
    std::vector<std::string> body = lines_;
    for (const auto& f : files_) body.push_back("file = " + f);
    std::istringstream dump(cfg_.dump());
    std::string l;
    while (std::getline(dump, l)) body.push_back("config." + l);
    Manifest(out_).put(section, std::move(body));
  }

 private:
  const RunConfig& cfg_;
  fs::path out_;
  std::vector<std::string> lines_;
  std::vector<std::string> files_;
};

inline std::string frame_name(const std::string& kind, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "depth/%s_%04zu.dmap", kind.c_str(), i);
  return buf;
}

inline SceneModel load_scene(const RunConfig& cfg) {
  const auto& path = cfg.str("scene");
  if (path.empty()) return default_room();
  if (!fs::exists(path)) throw InputError("scene file not found: " + path);
  return io::load_scene(path);
}

/// Map samples: exact surface points plus simulated scanner noise.
inline PointCloud map_cloud(const SceneModel& scene, const RunConfig& cfg) {
  const auto n = cfg.integer("map.points");
  if (n < 0) throw ConfigError("map.points must be >= 0");
  return perturb_cloud(sample_surface(scene, static_cast<std::size_t>(n), cfg.stream(0x6d70)),
                       cfg.real("map.noise"), cfg.stream(0x6d6e));
}

/// Training frames are degraded with the same systematic error as the test
/// frames but draw their own noise (frame keys offset by 1e6).
inline TrainingBatch training_batch(const SceneModel& scene, const RunConfig& cfg) {
  TrainingBatch b;
  b.intrinsics = cfg.intrinsics();
  const auto poses = generate_trajectory(cfg.trajectory("train_traj"));
  const auto params = cfg.degradation();
  for (std::size_t i = 0; i < poses.size(); ++i)
    b.frames.push_back(
        {degrade(render_ground_truth(scene, poses[i], b.intrinsics), params, 1000000 + i),
         poses[i]});
  return b;
}

// ---------------------------------------------------------------------------

struct SimulateResult {
  std::size_t frames = 0;
  std::vector<double> ssim;  // degraded vs clean per frame
};

inline SimulateResult cmd_simulate(const RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out / "depth");
  RunRecord rec(cfg, out);
  const auto scene = load_scene(cfg);
  const auto k = cfg.intrinsics();
  const auto params = cfg.degradation();
  io::save_scene(rec.file("scene.txt"), scene);
  io::save_cloud(rec.file("cloud.xyz"), map_cloud(scene, cfg));
  const auto truth = generate_trajectory(cfg.trajectory());
  io::save_poses(rec.file("truth.csv"), truth);

  SimulateResult res;
  res.frames = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto clean = render_ground_truth(scene, truth[i], k);
    const auto bad = degrade(clean, params, i);
    io::save_depth(rec.file(frame_name("clean", i)), clean);
    io::save_depth(rec.file(frame_name("degraded", i)), bad);
    res.ssim.push_back(ssim(bad, clean));
  }
  rec.metric("frames", truth.size());
  double mean_ssim = 0.0;
  for (double s : res.ssim) mean_ssim += s / static_cast<double>(res.ssim.size());
  rec.metric("mean_ssim_degraded", res.ssim.empty() ? 1.0 : mean_ssim);
  rec.commit("simulate");
  return res;
}

struct FitMapResult {
  GmmMap map;
  std::vector<double> avg_loglik;
};

inline FitMapResult cmd_fit_map(const RunConfig& cfg, const fs::path& out,
                                std::optional<fs::path> cloud_path = std::nullopt) {
  RunRecord rec(cfg, out);
  const fs::path src = cloud_path.value_or(out / "cloud.xyz");
  const auto cloud = io::load_cloud(src);
  const auto fit = em_fit(cloud, cfg.em());
  io::save_gmm(rec.file("map.gmm"), fit.map);
  io::save(rec.file("em_log.csv"), [&](std::ostream& os) {
    os << std::setprecision(io::kFullPrecision) << "iteration,avg_loglik\n";
    for (std::size_t i = 0; i < fit.avg_loglik.size(); ++i)
      os << i << ',' << fit.avg_loglik[i] << '\n';
  });
  rec.metric("em_iterations", fit.avg_loglik.size());
  rec.metric("final_avg_loglik", fit.avg_loglik.back());
  rec.metric("converged", fit.converged ? 1 : 0);
  rec.commit("fit-map");
  return {fit.map, fit.avg_loglik};
}

struct LocalizeOptions {
  std::string depth = "degraded";  // clean | degraded
  std::optional<fs::path> map;          // default: <out>/map.gmm
  std::optional<fs::path> adapted_map;  // overrides map
  std::optional<fs::path> correction;
  std::string label;  // default: "<depth>_<baseline|adapted>"
};

struct LocalizeResult {
  std::string label;
  double rmse = 0.0;
  std::vector<FrameResult> frames;
};

inline LocalizeResult cmd_localize(const RunConfig& cfg, const fs::path& out,
                                   const LocalizeOptions& opt = {}) {
  if (opt.depth != "clean" && opt.depth != "degraded")
    throw InputError("--depth must be 'clean' or 'degraded'");
  RunRecord rec(cfg, out);
  const auto k = cfg.intrinsics();
  const bool adapted = opt.adapted_map || opt.correction;
  LocalizeResult res;
  res.label = opt.label.empty() ? opt.depth + (adapted ? "_adapted" : "_baseline") : opt.label;

  const auto map = io::load_gmm(opt.adapted_map.value_or(opt.map.value_or(out / "map.gmm")));
  std::optional<DepthCorrection> corr;
  if (opt.correction) corr = io::load_correction(*opt.correction);
  const auto truth = io::load_poses(out / "truth.csv");
  std::vector<DepthRaster> rasters;
  for (std::size_t i = 0; i < truth.size(); ++i)
    rasters.push_back(io::load_depth(out / frame_name(opt.depth, i)));
  const FileBackedProvider provider(std::move(rasters));

  res.frames = run_trajectory(provider, corr ? &*corr : nullptr, map, truth, k, cfg.filter());
  std::vector<Pose> est;
  for (const auto& f : res.frames) est.push_back(f.estimate);
  res.rmse = trajectory_rmse(est, truth);
  const auto perr = position_errors(est, truth);
  const auto rerr = rotation_errors(est, truth);

  io::save(rec.file("estimates_" + res.label + ".csv"),
           [&](std::ostream& os) { io::write_estimates(os, res.frames); });
  io::save(rec.file("report_" + res.label + ".txt"), [&](std::ostream& os) {
    os << std::setprecision(io::kTablePrecision);
    double mean_rot = 0.0;
    for (double r : rerr) mean_rot += r / static_cast<double>(std::max<std::size_t>(1, rerr.size()));
    os << "label = " << res.label << "\nframes = " << truth.size()
       << "\nposition_rmse = " << res.rmse << "\nmean_rotation_error = " << mean_rot << '\n';
    os << "frame,position_error,rotation_error\n";
    for (std::size_t i = 0; i < perr.size(); ++i)
      os << i << ',' << perr[i] << ',' << rerr[i] << '\n';
  });
  rec.metric("position_rmse", res.rmse);
  rec.metric("map", opt.adapted_map ? "adapted" : "base");
  rec.metric("correction", opt.correction ? "yes" : "no");
  rec.commit("localize " + res.label);
  return res;
}

struct AdaptResult {
  TrainResult train;
  double mean_displacement = 0.0;
  double median_c2c = 0.0;
  double scene_diagonal = 0.0;
  C2cHistogram c2c;
};

inline AdaptResult cmd_adapt(const RunConfig& cfg, const fs::path& out,
                             std::optional<fs::path> map_path = std::nullopt) {
  RunRecord rec(cfg, out);
  const auto scene = load_scene(cfg);
  const auto base = io::load_gmm(map_path.value_or(out / "map.gmm"));
  const auto cloud = io::load_cloud(out / "cloud.xyz");
  const auto batch = training_batch(scene, cfg);
  if (batch.frames.empty()) throw InputError("adapt: training trajectory has no frames");

  AdaptResult res;
  res.train = train(batch, base, cfg.training());
  const auto am = adapt_map(res.train.mlp, base);
  const auto adapted_cloud = adapt_point_cloud(res.train.mlp, cloud);
  res.mean_displacement = mean_displacement(am);
  res.c2c = cloud_to_cloud(cloud, adapted_cloud, static_cast<int>(cfg.integer("eval.bins")));
  res.median_c2c = res.c2c.median();
  res.scene_diagonal = bounds(scene).diagonal();

  io::save_mlp(rec.file("mlp.txt"), res.train.mlp);
  io::save_correction(rec.file("correction.txt"), res.train.correction);
  io::save(rec.file("loss.csv"),
           [&](std::ostream& os) { io::write_loss_history(os, res.train.loss_history); });
  io::save_gmm(rec.file("adapted_map.gmm"), am.adapted);
  io::save_cloud(rec.file("adapted_cloud.xyz"), adapted_cloud);
  io::save(rec.file("c2c_histogram.csv"), [&](std::ostream& os) { io::write_histogram(os, res.c2c); });
  io::save(rec.file("c2c_distances.csv"), [&](std::ostream& os) { io::write_distances(os, res.c2c); });
  rec.metric("initial_loss", res.train.loss_history.front());
  rec.metric("final_loss", res.train.loss_history.back());
  rec.metric("mean_component_displacement", res.mean_displacement);
  rec.metric("median_c2c", res.median_c2c);
  rec.metric("scene_diagonal", res.scene_diagonal);
  rec.metric("diverged", res.train.diverged ? 1 : 0);
  rec.commit("adapt");
  if (res.train.diverged) throw NumericalError("adapt: " + res.train.diagnostic);
  return res;
}

struct EvalOptions {
  std::optional<fs::path> truth, estimate;
  std::optional<fs::path> depth_a, depth_b;
  std::optional<fs::path> cloud_a, cloud_b;
  int bins = 20;
};

/// Key-value report for whichever artifact pairs were given.
inline std::string cmd_eval(const EvalOptions& opt, std::optional<fs::path> out_file = std::nullopt) {
  std::ostringstream os;
  os << std::setprecision(io::kTablePrecision);
  bool any = false;
  std::optional<C2cHistogram> hist;
  if (opt.truth || opt.estimate) {
    if (!opt.truth || !opt.estimate) throw InputError("eval: --truth and --est go together");
    const auto t = io::load_poses(*opt.truth);
    const auto e = io::load_poses(*opt.estimate);
    os << "position_rmse = " << trajectory_rmse(e, t) << '\n';
    const auto r = rotation_errors(e, t);
    double mr = 0.0;
    for (double v : r) mr += v / static_cast<double>(std::max<std::size_t>(1, r.size()));
    os << "mean_rotation_error = " << mr << '\n';
    any = true;
  }
  if (opt.depth_a || opt.depth_b) {
    if (!opt.depth_a || !opt.depth_b) throw InputError("eval: --depth-a and --depth-b go together");
    os << "ssim = " << ssim(io::load_depth(*opt.depth_a), io::load_depth(*opt.depth_b)) << '\n';
    any = true;
  }
  if (opt.cloud_a || opt.cloud_b) {
    if (!opt.cloud_a || !opt.cloud_b) throw InputError("eval: --cloud-a and --cloud-b go together");
    hist = cloud_to_cloud(io::load_cloud(*opt.cloud_a), io::load_cloud(*opt.cloud_b), opt.bins);
    os << "c2c_mean = " << hist->mean() << "\nc2c_median = " << hist->median() << '\n';
    any = true;
  }
  if (!any) throw InputError("eval: nothing to evaluate");
  std::string report = os.str();
  if (hist) {
    std::ostringstream h;
    io::write_histogram(h, *hist);
    report += h.str();
  }
  if (out_file) io::save(*out_file, [&](std::ostream& f) { f << report; });
  return report;
}

}  // namespace gmmloc::cli
