#pragma once

// Flat key-value run configuration.
//
//   # comment
//   key = value
//
// Every key has a documented default; unknown keys are rejected. Vectors use
// "x,y,z"; waypoint lists use "x,y,z;x,y,z;...".

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gmmloc/adaptation.hpp"
#include "gmmloc/depth.hpp"
#include "gmmloc/detail/rng.hpp"
#include "gmmloc/errors.hpp"
#include "gmmloc/filter.hpp"
#include "gmmloc/geometry.hpp"
#include "gmmloc/gmm.hpp"
#include "gmmloc/scene.hpp"

namespace gmmloc {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

// clang-format off
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "42", "master seed; every random stream is derived from it"},
      {"scene", "", "scene description file; empty = built-in 6x6x3 m room"},
      {"camera.width", "160", "raster width, pixels"},
      {"camera.height", "120", "raster height, pixels"},
      {"camera.fx", "120", "focal length x, pixels"},
      {"camera.fy", "120", "focal length y, pixels"},
      {"camera.cx", "80", "principal point x, pixels"},
      {"camera.cy", "60", "principal point y, pixels"},
      {"map.points", "20000", "surface samples used to build the map"},
      {"map.noise", "0.02", "isotropic noise added to map samples, m"},
      {"gmm.components", "64", "mixture components K"},
      {"gmm.max_iters", "100", "EM iteration cap"},
      {"gmm.tol", "1e-6", "EM stop when average log-likelihood gain < tol"},
      {"traj.kind", "circle", "circle | line | waypoints"},
      {"traj.frames", "50", "frame count"},
      {"traj.center", "0,0,0", "circle center, m"},
      {"traj.radius", "1.5", "circle radius, m"},
      {"traj.phase", "0", "circle start angle, rad"},
      {"traj.sweep", "6.283185307179586", "circle arc covered by the frames, rad"},
      {"traj.start", "0,0,0", "line start, m"},
      {"traj.end", "0,0,0", "line end, m"},
      {"traj.waypoints", "", "waypoint list, m"},
      {"traj.target", "0,0,-1", "look-at target, m"},
      {"train_traj.kind", "circle", "training trajectory kind"},
      {"train_traj.frames", "20", "training frame count"},
      {"train_traj.center", "0,0,0.2", "training circle center, m"},
      {"train_traj.radius", "1.8", "training circle radius, m"},
      {"train_traj.phase", "0.3", "training circle start angle, rad"},
      {"train_traj.sweep", "6.283185307179586", "training circle arc, rad"},
      {"train_traj.start", "0,0,0", "training line start, m"},
      {"train_traj.end", "0,0,0", "training line end, m"},
      {"train_traj.waypoints", "", "training waypoint list, m"},
      {"train_traj.target", "0,0,-1", "training look-at target, m"},
      {"degrade.scale", "0.33", "model-size fraction s in (0, 1]"},
      {"degrade.gain", "auto", "a(s); auto = 1"},
      {"degrade.offset", "auto", "b(s), m; auto = 0.2 (1 - s)"},
      {"degrade.bias_amplitude", "auto", "beta(s), m; auto = 0.5 (1 - s)"},
      {"degrade.noise", "auto", "sigma(s), m; auto = 0.05 (1 - s) + 0.01"},
      {"degrade.bias_frequency", "0.5", "max bias-field cycles across the raster"},
      {"filter.particles", "500", "particle count"},
      {"filter.sigma_t", "0.02", "translation noise per step and axis, m"},
      {"filter.sigma_r", "0.01", "rotation noise per step and axis, rad"},
      {"filter.temperature", "0.1", "likelihood temperature tau"},
      {"filter.stride", "8", "pixel stride for back-projection"},
      {"filter.ess_threshold", "0.5", "resample when ESS < threshold * n"},
      {"filter.init_spread", "0.1", "half-width of the initial position box, m"},
      {"filter.init_yaw", "0.05", "half-range of the initial yaw, rad"},
      {"filter.threads", "1", "worker threads for particle weighting"},
      {"train.lambda", "100", "KL regularization weight"},
      {"train.lr", "0.01", "learning rate, depth correction"},
      {"train.mlp_lr", "0.001", "learning rate, map transform"},
      {"train.iterations", "300", "optimizer steps"},
      {"train.batch_size", "0", "frames per step; 0 = all"},
      {"train.stride", "8", "pixel stride for the loss"},
      {"train.hidden", "128", "hidden units of the map transform"},
      {"train.optimizer", "adam", "adam | gd"},
      {"train.threads", "1", "worker threads for loss evaluation"},
      {"eval.bins", "20", "cloud-to-cloud histogram bins"},
  };
  return keys;
}
// clang-format on

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
  }

  static RunConfig from_file(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw InputError("cannot read config " + p.string());
    RunConfig c;
    c.merge(f, p.string());
    return c;
  }

  void merge(std::istream& in, const std::string& origin = "config") {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  /// Parses "key=value".
  void set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
    }
  }

  long long integer(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
    }
  }

  Vec3 vec3(const std::string& key) const {
    const auto v = parse_vec3(str(key), key);
    return v;
  }

  /// Canonical "key = value" listing, sorted by key.
  std::string dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

  /// FNV-1a 64 of the canonical listing, as 16 hex digits.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : dump()) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }

  /// Independent seed for a named random stream.
  std::uint64_t stream(std::uint64_t tag) const { return detail::stream_seed(seed(), tag); }

  // -- typed views --------------------------------------------------------

  CameraIntrinsics intrinsics() const {
    CameraIntrinsics k;
    k.width = static_cast<int>(integer("camera.width"));
    k.height = static_cast<int>(integer("camera.height"));
    k.fx = real("camera.fx");
    k.fy = real("camera.fy");
    k.cx = real("camera.cx");
    k.cy = real("camera.cy");
    k.validate();
    return k;
  }

  TrajectorySpec trajectory(const std::string& prefix = "traj") const {
    TrajectorySpec t;
    const auto& kind = str(prefix + ".kind");
    if (kind == "circle") t.kind = TrajectoryKind::Circle;
    else if (kind == "line") t.kind = TrajectoryKind::Line;
    else if (kind == "waypoints") t.kind = TrajectoryKind::Waypoints;
    else throw ConfigError(prefix + ".kind: expected circle, line or waypoints");
    t.frames = static_cast<int>(integer(prefix + ".frames"));
    if (t.frames < 0) throw ConfigError(prefix + ".frames must be >= 0");
    t.center = vec3(prefix + ".center");
    t.radius = real(prefix + ".radius");
    t.phase = real(prefix + ".phase");
    t.sweep = real(prefix + ".sweep");
    t.start = vec3(prefix + ".start");
    t.end = vec3(prefix + ".end");
    t.target = vec3(prefix + ".target");
    const auto& wp = str(prefix + ".waypoints");
    std::stringstream ss(wp);
    std::string item;
    while (std::getline(ss, item, ';'))
      if (!trim(item).empty()) t.waypoints.push_back(parse_vec3(item, prefix + ".waypoints"));
    return t;
  }

  EmConfig em() const {
    EmConfig e;
    e.components = static_cast<int>(integer("gmm.components"));
    e.max_iters = static_cast<int>(integer("gmm.max_iters"));
    e.tol = real("gmm.tol");
    e.seed = stream(0x656d);
    return e;
  }

  DegradationParams degradation() const {
    auto p = DegradationParams::for_scale(real("degrade.scale"), stream(0x6467));
    auto override_if = [&](const char* key, double& field) {
      if (str(key) != "auto") field = real(key);
    };
    override_if("degrade.gain", p.gain);
    override_if("degrade.offset", p.offset);
    override_if("degrade.bias_amplitude", p.bias_amplitude);
    override_if("degrade.noise", p.noise_sigma);
    p.bias_frequency = real("degrade.bias_frequency");
    p.validate();
    return p;
  }

  FilterConfig filter() const {
    FilterConfig f;
    const auto n = integer("filter.particles");
    if (n < 1) throw ConfigError("filter.particles must be >= 1");
    f.particles = static_cast<std::size_t>(n);
    f.seed = stream(0x7066);
    f.sigma_t = real("filter.sigma_t");
    f.sigma_r = real("filter.sigma_r");
    f.temperature = real("filter.temperature");
    f.stride = static_cast<int>(integer("filter.stride"));
    f.ess_threshold = real("filter.ess_threshold");
    f.init_position_spread = real("filter.init_spread");
    f.init_yaw_spread = real("filter.init_yaw");
    f.threads = static_cast<int>(integer("filter.threads"));
    if (f.sigma_t < 0 || f.sigma_r < 0) throw ConfigError("filter noise must be >= 0");
    if (f.stride < 1) throw ConfigError("filter.stride must be >= 1");
    return f;
  }

  TrainConfig training() const {
    TrainConfig t;
    t.lambda = real("train.lambda");
    t.learning_rate = real("train.lr");
    t.mlp_learning_rate = real("train.mlp_lr");
    t.iterations = static_cast<int>(integer("train.iterations"));
    t.batch_size = static_cast<int>(integer("train.batch_size"));
    t.stride = static_cast<int>(integer("train.stride"));
    t.hidden = static_cast<int>(integer("train.hidden"));
    t.threads = static_cast<int>(integer("train.threads"));
    t.seed = stream(0x7472);
    const auto& opt = str("train.optimizer");
    if (opt == "adam") t.optimizer = Optimizer::Adam;
    else if (opt == "gd") t.optimizer = Optimizer::GradientDescent;
    else throw ConfigError("train.optimizer: expected adam or gd");
    if (t.lambda < 0) throw ConfigError("train.lambda must be >= 0");
    if (t.learning_rate < 0 || t.mlp_learning_rate < 0)
      throw ConfigError("learning rates must be >= 0");
    if (t.iterations < 0 || t.stride < 1 || t.hidden < 1)
      throw ConfigError("train.iterations >= 0, train.stride >= 1, train.hidden >= 1 required");
    return t;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static Vec3 parse_vec3(const std::string& s, const std::string& key) {
    std::stringstream ss(s);
    std::string item;
    std::vector<double> v;
    while (std::getline(ss, item, ',')) {
      try {
        v.push_back(std::stod(trim(item)));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad vector '" + s + "'");
      }
    }
    if (v.size() != 3) throw ConfigError("config key '" + key + "': expected x,y,z");
    return {v[0], v[1], v[2]};
  }

  std::map<std::string, std::string> values_;
};

}  // namespace gmmloc
