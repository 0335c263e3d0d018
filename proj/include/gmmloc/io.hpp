#pragma once

// File formats. Text formats write doubles with 17 significant digits so a
// write/read cycle is exact; the trajectory estimate table uses 9.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "gmmloc/adaptation.hpp"
#include "gmmloc/depth.hpp"
#include "gmmloc/errors.hpp"
#include "gmmloc/evaluation.hpp"
#include "gmmloc/filter.hpp"
#include "gmmloc/geometry.hpp"
#include "gmmloc/gmm.hpp"
#include "gmmloc/scene.hpp"

namespace gmmloc::io {

namespace fs = std::filesystem;

inline constexpr int kFullPrecision = 17;
inline constexpr int kTablePrecision = 9;

namespace detail {

inline std::ofstream open_out(const fs::path& p, bool binary = false) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
  if (!f) throw InputError("cannot write " + p.string());
  return f;
}

inline std::ifstream open_in(const fs::path& p, bool binary = false) {
  std::ifstream f(p, binary ? std::ios::binary : std::ios::in);
  if (!f) throw InputError("cannot read " + p.string());
  return f;
}

/// Non-empty lines with '#' comments stripped.
inline std::vector<std::string> content_lines(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(line);
  }
  return out;
}

inline std::vector<double> numbers(const std::string& line, const std::string& what) {
  std::string s = line;
  for (char& c : s)
    if (c == ',') c = ' ';
  std::istringstream is(s);
  std::vector<double> v;
  std::string tok;
  while (is >> tok) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      if (tok == "nan" || tok == "-nan") {
        v.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      throw InputError(what + ": bad number '" + tok + "'");
    }
  }
  return v;
}

inline std::ostream& full(std::ostream& os) { return os << std::setprecision(kFullPrecision); }

}  // namespace detail

// ---------------------------------------------------------------------------
// GMM map: "gmm_map 1", "components K", then per component
// weight mx my mz cxx cxy cxz cyy cyz czz

inline void write_gmm(std::ostream& os, const GmmMap& m) {
  detail::full(os);
  os << "gmm_map 1\ncomponents " << m.size() << "\n";
  os << "# weight mean_x mean_y mean_z cov_xx cov_xy cov_xz cov_yy cov_yz cov_zz\n";
  for (const auto& c : m.components()) {
    const auto& s = c.covariance;
    os << c.weight << ' ' << c.mean.x() << ' ' << c.mean.y() << ' ' << c.mean.z() << ' '
       << s(0, 0) << ' ' << s(0, 1) << ' ' << s(0, 2) << ' ' << s(1, 1) << ' ' << s(1, 2) << ' '
       << s(2, 2) << '\n';
  }
}

inline GmmMap read_gmm(std::istream& is) {
  const auto lines = detail::content_lines(is);
  if (lines.size() < 2 || lines[0].rfind("gmm_map", 0) != 0)
    throw InputError("GMM file: missing 'gmm_map' header");
  std::istringstream hs(lines[1]);
  std::string key;
  std::size_t k = 0;
  if (!(hs >> key >> k) || key != "components") throw InputError("GMM file: missing component count");
  if (lines.size() != k + 2) throw InputError("GMM file: component count mismatch");
  std::vector<GaussianComponent> comps;
  for (std::size_t i = 0; i < k; ++i) {
    const auto v = detail::numbers(lines[i + 2], "GMM file");
    if (v.size() != 10) throw InputError("GMM file: component line needs 10 values");
    GaussianComponent c;
    c.weight = v[0];
    c.mean = Vec3(v[1], v[2], v[3]);
    c.covariance << v[4], v[5], v[6], v[5], v[7], v[8], v[6], v[8], v[9];
    comps.push_back(c);
  }
  return GmmMap(std::move(comps));
}

// ---------------------------------------------------------------------------
// Depth raster: "DMAP", u32 width, u32 height, width*height f32, little-endian.

inline void write_depth(std::ostream& os, const DepthRaster& d) {
  auto put32 = [&os](std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  os.write("DMAP", 4);
  put32(static_cast<std::uint32_t>(d.width));
  put32(static_cast<std::uint32_t>(d.height));
  for (float z : d.data) put32(std::bit_cast<std::uint32_t>(z));
}

inline DepthRaster read_depth(std::istream& is) {
  auto get32 = [&is]() {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw InputError("depth file: truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  };
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "DMAP", 4) != 0)
    throw InputError("depth file: bad magic");
  const std::uint32_t w = get32(), h = get32();
  if (w == 0 || h == 0 || static_cast<std::uint64_t>(w) * h > (1ULL << 28))
    throw InputError("depth file: implausible size");
  DepthRaster d(static_cast<int>(w), static_cast<int>(h));
  for (auto& z : d.data) z = std::bit_cast<float>(get32());
  if (is.peek() != std::char_traits<char>::eof()) throw InputError("depth file: trailing bytes");
  return d;
}

// ---------------------------------------------------------------------------
// Trajectories

inline constexpr const char* kPoseHeader = "frame,tx,ty,tz,qw,qx,qy,qz";
inline constexpr const char* kEstimateHeader = "frame,tx,ty,tz,qw,qx,qy,qz,ess,mean_loglik";

/// Ground-truth pose list at full precision.
inline void write_poses(std::ostream& os, const std::vector<Pose>& poses) {
  detail::full(os);
  os << kPoseHeader << '\n';
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto& p = poses[i];
    const auto& q = p.orientation;
    os << i << ',' << p.position.x() << ',' << p.position.y() << ',' << p.position.z() << ','
       << q.w() << ',' << q.x() << ',' << q.y() << ',' << q.z() << '\n';
  }
}

/// Filter output table, 9 significant digits.
inline void write_estimates(std::ostream& os, const std::vector<FrameResult>& frames) {
  os << std::setprecision(kTablePrecision);
  os << kEstimateHeader << '\n';
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& p = frames[i].estimate;
    const auto& q = p.orientation;
    os << i << ',' << p.position.x() << ',' << p.position.y() << ',' << p.position.z() << ','
       << q.w() << ',' << q.x() << ',' << q.y() << ',' << q.z() << ',' << frames[i].ess << ','
       << frames[i].mean_loglik << '\n';
  }
}

/// Reads either table; only the pose columns are returned.
inline std::vector<Pose> read_poses(std::istream& is) {
  std::vector<Pose> out;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (header) {
      header = false;
      if (line.rfind("frame", 0) == 0) continue;
    }
    const auto v = detail::numbers(line, "trajectory file");
    if (v.size() < 8) throw InputError("trajectory file: row needs at least 8 columns");
    if (static_cast<std::size_t>(v[0]) != out.size())
      throw InputError("trajectory file: frame indices must be consecutive from 0");
    out.emplace_back(Vec3(v[1], v[2], v[3]), Quat(v[4], v[5], v[6], v[7]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Point cloud: one "x y z" per line.

inline void write_cloud(std::ostream& os, const PointCloud& pc) {
  detail::full(os);
  for (const auto& p : pc.points) os << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

inline PointCloud read_cloud(std::istream& is) {
  PointCloud pc;
  for (const auto& line : detail::content_lines(is)) {
    const auto v = detail::numbers(line, "point cloud");
    if (v.size() != 3) throw InputError("point cloud: expected 'x y z' per line");
    Vec3 p(v[0], v[1], v[2]);
    if (!p.allFinite()) throw InputError("point cloud: non-finite coordinate");
    pc.points.push_back(p);
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Scene description:
//   plane  cx cy cz qw qx qy qz half_x half_y
//   box    cx cy cz half_x half_y half_z
//   sphere cx cy cz radius

inline void write_scene(std::ostream& os, const SceneModel& s) {
  detail::full(os);
  os << "# primitive center ... extents (meters)\n";
  for (const auto& prim : s.primitives) {
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          const Vec3& c = p.center;
          if constexpr (std::is_same_v<T, Plane>) {
            const auto& q = p.orientation;
            os << "plane " << c.x() << ' ' << c.y() << ' ' << c.z() << ' ' << q.w() << ' '
               << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << p.half_x << ' ' << p.half_y;
          } else if constexpr (std::is_same_v<T, Box>) {
            const Vec3& h = p.half_extent;
            os << "box " << c.x() << ' ' << c.y() << ' ' << c.z() << ' ' << h.x() << ' '
               << h.y() << ' ' << h.z();
          } else {
            os << "sphere " << c.x() << ' ' << c.y() << ' ' << c.z() << ' ' << p.radius;
          }
          os << '\n';
        },
        prim);
  }
}

inline SceneModel read_scene(std::istream& is) {
  SceneModel s;
  for (const auto& line : detail::content_lines(is)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    std::string rest;
    std::getline(ls, rest);
    const auto v = detail::numbers(rest, "scene file");
    if (kind == "plane" && v.size() == 9) {
      s.primitives.push_back(Plane{Vec3(v[0], v[1], v[2]),
                                   Quat(v[3], v[4], v[5], v[6]).normalized(), v[7], v[8]});
    } else if (kind == "box" && v.size() == 6) {
      s.primitives.push_back(Box{Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])});
    } else if (kind == "sphere" && v.size() == 4) {
      s.primitives.push_back(Sphere{Vec3(v[0], v[1], v[2]), v[3]});
    } else {
      throw InputError("scene file: cannot parse '" + line + "'");
    }
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Trained parameters

namespace detail {

inline void write_matrix(std::ostream& os, const char* name, const Eigen::MatrixXd& m) {
  os << "layer " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << (c ? " " : "") << m(r, c);
    os << '\n';
  }
}

inline Eigen::MatrixXd read_matrix(const std::vector<std::string>& lines, std::size_t& at,
                                   const std::string& name) {
  if (at >= lines.size()) throw InputError("parameter file: missing layer " + name);
  std::istringstream hs(lines[at++]);
  std::string tag, got;
  Eigen::Index rows = 0, cols = 0;
  if (!(hs >> tag >> got >> rows >> cols) || tag != "layer" || got != name || rows <= 0 ||
      cols <= 0)
    throw InputError("parameter file: bad header for layer " + name);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (at >= lines.size()) throw InputError("parameter file: layer " + name + " truncated");
    const auto v = numbers(lines[at++], "parameter file");
    if (static_cast<Eigen::Index>(v.size()) != cols)
      throw InputError("parameter file: layer " + name + " row has wrong width");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[c];
  }
  return m;
}

}  // namespace detail

/// "mlp_transform 1" followed by layers w1 (H x 3), b1 (H x 1), w2 (3 x H), b2 (3 x 1).
inline void write_mlp(std::ostream& os, const MlpTransform& m) {
  detail::full(os);
  os << "mlp_transform 1\nactivation tanh\n";
  detail::write_matrix(os, "w1", m.w1());
  detail::write_matrix(os, "b1", m.b1());
  detail::write_matrix(os, "w2", m.w2());
  detail::write_matrix(os, "b2", m.b2());
}

inline MlpTransform read_mlp(std::istream& is) {
  const auto lines = detail::content_lines(is);
  if (lines.size() < 2 || lines[0].rfind("mlp_transform", 0) != 0 ||
      lines[1].find("tanh") == std::string::npos)
    throw InputError("MLP file: bad header");
  std::size_t at = 2;
  const auto w1 = detail::read_matrix(lines, at, "w1");
  const auto b1 = detail::read_matrix(lines, at, "b1");
  const auto w2 = detail::read_matrix(lines, at, "w2");
  const auto b2 = detail::read_matrix(lines, at, "b2");
  const auto h = w1.rows();
  if (w1.cols() != 3 || b1.rows() != h || b1.cols() != 1 || w2.rows() != 3 || w2.cols() != h ||
      b2.rows() != 3 || b2.cols() != 1)
    throw InputError("MLP file: inconsistent layer shapes");
  MlpTransform m(static_cast<int>(h));
  m.w1() = w1;
  m.b1() = b1;
  m.w2() = w2;
  m.b2() = b2;
  return m;
}

/// "depth_correction 1" followed by 4 x 4 log_gain and offset layers (row = grid row).
inline void write_correction(std::ostream& os, const DepthCorrection& c) {
  detail::full(os);
  constexpr int g = DepthCorrection::kGrid;
  Eigen::MatrixXd lg(g, g), off(g, g);
  for (int j = 0; j < g; ++j)
    for (int i = 0; i < g; ++i) {
      lg(j, i) = c.log_gain(i, j);
      off(j, i) = c.offset(i, j);
    }
  os << "depth_correction 1\n";
  detail::write_matrix(os, "log_gain", lg);
  detail::write_matrix(os, "offset", off);
}

inline DepthCorrection read_correction(std::istream& is) {
  const auto lines = detail::content_lines(is);
  if (lines.empty() || lines[0].rfind("depth_correction", 0) != 0)
    throw InputError("correction file: bad header");
  std::size_t at = 1;
  const auto lg = detail::read_matrix(lines, at, "log_gain");
  const auto off = detail::read_matrix(lines, at, "offset");
  constexpr int g = DepthCorrection::kGrid;
  if (lg.rows() != g || lg.cols() != g || off.rows() != g || off.cols() != g)
    throw InputError("correction file: grid must be 4 x 4");
  DepthCorrection c;
  for (int j = 0; j < g; ++j)
    for (int i = 0; i < g; ++i) {
      c.log_gain(i, j) = lg(j, i);
      c.offset(i, j) = off(j, i);
    }
  return c;
}

inline void write_loss_history(std::ostream& os, const std::vector<double>& loss) {
  detail::full(os);
  os << "iteration,loss\n";
  for (std::size_t i = 0; i < loss.size(); ++i) os << i << ',' << loss[i] << '\n';
}

inline void write_histogram(std::ostream& os, const C2cHistogram& h) {
  detail::full(os);
  os << "bin_left,bin_right,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    os << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
}

inline void write_distances(std::ostream& os, const C2cHistogram& h) {
  detail::full(os);
  os << "index,distance\n";
  for (std::size_t i = 0; i < h.distances.size(); ++i) os << i << ',' << h.distances[i] << '\n';
}

// ---------------------------------------------------------------------------
// Path helpers

template <typename Fn>
void save(const fs::path& p, Fn&& write, bool binary = false) {
  auto f = detail::open_out(p, binary);
  write(f);
  if (!f) throw InputError("failed writing " + p.string());
}

template <typename Fn>
auto load(const fs::path& p, Fn&& read, bool binary = false) {
  auto f = detail::open_in(p, binary);
  return read(f);
}

inline void save_gmm(const fs::path& p, const GmmMap& m) {
  save(p, [&](std::ostream& os) { write_gmm(os, m); });
}
inline GmmMap load_gmm(const fs::path& p) {
  return load(p, [](std::istream& is) { return read_gmm(is); });
}
inline void save_depth(const fs::path& p, const DepthRaster& d) {
  save(p, [&](std::ostream& os) { write_depth(os, d); }, true);
}
inline DepthRaster load_depth(const fs::path& p) {
  return load(p, [](std::istream& is) { return read_depth(is); }, true);
}
inline void save_poses(const fs::path& p, const std::vector<Pose>& poses) {
  save(p, [&](std::ostream& os) { write_poses(os, poses); });
}
inline std::vector<Pose> load_poses(const fs::path& p) {
  return load(p, [](std::istream& is) { return read_poses(is); });
}
inline void save_cloud(const fs::path& p, const PointCloud& pc) {
  save(p, [&](std::ostream& os) { write_cloud(os, pc); });
}
inline PointCloud load_cloud(const fs::path& p) {
  return load(p, [](std::istream& is) { return read_cloud(is); });
}
inline void save_scene(const fs::path& p, const SceneModel& s) {
  save(p, [&](std::ostream& os) { write_scene(os, s); });
}
inline SceneModel load_scene(const fs::path& p) {
  return load(p, [](std::istream& is) { return read_scene(is); });
}
inline void save_mlp(const fs::path& p, const MlpTransform& m) {
  save(p, [&](std::ostream& os) { write_mlp(os, m); });
}
inline MlpTransform load_mlp(const fs::path& p) {
  return load(p, [](std::istream& is) { return read_mlp(is); });
}
inline void save_correction(const fs::path& p, const DepthCorrection& c) {
  save(p, [&](std::ostream& os) { write_correction(os, c); });
}
inline DepthCorrection load_correction(const fs::path& p) {
  return load(p, [](std::istream& is) { return read_correction(is); });
}

}  // namespace gmmloc::io
