// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "oraclemarch/error.hpp"
#include "oraclemarch/geom.hpp"
#include "oraclemarch/image.hpp"
#include "oraclemarch/io.hpp"
#include "oraclemarch/oracle_target.hpp"
#include "oraclemarch/parallel.hpp"
#include "oraclemarch/sampling.hpp"

namespace oraclemarch {

struct Checker {
  double scale = 1.0;
  Vec3 albedo;  // alternate color
};

struct Primitive {
  enum class Kind { Sphere, Box, Plane } kind = Kind::Sphere;
  Vec3 a;  // sphere center / box min / plane point
  Vec3 b;  // box max / plane normal
  double radius = 0;
  Vec3 albedo = Vec3(0.8, 0.8, 0.8);
  std::optional<Checker> checker;

  static Primitive sphere(const Vec3& c, double r, const Vec3& albedo) {
    require(r > 0, ErrorCode::InvalidArgument, "sphere radius must be positive");
    Primitive p;
    p.kind = Kind::Sphere;
    p.a = c;
    p.radius = r;
    p.albedo = albedo;
    return p;
  }
  static Primitive box(const Vec3& lo, const Vec3& hi, const Vec3& albedo) {
    Primitive p;
    p.kind = Kind::Box;
    p.a = lo;
    p.b = hi;
    p.albedo = albedo;
    return p;
  }
  static Primitive plane(const Vec3& point, const Vec3& normal, const Vec3& albedo) {
    require(std::abs(normal.norm() - 1.0) < 1e-9, ErrorCode::InvalidArgument,
            "plane normal must be a unit vector");
    Primitive p;
    p.kind = Kind::Plane;
    p.a = point;
    p.b = normal;
    p.albedo = albedo;
    return p;
  }
  Primitive& with_checker(double scale, const Vec3& other) {
    checker = Checker{scale, other};
    return *this;
  }
};

struct SceneDef {
  std::string name;
  std::vector<Primitive> primitives;
  Vec3 light_dir = Vec3(0.3, 1.0, 0.5).normalized();
  double ambient = 0.3;
  Vec3 background = Vec3::Zero();
};

struct Hit {
  double t;
  Vec3 normal;
  const Primitive* prim;
};

inline std::optional<Hit> intersect(const Ray& ray, const Primitive& p, double t_min = 1e-9) {
  switch (p.kind) {
    case Primitive::Kind::Sphere: {
      const Vec3 m = ray.origin - p.a;
      const double b = m.dot(ray.direction);
      const double c = m.squaredNorm() - p.radius * p.radius;
      const double disc = b * b - c;
      if (disc < 0) return std::nullopt;
      const double sq = std::sqrt(disc);
      // Stable pair of roots of t^2 + 2 b t + c = 0.
      const double q = b > 0 ? -b - sq : -b + sq;
      double t0 = q, t1 = q != 0 ? c / q : 0.0;
      if (t0 > t1) std::swap(t0, t1);
      const double t = t0 > t_min ? t0 : (t1 > t_min ? t1 : -1);
      if (t < 0) return std::nullopt;
      return Hit{t, (ray.origin + t * ray.direction - p.a) / p.radius, &p};
    }
    case Primitive::Kind::Box: {
      double t0 = -std::numeric_limits<double>::infinity(), t1 = -t0;
      int axis0 = 0, axis1 = 0;
      for (int k = 0; k < 3; ++k) {
        const double inv = 1.0 / ray.direction[k];
        double a = (p.a[k] - ray.origin[k]) * inv, b = (p.b[k] - ray.origin[k]) * inv;
        if (a > b) std::swap(a, b);
        if (a > t0) t0 = a, axis0 = k;
        if (b < t1) t1 = b, axis1 = k;
      }
      if (t0 > t1) return std::nullopt;
      double t;
      int axis;
      if (t0 > t_min) t = t0, axis = axis0;
      else if (t1 > t_min) t = t1, axis = axis1;
      else return std::nullopt;
      Vec3 n = Vec3::Zero();
      n[axis] = ray.direction[axis] > 0 ? -1.0 : 1.0;
      return Hit{t, n, &p};
    }
    case Primitive::Kind::Plane: {
      const double denom = ray.direction.dot(p.b);
      if (std::abs(denom) < 1e-12) return std::nullopt;
      const double t = (p.a - ray.origin).dot(p.b) / denom;
      if (t <= t_min) return std::nullopt;
      return Hit{t, p.b, &p};
    }
  }
  return std::nullopt;
}

inline std::optional<Hit> nearest_hit(const Ray& ray, const SceneDef& scene) {
  std::optional<Hit> best;
  for (const auto& p : scene.primitives) {
    auto h = intersect(ray, p);
    if (h && (!best || h->t < best->t)) best = h;
  }
  return best;
}

inline Vec3 albedo_at(const Primitive& p, const Vec3& x) {
  if (!p.checker) return p.albedo;
  const double s = p.checker->scale;
  const long parity = long(std::floor(x.x() / s)) + long(std::floor(x.y() / s)) +
                      long(std::floor(x.z() / s));
  return (parity & 1) ? p.checker->albedo : p.albedo;
}

struct GtSample {
  Vec3 rgb;
  double depth;  // from the unified origin; meaningful only when hit
  bool hit;
};

/// Ground-truth radiance and depth along a unified ray; the ray is traced from the
/// camera position (unified origin + offset) so geometry behind the camera is ignored.
inline GtSample trace_gt(const UnifiedRay& ray, const SceneDef& scene) {
  const Ray camera{ray.origin + ray.offset * ray.direction, ray.direction};
  const auto hit = nearest_hit(camera, scene);
  if (!hit) return {scene.background, 0.0, false};
  const Vec3 x = camera.origin + hit->t * camera.direction;
  Vec3 n = hit->normal;
  // Checker parity is read slightly inside the surface so faces lying exactly on a
  // cell boundary get one stable color instead of rounding noise.
  const Vec3 albedo = albedo_at(*hit->prim, x - 1e-6 * n);
  if (n.dot(camera.direction) > 0) n = -n;
  const double diffuse = std::max(0.0, n.dot(scene.light_dir));
  Vec3 rgb = (diffuse + scene.ambient) * albedo;
  for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(rgb[c], 0.0, 1.0);
  return {rgb, hit->t + ray.offset, true};
}

// ---------------------------------------------------------------------------
// Presets

struct ScenePreset {
  SceneDef scene;
  ViewCell cell;
  DepthRange range;
  double fov_deg;
};

inline ScenePreset sphere_room() {
  SceneDef s;
  s.name = "sphere-room";
  s.primitives.push_back(Primitive::plane(Vec3(0, 0, 0), Vec3(0, 1, 0), Vec3(0.85, 0.85, 0.8))
                             .with_checker(0.5, Vec3(0.35, 0.35, 0.42)));
  s.primitives.push_back(Primitive::plane(Vec3(0, 0, -4), Vec3(0, 0, 1), Vec3(0.9, 0.55, 0.3))
                             .with_checker(0.5, Vec3(0.3, 0.25, 0.6)));
  s.primitives.push_back(Primitive::plane(Vec3(-3.5, 0, 0), Vec3(1, 0, 0), Vec3(0.5, 0.75, 0.5)));
  s.primitives.push_back(Primitive::plane(Vec3(3.5, 0, 0), Vec3(-1, 0, 0), Vec3(0.6, 0.6, 0.9)));
  s.primitives.push_back(Primitive::plane(Vec3(0, 3, 0), Vec3(0, -1, 0), Vec3(0.9, 0.9, 0.9)));
  s.primitives.push_back(Primitive::plane(Vec3(0, 0, 3), Vec3(0, 0, -1), Vec3(0.7, 0.7, 0.7)));
  s.primitives.push_back(Primitive::sphere(Vec3(0.4, 0.7, -2.2), 0.6, Vec3(0.9, 0.2, 0.2)));
  s.primitives.push_back(Primitive::box(Vec3(-1.4, 0, -3.0), Vec3(-0.6, 1.1, -2.2), Vec3(0.2, 0.75, 0.3)));
  s.primitives.push_back(Primitive::sphere(Vec3(-0.3, 0.3, -1.3), 0.25, Vec3(0.2, 0.4, 0.95)));
  s.background = Vec3(0, 0, 0);
  return {s, ViewCell(Vec3(0, 1, 0), Vec3(0.6, 0.4, 0.6), Vec3(0, 0, -1), 30, 20),
          DepthRange(0.5, 7.0), 60.0};
}

inline ScenePreset corridor() {
  SceneDef s;
  s.name = "corridor";
  const Vec3 wall_a(0.85, 0.8, 0.7), wall_b(0.3, 0.35, 0.5);
  s.primitives.push_back(Primitive::plane(Vec3(0, 0, 0), Vec3(0, 1, 0), Vec3(0.75, 0.7, 0.6))
                             .with_checker(1.0, Vec3(0.25, 0.25, 0.3)));
  s.primitives.push_back(Primitive::plane(Vec3(0, 2.4, 0), Vec3(0, -1, 0), Vec3(0.9, 0.9, 0.85)));
  s.primitives.push_back(Primitive::plane(Vec3(-1.2, 0, 0), Vec3(1, 0, 0), wall_a).with_checker(1.5, wall_b));
  s.primitives.push_back(Primitive::plane(Vec3(1.2, 0, 0), Vec3(-1, 0, 0), Vec3(0.6, 0.8, 0.6))
                             .with_checker(1.5, Vec3(0.5, 0.3, 0.3)));
  s.primitives.push_back(Primitive::plane(Vec3(0, 0, -60), Vec3(0, 0, 1), Vec3(0.95, 0.75, 0.2))
                             .with_checker(0.4, Vec3(0.2, 0.2, 0.6)));
  s.primitives.push_back(Primitive::plane(Vec3(0, 0, 3), Vec3(0, 0, -1), Vec3(0.5, 0.5, 0.5)));
  s.primitives.push_back(Primitive::sphere(Vec3(0.6, 0.5, -4), 0.4, Vec3(0.9, 0.25, 0.2)));
  s.primitives.push_back(Primitive::sphere(Vec3(-0.5, 1.4, -10), 0.5, Vec3(0.2, 0.8, 0.9)));
  s.primitives.push_back(Primitive::box(Vec3(0.3, 0, -16), Vec3(1.2, 1.8, -15), Vec3(0.8, 0.8, 0.3)));
  s.primitives.push_back(Primitive::sphere(Vec3(0.4, 0.7, -22), 0.7, Vec3(0.3, 0.9, 0.3)));
  s.primitives.push_back(Primitive::sphere(Vec3(-0.3, 1.2, -40), 0.9, Vec3(0.9, 0.4, 0.8)));
  s.background = Vec3(0, 0, 0);
  return {s, ViewCell(Vec3(0, 1, 0), Vec3(0.4, 0.4, 0.4), Vec3(0, 0, -1), 20, 20),
          DepthRange(0.5, 64.0), 60.0};
}

inline ScenePreset scene_preset(const std::string& name) {
  if (name == "sphere-room") return sphere_room();
  if (name == "corridor") return corridor();
  throw Error(ErrorCode::InvalidArgument, "unknown scene preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// Dataset

constexpr int kDatasetVersion = 1;
constexpr float kBackgroundDepth = -1.0f;

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct DatasetManifest {
  std::string scene;
  int width = 64;
  int height = 64;
  double fov_deg = 60;
  DepthRange range;
  ViewCell cell = ViewCell(Vec3::Zero(), Vec3::Ones(), Vec3(0, 0, -1), 0, 0);
  std::vector<Pose> poses;
  std::vector<int> train, val, test;
  uint64_t seed = 0;

  const std::vector<int>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw Error(ErrorCode::InvalidArgument, "unknown split '" + name + "'");
  }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Image> rgb;
  std::vector<DepthMap> depth;
  bool has_depth = true;  // false when any depth buffer was missing on load

  int pixels_per_image() const { return manifest.width * manifest.height; }
};

inline std::array<int, 3> split_counts(int n, const SplitRatios& r) {
  require(std::abs(r.train + r.val + r.test - 1.0) < 1e-9 && r.train >= 0 && r.val >= 0 && r.test >= 0,
          ErrorCode::InvalidArgument, "split ratios must be non-negative and sum to 1");
  const int train = int(std::lround(r.train * n));
  const int val = std::min(n - train, int(std::lround(r.val * n)));
  return {train, val, n - train - val};
}

inline nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }
inline Vec3 json_vec(const nlohmann::json& j) {
  require(j.is_array() && j.size() == 3, ErrorCode::CorruptFile, "expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline nlohmann::json cell_json(const ViewCell& c) {
  return {{"center", vec_json(c.center())},
          {"size", vec_json(c.size())},
          {"forward", vec_json(c.forward())},
          {"max_pitch_deg", c.max_pitch_deg()},
          {"max_yaw_deg", c.max_yaw_deg()}};
}
inline ViewCell json_cell(const nlohmann::json& j) {
  return ViewCell(json_vec(j.at("center")), json_vec(j.at("size")), json_vec(j.at("forward")),
                  j.at("max_pitch_deg").get<double>(), j.at("max_yaw_deg").get<double>());
}

inline std::string frame_name(int id, const char* suffix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d.%s", id, suffix);
  return buf;
}

inline nlohmann::json manifest_json(const DatasetManifest& m) {
  nlohmann::json poses = nlohmann::json::array();
  for (size_t i = 0; i < m.poses.size(); ++i)
    poses.push_back({{"id", i},
                     {"position", vec_json(m.poses[i].position)},
                     {"yaw_deg", m.poses[i].yaw_deg},
                     {"pitch_deg", m.poses[i].pitch_deg},
                     {"rgb", frame_name(int(i), "rgb.f32")},
                     {"depth", frame_name(int(i), "depth.f32")}});
  return {{"format", "oraclemarch-dataset"},
          {"version", kDatasetVersion},
          {"scene", m.scene},
          {"width", m.width},
          {"height", m.height},
          {"fov_deg", m.fov_deg},
          {"depth_range", {{"d_min", m.range.d_min}, {"d_max", m.range.d_max}}},
          {"depth_origin", "unified"},
          {"background_depth", kBackgroundDepth},
          {"pixel_layout", "row-major float32 little-endian; rgb interleaved"},
          {"view_cell", cell_json(m.cell)},
          {"seed", m.seed},
          {"poses", poses},
          {"splits", {{"train", m.train}, {"val", m.val}, {"test", m.test}}}};
}

inline DatasetManifest parse_manifest(const nlohmann::json& j) {
  try {
    require(j.at("format") == "oraclemarch-dataset", ErrorCode::CorruptFile, "not a dataset manifest");
    require(j.at("version").get<int>() == kDatasetVersion, ErrorCode::VersionMismatch,
            "unsupported dataset version");
    DatasetManifest m;
    m.scene = j.at("scene").get<std::string>();
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.fov_deg = j.at("fov_deg").get<double>();
    m.range = DepthRange(j.at("depth_range").at("d_min").get<double>(),
                         j.at("depth_range").at("d_max").get<double>());
    m.cell = json_cell(j.at("view_cell"));
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& p : j.at("poses"))
      m.poses.push_back(make_pose(m.cell, json_vec(p.at("position")), p.at("yaw_deg").get<double>(),
                                  p.at("pitch_deg").get<double>(), m.fov_deg));
    m.train = j.at("splits").at("train").get<std::vector<int>>();
    m.val = j.at("splits").at("val").get<std::vector<int>>();
    m.test = j.at("splits").at("test").get<std::vector<int>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("manifest: ") + e.what());
  }
}

/// Renders RGB and unified depth for one pose. Background pixels get kBackgroundDepth
/// and valid = 0; hit depths are clamped into the range.
inline void render_ground_truth(const SceneDef& scene, const DatasetManifest& m, const Pose& pose,
                                Image& rgb, DepthMap& depth) {
  rgb = Image(m.width, m.height);
  depth = DepthMap(m.width, m.height);
  const Sphere sphere = circumscribed_sphere(m.cell);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const auto u = unify_ray(pixel_ray(pose, x, y, m.width, m.height), sphere);
      const auto g = trace_gt(u, scene);
      float* px = rgb.pixel(x, y);
      for (int c = 0; c < 3; ++c) px[c] = float(g.rgb[c]);
      const size_t i = depth.index(x, y);
      depth.valid[i] = g.hit ? 1 : 0;
      depth.depth[i] = g.hit ? float(std::clamp(g.depth, m.range.d_min, m.range.d_max)) : kBackgroundDepth;
    }
}

struct GenerateOptions {
  int images = 300;
  int width = 64;
  int height = 64;
  SplitRatios ratios;
  uint64_t seed = 1;
  int threads = 1;
};

inline Dataset generate_dataset(const ScenePreset& preset, const GenerateOptions& opt) {
  require(opt.images >= 1 && opt.width >= 1 && opt.height >= 1, ErrorCode::InvalidArgument,
          "dataset needs at least one image of positive size");
  Dataset ds;
  auto& m = ds.manifest;
  m.scene = preset.scene.name;
  m.width = opt.width;
  m.height = opt.height;
  m.fov_deg = preset.fov_deg;
  m.range = preset.range;
  m.cell = preset.cell;
  m.seed = opt.seed;
  std::mt19937_64 rng(opt.seed);
  for (int i = 0; i < opt.images; ++i) m.poses.push_back(sample_pose(m.cell, m.fov_deg, rng));
  const auto counts = split_counts(opt.images, opt.ratios);
  for (int i = 0; i < opt.images; ++i) {
    if (i < counts[0]) m.train.push_back(i);
    else if (i < counts[0] + counts[1]) m.val.push_back(i);
    else m.test.push_back(i);
  }
  ds.rgb.resize(opt.images);
  ds.depth.resize(opt.images);
  parallel_for(size_t(opt.images), opt.threads, [&](size_t b, size_t e) {
    for (size_t i = b; i < e; ++i) render_ground_truth(preset.scene, m, m.poses[i], ds.rgb[i], ds.depth[i]);
  });
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorCode::IoError, "cannot create " + dir.string());
  const std::string text = manifest_json(ds.manifest).dump(2) + "\n";
  io::write_file(dir / "manifest.json", text);
  for (size_t i = 0; i < ds.rgb.size(); ++i) {
    io::write_floats(dir / frame_name(int(i), "rgb.f32"), ds.rgb[i].rgb);
    io::write_floats(dir / frame_name(int(i), "depth.f32"), ds.depth[i].depth);
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir, bool require_depth = true) {
  const auto text = io::read_file(dir / "manifest.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("manifest.json: ") + e.what());
  }
  Dataset ds;
  ds.manifest = parse_manifest(j);
  const auto& m = ds.manifest;
  const size_t px = size_t(m.width) * m.height;
  for (size_t i = 0; i < m.poses.size(); ++i) {
    Image img(m.width, m.height);
    img.rgb = io::read_floats(dir / frame_name(int(i), "rgb.f32"), px * 3);
    ds.rgb.push_back(std::move(img));
    const auto depth_path = dir / frame_name(int(i), "depth.f32");
    DepthMap d(m.width, m.height);
    if (!std::filesystem::exists(depth_path)) {
      require(!require_depth, ErrorCode::DatasetMissingDepth, "missing " + depth_path.string());
      ds.has_depth = false;
      std::fill(d.valid.begin(), d.valid.end(), 0);
    } else {
      d.depth = io::read_floats(depth_path, px);
      for (size_t k = 0; k < px; ++k) d.valid[k] = d.depth[k] >= 0.f ? 1 : 0;
    }
    ds.depth.push_back(std::move(d));
  }
  return ds;
}

}  // namespace oraclemarch
