// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oraclemarch/error.hpp"
#include "oraclemarch/geom.hpp"

namespace oraclemarch {

/// Near/far distances measured from the unified ray origin.
struct DepthRange {
  double d_min = 0;
  double d_max = 1;

  DepthRange() = default;
  DepthRange(double near, double far) : d_min(near), d_max(far) {
    require(near >= 0 && near < far, ErrorCode::InvalidArgument,
            "depth range needs 0 <= d_min < d_max");
  }

  double extent() const { return d_max - d_min; }
  bool contains(double d) const { return d >= d_min && d <= d_max; }
};

struct SampleSet {
  std::vector<double> t;
  std::vector<Vec3> positions;
  std::vector<double> deltas;

  size_t size() const { return t.size(); }
};

struct EncodingConfig {
  int pos_freqs = 10;
  int dir_freqs = 4;
  bool include_raw = true;

  int pos_dim() const { return 3 * ((include_raw ? 1 : 0) + 2 * pos_freqs); }
  int dir_dim() const { return 3 * ((include_raw ? 1 : 0) + 2 * dir_freqs); }
  bool operator==(const EncodingConfig&) const = default;
};

/// How shading samples are placed along a ray and which space their positions
/// are encoded in.
enum class SamplingMode { Uniform, Log, LogWarp, Ndc, LocalGt };

constexpr std::string_view to_string(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::Uniform: return "uniform";
    case SamplingMode::Log: return "log";
    case SamplingMode::LogWarp: return "logwarp";
    case SamplingMode::Ndc: return "ndc";
    case SamplingMode::LocalGt: return "local-gt";
  }
  return "uniform";
}

inline SamplingMode parse_sampling_mode(std::string_view s) {
  for (auto m : {SamplingMode::Uniform, SamplingMode::Log, SamplingMode::LogWarp,
                 SamplingMode::Ndc, SamplingMode::LocalGt})
    if (to_string(m) == s) return m;
  throw Error(ErrorCode::InvalidArgument, "unknown sampling mode '" + std::string(s) + "'");
}

inline std::vector<double> uniform_depths(const DepthRange& range, int n) {
  require(n >= 1, ErrorCode::InvalidCount, "sample count must be >= 1");
  std::vector<double> t(n);
  const double step = range.extent() / n;
  for (int i = 0; i < n; ++i) t[i] = range.d_min + (i + 0.5) * step;
  return t;
}

/// World depth -> warped coordinate; fixes both endpoints, stretches near depths.
inline double log_warp_depth(double d, const DepthRange& range) {
  require(d >= range.d_min && d <= range.d_max, ErrorCode::OutOfRange,
          "depth outside the depth range");
  const double extent = range.extent();
  if (d == range.d_max) return range.d_max;
  return range.d_min + std::log1p(d - range.d_min) / std::log1p(extent) * extent;
}

inline double log_unwarp_depth(double w, const DepthRange& range) {
  require(w >= range.d_min && w <= range.d_max, ErrorCode::OutOfRange,
          "warped depth outside the depth range");
  const double extent = range.extent();
  if (w == range.d_max) return range.d_max;
  return range.d_min + std::expm1((w - range.d_min) / extent * std::log1p(extent));
}

inline std::vector<double> log_depths(const DepthRange& range, int n) {
  auto t = uniform_depths(range, n);
  for (auto& v : t) v = log_unwarp_depth(v, range);
  return t;
}

/// Radial inverse-square-root contraction toward the cell center; |p| = d_max maps to 1.
template <typename V>
V warp_point(const V& p, double d_max) {
  const double r = p.norm();
  if (r == 0.0) return V::Zero();
  return p / std::sqrt(r * d_max);
}

/// Average camera used for NDC sampling: near plane at forward depth 1, far at infinity.
struct NdcFrame {
  Vec3 center;
  Mat3 world_to_camera;  // rows: right, up, forward
  double tan_half_fov = 1.0;

  static NdcFrame from_cell(const ViewCell& cell, double fov_deg) {
    NdcFrame f;
    f.center = cell.center();
    f.world_to_camera.row(0) = cell.right().transpose();
    f.world_to_camera.row(1) = cell.up().transpose();
    f.world_to_camera.row(2) = cell.forward().transpose();
    f.tan_half_fov = std::tan(0.5 * deg_to_rad(fov_deg));
    return f;
  }

  Vec3 to_camera(const Vec3& x) const { return world_to_camera * (x - center); }

  /// Projected coordinates; x, y in [-1, 1] inside the frustum, z in [-1, 1) from the
  /// near plane to infinity.
  Vec3 project(const Vec3& x) const {
    const Vec3 q = to_camera(x);
    require(q.z() > 1e-9, ErrorCode::BehindAverageCamera,
            "sample lies behind the average camera");
    return {q.x() / (q.z() * tan_half_fov), q.y() / (q.z() * tan_half_fov), 1.0 - 2.0 / q.z()};
  }
};

/// Forward depth for NDC depth u when d_min = 1 and d_max = infinity (linear in disparity).
inline double ndc_to_forward_depth(double u) { return 1.0 / (1.0 - u); }
inline double forward_depth_to_ndc(double z) { return 1.0 - 1.0 / z; }

/// Samples uniform in NDC depth along the part of [d_min, d_max] beyond the near plane.
inline std::vector<double> ndc_depths(const Vec3& origin, const Vec3& direction,
                                      const DepthRange& range, int n, const NdcFrame& frame) {
  require(n >= 1, ErrorCode::InvalidCount, "sample count must be >= 1");
  const Vec3 o = frame.to_camera(origin);
  const double dz = frame.world_to_camera.row(2).dot(direction);
  require(dz > 1e-6, ErrorCode::BehindAverageCamera,
          "ray does not point into the front hemisphere of the average camera");
  const double z_near = std::max(1.0, o.z() + range.d_min * dz);
  const double z_far = o.z() + range.d_max * dz;
  require(z_far > z_near, ErrorCode::BehindAverageCamera,
          "ray segment ends before the average camera's near plane");
  const double u0 = forward_depth_to_ndc(z_near), u1 = forward_depth_to_ndc(z_far);
  std::vector<double> t(n);
  for (int i = 0; i < n; ++i) {
    const double u = u0 + (i + 0.5) * (u1 - u0) / n;
    t[i] = std::clamp((ndc_to_forward_depth(u) - o.z()) / dz, range.d_min, range.d_max);
  }
  return t;
}

enum class LocalStep { Uniform, Log };

/// n samples around d_s with the step of a 128-sample placement. The window is shifted
/// as a whole to stay inside the range, which keeps the samples strictly ordered.
inline std::vector<double> local_depths(double d_s, int n, const DepthRange& range,
                                        LocalStep mode) {
  require(n >= 1, ErrorCode::InvalidCount, "sample count must be >= 1");
  require(range.contains(d_s), ErrorCode::OutOfRange, "surface depth outside the depth range");
  constexpr int kReferenceCount = 128;
  const double step = range.extent() / kReferenceCount;
  const double center = mode == LocalStep::Log ? log_warp_depth(d_s, range) : d_s;
  const double span = (n - 1) * step;
  double lo = range.d_min, s = step;
  if (n > 1 && span >= range.extent()) {
    s = range.extent() / (n - 1);  // window wider than the range: spread evenly instead
  } else {
    lo = std::clamp(center - 0.5 * span, range.d_min, range.d_max - span);
  }
  std::vector<double> t(n);
  for (int i = 0; i < n; ++i) {
    const double w = std::clamp(lo + i * s, range.d_min, range.d_max);
    t[i] = mode == LocalStep::Log ? log_unwarp_depth(w, range) : w;
  }
  return t;
}

struct PdfSampleOptions {
  double degenerate_eps = 1e-6;
  std::mt19937_64* jitter = nullptr;  // null: deterministic midpoints (k + 0.5) / X
};

/// Inverse-CDF placement over a piecewise-constant PDF given on warped-depth bin
/// edges; returns world depths, ascending. All-zero PDFs fall back to uniform.
inline std::vector<double> sample_from_pdf(std::span<const double> pdf,
                                           std::span<const double> edges, int count,
                                           const PdfSampleOptions& opts = {}) {
  require(count >= 1, ErrorCode::InvalidCount, "sample count must be >= 1");
  const size_t bins = pdf.size();
  require(bins >= 1 && edges.size() == bins + 1, ErrorCode::ShapeMismatch,
          "pdf needs one more edge than bins");
  for (size_t i = 0; i < bins; ++i)
    require(edges[i] < edges[i + 1], ErrorCode::InvalidArgument, "bin edges must ascend");
  const DepthRange range(edges.front(), edges.back());

  double total = 0;
  for (double p : pdf) total += std::max(0.0, p);
  const bool degenerate = total <= opts.degenerate_eps;

  std::vector<double> cdf(bins + 1, 0.0);
  for (size_t i = 0; i < bins; ++i) {
    const double mass = degenerate ? 1.0 / bins : std::max(0.0, pdf[i]) / total;
    cdf[i + 1] = cdf[i] + mass;
  }
  cdf[bins] = 1.0;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> t(count);
  size_t bin = 0;
  for (int k = 0; k < count; ++k) {
    const double offset = opts.jitter ? unit(*opts.jitter) : 0.5;
    const double u = (k + offset) / count;
    while (bin + 1 < bins && cdf[bin + 1] <= u) ++bin;
    const double mass = cdf[bin + 1] - cdf[bin];
    const double frac = mass > 0 ? std::clamp((u - cdf[bin]) / mass, 0.0, 1.0) : 0.5;
    const double w = edges[bin] + frac * (edges[bin + 1] - edges[bin]);
    t[k] = log_unwarp_depth(std::clamp(w, range.d_min, range.d_max), range);
  }
  return t;
}

inline SampleSet make_sample_set(const Vec3& origin, const Vec3& direction,
                                 std::vector<double> t) {
  SampleSet s;
  s.t = std::move(t);
  const size_t n = s.t.size();
  s.positions.resize(n);
  s.deltas.resize(n);
  for (size_t i = 0; i < n; ++i) s.positions[i] = origin + s.t[i] * direction;
  for (size_t i = 0; i + 1 < n; ++i) s.deltas[i] = std::max(s.t[i + 1] - s.t[i], 1e-10);
  if (n >= 2) {
    s.deltas[n - 1] = s.deltas[n - 2];
  } else if (n == 1) {
    s.deltas[0] = 1.0;
  }
  return s;
}

/// Writes [p (if raw), sin(2^k pi p), cos(2^k pi p) for k < freqs] into `out`.
template <typename T>
void encode_into(const Vec3& p, int freqs, bool include_raw, T* out) {
  int o = 0;
  if (include_raw)
    for (int c = 0; c < 3; ++c) out[o++] = static_cast<T>(p[c]);
  double scale = std::numbers::pi;
  for (int k = 0; k < freqs; ++k, scale *= 2.0) {
    for (int c = 0; c < 3; ++c) out[o++] = static_cast<T>(std::sin(scale * p[c]));
    for (int c = 0; c < 3; ++c) out[o++] = static_cast<T>(std::cos(scale * p[c]));
  }
}

inline std::vector<double> encode_features(const Vec3& p, int freqs, bool include_raw) {
  std::vector<double> out(3 * ((include_raw ? 1 : 0) + 2 * freqs));
  encode_into(p, freqs, include_raw, out.data());
  return out;
}

inline std::vector<double> encode_features(const Vec3& p, const EncodingConfig& cfg) {
  return encode_features(p, cfg.pos_freqs, cfg.include_raw);
}

}  // namespace oraclemarch
