// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oraclemarch/error.hpp"
#include "oraclemarch/geom.hpp"
#include "oraclemarch/image.hpp"
#include "oraclemarch/net.hpp"
#include "oraclemarch/oracle_target.hpp"
#include "oraclemarch/parallel.hpp"
#include "oraclemarch/sampling.hpp"

namespace oraclemarch {

struct ShadingSample {
  Vec3 rgb;
  double alpha;
};

struct CompositeResult {
  Vec3 rgb;
  double opacity;
};

/// Front-to-back compositing of n samples (colors n x 3, interleaved). Writes the
/// blended color and the accumulated opacity sum_i w_i.
template <typename T>
void composite_forward(const T* colors, const T* alphas, int n, const T* background, T* rgb,
                       T* opacity) {
  T trans = T(1);
  T acc[3] = {T(0), T(0), T(0)};
  for (int i = 0; i < n; ++i) {
    const T w = alphas[i] * trans;
    for (int c = 0; c < 3; ++c) acc[c] += w * colors[3 * i + c];
    trans *= T(1) - alphas[i];
  }
  for (int c = 0; c < 3; ++c) rgb[c] = acc[c] + trans * background[c];
  *opacity = T(1) - trans;
}

/// Reverse of composite_forward for upstream dL/drgb and dL/dopacity. Uses the
/// "remaining radiance" recursion so fully opaque samples need no division.
template <typename T>
void composite_backward(const T* colors, const T* alphas, int n, const T* background,
                        const T* d_rgb, T d_opacity, T* d_colors, T* d_alphas) {
  std::vector<T> trans(n);
  T t = T(1);
  for (int i = 0; i < n; ++i) {
    trans[i] = t;
    t *= T(1) - alphas[i];
  }
  T rest[3] = {background[0], background[1], background[2]};
  T rest_opacity = T(0);
  for (int i = n - 1; i >= 0; --i) {
    T g = T(0);
    for (int c = 0; c < 3; ++c) {
      d_colors[3 * i + c] = d_rgb[c] * trans[i] * alphas[i];
      g += d_rgb[c] * trans[i] * (colors[3 * i + c] - rest[c]);
    }
    g += d_opacity * trans[i] * (T(1) - rest_opacity);
    d_alphas[i] = g;
    for (int c = 0; c < 3; ++c) rest[c] = alphas[i] * colors[3 * i + c] + (T(1) - alphas[i]) * rest[c];
    rest_opacity = alphas[i] + (T(1) - alphas[i]) * rest_opacity;
  }
}

inline CompositeResult composite(std::span<const ShadingSample> samples, const Vec3& background) {
  std::vector<double> colors(samples.size() * 3), alphas(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    for (int c = 0; c < 3; ++c) colors[3 * i + c] = samples[i].rgb[c];
    alphas[i] = samples[i].alpha;
  }
  CompositeResult r{};
  double rgb[3], opacity;
  composite_forward(colors.data(), alphas.data(), int(samples.size()), background.data(), rgb,
                    &opacity);
  r.rgb = Vec3(rgb[0], rgb[1], rgb[2]);
  r.opacity = opacity;
  return r;
}

/// Zero once the per-sample opacities sum to at least one, quadratic below.
inline double opacity_loss(std::span<const double> alphas) {
  double sum = 0;
  for (double a : alphas) sum += a;
  return sum >= 1.0 ? 0.0 : (sum - 1.0) * (sum - 1.0);
}

struct LossWeights {
  double mse = 1.0;
  double opacity = 10.0;
};

inline double total_loss(std::span<const double> pred, std::span<const double> target,
                         std::span<const double> alphas, const LossWeights& w = {}) {
  require(pred.size() == target.size() && !pred.empty(), ErrorCode::ShapeMismatch,
          "prediction and target sizes differ");
  double mse = 0;
  for (size_t i = 0; i < pred.size(); ++i) mse += (pred[i] - target[i]) * (pred[i] - target[i]);
  mse /= double(pred.size());
  return w.mse * mse + w.opacity * opacity_loss(alphas);
}

constexpr double kBceEps = 1e-7;

inline double bce_loss(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size() && !pred.empty(), ErrorCode::ShapeMismatch,
          "prediction and target sizes differ");
  double sum = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred[i], kBceEps, 1.0 - kBceEps);
    sum += -(target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p));
  }
  return sum / double(pred.size());
}

// ---------------------------------------------------------------------------
// Pipeline configuration

enum class OpacityModel { Alpha, Density };
enum class OracleKind { None, Classified, SingleDepth };

constexpr std::string_view to_string(OracleKind k) {
  switch (k) {
    case OracleKind::None: return "none";
    case OracleKind::Classified: return "classified";
    case OracleKind::SingleDepth: return "single-depth";
  }
  return "none";
}

struct OracleSpec {
  OracleKind kind = OracleKind::None;
  int classes = 32;  // C
  int inputs = 32;   // I, 3D points fed to the first layer
  int k = 5;
  int z = 5;
  bool unify = true;

  int in_dim() const { return 6 + 3 * inputs; }
  int out_dim() const { return kind == OracleKind::SingleDepth ? 1 : classes; }
};

struct PipelineConfig {
  int samples = 4;  // X, shading evaluations per ray
  SamplingMode mode = SamplingMode::LogWarp;
  OracleSpec oracle;
  Vec3 background = Vec3::Zero();
  LossWeights loss;
  OpacityModel opacity = OpacityModel::Alpha;
  EncodingConfig encoding;
  bool jitter = false;
};

inline net::MLPConfig oracle_network_config(const OracleSpec& spec, int hidden_layers, int width) {
  net::MLPConfig cfg;
  cfg.in_dim = spec.in_dim();
  cfg.out_dim = spec.out_dim();
  cfg.hidden_layers = hidden_layers;
  cfg.hidden_width = width;
  cfg.sigmoid_outputs.assign(cfg.out_dim, true);
  return cfg;
}

/// Encoded position in, encoded direction joined before the output layer;
/// outputs rgb + opacity (sigmoid) or rgb + raw density.
inline net::MLPConfig shading_network_config(const EncodingConfig& enc, int hidden_layers,
                                             int width, OpacityModel opacity) {
  net::MLPConfig cfg;
  cfg.in_dim = enc.pos_dim();
  cfg.out_dim = 4;
  cfg.hidden_layers = hidden_layers;
  cfg.hidden_width = width;
  cfg.skip = net::SkipSpec{enc.dir_dim(), hidden_layers};
  cfg.sigmoid_outputs = {true, true, true, opacity == OpacityModel::Alpha};
  return cfg;
}

struct Network {
  net::MLPConfig config;
  net::MLPParams<float> params;
};

/// Everything needed to turn a camera ray into a color.
struct Pipeline {
  ViewCell cell;
  DepthRange range;
  double fov_deg = 60;
  PipelineConfig cfg;
  std::optional<Network> oracle;
  std::optional<Network> shading;

  Pipeline(ViewCell c, DepthRange r, double fov, PipelineConfig p)
      : cell(std::move(c)), range(r), fov_deg(fov), cfg(std::move(p)) {}

  Sphere sphere() const { return circumscribed_sphere(cell); }
  DepthBins bins() const { return DepthBins(cfg.oracle.classes, range); }
  NdcFrame ndc_frame() const { return NdcFrame::from_cell(cell, fov_deg); }
  bool uses_oracle() const { return cfg.oracle.kind != OracleKind::None; }
};

enum class FeatureSpace { Linear, Warp, Ndc };

inline FeatureSpace feature_space(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::Uniform:
    case SamplingMode::Log: return FeatureSpace::Linear;
    case SamplingMode::Ndc: return FeatureSpace::Ndc;
    case SamplingMode::LogWarp:
    case SamplingMode::LocalGt: return FeatureSpace::Warp;
  }
  return FeatureSpace::Warp;
}

// ---------------------------------------------------------------------------
// Stage 1-2: unification and oracle inputs

/// Origin the oracle sees: the unified origin, or the camera origin when unification
/// is disabled. `offset` converts oracle depths to unified depths (unified = ref + offset).
struct OracleFrame {
  Vec3 origin;
  double offset;
};

inline OracleFrame oracle_frame(const UnifiedRay& u, const Ray& camera, bool unify) {
  return unify ? OracleFrame{u.origin, 0.0} : OracleFrame{camera.origin, u.offset};
}

/// Unified origin scaled into the unit ball, direction, then I bin-center points
/// contracted with the radial warp. No Fourier encoding.
inline void oracle_input_column(const Pipeline& p, const Ray& camera, const UnifiedRay& u,
                                const std::vector<double>& center_depths, float* out) {
  const auto frame = oracle_frame(u, camera, p.cfg.oracle.unify);
  const Sphere s = u.sphere_radius > 0 ? Sphere{u.sphere_center, u.sphere_radius} : p.sphere();
  const Vec3 o = (frame.origin - s.center) / s.radius;
  for (int c = 0; c < 3; ++c) out[c] = float(o[c]);
  for (int c = 0; c < 3; ++c) out[3 + c] = float(u.direction[c]);
  for (size_t i = 0; i < center_depths.size(); ++i) {
    const Vec3 x = frame.origin + center_depths[i] * u.direction - s.center;
    const Vec3 w = warp_point(x, p.range.d_max);
    for (int c = 0; c < 3; ++c) out[6 + 3 * i + c] = float(w[c]);
  }
}

inline net::Matrix<float> oracle_inputs(const Pipeline& p, std::span<const Ray> rays,
                                        std::span<const UnifiedRay> unified) {
  const auto centers = log_depths(p.range, p.cfg.oracle.inputs);
  net::Matrix<float> in(p.cfg.oracle.in_dim(), Eigen::Index(rays.size()));
  for (size_t r = 0; r < rays.size(); ++r)
    oracle_input_column(p, rays[r], unified[r], centers, in.col(Eigen::Index(r)).data());
  return in;
}

/// Maps a single-depth oracle output in [0, 1] to a unified depth.
inline double single_depth_to_unified(double s, const DepthRange& range, double offset) {
  const double w = range.d_min + std::clamp(s, 0.0, 1.0) * range.extent();
  return std::clamp(log_unwarp_depth(w, range) + offset, range.d_min, range.d_max);
}

/// Normalized warped depth target for the single-depth oracle.
inline double single_depth_target(double unified_depth, const DepthRange& range, double offset) {
  const double d = std::clamp(unified_depth - offset, range.d_min, range.d_max);
  return (log_warp_depth(d, range) - range.d_min) / range.extent();
}

// ---------------------------------------------------------------------------
// Stage 3: sample placement

/// Per-ray sample depths (unified), row-major [ray][sample]. `gt_depth` is only read
/// for local-gt placement; background entries should carry d_max.
inline std::vector<double> place_samples(const Pipeline& p, std::span<const Ray> rays,
                                         std::span<const UnifiedRay> unified,
                                         std::span<const float> gt_depth = {}) {
  const int x = p.cfg.samples;
  require(x >= 1, ErrorCode::InvalidCount, "sample count must be >= 1");
  std::vector<double> t(rays.size() * size_t(x));
  auto store = [&](size_t r, const std::vector<double>& v) {
    std::copy(v.begin(), v.end(), t.begin() + Eigen::Index(r * x));
  };

  if (p.uses_oracle()) {
    require(p.oracle.has_value(), ErrorCode::IncompatibleCheckpoint, "pipeline has no oracle network");
    const auto in = oracle_inputs(p, rays, unified);
    const auto out = net::forward(p.oracle->params, p.oracle->config, in);
    const auto bins = p.bins();
    std::vector<double> pdf(bins.count());
    for (size_t r = 0; r < rays.size(); ++r) {
      if (p.cfg.oracle.kind == OracleKind::Classified) {
        for (int z = 0; z < bins.count(); ++z) pdf[z] = out(z, Eigen::Index(r));
        store(r, sample_from_pdf(pdf, bins.edges(), x));
      } else {
        const auto frame = oracle_frame(unified[r], rays[r], p.cfg.oracle.unify);
        const double d = single_depth_to_unified(out(0, Eigen::Index(r)), p.range, frame.offset);
        store(r, local_depths(d, x, p.range, LocalStep::Log));
      }
    }
    return t;
  }

  const auto uniform = uniform_depths(p.range, x);
  const auto log = log_depths(p.range, x);
  const NdcFrame ndc = p.ndc_frame();
  for (size_t r = 0; r < rays.size(); ++r) {
    switch (p.cfg.mode) {
      case SamplingMode::Uniform: store(r, uniform); break;
      case SamplingMode::Log:
      case SamplingMode::LogWarp: store(r, log); break;
      case SamplingMode::Ndc:
        store(r, ndc_depths(unified[r].origin, unified[r].direction, p.range, x, ndc));
        break;
      case SamplingMode::LocalGt: {
        require(gt_depth.size() == rays.size(), ErrorCode::InvalidArgument,
                "local-gt placement needs a ground-truth depth per ray");
        const double d = std::clamp(double(gt_depth[r]), p.range.d_min, p.range.d_max);
        store(r, local_depths(d, x, p.range, LocalStep::Log));
        break;
      }
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Stage 4: warped, encoded shading inputs

struct ShadingInputs {
  net::Matrix<float> position;   // pos_dim x (rays * X)
  net::Matrix<float> direction;  // dir_dim x (rays * X)
  std::vector<double> deltas;    // rays * X
};

inline Vec3 feature_point(const Pipeline& p, FeatureSpace space, const NdcFrame& ndc,
                          const Vec3& x) {
  switch (space) {
    case FeatureSpace::Linear: return (x - p.cell.center()) / p.range.d_max;
    case FeatureSpace::Warp: return warp_point(Vec3(x - p.cell.center()), p.range.d_max);
    case FeatureSpace::Ndc: return ndc.project(x);
  }
  return x;
}

template <typename DepthAt>
ShadingInputs shading_inputs(const Pipeline& p, std::span<const UnifiedRay> unified, int x,
                             DepthAt&& depth_at) {
  const auto& enc = p.cfg.encoding;
  const auto space = feature_space(p.cfg.mode);
  const NdcFrame ndc = p.ndc_frame();
  const Eigen::Index cols = Eigen::Index(unified.size()) * x;
  ShadingInputs in{net::Matrix<float>(enc.pos_dim(), cols), net::Matrix<float>(enc.dir_dim(), cols),
                   std::vector<double>(size_t(cols))};
  std::vector<float> dir_code(enc.dir_dim());
  std::vector<double> ts(x);
  for (size_t r = 0; r < unified.size(); ++r) {
    const auto& u = unified[r];
    encode_into(u.direction, enc.dir_freqs, enc.include_raw, dir_code.data());
    for (int i = 0; i < x; ++i) ts[i] = depth_at(r, i);
    const auto set = make_sample_set(u.origin, u.direction, ts);
    for (int i = 0; i < x; ++i) {
      const Eigen::Index col = Eigen::Index(r) * x + i;
      encode_into(feature_point(p, space, ndc, set.positions[i]), enc.pos_freqs, enc.include_raw,
                  in.position.col(col).data());
      std::copy(dir_code.begin(), dir_code.end(), in.direction.col(col).data());
      in.deltas[size_t(col)] = set.deltas[i];
    }
  }
  return in;
}

inline ShadingInputs shading_inputs(const Pipeline& p, std::span<const UnifiedRay> unified,
                                    std::span<const double> t) {
  const int x = p.cfg.samples;
  return shading_inputs(p, unified, x, [&](size_t r, int i) { return t[r * x + i]; });
}

// ---------------------------------------------------------------------------
// Stage 5: shading outputs -> colors, and the training loss

inline double softplus(double v) { return v > 30 ? v : std::log1p(std::exp(v)); }

/// Per-sample opacity from the fourth network output.
template <typename T>
T sample_alpha(T out, double delta, OpacityModel model) {
  if (model == OpacityModel::Alpha) return out;
  return T(1) - T(std::exp(-softplus(double(out)) * delta));
}

template <typename T>
T sample_alpha_grad(T out, double delta, OpacityModel model) {
  if (model == OpacityModel::Alpha) return T(1);
  const double sigma = softplus(double(out));
  return T(std::exp(-sigma * delta) * delta / (1.0 + std::exp(-double(out))));
}

struct ShadingLoss {
  double total = 0;
  double mse = 0;
  double opacity = 0;
};

/// Weighted batch loss: w_mse * mean squared color error + w_opacity * mean
/// opacity penalty. `out` holds X consecutive columns per ray. When `grad` is set it
/// receives dLoss/d(out).
template <typename T>
ShadingLoss shading_loss(const net::Matrix<T>& out, std::span<const double> deltas,
                         std::span<const float> target_rgb, int x, const PipelineConfig& cfg,
                         net::Matrix<T>* grad = nullptr) {
  const Eigen::Index rays = out.cols() / x;
  require(out.rows() == 4 && out.cols() == rays * x && target_rgb.size() == size_t(rays) * 3 &&
              deltas.size() == size_t(out.cols()),
          ErrorCode::ShapeMismatch, "shading loss inputs disagree in size");
  if (grad) grad->setZero(4, out.cols());
  std::vector<T> colors(3 * x), alphas(x), d_colors(3 * x), d_alphas(x);
  const T bg[3] = {T(cfg.background[0]), T(cfg.background[1]), T(cfg.background[2])};
  ShadingLoss loss;
  const double mse_scale = 1.0 / (3.0 * double(rays));
  const double opa_scale = 1.0 / double(rays);
  for (Eigen::Index r = 0; r < rays; ++r) {
    T sum_alpha = T(0);
    for (int i = 0; i < x; ++i) {
      const Eigen::Index col = r * x + i;
      for (int c = 0; c < 3; ++c) colors[3 * i + c] = out(c, col);
      alphas[i] = sample_alpha(out(3, col), deltas[size_t(col)], cfg.opacity);
      sum_alpha += alphas[i];
    }
    T rgb[3], opacity;
    composite_forward(colors.data(), alphas.data(), x, bg, rgb, &opacity);
    T d_rgb[3];
    for (int c = 0; c < 3; ++c) {
      const double diff = double(rgb[c]) - double(target_rgb[size_t(r) * 3 + c]);
      loss.mse += diff * diff * mse_scale;
      d_rgb[c] = T(cfg.loss.mse * 2.0 * diff * mse_scale);
    }
    const double deficit = double(sum_alpha) - 1.0;
    const bool penalized = double(sum_alpha) < 1.0;
    if (penalized) loss.opacity += deficit * deficit * opa_scale;
    if (!grad) continue;
    composite_backward(colors.data(), alphas.data(), x, bg, d_rgb, T(0), d_colors.data(),
                       d_alphas.data());
    const T d_sum = penalized ? T(cfg.loss.opacity * 2.0 * deficit * opa_scale) : T(0);
    for (int i = 0; i < x; ++i) {
      const Eigen::Index col = r * x + i;
      for (int c = 0; c < 3; ++c) (*grad)(c, col) = d_colors[3 * i + c];
      (*grad)(3, col) =
          (d_alphas[i] + d_sum) * sample_alpha_grad(out(3, col), deltas[size_t(col)], cfg.opacity);
    }
  }
  loss.total = cfg.loss.mse * loss.mse + cfg.loss.opacity * loss.opacity;
  return loss;
}

// ---------------------------------------------------------------------------
// Rendering

struct RayResult {
  Vec3 rgb;
  double opacity;
};

inline std::vector<UnifiedRay> unify_all(const Pipeline& p, std::span<const Ray> rays) {
  const Sphere s = p.sphere();
  std::vector<UnifiedRay> u(rays.size());
  for (size_t i = 0; i < rays.size(); ++i) u[i] = unify_ray(rays[i], s);
  return u;
}

/// Full five-stage evaluation for a batch of camera rays.
inline std::vector<RayResult> render_rays(const Pipeline& p, std::span<const Ray> rays,
                                          std::span<const float> gt_depth = {}) {
  require(p.shading.has_value(), ErrorCode::IncompatibleCheckpoint, "pipeline has no shading network");
  const auto unified = unify_all(p, rays);
  const auto t = place_samples(p, rays, unified, gt_depth);
  const auto in = shading_inputs(p, unified, t);
  const auto out = net::forward(p.shading->params, p.shading->config, in.position, &in.direction);
  const int x = p.cfg.samples;
  std::vector<RayResult> res(rays.size());
  std::vector<float> colors(3 * x), alphas(x);
  const float bg[3] = {float(p.cfg.background[0]), float(p.cfg.background[1]),
                       float(p.cfg.background[2])};
  for (size_t r = 0; r < rays.size(); ++r) {
    for (int i = 0; i < x; ++i) {
      const Eigen::Index col = Eigen::Index(r) * x + i;
      for (int c = 0; c < 3; ++c) colors[3 * i + c] = out(c, col);
      alphas[i] = sample_alpha(out(3, col), in.deltas[size_t(col)], p.cfg.opacity);
    }
    float rgb[3], opacity;
    composite_forward(colors.data(), alphas.data(), x, bg, rgb, &opacity);
    res[r] = {Vec3(rgb[0], rgb[1], rgb[2]), double(opacity)};
  }
  return res;
}

inline Vec3 render_ray(const Ray& ray, const Pipeline& p, std::optional<float> gt_depth = {}) {
  const float d = gt_depth.value_or(float(p.range.d_max));
  return render_rays(p, std::span<const Ray>(&ray, 1),
                     gt_depth ? std::span<const float>(&d, 1) : std::span<const float>{})[0]
      .rgb;
}

struct RenderedImage {
  Image image;
  std::vector<float> opacity;  // per pixel accumulated opacity
};

inline RenderedImage render_image(const Pose& pose, const Pipeline& p, int width, int height,
                                  int threads = 1, std::span<const float> gt_depth = {}) {
  validate_pose(p.cell, pose);
  require(width > 0 && height > 0, ErrorCode::InvalidArgument, "image size must be positive");
  RenderedImage out{Image(width, height), std::vector<float>(size_t(width) * height)};
  const size_t pixels = size_t(width) * height;
  constexpr size_t kChunk = 1024;
  const size_t chunks = (pixels + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](size_t c0, size_t c1) {
    std::vector<Ray> rays;
    for (size_t c = c0; c < c1; ++c) {
      const size_t begin = c * kChunk, end = std::min(pixels, begin + kChunk);
      rays.clear();
      for (size_t i = begin; i < end; ++i)
        rays.push_back(pixel_ray(pose, int(i % width), int(i / width), width, height));
      const auto res = render_rays(
          p, rays, gt_depth.empty() ? std::span<const float>{} : gt_depth.subspan(begin, end - begin));
      for (size_t i = begin; i < end; ++i) {
        for (int k = 0; k < 3; ++k) out.image.rgb[i * 3 + k] = float(res[i - begin].rgb[k]);
        out.opacity[i] = float(res[i - begin].opacity);
      }
    }
  });
  return out;
}

}  // namespace oraclemarch
