// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oraclemarch/error.hpp"
#include "oraclemarch/image.hpp"
#include "oraclemarch/net.hpp"
#include "oraclemarch/render.hpp"
#include "oraclemarch/scenes.hpp"
#include "oraclemarch/train.hpp"

namespace oraclemarch {

/// 10 log10(1 / MSE) over all channels; +infinity for identical images.
inline double psnr(const Image& img, const Image& ref) {
  require(img.width == ref.width && img.height == ref.height && img.rgb.size() == ref.rgb.size(),
          ErrorCode::ShapeMismatch, "psnr: image sizes differ");
  require(!img.rgb.empty(), ErrorCode::ShapeMismatch, "psnr: empty image");
  double sum = 0;
  for (size_t i = 0; i < img.rgb.size(); ++i) {
    const double d = double(img.rgb[i]) - double(ref.rgb[i]);
    sum += d * d;
  }
  const double mse = sum / double(img.rgb.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline uint64_t pipeline_flops_per_pixel(const net::MLPConfig* oracle, const net::MLPConfig& shading,
                                         uint64_t samples) {
  return (oracle ? net::flop_count(*oracle) : 0) + samples * net::flop_count(shading);
}

inline uint64_t pipeline_flops_per_pixel(const Checkpoint& ck, uint64_t samples) {
  require(ck.shading.has_value(), ErrorCode::IncompatibleCheckpoint, "checkpoint has no shading network");
  return pipeline_flops_per_pixel(ck.oracle ? &ck.oracle->config : nullptr, ck.shading->config, samples);
}

inline uint64_t pipeline_flops_per_pixel(const Checkpoint& ck) {
  return pipeline_flops_per_pixel(ck, uint64_t(ck.pipeline.samples));
}

inline nlohmann::json psnr_json(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("inf");
}

struct ImageScore {
  int pose_id;
  double psnr;
};

struct EvalReport {
  nlohmann::json config;
  std::vector<ImageScore> per_image;
  double mean_psnr = 0;
  double mflop_per_pixel = 0;
  double wall_ms_per_frame = 0;

  nlohmann::json to_json() const {
    nlohmann::json imgs = nlohmann::json::array();
    for (const auto& s : per_image) imgs.push_back({{"pose_id", s.pose_id}, {"psnr", psnr_json(s.psnr)}});
    return {{"config", config},
            {"per_image", imgs},
            {"mean_psnr", psnr_json(mean_psnr)},
            {"mflop_per_pixel", mflop_per_pixel},
            {"wall_ms_per_frame", wall_ms_per_frame}};
  }
};

inline nlohmann::json checkpoint_summary(const Checkpoint& ck) {
  return {{"scene", ck.scene},
          {"pipeline", pipeline_json(ck.pipeline)},
          {"oracle", ck.oracle ? detail::mlp_json(ck.oracle->config) : nlohmann::json(nullptr)},
          {"shading", ck.shading ? detail::mlp_json(ck.shading->config) : nlohmann::json(nullptr)}};
}

/// Ground-truth depth per pixel with background set to d_max, for local-gt sampling.
inline std::vector<float> sampling_depth(const DepthMap& d, const DepthRange& range) {
  std::vector<float> out(d.depth.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = d.valid[i] ? d.depth[i] : float(range.d_max);
  return out;
}

inline Image render_dataset_pose(const Pipeline& p, const Dataset& ds, int id, int threads) {
  const bool needs_gt = p.cfg.mode == SamplingMode::LocalGt && !p.uses_oracle();
  const auto gt = needs_gt ? sampling_depth(ds.depth[size_t(id)], p.range) : std::vector<float>{};
  return render_image(ds.manifest.poses[size_t(id)], p, ds.manifest.width, ds.manifest.height, threads, gt)
      .image;
}

inline EvalReport evaluate(const Checkpoint& ck, const Dataset& ds, const std::string& split = "test",
                           int threads = 1) {
  const auto& ids = ds.manifest.split(split);
  require(!ids.empty(), ErrorCode::EmptySplit, "split '" + split + "' has no images");
  require(same_setup(ck.cell, ds.manifest.cell) && ck.range.d_min == ds.manifest.range.d_min &&
              ck.range.d_max == ds.manifest.range.d_max,
          ErrorCode::IncompatibleCheckpoint, "checkpoint was trained for a different view cell or range");
  const Pipeline p = ck.make_pipeline();
  EvalReport rep;
  rep.config = checkpoint_summary(ck);
  rep.config["split"] = split;
  double total_ms = 0, sum = 0;
  for (int id : ids) {
    const auto t0 = std::chrono::steady_clock::now();
    const Image img = render_dataset_pose(p, ds, id, threads);
    total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const double v = psnr(img, ds.rgb[size_t(id)]);
    rep.per_image.push_back({id, v});
    sum += v;
  }
  rep.mean_psnr = sum / double(ids.size());
  rep.mflop_per_pixel = double(pipeline_flops_per_pixel(ck)) / 1e6;
  rep.wall_ms_per_frame = total_ms / double(ids.size());
  return rep;
}

inline std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  char line[128];
  os << "pose_id      psnr\n";
  for (const auto& s : r.per_image) {
    std::snprintf(line, sizeof line, "%7d  %8.3f\n", s.pose_id, s.psnr);
    os << line;
  }
  std::snprintf(line, sizeof line, "mean psnr %.3f dB | %.4f MFLOP/pixel | %.1f ms/frame\n", r.mean_psnr,
                r.mflop_per_pixel, r.wall_ms_per_frame);
  os << line;
  return os.str();
}

// ---------------------------------------------------------------------------
// Ablation grids: "mode=uniform,log;samples=2,4;oracle=none,k5z5" (cartesian product).
// Oracle variants: none | sd | sd-unified | kKzZ (classified, filter sizes K and Z).

struct OracleVariant {
  std::string name;
  OracleSpec spec;
};

inline OracleVariant parse_oracle_variant(const std::string& s, const OracleSpec& base) {
  OracleVariant v{s, base};
  if (s == "none") {
    v.spec.kind = OracleKind::None;
  } else if (s == "sd" || s == "sd-unified") {
    v.spec.kind = OracleKind::SingleDepth;
    v.spec.unify = s == "sd-unified";
  } else {
    int k = 0, z = 0;
    char tail = 0;
    require(std::sscanf(s.c_str(), "k%dz%d%c", &k, &z, &tail) == 2, ErrorCode::InvalidArgument,
            "oracle variant '" + s + "' is not none, sd, sd-unified or kKzZ");
    check_kernel(k);
    check_kernel(z);
    v.spec.kind = OracleKind::Classified;
    v.spec.k = k;
    v.spec.z = z;
    v.spec.unify = true;
  }
  return v;
}

struct AblationGrid {
  std::vector<SamplingMode> modes = {SamplingMode::LogWarp};
  std::vector<int> samples = {4};
  std::vector<std::string> oracles = {"none"};
};

inline std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

inline AblationGrid parse_grid(const std::string& spec) {
  AblationGrid g;
  for (const auto& part : split_list(spec, ';')) {
    const auto eq = part.find('=');
    require(eq != std::string::npos, ErrorCode::InvalidArgument, "grid entry '" + part + "' lacks '='");
    const std::string key = part.substr(0, eq);
    const auto values = split_list(part.substr(eq + 1), ',');
    require(!values.empty(), ErrorCode::InvalidArgument, "grid key '" + key + "' has no values");
    if (key == "mode") {
      g.modes.clear();
      for (const auto& v : values) g.modes.push_back(parse_sampling_mode(v));
    } else if (key == "samples" || key == "n" || key == "x") {
      g.samples.clear();
      for (const auto& v : values) {
        int n = 0;
        try {
          n = std::stoi(v);
        } catch (...) {
          throw Error(ErrorCode::InvalidArgument, "sample count '" + v + "' is not an integer");
        }
        require(n >= 1, ErrorCode::InvalidCount, "sample count must be >= 1");
        g.samples.push_back(n);
      }
    } else if (key == "oracle") {
      for (const auto& v : values) parse_oracle_variant(v, {});
      g.oracles = values;
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown grid key '" + key + "'");
    }
  }
  return g;
}

struct AblationRow {
  SamplingMode mode;
  int samples;
  std::string oracle;
  EvalReport report;
};

/// Trains and evaluates every grid cell. Oracles are trained once per variant and
/// shared across cells.
inline std::vector<AblationRow> ablation(const Dataset& ds, const AblationGrid& grid,
                                         const TrainConfig& base, const std::string& split = "test") {
  std::map<std::string, Checkpoint> oracles;
  std::vector<AblationRow> rows;
  for (const auto& name : grid.oracles) {
    const auto variant = parse_oracle_variant(name, base.pipeline.oracle);
    if (variant.spec.kind != OracleKind::None && !oracles.count(name)) {
      TrainConfig oc = base;
      oc.pipeline.oracle = variant.spec;
      detail::log_line(base, "ablation: training oracle " + name);
      oracles.emplace(name, train_oracle(ds, oc));
    }
    for (auto mode : grid.modes)
      for (int x : grid.samples) {
        TrainConfig sc = base;
        sc.pipeline.oracle = variant.spec;
        sc.pipeline.mode = mode;
        sc.pipeline.samples = x;
        detail::log_line(base, "ablation: shading " + std::string(to_string(mode)) + " X=" + std::to_string(x) +
                                   " oracle=" + name);
        std::optional<Checkpoint> oracle;
        if (variant.spec.kind != OracleKind::None) oracle = oracles.at(name);
        const auto ck = train_shading(ds, oracle, sc);
        rows.push_back({mode, x, name, evaluate(ck, ds, split, base.worker_count())});
      }
  }
  return rows;
}

inline nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"mode", std::string(to_string(r.mode))},
                   {"samples", r.samples},
                   {"oracle", r.oracle},
                   {"mean_psnr", psnr_json(r.report.mean_psnr)},
                   {"mflop_per_pixel", r.report.mflop_per_pixel},
                   {"wall_ms_per_frame", r.report.wall_ms_per_frame}});
  return {{"rows", out}};
}

inline std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %7s %-12s %9s %12s\n", "mode", "samples", "oracle", "psnr",
                "MFLOP/px");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-10s %7d %-12s %9.3f %12.4f\n", std::string(to_string(r.mode)).c_str(),
                  r.samples, r.oracle.c_str(), r.report.mean_psnr, r.report.mflop_per_pixel);
    os << line;
  }
  return os.str();
}

}  // namespace oraclemarch
