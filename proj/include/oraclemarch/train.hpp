// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "oraclemarch/error.hpp"
#include "oraclemarch/io.hpp"
#include "oraclemarch/net.hpp"
#include "oraclemarch/oracle_target.hpp"
#include "oraclemarch/parallel.hpp"
#include "oraclemarch/render.hpp"
#include "oraclemarch/scenes.hpp"

namespace oraclemarch {

struct TrainConfig {
  int iterations = 20000;
  int batch = 1024;  // rays per iteration
  double lr = 1e-3;
  uint64_t seed = 1;
  int hidden_layers = 4;
  int width = 64;
  int val_every = 500;
  int val_rays = 2048;
  int threads = 1;
  bool strict = false;  // single-threaded, bit-reproducible
  PipelineConfig pipeline;
  std::function<void(const std::string&)> log;

  static TrainConfig desk() { return {}; }

  static TrainConfig paper_scale() {
    TrainConfig c;
    c.iterations = 300000;
    c.batch = 4096;
    c.lr = 5e-4;
    c.hidden_layers = 8;
    c.width = 256;
    c.pipeline.oracle.classes = 128;
    c.pipeline.oracle.inputs = 128;
    return c;
  }

  int worker_count() const { return strict ? 1 : std::max(1, threads); }

  void validate() const {
    require(iterations >= 0 && batch >= 1 && lr > 0 && hidden_layers >= 1 && width >= 1 &&
                val_every >= 1 && val_rays >= 1 && pipeline.samples >= 1,
            ErrorCode::InvalidArgument, "training counts must be positive");
  }
};

struct TrainMeta {
  int64_t best_iteration = -1;
  int64_t iterations = 0;
  double val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::pair<int64_t, double>> val_history;
  uint64_t seed = 0;

  bool operator==(const TrainMeta&) const = default;
};

/// A trained (or partially trained) pipeline plus the scene setup it is valid for.
struct Checkpoint {
  std::string scene;
  ViewCell cell = ViewCell(Vec3::Zero(), Vec3::Ones(), Vec3(0, 0, -1), 0, 0);
  DepthRange range;
  double fov_deg = 60;
  int width = 64;
  int height = 64;
  PipelineConfig pipeline;
  std::optional<Network> oracle;
  std::optional<Network> shading;
  TrainMeta oracle_meta;
  TrainMeta shading_meta;

  Pipeline make_pipeline() const {
    Pipeline p(cell, range, fov_deg, pipeline);
    p.oracle = oracle;
    p.shading = shading;
    return p;
  }
};

// ---------------------------------------------------------------------------
// Checkpoint file: "OMCK", version u32, header length u32, JSON header, then the
// float32 tensors listed in header["tensors"], weights before biases per layer,
// oracle before shading.

constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json mlp_json(const net::MLPConfig& c) {
  nlohmann::json j = {{"in_dim", c.in_dim},
                      {"out_dim", c.out_dim},
                      {"hidden_layers", c.hidden_layers},
                      {"hidden_width", c.hidden_width},
                      {"sigmoid_outputs", c.sigmoid_outputs}};
  j["skip"] = c.skip ? nlohmann::json{{"aux_dim", c.skip->aux_dim}, {"layer", c.skip->layer}}
                     : nlohmann::json(nullptr);
  return j;
}

inline net::MLPConfig json_mlp(const nlohmann::json& j) {
  net::MLPConfig c;
  c.in_dim = j.at("in_dim").get<int>();
  c.out_dim = j.at("out_dim").get<int>();
  c.hidden_layers = j.at("hidden_layers").get<int>();
  c.hidden_width = j.at("hidden_width").get<int>();
  c.sigmoid_outputs = j.at("sigmoid_outputs").get<std::vector<bool>>();
  if (!j.at("skip").is_null())
    c.skip = net::SkipSpec{j["skip"].at("aux_dim").get<int>(), j["skip"].at("layer").get<int>()};
  c.validate();
  return c;
}

inline nlohmann::json meta_json(const TrainMeta& m) {
  return {{"best_iteration", m.best_iteration},
          {"iterations", m.iterations},
          {"val_loss", std::isfinite(m.val_loss) ? nlohmann::json(m.val_loss) : nlohmann::json(nullptr)},
          {"val_history", m.val_history},
          {"seed", m.seed}};
}

inline TrainMeta json_meta(const nlohmann::json& j) {
  TrainMeta m;
  m.best_iteration = j.at("best_iteration").get<int64_t>();
  m.iterations = j.at("iterations").get<int64_t>();
  m.val_loss = j.at("val_loss").is_null() ? std::numeric_limits<double>::infinity()
                                          : j.at("val_loss").get<double>();
  m.val_history = j.at("val_history").get<std::vector<std::pair<int64_t, double>>>();
  m.seed = j.at("seed").get<uint64_t>();
  return m;
}

inline OracleKind parse_oracle_kind(const std::string& s) {
  if (s == "none") return OracleKind::None;
  if (s == "classified") return OracleKind::Classified;
  if (s == "single-depth") return OracleKind::SingleDepth;
  throw Error(ErrorCode::CorruptFile, "unknown oracle kind '" + s + "'");
}

}  // namespace detail

inline nlohmann::json pipeline_json(const PipelineConfig& p) {
  const auto& o = p.oracle;
  return {{"samples", p.samples},
          {"mode", std::string(to_string(p.mode))},
          {"oracle",
           {{"kind", std::string(to_string(o.kind))},
            {"classes", o.classes},
            {"inputs", o.inputs},
            {"k", o.k},
            {"z", o.z},
            {"unify", o.unify}}},
          {"background", vec_json(p.background)},
          {"loss", {{"mse", p.loss.mse}, {"opacity", p.loss.opacity}}},
          {"opacity_model", p.opacity == OpacityModel::Alpha ? "alpha" : "density"},
          {"encoding",
           {{"pos_freqs", p.encoding.pos_freqs},
            {"dir_freqs", p.encoding.dir_freqs},
            {"include_raw", p.encoding.include_raw}}},
          {"jitter", p.jitter}};
}

inline PipelineConfig parse_pipeline(const nlohmann::json& j) {
  PipelineConfig p;
  p.samples = j.at("samples").get<int>();
  p.mode = parse_sampling_mode(j.at("mode").get<std::string>());
  const auto& o = j.at("oracle");
  p.oracle.kind = detail::parse_oracle_kind(o.at("kind").get<std::string>());
  p.oracle.classes = o.at("classes").get<int>();
  p.oracle.inputs = o.at("inputs").get<int>();
  p.oracle.k = o.at("k").get<int>();
  p.oracle.z = o.at("z").get<int>();
  p.oracle.unify = o.at("unify").get<bool>();
  p.background = json_vec(j.at("background"));
  p.loss.mse = j.at("loss").at("mse").get<double>();
  p.loss.opacity = j.at("loss").at("opacity").get<double>();
  p.opacity = j.at("opacity_model").get<std::string>() == "density" ? OpacityModel::Density
                                                                     : OpacityModel::Alpha;
  p.encoding.pos_freqs = j.at("encoding").at("pos_freqs").get<int>();
  p.encoding.dir_freqs = j.at("encoding").at("dir_freqs").get<int>();
  p.encoding.include_raw = j.at("encoding").at("include_raw").get<bool>();
  p.jitter = j.at("jitter").get<bool>();
  return p;
}

inline std::vector<char> serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json h;
  h["format"] = "oraclemarch-checkpoint";
  h["scene"] = ck.scene;
  h["view_cell"] = cell_json(ck.cell);
  h["depth_range"] = {{"d_min", ck.range.d_min}, {"d_max", ck.range.d_max}};
  h["fov_deg"] = ck.fov_deg;
  h["resolution"] = {ck.width, ck.height};
  h["pipeline"] = pipeline_json(ck.pipeline);
  h["depth_bins"] = {{"count", ck.pipeline.oracle.classes}, {"space", "log-warped"}};
  nlohmann::json tensors = nlohmann::json::array();
  auto add_net = [&](const char* name, const std::optional<Network>& n, const TrainMeta& meta) {
    if (!n) {
      h[name] = nullptr;
      return;
    }
    h[name] = {{"config", detail::mlp_json(n->config)}, {"meta", detail::meta_json(meta)}};
    for (size_t l = 0; l < n->params.weights.size(); ++l) {
      const auto& w = n->params.weights[l];
      tensors.push_back({{"name", std::string(name) + ".w" + std::to_string(l)}, {"rows", w.rows()}, {"cols", w.cols()}});
      tensors.push_back({{"name", std::string(name) + ".b" + std::to_string(l)},
                         {"rows", n->params.biases[l].size()},
                         {"cols", 1}});
    }
  };
  add_net("oracle", ck.oracle, ck.oracle_meta);
  add_net("shading", ck.shading, ck.shading_meta);
  h["tensors"] = tensors;
  const std::string header = h.dump();

  io::ByteWriter w;
  w.bytes("OMCK");
  w.u32(kCheckpointVersion);
  w.u32(uint32_t(header.size()));
  w.bytes(header);
  for (const auto* n : {&ck.oracle, &ck.shading}) {
    if (!*n) continue;
    (*n)->params.for_each_tensor([&](const float* data, size_t count) {
      w.floats(std::span<const float>(data, count));
    });
  }
  return w.data();
}

inline Checkpoint deserialize_checkpoint(std::span<const char> bytes) {
  io::ByteReader r(bytes);
  require(r.bytes(4) == "OMCK", ErrorCode::CorruptFile, "not a checkpoint (bad magic)");
  const uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorCode::VersionMismatch,
          "checkpoint version " + std::to_string(version) + " is not supported");
  const uint32_t len = r.u32();
  const std::string header = r.bytes(len);
  Checkpoint ck;
  try {
    const auto h = nlohmann::json::parse(header);
    require(h.at("format") == "oraclemarch-checkpoint", ErrorCode::CorruptFile, "bad checkpoint header");
    ck.scene = h.at("scene").get<std::string>();
    ck.cell = json_cell(h.at("view_cell"));
    ck.range = DepthRange(h.at("depth_range").at("d_min").get<double>(),
                          h.at("depth_range").at("d_max").get<double>());
    ck.fov_deg = h.at("fov_deg").get<double>();
    ck.width = h.at("resolution").at(0).get<int>();
    ck.height = h.at("resolution").at(1).get<int>();
    ck.pipeline = parse_pipeline(h.at("pipeline"));
    size_t tensor = 0;
    const auto& listed = h.at("tensors");
    auto read_net = [&](const char* name, std::optional<Network>& n, TrainMeta& meta) {
      if (h.at(name).is_null()) return;
      Network net{detail::json_mlp(h[name].at("config")), {}};
      meta = detail::json_meta(h[name].at("meta"));
      net.params = net::zero_params<float>(net.config);
      net.params.for_each_tensor([&](float* data, size_t count) {
        require(tensor < listed.size() &&
                    listed[tensor].at("rows").get<size_t>() * listed[tensor].at("cols").get<size_t>() == count,
                ErrorCode::CorruptFile, "tensor table disagrees with network config");
        ++tensor;
        r.floats(std::span<float>(data, count));
      });
      n = std::move(net);
    };
    read_net("oracle", ck.oracle, ck.oracle_meta);
    read_net("shading", ck.shading, ck.shading_meta);
    require(tensor == listed.size(), ErrorCode::CorruptFile, "tensor table lists extra tensors");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("checkpoint header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidArgument || e.code() == ErrorCode::InvalidViewCell)
      throw Error(ErrorCode::CorruptFile, e.what());
    throw;
  }
  require(r.remaining() == 0, ErrorCode::CorruptFile, "trailing bytes after checkpoint tensors");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

// ---------------------------------------------------------------------------
// Training data

struct PixelRef {
  int image;
  int pixel;
};

inline std::vector<PixelRef> split_pixels(const Dataset& ds, const std::vector<int>& ids) {
  std::vector<PixelRef> refs;
  refs.reserve(ids.size() * size_t(ds.pixels_per_image()));
  for (int id : ids)
    for (int px = 0; px < ds.pixels_per_image(); ++px) refs.push_back({id, px});
  return refs;
}

inline Ray ref_ray(const Dataset& ds, PixelRef r) {
  const int w = ds.manifest.width;
  return pixel_ray(ds.manifest.poses[size_t(r.image)], r.pixel % w, r.pixel / w, w, ds.manifest.height);
}

/// Fixed validation subset: the val split, or the training split when val is empty.
inline std::vector<PixelRef> validation_refs(const Dataset& ds, int count, uint64_t seed) {
  const auto& ids = ds.manifest.val.empty() ? ds.manifest.train : ds.manifest.val;
  auto refs = split_pixels(ds, ids);
  if (refs.size() <= size_t(count)) return refs;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<PixelRef> out;
  out.reserve(size_t(count));
  std::uniform_int_distribution<size_t> pick(0, refs.size() - 1);
  for (int i = 0; i < count; ++i) out.push_back(refs[pick(rng)]);
  return out;
}

inline bool same_setup(const ViewCell& a, const ViewCell& b) {
  return a.center() == b.center() && a.size() == b.size() && a.forward() == b.forward() &&
         a.max_pitch_deg() == b.max_pitch_deg() && a.max_yaw_deg() == b.max_yaw_deg();
}

namespace detail {

/// Loss value and parameter gradient for a contiguous column range of a batch.
struct ChunkResult {
  double loss = 0;
  net::MLPParams<float> grad;
};

/// Splits `n` columns across workers; gradients are summed in chunk order.
template <typename Fn>
ChunkResult batched(size_t n, int workers, Fn&& chunk) {
  const int w = std::max(1, std::min<int>(workers, int(n)));
  std::vector<ChunkResult> parts(static_cast<size_t>(w));
  parallel_for(size_t(w), w, [&](size_t b, size_t e) {
    for (size_t c = b; c < e; ++c) parts[c] = chunk(n * c / w, n * (c + 1) / w);
  });
  ChunkResult out = std::move(parts[0]);
  for (size_t c = 1; c < parts.size(); ++c) {
    out.loss += parts[c].loss;
    net::accumulate(out.grad, parts[c].grad);
  }
  return out;
}

inline void log_line(const TrainConfig& cfg, const std::string& s) {
  if (cfg.log) cfg.log(s);
}

inline Checkpoint base_checkpoint(const Dataset& ds, const TrainConfig& cfg) {
  Checkpoint ck;
  ck.scene = ds.manifest.scene;
  ck.cell = ds.manifest.cell;
  ck.range = ds.manifest.range;
  ck.fov_deg = ds.manifest.fov_deg;
  ck.width = ds.manifest.width;
  ck.height = ds.manifest.height;
  ck.pipeline = cfg.pipeline;
  return ck;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Phase 1: depth oracle

/// Per-ray oracle targets for `refs`, one column each.
class OracleTargets {
 public:
  OracleTargets(const Dataset& ds, const Pipeline& p) : ds_(ds), p_(p) {
    if (p.cfg.oracle.kind != OracleKind::Classified) return;
    const auto bins = p.bins();
    per_image_.reserve(ds.depth.size());
    for (const auto& d : ds.depth) per_image_.push_back(build_targets(d, bins, p.cfg.oracle.k, p.cfg.oracle.z));
  }

  int rows() const { return p_.cfg.oracle.out_dim(); }

  void fill(PixelRef r, const UnifiedRay& u, const Ray& camera, float* out) const {
    if (p_.cfg.oracle.kind == OracleKind::Classified) {
      const auto& t = per_image_[size_t(r.image)];
      const float* src = &t.values[size_t(r.pixel) * size_t(t.classes)];
      std::copy(src, src + t.classes, out);
      return;
    }
    const auto& d = ds_.depth[size_t(r.image)];
    const double depth = d.valid[size_t(r.pixel)] ? double(d.depth[size_t(r.pixel)]) : p_.range.d_max;
    const auto frame = oracle_frame(u, camera, p_.cfg.oracle.unify);
    out[0] = float(single_depth_target(depth, p_.range, frame.offset));
  }

 private:
  const Dataset& ds_;
  const Pipeline& p_;
  std::vector<ClassTarget> per_image_;
};

/// BCE for the classified oracle, MSE for single-depth, both averaged over all
/// outputs. With `grad`, receives dLoss/dOutput. Log arguments are clamped to
/// [eps, 1 - eps]; the gradient uses the same clamped denominator.
inline double oracle_loss(const net::Matrix<float>& out, const net::Matrix<float>& target,
                          OracleKind kind, double scale, net::Matrix<float>* grad) {
  double loss = 0;
  if (grad) grad->resize(out.rows(), out.cols());
  for (Eigen::Index c = 0; c < out.cols(); ++c)
    for (Eigen::Index k = 0; k < out.rows(); ++k) {
      const double p = out(k, c), t = target(k, c);
      if (kind == OracleKind::SingleDepth) {
        loss += (p - t) * (p - t) * scale;
        if (grad) (*grad)(k, c) = float(2.0 * (p - t) * scale);
      } else {
        const double pc = std::clamp(p, kBceEps, 1.0 - kBceEps);
        loss -= (t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc)) * scale;
        if (grad) (*grad)(k, c) = float((pc - t) / (pc * (1.0 - pc)) * scale);
      }
    }
  return loss;
}

struct OracleBatch {
  net::Matrix<float> input;
  net::Matrix<float> target;
};

inline OracleBatch oracle_batch(const Dataset& ds, const Pipeline& p, const OracleTargets& targets,
                                std::span<const PixelRef> refs) {
  std::vector<Ray> rays(refs.size());
  for (size_t i = 0; i < refs.size(); ++i) rays[i] = ref_ray(ds, refs[i]);
  const auto unified = unify_all(p, rays);
  OracleBatch b{oracle_inputs(p, rays, unified), net::Matrix<float>(targets.rows(), Eigen::Index(refs.size()))};
  for (size_t i = 0; i < refs.size(); ++i)
    targets.fill(refs[i], unified[i], rays[i], b.target.col(Eigen::Index(i)).data());
  return b;
}

inline double evaluate_oracle_loss(const Network& n, const OracleBatch& b, OracleKind kind) {
  const auto out = net::forward(n.params, n.config, b.input);
  return oracle_loss(out, b.target, kind, 1.0 / double(out.size()), nullptr);
}

inline Checkpoint train_oracle(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  require(ds.has_depth, ErrorCode::DatasetMissingDepth, "oracle training needs depth buffers");
  require(cfg.pipeline.oracle.kind != OracleKind::None, ErrorCode::InvalidArgument,
          "train_oracle needs an oracle kind");
  require(!ds.manifest.train.empty(), ErrorCode::EmptySplit, "training split is empty");
  if (cfg.pipeline.oracle.kind == OracleKind::Classified) {
    check_kernel(cfg.pipeline.oracle.k);
    check_kernel(cfg.pipeline.oracle.z);
  }
  Checkpoint ck = detail::base_checkpoint(ds, cfg);
  const Pipeline p = ck.make_pipeline();
  const OracleKind kind = cfg.pipeline.oracle.kind;
  const OracleTargets targets(ds, p);

  Network net{oracle_network_config(cfg.pipeline.oracle, cfg.hidden_layers, cfg.width), {}};
  net.params = net::init_params<float>(net.config, cfg.seed);
  auto adam = net::AdamState<float>::create(net.config, {cfg.lr});

  const auto train_refs = split_pixels(ds, ds.manifest.train);
  const auto val = oracle_batch(ds, p, targets, validation_refs(ds, cfg.val_rays, cfg.seed));
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<size_t> pick(0, train_refs.size() - 1);
  std::vector<PixelRef> refs(size_t(cfg.batch));
  TrainMeta meta;
  meta.seed = cfg.seed;
  Network best = net;

  auto validate = [&](int64_t it) {
    const double v = evaluate_oracle_loss(net, val, kind);
    meta.val_history.emplace_back(it, v);
    if (v < meta.val_loss) {
      meta.val_loss = v;
      meta.best_iteration = it;
      best = net;
    }
    detail::log_line(cfg, "oracle it " + std::to_string(it) + " val " + std::to_string(v));
  };

  validate(0);
  const double scale = 1.0 / (double(cfg.batch) * targets.rows());
  for (int it = 1; it <= cfg.iterations; ++it) {
    for (auto& r : refs) r = train_refs[pick(rng)];
    const auto b = oracle_batch(ds, p, targets, refs);
    auto res = detail::batched(refs.size(), cfg.worker_count(), [&](size_t c0, size_t c1) {
      const Eigen::Index n = Eigen::Index(c1 - c0);
      net::ForwardCache<float> cache;
      const net::Matrix<float> in = b.input.middleCols(Eigen::Index(c0), n);
      const auto out = net::forward(net.params, net.config, in, nullptr, &cache);
      net::Matrix<float> g;
      const double l = oracle_loss(out, b.target.middleCols(Eigen::Index(c0), n), kind, scale, &g);
      return detail::ChunkResult{l, net::backward(net.params, net.config, cache, g).params};
    });
    net::adam_step(net.params, res.grad, adam);
    if (it % cfg.val_every == 0 || it == cfg.iterations) validate(it);
  }
  meta.iterations = cfg.iterations;
  ck.oracle = std::move(best);
  ck.oracle_meta = meta;
  return ck;
}

// ---------------------------------------------------------------------------
// Phase 2: shading network behind a frozen oracle

/// Shading-phase pipeline config: the oracle spec comes from the checkpoint, which
/// must match the dataset's view cell and depth range.
inline void check_oracle_compatible(const Dataset& ds, const TrainConfig& cfg,
                                    const std::optional<Checkpoint>& oracle_ckpt) {
  const auto& want = cfg.pipeline.oracle;
  if (want.kind == OracleKind::None) return;
  require(oracle_ckpt && oracle_ckpt->oracle, ErrorCode::IncompatibleCheckpoint,
          "oracle-guided shading needs an oracle checkpoint");
  const auto& have = oracle_ckpt->pipeline.oracle;
  require(have.kind == want.kind && have.classes == want.classes && have.inputs == want.inputs &&
              have.unify == want.unify,
          ErrorCode::IncompatibleCheckpoint,
          "oracle checkpoint (" + std::string(to_string(have.kind)) + ", C=" + std::to_string(have.classes) +
              ", I=" + std::to_string(have.inputs) + ") does not match the requested oracle (" +
              std::string(to_string(want.kind)) + ", C=" + std::to_string(want.classes) +
              ", I=" + std::to_string(want.inputs) + ")");
  require(oracle_ckpt->oracle->config.in_dim == have.in_dim() &&
              oracle_ckpt->oracle->config.out_dim == have.out_dim(),
          ErrorCode::IncompatibleCheckpoint, "oracle network dimensions disagree with its spec");
  require(same_setup(oracle_ckpt->cell, ds.manifest.cell) && oracle_ckpt->range.d_min == ds.manifest.range.d_min &&
              oracle_ckpt->range.d_max == ds.manifest.range.d_max,
          ErrorCode::IncompatibleCheckpoint, "oracle was trained for a different view cell or depth range");
}

struct ShadingBatch {
  ShadingInputs inputs;
  std::vector<float> target_rgb;
};

inline ShadingBatch shading_batch(const Dataset& ds, const Pipeline& p, std::span<const PixelRef> refs) {
  std::vector<Ray> rays(refs.size());
  std::vector<float> gt(refs.size()), rgb(refs.size() * 3);
  for (size_t i = 0; i < refs.size(); ++i) {
    rays[i] = ref_ray(ds, refs[i]);
    const auto& d = ds.depth[size_t(refs[i].image)];
    const size_t px = size_t(refs[i].pixel);
    gt[i] = d.valid[px] ? d.depth[px] : float(p.range.d_max);
    const float* c = &ds.rgb[size_t(refs[i].image)].rgb[px * 3];
    std::copy(c, c + 3, &rgb[i * 3]);
  }
  const auto unified = unify_all(p, rays);
  const bool local = p.cfg.mode == SamplingMode::LocalGt && !p.uses_oracle();
  const auto t = place_samples(p, rays, unified, local ? std::span<const float>(gt) : std::span<const float>{});
  return {shading_inputs(p, unified, t), std::move(rgb)};
}

inline ShadingLoss evaluate_shading_loss(const Pipeline& p, const ShadingBatch& b) {
  const auto out = net::forward(p.shading->params, p.shading->config, b.inputs.position, &b.inputs.direction);
  return shading_loss(out, b.inputs.deltas, b.target_rgb, p.cfg.samples, p.cfg);
}

inline Checkpoint train_shading(const Dataset& ds, const std::optional<Checkpoint>& oracle_ckpt,
                                const TrainConfig& cfg) {
  cfg.validate();
  require(!ds.manifest.train.empty(), ErrorCode::EmptySplit, "training split is empty");
  check_oracle_compatible(ds, cfg, oracle_ckpt);
  require(cfg.pipeline.mode != SamplingMode::LocalGt || cfg.pipeline.oracle.kind != OracleKind::None ||
              ds.has_depth,
          ErrorCode::DatasetMissingDepth, "local-gt sampling needs depth buffers");
  Checkpoint ck = detail::base_checkpoint(ds, cfg);
  if (cfg.pipeline.oracle.kind != OracleKind::None) {
    ck.pipeline.oracle = oracle_ckpt->pipeline.oracle;
    ck.oracle = oracle_ckpt->oracle;
    ck.oracle_meta = oracle_ckpt->oracle_meta;
  }
  Pipeline p = ck.make_pipeline();
  const int x = p.cfg.samples;

  Network net{shading_network_config(p.cfg.encoding, cfg.hidden_layers, cfg.width, p.cfg.opacity), {}};
  net.params = net::init_params<float>(net.config, cfg.seed + 1);
  auto adam = net::AdamState<float>::create(net.config, {cfg.lr});
  p.shading = net;

  const auto train_refs = split_pixels(ds, ds.manifest.train);
  const auto val = shading_batch(ds, p, validation_refs(ds, cfg.val_rays, cfg.seed));
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<size_t> pick(0, train_refs.size() - 1);
  std::vector<PixelRef> refs(size_t(cfg.batch));
  TrainMeta meta;
  meta.seed = cfg.seed;
  Network best = net;

  auto validate = [&](int64_t it) {
    const auto v = evaluate_shading_loss(p, val);
    meta.val_history.emplace_back(it, v.total);
    if (v.total < meta.val_loss) {
      meta.val_loss = v.total;
      meta.best_iteration = it;
      best = *p.shading;
    }
    detail::log_line(cfg, "shading it " + std::to_string(it) + " val " + std::to_string(v.total) +
                              " mse " + std::to_string(v.mse));
  };

  validate(0);
  for (int it = 1; it <= cfg.iterations; ++it) {
    for (auto& r : refs) r = train_refs[pick(rng)];
    const auto b = shading_batch(ds, p, refs);
    auto& sh = *p.shading;
    auto res = detail::batched(refs.size(), cfg.worker_count(), [&](size_t r0, size_t r1) {
      const Eigen::Index c0 = Eigen::Index(r0) * x, n = Eigen::Index(r1 - r0) * x;
      const net::Matrix<float> pos = b.inputs.position.middleCols(c0, n);
      const net::Matrix<float> dir = b.inputs.direction.middleCols(c0, n);
      net::ForwardCache<float> cache;
      const auto out = net::forward(sh.params, sh.config, pos, &dir, &cache);
      net::Matrix<float> g;
      auto l = shading_loss(out, std::span<const double>(b.inputs.deltas).subspan(size_t(c0), size_t(n)),
                            std::span<const float>(b.target_rgb).subspan(r0 * 3, (r1 - r0) * 3), x, p.cfg, &g);
      // shading_loss averages over its own chunk; rescale to the full batch.
      const double w = double(r1 - r0) / double(refs.size());
      g *= float(w);
      return detail::ChunkResult{l.total * w, net::backward(sh.params, sh.config, cache, g).params};
    });
    net::adam_step(sh.params, res.grad, adam);
    if (it % cfg.val_every == 0 || it == cfg.iterations) validate(it);
  }
  meta.iterations = cfg.iterations;
  ck.shading = std::move(best);
  ck.shading_meta = meta;
  return ck;
}

}  // namespace oraclemarch
