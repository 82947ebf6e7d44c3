// SPDX-License-Identifier: Apache-2.0
// Command-line driver: dataset generation, two-phase training, rendering,
// evaluation, ablation grids and the interactive server.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "oraclemarch/metrics.hpp"
#include "oraclemarch/serve.hpp"

using namespace oraclemarch;

namespace {

struct Resolution {
  int width = 64;
  int height = 64;
};

Resolution parse_resolution(const std::string& s) {
  Resolution r;
  char tail = 0;
  require(std::sscanf(s.c_str(), "%dx%d%c", &r.width, &r.height, &tail) == 2 && r.width > 0 && r.height > 0,
          ErrorCode::InvalidArgument, "resolution '" + s + "' is not WxH");
  return r;
}

std::vector<double> parse_numbers(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& part : split_list(s, ',')) {
    size_t used = 0;
    double v = 0;
    try {
      v = std::stod(part, &used);
    } catch (...) {
      used = 0;
    }
    require(used == part.size() && used > 0 && std::isfinite(v), ErrorCode::InvalidArgument,
            what + ": '" + part + "' is not a number");
    out.push_back(v);
  }
  return out;
}

/// "cx,cy,cz,sx,sy,sz[,max_pitch,max_yaw]" keeps the preset's forward direction.
ViewCell parse_view_cell(const std::string& s, const ViewCell& base) {
  const auto v = parse_numbers(s, "view cell");
  require(v.size() == 6 || v.size() == 8, ErrorCode::InvalidViewCell,
          "view cell needs cx,cy,cz,sx,sy,sz[,max_pitch,max_yaw]");
  return ViewCell(Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5]), base.forward(),
                  v.size() == 8 ? v[6] : base.max_pitch_deg(), v.size() == 8 ? v[7] : base.max_yaw_deg());
}

struct Globals {
  std::optional<int> threads;
  bool strict = false;
  bool paper_scale = false;
  bool quiet = false;
  uint64_t seed = 1;
  std::optional<int> iterations, batch, layers, width, val_every;
  std::optional<double> lr;

  int thread_count() const {
    if (strict) return 1;
    if (threads) return std::max(1, *threads);
    if (const char* env = std::getenv("ORACLEMARCH_THREADS")) {
      try {
        return std::max(1, std::stoi(env));
      } catch (...) {
        throw Error(ErrorCode::InvalidArgument, "ORACLEMARCH_THREADS must be an integer");
      }
    }
    return 1;
  }

  TrainConfig train_config() const {
    TrainConfig c = paper_scale ? TrainConfig::paper_scale() : TrainConfig::desk();
    c.seed = seed;
    c.strict = strict;
    c.threads = thread_count();
    if (iterations) c.iterations = *iterations;
    if (batch) c.batch = *batch;
    if (layers) c.hidden_layers = *layers;
    if (width) c.width = *width;
    if (val_every) c.val_every = *val_every;
    if (lr) c.lr = *lr;
    if (!quiet) c.log = [](const std::string& line) { std::cerr << line << '\n'; };
    return c;
  }
};

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path);
  require(bool(f), ErrorCode::IoError, "cannot open '" + path + "' for writing");
  f << j.dump(2) << '\n';
  require(bool(f), ErrorCode::IoError, "failed writing '" + path + "'");
}

/// Ground-truth sampling depth for local-gt checkpoints without an oracle.
std::vector<float> preset_depth(const Checkpoint& ck, const Pose& pose, int w, int h) {
  DatasetManifest m;
  m.width = w;
  m.height = h;
  m.cell = ck.cell;
  m.range = ck.range;
  Image rgb;
  DepthMap depth;
  render_ground_truth(scene_preset(ck.scene).scene, m, pose, rgb, depth);
  return sampling_depth(depth, ck.range);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oraclemarch: sampling-oracle neural ray marching"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--threads", g.threads, "worker threads (fallback: ORACLEMARCH_THREADS, else 1)");
  app.add_flag("--strict", g.strict, "single-threaded, bit-reproducible execution");
  app.add_flag("--paper-scale", g.paper_scale, "8x256 networks, C=I=128, lr 5e-4, batch 4096, 300k iterations");
  app.add_flag("-q,--quiet", g.quiet, "suppress training progress on stderr");
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--iterations", g.iterations, "training iterations per phase");
  app.add_option("--batch", g.batch, "rays per training iteration");
  app.add_option("--lr", g.lr, "Adam learning rate");
  app.add_option("--layers", g.layers, "hidden layers per network");
  app.add_option("--width", g.width, "hidden layer width");
  app.add_option("--val-every", g.val_every, "validation cadence in iterations");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render a ground-truth dataset from a built-in scene");
  std::string scene = "sphere-room", view_cell, res_str = "64x64", out;
  int images = 300;
  gen->add_option("--scene", scene, "sphere-room | corridor")->capture_default_str();
  gen->add_option("--view-cell", view_cell, "cx,cy,cz,sx,sy,sz[,max_pitch,max_yaw] (default: preset)");
  gen->add_option("--images", images, "number of poses")->capture_default_str();
  gen->add_option("--resolution", res_str, "WxH")->capture_default_str();
  gen->add_option("--out", out, "output directory")->required();

  // train-oracle
  auto* to = app.add_subcommand("train-oracle", "train the sampling oracle on dataset depth");
  std::string data;
  std::optional<int> k, z, inputs, bins;
  bool single_depth = false, no_unify = false;
  to->add_option("--data", data, "dataset directory")->required();
  to->add_option("--k", k, "radial filter size (odd)");
  to->add_option("--z", z, "depth filter size (odd)");
  to->add_option("--i", inputs, "input points along the ray");
  to->add_option("--bins", bins, "depth classes");
  to->add_flag("--single-depth", single_depth, "regress one depth instead of classifying");
  auto* nu = to->add_flag("--no-unify", no_unify, "single-depth oracle in per-camera frames");
  nu->needs(to->get_option("--single-depth"));
  to->add_option("--out", out, "checkpoint path")->required();

  // train-shading
  auto* ts = app.add_subcommand("train-shading", "train the shading network (oracle frozen)");
  std::string oracle_path, mode = "logwarp";
  int samples = 4;
  ts->add_option("--data", data, "dataset directory")->required();
  ts->add_option("--oracle", oracle_path, "oracle checkpoint (omit for oracle-free sampling)");
  ts->add_option("--samples", samples, "shading samples per ray")->capture_default_str();
  ts->add_option("--mode", mode, "uniform | log | logwarp | ndc | local-gt")->capture_default_str();
  ts->add_option("--out", out, "checkpoint path")->required();

  // render
  auto* rd = app.add_subcommand("render", "render one pose to PNG");
  std::string ckpt, pose_str;
  std::optional<std::string> render_res;
  rd->add_option("--ckpt", ckpt, "checkpoint")->required();
  rd->add_option("--pose", pose_str, "px,py,pz,yaw,pitch")->required();
  rd->add_option("--resolution", render_res, "WxH (default: training resolution)");
  rd->add_option("--out", out, "PNG path")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "PSNR, MFLOP/pixel and timing on a dataset split");
  std::string split = "test", report;
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--split", split, "train | val | test")->capture_default_str();
  ev->add_option("--report", report, "JSON report path");

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and evaluate a grid of configurations");
  std::string grid;
  ab->add_option("--data", data, "dataset directory")->required();
  ab->add_option("--grid", grid, "e.g. \"mode=uniform,logwarp;samples=2,4;oracle=none,k5z5\"")->required();
  ab->add_option("--split", split, "evaluation split")->capture_default_str();
  ab->add_option("--report", report, "JSON report path");

  // serve
  auto* sv = app.add_subcommand("serve", "interactive websocket renderer");
  std::string addr = "127.0.0.1:8080";
  std::optional<std::string> serve_res;
  sv->add_option("--ckpt", ckpt, "checkpoint")->required();
  sv->add_option("--addr", addr, "HOST:PORT")->capture_default_str();
  sv->add_option("--resolution", serve_res, "WxH (default: training resolution)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: InvalidArgument: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    std::cerr << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (gen->parsed()) {
      auto preset = scene_preset(scene);
      if (!view_cell.empty()) preset.cell = parse_view_cell(view_cell, preset.cell);
      const auto r = parse_resolution(res_str);
      GenerateOptions opt;
      opt.images = images;
      opt.width = r.width;
      opt.height = r.height;
      opt.seed = g.seed;
      opt.threads = g.thread_count();
      save_dataset(generate_dataset(preset, opt), out);
      std::cout << "wrote " << images << " images (" << r.width << "x" << r.height << ") to " << out << '\n';
    } else if (to->parsed()) {
      TrainConfig cfg = g.train_config();
      auto& o = cfg.pipeline.oracle;
      o.kind = single_depth ? OracleKind::SingleDepth : OracleKind::Classified;
      o.unify = !no_unify;
      if (k) o.k = *k;
      if (z) o.z = *z;
      if (inputs) o.inputs = *inputs;
      if (bins) o.classes = *bins;
      require(o.classes >= 1 && o.inputs >= 1, ErrorCode::InvalidCount, "--bins and --i must be >= 1");
      const auto ck = train_oracle(load_dataset(data), cfg);
      save_checkpoint(ck, out);
      std::cout << "oracle val loss " << ck.oracle_meta.val_loss << " (best iteration "
                << ck.oracle_meta.best_iteration << ") -> " << out << '\n';
    } else if (ts->parsed()) {
      TrainConfig cfg = g.train_config();
      cfg.pipeline.samples = samples;
      cfg.pipeline.mode = parse_sampling_mode(mode);
      std::optional<Checkpoint> oracle;
      if (!oracle_path.empty()) {
        oracle = load_checkpoint(oracle_path);
        cfg.pipeline.oracle = oracle->pipeline.oracle;
      } else {
        cfg.pipeline.oracle.kind = OracleKind::None;
      }
      const bool needs_depth = cfg.pipeline.mode == SamplingMode::LocalGt && !oracle;
      const auto ck = train_shading(load_dataset(data, needs_depth), oracle, cfg);
      save_checkpoint(ck, out);
      std::cout << "shading val loss " << ck.shading_meta.val_loss << " (best iteration "
                << ck.shading_meta.best_iteration << ") -> " << out << '\n';
    } else if (rd->parsed()) {
      const auto ck = load_checkpoint(ckpt);
      require(ck.shading.has_value(), ErrorCode::IncompatibleCheckpoint, "render needs a shading checkpoint");
      const auto v = parse_numbers(pose_str, "pose");
      require(v.size() == 5, ErrorCode::InvalidArgument, "pose needs px,py,pz,yaw,pitch");
      const Pose pose = make_pose(ck.cell, Vec3(v[0], v[1], v[2]), v[3], v[4], ck.fov_deg);
      validate_pose(ck.cell, pose);
      const auto r = render_res ? parse_resolution(*render_res) : Resolution{ck.width, ck.height};
      const Pipeline p = ck.make_pipeline();
      std::vector<float> gt;
      if (p.cfg.mode == SamplingMode::LocalGt && !p.uses_oracle()) gt = preset_depth(ck, pose, r.width, r.height);
      write_png(out, render_image(pose, p, r.width, r.height, g.thread_count(), gt).image);
      std::cout << "wrote " << out << '\n';
    } else if (ev->parsed()) {
      const auto ck = load_checkpoint(ckpt);
      const auto rep = evaluate(ck, load_dataset(data, false), split, g.thread_count());
      std::cout << format_report(rep);
      if (!report.empty()) write_json(report, rep.to_json());
    } else if (ab->parsed()) {
      const auto rows = ablation(load_dataset(data), parse_grid(grid), g.train_config(), split);
      std::cout << format_ablation(rows);
      if (!report.empty()) write_json(report, ablation_json(rows));
    } else if (sv->parsed()) {
      serve::ServeOptions opt;
      const auto colon = addr.rfind(':');
      require(colon != std::string::npos, ErrorCode::InvalidArgument, "--addr must be HOST:PORT");
      opt.host = addr.substr(0, colon);
      int port = -1;
      try {
        port = std::stoi(addr.substr(colon + 1));
      } catch (...) {
      }
      require(port >= 0 && port <= 65535, ErrorCode::InvalidArgument, "invalid port in '" + addr + "'");
      opt.port = uint16_t(port);
      auto ck = load_checkpoint(ckpt);
      const auto r = serve_res ? parse_resolution(*serve_res) : Resolution{ck.width, ck.height};
      opt.width = r.width;
      opt.height = r.height;
      opt.render_threads = g.thread_count();
      serve::Server server(std::move(ck), opt);
      std::cout << "serving on http://" << opt.host << ':' << server.port() << " (/info, /stream)" << std::endl;
      server.run_until_signal();
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: IoError: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
