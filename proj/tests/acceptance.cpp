// SPDX-License-Identifier: Apache-2.0
// Acceptance checks A1-A9. Usage: acceptance [A1 ... A9 | all]
// Prints one "A<n> PASS|FAIL: ..." line per criterion; exit status is the number of failures.
// Verdict lines are also appended to $ORACLEMARCH_ACCEPTANCE_LOG when set.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "oraclemarch/metrics.hpp"

using namespace oraclemarch;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& s) { std::cerr << "  " << s << std::endl; }

// ---------------------------------------------------------------------------
// A1: gradient of the full shading loss through compositing and the MLP.

Outcome a1_gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int layers = 1 + int(rng() % 4), width = 4 + int(rng() % 29), x = 1 + int(rng() % 6), rays = 3;
    PipelineConfig cfg;
    cfg.opacity = trial % 2 ? OpacityModel::Density : OpacityModel::Alpha;
    cfg.background = Vec3(u(rng), u(rng), u(rng));
    cfg.encoding.pos_freqs = 1 + int(rng() % 3);
    cfg.encoding.dir_freqs = 1 + int(rng() % 2);
    const auto mc = shading_network_config(cfg.encoding, layers, width, cfg.opacity);
    auto params = net::init_params<double>(mc, 100 + uint64_t(trial));
    for (auto& b : params.biases)
      for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = 0.2 * (u(rng) - 0.5);
    const int cols = rays * x;
    net::Matrix<double> in(mc.in_dim, cols), aux(mc.skip->aux_dim, cols);
    for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = 2 * u(rng) - 1;
    for (Eigen::Index i = 0; i < aux.size(); ++i) aux.data()[i] = 2 * u(rng) - 1;
    std::vector<double> deltas(static_cast<size_t>(cols));
    for (auto& d : deltas) d = 0.05 + u(rng);
    std::vector<float> target(static_cast<size_t>(rays) * 3);
    for (auto& t : target) t = float(u(rng));

    auto loss = [&](const net::MLPParams<double>& p) {
      return shading_loss(net::forward(p, mc, in, &aux), deltas, target, x, cfg).total;
    };
    net::ForwardCache<double> cache;
    const auto out = net::forward(params, mc, in, &aux, &cache);
    net::Matrix<double> d_out;
    shading_loss(out, deltas, target, x, cfg, &d_out);
    auto g = net::backward(params, mc, cache, d_out).params;

    std::vector<double*> pp, gp;
    std::vector<size_t> sizes;
    params.for_each_tensor([&](double* d, size_t n) { pp.push_back(d); sizes.push_back(n); });
    g.for_each_tensor([&](double* d, size_t) { gp.push_back(d); });
    double num = 0, den = 0;
    for (size_t t = 0; t < pp.size(); ++t)
      for (size_t i = 0; i < sizes[t]; ++i) {
        const double keep = pp[t][i], h = 1e-6 * std::max(1.0, std::abs(keep));
        pp[t][i] = keep + h;
        const double up = loss(params);
        pp[t][i] = keep - h;
        const double down = loss(params);
        pp[t][i] = keep;
        const double fd = (up - down) / (2 * h);
        num += (gp[t][i] - fd) * (gp[t][i] - fd);
        den += fd * fd;
      }
    const double rel = std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
    worst = std::max(worst, rel);
    note(fmt("config %2d: %d x %2d, X=%d, %s: relative error %.2e", trial, layers, width, x,
             cfg.opacity == OpacityModel::Alpha ? "alpha" : "density", rel));
  }
  const double s = seconds_since(t0);
  return {worst <= 1e-6 && s < 30, fmt("worst relative gradient error %.2e over 20 configs (%.1f s)", worst, s)};
}

// ---------------------------------------------------------------------------
// A2: target filters.

ClassTarget brute_neighborhood(const ClassTarget& in, int k) {
  if (k == 1) return in;
  const int h = k / 2;
  ClassTarget out(in.width, in.height, in.classes);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int z = 0; z < in.classes; ++z) {
        double best = 0;
        for (int j = -h; j <= h; ++j)
          for (int i = -h; i <= h; ++i) {
            if (x + i < 0 || x + i >= in.width || y + j < 0 || y + j >= in.height) continue;
            best = std::max(best, double(in.at(x + i, y + j, z)) - std::sqrt(double(i * i + j * j)) / (std::sqrt(2.0) * h));
          }
        out.at(x, y, z) = float(best);
      }
  return out;
}

ClassTarget brute_smooth(const ClassTarget& in, int zs) {
  const int h = zs / 2;
  ClassTarget out(in.width, in.height, in.classes);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int z = 0; z < in.classes; ++z) {
        double s = 0;
        for (int i = -h; i <= h; ++i)
          if (z + i >= 0 && z + i < in.classes) s += double(in.at(x, y, z + i)) * (double(h + 1 - std::abs(i)) / double(h + 1));
        out.at(x, y, z) = float(std::min(s, 1.0));
      }
  return out;
}

Outcome a2_filters() {
  const auto t0 = Clock::now();
  ClassTarget impulse(9, 9, 1);
  impulse.at(4, 4, 0) = 1.f;
  const auto f = neighborhood_filter(impulse, 5);
  const double got[4] = {f.at(4, 4, 0), f.at(5, 4, 0), f.at(6, 4, 0), f.at(7, 4, 0)};
  const double want[4] = {1.0, 0.646, 0.293, 0.0};
  bool golden = f.at(8, 4, 0) == 0.f;
  for (int i = 0; i < 4; ++i) golden = golden && std::abs(got[i] - want[i]) <= 5e-3;
  note(fmt("K=5 contributions at distance 0..3: %.4f %.4f %.4f %.4f", got[0], got[1], got[2], got[3]));

  std::mt19937_64 rng(77);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  int mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    ClassTarget t(16, 16, 8);
    for (auto& v : t.values) v = u(rng) < 0.7f ? 0.f : u(rng);
    const int k = 1 + 2 * int(trial % 5), z = 1 + 2 * int((trial / 5) % 4);
    if (neighborhood_filter(t, k).values != brute_neighborhood(t, k).values) ++mismatches;
    if (depth_smooth(t, z).values != brute_smooth(t, z).values) ++mismatches;
  }
  const double s = seconds_since(t0);
  return {golden && mismatches == 0 && s < 10,
          fmt("golden values %s; %d/100 brute-force mismatches (%.2f s)", golden ? "ok" : "off", mismatches, s)};
}

// ---------------------------------------------------------------------------
// A3: inverse-CDF sampling.

Outcome a3_inverse_cdf() {
  const auto t0 = Clock::now();
  const int c = 32;
  const DepthRange range(0.5, 20);
  std::vector<double> edges(c + 1);
  for (int i = 0; i <= c; ++i) edges[size_t(i)] = range.d_min + range.extent() * i / c;
  auto bin_of = [&](double t) {
    const double w = log_warp_depth(t, range);
    for (int b = 0; b < c; ++b)
      if (w < edges[size_t(b) + 1]) return b;
    return c - 1;
  };
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> pdf(c);
    for (auto& p : pdf) p = u(rng) < 0.5 ? 0.0 : u(rng);
    pdf[size_t(trial % c)] += 1e-3;
    double total = 0;
    for (double p : pdf) total += p;
    for (int x : {2, 4, 8, 16}) {
      std::vector<int> counts(c, 0);
      for (double t : sample_from_pdf(pdf, edges, x)) counts[size_t(bin_of(t))]++;
      for (int b = 0; b < c; ++b) worst = std::max(worst, std::abs(counts[size_t(b)] - x * pdf[size_t(b)] / total));
    }
  }
  const auto zero = sample_from_pdf(std::vector<double>(c, 0.0), edges, c);
  const auto flat = sample_from_pdf(std::vector<double>(c, 1.0), edges, c);
  bool fallback = zero == flat;
  for (int k = 0; k < c; ++k) fallback = fallback && bin_of(zero[size_t(k)]) == k;
  const double s = seconds_since(t0);
  return {worst <= 1.0 + 1e-9 && fallback && s < 5,
          fmt("max |count - X*mass| = %.3f; all-zero pdf %s (%.2f s)", worst,
              fallback ? "falls back to uniform" : "does NOT fall back", s)};
}

// ---------------------------------------------------------------------------
// A4: ray unification and log warp.

Outcome a4_unification() {
  const auto t0 = Clock::now();
  const ViewCell cell(Vec3(0.3, 1.1, -0.4), Vec3(0.8, 0.5, 1.2), Vec3(0, 0, -1), 30, 20);
  const Sphere sphere = circumscribed_sphere(cell);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.5, 0.5), n(-1, 1);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    Vec3 d;
    do d = Vec3(n(rng), n(rng), n(rng));
    while (d.norm() < 1e-3 || d.norm() > 1);
    d.normalize();
    const Vec3 a = cell.center() + cell.size().cwiseProduct(Vec3(u(rng), u(rng), u(rng)));
    // Slide along the line, staying inside the cell.
    Vec3 b = a;
    for (double s = std::uniform_real_distribution<double>(-2, 2)(rng); std::abs(s) > 1e-6; s *= 0.5)
      if (cell.contains(a + s * d)) {
        b = a + s * d;
        break;
      }
    worst = std::max(worst, (unify_ray({a, d}, sphere).origin - unify_ray({b, d}, sphere).origin).norm());
  }
  double round_trip = 0;
  for (const DepthRange r : {DepthRange(0.5, 7), DepthRange(0.5, 64), DepthRange(1e-3, 1e3)}) {
    std::uniform_real_distribution<double> dist(r.d_min, r.d_max);
    for (int i = 0; i < 1000; ++i) {
      const double d = dist(rng);
      round_trip = std::max(round_trip, std::abs(log_unwarp_depth(log_warp_depth(d, r), r) - d) / r.extent());
    }
  }
  const double s = seconds_since(t0);
  return {worst <= 1e-6 && round_trip <= 1e-9 && s < 5,
          fmt("max origin gap %.2e; max log round-trip error %.2e x range (%.2f s)", worst, round_trip, s)};
}

// ---------------------------------------------------------------------------
// A5: FLOP ratio against a NeRF-style 64 + 64 + 128 evaluation budget.

Outcome a5_flops() {
  const auto t0 = Clock::now();
  const auto paper = TrainConfig::paper_scale();
  const auto sh = shading_network_config(paper.pipeline.encoding, paper.hidden_layers, paper.width, paper.pipeline.opacity);
  OracleSpec spec = paper.pipeline.oracle;
  spec.kind = OracleKind::Classified;
  const auto oc = oracle_network_config(spec, paper.hidden_layers, paper.width);
  const uint64_t nerf = pipeline_flops_per_pixel(nullptr, sh, 64 + 64 + 128);
  const uint64_t ours = pipeline_flops_per_pixel(&oc, sh, 4);
  const double ratio = double(nerf) / double(ours);
  const double s = seconds_since(t0);
  return {ratio >= 41 && ratio <= 56 && s < 1,
          fmt("%.2f vs %.2f MFLOP/pixel, ratio %.2f", double(nerf) / 1e6, double(ours) / 1e6, ratio)};
}

// ---------------------------------------------------------------------------
// Training-based checks share one desk-scale setup.

constexpr int kPhaseIterations = 3000;

TrainConfig desk_config() {
  TrainConfig c = TrainConfig::desk();
  c.iterations = kPhaseIterations;
  c.strict = true;
  c.seed = 1;
  const auto t0 = Clock::now();
  c.log = [t0](const std::string& s) { note(fmt("[%6.0f s] ", seconds_since(t0)) + s); };
  return c;
}

Dataset desk_dataset(const std::string& scene) {
  GenerateOptions opt;  // 300 images, 64x64, seed 1
  return generate_dataset(scene_preset(scene), opt);
}

struct Run {
  std::string oracle = "none";
  SamplingMode mode = SamplingMode::LogWarp;
  int samples = 4;
  std::optional<int> iterations, batch;
};

/// Trains (oracle, then shading) and returns mean test PSNR. Oracles are cached per variant.
class Bench {
 public:
  explicit Bench(const std::string& scene) : ds_(desk_dataset(scene)) {}

  double psnr(const Run& r) {
    const auto t0 = Clock::now();
    TrainConfig cfg = desk_config();
    const auto variant = parse_oracle_variant(r.oracle, cfg.pipeline.oracle);
    cfg.pipeline.oracle = variant.spec;
    std::optional<Checkpoint> oracle;
    if (variant.spec.kind != OracleKind::None) {
      if (!oracles_.count(r.oracle)) oracles_.emplace(r.oracle, train_oracle(ds_, cfg));
      oracle = oracles_.at(r.oracle);
    }
    cfg.pipeline.mode = r.mode;
    cfg.pipeline.samples = r.samples;
    if (r.iterations) cfg.iterations = *r.iterations;
    if (r.batch) cfg.batch = *r.batch;
    const auto ck = train_shading(ds_, oracle, cfg);
    const double v = evaluate(ck, ds_).mean_psnr;
    note(fmt("%-10s oracle=%-10s X=%-3d iterations=%d batch=%d: %.3f dB (%.0f s)",
             std::string(to_string(r.mode)).c_str(), r.oracle.c_str(), r.samples, cfg.iterations, cfg.batch, v,
             seconds_since(t0)));
    return v;
  }

 private:
  Dataset ds_;
  std::map<std::string, Checkpoint> oracles_;
};

Outcome a6_quality() {
  const auto t0 = Clock::now();
  Bench b("sphere-room");
  const double oracle4 = b.psnr({"k5z5", SamplingMode::LogWarp, 4});
  const double uniform4 = b.psnr({"none", SamplingMode::Uniform, 4});
  // Equal, reduced iteration budget for the expensive 64-sample baseline.
  const double local2 = b.psnr({"none", SamplingMode::LocalGt, 2, 2000, 256});
  const double uniform64 = b.psnr({"none", SamplingMode::Uniform, 64, 2000, 256});
  const double s = seconds_since(t0);
  const bool a = oracle4 - uniform4 >= 1.0, bb = local2 >= uniform64 - 1.5;
  return {a && bb && s < 20 * 60,
          fmt("(a) k5z5 logwarp X=4 %.2f vs uniform-4 %.2f (%+.2f dB, need >= +1) %s; "
              "(b) local-gt N=2 %.2f vs uniform N=64 %.2f (%+.2f dB, need >= -1.5) %s (%.0f s)",
              oracle4, uniform4, oracle4 - uniform4, a ? "ok" : "fail", local2, uniform64, local2 - uniform64,
              bb ? "ok" : "fail", s)};
}

Outcome a7_sampling_order() {
  const auto t0 = Clock::now();
  Bench b("corridor");
  const double lw = b.psnr({"none", SamplingMode::LogWarp, 4});
  const double lg = b.psnr({"none", SamplingMode::Log, 4});
  const double un = b.psnr({"none", SamplingMode::Uniform, 4});
  const double slack = 0.2, s = seconds_since(t0);
  const bool ok = lw >= lg - slack && lg >= un - slack;
  return {ok && s < 30 * 60,
          fmt("log+warp %.2f, log %.2f, uniform %.2f (need log+warp >= log >= uniform, 0.2 dB slack) (%.0f s)", lw,
              lg, un, s)};
}

Outcome a8_oracle_order() {
  const auto t0 = Clock::now();
  Bench b("sphere-room");
  const double k5 = b.psnr({"k5z1", SamplingMode::LogWarp, 2});
  const double k1 = b.psnr({"k1z1", SamplingMode::LogWarp, 2});
  const double sdu = b.psnr({"sd-unified", SamplingMode::LogWarp, 2});
  const double sd = b.psnr({"sd", SamplingMode::LogWarp, 2});
  const double s = seconds_since(t0);
  const bool ok = k5 > k1 && k1 > sdu && sdu >= sd;
  return {ok && s < 40 * 60,
          fmt("K=5 %.2f %s K=1 %.2f %s SD-unified %.2f %s SD %.2f (need K5 > K1 > SD-unified >= SD) (%.0f s)", k5,
              k5 > k1 ? ">" : "<=", k1, k1 > sdu ? ">" : "<=", sdu, sdu >= sd ? ">=" : "<", sd, s)};
}

// ---------------------------------------------------------------------------
// A9: strict-mode reruns are bit-identical, through the on-disk formats.

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Outcome a9_determinism() {
  const auto t0 = Clock::now();
  const auto root = std::filesystem::temp_directory_path() / ("oraclemarch-a9-" + std::to_string(::getpid()));
  std::filesystem::create_directories(root);
  auto pipeline_run = [&](const std::string& tag) {
    const auto dir = root / tag;
    GenerateOptions opt;
    opt.images = 40;
    opt.width = opt.height = 32;
    opt.seed = 9;
    save_dataset(generate_dataset(scene_preset("sphere-room"), opt), dir / "data");
    const Dataset ds = load_dataset(dir / "data");
    TrainConfig cfg = TrainConfig::desk();
    cfg.strict = true;
    cfg.seed = 9;
    cfg.iterations = 150;
    cfg.batch = 256;
    cfg.val_every = 50;
    cfg.pipeline.oracle.kind = OracleKind::Classified;
    save_checkpoint(train_oracle(ds, cfg), dir / "oracle.ck");
    save_checkpoint(train_shading(ds, load_checkpoint(dir / "oracle.ck"), cfg), dir / "shading.ck");
    return dir;
  };
  const auto a = pipeline_run("a"), b = pipeline_run("b");
  int files = 0, differing = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    if (file_bytes(e.path()) != file_bytes(b / std::filesystem::relative(e.path(), a))) ++differing;
  }
  std::filesystem::remove_all(root);
  return {differing == 0 && files > 0,
          fmt("%d/%d dataset and checkpoint files differ between strict reruns (%.1f s)", differing, files,
              seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"A1", a1_gradients},      {"A2", a2_filters},        {"A3", a3_inverse_cdf},
      {"A4", a4_unification},    {"A5", a5_flops},          {"A6", a6_quality},
      {"A7", a7_sampling_order}, {"A8", a8_oracle_order},   {"A9", a9_determinism}};
  std::vector<std::string> wanted(argv + 1, argv + argc);
  if (wanted.empty() || (wanted.size() == 1 && wanted[0] == "all"))
    for (const auto& c : checks) wanted.push_back(c.first);
  const char* log_path = std::getenv("ORACLEMARCH_ACCEPTANCE_LOG");
  int failures = 0;
  for (const auto& name : wanted) {
    if (name == "all") continue;
    auto it = std::find_if(checks.begin(), checks.end(), [&](const auto& c) { return c.first == name; });
    if (it == checks.end()) {
      std::cerr << "unknown criterion '" << name << "'\n";
      return 64;
    }
    Outcome o;
    try {
      o = it->second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const std::string line = name + (o.pass ? " PASS: " : " FAIL: ") + o.detail;
    std::cout << line << std::endl;
    if (log_path) std::ofstream(log_path, std::ios::app) << line << '\n';
    failures += o.pass ? 0 : 1;
  }
  return failures;
}
