// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "oraclemarch/metrics.hpp"

using namespace oraclemarch;

namespace {

Image random_image(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Image img(w, h);
  for (auto& v : img.rgb) v = u(rng);
  return img;
}

net::MLPConfig paper_shading() {
  return shading_network_config(EncodingConfig{}, 8, 256, OpacityModel::Alpha);
}

const Dataset& tiny() {
  static const Dataset ds = [] {
    GenerateOptions opt;
    opt.images = 10;
    opt.width = opt.height = 8;
    return generate_dataset(sphere_room(), opt);
  }();
  return ds;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.iterations = 20;
  c.batch = 64;
  c.hidden_layers = 1;
  c.width = 16;
  c.val_every = 10;
  c.val_rays = 64;
  c.strict = true;
  c.pipeline.oracle.classes = 8;
  c.pipeline.oracle.inputs = 4;
  return c;
}

}  // namespace

TEST(Psnr, Basics) {
  std::mt19937_64 rng(1);
  const Image a = random_image(7, 5, rng);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
  Image b(4, 4), c(4, 4);
  for (auto& v : c.rgb) v = 0.1f;
  EXPECT_NEAR(psnr(b, c), 20.0, 1e-5);  // 0.1f is not exactly 0.1
  EXPECT_THROW(psnr(a, b), Error);
}

TEST(Psnr, MatchesReferenceAndIsPermutationInvariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Image a = random_image(9, 6, rng), b = random_image(9, 6, rng);
    long double sum = 0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
      const long double d = (long double)a.rgb[i] - (long double)b.rgb[i];
      sum += d * d;
    }
    const double ref = double(-10.0L * std::log10(sum / a.rgb.size()));
    EXPECT_NEAR(psnr(a, b), ref, 1e-9);

    // Swap two pixels in both images.
    Image pa = a, pb = b;
    for (int c = 0; c < 3; ++c) {
      std::swap(pa.pixel(0, 0)[c], pa.pixel(8, 5)[c]);
      std::swap(pb.pixel(0, 0)[c], pb.pixel(8, 5)[c]);
    }
    EXPECT_NEAR(psnr(pa, pb), psnr(a, b), 1e-12);
  }
}

TEST(Flops, LinearInSamples) {
  const auto sh = paper_shading();
  OracleSpec spec;
  spec.kind = OracleKind::Classified;
  spec.classes = spec.inputs = 128;
  const auto oc = oracle_network_config(spec, 8, 256);
  EXPECT_EQ(pipeline_flops_per_pixel(&oc, sh, 0), net::flop_count(oc));
  const uint64_t s4 = pipeline_flops_per_pixel(&oc, sh, 4) - net::flop_count(oc);
  const uint64_t s8 = pipeline_flops_per_pixel(&oc, sh, 8) - net::flop_count(oc);
  EXPECT_EQ(s8, 2 * s4);
  EXPECT_EQ(net::flop_count(sh), 952024u);
  EXPECT_EQ(net::flop_count(oc), 1182720u);
  const double ratio = double(pipeline_flops_per_pixel(nullptr, sh, 256)) /
                       double(pipeline_flops_per_pixel(&oc, sh, 4));
  EXPECT_GE(ratio, 41.0);
  EXPECT_LE(ratio, 56.0);
}

TEST(Grid, Parses) {
  const auto g = parse_grid("mode=uniform,log,logwarp;samples=2,4;oracle=none,k5z5,sd-unified");
  EXPECT_EQ(g.modes.size(), 3u);
  EXPECT_EQ(g.samples, (std::vector<int>{2, 4}));
  EXPECT_EQ(g.oracles.size(), 3u);
  const auto v = parse_oracle_variant("k1z3", {});
  EXPECT_EQ(v.spec.kind, OracleKind::Classified);
  EXPECT_EQ(v.spec.k, 1);
  EXPECT_EQ(v.spec.z, 3);
  EXPECT_FALSE(parse_oracle_variant("sd", {}).spec.unify);
  EXPECT_THROW(parse_grid("mode=bogus"), Error);
  EXPECT_THROW(parse_grid("oracle=k2z5"), Error);
  EXPECT_THROW(parse_grid("colour=red"), Error);
  EXPECT_THROW(parse_grid("samples=0"), Error);
}

TEST(Evaluate, ReportIsConsistent) {
  auto cfg = tiny_config();
  const auto ck = train_shading(tiny(), std::nullopt, cfg);
  const auto rep = evaluate(ck, tiny());
  ASSERT_EQ(rep.per_image.size(), tiny().manifest.test.size());
  double sum = 0;
  for (const auto& s : rep.per_image) sum += s.psnr;
  EXPECT_NEAR(rep.mean_psnr, sum / rep.per_image.size(), 1e-12);
  EXPECT_DOUBLE_EQ(rep.mflop_per_pixel, double(4 * net::flop_count(ck.shading->config)) / 1e6);
  const auto j = rep.to_json();
  for (const char* key : {"config", "per_image", "mean_psnr", "mflop_per_pixel", "wall_ms_per_frame"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_FALSE(format_report(rep).empty());

  Dataset empty = tiny();
  empty.manifest.test.clear();
  try {
    evaluate(ck, empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySplit);
  }
}

TEST(Ablation, SingleCellMatchesEvaluate) {
  auto cfg = tiny_config();
  AblationGrid g;
  g.modes = {SamplingMode::Log};
  g.samples = {2};
  g.oracles = {"k1z1"};
  const auto rows = ablation(tiny(), g, cfg);
  ASSERT_EQ(rows.size(), 1u);

  auto oc = cfg;
  oc.pipeline.oracle = parse_oracle_variant("k1z1", cfg.pipeline.oracle).spec;
  const auto oracle = train_oracle(tiny(), oc);
  oc.pipeline.mode = SamplingMode::Log;
  oc.pipeline.samples = 2;
  const auto direct = evaluate(train_shading(tiny(), oracle, oc), tiny());
  EXPECT_EQ(rows[0].report.mean_psnr, direct.mean_psnr);
  EXPECT_EQ(ablation_json(rows)["rows"].size(), 1u);
}
