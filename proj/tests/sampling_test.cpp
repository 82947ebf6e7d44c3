// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oraclemarch/sampling.hpp"

using namespace oraclemarch;

namespace {

// Per-bin sample counts by scanning the CDF for every u_k independently.
std::vector<int> brute_force_bin_counts(const std::vector<double>& pdf, int x) {
  double total = 0;
  for (double p : pdf) total += p;
  std::vector<int> counts(pdf.size(), 0);
  for (int k = 0; k < x; ++k) {
    const double u = (k + 0.5) / x;
    double acc = 0;
    for (size_t b = 0; b < pdf.size(); ++b) {
      const double next = acc + pdf[b] / total;
      if (u < next || b + 1 == pdf.size()) {
        counts[b]++;
        break;
      }
      acc = next;
    }
  }
  return counts;
}

std::vector<double> linear_edges(int c, const DepthRange& r) {
  std::vector<double> e(c + 1);
  for (int i = 0; i <= c; ++i) e[i] = r.d_min + r.extent() * i / c;
  return e;
}

int bin_of(double t, const std::vector<double>& edges, const DepthRange& r) {
  const double w = log_warp_depth(t, r);
  for (size_t b = 0; b + 1 < edges.size(); ++b)
    if (w >= edges[b] && w < edges[b + 1]) return int(b);
  return int(edges.size()) - 2;
}

}  // namespace

TEST(DepthRange, Validation) {
  EXPECT_THROW(DepthRange(2, 1), Error);
  EXPECT_THROW(DepthRange(-1, 1), Error);
  EXPECT_NO_THROW(DepthRange(0, 1));
}

TEST(UniformDepths, Midpoints) {
  EXPECT_EQ(uniform_depths({0, 1}, 2), (std::vector<double>{0.25, 0.75}));
  EXPECT_EQ(uniform_depths({0, 1}, 1), (std::vector<double>{0.5}));
  EXPECT_EQ(uniform_depths({2, 10}, 4), (std::vector<double>{3, 5, 7, 9}));
  EXPECT_THROW(uniform_depths({0, 1}, 0), Error);
}

TEST(LogWarp, EndpointsAndValue) {
  const DepthRange r(0.5, 40);
  EXPECT_EQ(log_warp_depth(r.d_min, r), r.d_min);
  EXPECT_EQ(log_warp_depth(r.d_max, r), r.d_max);
  EXPECT_EQ(log_unwarp_depth(r.d_min, r), r.d_min);
  EXPECT_EQ(log_unwarp_depth(r.d_max, r), r.d_max);
  EXPECT_NEAR(log_warp_depth(10, DepthRange(0, 100)), 51.95737064824407, 1e-9);
  EXPECT_THROW(log_warp_depth(41, r), Error);
  EXPECT_THROW(log_unwarp_depth(0.1, r), Error);
}

TEST(LogWarp, RoundTripAndMonotone) {
  std::mt19937_64 rng(1);
  for (const DepthRange r : {DepthRange(0, 1), DepthRange(0.3, 64), DepthRange(1, 1000)}) {
    std::uniform_real_distribution<double> u(r.d_min, r.d_max);
    double prev_d = -1, prev_w = -1;
    std::vector<double> ds(1000);
    for (auto& d : ds) d = u(rng);
    std::sort(ds.begin(), ds.end());
    for (double d : ds) {
      const double w = log_warp_depth(d, r);
      EXPECT_LE(std::abs(log_unwarp_depth(w, r) - d), 1e-9 * r.extent());
      if (d > prev_d) EXPECT_GE(w, prev_w);
      prev_d = d;
      prev_w = w;
    }
  }
}

TEST(LogDepths, IncreasingGaps) {
  const auto t = log_depths({0, 100}, 4);
  ASSERT_EQ(t.size(), 4u);
  for (size_t i = 0; i + 2 < t.size(); ++i) EXPECT_LT(t[i + 1] - t[i], t[i + 2] - t[i + 1]);

  const auto one = log_depths({0, 100}, 1);
  EXPECT_DOUBLE_EQ(one[0], log_unwarp_depth(50, {0, 100}));
}

TEST(LogDepths, TinyRangeIsStable) {
  const DepthRange r(0, 1e-6);
  const auto t = log_depths(r, 8);
  for (size_t i = 0; i < t.size(); ++i) {
    // Long double oracle of the same closed form.
    const long double w = (i + 0.5L) / 8 * 1e-6L;
    const long double ref = std::expm1(w / 1e-6L * std::log1p(1e-6L));
    EXPECT_TRUE(std::isfinite(t[i]));
    EXPECT_NEAR(t[i], double(ref), 1e-18);
    if (i) EXPECT_GT(t[i], t[i - 1]);
  }
}

TEST(WarpPoint, Magnitudes) {
  const double dmax = 16;
  EXPECT_NEAR(warp_point(Vec3(16, 0, 0), dmax).norm(), 1.0, 1e-12);
  EXPECT_NEAR(warp_point(Vec3(0, 4, 0), dmax).norm(), 0.5, 1e-12);
  EXPECT_EQ(warp_point(Vec3(0, 0, 0), dmax), Vec3::Zero());
  const Vec3 p(1, -2, 3);
  EXPECT_NEAR(warp_point(p, dmax).norm(), std::sqrt(p.norm() / dmax), 1e-12);
  EXPECT_NEAR(warp_point(p, dmax).normalized().dot(p.normalized()), 1.0, 1e-12);
}

TEST(Ndc, ForwardDepthMapping) {
  EXPECT_DOUBLE_EQ(ndc_to_forward_depth(0.0), 1.0);
  EXPECT_DOUBLE_EQ(ndc_to_forward_depth(0.5), 2.0);
  EXPECT_DOUBLE_EQ(forward_depth_to_ndc(4.0), 0.75);
}

TEST(Ndc, LinearInDisparity) {
  const ViewCell cell(Vec3::Zero(), Vec3(0.5, 0.5, 0.5), Vec3(0, 0, -1), 30, 20);
  const auto frame = NdcFrame::from_cell(cell, 60);
  const Vec3 o(0, 0, 0.2), d = Vec3(0.1, 0, -1).normalized();
  const DepthRange r(0.1, 50);
  const auto t = ndc_depths(o, d, r, 6, frame);
  std::vector<double> u;
  for (double ti : t) {
    ASSERT_TRUE(r.contains(ti));
    u.push_back(forward_depth_to_ndc(frame.to_camera(o + ti * d).z()));
  }
  for (size_t i = 2; i < u.size(); ++i) EXPECT_NEAR(u[i] - u[i - 1], u[1] - u[0], 1e-9);
}

TEST(Ndc, BehindAverageCamera) {
  const ViewCell cell(Vec3::Zero(), Vec3(0.5, 0.5, 0.5), Vec3(0, 0, -1), 30, 20);
  const auto frame = NdcFrame::from_cell(cell, 60);
  try {
    ndc_depths(Vec3::Zero(), Vec3(0, 0, 1), {0.1, 10}, 4, frame);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BehindAverageCamera);
  }
  EXPECT_THROW(frame.project(Vec3(0, 0, 1)), Error);
}

TEST(LocalDepths, UniformStep) {
  const DepthRange r(0, 128);
  EXPECT_EQ(local_depths(64, 2, r, LocalStep::Uniform), (std::vector<double>{63.5, 64.5}));
  const auto clipped = local_depths(0, 4, r, LocalStep::Uniform);
  for (double t : clipped) EXPECT_GE(t, 0.0);
  for (size_t i = 1; i < clipped.size(); ++i) EXPECT_GT(clipped[i], clipped[i - 1]);
  EXPECT_THROW(local_depths(200, 2, r, LocalStep::Uniform), Error);
}

TEST(LocalDepths, LogStepConstantInWarpedSpace) {
  const DepthRange r(0.5, 64);
  const double step = r.extent() / 128;
  std::vector<double> gaps;
  for (double ds : {2.0, 8.0, 30.0}) {
    const auto t = local_depths(ds, 4, r, LocalStep::Log);
    for (size_t i = 1; i < t.size(); ++i)
      EXPECT_NEAR(log_warp_depth(t[i], r) - log_warp_depth(t[i - 1], r), step, 1e-9);
    gaps.push_back(t[1] - t[0]);
  }
  EXPECT_LT(gaps[0], gaps[1]);
  EXPECT_LT(gaps[1], gaps[2]);
}

TEST(SampleFromPdf, SingleBinMass) {
  const DepthRange r(0, 4);
  const auto edges = linear_edges(4, r);
  const auto t = sample_from_pdf(std::vector<double>{0, 1, 0, 0}, edges, 3);
  ASSERT_EQ(t.size(), 3u);
  const double expected[] = {1 + 1.0 / 6, 1.5, 1 + 5.0 / 6};
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(log_warp_depth(t[k], r), expected[k], 1e-12);
}

TEST(SampleFromPdf, UniformPdfOnePerBin) {
  const DepthRange r(0.5, 30);
  const int c = 8;
  const auto edges = linear_edges(c, r);
  const auto t = sample_from_pdf(std::vector<double>(c, 0.3), edges, c);
  for (int k = 0; k < c; ++k) EXPECT_EQ(bin_of(t[k], edges, r), k);
}

TEST(SampleFromPdf, MatchesBruteForceCounts) {
  const DepthRange r(0, 4);
  const auto edges = linear_edges(4, r);
  const std::vector<double> pdf{1, 0, 0, 3};
  const auto t = sample_from_pdf(pdf, edges, 4);
  std::vector<int> counts(4, 0);
  for (double v : t) counts[bin_of(v, edges, r)]++;
  EXPECT_EQ(counts, brute_force_bin_counts(pdf, 4));
  EXPECT_EQ(counts, (std::vector<int>{1, 0, 0, 3}));
}

TEST(SampleFromPdf, MassProportionalityAndOrdering) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  const DepthRange r(0.2, 50);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = 3 + trial % 30;
    std::vector<double> pdf(c);
    for (auto& p : pdf) p = u(rng) < 0.3 ? 0.0 : u(rng);
    pdf[trial % c] += 0.1;
    const auto edges = linear_edges(c, r);
    const int x = 1 + trial % 17;
    const auto t = sample_from_pdf(pdf, edges, x);
    double total = 0;
    for (double p : pdf) total += p;
    std::vector<int> counts(c, 0);
    for (size_t k = 0; k < t.size(); ++k) {
      if (k) ASSERT_GT(t[k], t[k - 1]);
      counts[bin_of(t[k], edges, r)]++;
    }
    for (int b = 0; b < c; ++b) EXPECT_LE(std::abs(counts[b] - x * pdf[b] / total), 1.0 + 1e-9);
  }
}

TEST(SampleFromPdf, DegenerateFallsBackToUniform) {
  const DepthRange r(0, 8);
  const auto edges = linear_edges(8, r);
  const auto t = sample_from_pdf(std::vector<double>(8, 0.0), edges, 8);
  for (int k = 0; k < 8; ++k) EXPECT_EQ(bin_of(t[k], edges, r), k);
}

TEST(SampleFromPdf, JitterStaysInStrata) {
  const DepthRange r(0, 8);
  const auto edges = linear_edges(8, r);
  std::mt19937_64 rng(4);
  PdfSampleOptions opts;
  opts.jitter = &rng;
  const auto t = sample_from_pdf(std::vector<double>(8, 1.0), edges, 8, opts);
  for (int k = 0; k < 8; ++k) EXPECT_EQ(bin_of(t[k], edges, r), k);
}

TEST(EncodeFeatures, KnownValues) {
  EncodingConfig cfg{2, 0, true};
  auto f = encode_features(Vec3::Zero(), cfg);
  ASSERT_EQ(int(f.size()), cfg.pos_dim());
  for (int i = 0; i < 3; ++i) EXPECT_EQ(f[i], 0.0);
  for (int k = 0; k < 2; ++k) {
    for (int c = 0; c < 3; ++c) EXPECT_EQ(f[3 + 6 * k + c], 0.0);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(f[3 + 6 * k + 3 + c], 1.0);
  }

  f = encode_features(Vec3(1, 0, 0), cfg);
  EXPECT_NEAR(f[3], 0.0, 1e-15);   // sin(pi)
  EXPECT_NEAR(f[6], -1.0, 1e-15);  // cos(pi)
  EXPECT_NEAR(f[9], 0.0, 1e-15);   // sin(2 pi)
  EXPECT_NEAR(f[12], 1.0, 1e-15);  // cos(2 pi)

  const Vec3 p(0.1, -0.7, 0.3);
  f = encode_features(p, EncodingConfig{0, 0, true});
  ASSERT_EQ(f.size(), 3u);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(f[c], p[c]);
  EXPECT_EQ(EncodingConfig{}.pos_dim(), 63);
  EXPECT_EQ(EncodingConfig{}.dir_dim(), 27);
}

TEST(EncodeFeatures, WarpedFeaturesDependOnlyOnPoint) {
  // Two rays meeting at q produce the same encoder input, hence identical features.
  const Vec3 c(0.1, 1.0, -0.2), q(1.3, 0.4, -5.0);
  const Vec3 o1(0, 1, 0), o2(0.2, 0.8, 0.1);
  const double t1 = (q - o1).norm(), t2 = (q - o2).norm();
  const Vec3 x1 = o1 + t1 * (q - o1).normalized(), x2 = o2 + t2 * (q - o2).normalized();
  const auto f1 = encode_features(warp_point(Vec3(x1 - c), 20.0), EncodingConfig{});
  const auto f2 = encode_features(warp_point(Vec3(x2 - c), 20.0), EncodingConfig{});
  for (size_t i = 0; i < f1.size(); ++i) EXPECT_NEAR(f1[i], f2[i], 1e-9);
}

TEST(SampleSet, PositionsAndDeltas) {
  const Vec3 o(1, 0, 0), d(0, 1, 0);
  const auto s = make_sample_set(o, d, {1.0, 1.5, 3.0});
  EXPECT_EQ(s.positions[2], Vec3(1, 3, 0));
  EXPECT_EQ(s.deltas, (std::vector<double>{0.5, 1.5, 1.5}));
}
