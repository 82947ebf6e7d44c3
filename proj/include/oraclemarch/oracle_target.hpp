// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "oraclemarch/error.hpp"
#include "oraclemarch/io.hpp"
#include "oraclemarch/sampling.hpp"

namespace oraclemarch {

/// Per-pixel depth from the unified origin; `valid[i] == 0` marks background.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> depth;
  std::vector<uint8_t> valid;

  DepthMap() = default;
  DepthMap(int w, int h) : width(w), height(h), depth(size_t(w) * h, 0.f), valid(size_t(w) * h, 1) {}

  size_t index(int x, int y) const { return size_t(y) * width + x; }
};

/// Depth classes, uniform in the log-warped coordinate.
class DepthBins {
 public:
  DepthBins() = default;
  DepthBins(int count, const DepthRange& range) : count_(count), range_(range) {
    require(count >= 1, ErrorCode::InvalidCount, "bin count must be >= 1");
    edges_.resize(count + 1);
    for (int z = 0; z <= count; ++z)
      edges_[z] = range.d_min + range.extent() * z / count;
    edges_[count] = range.d_max;
  }

  int count() const { return count_; }
  const DepthRange& range() const { return range_; }
  const std::vector<double>& edges() const { return edges_; }

  /// World depths at the centers of `n` bins of the same warped spacing.
  std::vector<double> center_depths(int n) const { return log_depths(range_, n); }
  std::vector<double> center_depths() const { return center_depths(count_); }

  bool operator==(const DepthBins& o) const {
    return count_ == o.count_ && range_.d_min == o.range_.d_min && range_.d_max == o.range_.d_max;
  }

 private:
  int count_ = 0;
  DepthRange range_;
  std::vector<double> edges_;
};

/// W x H x C target volume, stored as [(y * W + x) * C + z].
struct ClassTarget {
  int width = 0;
  int height = 0;
  int classes = 0;
  std::vector<float> values;

  ClassTarget() = default;
  ClassTarget(int w, int h, int c) : width(w), height(h), classes(c), values(size_t(w) * h * c, 0.f) {}

  float& at(int x, int y, int z) { return values[(size_t(y) * width + x) * classes + z]; }
  float at(int x, int y, int z) const { return values[(size_t(y) * width + x) * classes + z]; }
  bool same_shape(const ClassTarget& o) const {
    return width == o.width && height == o.height && classes == o.classes;
  }
};

inline int depth_bin(double d_s, const DepthBins& bins) {
  const auto& range = bins.range();
  require(range.contains(d_s), ErrorCode::OutOfRange, "surface depth outside the depth range");
  if (d_s >= range.d_max) return bins.count() - 1;
  const double w = log_warp_depth(d_s, range);
  const auto& e = bins.edges();
  const auto it = std::upper_bound(e.begin(), e.end(), w);
  return std::clamp(int(it - e.begin()) - 1, 0, bins.count() - 1);
}

inline std::vector<float> discretize_depth(double d_s, const DepthBins& bins) {
  std::vector<float> one_hot(bins.count(), 0.f);
  one_hot[depth_bin(d_s, bins)] = 1.f;
  return one_hot;
}

inline void check_kernel(int k) {
  require(k >= 1 && k % 2 == 1, ErrorCode::InvalidKernel, "kernel size must be odd and >= 1");
}

/// Weight subtracted from a neighbour at offset (i, j) in a K x K window.
inline double neighborhood_penalty(int i, int j, int half) {
  return std::sqrt(double(i * i + j * j)) / (std::sqrt(2.0) * half);
}

/// Radial max filter in image space, clamped at zero. Implemented as a scatter
/// from non-zero entries, which is cheap for the sparse one-hot inputs it sees.
inline ClassTarget neighborhood_filter(const ClassTarget& in, int k) {
  check_kernel(k);
  if (k == 1) return in;
  const int half = k / 2;
  ClassTarget out(in.width, in.height, in.classes);
  std::vector<double> penalty((2 * half + 1) * (2 * half + 1));
  for (int j = -half; j <= half; ++j)
    for (int i = -half; i <= half; ++i)
      penalty[(j + half) * (2 * half + 1) + (i + half)] = neighborhood_penalty(i, j, half);

  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      for (int z = 0; z < in.classes; ++z) {
        const double v = in.at(x, y, z);
        if (v <= 0) continue;
        for (int j = -half; j <= half; ++j) {
          const int ny = y + j;
          if (ny < 0 || ny >= in.height) continue;
          for (int i = -half; i <= half; ++i) {
            const int nx = x + i;
            if (nx < 0 || nx >= in.width) continue;
            const double c = std::max(0.0, v - penalty[(j + half) * (2 * half + 1) + (i + half)]);
            float& dst = out.at(nx, ny, z);
            dst = std::max(dst, static_cast<float>(c));
          }
        }
      }
    }
  }
  return out;
}

/// Triangle filter along the class axis, zero padded, saturating at 1.
inline ClassTarget depth_smooth(const ClassTarget& in, int z_size) {
  check_kernel(z_size);
  if (z_size == 1) return in;
  const int half = z_size / 2;
  std::vector<double> weight(2 * half + 1);
  for (int i = -half; i <= half; ++i)
    weight[i + half] = double(half + 1 - std::abs(i)) / double(half + 1);

  ClassTarget out(in.width, in.height, in.classes);
  const int c = in.classes;
  for (size_t p = 0; p < size_t(in.width) * in.height; ++p) {
    const float* src = &in.values[p * c];
    float* dst = &out.values[p * c];
    for (int z = 0; z < c; ++z) {
      double sum = 0;
      for (int i = -half; i <= half; ++i) {
        const int zi = z + i;
        if (zi < 0 || zi >= c) continue;
        sum += double(src[zi]) * weight[i + half];
      }
      dst[z] = static_cast<float>(std::min(sum, 1.0));
    }
  }
  return out;
}

/// One-hot per pixel (background goes to the last bin), then both filters.
inline ClassTarget one_hot_targets(const DepthMap& depth, const DepthBins& bins) {
  ClassTarget t(depth.width, depth.height, bins.count());
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      const size_t idx = depth.index(x, y);
      const int z = depth.valid[idx] ? depth_bin(depth.depth[idx], bins) : bins.count() - 1;
      t.at(x, y, z) = 1.f;
    }
  }
  return t;
}

inline ClassTarget build_targets(const DepthMap& depth, const DepthBins& bins, int k, int z) {
  check_kernel(k);
  check_kernel(z);
  return depth_smooth(neighborhood_filter(one_hot_targets(depth, bins), k), z);
}

// Cache file: "OMTG", then W, H, C, K, Z as u32, then W*H*C float32 values.
inline void write_target_cache(const std::filesystem::path& path, const ClassTarget& t, int k,
                               int z) {
  io::ByteWriter w;
  w.bytes("OMTG");
  for (int v : {t.width, t.height, t.classes, k, z}) w.u32(static_cast<uint32_t>(v));
  w.floats(t.values);
  io::write_file(path, w.data());
}

struct CachedTarget {
  ClassTarget target;
  int k;
  int z;
};

inline CachedTarget read_target_cache(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  require(r.bytes(4) == "OMTG", ErrorCode::CorruptFile, "bad target cache magic");
  const int w = int(r.u32()), h = int(r.u32()), c = int(r.u32());
  const int k = int(r.u32()), z = int(r.u32());
  require(w > 0 && h > 0 && c > 0 && r.remaining() == size_t(w) * h * c * sizeof(float),
          ErrorCode::CorruptFile, "target cache size mismatch");
  CachedTarget out{ClassTarget(w, h, c), k, z};
  r.floats(out.target.values);
  return out;
}

}  // namespace oraclemarch
