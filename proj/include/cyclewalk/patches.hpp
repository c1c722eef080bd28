#pragma once

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "cyclewalk/common.hpp"

namespace cyclewalk {

// One image as channel planes; grayscale is channels.size() == 1.
template <class Scalar>
struct Frame {
  std::vector<Matrix<Scalar>> channels;

  int rows() const { return channels.empty() ? 0 : static_cast<int>(channels[0].rows()); }
  int cols() const { return channels.empty() ? 0 : static_cast<int>(channels[0].cols()); }
  int channel_count() const { return static_cast<int>(channels.size()); }
};

template <class Scalar>
struct FrameSequence {
  std::vector<Frame<Scalar>> frames;
  double frame_rate_tag = 1.0;  // frames per second of the generating process

  int length() const { return static_cast<int>(frames.size()); }
};

struct PatchGridConfig {
  int patch_size = 16;
  int stride = 8;
  double jitter_scale_lo = 0.7, jitter_scale_hi = 0.9;  // crop area fraction
  double jitter_aspect_lo = 0.7, jitter_aspect_hi = 1.3;

  void validate(int frame_rows, int frame_cols) const {
    if (patch_size < 1 || stride < 1) throw ConfigError("patch_size and stride must be >= 1");
    if (patch_size > frame_rows || patch_size > frame_cols) {
      throw ConfigError("patch size " + std::to_string(patch_size) + " exceeds frame " +
                        std::to_string(frame_rows) + "x" + std::to_string(frame_cols));
    }
    if (!(jitter_scale_lo > 0 && jitter_scale_lo <= jitter_scale_hi && jitter_scale_hi <= 1.0)) {
      throw ConfigError("jitter scale range must satisfy 0 < lo <= hi <= 1");
    }
    if (!(jitter_aspect_lo > 0 && jitter_aspect_lo <= jitter_aspect_hi)) {
      throw ConfigError("jitter aspect range must satisfy 0 < lo <= hi");
    }
  }
};

// Grid positions shared by every frame of a sequence: node i sits at
// centers[i] (integer pixel coordinates), raster order.
struct GridGeometry {
  std::vector<std::array<int, 2>> centers;  // (row, col) in pixels
  int grid_rows = 0, grid_cols = 0;
  int patch_size = 0, stride = 0;

  int node_count() const { return grid_rows * grid_cols; }
  int node_row(int i) const { return i / grid_cols; }
  int node_col(int i) const { return i % grid_cols; }
};

template <class Scalar>
struct NodeSet {
  std::vector<Frame<Scalar>> patches;  // N patches, each patch_size x patch_size x C
  GridGeometry geom;

  int node_count() const { return static_cast<int>(patches.size()); }
};

inline GridGeometry grid_geometry(int frame_rows, int frame_cols, const PatchGridConfig& cfg) {
  cfg.validate(frame_rows, frame_cols);
  GridGeometry g;
  g.patch_size = cfg.patch_size;
  g.stride = cfg.stride;
  g.grid_rows = (frame_rows - cfg.patch_size) / cfg.stride + 1;
  g.grid_cols = (frame_cols - cfg.patch_size) / cfg.stride + 1;
  g.centers.reserve(static_cast<std::size_t>(g.grid_rows * g.grid_cols));
  for (int r = 0; r < g.grid_rows; ++r) {
    for (int c = 0; c < g.grid_cols; ++c) {
      g.centers.push_back({r * cfg.stride + cfg.patch_size / 2, c * cfg.stride + cfg.patch_size / 2});
    }
  }
  return g;
}

// Overlapping patch grid in raster order; patches are copies, never views.
template <class Scalar>
NodeSet<Scalar> extract_patches(const Frame<Scalar>& frame, const PatchGridConfig& cfg) {
  NodeSet<Scalar> nodes;
  nodes.geom = grid_geometry(frame.rows(), frame.cols(), cfg);
  nodes.patches.reserve(static_cast<std::size_t>(nodes.geom.node_count()));
  for (int r = 0; r < nodes.geom.grid_rows; ++r) {
    for (int c = 0; c < nodes.geom.grid_cols; ++c) {
      Frame<Scalar> patch;
      patch.channels.reserve(frame.channels.size());
      for (const auto& plane : frame.channels) {
        patch.channels.push_back(
            plane.block(r * cfg.stride, c * cfg.stride, cfg.patch_size, cfg.patch_size));
      }
      nodes.patches.push_back(std::move(patch));
    }
  }
  return nodes;
}

// Bilinear sample of `src` restricted to the crop window starting at
// (row0, col0) with size (h, w), resampled to an out_size square with
// corner-aligned coordinates. Sampling never leaves the crop window.
template <class Scalar>
Matrix<Scalar> resample_crop(const Matrix<Scalar>& src, int row0, int col0, int h, int w,
                             int out_size) {
  Matrix<Scalar> out(out_size, out_size);
  const double rstep = out_size > 1 ? static_cast<double>(h - 1) / (out_size - 1) : 0.0;
  const double cstep = out_size > 1 ? static_cast<double>(w - 1) / (out_size - 1) : 0.0;
  for (int i = 0; i < out_size; ++i) {
    const double rf = row0 + i * rstep;
    const int r = h > 1 ? std::min(static_cast<int>(rf), row0 + h - 2) : row0;
    const int r1 = h > 1 ? r + 1 : r;
    const double dr = rf - r;
    for (int j = 0; j < out_size; ++j) {
      const double cf = col0 + j * cstep;
      const int c = w > 1 ? std::min(static_cast<int>(cf), col0 + w - 2) : col0;
      const int c1 = w > 1 ? c + 1 : c;
      const double dc = cf - c;
      const double v = (1 - dr) * ((1 - dc) * src(r, c) + dc * src(r, c1)) +
                       dr * ((1 - dc) * src(r1, c) + dc * src(r1, c1));
      out(i, j) = static_cast<Scalar>(v);
    }
  }
  return out;
}

// Random sub-crop per patch (area fraction in the scale range, aspect in the
// ratio range) resampled back to patch_size. Centers and grid geometry are
// untouched; deterministic given the rng state.
template <class Scalar>
NodeSet<Scalar> spatial_jitter(const NodeSet<Scalar>& nodes, std::mt19937_64& rng,
                               const PatchGridConfig& cfg) {
  const int p = cfg.patch_size;
  cfg.validate(p, p);
  NodeSet<Scalar> out;
  out.geom = nodes.geom;
  out.patches.reserve(nodes.patches.size());
  for (const Frame<Scalar>& patch : nodes.patches) {
    const double area = cfg.jitter_scale_lo == 1.0 && cfg.jitter_scale_hi == 1.0
                            ? 1.0
                            : uniform_in(rng, cfg.jitter_scale_lo, cfg.jitter_scale_hi);
    const double aspect = cfg.jitter_aspect_lo == 1.0 && cfg.jitter_aspect_hi == 1.0
                              ? 1.0
                              : uniform_in(rng, cfg.jitter_aspect_lo, cfg.jitter_aspect_hi);
    int ch = static_cast<int>(std::lround(std::sqrt(area * p * p / aspect)));
    int cw = static_cast<int>(std::lround(std::sqrt(area * p * p * aspect)));
    ch = std::min(std::max(ch, 1), p);
    cw = std::min(std::max(cw, 1), p);
    const int r0 = ch < p ? static_cast<int>(uniform_int(rng, 0, p - ch)) : 0;
    const int c0 = cw < p ? static_cast<int>(uniform_int(rng, 0, p - cw)) : 0;
    Frame<Scalar> jittered;
    jittered.channels.reserve(patch.channels.size());
    for (const auto& plane : patch.channels) {
      if (ch == p && cw == p) {
        jittered.channels.push_back(plane);
      } else {
        jittered.channels.push_back(resample_crop(plane, r0, c0, ch, cw, p));
      }
    }
    out.patches.push_back(std::move(jittered));
  }
  return out;
}

// N x (patch_size^2 * C) matrix of flattened patches, the encoder input.
template <class Scalar>
Matrix<Scalar> flatten_patches(const NodeSet<Scalar>& nodes) {
  if (nodes.patches.empty()) throw UsageError("flatten_patches: empty node set");
  const int p = nodes.geom.patch_size;
  const int c = nodes.patches[0].channel_count();
  Matrix<Scalar> out(nodes.node_count(), p * p * c);
  for (int i = 0; i < nodes.node_count(); ++i) {
    Eigen::Index k = 0;
    for (const auto& plane : nodes.patches[static_cast<std::size_t>(i)].channels) {
      for (Eigen::Index r = 0; r < plane.rows(); ++r) {
        for (Eigen::Index cc = 0; cc < plane.cols(); ++cc) out(i, k++) = plane(r, cc);
      }
    }
  }
  return out;
}

}  // namespace cyclewalk
