#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cyclewalk/patches.hpp"
#include "cyclewalk/walk.hpp"

namespace cyclewalk {

// Textured sprites translating over a textured background, with exact
// correspondence ground truth. The speed multiplier scales every per-hop
// displacement; 0 freezes the scene to the identical-frame (infinite
// frame-rate) case.
struct SpriteSceneConfig {
  int height = 64, width = 64, channels = 1;
  int frames = 12;
  int sprite_count = 2;
  int sprite_min = 16, sprite_max = 24;    // square side, pixels
  int speed_min = 2, speed_max = 8;        // per-axis pixel/frame magnitude bounds
  // Velocities are multiples of this quantum; sizes and start positions snap
  // to quantum/2 so border reflections keep displacements on the lattice.
  // 1 keeps motion unconstrained; the stride of the downstream patch grid
  // keeps node correspondences exactly grid-aligned.
  int speed_quantum = 1;
  double brightness_jitter = 0.0;          // per-frame intensity jitter amplitude
  int jitter_smoothing = 3;                // box-blur passes over the jitter field; 0 = per-pixel
  bool allow_occlusion = false;            // initial placement may overlap
  double speed_multiplier = 1.0;           // frame-rate analog; >= 0
  int texture_smoothing = 2;               // box-blur passes over raw noise

  void validate() const {
    if (height < 4 || width < 4 || channels < 1) throw ConfigError("scene too small");
    if (frames < 2) throw ConfigError("need at least two frames");
    if (sprite_count < 0) throw ConfigError("sprite count must be >= 0");
    if (sprite_min < 2 || sprite_min > sprite_max) throw ConfigError("bad sprite size range");
    if (sprite_max >= std::min(height, width)) throw ConfigError("sprites must fit in frame");
    if (speed_min < 0 || speed_min > speed_max) throw ConfigError("bad speed range");
    if (speed_quantum < 1) throw ConfigError("speed quantum must be >= 1");
    if (speed_quantum > 1 && speed_quantum > speed_max) {
      throw ConfigError("speed quantum exceeds the speed range");
    }
    if (speed_max >= std::min(height, width) / 2) throw ConfigError("speeds too large for frame");
    if (brightness_jitter < 0 || brightness_jitter > 0.5) throw ConfigError("bad jitter amplitude");
    if (jitter_smoothing < 0) throw ConfigError("jitter smoothing must be >= 0");
    if (speed_multiplier < 0) throw ConfigError("speed multiplier must be >= 0");
  }
};

// Exact scene state: who owns each pixel, where each sprite has moved, and
// whether it is still visible. Displacements are relative to frame 0.
struct GroundTruth {
  int sprite_count = 0;
  std::vector<Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      ownership;                                        // per frame, HxW, 0 = background
  std::vector<std::vector<std::array<int, 2>>> displacement;  // [frame][sprite] (dr, dc)
  std::vector<std::vector<std::uint8_t>> visible;             // [frame][sprite]
};

namespace detail {

template <class Scalar>
Matrix<Scalar> box_blur(const Matrix<Scalar>& src) {
  Matrix<Scalar> out(src.rows(), src.cols());
  for (Eigen::Index i = 0; i < src.rows(); ++i) {
    for (Eigen::Index j = 0; j < src.cols(); ++j) {
      Scalar acc = 0;
      int n = 0;
      for (Eigen::Index di = -1; di <= 1; ++di) {
        for (Eigen::Index dj = -1; dj <= 1; ++dj) {
          const Eigen::Index r = i + di, c = j + dj;
          if (r < 0 || c < 0 || r >= src.rows() || c >= src.cols()) continue;
          acc += src(r, c);
          ++n;
        }
      }
      out(i, j) = acc / static_cast<Scalar>(n);
    }
  }
  return out;
}

// Smoothed noise rescaled to [0.1, 0.9], so textures keep strong contrast.
template <class Scalar>
Matrix<Scalar> make_texture(int rows, int cols, int smoothing, std::mt19937_64& rng) {
  Matrix<Scalar> tex(rows, cols);
  for (Eigen::Index k = 0; k < tex.size(); ++k) {
    *(tex.data() + k) = static_cast<Scalar>(uniform01(rng));
  }
  for (int pass = 0; pass < smoothing; ++pass) tex = box_blur(tex);
  const Scalar lo = tex.minCoeff(), hi = tex.maxCoeff();
  if (hi > lo) {
    tex = ((tex.array() - lo) / (hi - lo) * Scalar(0.8) + Scalar(0.1)).matrix();
  }
  return tex;
}

// Folds an unbounded coordinate into [0, limit] by reflection.
inline double reflect_coordinate(double x, double limit) {
  if (limit <= 0) return 0;
  const double period = 2.0 * limit;
  double r = std::fmod(x, period);
  if (r < 0) r += period;
  return r <= limit ? r : period - r;
}

}  // namespace detail

template <class Scalar>
std::pair<FrameSequence<Scalar>, GroundTruth> generate_sequence(const SpriteSceneConfig& cfg,
                                                                std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(splitmix64(seed));

  struct Sprite {
    int size;
    int start_row, start_col;  // top-left at frame 0
    int vel_row, vel_col;      // pixels per frame before the multiplier
    Matrix<Scalar> texture;
  };

  // Snapping grain: with a quantum q, sizes and positions sit on the q/2
  // lattice, which reflections at the borders then preserve.
  const int snap = std::max(1, cfg.speed_quantum / 2);
  auto snapped = [&](std::int64_t lo, std::int64_t hi) {
    const std::int64_t lo_s = (lo + snap - 1) / snap, hi_s = hi / snap;
    if (lo_s > hi_s) throw ConfigError("no lattice point in range under the speed quantum");
    return static_cast<int>(snap * uniform_int(rng, lo_s, hi_s));
  };

  std::vector<Sprite> sprites;
  const int max_place_attempts = 200;
  for (int s = 0; s < cfg.sprite_count; ++s) {
    Sprite sp;
    sp.size = snapped(cfg.sprite_min, cfg.sprite_max);
    bool placed = false;
    for (int attempt = 0; attempt < max_place_attempts && !placed; ++attempt) {
      sp.start_row = snapped(0, cfg.height - sp.size);
      sp.start_col = snapped(0, cfg.width - sp.size);
      placed = true;
      if (!cfg.allow_occlusion) {
        for (const Sprite& other : sprites) {
          const bool overlap = sp.start_row < other.start_row + other.size &&
                               other.start_row < sp.start_row + sp.size &&
                               sp.start_col < other.start_col + other.size &&
                               other.start_col < sp.start_col + sp.size;
          if (overlap) {
            placed = false;
            break;
          }
        }
      }
    }
    if (!placed) {
      throw ConfigError("could not place " + std::to_string(cfg.sprite_count) +
                        " non-overlapping sprites; use fewer or smaller sprites");
    }
    auto draw_velocity = [&] {
      const int q = cfg.speed_quantum;
      const int reach = cfg.speed_max / q;  // per-axis multiples of q
      while (true) {
        const int vr = q * static_cast<int>(uniform_int(rng, -reach, reach));
        const int vc = q * static_cast<int>(uniform_int(rng, -reach, reach));
        if (std::max(std::abs(vr), std::abs(vc)) >= cfg.speed_min) return std::array<int, 2>{vr, vc};
      }
    };
    const auto vel = draw_velocity();
    sp.vel_row = vel[0];
    sp.vel_col = vel[1];
    sp.texture = detail::make_texture<Scalar>(sp.size, sp.size, cfg.texture_smoothing, rng);
    sprites.push_back(std::move(sp));
  }

  Matrix<Scalar> background =
      detail::make_texture<Scalar>(cfg.height, cfg.width, cfg.texture_smoothing, rng);

  FrameSequence<Scalar> seq;
  seq.frame_rate_tag = cfg.speed_multiplier > 0
                           ? 8.0 / cfg.speed_multiplier
                           : std::numeric_limits<double>::infinity();
  GroundTruth gt;
  gt.sprite_count = cfg.sprite_count;

  const bool frozen = cfg.speed_multiplier == 0.0;
  for (int t = 0; t < cfg.frames; ++t) {
    const int motion_t = frozen ? 0 : t;
    Frame<Scalar> frame;
    for (int ch = 0; ch < cfg.channels; ++ch) frame.channels.push_back(background);
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> owner =
        Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(
            cfg.height, cfg.width);
    std::vector<std::array<int, 2>> disp;
    for (std::size_t s = 0; s < sprites.size(); ++s) {
      const Sprite& sp = sprites[s];
      const int row = static_cast<int>(std::lround(detail::reflect_coordinate(
          sp.start_row + motion_t * sp.vel_row * cfg.speed_multiplier,
          cfg.height - sp.size)));
      const int col = static_cast<int>(std::lround(detail::reflect_coordinate(
          sp.start_col + motion_t * sp.vel_col * cfg.speed_multiplier,
          cfg.width - sp.size)));
      for (int r = 0; r < sp.size; ++r) {
        for (int c = 0; c < sp.size; ++c) {
          owner(row + r, col + c) = static_cast<std::uint8_t>(s + 1);  // later sprite occludes
          for (int ch = 0; ch < cfg.channels; ++ch) {
            frame.channels[static_cast<std::size_t>(ch)](row + r, col + c) = sp.texture(r, c);
          }
        }
      }
      disp.push_back({row - sp.start_row, col - sp.start_col});
    }

    if (cfg.brightness_jitter > 0 && !(frozen && t > 0)) {
      // Per-frame brightness field: iid noise, optionally smoothed into a
      // low-frequency illumination pattern, rescaled to the same standard
      // deviation as U(-amp, amp).
      Matrix<Scalar> field(cfg.height, cfg.width);
      for (Eigen::Index k = 0; k < field.size(); ++k) {
        *(field.data() + k) = static_cast<Scalar>(2.0 * uniform01(rng) - 1.0);
      }
      for (int pass = 0; pass < cfg.jitter_smoothing; ++pass) field = detail::box_blur(field);
      const double target_sd = cfg.brightness_jitter / std::sqrt(3.0);
      const double field_sd =
          std::sqrt((field.array() - field.mean()).square().mean() + 1e-30);
      field *= static_cast<Scalar>(target_sd / field_sd);
      for (auto& plane : frame.channels) {
        for (Eigen::Index k = 0; k < plane.size(); ++k) {
          const double noisy = *(plane.data() + k) + *(field.data() + k);
          *(plane.data() + k) = static_cast<Scalar>(std::min(std::max(noisy, 0.0), 1.0));
        }
      }
    }

    if (frozen && t > 0) {
      // Infinite frame-rate: repeat frame 0 exactly, noise included.
      frame = seq.frames[0];
    }

    std::vector<std::uint8_t> vis;
    for (std::size_t s = 0; s < sprites.size(); ++s) {
      vis.push_back(static_cast<std::uint8_t>(
          (owner.array() == static_cast<std::uint8_t>(s + 1)).any() ? 1 : 0));
    }

    seq.frames.push_back(std::move(frame));
    gt.ownership.push_back(std::move(owner));
    gt.displacement.push_back(std::move(disp));
    gt.visible.push_back(std::move(vis));
  }
  return {std::move(seq), std::move(gt)};
}

// Ground-truth node correspondence from frame t to frame t+hop: each node
// follows the displacement of the sprite owning its center (background nodes
// map to themselves) and lands on the nearest grid center. Nodes whose
// displaced center leaves the frame or changes owner are invalid.
inline CorrespondenceLabels correspondence_labels(const GroundTruth& gt, const GridGeometry& geom,
                                                  int t, int hop) {
  const int target_t = t + hop;
  if (t < 0 || hop < 1 || target_t >= static_cast<int>(gt.ownership.size())) {
    throw UsageError("correspondence_labels: frame range [" + std::to_string(t) + "," +
                     std::to_string(target_t) + "] outside sequence");
  }
  const auto& own_src = gt.ownership[static_cast<std::size_t>(t)];
  const auto& own_dst = gt.ownership[static_cast<std::size_t>(target_t)];
  const int height = static_cast<int>(own_src.rows());
  const int width = static_cast<int>(own_src.cols());

  auto nearest_grid_index = [&](int row, int col) {
    const int origin_r = geom.centers[0][0];
    const int origin_c = geom.centers[0][1];
    // Round to the nearest center; exact halfway ties go to the lower index.
    int gr = static_cast<int>(std::ceil(static_cast<double>(row - origin_r) / geom.stride - 0.5));
    int gc = static_cast<int>(std::ceil(static_cast<double>(col - origin_c) / geom.stride - 0.5));
    gr = std::min(std::max(gr, 0), geom.grid_rows - 1);
    gc = std::min(std::max(gc, 0), geom.grid_cols - 1);
    return gr * geom.grid_cols + gc;
  };

  CorrespondenceLabels labels;
  labels.target.resize(geom.centers.size());
  labels.valid.resize(geom.centers.size());
  for (std::size_t i = 0; i < geom.centers.size(); ++i) {
    const int cr = geom.centers[i][0];
    const int cc = geom.centers[i][1];
    const std::uint8_t owner = own_src(cr, cc);
    int dr = 0, dc = 0;
    if (owner > 0) {
      const auto& d_src = gt.displacement[static_cast<std::size_t>(t)][owner - 1];
      const auto& d_dst = gt.displacement[static_cast<std::size_t>(target_t)][owner - 1];
      dr = d_dst[0] - d_src[0];
      dc = d_dst[1] - d_src[1];
    }
    const int nr = cr + dr, nc = cc + dc;
    if (nr < 0 || nc < 0 || nr >= height || nc >= width) {
      labels.target[i] = -1;
      labels.valid[i] = 0;
      continue;
    }
    if (own_dst(nr, nc) != owner) {  // occluded (or background overrun by a sprite)
      labels.target[i] = -1;
      labels.valid[i] = 0;
      continue;
    }
    labels.target[i] = nearest_grid_index(nr, nc);
    labels.valid[i] = 1;
  }
  return labels;
}

// One-hot node labels: class = pixel owner at the node's grid center,
// C = sprite_count + 1 with class 0 = background.
template <class Scalar>
Matrix<Scalar> grid_labels(const GroundTruth& gt, const GridGeometry& geom, int frame) {
  if (frame < 0 || frame >= static_cast<int>(gt.ownership.size())) {
    throw UsageError("grid_labels: frame outside sequence");
  }
  const auto& owner = gt.ownership[static_cast<std::size_t>(frame)];
  Matrix<Scalar> labels =
      Matrix<Scalar>::Zero(static_cast<Eigen::Index>(geom.centers.size()), gt.sprite_count + 1);
  for (std::size_t i = 0; i < geom.centers.size(); ++i) {
    labels(static_cast<Eigen::Index>(i), owner(geom.centers[i][0], geom.centers[i][1])) = Scalar(1);
  }
  return labels;
}

}  // namespace cyclewalk
