#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cyclewalk/dataset_io.hpp"
#include "cyclewalk/patches.hpp"
#include "cyclewalk/synth.hpp"

using cyclewalk::GridGeometry;
using cyclewalk::GroundTruth;
using cyclewalk::Matrix;
using cyclewalk::SpriteSceneConfig;

namespace {

SpriteSceneConfig desk_cfg() {
  SpriteSceneConfig cfg;
  cfg.height = 64;
  cfg.width = 64;
  cfg.frames = 10;
  cfg.sprite_count = 2;
  cfg.sprite_min = 16;
  cfg.sprite_max = 24;
  cfg.speed_min = 2;
  cfg.speed_max = 8;
  return cfg;
}

GridGeometry desk_grid() {
  cyclewalk::PatchGridConfig patch{16, 8};
  return cyclewalk::grid_geometry(64, 64, patch);
}

// Hand-built scene: one sprite covering given pixels with a fixed
// displacement per frame.
GroundTruth translating_gt(int frames, int h, int w, int size, int row0, int col0, int dr,
                           int dc) {
  GroundTruth gt;
  gt.sprite_count = 1;
  for (int t = 0; t < frames; ++t) {
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> owner =
        Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(h, w);
    const int r = row0 + t * dr, c = col0 + t * dc;
    for (int i = 0; i < size; ++i) {
      for (int j = 0; j < size; ++j) {
        if (r + i >= 0 && r + i < h && c + j >= 0 && c + j < w) {
          owner(r + i, c + j) = 1;
        }
      }
    }
    gt.ownership.push_back(std::move(owner));
    gt.displacement.push_back({{t * dr, t * dc}});
    gt.visible.push_back({1});
  }
  return gt;
}

}  // namespace

TEST_CASE("no sprites: static background, all ownership zero") {
  SpriteSceneConfig cfg = desk_cfg();
  cfg.sprite_count = 0;
  auto [seq, gt] = cyclewalk::generate_sequence<double>(cfg, 3);
  CHECK(seq.length() == 10);
  for (int t = 0; t < 10; ++t) {
    CHECK(gt.ownership[static_cast<std::size_t>(t)].maxCoeff() == 0);
    CHECK(seq.frames[static_cast<std::size_t>(t)].channels[0] == seq.frames[0].channels[0]);
  }
}

TEST_CASE("generation is deterministic per seed and pixel values stay in [0,1]") {
  SpriteSceneConfig cfg = desk_cfg();
  cfg.brightness_jitter = 0.1;
  auto [a, gta] = cyclewalk::generate_sequence<double>(cfg, 11);
  auto [b, gtb] = cyclewalk::generate_sequence<double>(cfg, 11);
  auto [c, gtc] = cyclewalk::generate_sequence<double>(cfg, 12);
  bool differs = false;
  for (int t = 0; t < cfg.frames; ++t) {
    CHECK(a.frames[static_cast<std::size_t>(t)].channels[0] ==
          b.frames[static_cast<std::size_t>(t)].channels[0]);
    CHECK(gta.ownership[static_cast<std::size_t>(t)] == gtb.ownership[static_cast<std::size_t>(t)]);
    if (a.frames[static_cast<std::size_t>(t)].channels[0] !=
        c.frames[static_cast<std::size_t>(t)].channels[0]) {
      differs = true;
    }
    CHECK(a.frames[static_cast<std::size_t>(t)].channels[0].minCoeff() >= 0.0);
    CHECK(a.frames[static_cast<std::size_t>(t)].channels[0].maxCoeff() <= 1.0);
  }
  CHECK(differs);
}

TEST_CASE("kinematics: constant velocity between reflections, matching an unfolded oracle") {
  SpriteSceneConfig cfg = desk_cfg();
  cfg.sprite_count = 1;
  cfg.frames = 20;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto [seq, gt] = cyclewalk::generate_sequence<double>(cfg, seed);
    // Velocity from the first hop; every later frame must match triangle-wave
    // reflection of start + t*v computed independently here.
    const auto d1 = gt.displacement[1][0];
    // Recover the start position from frame 0 ownership (top-left owned pixel).
    int row0 = -1, col0 = -1, size = 0;
    for (int r = 0; r < 64 && row0 < 0; ++r) {
      for (int c = 0; c < 64; ++c) {
        if (gt.ownership[0](r, c) == 1) {
          row0 = r;
          col0 = c;
          break;
        }
      }
    }
    REQUIRE(row0 >= 0);
    while (col0 + size < 64 && gt.ownership[0](row0, col0 + size) == 1) ++size;
    const int limit_r = 64 - size, limit_c = 64 - size;
    auto fold = [](int x, int limit) {
      const int period = 2 * limit;
      int r = x % period;
      if (r < 0) r += period;
      return r <= limit ? r : period - r;
    };
    // Some constant in-range velocity must explain the whole folded
    // trajectory on each axis independently.
    auto axis_explained = [&](int axis, int start, int limit) {
      for (int v = -cfg.speed_max; v <= cfg.speed_max; ++v) {
        bool ok = true;
        for (int t = 0; t < cfg.frames && ok; ++t) {
          ok = gt.displacement[static_cast<std::size_t>(t)][0][static_cast<std::size_t>(axis)] ==
               fold(start + t * v, limit) - start;
        }
        if (ok) return true;
      }
      return false;
    };
    CHECK(axis_explained(0, row0, limit_r));
    CHECK(axis_explained(1, col0, limit_c));
    CHECK(std::max(std::abs(d1[0]), std::abs(d1[1])) <= cfg.speed_max);
  }
}

TEST_CASE("speed multiplier 2 with half the frames covers the same trajectory") {
  SpriteSceneConfig slow = desk_cfg();
  slow.sprite_count = 1;
  slow.frames = 12;
  SpriteSceneConfig fast = slow;
  fast.frames = 6;
  fast.speed_multiplier = 2.0;
  auto [seq_slow, gt_slow] = cyclewalk::generate_sequence<double>(slow, 5);
  auto [seq_fast, gt_fast] = cyclewalk::generate_sequence<double>(fast, 5);
  for (int t = 0; t < 6; ++t) {
    CHECK(gt_fast.displacement[static_cast<std::size_t>(t)][0] ==
          gt_slow.displacement[static_cast<std::size_t>(2 * t)][0]);
  }
}

TEST_CASE("speed multiplier 0 repeats frame 0 exactly") {
  SpriteSceneConfig cfg = desk_cfg();
  cfg.speed_multiplier = 0.0;
  cfg.brightness_jitter = 0.1;
  auto [seq, gt] = cyclewalk::generate_sequence<double>(cfg, 7);
  CHECK(std::isinf(seq.frame_rate_tag));
  for (int t = 1; t < cfg.frames; ++t) {
    CHECK(seq.frames[static_cast<std::size_t>(t)].channels[0] == seq.frames[0].channels[0]);
    CHECK(gt.displacement[static_cast<std::size_t>(t)][0] == std::array<int, 2>{0, 0});
  }
}

TEST_CASE("brightness jitter changes pixels but not ground truth") {
  SpriteSceneConfig plain = desk_cfg();
  SpriteSceneConfig noisy = desk_cfg();
  noisy.brightness_jitter = 0.1;
  auto [seq_a, gt_a] = cyclewalk::generate_sequence<double>(plain, 9);
  auto [seq_b, gt_b] = cyclewalk::generate_sequence<double>(noisy, 9);
  bool pixels_differ = false;
  for (int t = 0; t < plain.frames; ++t) {
    if (seq_a.frames[static_cast<std::size_t>(t)].channels[0] !=
        seq_b.frames[static_cast<std::size_t>(t)].channels[0]) {
      pixels_differ = true;
    }
    CHECK(gt_a.ownership[static_cast<std::size_t>(t)] == gt_b.ownership[static_cast<std::size_t>(t)]);
    CHECK(gt_a.displacement[static_cast<std::size_t>(t)] ==
          gt_b.displacement[static_cast<std::size_t>(t)]);
  }
  CHECK(pixels_differ);
}

TEST_CASE("non-overlap placement failure suggests smaller sprites") {
  SpriteSceneConfig cfg = desk_cfg();
  cfg.height = 48;
  cfg.width = 48;
  cfg.sprite_count = 6;
  cfg.sprite_min = 20;
  cfg.sprite_max = 20;
  CHECK_THROWS_AS((cyclewalk::generate_sequence<double>(cfg, 1)), cyclewalk::ConfigError);
}

TEST_CASE("correspondence labels: zero velocity is the identity, all valid") {
  GroundTruth gt = translating_gt(4, 64, 64, 16, 20, 20, 0, 0);
  const auto geom = desk_grid();
  auto labels = cyclewalk::correspondence_labels(gt, geom, 0, 2);
  for (int i = 0; i < geom.node_count(); ++i) {
    CHECK(labels.valid[static_cast<std::size_t>(i)] == 1);
    CHECK(labels.target[static_cast<std::size_t>(i)] == i);
  }
}

TEST_CASE("correspondence labels: full-frame translation by one stride shifts one column") {
  // A sprite covering the whole frame moving exactly one stride rightward.
  const int stride = 8;
  GroundTruth gt;
  gt.sprite_count = 1;
  for (int t = 0; t < 2; ++t) {
    gt.ownership.push_back(
        Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(
            64, 64, 1));
    gt.displacement.push_back({{0, t * stride}});
    gt.visible.push_back({1});
  }
  const auto geom = desk_grid();
  auto labels = cyclewalk::correspondence_labels(gt, geom, 0, 1);
  for (int i = 0; i < geom.node_count(); ++i) {
    const int col = geom.node_col(i);
    if (col == geom.grid_cols - 1) {
      // Displaced centers of the rightmost column leave the frame.
      CHECK(labels.valid[static_cast<std::size_t>(i)] == 0);
    } else {
      CHECK(labels.valid[static_cast<std::size_t>(i)] == 1);
      CHECK(labels.target[static_cast<std::size_t>(i)] == i + 1);
    }
  }
}

TEST_CASE("correspondence labels: occluded nodes are invalid") {
  // Sprite 1 sits still; sprite 2 moves on top of it by frame 1.
  GroundTruth gt;
  gt.sprite_count = 2;
  using OwnerMat = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  OwnerMat own0 = OwnerMat::Zero(64, 64);
  own0.block(8, 8, 16, 16).setConstant(1);
  own0.block(40, 40, 16, 16).setConstant(2);
  OwnerMat own1 = OwnerMat::Zero(64, 64);
  own1.block(8, 8, 16, 16).setConstant(2);  // sprite 2 now covers sprite 1
  gt.ownership = {own0, own1};
  gt.displacement = {{{0, 0}, {0, 0}}, {{0, 0}, {-32, -32}}};
  gt.visible = {{1, 1}, {0, 1}};
  const auto geom = desk_grid();
  auto labels = cyclewalk::correspondence_labels(gt, geom, 0, 1);
  for (int i = 0; i < geom.node_count(); ++i) {
    const int cr = geom.centers[static_cast<std::size_t>(i)][0];
    const int cc = geom.centers[static_cast<std::size_t>(i)][1];
    if (own0(cr, cc) == 1) {
      CHECK(labels.valid[static_cast<std::size_t>(i)] == 0);  // occluded at t+1
    }
  }
}

TEST_CASE("correspondence labels compose over hops when grid-aligned") {
  GroundTruth gt = translating_gt(3, 64, 64, 24, 4, 4, 8, 0);
  const auto geom = desk_grid();
  auto y01 = cyclewalk::correspondence_labels(gt, geom, 0, 1);
  auto y12 = cyclewalk::correspondence_labels(gt, geom, 1, 1);
  auto y02 = cyclewalk::correspondence_labels(gt, geom, 0, 2);
  for (int i = 0; i < geom.node_count(); ++i) {
    if (!y01.valid[static_cast<std::size_t>(i)]) continue;
    const int mid = y01.target[static_cast<std::size_t>(i)];
    if (!y12.valid[static_cast<std::size_t>(mid)] || !y02.valid[static_cast<std::size_t>(i)]) {
      continue;
    }
    CHECK(y02.target[static_cast<std::size_t>(i)] == y12.target[static_cast<std::size_t>(mid)]);
  }
}

TEST_CASE("grid labels: background only, one-hot rows, exact sprite coverage") {
  const auto geom = desk_grid();
  GroundTruth empty;
  empty.sprite_count = 0;
  empty.ownership.push_back(
      Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(64, 64));
  empty.displacement.push_back({});
  empty.visible.push_back({});
  Matrix<double> l0 = cyclewalk::grid_labels<double>(empty, geom, 0);
  CHECK(l0.rows() == 49);
  CHECK(l0.cols() == 1);
  CHECK(l0.col(0).sum() == doctest::Approx(49.0));

  // One sprite covering exactly the top-left 2x2 grid centers: centers at
  // (8,8),(8,16),(16,8),(16,16), so a block spanning [8,16]^2 pixels.
  GroundTruth one;
  one.sprite_count = 1;
  auto owner =
      Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(64, 64)
          .eval();
  owner.block(8, 8, 9, 9).setConstant(1);
  one.ownership.push_back(owner);
  one.displacement.push_back({{0, 0}});
  one.visible.push_back({1});
  Matrix<double> l1 = cyclewalk::grid_labels<double>(one, geom, 0);
  CHECK(l1.cols() == 2);
  CHECK(l1.col(1).sum() == doctest::Approx(4.0));
  for (Eigen::Index i = 0; i < l1.rows(); ++i) {
    CHECK(l1.row(i).sum() == doctest::Approx(1.0));
    CHECK((l1(i, 0) == 1.0 || l1(i, 1) == 1.0));
  }
}

TEST_CASE("dataset file round trip is exact and byte-identical across writes") {
  namespace fs = std::filesystem;
  SpriteSceneConfig cfg = desk_cfg();
  cfg.brightness_jitter = 0.05;
  cfg.frames = 5;
  auto [seq, gt] = cyclewalk::generate_sequence<float>(cfg, 21);
  const fs::path dir = fs::temp_directory_path() / "cyclewalk_test_io";
  fs::create_directories(dir);
  const fs::path a = dir / "a.cwvd", b = dir / "b.cwvd";
  nlohmann::json meta = {{"config", {{"seed", 21}}}, {"version", "test"}};
  cyclewalk::write_sequence(a, seq, gt, cfg.speed_multiplier, meta);
  cyclewalk::write_sequence(b, seq, gt, cfg.speed_multiplier, meta);

  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string bytes_a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string bytes_b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
  CHECK(bytes_a.substr(0, 4) == "CWVD");

  auto stored = cyclewalk::read_sequence(a);
  CHECK(stored.frames.length() == 5);
  CHECK(stored.gt.sprite_count == 2);
  for (int t = 0; t < 5; ++t) {
    CHECK(stored.gt.ownership[static_cast<std::size_t>(t)] ==
          gt.ownership[static_cast<std::size_t>(t)]);
    CHECK(stored.gt.displacement[static_cast<std::size_t>(t)] ==
          gt.displacement[static_cast<std::size_t>(t)]);
    // f32 payload read back into f64 is exact.
    CHECK(stored.frames.frames[static_cast<std::size_t>(t)].channels[0] ==
          seq.frames[static_cast<std::size_t>(t)].channels[0].cast<double>());
  }
  CHECK(stored.meta.at("version") == "test");
  fs::remove_all(dir);
}
