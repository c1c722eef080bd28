#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclewalk/params.hpp"
#include "cyclewalk/patches.hpp"
#include "cyclewalk/synth.hpp"

namespace cyclewalk {

// CWVD sequence file, little-endian:
//   magic "CWVD", version u32, T,H,W,C u32,
//   frame payload: T*H*W*C f32, frame-major then row-major then channel-last,
//   ground truth: S u32, speed_multiplier f32, then per frame:
//     ownership u8[H*W], per sprite (dr,dc) i32, per sprite visible u8,
//   meta: length u32 + UTF-8 JSON (config echo and version string).
//
// CWCK checkpoint file, little-endian:
//   magic "CWCK", version u32, count u32, per parameter:
//     name length u32, name bytes, rank u32, dims u32*rank, f64 payload,
//   meta: length u32 + UTF-8 JSON (config echo, step, rng state, version).

constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated file while reading " + what);
  return v;
}

inline void write_magic(std::ostream& out, const char magic[4]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char magic[4], const std::string& path) {
  char buf[4];
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0) {
    throw IoError(path + ": bad magic, expected " + std::string(magic, 4));
  }
}

inline void write_meta(std::ostream& out, const nlohmann::json& meta) {
  const std::string s = meta.dump();
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline nlohmann::json read_meta(std::istream& in, const std::string& path) {
  const auto len = read_pod<std::uint32_t>(in, path + " meta length");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path + ": truncated meta block");
  return nlohmann::json::parse(s);
}

}  // namespace detail

struct StoredSequence {
  FrameSequence<double> frames;
  GroundTruth gt;
  double speed_multiplier = 1.0;
  nlohmann::json meta;
};

template <class Scalar>
void write_sequence(const std::filesystem::path& path, const FrameSequence<Scalar>& seq,
                    const GroundTruth& gt, double speed_multiplier, const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const int t = seq.length();
  if (t == 0) throw UsageError("write_sequence: empty sequence");
  const int h = seq.frames[0].rows();
  const int w = seq.frames[0].cols();
  const int c = seq.frames[0].channel_count();

  detail::write_magic(out, "CWVD");
  detail::write_pod<std::uint32_t>(out, kDatasetVersion);
  for (int dim : {t, h, w, c}) detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  for (const auto& frame : seq.frames) {
    for (int r = 0; r < h; ++r) {
      for (int cc = 0; cc < w; ++cc) {
        for (int ch = 0; ch < c; ++ch) {
          detail::write_pod<float>(out,
                                   static_cast<float>(frame.channels[static_cast<std::size_t>(ch)](r, cc)));
        }
      }
    }
  }

  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(gt.sprite_count));
  detail::write_pod<float>(out, static_cast<float>(speed_multiplier));
  for (int ft = 0; ft < t; ++ft) {
    const auto& owner = gt.ownership[static_cast<std::size_t>(ft)];
    out.write(reinterpret_cast<const char*>(owner.data()),
              static_cast<std::streamsize>(owner.size()));
    for (int s = 0; s < gt.sprite_count; ++s) {
      detail::write_pod<std::int32_t>(out, gt.displacement[static_cast<std::size_t>(ft)]
                                               [static_cast<std::size_t>(s)][0]);
      detail::write_pod<std::int32_t>(out, gt.displacement[static_cast<std::size_t>(ft)]
                                               [static_cast<std::size_t>(s)][1]);
    }
    for (int s = 0; s < gt.sprite_count; ++s) {
      detail::write_pod<std::uint8_t>(
          out, gt.visible[static_cast<std::size_t>(ft)][static_cast<std::size_t>(s)]);
    }
  }

  detail::write_meta(out, meta);
  if (!out) throw IoError("failed writing " + path.string());
}

inline StoredSequence read_sequence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  detail::expect_magic(in, "CWVD", path.string());
  const auto version = detail::read_pod<std::uint32_t>(in, "version");
  if (version != kDatasetVersion) {
    throw IoError(path.string() + ": unsupported dataset version " + std::to_string(version));
  }
  const int t = static_cast<int>(detail::read_pod<std::uint32_t>(in, "T"));
  const int h = static_cast<int>(detail::read_pod<std::uint32_t>(in, "H"));
  const int w = static_cast<int>(detail::read_pod<std::uint32_t>(in, "W"));
  const int c = static_cast<int>(detail::read_pod<std::uint32_t>(in, "C"));
  if (t < 1 || h < 1 || w < 1 || c < 1) throw IoError(path.string() + ": bad header dims");

  StoredSequence stored;
  stored.frames.frames.reserve(static_cast<std::size_t>(t));
  for (int ft = 0; ft < t; ++ft) {
    Frame<double> frame;
    for (int ch = 0; ch < c; ++ch) frame.channels.push_back(Matrix<double>::Zero(h, w));
    for (int r = 0; r < h; ++r) {
      for (int cc = 0; cc < w; ++cc) {
        for (int ch = 0; ch < c; ++ch) {
          frame.channels[static_cast<std::size_t>(ch)](r, cc) =
              detail::read_pod<float>(in, "frame payload");
        }
      }
    }
    stored.frames.frames.push_back(std::move(frame));
  }

  const int sprites = static_cast<int>(detail::read_pod<std::uint32_t>(in, "sprite count"));
  stored.speed_multiplier = detail::read_pod<float>(in, "speed multiplier");
  stored.frames.frame_rate_tag = stored.speed_multiplier > 0
                                     ? 8.0 / stored.speed_multiplier
                                     : std::numeric_limits<double>::infinity();
  stored.gt.sprite_count = sprites;
  for (int ft = 0; ft < t; ++ft) {
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> owner(h, w);
    in.read(reinterpret_cast<char*>(owner.data()), static_cast<std::streamsize>(owner.size()));
    if (!in) throw IoError(path.string() + ": truncated ownership block");
    stored.gt.ownership.push_back(std::move(owner));
    std::vector<std::array<int, 2>> disp;
    for (int s = 0; s < sprites; ++s) {
      const int dr = detail::read_pod<std::int32_t>(in, "displacement");
      const int dc = detail::read_pod<std::int32_t>(in, "displacement");
      disp.push_back({dr, dc});
    }
    stored.gt.displacement.push_back(std::move(disp));
    std::vector<std::uint8_t> vis;
    for (int s = 0; s < sprites; ++s) {
      vis.push_back(detail::read_pod<std::uint8_t>(in, "visibility"));
    }
    stored.gt.visible.push_back(std::move(vis));
  }
  stored.meta = detail::read_meta(in, path.string());
  return stored;
}

// Parameters are always stored as f64 (widening from f32 training is exact).
inline void write_checkpoint(const std::filesystem::path& path, const ParamSet<double>& params,
                             const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  detail::write_magic(out, "CWCK");
  detail::write_pod<std::uint32_t>(out, kCheckpointVersion);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.count()));
  for (int i = 0; i < params.count(); ++i) {
    const std::string& name = params.name(i);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& v = params.value(i);
    detail::write_pod<std::uint32_t>(out, 2);  // rank: all parameters are matrices
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(v.rows()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(v.cols()));
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  detail::write_meta(out, meta);
  if (!out) throw IoError("failed writing " + path.string());
}

struct StoredCheckpoint {
  ParamSet<double> params;
  nlohmann::json meta;
};

inline StoredCheckpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  detail::expect_magic(in, "CWCK", path.string());
  const auto version = detail::read_pod<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = detail::read_pod<std::uint32_t>(in, "parameter count");
  StoredCheckpoint stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!in) throw IoError(path.string() + ": truncated parameter name");
    const auto rank = detail::read_pod<std::uint32_t>(in, "rank");
    if (rank != 2) throw IoError(path.string() + ": unsupported parameter rank");
    const auto rows = detail::read_pod<std::uint32_t>(in, "rows");
    const auto cols = detail::read_pod<std::uint32_t>(in, "cols");
    Matrix<double> v(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw IoError(path.string() + ": truncated parameter payload");
    stored.params.add(name, std::move(v));
  }
  stored.meta = detail::read_meta(in, path.string());
  return stored;
}

// Sorted .cwvd listing of a dataset file-or-directory path.
inline std::vector<std::filesystem::path> list_sequence_files(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.path().extension() == ".cwvd") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::exists(path)) {
    files.push_back(path);
  } else {
    throw IoError("dataset path does not exist: " + path.string());
  }
  if (files.empty()) throw IoError("no .cwvd sequences under " + path.string());
  return files;
}

}  // namespace cyclewalk
