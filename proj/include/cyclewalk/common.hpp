#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>

namespace cyclewalk {

// All dense values are row-major matrices; scalars are 1x1, row vectors 1xN.
template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using BoolMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error("usage error: " + msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Named seed streams, derived from the master seed by a counter-based split:
// stream i is seeded with splitmix64(master + i * golden_gamma). Changing one
// stream's consumption never perturbs another.
enum class SeedStream : std::uint64_t {
  data = 1,
  init = 2,
  dropout = 3,
  jitter = 4,
  batch = 5,
  adapt = 6,
  eval = 7,
  lemma = 8,
};

inline std::uint64_t derive_seed(std::uint64_t master, SeedStream stream) {
  return splitmix64(master + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(stream));
}

inline std::mt19937_64 make_rng(std::uint64_t master, SeedStream stream) {
  return std::mt19937_64(derive_seed(master, stream));
}

// Uniform in [0,1) with 53 random bits; avoids distribution objects so the
// value sequence depends only on the engine state.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [lo, hi], both inclusive.
inline std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<std::int64_t>(rng() % span);
}

// First index of the row maximum; ties break toward the lower index.
template <class Scalar>
int argmax_row(const Matrix<Scalar>& m, int row) {
  int best = 0;
  for (int j = 1; j < m.cols(); ++j) {
    if (m(row, j) > m(row, best)) best = j;
  }
  return best;
}

// Worker-count cap: min(requested, CYCLEWALK_THREADS). Unset env means no cap.
inline int thread_cap(int requested) {
  if (requested < 1) requested = 1;
  if (const char* env = std::getenv("CYCLEWALK_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1 && cap < requested) return cap;
  }
  return requested;
}

}  // namespace cyclewalk
