#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cyclewalk/params.hpp"
#include "cyclewalk/patches.hpp"
#include "cyclewalk/tape.hpp"

namespace cyclewalk {

// flatten -> [linear -> relu]* -> linear -> l2-normalize, the desk-scale
// stand-in for a convolutional backbone.
struct EncoderConfig {
  int patch_size = 16;
  int channels = 1;
  std::vector<int> hidden_widths = {64};
  int embed_dim = 32;

  int input_dim() const { return patch_size * patch_size * channels; }

  void validate() const {
    if (embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
    if (hidden_widths.empty()) throw ConfigError("hidden_widths must be non-empty");
    for (int w : hidden_widths) {
      if (w < 1) throw ConfigError("hidden widths must be positive");
    }
    if (patch_size < 1 || channels < 1) throw ConfigError("invalid encoder input dims");
  }
};

// Weights uniform in [-sqrt(3/fan_in), sqrt(3/fan_in)] (standard deviation
// 1/sqrt(fan_in)); biases zero.
template <class Scalar>
ParamSet<Scalar> init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(splitmix64(seed));
  ParamSet<Scalar> params;
  std::vector<int> widths;
  widths.push_back(cfg.input_dim());
  widths.insert(widths.end(), cfg.hidden_widths.begin(), cfg.hidden_widths.end());
  widths.push_back(cfg.embed_dim);
  for (std::size_t layer = 0; layer + 1 < widths.size(); ++layer) {
    const int fan_in = widths[layer];
    const int fan_out = widths[layer + 1];
    const double bound = std::sqrt(3.0 / fan_in);
    Matrix<Scalar> w(fan_in, fan_out);
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      *(w.data() + k) = static_cast<Scalar>(uniform_in(rng, -bound, bound));
    }
    const std::string tag = std::to_string(layer);
    params.add("w" + tag, std::move(w));
    params.add("b" + tag, Matrix<Scalar>::Zero(1, fan_out));
  }
  return params;
}

// Per-patch mean subtraction, applied before the first layer. Removes the
// global-brightness component of every patch.
template <class Scalar>
Matrix<Scalar> center_rows(Matrix<Scalar> x) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    x.row(i).array() -= x.row(i).mean();
  }
  return x;
}

// Builds the encoder subgraph on an existing tape. `param_ids` are the tape
// ids of the ParamSet entries, in ParamSet order. Returns the node id of the
// N x d row-unit-norm embedding matrix.
template <class Scalar>
int embed_on_tape(Tape<Scalar>& tape, const std::vector<int>& param_ids, const EncoderConfig& cfg,
                  const Matrix<Scalar>& flattened_patches) {
  cfg.validate();
  if (flattened_patches.cols() != cfg.input_dim()) {
    throw ShapeError("embed: patch dim " + std::to_string(flattened_patches.cols()) +
                     " does not match encoder input dim " + std::to_string(cfg.input_dim()));
  }
  const std::size_t layer_count = cfg.hidden_widths.size() + 1;
  if (param_ids.size() != 2 * layer_count) {
    throw UsageError("embed: wrong number of parameter tape ids");
  }
  int h = tape.input(center_rows(flattened_patches), "patches");
  for (std::size_t layer = 0; layer < layer_count; ++layer) {
    h = tape.add(tape.matmul(h, param_ids[2 * layer]), param_ids[2 * layer + 1]);
    if (layer + 1 < layer_count) h = tape.relu(h);
  }
  return tape.l2_normalize_rows(h);
}

template <class Scalar>
std::vector<int> push_params(Tape<Scalar>& tape, const ParamSet<Scalar>& params) {
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(params.count()));
  for (int i = 0; i < params.count(); ++i) {
    ids.push_back(tape.param(params.value(i), params.name(i)));
  }
  return ids;
}

// Forward-only embedding for inference paths.
template <class Scalar>
Matrix<Scalar> embed(const ParamSet<Scalar>& params, const EncoderConfig& cfg,
                     const Matrix<Scalar>& flattened_patches) {
  Tape<Scalar> tape;
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(params.count()));
  for (int i = 0; i < params.count(); ++i) {
    ids.push_back(tape.input(params.value(i), params.name(i)));
  }
  return tape.value(embed_on_tape(tape, ids, cfg, flattened_patches));
}

template <class Scalar>
Matrix<Scalar> embed_nodes(const ParamSet<Scalar>& params, const EncoderConfig& cfg,
                           const NodeSet<Scalar>& nodes) {
  return embed(params, cfg, flatten_patches(nodes));
}

}  // namespace cyclewalk
