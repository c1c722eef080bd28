#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclewalk/adam.hpp"
#include "cyclewalk/dataset_io.hpp"
#include "cyclewalk/encoder.hpp"
#include "cyclewalk/walk.hpp"

namespace cyclewalk {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int clip_len = 4;  // T (desk default; the source setting uses 10)
  int batch = 4;     // B
  int steps = 2000;
  int precision = 64;  // 32 or 64
  std::uint64_t seed = 0;
  int checkpoint_every = 500;
  bool jitter = true;

  void validate() const {
    if (lr <= 0 || beta1 <= 0 || beta2 <= 0 || eps <= 0) throw ConfigError("bad Adam settings");
    if (clip_len < 2) throw ConfigError("clip length must be >= 2");
    if (batch < 1 || steps < 0) throw ConfigError("bad batch/steps");
    if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
  }
};

template <class Scalar>
using Clip = std::vector<Frame<Scalar>>;

template <class Scalar>
struct StepResult {
  LossReport report;
  std::vector<Matrix<Scalar>> grads;
};

// One Algorithm-1 step over a batch of clips: patches -> jitter -> embeddings
// -> palindrome energies -> edge dropout -> sub-cycle losses, averaged over
// the batch in clip order. Gradients are for the encoder parameters.
template <class Scalar>
StepResult<Scalar> train_step(const ParamSet<Scalar>& params, const std::vector<Clip<Scalar>>& batch,
                              const EncoderConfig& enc, const PatchGridConfig& patch,
                              const WalkConfig& walk_cfg, bool use_jitter,
                              std::mt19937_64& jitter_rng, std::mt19937_64& dropout_rng) {
  if (batch.empty()) throw UsageError("train_step: empty batch");
  const int clip_count = static_cast<int>(batch.size());

  Tape<Scalar> tape;
  const auto param_ids = push_params(tape, params);

  StepResult<Scalar> out;
  int total_id = -1;
  double return_prob = 0;
  for (int b = 0; b < clip_count; ++b) {
    const Clip<Scalar>& clip = batch[static_cast<std::size_t>(b)];
    if (static_cast<int>(clip.size()) < 2) {
      throw UsageError("train_step: clip " + std::to_string(b) + " has fewer than 2 frames");
    }
    try {
      std::vector<int> embeds;
      for (const Frame<Scalar>& frame : clip) {
        NodeSet<Scalar> nodes = extract_patches(frame, patch);
        if (use_jitter) nodes = spatial_jitter(nodes, jitter_rng, patch);
        embeds.push_back(embed_on_tape(tape, param_ids, enc, flatten_patches(nodes)));
      }
      std::vector<int> energies;
      for (std::size_t t = 0; t + 1 < embeds.size(); ++t) {
        energies.push_back(tape.scale(tape.matmul(embeds[t], tape.transpose(embeds[t + 1])),
                                      Scalar(1.0 / walk_cfg.tau)));
      }
      CycleGraph graph = build_cycle_loss(tape, energies, walk_cfg, &dropout_rng);
      if (out.report.subcycle.empty()) {
        out.report.subcycle.assign(graph.subcycle_loss_ids.size(), 0.0);
      }
      for (std::size_t k = 0; k < graph.subcycle_loss_ids.size(); ++k) {
        out.report.subcycle[k] +=
            static_cast<double>(tape.value(graph.subcycle_loss_ids[k])(0, 0)) / clip_count;
      }
      return_prob +=
          static_cast<double>(tape.value(graph.full_roundtrip_id).diagonal().mean()) / clip_count;
      total_id = (b == 0) ? graph.total_loss_id : tape.add(total_id, graph.total_loss_id);
    } catch (const NumericError& err) {
      throw NumericError("non-finite loss in batch clip " + std::to_string(b) + ": " + err.what());
    }
  }
  const int batch_loss = tape.scale(total_id, Scalar(1.0 / clip_count));
  out.report.total = static_cast<double>(tape.value(batch_loss)(0, 0));
  out.report.mean_return_probability = return_prob;
  tape.backward(batch_loss);
  out.grads.reserve(param_ids.size());
  for (int id : param_ids) out.grads.push_back(tape.grad(id));
  return out;
}

struct FitOptions {
  std::filesystem::path out_dir;  // empty: no checkpoints or metrics files
  nlohmann::json config_echo;
  // Optional held-out probe, run at checkpoint cadence; result lands in the
  // metrics line for that step.
  std::function<nlohmann::json(const ParamSet<double>&, long step)> periodic_eval;
};

struct FitResult {
  ParamSet<double> params;
  std::vector<nlohmann::json> history;  // one object per step
  std::string final_checkpoint;         // path, when out_dir set
};

namespace detail {

template <class Scalar>
std::vector<Clip<Scalar>> sample_batch(const std::vector<FrameSequence<Scalar>>& dataset,
                                       int batch, int clip_len, std::mt19937_64& rng) {
  std::vector<Clip<Scalar>> clips;
  clips.reserve(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    const auto& seq =
        dataset[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(dataset.size()) - 1))];
    if (seq.length() < clip_len) {
      throw UsageError("fit: sequence shorter than clip length " + std::to_string(clip_len));
    }
    const int start = static_cast<int>(uniform_int(rng, 0, seq.length() - clip_len));
    clips.emplace_back(seq.frames.begin() + start, seq.frames.begin() + start + clip_len);
  }
  return clips;
}

inline std::string rng_state_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

}  // namespace detail

// Deterministic training loop: (seed, config, dataset) fixes the loss history
// bit-for-bit. Checkpoints at the configured cadence plus a final one.
template <class Scalar>
FitResult fit(const std::vector<FrameSequence<Scalar>>& dataset, const TrainConfig& train,
              const EncoderConfig& enc, const PatchGridConfig& patch, const WalkConfig& walk_cfg,
              const FitOptions& options = {}) {
  train.validate();
  enc.validate();
  walk_cfg.validate();
  if (dataset.empty()) throw UsageError("fit: empty dataset");

  auto params = init_encoder<Scalar>(enc, derive_seed(train.seed, SeedStream::init));
  auto adam = AdamState<Scalar>::zeros_like(params);
  auto batch_rng = make_rng(train.seed, SeedStream::batch);
  auto jitter_rng = make_rng(train.seed, SeedStream::jitter);
  auto dropout_rng = make_rng(train.seed, SeedStream::dropout);

  FitResult result;
  std::ofstream metrics;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    metrics.open(options.out_dir / "metrics.jsonl");
    if (!metrics) throw IoError("cannot open metrics file under " + options.out_dir.string());
    nlohmann::json header = {{"config", options.config_echo}, {"version", CYCLEWALK_GIT_REV}};
    metrics << header.dump() << "\n";
  }

  auto write_ckpt = [&](const ParamSet<Scalar>& p, long step, const std::string& name) {
    if (options.out_dir.empty()) return std::string();
    nlohmann::json meta = {{"config", options.config_echo},
                           {"version", CYCLEWALK_GIT_REV},
                           {"step", step},
                           {"rng", {{"batch", detail::rng_state_string(batch_rng)},
                                    {"jitter", detail::rng_state_string(jitter_rng)},
                                    {"dropout", detail::rng_state_string(dropout_rng)}}}};
    const auto path = options.out_dir / name;
    write_checkpoint(path, p.template cast<double>(), meta);
    return path.string();
  };

  const auto t0 = std::chrono::steady_clock::now();
  for (long step = 1; step <= train.steps; ++step) {
    auto batch = detail::sample_batch(dataset, train.batch, train.clip_len, batch_rng);
    auto step_result = train_step(params, batch, enc, patch, walk_cfg, train.jitter, jitter_rng,
                                  dropout_rng);
    adam_update(params, step_result.grads, adam, Scalar(train.lr), Scalar(train.beta1),
                Scalar(train.beta2), Scalar(train.eps));

    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json line = {{"step", step},
                           {"total", step_result.report.total},
                           {"subcycle", step_result.report.subcycle},
                           {"return_prob", step_result.report.mean_return_probability},
                           {"wall_ms", wall_ms}};
    const bool cadence = train.checkpoint_every > 0 && step % train.checkpoint_every == 0;
    if (cadence) {
      if (options.periodic_eval) {
        line["eval"] = options.periodic_eval(params.template cast<double>(), step);
      }
      write_ckpt(params, step, "checkpoint_" + std::to_string(step) + ".cwck");
    }
    if (metrics.is_open()) metrics << line.dump() << "\n";
    result.history.push_back(std::move(line));
  }

  result.final_checkpoint = write_ckpt(params, train.steps, "checkpoint_final.cwck");
  result.params = params.template cast<double>();
  return result;
}

// Appendix-style online adaptation settings.
struct AdaptConfig {
  int updates = 100;
  int half_window = 10;  // m frames on each side of the current frame
  int every = 5;         // adapt every k-th propagation timestep
  double lr = 1e-4;

  void validate() const {
    if (updates < 0 || half_window < 1 || every < 1 || lr <= 0) {
      throw ConfigError("bad adaptation settings");
    }
  }
};

// Fine-tunes a copy of the parameters on the self-supervised loss over a
// frame window (labels are not an input). Every update uses all stride-1
// clips of length clip_len inside the window, in order.
template <class Scalar>
ParamSet<Scalar> test_time_adapt(const ParamSet<Scalar>& params,
                                 const std::vector<Frame<Scalar>>& window,
                                 const AdaptConfig& adapt, const EncoderConfig& enc,
                                 const PatchGridConfig& patch, const WalkConfig& walk_cfg,
                                 int clip_len, std::uint64_t seed) {
  adapt.validate();
  if (window.size() < 2) throw UsageError("test_time_adapt: window shorter than 2 frames");
  const int t_clip = std::min<int>(clip_len, static_cast<int>(window.size()));

  std::vector<Clip<Scalar>> clips;
  for (std::size_t start = 0; start + static_cast<std::size_t>(t_clip) <= window.size(); ++start) {
    clips.emplace_back(window.begin() + static_cast<long>(start),
                       window.begin() + static_cast<long>(start) + t_clip);
  }

  ParamSet<Scalar> adapted = params;
  auto adam = AdamState<Scalar>::zeros_like(adapted);
  auto jitter_rng = make_rng(seed, SeedStream::adapt);
  auto dropout_rng = make_rng(derive_seed(seed, SeedStream::adapt), SeedStream::dropout);
  for (int update = 0; update < adapt.updates; ++update) {
    auto step_result =
        train_step(adapted, clips, enc, patch, walk_cfg, true, jitter_rng, dropout_rng);
    adam_update(adapted, step_result.grads, adam, Scalar(adapt.lr));
  }
  return adapted;
}

// Dropout- and jitter-free cycle loss of one window, the quantity adaptation
// is expected to reduce.
template <class Scalar>
double window_self_supervised_loss(const ParamSet<Scalar>& params,
                                   const std::vector<Frame<Scalar>>& window,
                                   const EncoderConfig& enc, const PatchGridConfig& patch,
                                   const WalkConfig& walk_cfg, int clip_len) {
  if (window.size() < 2) throw UsageError("window shorter than 2 frames");
  const int t_clip = std::min<int>(clip_len, static_cast<int>(window.size()));
  WalkConfig no_dropout = walk_cfg;
  no_dropout.delta = 0;
  std::vector<Clip<Scalar>> clips;
  for (std::size_t start = 0; start + static_cast<std::size_t>(t_clip) <= window.size(); ++start) {
    clips.emplace_back(window.begin() + static_cast<long>(start),
                       window.begin() + static_cast<long>(start) + t_clip);
  }
  std::mt19937_64 unused_jitter(0), unused_dropout(0);
  auto step = train_step(params, clips, enc, patch, no_dropout, false, unused_jitter,
                         unused_dropout);
  return step.report.total;
}

}  // namespace cyclewalk
