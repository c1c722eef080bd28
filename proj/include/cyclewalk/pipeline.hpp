#pragma once

#include <filesystem>
#include <fstream>
#include <future>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cyclewalk/dataset_io.hpp"
#include "cyclewalk/evalmetrics.hpp"
#include "cyclewalk/gradcheck.hpp"
#include "cyclewalk/labelprop.hpp"
#include "cyclewalk/trainer.hpp"

namespace cyclewalk {

struct DataConfig {
  int train_sequences = 64;
  int heldout_sequences = 20;
  int train_frames = 12;
  int heldout_frames = 8;
};

// Union of the module configs, serialized into every artifact.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  SpriteSceneConfig scene;
  PatchGridConfig patch;
  EncoderConfig encoder;
  WalkConfig walk;
  TrainConfig train;
  PropagationConfig prop;
  AdaptConfig adapt;
  DataConfig data;

  RunConfig() {
    // Desk-scale defaults: 64x64 frames, 7x7 grid of 16px patches, noise
    // strong enough that raw pixel identity does not solve matching.
    scene.brightness_jitter = 0.1;
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& cfg) {
  j = nlohmann::json{
      {"seed", cfg.seed},
      {"out", cfg.out_dir.string()},
      {"scene",
       {{"height", cfg.scene.height},
        {"width", cfg.scene.width},
        {"channels", cfg.scene.channels},
        {"frames", cfg.scene.frames},
        {"sprites", cfg.scene.sprite_count},
        {"sprite_min", cfg.scene.sprite_min},
        {"sprite_max", cfg.scene.sprite_max},
        {"speed_min", cfg.scene.speed_min},
        {"speed_max", cfg.scene.speed_max},
        {"brightness_jitter", cfg.scene.brightness_jitter},
        {"jitter_smoothing", cfg.scene.jitter_smoothing},
        {"allow_occlusion", cfg.scene.allow_occlusion},
        {"speed_multiplier", cfg.scene.speed_multiplier},
        {"texture_smoothing", cfg.scene.texture_smoothing}}},
      {"patch",
       {{"size", cfg.patch.patch_size},
        {"stride", cfg.patch.stride},
        {"jitter_scale", {cfg.patch.jitter_scale_lo, cfg.patch.jitter_scale_hi}},
        {"jitter_aspect", {cfg.patch.jitter_aspect_lo, cfg.patch.jitter_aspect_hi}}}},
      {"encoder",
       {{"patch_size", cfg.encoder.patch_size},
        {"channels", cfg.encoder.channels},
        {"hidden", cfg.encoder.hidden_widths},
        {"embed_dim", cfg.encoder.embed_dim}}},
      {"walk",
       {{"tau", cfg.walk.tau},
        {"delta", cfg.walk.delta},
        {"clip_len", cfg.walk.clip_len},
        {"dropout_form",
         cfg.walk.dropout_form == DropoutForm::pre_softmax ? "pre_softmax" : "renormalized"}}},
      {"train",
       {{"lr", cfg.train.lr},
        {"beta1", cfg.train.beta1},
        {"beta2", cfg.train.beta2},
        {"eps", cfg.train.eps},
        {"clip_len", cfg.train.clip_len},
        {"batch", cfg.train.batch},
        {"steps", cfg.train.steps},
        {"precision", cfg.train.precision},
        {"seed", cfg.train.seed},
        {"checkpoint_every", cfg.train.checkpoint_every},
        {"jitter", cfg.train.jitter}}},
      {"prop",
       {{"k_nn", cfg.prop.k_nn},
        {"context", cfg.prop.context},
        {"radius", cfg.prop.radius},
        {"tau", cfg.prop.tau}}},
      {"adapt",
       {{"updates", cfg.adapt.updates},
        {"half_window", cfg.adapt.half_window},
        {"every", cfg.adapt.every},
        {"lr", cfg.adapt.lr}}},
      {"data",
       {{"train_sequences", cfg.data.train_sequences},
        {"heldout_sequences", cfg.data.heldout_sequences},
        {"train_frames", cfg.data.train_frames},
        {"heldout_frames", cfg.data.heldout_frames}}}};
}

inline void from_json(const nlohmann::json& j, RunConfig& cfg) {
  auto get = [](const nlohmann::json& obj, const char* key, auto& into) {
    if (obj.contains(key)) obj.at(key).get_to(into);
  };
  get(j, "seed", cfg.seed);
  if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
  if (j.contains("scene")) {
    const auto& s = j.at("scene");
    get(s, "height", cfg.scene.height);
    get(s, "width", cfg.scene.width);
    get(s, "channels", cfg.scene.channels);
    get(s, "frames", cfg.scene.frames);
    get(s, "sprites", cfg.scene.sprite_count);
    get(s, "sprite_min", cfg.scene.sprite_min);
    get(s, "sprite_max", cfg.scene.sprite_max);
    get(s, "speed_min", cfg.scene.speed_min);
    get(s, "speed_max", cfg.scene.speed_max);
    get(s, "brightness_jitter", cfg.scene.brightness_jitter);
    get(s, "jitter_smoothing", cfg.scene.jitter_smoothing);
    get(s, "allow_occlusion", cfg.scene.allow_occlusion);
    get(s, "speed_multiplier", cfg.scene.speed_multiplier);
    get(s, "texture_smoothing", cfg.scene.texture_smoothing);
  }
  if (j.contains("patch")) {
    const auto& p = j.at("patch");
    get(p, "size", cfg.patch.patch_size);
    get(p, "stride", cfg.patch.stride);
    if (p.contains("jitter_scale")) {
      cfg.patch.jitter_scale_lo = p.at("jitter_scale").at(0).get<double>();
      cfg.patch.jitter_scale_hi = p.at("jitter_scale").at(1).get<double>();
    }
    if (p.contains("jitter_aspect")) {
      cfg.patch.jitter_aspect_lo = p.at("jitter_aspect").at(0).get<double>();
      cfg.patch.jitter_aspect_hi = p.at("jitter_aspect").at(1).get<double>();
    }
  }
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    get(e, "patch_size", cfg.encoder.patch_size);
    get(e, "channels", cfg.encoder.channels);
    get(e, "hidden", cfg.encoder.hidden_widths);
    get(e, "embed_dim", cfg.encoder.embed_dim);
  }
  if (j.contains("walk")) {
    const auto& w = j.at("walk");
    get(w, "tau", cfg.walk.tau);
    get(w, "delta", cfg.walk.delta);
    get(w, "clip_len", cfg.walk.clip_len);
    if (w.contains("dropout_form")) {
      const std::string form = w.at("dropout_form").get<std::string>();
      if (form == "pre_softmax") {
        cfg.walk.dropout_form = DropoutForm::pre_softmax;
      } else if (form == "renormalized") {
        cfg.walk.dropout_form = DropoutForm::renormalized;
      } else {
        throw ConfigError("unknown dropout form: " + form);
      }
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    get(t, "lr", cfg.train.lr);
    get(t, "beta1", cfg.train.beta1);
    get(t, "beta2", cfg.train.beta2);
    get(t, "eps", cfg.train.eps);
    get(t, "clip_len", cfg.train.clip_len);
    get(t, "batch", cfg.train.batch);
    get(t, "steps", cfg.train.steps);
    get(t, "precision", cfg.train.precision);
    get(t, "seed", cfg.train.seed);
    get(t, "checkpoint_every", cfg.train.checkpoint_every);
    get(t, "jitter", cfg.train.jitter);
  }
  if (j.contains("prop")) {
    const auto& p = j.at("prop");
    get(p, "k_nn", cfg.prop.k_nn);
    get(p, "context", cfg.prop.context);
    get(p, "radius", cfg.prop.radius);
    get(p, "tau", cfg.prop.tau);
  }
  if (j.contains("adapt")) {
    const auto& a = j.at("adapt");
    get(a, "updates", cfg.adapt.updates);
    get(a, "half_window", cfg.adapt.half_window);
    get(a, "every", cfg.adapt.every);
    get(a, "lr", cfg.adapt.lr);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    get(d, "train_sequences", cfg.data.train_sequences);
    get(d, "heldout_sequences", cfg.data.heldout_sequences);
    get(d, "train_frames", cfg.data.train_frames);
    get(d, "heldout_frames", cfg.data.heldout_frames);
  }
}

struct LabeledSequence {
  FrameSequence<double> frames;
  GroundTruth gt;
};

// Train and held-out splits draw from disjoint seed ranges of the data
// stream: train sequence i uses data_seed + i, held-out sequence i uses
// data_seed + 1'000'000 + i.
inline std::uint64_t sequence_seed(std::uint64_t master, bool heldout, int index) {
  return derive_seed(master, SeedStream::data) + (heldout ? 1000000u : 0u) +
         static_cast<std::uint64_t>(index);
}

inline std::vector<LabeledSequence> generate_dataset(const SpriteSceneConfig& scene,
                                                     std::uint64_t master, bool heldout, int count,
                                                     int frames) {
  SpriteSceneConfig cfg = scene;
  cfg.frames = frames;
  std::vector<LabeledSequence> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    auto [seq, gt] = generate_sequence<double>(cfg, sequence_seed(master, heldout, i));
    out.push_back({std::move(seq), std::move(gt)});
  }
  return out;
}

inline std::vector<FrameSequence<double>> frames_only(const std::vector<LabeledSequence>& seqs) {
  std::vector<FrameSequence<double>> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(s.frames);
  return out;
}

// Per-frame embeddings of unjittered patches.
inline std::vector<Matrix<double>> sequence_embeddings(const ParamSet<double>& params,
                                                       const EncoderConfig& enc,
                                                       const PatchGridConfig& patch,
                                                       const FrameSequence<double>& seq) {
  std::vector<Matrix<double>> out;
  out.reserve(static_cast<std::size_t>(seq.length()));
  for (const auto& frame : seq.frames) {
    out.push_back(embed_nodes(params, enc, extract_patches(frame, patch)));
  }
  return out;
}

// Held-out walk accuracy per hop: transitions are dropout-free softmaxes of
// the learned energies, pooled over every admissible start frame.
inline std::vector<double> evaluate_walk_accuracy(const ParamSet<double>& params,
                                                  const EncoderConfig& enc,
                                                  const PatchGridConfig& patch, double tau,
                                                  const std::vector<LabeledSequence>& seqs,
                                                  int max_hop) {
  std::vector<WalkAccuracy> per_hop(static_cast<std::size_t>(max_hop));
  for (const auto& labeled : seqs) {
    const auto geom =
        grid_geometry(labeled.frames.frames[0].rows(), labeled.frames.frames[0].cols(), patch);
    const auto embeddings = sequence_embeddings(params, enc, patch, labeled.frames);
    std::vector<Matrix<double>> transitions;
    for (std::size_t t = 0; t + 1 < embeddings.size(); ++t) {
      transitions.push_back(
          row_softmax(transition_energies(embeddings[t], embeddings[t + 1], tau)));
    }
    for (int hop = 1; hop <= max_hop; ++hop) {
      for (std::size_t t = 0; t + static_cast<std::size_t>(hop) < embeddings.size(); ++t) {
        std::vector<Matrix<double>> chain(transitions.begin() + static_cast<long>(t),
                                          transitions.begin() + static_cast<long>(t) + hop);
        const Matrix<double> abar = walk(chain);
        const auto labels = correspondence_labels(labeled.gt, geom, static_cast<int>(t), hop);
        if (labels.valid_count() == 0) continue;
        const auto counts = walk_accuracy_counts(abar, labels);
        per_hop[static_cast<std::size_t>(hop - 1)].correct += counts.correct;
        per_hop[static_cast<std::size_t>(hop - 1)].valid += counts.valid;
      }
    }
  }
  std::vector<double> out;
  out.reserve(per_hop.size());
  for (const auto& acc : per_hop) out.push_back(acc.fraction());
  return out;
}

struct PropagationEval {
  double mean_iou = 0;
  int fallback_count = 0;
  std::vector<double> per_sequence;
};

inline PropagationEval evaluate_propagation(const ParamSet<double>& params,
                                            const EncoderConfig& enc,
                                            const PatchGridConfig& patch,
                                            const PropagationConfig& prop,
                                            const std::vector<LabeledSequence>& seqs) {
  PropagationEval eval;
  for (const auto& labeled : seqs) {
    const auto geom =
        grid_geometry(labeled.frames.frames[0].rows(), labeled.frames.frames[0].cols(), patch);
    const auto embeddings = sequence_embeddings(params, enc, patch, labeled.frames);
    const Matrix<double> first = grid_labels<double>(labeled.gt, geom, 0);
    const auto result = propagate_video(embeddings, first, geom, prop);
    eval.fallback_count += result.fallback_count;

    std::vector<std::vector<int>> gt_hard;
    for (int t = 0; t < labeled.frames.length(); ++t) {
      const Matrix<double> l = grid_labels<double>(labeled.gt, geom, t);
      std::vector<int> hard(static_cast<std::size_t>(l.rows()));
      for (Eigen::Index i = 0; i < l.rows(); ++i) {
        hard[static_cast<std::size_t>(i)] = argmax_row(l, static_cast<int>(i));
      }
      gt_hard.push_back(std::move(hard));
    }
    eval.per_sequence.push_back(propagation_score(result.hard, gt_hard));
  }
  if (eval.per_sequence.empty()) throw UsageError("evaluate_propagation: no sequences");
  double acc = 0;
  for (double v : eval.per_sequence) acc += v;
  eval.mean_iou = acc / static_cast<double>(eval.per_sequence.size());
  return eval;
}

// End-to-end training from a RunConfig: generates (or accepts) training data,
// fits, and returns final parameters. Heavy path shared by the CLI, sweeps,
// and the acceptance suite.
inline FitResult train_pipeline(const RunConfig& cfg,
                                const std::vector<FrameSequence<double>>& train_frames,
                                const FitOptions& options) {
  if (cfg.train.precision == 64) {
    return fit<double>(train_frames, cfg.train, cfg.encoder, cfg.patch, cfg.walk, options);
  }
  std::vector<FrameSequence<float>> narrow;
  narrow.reserve(train_frames.size());
  for (const auto& seq : train_frames) {
    FrameSequence<float> f;
    f.frame_rate_tag = seq.frame_rate_tag;
    for (const auto& frame : seq.frames) {
      Frame<float> nf;
      for (const auto& plane : frame.channels) nf.channels.push_back(plane.cast<float>());
      f.frames.push_back(std::move(nf));
    }
    narrow.push_back(std::move(f));
  }
  return fit<float>(narrow, cfg.train, cfg.encoder, cfg.patch, cfg.walk, options);
}

struct GradcheckSummary {
  double max_rel_err = 0;
  int cases = 0;
};

// End-to-end gradient check: encoder parameters against the full training
// loss (patches, jitter, palindrome, dropout, sub-cycles) on 3x3-grid scenes
// with d=4, central differences at h=1e-5 in 64-bit.
inline GradcheckSummary run_gradcheck_suite(std::uint64_t master_seed,
                                            const std::vector<int>& clip_lens, int seeds_per_len) {
  SpriteSceneConfig scene;
  scene.height = 24;
  scene.width = 24;
  scene.frames = 6;
  scene.sprite_count = 1;
  scene.sprite_min = 6;
  scene.sprite_max = 8;
  scene.speed_min = 2;
  scene.speed_max = 4;
  scene.brightness_jitter = 0.1;
  PatchGridConfig patch{8, 8};
  EncoderConfig enc;
  enc.patch_size = 8;
  enc.channels = 1;
  enc.hidden_widths = {12};
  enc.embed_dim = 4;
  WalkConfig walk_cfg;
  walk_cfg.tau = 0.3;   // softer than the training default so probabilities
  walk_cfg.delta = 0.1; // stay away from the underflow regime of tau=0.07

  GradcheckSummary summary;
  std::uint64_t case_seed = derive_seed(master_seed, SeedStream::eval);
  for (int clip_len : clip_lens) {
    for (int rep = 0; rep < seeds_per_len; ++rep, ++case_seed) {
      auto [seq, gt] = generate_sequence<double>(scene, case_seed);
      std::vector<Clip<double>> batch = {
          Clip<double>(seq.frames.begin(), seq.frames.begin() + clip_len)};
      auto params = init_encoder<double>(enc, case_seed + 7);
      LossFn<double> fn = [&](const ParamSet<double>& p, std::vector<Matrix<double>>* grads) {
        std::mt19937_64 jit(splitmix64(case_seed + 1));
        std::mt19937_64 drop(splitmix64(case_seed + 2));
        auto result = train_step(p, batch, enc, patch, walk_cfg, true, jit, drop);
        if (grads) *grads = result.grads;
        return result.report.total;
      };
      const double err = finite_diff_check(fn, params, 1e-5, 8, case_seed + 3);
      summary.max_rel_err = std::max(summary.max_rel_err, err);
      summary.cases += 1;
    }
  }
  return summary;
}

struct LemmaSummary {
  double min_lambda = 1;
  double max_coeff_diff = 0;
  double max_grad_diff = 0;
  int draws = 0;
};

// Random draws of (q, u, duplicates, distractors) on the unit sphere,
// checking the nonnegative positive-direction coefficient and the
// autodiff/closed-form agreement.
inline LemmaSummary run_lemma_suite(int draws, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, SeedStream::lemma));
  const int dim = 8;
  auto random_unit = [&](int rows) {
    Matrix<double> m(rows, dim);
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      *(m.data() + k) = 2.0 * uniform01(rng) - 1.0;
    }
    for (int i = 0; i < rows; ++i) m.row(i).normalize();
    return m;
  };
  LemmaSummary summary;
  summary.draws = draws;
  for (int i = 0; i < draws; ++i) {
    const int dups = static_cast<int>(rng() % 9);  // |V-| in 0..8
    const int extras = static_cast<int>(rng() % 7);
    auto check = false_negative_check(random_unit(1), random_unit(1), random_unit(extras), dups);
    summary.min_lambda = std::min(summary.min_lambda, check.lambda_analytic);
    summary.max_coeff_diff =
        std::max(summary.max_coeff_diff, std::abs(check.lambda_analytic - check.lambda_autodiff));
    summary.max_grad_diff = std::max(summary.max_grad_diff, check.max_grad_abs_diff);
  }
  return summary;
}

struct AdaptationRun {
  PropagationResult<double> propagation;
  std::vector<double> window_loss_before, window_loss_after;  // one pair per adapted window
  int windows_adapted = 0;
};

// Online pass over one video: every cfg.adapt.every timesteps the encoder is
// fine-tuned on the surrounding unlabeled window before labels are propagated
// to the current frame. Past queue entries keep the embeddings they were
// given when processed.
inline AdaptationRun adapt_and_propagate(const ParamSet<double>& params,
                                         const LabeledSequence& labeled, const RunConfig& cfg) {
  const auto geom =
      grid_geometry(labeled.frames.frames[0].rows(), labeled.frames.frames[0].cols(), cfg.patch);
  const Matrix<double> first = grid_labels<double>(labeled.gt, geom, 0);
  const int total_frames = labeled.frames.length();

  AdaptationRun run;
  auto harden = [](const Matrix<double>& soft) {
    std::vector<int> hard(static_cast<std::size_t>(soft.rows()));
    for (Eigen::Index i = 0; i < soft.rows(); ++i) {
      hard[static_cast<std::size_t>(i)] = argmax_row(soft, static_cast<int>(i));
    }
    return hard;
  };

  ParamSet<double> current = params;
  auto embed_frame = [&](int t) {
    return embed_nodes(current, cfg.encoder,
                       extract_patches(labeled.frames.frames[static_cast<std::size_t>(t)],
                                       cfg.patch));
  };

  run.propagation.soft.push_back(first);
  run.propagation.hard.push_back(harden(first));
  ContextQueue<double> queue(SourceFrame<double>{embed_frame(0), first, 0}, cfg.prop.context);

  for (int t = 1; t < total_frames; ++t) {
    if ((t - 1) % cfg.adapt.every == 0 && cfg.adapt.updates > 0) {
      const int lo = std::max(0, t - cfg.adapt.half_window);
      const int hi = std::min(total_frames - 1, t + cfg.adapt.half_window);
      std::vector<Frame<double>> window(labeled.frames.frames.begin() + lo,
                                        labeled.frames.frames.begin() + hi + 1);
      run.window_loss_before.push_back(window_self_supervised_loss(
          current, window, cfg.encoder, cfg.patch, cfg.walk, cfg.train.clip_len));
      current = test_time_adapt(current, window, cfg.adapt, cfg.encoder, cfg.patch, cfg.walk,
                                cfg.train.clip_len,
                                derive_seed(cfg.seed, SeedStream::adapt) +
                                    static_cast<std::uint64_t>(t));
      run.window_loss_after.push_back(window_self_supervised_loss(
          current, window, cfg.encoder, cfg.patch, cfg.walk, cfg.train.clip_len));
      run.windows_adapted += 1;
    }
    const auto sources = queue.snapshot();
    const Matrix<double> q_target = embed_frame(t);
    Kernel<double> kernel = build_kernel(q_target, sources, geom, cfg.prop);
    run.propagation.fallback_count += kernel.fallback_count();
    Matrix<double> soft = apply_kernel(kernel, sources);
    run.propagation.hard.push_back(harden(soft));
    queue.push(SourceFrame<double>{q_target, soft, t});
    run.propagation.soft.push_back(std::move(soft));
  }
  return run;
}

enum class SweepAxis { edge_dropout, path_length, frame_rate, context_length };

inline SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "edge-dropout") return SweepAxis::edge_dropout;
  if (name == "path-length") return SweepAxis::path_length;
  if (name == "frame-rate") return SweepAxis::frame_rate;
  if (name == "context-length") return SweepAxis::context_length;
  throw ConfigError("unknown sweep axis: " + name +
                    " (expected edge-dropout, path-length, frame-rate, context-length)");
}

struct SweepCell {
  double value = 0;
  bool failed = false;
  std::string error;
  nlohmann::json metrics;
};

// One full train+eval per value (context-length only re-evaluates a single
// trained model). Seeds are identical across cells so differences are
// attributable to the axis. Cells run on up to CYCLEWALK_THREADS workers.
inline std::vector<SweepCell> run_sweep(SweepAxis axis, const std::vector<double>& values,
                                        const RunConfig& base) {
  auto run_cell = [&](double value) {
    SweepCell cell;
    cell.value = value;
    try {
      RunConfig cfg = base;
      switch (axis) {
        case SweepAxis::edge_dropout:
          if (value < 0 || value >= 1) throw ConfigError("edge dropout value outside [0,1)");
          cfg.walk.delta = value;
          break;
        case SweepAxis::path_length:
          if (value < 2) throw ConfigError("clip length must be >= 2");
          cfg.train.clip_len = static_cast<int>(value);
          cfg.walk.clip_len = static_cast<int>(value);
          if (cfg.data.train_frames < cfg.train.clip_len) {
            cfg.data.train_frames = cfg.train.clip_len;
          }
          break;
        case SweepAxis::frame_rate:
          if (value < 0) throw ConfigError("speed multiplier must be >= 0");
          cfg.scene.speed_multiplier = value;
          break;
        case SweepAxis::context_length:
          if (value < 1) throw ConfigError("context length must be >= 1");
          cfg.prop.context = static_cast<int>(value);
          break;
      }

      auto train_set = generate_dataset(cfg.scene, cfg.seed, false, cfg.data.train_sequences,
                                        cfg.data.train_frames);
      // Held-out data always comes from the base scene so cells stay comparable.
      SpriteSceneConfig heldout_scene = base.scene;
      heldout_scene.speed_multiplier = base.scene.speed_multiplier;
      auto heldout = generate_dataset(heldout_scene, cfg.seed, true, cfg.data.heldout_sequences,
                                      cfg.data.heldout_frames);

      const auto fit_result = train_pipeline(cfg, frames_only(train_set), FitOptions{});
      const int max_hop = std::min(3, cfg.data.heldout_frames - 1);
      const auto hops = evaluate_walk_accuracy(fit_result.params, cfg.encoder, cfg.patch,
                                               cfg.walk.tau, heldout, max_hop);
      const auto prop = evaluate_propagation(fit_result.params, cfg.encoder, cfg.patch, cfg.prop,
                                             heldout);
      cell.metrics = {{"walk_accuracy_per_hop", hops},
                      {"mean_iou", prop.mean_iou},
                      {"final_loss", fit_result.history.empty()
                                         ? 0.0
                                         : fit_result.history.back().at("total").get<double>()}};
    } catch (const std::exception& err) {
      cell.failed = true;
      cell.error = err.what();
    }
    return cell;
  };

  // context-length is evaluation-only: train once, vary the queue.
  if (axis == SweepAxis::context_length) {
    std::vector<SweepCell> cells;
    try {
      auto train_set = generate_dataset(base.scene, base.seed, false, base.data.train_sequences,
                                        base.data.train_frames);
      auto heldout = generate_dataset(base.scene, base.seed, true, base.data.heldout_sequences,
                                      base.data.heldout_frames);
      const auto fit_result = train_pipeline(base, frames_only(train_set), FitOptions{});
      for (double value : values) {
        SweepCell cell;
        cell.value = value;
        try {
          PropagationConfig prop = base.prop;
          prop.context = static_cast<int>(value);
          const auto eval =
              evaluate_propagation(fit_result.params, base.encoder, base.patch, prop, heldout);
          cell.metrics = {{"mean_iou", eval.mean_iou}};
        } catch (const std::exception& err) {
          cell.failed = true;
          cell.error = err.what();
        }
        cells.push_back(std::move(cell));
      }
    } catch (const std::exception& err) {
      for (double value : values) {
        SweepCell cell;
        cell.value = value;
        cell.failed = true;
        cell.error = err.what();
        cells.push_back(std::move(cell));
      }
    }
    return cells;
  }

  const int workers = thread_cap(static_cast<int>(values.size()));
  std::vector<SweepCell> cells(values.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < values.size(); ++i) cells[i] = run_cell(values[i]);
    return cells;
  }
  std::vector<std::future<SweepCell>> futures;
  futures.reserve(values.size());
  std::size_t next = 0;
  while (next < values.size() || !futures.empty()) {
    while (next < values.size() && static_cast<int>(futures.size()) < workers) {
      futures.push_back(std::async(std::launch::async, run_cell, values[next]));
      ++next;
    }
    const std::size_t done_index = next - futures.size();
    cells[done_index] = futures.front().get();
    futures.erase(futures.begin());
  }
  return cells;
}

inline nlohmann::json sweep_table(const std::string& axis_name,
                                  const std::vector<SweepCell>& cells, const RunConfig& base) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& cell : cells) {
    nlohmann::json row = {{"value", cell.value}, {"failed", cell.failed}};
    if (cell.failed) {
      row["error"] = cell.error;
    } else {
      row["metrics"] = cell.metrics;
    }
    rows.push_back(std::move(row));
  }
  nlohmann::json base_echo;
  to_json(base_echo, base);
  return {{"axis", axis_name},
          {"cells", rows},
          {"config", base_echo},
          {"version", CYCLEWALK_GIT_REV}};
}

inline std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::string csv = "value,walk_acc_hop1,walk_acc_hop2,walk_acc_hop3,mean_iou,failed\n";
  for (const auto& cell : cells) {
    csv += std::to_string(cell.value) + ",";
    for (int hop = 0; hop < 3; ++hop) {
      if (!cell.failed && cell.metrics.contains("walk_accuracy_per_hop") &&
          hop < static_cast<int>(cell.metrics["walk_accuracy_per_hop"].size())) {
        csv += std::to_string(cell.metrics["walk_accuracy_per_hop"][hop].get<double>());
      }
      csv += ",";
    }
    if (!cell.failed && cell.metrics.contains("mean_iou")) {
      csv += std::to_string(cell.metrics["mean_iou"].get<double>());
    }
    csv += cell.failed ? ",1\n" : ",0\n";
  }
  return csv;
}

}  // namespace cyclewalk
