#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cyclewalk/pipeline.hpp"

namespace cyclewalk {

namespace cli_detail {

inline nlohmann::json config_echo(const RunConfig& cfg) {
  nlohmann::json j;
  to_json(j, cfg);
  return j;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& payload) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << payload.dump(2) << "\n";
}

inline std::vector<LabeledSequence> load_dataset(const std::filesystem::path& path) {
  std::vector<LabeledSequence> out;
  for (const auto& file : list_sequence_files(path)) {
    auto stored = read_sequence(file);
    out.push_back({std::move(stored.frames), std::move(stored.gt)});
  }
  return out;
}

// "none" (or empty) asks for a fresh random encoder from the init stream.
inline ParamSet<double> resolve_params(const std::string& checkpoint, const RunConfig& cfg) {
  if (checkpoint.empty() || checkpoint == "none") {
    return init_encoder<double>(cfg.encoder, derive_seed(cfg.seed, SeedStream::init));
  }
  return read_checkpoint(checkpoint).params;
}

inline nlohmann::json predictions_json(const PropagationResult<double>& result,
                                       const GridGeometry& geom) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t t = 0; t < result.hard.size(); ++t) {
    nlohmann::json soft = nlohmann::json::array();
    const auto& mat = result.soft[t];
    for (Eigen::Index i = 0; i < mat.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(mat.cols()));
      for (Eigen::Index c = 0; c < mat.cols(); ++c) row[static_cast<std::size_t>(c)] = mat(i, c);
      soft.push_back(row);
    }
    frames.push_back({{"frame", t},
                      {"grid", {geom.grid_rows, geom.grid_cols}},
                      {"hard_labels", result.hard[t]},
                      {"soft_scores", soft}});
  }
  return frames;
}

inline std::vector<std::vector<int>> gt_hard_labels(const LabeledSequence& labeled,
                                                    const GridGeometry& geom) {
  std::vector<std::vector<int>> out;
  for (int t = 0; t < labeled.frames.length(); ++t) {
    const Matrix<double> l = grid_labels<double>(labeled.gt, geom, t);
    std::vector<int> hard(static_cast<std::size_t>(l.rows()));
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      hard[static_cast<std::size_t>(i)] = argmax_row(l, static_cast<int>(i));
    }
    out.push_back(std::move(hard));
  }
  return out;
}

}  // namespace cli_detail

inline int run_cli(int argc, char** argv) {
  using nlohmann::json;
  namespace fs = std::filesystem;

  RunConfig cfg;
  // Precedence: defaults < config file < flags. The config file is applied
  // before CLI11 parses, so bound flags overwrite only when passed.
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      std::ifstream in(argv[i + 1]);
      if (!in) {
        std::cerr << "error: cannot open config file " << argv[i + 1] << "\n";
        return 1;
      }
      json parsed;
      try {
        in >> parsed;
        from_json(parsed, cfg);
      } catch (const std::exception& err) {
        std::cerr << "error: bad config file " << argv[i + 1] << ": " << err.what() << "\n";
        return 1;
      }
    }
  }

  CLI::App app{"contrastive random walk on synthetic video: self-supervised "
               "space-time correspondence at desk scale"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (applied before flags)");

  std::string out_dir = cfg.out_dir.string();
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", cfg.seed, "master seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--config", config_path, "JSON config file (applied before flags)");
  };

  auto* synth = app.add_subcommand("synth", "generate sprite sequences as .cwvd files");
  add_common(synth);
  int synth_count = 1;
  bool synth_heldout = false;
  synth->add_option("--count", synth_count, "number of sequences");
  synth->add_option("--frames", cfg.scene.frames, "frames per sequence");
  synth->add_option("--sprites", cfg.scene.sprite_count, "sprite count");
  synth->add_option("--speed-mult", cfg.scene.speed_multiplier,
                    "frame-rate analog (0 = identical frames)");
  synth->add_option("--brightness-jitter", cfg.scene.brightness_jitter,
                    "per-pixel noise amplitude");
  synth->add_flag("--occlusion", cfg.scene.allow_occlusion, "allow overlapping placement");
  synth->add_flag("--heldout", synth_heldout, "draw from the held-out seed range");

  auto* train = app.add_subcommand("train", "fit the encoder with the palindrome cycle objective");
  add_common(train);
  std::string train_data, train_eval_data;
  train->add_option("--data", train_data, "dataset dir of .cwvd files (default: generate)");
  train->add_option("--eval-data", train_eval_data, "held-out dir for periodic eval");
  train->add_option("--steps", cfg.train.steps, "optimization steps");
  train->add_option("--batch", cfg.train.batch, "clips per step");
  train->add_option("--clip-len", cfg.train.clip_len, "frames per clip (T)");
  train->add_option("--lr", cfg.train.lr, "learning rate");
  train->add_option("--tau", cfg.walk.tau, "softmax temperature");
  train->add_option("--delta", cfg.walk.delta, "edge dropout rate");
  train->add_option("--precision", cfg.train.precision, "32 or 64");
  train->add_option("--checkpoint-every", cfg.train.checkpoint_every, "checkpoint cadence");

  auto* eval_walk = app.add_subcommand("eval-walk", "walk accuracy per hop on labeled sequences");
  add_common(eval_walk);
  std::string ew_checkpoint = "none", ew_data;
  int ew_max_hop = 3;
  eval_walk->add_option("--checkpoint", ew_checkpoint,
                        "checkpoint path, or 'none' for random init");
  eval_walk->add_option("--data", ew_data, "dataset dir")->required();
  eval_walk->add_option("--max-hop", ew_max_hop, "longest hop to score");
  eval_walk->add_option("--tau", cfg.walk.tau, "softmax temperature");

  auto* propagate = app.add_subcommand("propagate", "k-NN label propagation and node IoU");
  add_common(propagate);
  std::string pr_checkpoint = "none", pr_data;
  propagate->add_option("--checkpoint", pr_checkpoint, "checkpoint path, or 'none'");
  propagate->add_option("--data", pr_data, "dataset dir")->required();
  propagate->add_option("--knn", cfg.prop.k_nn, "neighbors per target node");
  propagate->add_option("--context", cfg.prop.context, "context queue length m");
  propagate->add_option("--radius", cfg.prop.radius, "spatial radius in grid units");

  auto* adapt = app.add_subcommand("adapt", "test-time adaptation then propagation");
  add_common(adapt);
  std::string ad_checkpoint, ad_data;
  adapt->add_option("--checkpoint", ad_checkpoint, "checkpoint path")->required();
  adapt->add_option("--data", ad_data, "dataset dir")->required();
  adapt->add_option("--updates", cfg.adapt.updates, "Adam updates per window");
  adapt->add_option("--every", cfg.adapt.every, "adapt every k-th timestep");
  adapt->add_option("--window", cfg.adapt.half_window, "half window m");

  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference suite over the full pipeline");
  add_common(gradcheck);
  int gc_reps = 3;
  gradcheck->add_option("--reps", gc_reps, "seeds per clip length");

  auto* sweep = app.add_subcommand("sweep", "train/eval across one ablation axis");
  add_common(sweep);
  std::string sw_axis;
  std::vector<double> sw_values;
  sweep->add_option("--axis", sw_axis, "edge-dropout | path-length | frame-rate | context-length")
      ->required();
  sweep->add_option("--values", sw_values, "axis values")->required()->delimiter(',');
  sweep->add_option("--steps", cfg.train.steps, "training steps per cell");

  auto* lemma = app.add_subcommand("lemma", "false-negative coefficient property run");
  add_common(lemma);
  int lm_draws = 10000;
  lemma->add_option("--draws", lm_draws, "random draws");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  cfg.out_dir = out_dir;
  cfg.train.seed = cfg.seed;

  try {
    if (*synth) {
      fs::create_directories(cfg.out_dir);
      json echo = {{"config", cli_detail::config_echo(cfg)}, {"version", CYCLEWALK_GIT_REV}};
      for (int i = 0; i < synth_count; ++i) {
        auto [seq, gt] =
            generate_sequence<double>(cfg.scene, sequence_seed(cfg.seed, synth_heldout, i));
        char name[32];
        std::snprintf(name, sizeof(name), "seq_%05d.cwvd", i);
        write_sequence(cfg.out_dir / name, seq, gt, cfg.scene.speed_multiplier, echo);
      }
      cli_detail::write_json(cfg.out_dir / "synth_config.json", echo);
      std::cout << "wrote " << synth_count << " sequence(s) to " << cfg.out_dir << "\n";
      return 0;
    }

    if (*train) {
      std::vector<FrameSequence<double>> dataset;
      if (!train_data.empty()) {
        for (auto& labeled : cli_detail::load_dataset(train_data)) {
          dataset.push_back(std::move(labeled.frames));
        }
      } else {
        dataset = frames_only(generate_dataset(cfg.scene, cfg.seed, false,
                                               cfg.data.train_sequences, cfg.data.train_frames));
      }
      FitOptions options;
      options.out_dir = cfg.out_dir;
      options.config_echo = cli_detail::config_echo(cfg);
      std::vector<LabeledSequence> eval_set;
      if (!train_eval_data.empty()) {
        eval_set = cli_detail::load_dataset(train_eval_data);
        options.periodic_eval = [&](const ParamSet<double>& params, long) {
          const int max_hop = std::min<int>(3, eval_set[0].frames.length() - 1);
          const auto hops = evaluate_walk_accuracy(params, cfg.encoder, cfg.patch, cfg.walk.tau,
                                                   eval_set, max_hop);
          return json{{"walk_accuracy_per_hop", hops}};
        };
      }
      auto result = train_pipeline(cfg, dataset, options);
      std::cout << "trained " << cfg.train.steps << " steps; final loss "
                << (result.history.empty() ? 0.0
                                           : result.history.back().at("total").get<double>())
                << "; checkpoint " << result.final_checkpoint << "\n";
      return 0;
    }

    if (*eval_walk) {
      auto data = cli_detail::load_dataset(ew_data);
      auto params = cli_detail::resolve_params(ew_checkpoint, cfg);
      const auto hops =
          evaluate_walk_accuracy(params, cfg.encoder, cfg.patch, cfg.walk.tau, data, ew_max_hop);
      json payload = {{"walk_accuracy_per_hop", hops},
                      {"checkpoint", ew_checkpoint},
                      {"config", cli_detail::config_echo(cfg)},
                      {"version", CYCLEWALK_GIT_REV}};
      cli_detail::write_json(cfg.out_dir / "eval_walk.json", payload);
      for (std::size_t h = 0; h < hops.size(); ++h) {
        std::cout << "hop " << (h + 1) << ": accuracy " << hops[h] << "\n";
      }
      return 0;
    }

    if (*propagate) {
      auto data = cli_detail::load_dataset(pr_data);
      auto params = cli_detail::resolve_params(pr_checkpoint, cfg);
      const auto eval = evaluate_propagation(params, cfg.encoder, cfg.patch, cfg.prop, data);
      json per_seq = json::array();
      for (std::size_t s = 0; s < data.size(); ++s) {
        const auto geom = grid_geometry(data[s].frames.frames[0].rows(),
                                        data[s].frames.frames[0].cols(), cfg.patch);
        const auto embeddings =
            sequence_embeddings(params, cfg.encoder, cfg.patch, data[s].frames);
        const auto result = propagate_video(
            embeddings, Matrix<double>(grid_labels<double>(data[s].gt, geom, 0)), geom, cfg.prop);
        per_seq.push_back({{"sequence", s},
                           {"iou", eval.per_sequence[s]},
                           {"frames", cli_detail::predictions_json(result, geom)}});
      }
      json payload = {{"mean_iou", eval.mean_iou},
                      {"fallback_count", eval.fallback_count},
                      {"per_sequence", per_seq},
                      {"checkpoint", pr_checkpoint},
                      {"config", cli_detail::config_echo(cfg)},
                      {"version", CYCLEWALK_GIT_REV}};
      cli_detail::write_json(cfg.out_dir / "propagate.json", payload);
      std::cout << "mean node IoU " << eval.mean_iou << " over " << data.size()
                << " sequence(s)\n";
      return 0;
    }

    if (*adapt) {
      auto data = cli_detail::load_dataset(ad_data);
      auto params = cli_detail::resolve_params(ad_checkpoint, cfg);
      const auto baseline = evaluate_propagation(params, cfg.encoder, cfg.patch, cfg.prop, data);
      json per_seq = json::array();
      double mean_iou = 0;
      int loss_reduced = 0, windows = 0;
      for (std::size_t s = 0; s < data.size(); ++s) {
        const auto run = adapt_and_propagate(params, data[s], cfg);
        const auto geom = grid_geometry(data[s].frames.frames[0].rows(),
                                        data[s].frames.frames[0].cols(), cfg.patch);
        const double iou =
            propagation_score(run.propagation.hard, cli_detail::gt_hard_labels(data[s], geom));
        mean_iou += iou / static_cast<double>(data.size());
        for (std::size_t wdx = 0; wdx < run.window_loss_before.size(); ++wdx) {
          windows += 1;
          loss_reduced += run.window_loss_after[wdx] < run.window_loss_before[wdx] ? 1 : 0;
        }
        per_seq.push_back({{"sequence", s},
                           {"iou_adapted", iou},
                           {"iou_baseline", baseline.per_sequence[s]},
                           {"loss_before", run.window_loss_before},
                           {"loss_after", run.window_loss_after}});
      }
      json payload = {{"mean_iou_adapted", mean_iou},
                      {"mean_iou_baseline", baseline.mean_iou},
                      {"windows_adapted", windows},
                      {"windows_loss_reduced", loss_reduced},
                      {"per_sequence", per_seq},
                      {"config", cli_detail::config_echo(cfg)},
                      {"version", CYCLEWALK_GIT_REV}};
      cli_detail::write_json(cfg.out_dir / "adapt.json", payload);
      std::cout << "adapted IoU " << mean_iou << " vs baseline " << baseline.mean_iou << " ("
                << loss_reduced << "/" << windows << " windows reduced the loss)\n";
      return 0;
    }

    if (*gradcheck) {
      const auto summary = run_gradcheck_suite(cfg.seed, {2, 3, 4}, gc_reps);
      std::cout << "gradcheck: max relative error " << summary.max_rel_err << " over "
                << summary.cases << " cases\n";
      return summary.max_rel_err < 1e-4 ? 0 : 1;
    }

    if (*sweep) {
      const auto axis = parse_sweep_axis(sw_axis);
      const auto cells = run_sweep(axis, sw_values, cfg);
      const auto table = sweep_table(sw_axis, cells, cfg);
      fs::create_directories(cfg.out_dir);
      cli_detail::write_json(cfg.out_dir / ("sweep_" + sw_axis + ".json"), table);
      std::ofstream csv(cfg.out_dir / ("sweep_" + sw_axis + ".csv"));
      csv << sweep_csv(cells);
      int failed = 0;
      for (const auto& cell : cells) failed += cell.failed ? 1 : 0;
      std::cout << "sweep " << sw_axis << ": " << cells.size() - failed << "/" << cells.size()
                << " cells succeeded; tables in " << cfg.out_dir << "\n";
      return 0;
    }

    if (*lemma) {
      const auto summary = run_lemma_suite(lm_draws, cfg.seed);
      std::cout << "lemma: min lambda " << summary.min_lambda << ", max coeff diff "
                << summary.max_coeff_diff << ", max grad diff " << summary.max_grad_diff
                << " over " << summary.draws << " draws\n";
      const bool ok = summary.min_lambda >= -1e-12 && summary.max_coeff_diff < 1e-10 &&
                      summary.max_grad_diff < 1e-10;
      return ok ? 0 : 1;
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace cyclewalk
