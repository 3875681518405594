#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>
#include <memory>

#include "cicl/analysis.hpp"
#include "cicl/checkpoint.hpp"
#include "cicl/config.hpp"
#include "cicl/probe.hpp"
#include "cicl/savgol.hpp"
#include "cicl/svg.hpp"
#include "cicl/trainer.hpp"
#include "manifest.hpp"

namespace cicl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Sub-streams of analysis.seed, one per kind of evaluation set.
constexpr std::uint64_t kEvalStream = 10;
constexpr std::uint64_t kProbeStream = 11;
constexpr std::uint64_t kMismatchStream = 12;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

template <typename Fn>
fs::path write_with(const fs::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  fn(out);
  if (!out) throw std::runtime_error("failed writing " + path.string());
  return path;
}

void prepare_out(const CommonOptions& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  fs::create_directories(o.out);
}

TrainConfig require_config(const CommonOptions& o) {
  if (!o.config) throw UsageError("--config is required");
  return load_config(*o.config, o.sets);
}

fs::path checkpoint_path(const CommonOptions& o) {
  return o.checkpoint ? *o.checkpoint : o.out / "checkpoints" / "final.ckpt";
}

/// The config from --config, or the one stored in the checkpoint.
TrainConfig analysis_config(const CommonOptions& o, bool oracle) {
  if (o.config) return require_config(o);
  if (oracle) throw UsageError("--oracle needs --config");
  json doc = read_checkpoint_header(checkpoint_path(o)).at("config");
  for (const auto& s : o.sets) apply_override(doc, s);
  return config_from_json(doc);
}

std::unique_ptr<SequenceModel> analysis_model(const CommonOptions& o, const TrainConfig& config,
                                              bool oracle) {
  if (oracle) {
    const auto& m = config.model;
    return std::make_unique<OracleStub>(m.vocab, m.max_seq, m.layers, m.heads, m.d_model);
  }
  return load_model(checkpoint_path(o), &config.model);
}

SequenceMode eval_mode(const CommonOptions& o, const TrainConfig& config) {
  if (o.mode) return parse_sequence_mode(*o.mode);
  return regime_of(config.spec.mode) == Regime::vanilla ? SequenceMode::vanilla_double
                                                        : SequenceMode::curriculum;
}

void record(const CommonOptions& o, const TrainConfig& config, const std::string& command,
            const std::vector<fs::path>& files) {
  auto manifest = RunManifest::load_or_create(o.out, config_to_json(config));
  manifest.record(command, files);
  manifest.save();
}

void say(const CommonOptions& o, const std::string& msg) {
  if (!o.quiet) std::cout << msg << std::endl;
}

std::vector<int> probe_layers(const TrainConfig& config) {
  std::vector<int> layers;
  for (int l = config.analysis.include_layer0 ? 0 : 1; l <= config.model.layers; ++l) layers.push_back(l);
  return layers;
}

json profile_summary(const ErrorProfile& p, SequenceMode mode) {
  json acc = json::array();
  for (int k = 0; k < p.shots(); ++k) acc.push_back(p.accuracy(k));
  json j{{"mode", to_string(mode)},
         {"eval_size", p.eval_size},
         {"errors", p.errors},
         {"accuracy", acc},
         {"block_bounds", p.block_bounds}};
  if (p.composite_len > 0) {
    j["composite_first_shot"] = p.composite_first;
    j["composite_errors"] = p.composite_errors();
    j["zero_shot_composite_accuracy"] = p.accuracy(p.composite_first);
    j["last_shot_composite_accuracy"] = p.accuracy(p.shots() - 1);
  }
  return j;
}

svg::Series profile_series(const ErrorProfile& p, const std::string& name) {
  svg::Series s;
  s.name = name;
  for (int k = 0; k < p.shots(); ++k) {
    s.x.push_back(k);
    s.y.push_back(static_cast<double>(p.errors[static_cast<std::size_t>(k)]));
  }
  return s;
}

svg::Axes profile_axes(const ErrorProfile& p, const std::string& title) {
  svg::Axes axes;
  axes.title = title;
  axes.x_label = "shot";
  axes.y_label = "error count";
  axes.y_lo = 0.0;
  axes.y_hi = static_cast<double>(p.eval_size);
  for (int b : p.block_bounds) axes.x_marks.push_back(b / 2 - 0.5);
  return axes;
}

}  // namespace

void cmd_gen(const GenOptions& o) {
  prepare_out(o);
  const auto config = require_config(o);
  if (o.count < 1) throw UsageError("--count must be positive");
  std::vector<fs::path> files;
  files.push_back(write_with(o.out / "config.json", [&](std::ostream& os) { os << config_to_json(config).dump(2) << '\n'; }));
  files.push_back(write_with(o.out / "split.json", [&](std::ostream& os) { os << split_to_json(config.split).dump(2) << '\n'; }));
  BatchStream stream(config.split, config.spec, config.batch, derive_seed(config.seed, 2));
  files.push_back(write_with(o.out / "train_sequences.tsv", [&](std::ostream& os) {
    write_dump_header(os);
    for (int i = 0; i < o.count; ++i) write_dump_record(os, stream.next_sequence());
  }));
  const auto mode = eval_mode(o, config);
  const auto eval = make_eval_set(config.split, config.spec, mode, o.count,
                                  derive_seed(config.analysis.seed, kEvalStream));
  files.push_back(write_with(o.out / "eval_sequences.tsv", [&](std::ostream& os) {
    write_dump_header(os);
    for (const auto& s : eval) write_dump_record(os, s);
  }));
  record(o, config, "gen", files);
  say(o, "wrote " + std::to_string(files.size()) + " files to " + o.out.string());
}

void cmd_train(const TrainOptions& o) {
  prepare_out(o);
  const auto config = require_config(o);
  write_text(o.out / "config.json", config_to_json(config).dump(2) + "\n");
  cicl::TrainOptions t;
  t.out_dir = o.out;
  t.resume = o.resume;
  t.stop_at_step = o.stop_at;
  const auto total = config.total_steps();
  if (!o.quiet) {
    t.on_log = [total](const MetricsRow& train, const MetricsRow& held) {
      std::cout << "step " << train.step << "/" << total << " loss " << train.total_loss
                << " heldout " << held.total_loss << std::endl;
    };
  }
  const auto result = train_loop(config, t);
  std::vector<fs::path> files{o.out / "config.json", result.metrics_path, result.heldout_metrics_path};
  for (const auto& entry : fs::directory_iterator(o.out / "checkpoints")) {
    if (entry.path().extension() == ".ckpt") files.push_back(entry.path());
  }
  std::sort(files.begin() + 3, files.end());
  record(o, config, "train", files);
  say(o, "finished at step " + std::to_string(result.final_step) + ", checkpoint " +
             result.final_checkpoint.string());
}

void cmd_eval(const EvalOptions& o) {
  prepare_out(o);
  const auto config = analysis_config(o, o.oracle);
  const auto model = analysis_model(o, config, o.oracle);
  const auto mode = eval_mode(o, config);
  const auto seqs = make_eval_set(config.split, config.spec, mode, config.analysis.eval_sequences,
                                  derive_seed(config.analysis.seed, kEvalStream));
  const auto correct = shot_correctness(*model, seqs, config.analysis.chunk);
  const auto profile = error_profile(correct, seqs);
  std::vector<fs::path> files;
  files.push_back(write_with(o.out / "errors.csv", [&](std::ostream& os) { write_error_csv(os, profile); }));
  if (composite_first_shot(seqs.front())) {
    const auto hist = last_error_histogram(correct, seqs);
    files.push_back(write_with(o.out / "last_error_histogram.csv",
                               [&](std::ostream& os) { write_histogram_csv(os, hist); }));
  }
  files.push_back(write_with(o.out / "eval_summary.json", [&](std::ostream& os) {
    os << profile_summary(profile, mode).dump(2) << '\n';
  }));
  files.push_back(write_with(o.out / "errors.svg", [&](std::ostream& os) {
    os << svg::line_plot({profile_series(profile, to_string(mode))},
                         profile_axes(profile, "In-context error counts"));
  }));
  record(o, config, "eval", files);
  say(o, "evaluated " + std::to_string(seqs.size()) + " sequences");
}

void cmd_probe(const EvalOptions& o) {
  prepare_out(o);
  const auto config = analysis_config(o, o.oracle);
  const auto model = analysis_model(o, config, o.oracle);
  const auto mode = o.mode ? parse_sequence_mode(*o.mode) : SequenceMode::curriculum;
  const auto seqs = make_eval_set(config.split, config.spec, mode, config.analysis.probe_sequences,
                                  derive_seed(config.analysis.seed, kProbeStream));
  const auto act = collect_activations(*model, seqs, probe_layers(config), config.analysis.chunk);
  ProbeOptions po;
  po.train_fraction = config.analysis.probe_train_fraction;
  po.iterations = config.analysis.probe_iterations;
  po.l2 = config.analysis.probe_l2;
  po.seed = config.analysis.seed;
  const auto reports = probe_grid(act, seqs, kAllProbeKinds, po);
  std::vector<fs::path> files;
  for (const auto& r : reports) {
    files.push_back(write_with(o.out / ("probe_" + to_string(r.target) + ".json"), [&](std::ostream& os) {
      os << probe_report_to_json(r).dump(2) << '\n';
    }));
  }
  files.push_back(write_with(o.out / "probe_grid.svg", [&](std::ostream& os) {
    os << svg::probe_panels(reports, "Linear probe decoding accuracy");
  }));
  record(o, config, "probe", files);
  say(o, "probed " + std::to_string(act.layers.size()) + " layers x " + std::to_string(act.pairs) + " shots");
}

void cmd_attention(const EvalOptions& o) {
  prepare_out(o);
  const auto config = analysis_config(o, o.oracle);
  const auto model = analysis_model(o, config, o.oracle);
  const auto mode = o.mode ? parse_sequence_mode(*o.mode) : SequenceMode::curriculum;
  const auto seqs = make_eval_set(config.split, config.spec, mode, config.analysis.eval_sequences,
                                  derive_seed(config.analysis.seed, kEvalStream));
  const auto summary = average_attention(*model, seqs, config.analysis.chunk);
  const auto dir = o.out / "attention";
  fs::create_directories(dir);
  std::vector<fs::path> files;
  for (int l = 0; l < summary.layers; ++l) {
    for (int h = 0; h < summary.heads; ++h) {
      const std::string stem = "layer" + std::to_string(l + 1) + "_head" + std::to_string(h + 1);
      files.push_back(write_with(dir / (stem + ".csv"), [&](std::ostream& os) { write_matrix_csv(os, summary.map(l, h)); }));
      files.push_back(write_with(dir / (stem + ".svg"), [&](std::ostream& os) {
        os << svg::heatmap(summary.map(l, h), summary.block_bounds,
                           "Layer " + std::to_string(l + 1) + " head " + std::to_string(h + 1));
      }));
    }
  }
  files.push_back(write_with(dir / "block_aggregate.csv", [&](std::ostream& os) { write_block_aggregate_csv(os, summary); }));
  record(o, config, "attention", files);
  say(o, "averaged attention over " + std::to_string(seqs.size()) + " sequences");
}

void cmd_mismatch(const EvalOptions& o) {
  prepare_out(o);
  const auto config = analysis_config(o, o.oracle);
  const auto model = analysis_model(o, config, o.oracle);
  const auto seqs = make_mismatch_set(config.split, config.spec, config.analysis.eval_sequences,
                                      config.analysis.mismatch_differ_in_both,
                                      derive_seed(config.analysis.seed, kMismatchStream));
  const auto profile = mismatch_eval(*model, seqs, config.analysis.chunk);
  std::vector<fs::path> files;
  files.push_back(write_with(o.out / "mismatch_errors.csv", [&](std::ostream& os) { write_error_csv(os, profile); }));
  files.push_back(write_with(o.out / "mismatch_summary.json", [&](std::ostream& os) {
    os << profile_summary(profile, SequenceMode::mismatch).dump(2) << '\n';
  }));
  files.push_back(write_with(o.out / "mismatch_errors.svg", [&](std::ostream& os) {
    os << svg::line_plot({profile_series(profile, "mismatch")},
                         profile_axes(profile, "Errors on mismatch sequences"));
  }));
  record(o, config, "mismatch", files);
  say(o, "evaluated " + std::to_string(seqs.size()) + " mismatch sequences");
}

namespace {

svg::Series smoothed(const std::string& name, const std::vector<MetricsRow>& rows,
                     const std::vector<double>& values, int window, int order) {
  svg::Series s;
  s.name = name;
  for (const auto& r : rows) s.x.push_back(static_cast<double>(r.seq_seen));
  s.y = savgol_smooth(values, window, order).values;
  return s;
}

ErrorProfile read_error_csv(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  ErrorProfile p;
  int last_block = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() < 4) throw std::runtime_error("malformed " + path.string());
    const int shot = std::stoi(cells[0]);
    const int block = std::stoi(cells[1]);
    if (block != last_block) p.block_bounds.push_back(2 * shot);
    last_block = block;
    p.errors.push_back(std::stoll(cells[2]));
    p.eval_size = std::stoll(cells[3]);
  }
  if (p.errors.empty()) throw std::runtime_error(path.string() + " has no rows");
  return p;
}

}  // namespace

void cmd_plot(const PlotOptions& o) {
  if (o.out.empty()) throw UsageError("--out (the run directory) is required");
  TrainConfig config;
  if (o.config) {
    config = require_config(o);
  } else if (fs::exists(o.out / "config.json")) {
    config = load_config(o.out / "config.json", o.sets);
  } else {
    throw UsageError("no --config given and no config.json in " + o.out.string());
  }
  const int window = o.window.value_or(config.analysis.savgol_window);
  const int order = o.order.value_or(config.analysis.savgol_order);
  const auto metrics_path = o.out / "metrics.csv";
  if (!fs::exists(metrics_path)) throw std::runtime_error("no metrics.csv in " + o.out.string());
  const auto rows = read_metrics(metrics_path);
  if (rows.empty()) throw std::runtime_error(metrics_path.string() + " has no data rows");
  std::vector<MetricsRow> held;
  if (fs::exists(o.out / "metrics_heldout.csv")) held = read_metrics(o.out / "metrics_heldout.csv");

  std::vector<fs::path> files;
  auto column = [](const std::vector<MetricsRow>& rs, int shot) {
    std::vector<double> v;
    for (const auto& r : rs) v.push_back(shot < 0 ? r.total_loss : r.shot_loss.at(static_cast<std::size_t>(shot)));
    return v;
  };
  std::vector<svg::Series> loss{smoothed("train", rows, column(rows, -1), window, order)};
  if (!held.empty()) loss.push_back(smoothed("held-out", held, column(held, -1), window, order));
  svg::Axes axes;
  axes.title = "Training loss (Savitzky-Golay " + std::to_string(window) + "/" + std::to_string(order) + ")";
  axes.x_label = "sequences seen";
  axes.y_label = "loss";
  files.push_back(write_with(o.out / "loss_curves.svg", [&](std::ostream& os) { os << svg::line_plot(loss, axes); }));

  const auto& shot_rows = held.empty() ? rows : held;
  const int pairs = static_cast<int>(shot_rows.front().shot_loss.size());
  std::vector<svg::Series> shots;
  if (regime_of(config.spec.mode) == Regime::vanilla) {
    shots.push_back(smoothed("shot 0", shot_rows, column(shot_rows, 0), window, order));
    shots.push_back(smoothed("last shot", shot_rows, column(shot_rows, pairs - 1), window, order));
  } else {
    const int c0 = 2 * config.spec.m;
    shots.push_back(smoothed("subtask a shot 0", shot_rows, column(shot_rows, 0), window, order));
    shots.push_back(smoothed("subtask b last shot", shot_rows, column(shot_rows, c0 - 1), window, order));
    shots.push_back(smoothed("composite zero-shot", shot_rows, column(shot_rows, c0), window, order));
    shots.push_back(smoothed("composite last shot", shot_rows, column(shot_rows, pairs - 1), window, order));
  }
  svg::Axes shot_axes = axes;
  shot_axes.title = "Per-shot loss";
  files.push_back(write_with(o.out / "shot_losses.svg", [&](std::ostream& os) { os << svg::line_plot(shots, shot_axes); }));

  if (fs::exists(o.out / "errors.csv")) {
    const auto p = read_error_csv(o.out / "errors.csv");
    files.push_back(write_with(o.out / "errors.svg", [&](std::ostream& os) {
      os << svg::line_plot({profile_series(p, "errors")}, profile_axes(p, "In-context error counts"));
    }));
  }
  std::vector<ProbeReport> reports;
  for (auto kind : kAllProbeKinds) {
    const auto path = o.out / ("probe_" + to_string(kind) + ".json");
    if (!fs::exists(path)) continue;
    std::ifstream in(path);
    reports.push_back(probe_report_from_json(json::parse(in)));
  }
  if (!reports.empty()) {
    files.push_back(write_with(o.out / "probe_grid.svg", [&](std::ostream& os) {
      os << svg::probe_panels(reports, "Linear probe decoding accuracy");
    }));
  }
  record(o, config, "plot", files);
  say(o, "rendered " + std::to_string(files.size()) + " plots");
}

json error_json(const std::exception& e) {
  json err{{"message", e.what()}};
  if (const auto* c = dynamic_cast<const ConfigError*>(&e)) {
    err["type"] = "config_error";
    err["path"] = c->path();
  } else if (dynamic_cast<const CheckpointError*>(&e)) {
    err["type"] = "checkpoint_error";
  } else if (const auto* t = dynamic_cast<const TrainingError*>(&e)) {
    err["type"] = "training_error";
    err["step"] = t->step();
  } else if (dynamic_cast<const UsageError*>(&e)) {
    err["type"] = "usage_error";
  } else if (dynamic_cast<const std::invalid_argument*>(&e)) {
    err["type"] = "invalid_argument";
  } else {
    err["type"] = "runtime_error";
  }
  return json{{"error", err}};
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 3;
  if (dynamic_cast<const CheckpointError*>(&e)) return 4;
  if (dynamic_cast<const TrainingError*>(&e)) return 5;
  if (dynamic_cast<const UsageError*>(&e)) return 2;
  return 1;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compositional in-context learning lab for b^(a^x) mod p", "cicl"};
  app.require_subcommand(1);

  GenOptions gen;
  TrainOptions train;
  EvalOptions eval, probe, attention, mismatch;
  PlotOptions plot;

  auto common = [](CLI::App* sub, CommonOptions& o, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "JSON config file");
    if (needs_config) c->required();
    sub->add_option("--out", o.out, "run directory")->required();
    sub->add_option("--set", o.sets, "override a config field, e.g. --set lr=5e-4")->expected(1)->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    sub->add_flag("--quiet,-q", o.quiet, "suppress progress output");
  };
  auto analysis = [&](CLI::App* sub, EvalOptions& o) {
    common(sub, o, false);
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint file (default <out>/checkpoints/final.ckpt)");
    sub->add_option("--mode", o.mode, "sequence layout: curriculum, vanilla_double, vanilla_single_a, vanilla_single_b");
    sub->add_flag("--oracle", o.oracle, "evaluate the label-lookahead stub instead of a checkpoint");
  };

  auto* g = app.add_subcommand("gen", "write sequence fixtures and the pair split");
  common(g, gen, true);
  g->add_option("--count", gen.count, "sequences per fixture file");
  g->add_option("--mode", gen.mode, "layout of the eval fixture");

  auto* t = app.add_subcommand("train", "train a model, writing checkpoints and metrics");
  common(t, train, true);
  t->add_option("--resume", train.resume, "checkpoint to resume from");
  t->add_option("--stop-at", train.stop_at, "stop after this step (simulated interruption)");

  analysis(app.add_subcommand("eval", "per-shot error counts and last-error histogram"), eval);
  analysis(app.add_subcommand("probe", "linear probes of the residual stream"), probe);
  analysis(app.add_subcommand("attention", "mean attention maps per head"), attention);
  analysis(app.add_subcommand("mismatch", "composite-block errors under mismatched parameters"), mismatch);

  auto* p = app.add_subcommand("plot", "render loss curves, error profiles and probe grids");
  common(p, plot, false);
  p->add_option("--window", plot.window, "Savitzky-Golay window (odd)");
  p->add_option("--order", plot.order, "Savitzky-Golay polynomial order");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << json{{"error", {{"type", "usage_error"}, {"message", e.what()}}}}.dump() << '\n';
    return 2;
  }

  try {
    if (*g) cmd_gen(gen);
    else if (*t) cmd_train(train);
    else if (app.got_subcommand("eval")) cmd_eval(eval);
    else if (app.got_subcommand("probe")) cmd_probe(probe);
    else if (app.got_subcommand("attention")) cmd_attention(attention);
    else if (app.got_subcommand("mismatch")) cmd_mismatch(mismatch);
    else if (*p) cmd_plot(plot);
  } catch (const std::exception& e) {
    err << error_json(e).dump() << '\n';
    return exit_code_for(e);
  }
  return 0;
}

}  // namespace cicl::cli
