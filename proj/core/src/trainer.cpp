#include "cicl/trainer.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <system_error>

namespace cicl {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

TokenBatch pack_batch(const std::vector<SequencePack>& seqs) {
  if (seqs.empty()) throw std::invalid_argument("pack_batch: empty batch");
  TokenBatch tb;
  tb.batch = static_cast<int>(seqs.size());
  tb.seq_len = static_cast<int>(seqs.front().tokens.size());
  const std::size_t total = seqs.size() * static_cast<std::size_t>(tb.seq_len);
  tb.tokens.reserve(total);
  tb.targets.reserve(total);
  tb.weights.reserve(total);
  for (const auto& s : seqs) {
    if (static_cast<int>(s.tokens.size()) != tb.seq_len) {
      throw std::invalid_argument("pack_batch: sequences differ in length");
    }
    for (int t = 0; t < tb.seq_len; ++t) {
      tb.tokens.push_back(s.tokens[static_cast<std::size_t>(t)]);
      const bool last = t + 1 == tb.seq_len;
      tb.targets.push_back(last ? -1 : s.tokens[static_cast<std::size_t>(t) + 1]);
      tb.weights.push_back(last ? 0.0 : s.loss_weight[static_cast<std::size_t>(t) + 1]);
    }
  }
  return tb;
}

namespace {

std::vector<double> shot_losses(const std::vector<double>& position_loss, int batch, int seq_len) {
  const int pairs = seq_len / 2;
  std::vector<double> shots(static_cast<std::size_t>(pairs), 0.0);
  for (int b = 0; b < batch; ++b) {
    for (int k = 0; k < pairs; ++k) {
      // y of pair k sits at 2k+1 and is predicted from row 2k.
      shots[static_cast<std::size_t>(k)] +=
          position_loss[static_cast<std::size_t>(b) * seq_len + 2 * k];
    }
  }
  for (auto& v : shots) v /= batch;
  return shots;
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, ptr);
}

void dump_batch(const fs::path& path, const std::vector<SequencePack>& batch) {
  std::ofstream out(path);
  write_dump_header(out);
  for (const auto& s : batch) write_dump_record(out, s);
}

template <typename Scalar>
TrainResult run(const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  const fs::path ckpt_dir = options.out_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  TrainResult result;
  result.metrics_path = options.out_dir / "metrics.csv";
  result.heldout_metrics_path = options.out_dir / "metrics_heldout.csv";

  TrainingState<Scalar> state;
  if (options.resume) {
    state = load_checkpoint<Scalar>(*options.resume, &config.model);
    if (config_to_json(state.config).at("spec") != config_to_json(config).at("spec") ||
        config_to_json(state.config).at("split") != config_to_json(config).at("split")) {
      throw CheckpointError("resume checkpoint was trained on a different task/split");
    }
    state.config = config;
    truncate_metrics(result.metrics_path, state.step);
    truncate_metrics(result.heldout_metrics_path, state.step);
  } else {
    state = TrainingState<Scalar>::initial(config);
    for (const auto& path : {result.metrics_path, result.heldout_metrics_path}) {
      std::ofstream out(path, std::ios::trunc);
      if (!out) throw TrainingError(0, "cannot create " + path.string());
      out << metrics_header(config.spec.pairs) << '\n';
    }
  }

  BatchStream stream(config.split, config.spec, config.batch, derive_seed(config.seed, 2));
  stream.set_rng_state(state.stream_rng);
  const auto heldout = heldout_batch(config);
  const std::int64_t total = config.total_steps();
  const std::int64_t interval = config.checkpoint_interval();
  const std::int64_t stop = options.stop_at_step ? std::min(*options.stop_at_step, total) : total;

  std::ofstream train_csv(result.metrics_path, std::ios::app);
  std::ofstream heldout_csv(result.heldout_metrics_path, std::ios::app);
  if (!train_csv || !heldout_csv) throw TrainingError(state.step, "cannot open metrics files");
  const auto t0 = std::chrono::steady_clock::now();

  auto checkpoint = [&](const fs::path& path) {
    state.stream_rng = stream.rng_state();
    try {
      save_checkpoint(path, state);
    } catch (const std::exception& e) {
      throw TrainingError(state.step, e.what());
    }
  };

  while (state.step < stop) {
    const std::int64_t step = state.step + 1;
    const auto batch = stream.next_batch();
    StepResult sr;
    try {
      sr = train_step(*state.model, state.adam, batch);
    } catch (const nn::NonFiniteError& e) {
      const auto repro = options.out_dir / ("nonfinite_batch_step_" + std::to_string(step) + ".tsv");
      dump_batch(repro, batch);
      throw TrainingError(step, std::string(e.what()) + " (batch saved to " + repro.string() + ")");
    }
    state.step = step;

    if (step == 1 || step % config.log_every == 0 || step == total) {
      const double wall =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      const auto seen = step * static_cast<std::int64_t>(config.batch);
      MetricsRow train_row{step, seen, sr.loss, sr.shot_loss, wall};
      const auto hr = evaluate_loss(*state.model, heldout);
      MetricsRow held_row{step, seen, hr.loss, hr.shot_loss, wall};
      train_csv << format_metrics_row(train_row) << '\n' << std::flush;
      heldout_csv << format_metrics_row(held_row) << '\n' << std::flush;
      if (!train_csv || !heldout_csv) throw TrainingError(step, "failed writing metrics (disk full?)");
      if (options.on_log) options.on_log(train_row, held_row);
    }
    if (step % interval == 0 || step == total) {
      char name[64];
      std::snprintf(name, sizeof(name), "step_%08lld.ckpt", static_cast<long long>(step));
      checkpoint(ckpt_dir / name);
    }
  }

  result.final_step = state.step;
  if (state.step == total) {
    result.final_checkpoint = ckpt_dir / "final.ckpt";
    checkpoint(result.final_checkpoint);
  } else {
    char name[64];
    std::snprintf(name, sizeof(name), "step_%08lld.ckpt", static_cast<long long>(state.step));
    result.final_checkpoint = ckpt_dir / name;
    if (!fs::exists(result.final_checkpoint)) checkpoint(result.final_checkpoint);
  }
  return result;
}

}  // namespace

template <typename Scalar>
StepResult train_step(Transformer<Scalar>& model, nn::AdamState<Scalar>& adam,
                      const std::vector<SequencePack>& batch) {
  const auto tb = pack_batch(batch);
  ForwardCache<Scalar> cache;
  model.forward(tb.tokens, tb.batch, tb.seq_len, cache);
  nn::Tensor<Scalar> dlogits(cache.logits.shape());
  const auto ce = nn::weighted_cross_entropy<Scalar>(cache.logits.cmat(), tb.targets, tb.weights,
                                                     dlogits.mat());
  model.backward(cache, dlogits.cmat());
  nn::adam_step(model.params(), adam);
  return StepResult{ce.loss, shot_losses(ce.position_loss, tb.batch, tb.seq_len)};
}

template <typename Scalar>
StepResult evaluate_loss(const Transformer<Scalar>& model, const std::vector<SequencePack>& batch) {
  const auto tb = pack_batch(batch);
  ForwardCache<Scalar> cache;
  model.forward(tb.tokens, tb.batch, tb.seq_len, cache);
  const auto ce = nn::weighted_cross_entropy<Scalar>(cache.logits.cmat(), tb.targets, tb.weights,
                                                     nn::no_grad<Scalar>());
  return StepResult{ce.loss, shot_losses(ce.position_loss, tb.batch, tb.seq_len)};
}

std::string metrics_header(int pairs) {
  std::ostringstream os;
  os << "step,seq_seen,total_loss";
  for (int k = 0; k < pairs; ++k) os << ",shot_" << std::setw(2) << std::setfill('0') << k;
  os << ",wall_ms";
  return os.str();
}

std::string format_metrics_row(const MetricsRow& row) {
  std::string out = std::to_string(row.step) + "," + std::to_string(row.seq_seen) + "," +
                    format_number(row.total_loss);
  for (double v : row.shot_loss) out += "," + format_number(v);
  out += "," + format_number(std::round(row.wall_ms * 1000.0) / 1000.0);
  return out;
}

std::vector<MetricsRow> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("step,seq_seen,total_loss", 0) != 0) {
    throw std::runtime_error("metrics file " + path.string() + " has no header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(std::stod(cell));
    if (cells.size() < 4) throw std::runtime_error("short metrics row in " + path.string());
    MetricsRow row;
    row.step = static_cast<std::int64_t>(cells[0]);
    row.seq_seen = static_cast<std::int64_t>(cells[1]);
    row.total_loss = cells[2];
    row.shot_loss.assign(cells.begin() + 3, cells.end() - 1);
    row.wall_ms = cells.back();
    rows.push_back(std::move(row));
  }
  return rows;
}

void truncate_metrics(const fs::path& path, std::int64_t max_step) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot resume: metrics file " + path.string() + " missing");
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (keep.empty()) {
      keep.push_back(line);
      continue;
    }
    if (line.empty()) continue;
    const auto step = std::stoll(line.substr(0, line.find(',')));
    if (step <= max_step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

std::vector<SequencePack> heldout_batch(const TrainConfig& config) {
  Rng rng(derive_seed(config.seed, 3));
  std::vector<SequencePack> out;
  const auto& pairs = config.split.eval_pairs;
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  CurriculumSpec spec = config.spec;
  for (int i = 0; i < config.heldout_batch; ++i) {
    auto [a, b] = pairs[pick(rng)];
    const auto params = TaskParams::make(config.split.p, a, b);
    if (regime_of(spec.mode) == Regime::vanilla) {
      out.push_back(build_vanilla_sequence(params, VanillaKind::double_exp, spec.pairs, rng,
                                           spec.loss_on_x));
    } else {
      spec.mode = SequenceMode::curriculum;
      out.push_back(build_curriculum_sequence(params, spec, rng));
    }
  }
  return out;
}

TrainResult train_loop(const TrainConfig& config, const TrainOptions& options) {
  if (config.model.precision == Precision::f64) return run<double>(config, options);
  return run<float>(config, options);
}

template StepResult train_step<float>(Transformer<float>&, nn::AdamState<float>&,
                                      const std::vector<SequencePack>&);
template StepResult train_step<double>(Transformer<double>&, nn::AdamState<double>&,
                                       const std::vector<SequencePack>&);
template StepResult evaluate_loss<float>(const Transformer<float>&, const std::vector<SequencePack>&);
template StepResult evaluate_loss<double>(const Transformer<double>&,
                                          const std::vector<SequencePack>&);

}  // namespace cicl
