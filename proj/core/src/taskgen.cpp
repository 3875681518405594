#include "cicl/taskgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace cicl {

namespace {

constexpr int kSplitRetries = 1000;

/// k distinct values from [0, p) by a partial Fisher-Yates shuffle.
std::vector<int> sample_distinct(std::int64_t p, int k, Rng& rng) {
  if (k > p) {
    throw std::invalid_argument("cannot sample " + std::to_string(k) +
                                " distinct inputs from modulus " +
                                std::to_string(p));
  }
  std::vector<int> pool(static_cast<std::size_t>(p));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::int64_t> pick(i, p - 1);
    std::swap(pool[i], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

enum class BlockTask { exp_a, exp_b, double_exp };

ProbeTarget make_target(const TaskParams& tp, int x, int y, int block_id) {
  ProbeTarget t;
  t.y = y;
  t.inner = static_cast<int>(fermat_reduce(tp, x));
  t.task_a_output = static_cast<int>(single_exp_oracle(tp.a, x, tp.p));
  t.base_b = static_cast<int>(tp.b);
  t.block_id = block_id;
  return t;
}

int block_label(const TaskParams& tp, BlockTask task, int x) {
  switch (task) {
    case BlockTask::exp_a:
      return static_cast<int>(single_exp_oracle(tp.a, x, tp.p));
    case BlockTask::exp_b:
      return static_cast<int>(single_exp_oracle(tp.b, x, tp.p));
    case BlockTask::double_exp:
      return static_cast<int>(double_exp_oracle(tp, x));
  }
  return 0;
}

/// Appends `xs.size()` exemplars of one task with the given target weight.
void append_block(SequencePack& seq, const TaskParams& tp, BlockTask task,
                  const std::vector<int>& xs, double weight, int block_id,
                  bool loss_on_x) {
  for (int x : xs) {
    const int y = block_label(tp, task, x);
    const bool first_token = seq.tokens.empty();
    seq.tokens.push_back(x);
    seq.loss_weight.push_back(loss_on_x && !first_token ? weight : 0.0);
    seq.tokens.push_back(y);
    seq.loss_weight.push_back(weight);
    seq.probe_targets.push_back(make_target(tp, x, y, block_id));
  }
}

SequencePack build_blocked(const TaskParams& curr, const TaskParams& comp,
                           SequenceMode mode, const CurriculumSpec& spec,
                           Rng& rng) {
  const std::int64_t p = curr.p.value();
  SequencePack seq{.mode = mode,
                   .params = curr,
                   .mismatch_params = std::nullopt,
                   .m = spec.m,
                   .n = spec.n};
  if (mode == SequenceMode::mismatch) seq.mismatch_params = comp;
  seq.tokens.reserve(static_cast<std::size_t>(spec.tokens()));
  seq.loss_weight.reserve(static_cast<std::size_t>(spec.tokens()));

  const double composite_weight =
      static_cast<double>(spec.m) / static_cast<double>(spec.n);
  append_block(seq, curr, BlockTask::exp_a, sample_distinct(p, spec.m, rng),
               1.0, 0, spec.loss_on_x);
  seq.block_bounds.push_back(static_cast<int>(seq.tokens.size()));
  append_block(seq, curr, BlockTask::exp_b, sample_distinct(p, spec.m, rng),
               1.0, 1, spec.loss_on_x);
  seq.block_bounds.push_back(static_cast<int>(seq.tokens.size()));
  append_block(seq, comp, BlockTask::double_exp,
               sample_distinct(p, spec.n, rng), composite_weight, 2,
               spec.loss_on_x);
  return seq;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("failed to format weight");
  return std::string(buf, ptr);
}

std::vector<std::string> split_on(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, delim)) out.push_back(cur);
  if (!s.empty() && s.back() == delim) out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s) {
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::invalid_argument("malformed number in dump record: '" + s + "'");
  }
  return value;
}

}  // namespace

std::string to_string(SequenceMode mode) {
  switch (mode) {
    case SequenceMode::curriculum: return "curriculum";
    case SequenceMode::vanilla_double: return "vanilla_double";
    case SequenceMode::vanilla_single_a: return "vanilla_single_a";
    case SequenceMode::vanilla_single_b: return "vanilla_single_b";
    case SequenceMode::mismatch: return "mismatch";
  }
  return "unknown";
}

SequenceMode parse_sequence_mode(const std::string& name) {
  for (auto mode : {SequenceMode::curriculum, SequenceMode::vanilla_double,
                    SequenceMode::vanilla_single_a,
                    SequenceMode::vanilla_single_b, SequenceMode::mismatch}) {
    if (to_string(mode) == name) return mode;
  }
  throw std::invalid_argument("unknown sequence mode '" + name + "'");
}

void CurriculumSpec::validate() const {
  if (pairs < 1) throw std::invalid_argument("pairs must be >= 1");
  if (mode == SequenceMode::curriculum || mode == SequenceMode::mismatch) {
    if (m < 1 || n < 1) {
      throw std::invalid_argument("curriculum blocks need m >= 1 and n >= 1");
    }
    if (2 * m + n != pairs) {
      throw std::invalid_argument(
          "curriculum layout 2m+n=" + std::to_string(2 * m + n) +
          " does not match context of " + std::to_string(pairs) + " pairs");
    }
  }
}

Regime regime_of(SequenceMode mode) {
  switch (mode) {
    case SequenceMode::curriculum: return Regime::curriculum;
    case SequenceMode::mismatch: return Regime::mismatch;
    default: return Regime::vanilla;
  }
}

PairSplit split_pairs(Modulus p, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train_fraction must lie in (0, 1)");
  }
  const auto roots = primitive_roots(p);
  std::vector<RootPair> all;
  for (auto a : roots)
    for (auto b : roots) all.emplace_back(a, b);
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(all.size())));

  Rng rng(seed);
  for (int attempt = 0; attempt < kSplitRetries; ++attempt) {
    std::vector<RootPair> shuffled = all;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::vector<RootPair> train(shuffled.begin(),
                                shuffled.begin() + static_cast<long>(n_train));
    std::set<std::int64_t> as, bs;
    for (auto [a, b] : train) {
      as.insert(a);
      bs.insert(b);
    }
    if (as.size() != roots.size() || bs.size() != roots.size()) continue;
    std::vector<RootPair> eval(shuffled.begin() + static_cast<long>(n_train),
                               shuffled.end());
    std::sort(train.begin(), train.end());
    std::sort(eval.begin(), eval.end());
    return PairSplit{p, std::move(train), std::move(eval), seed};
  }
  throw std::runtime_error("split_pairs: no split with full a/b coverage after " +
                           std::to_string(kSplitRetries) + " retries");
}

void validate_split(const PairSplit& split) {
  const auto roots = primitive_roots(split.p);
  std::set<RootPair> seen;
  std::set<std::int64_t> as, bs;
  for (auto pr : split.train_pairs) {
    if (!seen.insert(pr).second) throw std::invalid_argument("duplicate pair in split");
    as.insert(pr.first);
    bs.insert(pr.second);
  }
  for (auto pr : split.eval_pairs) {
    if (!seen.insert(pr).second) throw std::invalid_argument("train/eval pairs overlap");
  }
  if (seen.size() != roots.size() * roots.size()) {
    throw std::invalid_argument("split does not cover all ordered root pairs");
  }
  for (auto [a, b] : seen) {
    if (!is_primitive_root(a, split.p) || !is_primitive_root(b, split.p)) {
      throw std::invalid_argument("split contains a non-primitive-root pair");
    }
  }
  if (as.size() != roots.size() || bs.size() != roots.size()) {
    throw std::invalid_argument("train pairs miss an individual a or b value");
  }
}

SequencePack build_curriculum_sequence(const TaskParams& params,
                                       const CurriculumSpec& spec, Rng& rng) {
  if (spec.mode != SequenceMode::curriculum) {
    throw std::invalid_argument("build_curriculum_sequence needs curriculum mode");
  }
  spec.validate();
  return build_blocked(params, params, SequenceMode::curriculum, spec, rng);
}

SequencePack build_vanilla_sequence(const TaskParams& params, VanillaKind kind,
                                    int pairs, Rng& rng, bool loss_on_x) {
  SequenceMode mode = SequenceMode::vanilla_double;
  BlockTask task = BlockTask::double_exp;
  int block_id = 2;
  if (kind == VanillaKind::single_a) {
    mode = SequenceMode::vanilla_single_a;
    task = BlockTask::exp_a;
    block_id = 0;
  } else if (kind == VanillaKind::single_b) {
    mode = SequenceMode::vanilla_single_b;
    task = BlockTask::exp_b;
    block_id = 1;
  }
  SequencePack seq{.mode = mode, .params = params};
  append_block(seq, params, task, sample_distinct(params.p.value(), pairs, rng),
               1.0, block_id, loss_on_x);
  return seq;
}

SequencePack build_mismatch_sequence(const TaskParams& curr,
                                     const TaskParams& comp,
                                     const CurriculumSpec& spec, Rng& rng) {
  if (curr == comp) {
    throw std::invalid_argument("mismatch sequence needs (a', b') != (a, b)");
  }
  if (!(curr.p == comp.p)) {
    throw std::invalid_argument("mismatch parameters use different moduli");
  }
  CurriculumSpec layout = spec;
  layout.mode = SequenceMode::mismatch;
  layout.validate();
  return build_blocked(curr, comp, SequenceMode::mismatch, layout, rng);
}

TaskParams draw_mismatch_params(const TaskParams& curr,
                                const std::vector<RootPair>& candidates,
                                bool differ_in_both, Rng& rng) {
  std::vector<RootPair> eligible;
  for (auto [a, b] : candidates) {
    const bool ok = differ_in_both ? (a != curr.a && b != curr.b)
                                   : (a != curr.a || b != curr.b);
    if (ok) eligible.emplace_back(a, b);
  }
  if (eligible.empty()) {
    throw std::invalid_argument("no eligible mismatch pair for (" +
                                std::to_string(curr.a) + ", " +
                                std::to_string(curr.b) + ")");
  }
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
  auto [a, b] = eligible[pick(rng)];
  return TaskParams::make(curr.p, a, b);
}

BatchStream::BatchStream(PairSplit split, CurriculumSpec spec, int batch_size,
                         std::uint64_t rng_seed)
    : split_(std::move(split)),
      spec_(spec),
      batch_size_(batch_size),
      rng_(rng_seed) {
  spec_.validate();
  if (batch_size_ < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (split_.train_pairs.empty()) throw std::invalid_argument("no train pairs");
}

SequencePack BatchStream::next_sequence() {
  std::uniform_int_distribution<std::size_t> pick(0, split_.train_pairs.size() - 1);
  auto [a, b] = split_.train_pairs[pick(rng_)];
  const auto params = TaskParams::make(split_.p, a, b);
  switch (regime_of(spec_.mode)) {
    case Regime::curriculum:
      return build_curriculum_sequence(params, spec_, rng_);
    case Regime::mismatch: {
      auto comp = draw_mismatch_params(params, split_.train_pairs, true, rng_);
      return build_mismatch_sequence(params, comp, spec_, rng_);
    }
    case Regime::vanilla: break;
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  VanillaKind kind = VanillaKind::double_exp;
  if (coin(rng_) < 2.0 / 3.0) {
    kind = coin(rng_) < 0.5 ? VanillaKind::single_a : VanillaKind::single_b;
  }
  return build_vanilla_sequence(params, kind, spec_.pairs, rng_,
                                spec_.loss_on_x);
}

std::vector<SequencePack> BatchStream::next_batch() {
  std::vector<SequencePack> batch;
  batch.reserve(static_cast<std::size_t>(batch_size_));
  for (int i = 0; i < batch_size_; ++i) batch.push_back(next_sequence());
  return batch;
}

std::string BatchStream::rng_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

void BatchStream::set_rng_state(const std::string& state) {
  std::istringstream is(state);
  is >> rng_;
  if (!is) throw std::invalid_argument("malformed batch stream rng state");
}

void write_dump_header(std::ostream& os) {
  os << "mode\tp\ta\tb\ta'\tb'\tm\tn\ttokens\tweights\n";
}

void write_dump_record(std::ostream& os, const SequencePack& seq) {
  os << to_string(seq.mode) << '\t' << seq.params.p.value() << '\t'
     << seq.params.a << '\t' << seq.params.b << '\t';
  if (seq.mismatch_params) {
    os << seq.mismatch_params->a << '\t' << seq.mismatch_params->b << '\t';
  } else {
    os << "-\t-\t";
  }
  os << seq.m << '\t' << seq.n << '\t';
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    os << (i ? "," : "") << seq.tokens[i];
  }
  os << '\t';
  for (std::size_t i = 0; i < seq.loss_weight.size(); ++i) {
    os << (i ? "," : "") << format_double(seq.loss_weight[i]);
  }
  os << '\n';
}

SequencePack parse_dump_record(const std::string& line) {
  const auto fields = split_on(line, '\t');
  if (fields.size() != 10) {
    throw std::invalid_argument("dump record needs 10 fields, got " +
                                std::to_string(fields.size()));
  }
  const auto mode = parse_sequence_mode(fields[0]);
  const Modulus p(parse_number<std::int64_t>(fields[1]));
  const auto params = TaskParams::make(p, parse_number<std::int64_t>(fields[2]),
                                       parse_number<std::int64_t>(fields[3]));
  SequencePack seq{.mode = mode, .params = params};
  if (fields[4] != "-") {
    seq.mismatch_params =
        TaskParams::make(p, parse_number<std::int64_t>(fields[4]),
                         parse_number<std::int64_t>(fields[5]));
  }
  seq.m = parse_number<int>(fields[6]);
  seq.n = parse_number<int>(fields[7]);
  for (const auto& t : split_on(fields[8], ',')) seq.tokens.push_back(parse_number<int>(t));
  for (const auto& w : split_on(fields[9], ',')) seq.loss_weight.push_back(parse_number<double>(w));
  if (seq.tokens.size() % 2 != 0 || seq.tokens.size() != seq.loss_weight.size()) {
    throw std::invalid_argument("dump record tokens/weights length mismatch");
  }

  const bool blocked = mode == SequenceMode::curriculum || mode == SequenceMode::mismatch;
  if (blocked) seq.block_bounds = {2 * seq.m, 4 * seq.m};
  const TaskParams comp = seq.mismatch_params.value_or(params);
  for (int k = 0; k < seq.pairs(); ++k) {
    int block_id = 2;
    if (blocked) {
      block_id = k < seq.m ? 0 : (k < 2 * seq.m ? 1 : 2);
    } else if (mode == SequenceMode::vanilla_single_a) {
      block_id = 0;
    } else if (mode == SequenceMode::vanilla_single_b) {
      block_id = 1;
    }
    const TaskParams& tp = block_id == 2 ? comp : params;
    seq.probe_targets.push_back(make_target(tp, seq.x_at(k), seq.y_at(k), block_id));
  }
  return seq;
}

bool labels_match_oracle(const SequencePack& seq) {
  const TaskParams comp = seq.mismatch_params.value_or(seq.params);
  for (int k = 0; k < seq.pairs(); ++k) {
    const auto& t = seq.probe_targets.at(static_cast<std::size_t>(k));
    const TaskParams& tp = t.block_id == 2 ? comp : seq.params;
    const auto task = t.block_id == 0   ? BlockTask::exp_a
                      : t.block_id == 1 ? BlockTask::exp_b
                                        : BlockTask::double_exp;
    if (block_label(tp, task, seq.x_at(k)) != seq.y_at(k)) return false;
  }
  return true;
}

}  // namespace cicl
