#include "cicl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "cicl/trainer.hpp"

namespace cicl {

using nn::RowMatrix;

OracleStub::OracleStub(int vocab, int max_seq, int layers, int heads, int d_model)
    : vocab_(vocab), max_seq_(max_seq), layers_(layers), heads_(heads), d_model_(d_model) {}

ForwardTrace OracleStub::trace(std::span<const int> tokens, int batch, int seq_len,
                               bool internals) const {
  if (static_cast<std::size_t>(batch) * seq_len != tokens.size()) {
    throw nn::ShapeError("OracleStub::trace: token count does not match batch x seq_len");
  }
  ForwardTrace out;
  out.batch = batch;
  out.seq_len = seq_len;
  out.logits = nn::Tensor<double>({static_cast<std::size_t>(batch * seq_len),
                                   static_cast<std::size_t>(vocab_)});
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t + 1 < seq_len; ++t) {
      const std::size_t row = static_cast<std::size_t>(b) * seq_len + t;
      out.logits[row * vocab_ + tokens[row + 1]] = 10.0;
    }
  }
  if (internals) {
    for (int l = 0; l <= layers_; ++l) {
      out.hidden.emplace_back(std::vector<std::size_t>{static_cast<std::size_t>(batch * seq_len),
                                                       static_cast<std::size_t>(d_model_)});
    }
    const auto T = static_cast<std::size_t>(seq_len);
    for (int l = 0; l < layers_; ++l) {
      nn::Tensor<double> att({static_cast<std::size_t>(batch), static_cast<std::size_t>(heads_), T, T});
      for (std::size_t bh = 0; bh < static_cast<std::size_t>(batch * heads_); ++bh) {
        for (std::size_t i = 0; i < T; ++i) {
          for (std::size_t j = 0; j <= i; ++j) att[(bh * T + i) * T + j] = 1.0 / (i + 1);
        }
      }
      out.attention.push_back(std::move(att));
    }
  }
  return out;
}

std::vector<SequencePack> make_eval_set(const PairSplit& split, const CurriculumSpec& spec,
                                        SequenceMode mode, int count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_eval_set: count must be positive");
  if (split.eval_pairs.empty()) throw std::invalid_argument("make_eval_set: split has no eval pairs");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, split.eval_pairs.size() - 1);
  std::vector<SequencePack> out;
  out.reserve(static_cast<std::size_t>(count));
  CurriculumSpec cs = spec;
  cs.mode = SequenceMode::curriculum;
  for (int i = 0; i < count; ++i) {
    const auto [a, b] = split.eval_pairs[pick(rng)];
    const auto params = TaskParams::make(split.p, a, b);
    switch (mode) {
      case SequenceMode::curriculum:
        out.push_back(build_curriculum_sequence(params, cs, rng));
        break;
      case SequenceMode::vanilla_double:
        out.push_back(build_vanilla_sequence(params, VanillaKind::double_exp, spec.pairs, rng));
        break;
      case SequenceMode::vanilla_single_a:
        out.push_back(build_vanilla_sequence(params, VanillaKind::single_a, spec.pairs, rng));
        break;
      case SequenceMode::vanilla_single_b:
        out.push_back(build_vanilla_sequence(params, VanillaKind::single_b, spec.pairs, rng));
        break;
      case SequenceMode::mismatch:
        throw std::invalid_argument("make_eval_set: use make_mismatch_set for mismatch sequences");
    }
  }
  return out;
}

std::optional<int> composite_first_shot(const SequencePack& seq) {
  switch (seq.mode) {
    case SequenceMode::curriculum:
    case SequenceMode::mismatch:
      return 2 * seq.m;
    case SequenceMode::vanilla_double:
      return 0;
    default:
      return std::nullopt;
  }
}

namespace {

void check_uniform(const std::vector<SequencePack>& seqs, const char* what) {
  if (seqs.empty()) throw std::invalid_argument(std::string(what) + ": empty evaluation set");
  const auto& first = seqs.front();
  for (const auto& s : seqs) {
    if (s.tokens.size() != first.tokens.size() || s.block_bounds != first.block_bounds ||
        s.mode != first.mode) {
      throw std::invalid_argument(std::string(what) + ": sequences do not share one layout");
    }
  }
}

/// Calls fn(offset, trace) for consecutive chunks of the set.
template <typename Fn>
void for_chunks(const SequenceModel& model, const std::vector<SequencePack>& seqs, int chunk,
                bool internals, Fn&& fn) {
  if (chunk < 1) throw std::invalid_argument("chunk must be positive");
  const int T = static_cast<int>(seqs.front().tokens.size());
  if (T > model.max_seq()) throw std::invalid_argument("sequences longer than the model's max_seq");
  std::vector<int> tokens;
  for (std::size_t start = 0; start < seqs.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(seqs.size(), start + static_cast<std::size_t>(chunk));
    tokens.clear();
    for (std::size_t s = start; s < end; ++s) {
      for (int tok : seqs[s].tokens) {
        if (tok < 0 || tok >= model.vocab()) throw std::invalid_argument("token outside the model vocabulary");
        tokens.push_back(tok);
      }
    }
    fn(start, model.trace(tokens, static_cast<int>(end - start), T, internals));
  }
}

}  // namespace

std::vector<std::vector<std::uint8_t>> shot_correctness(const SequenceModel& model,
                                                        const std::vector<SequencePack>& seqs,
                                                        int chunk) {
  check_uniform(seqs, "shot_correctness");
  const int T = static_cast<int>(seqs.front().tokens.size());
  const int pairs = T / 2;
  std::vector<std::vector<std::uint8_t>> correct(seqs.size(), std::vector<std::uint8_t>(pairs, 0));
  for_chunks(model, seqs, chunk, false, [&](std::size_t start, const ForwardTrace& tr) {
    const auto logits = tr.logits.cmat();
    for (int b = 0; b < tr.batch; ++b) {
      const auto& seq = seqs[start + static_cast<std::size_t>(b)];
      for (int k = 0; k < pairs; ++k) {
        Eigen::Index arg = 0;
        logits.row(static_cast<Eigen::Index>(b) * T + 2 * k).maxCoeff(&arg);
        correct[start + static_cast<std::size_t>(b)][static_cast<std::size_t>(k)] =
            static_cast<int>(arg) == seq.y_at(k) ? 1 : 0;
      }
    }
  });
  return correct;
}

double ErrorProfile::accuracy(int shot) const {
  return 1.0 - static_cast<double>(errors.at(static_cast<std::size_t>(shot))) /
                   static_cast<double>(eval_size);
}

std::int64_t ErrorProfile::composite_errors() const {
  std::int64_t sum = 0;
  for (int k = composite_first; k < composite_first + composite_len; ++k) {
    sum += errors[static_cast<std::size_t>(k)];
  }
  return sum;
}

ErrorProfile error_profile(const std::vector<std::vector<std::uint8_t>>& correct,
                           const std::vector<SequencePack>& seqs) {
  check_uniform(seqs, "error_profile");
  if (correct.size() != seqs.size()) throw std::invalid_argument("error_profile: size mismatch");
  ErrorProfile p;
  const int pairs = seqs.front().pairs();
  p.errors.assign(static_cast<std::size_t>(pairs), 0);
  p.eval_size = static_cast<std::int64_t>(seqs.size());
  p.block_bounds = seqs.front().block_bounds;
  if (auto first = composite_first_shot(seqs.front())) {
    p.composite_first = *first;
    p.composite_len = pairs - *first;
  }
  for (const auto& row : correct) {
    for (int k = 0; k < pairs; ++k) p.errors[static_cast<std::size_t>(k)] += row[static_cast<std::size_t>(k)] ? 0 : 1;
  }
  return p;
}

ErrorProfile per_shot_errors(const SequenceModel& model, const std::vector<SequencePack>& seqs,
                             int chunk) {
  return error_profile(shot_correctness(model, seqs, chunk), seqs);
}

std::int64_t LastErrorHistogram::total() const {
  std::int64_t sum = no_error;
  for (auto c : counts) sum += c;
  return sum;
}

LastErrorHistogram last_error_histogram(const std::vector<std::vector<std::uint8_t>>& correct,
                                        const std::vector<SequencePack>& seqs) {
  check_uniform(seqs, "last_error_histogram");
  const auto first = composite_first_shot(seqs.front());
  if (!first) throw std::invalid_argument("last_error_histogram: sequences have no composite block");
  const int pairs = seqs.front().pairs();
  LastErrorHistogram h;
  h.composite_first = *first;
  h.counts.assign(static_cast<std::size_t>(pairs - *first), 0);
  for (const auto& row : correct) {
    int last = -1;
    for (int k = *first; k < pairs; ++k) {
      if (!row[static_cast<std::size_t>(k)]) last = k;
    }
    if (last < 0) {
      ++h.no_error;
    } else {
      ++h.counts[static_cast<std::size_t>(last - *first)];
    }
  }
  return h;
}

LastErrorHistogram last_error_histogram(const SequenceModel& model,
                                        const std::vector<SequencePack>& seqs, int chunk) {
  return last_error_histogram(shot_correctness(model, seqs, chunk), seqs);
}

std::vector<SequencePack> make_mismatch_set(const PairSplit& split, const CurriculumSpec& spec,
                                            int count, bool differ_in_both, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_mismatch_set: count must be positive");
  Rng rng(seed);
  std::vector<RootPair> all = split.train_pairs;
  all.insert(all.end(), split.eval_pairs.begin(), split.eval_pairs.end());
  std::sort(all.begin(), all.end());
  std::uniform_int_distribution<std::size_t> pick(0, split.eval_pairs.size() - 1);
  CurriculumSpec cs = spec;
  cs.mode = SequenceMode::mismatch;
  std::vector<SequencePack> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const auto [a, b] = split.eval_pairs[pick(rng)];
    const auto curr = TaskParams::make(split.p, a, b);
    const auto comp = draw_mismatch_params(curr, all, differ_in_both, rng);
    out.push_back(build_mismatch_sequence(curr, comp, cs, rng));
  }
  return out;
}

ErrorProfile mismatch_eval(const SequenceModel& model, const std::vector<SequencePack>& seqs,
                           int chunk) {
  check_uniform(seqs, "mismatch_eval");
  if (seqs.front().mode != SequenceMode::mismatch) {
    throw std::invalid_argument("mismatch_eval: expected mismatch sequences");
  }
  return per_shot_errors(model, seqs, chunk);
}

void write_error_csv(std::ostream& os, const ErrorProfile& p) {
  os << "shot,block,errors,eval_size,accuracy\n";
  for (int k = 0; k < p.shots(); ++k) {
    int block = 0;
    for (int bound : p.block_bounds) block += (2 * k >= bound) ? 1 : 0;
    os << k << ',' << block << ',' << p.errors[static_cast<std::size_t>(k)] << ',' << p.eval_size
       << ',' << p.accuracy(k) << '\n';
  }
}

void write_histogram_csv(std::ostream& os, const LastErrorHistogram& h) {
  os << "last_error_shot,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    os << h.composite_first + static_cast<int>(i) << ',' << h.counts[i] << '\n';
  }
  os << "none," << h.no_error << '\n';
}

std::string to_string(ProbeKind kind) {
  switch (kind) {
    case ProbeKind::y: return "y";
    case ProbeKind::inner: return "inner";
    case ProbeKind::base_b: return "base_b";
    case ProbeKind::task_a_output: return "task_a_output";
  }
  return "?";
}

std::vector<int> Activations::targets(const std::vector<SequencePack>& seqs, ProbeKind kind) const {
  if (static_cast<int>(seqs.size()) != sequences) throw std::invalid_argument("targets: sequence count differs");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(sequences) * pairs);
  for (const auto& s : seqs) {
    for (const auto& t : s.probe_targets) {
      switch (kind) {
        case ProbeKind::y: out.push_back(t.y); break;
        case ProbeKind::inner: out.push_back(t.inner); break;
        case ProbeKind::base_b: out.push_back(t.base_b); break;
        case ProbeKind::task_a_output: out.push_back(t.task_a_output); break;
      }
    }
  }
  return out;
}

Activations collect_activations(const SequenceModel& model, const std::vector<SequencePack>& seqs,
                                const std::vector<int>& layers, int chunk) {
  check_uniform(seqs, "collect_activations");
  for (int l : layers) {
    if (l < 0 || l > model.layers()) {
      throw std::out_of_range("collect_activations: layer " + std::to_string(l) + " outside [0, " +
                              std::to_string(model.layers()) + "]");
    }
  }
  Activations act;
  act.layers = layers;
  act.sequences = static_cast<int>(seqs.size());
  act.pairs = seqs.front().pairs();
  const int T = 2 * act.pairs;
  const auto d = static_cast<Eigen::Index>(model.d_model());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    act.features.emplace_back(static_cast<Eigen::Index>(seqs.size()) * act.pairs, d);
  }
  for_chunks(model, seqs, chunk, true, [&](std::size_t start, const ForwardTrace& tr) {
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto h = tr.hidden.at(static_cast<std::size_t>(layers[li])).cmat();
      for (int b = 0; b < tr.batch; ++b) {
        for (int k = 0; k < act.pairs; ++k) {
          act.features[li].row((static_cast<Eigen::Index>(start) + b) * act.pairs + k) =
              h.row(static_cast<Eigen::Index>(b) * T + 2 * k);
        }
      }
    }
  });
  return act;
}

const RowMatrix<double>& AttentionSummary::map(int layer, int head) const {
  return mean.at(static_cast<std::size_t>(layer * heads + head));
}

const RowMatrix<double>& AttentionSummary::block_map(int layer, int head) const {
  return aggregate.at(static_cast<std::size_t>(layer * heads + head));
}

AttentionSummary average_attention(const SequenceModel& model,
                                   const std::vector<SequencePack>& seqs, int chunk) {
  check_uniform(seqs, "average_attention");
  AttentionSummary s;
  s.layers = model.layers();
  s.heads = model.heads();
  s.seq_len = static_cast<int>(seqs.front().tokens.size());
  s.block_bounds = seqs.front().block_bounds;
  const int T = s.seq_len;
  const std::size_t maps = static_cast<std::size_t>(s.layers * s.heads);
  // Neumaier summation keeps the mean insensitive to the order of the set.
  std::vector<RowMatrix<double>> sum(maps, RowMatrix<double>::Zero(T, T));
  std::vector<RowMatrix<double>> comp(maps, RowMatrix<double>::Zero(T, T));
  for_chunks(model, seqs, chunk, true, [&](std::size_t, const ForwardTrace& tr) {
    for (int b = 0; b < tr.batch; ++b) {
      for (int l = 0; l < s.layers; ++l) {
        for (int h = 0; h < s.heads; ++h) {
          const auto a = tr.attention_map(b, l, h);
          auto& acc = sum[static_cast<std::size_t>(l * s.heads + h)];
          auto& c = comp[static_cast<std::size_t>(l * s.heads + h)];
          for (int i = 0; i < T; ++i) {
            for (int j = 0; j <= i; ++j) {
              const double v = a(i, j);
              const double t = acc(i, j) + v;
              c(i, j) += std::abs(acc(i, j)) >= std::abs(v) ? (acc(i, j) - t) + v : (v - t) + acc(i, j);
              acc(i, j) = t;
            }
          }
        }
      }
    }
  });
  const double n = static_cast<double>(seqs.size());
  std::vector<int> starts{0};
  for (int bound : s.block_bounds) starts.push_back(bound);
  starts.push_back(T);
  const int blocks = static_cast<int>(starts.size()) - 1;
  for (std::size_t m = 0; m < maps; ++m) {
    RowMatrix<double> mean = (sum[m] + comp[m]) / n;
    RowMatrix<double> agg = RowMatrix<double>::Zero(blocks, blocks);
    for (int qi = 0; qi < blocks; ++qi) {
      const int rows = starts[static_cast<std::size_t>(qi) + 1] - starts[static_cast<std::size_t>(qi)];
      for (int kj = 0; kj < blocks; ++kj) {
        const int c0 = starts[static_cast<std::size_t>(kj)];
        const int cols = starts[static_cast<std::size_t>(kj) + 1] - c0;
        agg(qi, kj) = mean.block(starts[static_cast<std::size_t>(qi)], c0, rows, cols).sum() / rows;
      }
    }
    s.mean.push_back(std::move(mean));
    s.aggregate.push_back(std::move(agg));
  }
  return s;
}

void write_matrix_csv(std::ostream& os, const RowMatrix<double>& m) {
  os.precision(10);
  os << "query";
  for (Eigen::Index j = 0; j < m.cols(); ++j) os << ",k" << j;
  os << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    os << i;
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << ',' << m(i, j);
    os << '\n';
  }
}

void write_block_aggregate_csv(std::ostream& os, const AttentionSummary& s) {
  os.precision(10);
  const auto blocks = s.aggregate.empty() ? 0 : s.aggregate.front().rows();
  os << "layer,head,query_block";
  for (Eigen::Index j = 0; j < blocks; ++j) os << ",to_block_" << j;
  os << '\n';
  for (int l = 0; l < s.layers; ++l) {
    for (int h = 0; h < s.heads; ++h) {
      const auto& a = s.block_map(l, h);
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        os << l << ',' << h << ',' << i;
        for (Eigen::Index j = 0; j < a.cols(); ++j) os << ',' << a(i, j);
        os << '\n';
      }
    }
  }
}

std::optional<std::int64_t> first_crossing_step(const std::vector<std::int64_t>& steps,
                                                const std::vector<double>& values,
                                                double threshold) {
  if (steps.size() != values.size()) throw std::invalid_argument("first_crossing_step: size mismatch");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (values[i] < threshold) return steps[i];
  }
  return std::nullopt;
}

}  // namespace cicl
