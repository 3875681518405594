#include <gtest/gtest.h>

#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "cicl/taskgen.hpp"

namespace {

using namespace cicl;

std::int64_t naive_pow(std::int64_t base, std::int64_t exp, std::int64_t m) {
  std::int64_t r = 1 % m;
  for (std::int64_t i = 0; i < exp; ++i) r = (r * base) % m;
  return r;
}

std::int64_t naive_double_exp(std::int64_t a, std::int64_t b, std::int64_t x, std::int64_t p) {
  std::int64_t z = b % p;
  for (std::int64_t i = 0; i < x; ++i) z = naive_pow(z, a, p);
  return z;
}

CurriculumSpec spec(int m, int n, int pairs = 24) {
  CurriculumSpec s;
  s.m = m;
  s.n = n;
  s.pairs = pairs;
  return s;
}

TEST(SplitPairs, Counts) {
  const auto s59 = split_pairs(Modulus(59), 0.8, 1);
  EXPECT_EQ(s59.train_pairs.size(), 627u);
  EXPECT_EQ(s59.eval_pairs.size(), 157u);
  const auto s7 = split_pairs(Modulus(7), 0.5, 1);
  EXPECT_EQ(s7.train_pairs.size(), 2u);
  EXPECT_EQ(s7.eval_pairs.size(), 2u);
}

TEST(SplitPairs, PartitionAndCoverage) {
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    for (std::int64_t p : {5, 13, 37, 59}) {
      const auto split = split_pairs(Modulus(p), 0.8, seed);
      const auto roots = primitive_roots(Modulus(p));
      std::set<RootPair> all;
      for (auto a : roots) {
        for (auto b : roots) all.insert({a, b});
      }
      std::set<RootPair> train(split.train_pairs.begin(), split.train_pairs.end());
      std::set<RootPair> eval(split.eval_pairs.begin(), split.eval_pairs.end());
      std::set<RootPair> both = train;
      both.insert(eval.begin(), eval.end());
      EXPECT_EQ(both, all);
      EXPECT_EQ(train.size() + eval.size(), all.size());
      std::set<std::int64_t> as, bs;
      for (auto [a, b] : train) {
        as.insert(a);
        bs.insert(b);
      }
      EXPECT_EQ(as.size(), roots.size());
      EXPECT_EQ(bs.size(), roots.size());
      EXPECT_NO_THROW(validate_split(split));
    }
  }
}

TEST(SplitPairs, Deterministic) {
  const auto a = split_pairs(Modulus(59), 0.8, 42);
  const auto b = split_pairs(Modulus(59), 0.8, 42);
  EXPECT_EQ(a.train_pairs, b.train_pairs);
  EXPECT_EQ(a.eval_pairs, b.eval_pairs);
  const auto c = split_pairs(Modulus(59), 0.8, 43);
  EXPECT_NE(a.train_pairs, c.train_pairs);
}

TEST(SplitPairs, RejectsBadFraction) {
  EXPECT_THROW(split_pairs(Modulus(13), 0.0, 1), std::invalid_argument);
  EXPECT_THROW(split_pairs(Modulus(13), 1.0, 1), std::invalid_argument);
  // Too few training pairs to cover every root.
  EXPECT_THROW(split_pairs(Modulus(13), 0.1, 1), std::exception);
}

TEST(Curriculum, LayoutAndLabels) {
  Rng rng(3);
  const auto params = TaskParams::make(Modulus(59), 2, 6);
  const auto seq = build_curriculum_sequence(params, spec(10, 4), rng);
  ASSERT_EQ(seq.tokens.size(), 48u);
  EXPECT_EQ(seq.block_bounds, (std::vector<int>{20, 40}));
  for (int k = 0; k < 24; ++k) {
    const int x = seq.x_at(k);
    std::int64_t expect;
    if (k < 10) expect = naive_pow(2, x, 59);
    else if (k < 20) expect = naive_pow(6, x, 59);
    else expect = naive_double_exp(2, 6, x, 59);
    EXPECT_EQ(seq.y_at(k), expect) << "shot " << k;
    EXPECT_EQ(seq.loss_weight[2 * k], 0.0);
    EXPECT_EQ(seq.loss_weight[2 * k + 1], k < 20 ? 1.0 : 2.5);
  }
  EXPECT_TRUE(labels_match_oracle(seq));
}

TEST(Curriculum, BoundsForElevenTwo) {
  Rng rng(1);
  const auto seq = build_curriculum_sequence(TaskParams::make(Modulus(59), 2, 6), spec(11, 2), rng);
  EXPECT_EQ(seq.block_bounds, (std::vector<int>{22, 44}));
}

TEST(Curriculum, SmallPrimeComposite) {
  // b^(a^x) for p=7, a=3, b=5 at x=0,1,2.
  const auto t = TaskParams::make(Modulus(7), 3, 5);
  std::vector<std::int64_t> got, want;
  for (int x = 0; x < 3; ++x) {
    got.push_back(double_exp_oracle(t, x));
    want.push_back(naive_double_exp(3, 5, x, 7));
  }
  EXPECT_EQ(got, want);
  EXPECT_EQ(got, (std::vector<std::int64_t>{5, 6, 6}));
}

TEST(Curriculum, RejectsBlockLongerThanModulus) {
  Rng rng(1);
  const auto t = TaskParams::make(Modulus(7), 3, 5);
  EXPECT_THROW(build_curriculum_sequence(t, spec(8, 8), rng), std::invalid_argument);
}

TEST(Curriculum, WeightShareIsOneThirdForEverySpec) {
  Rng rng(5);
  const auto params = TaskParams::make(Modulus(59), 2, 6);
  for (int n = 2; n <= 22; n += 2) {
    const int m = (24 - n) / 2;
    const auto seq = build_curriculum_sequence(params, spec(m, n), rng);
    std::array<double, 3> sums{0, 0, 0};
    std::array<int, 3> weighted{0, 0, 0};
    for (int k = 0; k < 24; ++k) {
      const int block = k < m ? 0 : (k < 2 * m ? 1 : 2);
      const double w = seq.loss_weight[2 * k + 1];
      sums[block] += w;
      weighted[block] += 1;
      EXPECT_EQ(w, block == 2 ? static_cast<double>(m) / n : 1.0);
    }
    // Composite total is n copies of m/n; as an exact product it equals m.
    EXPECT_EQ(weighted[2] * (static_cast<double>(m) / n), static_cast<double>(m));
    EXPECT_NEAR(sums[2] / (sums[0] + sums[1] + sums[2]), 1.0 / 3.0, 1e-15);
  }
}

TEST(Curriculum, XUniqueWithinBlocks) {
  const auto split = split_pairs(Modulus(59), 0.8, 2);
  BatchStream stream(split, spec(8, 8), 64, 11);
  for (int i = 0; i < 2000; ++i) {
    const auto seq = stream.next_sequence();
    std::vector<int> starts{0, 8, 16, 24};
    for (int b = 0; b < 3; ++b) {
      std::set<int> xs;
      for (int k = starts[b]; k < starts[b + 1]; ++k) xs.insert(seq.x_at(k));
      EXPECT_EQ(xs.size(), static_cast<std::size_t>(starts[b + 1] - starts[b]));
    }
  }
}

TEST(Vanilla, KindsAndUniqueness) {
  Rng rng(9);
  const auto t = TaskParams::make(Modulus(59), 2, 6);
  for (auto kind : {VanillaKind::double_exp, VanillaKind::single_a, VanillaKind::single_b}) {
    const auto seq = build_vanilla_sequence(t, kind, 24, rng);
    std::set<int> xs;
    for (int k = 0; k < 24; ++k) {
      const int x = seq.x_at(k);
      xs.insert(x);
      EXPECT_GE(x, 0);
      EXPECT_LT(x, 59);
      const std::int64_t want = kind == VanillaKind::double_exp ? naive_double_exp(2, 6, x, 59)
                                : kind == VanillaKind::single_a ? naive_pow(2, x, 59)
                                                                : naive_pow(6, x, 59);
      EXPECT_EQ(seq.y_at(k), want);
      EXPECT_EQ(seq.loss_weight[2 * k + 1], 1.0);
      EXPECT_EQ(seq.loss_weight[2 * k], 0.0);
    }
    EXPECT_EQ(xs.size(), 24u);
    EXPECT_TRUE(seq.block_bounds.empty());
  }
  EXPECT_THROW(build_vanilla_sequence(TaskParams::make(Modulus(7), 3, 5), VanillaKind::double_exp, 24, rng),
               std::invalid_argument);
}

TEST(Vanilla, LossOnXWeightsXPositionsExceptFirst) {
  Rng rng(2);
  const auto seq = build_vanilla_sequence(TaskParams::make(Modulus(13), 2, 6), VanillaKind::single_a, 12, rng, true);
  EXPECT_EQ(seq.loss_weight[0], 0.0);
  for (int i = 1; i < 24; ++i) EXPECT_EQ(seq.loss_weight[i], 1.0);
}

TEST(Mismatch, CompositeUsesOtherParams) {
  Rng rng(4);
  const auto curr = TaskParams::make(Modulus(7), 3, 5);
  const auto comp = TaskParams::make(Modulus(7), 5, 3);
  const auto seq = build_mismatch_sequence(curr, comp, spec(2, 3, 7), rng);
  ASSERT_TRUE(seq.mismatch_params.has_value());
  for (int k = 0; k < 7; ++k) {
    const int x = seq.x_at(k);
    if (k < 2) EXPECT_EQ(seq.y_at(k), naive_pow(3, x, 7));
    else if (k < 4) EXPECT_EQ(seq.y_at(k), naive_pow(5, x, 7));
    else {
      EXPECT_EQ(seq.y_at(k), naive_double_exp(5, 3, x, 7));
      EXPECT_EQ(seq.probe_targets[k].base_b, 3);
      EXPECT_EQ(seq.probe_targets[k].inner, naive_pow(5, x, 6));
      if (x == 0) EXPECT_EQ(seq.y_at(k), 3);
    }
  }
  EXPECT_THROW(build_mismatch_sequence(curr, curr, spec(2, 3, 7), rng), std::invalid_argument);
}

TEST(Mismatch, DrawDiffersInBothWhenAsked) {
  Rng rng(8);
  const auto split = split_pairs(Modulus(13), 0.8, 7);
  std::vector<RootPair> all = split.train_pairs;
  all.insert(all.end(), split.eval_pairs.begin(), split.eval_pairs.end());
  const auto curr = TaskParams::make(Modulus(13), 2, 6);
  for (int i = 0; i < 200; ++i) {
    const auto c = draw_mismatch_params(curr, all, true, rng);
    EXPECT_NE(c.a, curr.a);
    EXPECT_NE(c.b, curr.b);
    const auto d = draw_mismatch_params(curr, all, false, rng);
    EXPECT_TRUE(d.a != curr.a || d.b != curr.b);
  }
}

TEST(ProbeTargets, FollowOwnBlock) {
  Rng rng(6);
  const auto t = TaskParams::make(Modulus(13), 2, 6);
  const auto seq = build_curriculum_sequence(t, spec(4, 4, 12), rng);
  for (int k = 0; k < 12; ++k) {
    const auto& pt = seq.probe_targets[k];
    const int x = seq.x_at(k);
    EXPECT_EQ(pt.y, seq.y_at(k));
    EXPECT_EQ(pt.block_id, k / 4);
    EXPECT_EQ(pt.inner, naive_pow(2, x, 12));
    EXPECT_EQ(pt.task_a_output, naive_pow(2, x, 13));
    EXPECT_EQ(pt.base_b, 6);
    EXPECT_GE(pt.inner, 0);
    EXPECT_LT(pt.inner, 12);
  }
}

TEST(BatchStream, DeterministicAndResumable) {
  const auto split = split_pairs(Modulus(13), 0.8, 7);
  BatchStream a(split, spec(4, 4, 12), 16, 123);
  BatchStream b(split, spec(4, 4, 12), 16, 123);
  for (int i = 0; i < 5; ++i) {
    const auto ba = a.next_batch();
    const auto bb = b.next_batch();
    ASSERT_EQ(ba.size(), 16u);
    for (std::size_t j = 0; j < ba.size(); ++j) EXPECT_EQ(ba[j].tokens, bb[j].tokens);
  }
  const auto state = a.rng_state();
  const auto next = a.next_batch();
  BatchStream c(split, spec(4, 4, 12), 16, 999);
  c.set_rng_state(state);
  const auto again = c.next_batch();
  for (std::size_t j = 0; j < next.size(); ++j) EXPECT_EQ(next[j].tokens, again[j].tokens);
}

TEST(BatchStream, CurriculumDrawsTrainPairsOnly) {
  const auto split = split_pairs(Modulus(13), 0.8, 7);
  std::set<RootPair> train(split.train_pairs.begin(), split.train_pairs.end());
  BatchStream s(split, spec(4, 4, 12), 32, 5);
  for (int i = 0; i < 500; ++i) {
    const auto seq = s.next_sequence();
    EXPECT_EQ(seq.mode, SequenceMode::curriculum);
    EXPECT_TRUE(train.count({seq.params.a, seq.params.b}));
  }
}

TEST(BatchStream, VanillaRatioTwoToOne) {
  const auto split = split_pairs(Modulus(13), 0.8, 7);
  auto sp = spec(4, 4, 12);
  sp.mode = SequenceMode::vanilla_double;
  BatchStream s(split, sp, 1000, 77);
  int single = 0, dbl = 0, single_a = 0;
  for (int i = 0; i < 300; ++i) {
    for (const auto& seq : s.next_batch()) {
      if (seq.mode == SequenceMode::vanilla_double) ++dbl;
      else ++single;
      if (seq.mode == SequenceMode::vanilla_single_a) ++single_a;
    }
  }
  const double ratio = static_cast<double>(single) / dbl;
  EXPECT_NEAR(ratio, 2.0, 0.02);
  EXPECT_NEAR(static_cast<double>(single_a) / single, 0.5, 0.01);
}

// Both regimes expose the same (task, x, y) exemplar types; only their
// co-occurrence within a sequence differs.
TEST(BatchStream, ExemplarSupportMatchesAcrossRegimes) {
  const auto split = split_pairs(Modulus(13), 0.8, 7);
  auto collect = [&](SequenceMode mode) {
    auto sp = spec(4, 4, 12);
    sp.mode = mode;
    BatchStream s(split, sp, 1, 31);
    std::set<std::tuple<int, std::int64_t, std::int64_t, int, int>> types;
    for (int i = 0; i < 10000; ++i) {
      const auto seq = s.next_sequence();
      for (int k = 0; k < 12; ++k) {
        const int task = seq.mode == SequenceMode::vanilla_double ? 2
                         : seq.mode == SequenceMode::vanilla_single_a ? 0
                         : seq.mode == SequenceMode::vanilla_single_b ? 1
                                                                      : k / 4;
        const std::int64_t param = task == 0 ? seq.params.a : task == 1 ? seq.params.b : seq.params.a * 100 + seq.params.b;
        // Single tasks depend on one root only, so key them by that root.
        types.insert({task, param, 0, seq.x_at(k), seq.y_at(k)});
      }
    }
    return types;
  };
  EXPECT_EQ(collect(SequenceMode::curriculum), collect(SequenceMode::vanilla_double));
}

TEST(Dump, RoundTrip) {
  Rng rng(12);
  const auto t = TaskParams::make(Modulus(13), 2, 6);
  const auto comp = TaskParams::make(Modulus(13), 7, 11);
  std::vector<SequencePack> seqs{build_curriculum_sequence(t, spec(4, 4, 12), rng),
                                 build_vanilla_sequence(t, VanillaKind::single_b, 12, rng),
                                 build_mismatch_sequence(t, comp, spec(4, 4, 12), rng)};
  std::ostringstream os;
  write_dump_header(os);
  for (const auto& s : seqs) write_dump_record(os, s);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "mode\tp\ta\tb\ta'\tb'\tm\tn\ttokens\tweights");
  for (const auto& s : seqs) {
    std::getline(is, line);
    const auto back = parse_dump_record(line);
    EXPECT_EQ(back.tokens, s.tokens);
    EXPECT_EQ(back.loss_weight, s.loss_weight);
    EXPECT_EQ(back.mode, s.mode);
    EXPECT_EQ(back.block_bounds, s.block_bounds);
    EXPECT_EQ(back.probe_targets.size(), s.probe_targets.size());
    EXPECT_EQ(back.mismatch_params.has_value(), s.mismatch_params.has_value());
  }
  EXPECT_THROW(parse_dump_record("curriculum\t13\t2"), std::invalid_argument);
}

TEST(Spec, Validation) {
  EXPECT_NO_THROW(spec(10, 4).validate());
  EXPECT_THROW(spec(10, 5).validate(), std::invalid_argument);
  EXPECT_THROW(spec(12, 0).validate(), std::invalid_argument);
  auto v = spec(10, 5);
  v.mode = SequenceMode::vanilla_double;
  EXPECT_NO_THROW(v.validate());
}

}  // namespace
