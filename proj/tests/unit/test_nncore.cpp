#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cicl/kernels.hpp"
#include "cicl/optim.hpp"

namespace {

using namespace cicl::nn;
using Mat = RowMatrix<double>;

void fill_normal(Tensor<double>& t, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(rng);
}

// Scalar readout sum(out .* r) whose gradient w.r.t. out is r.
struct Readout {
  Tensor<double> r;
  explicit Readout(std::vector<std::size_t> shape, std::uint64_t seed) : r(std::move(shape)) {
    fill_normal(r, seed);
  }
  double value(const Tensor<double>& out) const { return out.cvec().dot(r.cvec()); }
};

GradCheckReport check(ParamStore<double>& ps, const std::function<double(bool)>& f) {
  GradCheckOptions o;
  o.seed = 3;
  return grad_check(f, ps, o);
}

TEST(Kernels, MatmulIdentityAndGradient) {
  Mat eye = Mat::Identity(3, 3);
  Mat m(3, 2);
  m << 1, 2, 3, 4, 5, 6;
  Mat out(3, 2);
  matmul<double>(ConstMatrixMap<double>(eye.data(), 3, 3), ConstMatrixMap<double>(m.data(), 3, 2),
                 MatrixMap<double>(out.data(), 3, 2));
  EXPECT_EQ(out, m);

  ParamStore<double> ps;
  const auto a = ps.add("a", {4, 5});
  const auto b = ps.add("b", {5, 3});
  fill_normal(ps.at(a).value, 1);
  fill_normal(ps.at(b).value, 2);
  Readout ro({4, 3}, 9);
  auto f = [&](bool grad) {
    Tensor<double> o({4, 3});
    matmul<double>(ps.at(a).value.cmat(), ps.at(b).value.cmat(), o.mat());
    if (grad) {
      matmul_backward<double>(ps.at(a).value.cmat(), ps.at(b).value.cmat(), ro.r.cmat(),
                              ps.at(a).grad.mat(), ps.at(b).grad.mat());
    }
    return ro.value(o);
  };
  EXPECT_LT(check(ps, f).max_rel_error, 1e-6);
}

TEST(Kernels, ShapeMismatchThrows) {
  Mat a(2, 3), b(2, 3), out(2, 3);
  EXPECT_THROW(matmul<double>(ConstMatrixMap<double>(a.data(), 2, 3), ConstMatrixMap<double>(b.data(), 2, 3),
                              MatrixMap<double>(out.data(), 2, 3)),
               ShapeError);
}

TEST(Kernels, LinearGradient) {
  ParamStore<double> ps;
  const auto x = ps.add("x", {6, 4});
  const auto w = ps.add("w", {4, 3});
  const auto bias = ps.add("bias", {3});
  for (std::size_t i = 0; i < 3; ++i) fill_normal(ps.at(i).value, 10 + i);
  Readout ro({6, 3}, 4);
  auto f = [&](bool grad) {
    Tensor<double> o({6, 3});
    linear<double>(ps.at(x).value.cmat(), ps.at(w).value.cmat(), ps.at(bias).value.cvec(), o.mat());
    if (grad) {
      linear_backward<double>(ps.at(x).value.cmat(), ps.at(w).value.cmat(), ro.r.cmat(), ps.at(x).grad.mat(),
                              ps.at(w).grad.mat(), ps.at(bias).grad.vec());
    }
    return ro.value(o);
  };
  EXPECT_LT(check(ps, f).max_rel_error, 1e-6);
}

TEST(Kernels, AddAndScaleGradient) {
  ParamStore<double> ps;
  const auto a = ps.add("a", {10});
  const auto b = ps.add("b", {10});
  fill_normal(ps.at(a).value, 1);
  fill_normal(ps.at(b).value, 2);
  Readout ro({10}, 3);
  auto f = [&](bool grad) {
    Tensor<double> sum({10}), out({10});
    add<double>(ps.at(a).value.values(), ps.at(b).value.values(), sum.values());
    scale<double>(sum.values(), 1.7, out.values());
    if (grad) {
      Tensor<double> dsum({10});
      scale_backward<double>(ro.r.values(), 1.7, dsum.values());
      add_backward<double>(dsum.values(), ps.at(a).grad.values(), ps.at(b).grad.values());
    }
    return ro.value(out);
  };
  EXPECT_LT(check(ps, f).max_rel_error, 1e-6);
}

TEST(Kernels, SoftmaxRowsProperties) {
  Mat x = Mat::Constant(2, 5, 3.0);
  Mat y(2, 5);
  softmax_rows<double>(ConstMatrixMap<double>(x.data(), 2, 5), MatrixMap<double>(y.data(), 2, 5));
  for (int i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(y.data()[i], 0.2);

  Tensor<double> big({7, 9});
  fill_normal(big, 5, 30.0);
  Tensor<double> p({7, 9});
  softmax_rows<double>(big.cmat(), p.mat());
  for (Eigen::Index i = 0; i < 7; ++i) {
    EXPECT_NEAR(p.cmat().row(i).sum(), 1.0, 1e-6);
    EXPECT_GE(p.cmat().row(i).minCoeff(), 0.0);
  }

  ParamStore<double> ps;
  const auto xi = ps.add("x", {4, 6});
  fill_normal(ps.at(xi).value, 6);
  Readout ro({4, 6}, 7);
  auto f = [&](bool grad) {
    Tensor<double> out({4, 6});
    softmax_rows<double>(ps.at(xi).value.cmat(), out.mat());
    if (grad) softmax_rows_backward<double>(out.cmat(), ro.r.cmat(), ps.at(xi).grad.mat());
    return ro.value(out);
  };
  EXPECT_LT(check(ps, f).max_rel_error, 1e-6);
}

TEST(Kernels, LayerNormGradient) {
  ParamStore<double> ps;
  const auto x = ps.add("x", {5, 8});
  const auto g = ps.add("gain", {8});
  const auto b = ps.add("bias", {8});
  for (std::size_t i = 0; i < 3; ++i) fill_normal(ps.at(i).value, 20 + i);
  Readout ro({5, 8}, 8);
  auto f = [&](bool grad) {
    Tensor<double> out({5, 8});
    LayerNormCache<double> cache;
    layer_norm<double>(ps.at(x).value.cmat(), ps.at(g).value.cvec(), ps.at(b).value.cvec(), out.mat(), cache);
    if (grad) {
      layer_norm_backward<double>(ps.at(x).value.cmat(), ps.at(g).value.cvec(), cache, ro.r.cmat(),
                                  ps.at(x).grad.mat(), ps.at(g).grad.vec(), ps.at(b).grad.vec());
    }
    return ro.value(out);
  };
  EXPECT_LT(check(ps, f).max_rel_error, 1e-5);
}

TEST(Kernels, LayerNormNormalizes) {
  Tensor<double> x({3, 16});
  fill_normal(x, 2, 5.0);
  Tensor<double> gain({16}), bias({16}), out({3, 16});
  for (std::size_t i = 0; i < 16; ++i) gain[i] = 1.0;
  LayerNormCache<double> cache;
  layer_norm<double>(x.cmat(), gain.cvec(), bias.cvec(), out.mat(), cache);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(out.cmat().row(i).mean(), 0.0, 1e-12);
    EXPECT_NEAR(out.cmat().row(i).squaredNorm() / 16.0, 1.0, 1e-3);
  }
}

TEST(Kernels, GeluValuesAndGradient) {
  std::vector<double> in{-3.0, -1.0, 0.0, 0.5, 2.0};
  std::vector<double> out(in.size());
  gelu<double>(in, out);
  for (std::size_t i = 0; i < in.size(); ++i) {
    EXPECT_NEAR(out[i], in[i] * 0.5 * std::erfc(-in[i] / std::sqrt(2.0)), 1e-14);
  }
  ParamStore<double> ps;
  const auto x = ps.add("x", {20});
  fill_normal(ps.at(x).value, 3, 2.0);
  Readout ro({20}, 1);
  auto f = [&](bool grad) {
    Tensor<double> o({20});
    gelu<double>(ps.at(x).value.values(), o.values());
    if (grad) gelu_backward<double>(ps.at(x).value.values(), ro.r.values(), ps.at(x).grad.values());
    return ro.value(o);
  };
  EXPECT_LT(check(ps, f).max_rel_error, 1e-6);
}

TEST(Kernels, EmbedLookupGradient) {
  ParamStore<double> ps;
  const auto table = ps.add("table", {7, 3});
  fill_normal(ps.at(table).value, 4);
  const std::vector<int> ids{0, 3, 3, 6, 1};
  Readout ro({5, 3}, 2);
  auto f = [&](bool grad) {
    Tensor<double> o({5, 3});
    embed_lookup<double>(ps.at(table).value.cmat(), ids, o.mat());
    if (grad) embed_lookup_backward<double>(ids, ro.r.cmat(), ps.at(table).grad.mat());
    return ro.value(o);
  };
  EXPECT_LT(check(ps, f).max_rel_error, 1e-6);
  Tensor<double> o({1, 3});
  const std::vector<int> bad{7};
  EXPECT_THROW(embed_lookup<double>(ps.at(table).value.cmat(), bad, o.mat()), ShapeError);
}

TEST(Kernels, CausalAttentionMaskAndGradient) {
  const int B = 2, T = 5, H = 2, d = 4;
  ParamStore<double> ps;
  const auto qkv = ps.add("qkv", {static_cast<std::size_t>(B * T), static_cast<std::size_t>(3 * d)});
  fill_normal(ps.at(qkv).value, 5);
  Readout ro({static_cast<std::size_t>(B * T), static_cast<std::size_t>(d)}, 6);
  std::vector<double> probs(static_cast<std::size_t>(B * H * T * T));
  auto f = [&](bool grad) {
    Tensor<double> o({static_cast<std::size_t>(B * T), static_cast<std::size_t>(d)});
    causal_attention<double>(ps.at(qkv).value.cmat(), B, T, H, o.mat(), probs);
    if (grad) causal_attention_backward<double>(ps.at(qkv).value.cmat(), B, T, H, probs, ro.r.cmat(), ps.at(qkv).grad.mat());
    return ro.value(o);
  };
  EXPECT_LT(check(ps, f).max_rel_error, 1e-5);
  f(false);
  for (int bh = 0; bh < B * H; ++bh) {
    for (int i = 0; i < T; ++i) {
      double row = 0.0;
      for (int j = 0; j < T; ++j) {
        const double v = probs[static_cast<std::size_t>((bh * T + i) * T + j)];
        if (j > i) EXPECT_EQ(v, 0.0);
        EXPECT_GE(v, 0.0);
        row += v;
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
    }
  }
}

TEST(CrossEntropy, Examples) {
  const int V = 59;
  Tensor<double> uniform({3, static_cast<std::size_t>(V)});
  const std::vector<int> targets{4, 10, 58};
  const std::vector<double> w{1.0, 1.0, 1.0};
  auto r = weighted_cross_entropy<double>(uniform.cmat(), targets, w, no_grad<double>());
  EXPECT_NEAR(r.loss, std::log(59.0), 1e-12);
  EXPECT_NEAR(std::log(59.0), 4.0775, 1e-4);

  Tensor<double> sharp({3, static_cast<std::size_t>(V)});
  for (int i = 0; i < 3; ++i) sharp[static_cast<std::size_t>(i * V + targets[static_cast<std::size_t>(i)])] = 60.0;
  EXPECT_LT(weighted_cross_entropy<double>(sharp.cmat(), targets, w, no_grad<double>()).loss, 1e-20);

  EXPECT_THROW(weighted_cross_entropy<double>(uniform.cmat(), targets, std::vector<double>{0, 0, 0}, no_grad<double>()),
               std::invalid_argument);
  EXPECT_THROW(weighted_cross_entropy<double>(uniform.cmat(), std::vector<int>{1, 2, 59}, w, no_grad<double>()),
               std::invalid_argument);
}

TEST(CrossEntropy, WeightScaleInvariance) {
  Tensor<double> logits({6, 11});
  fill_normal(logits, 8, 3.0);
  const std::vector<int> t{1, 2, 3, 4, 5, -1};
  const std::vector<double> w{1.0, 0.0, 2.5, 2.5, 1.0, 0.0};
  std::vector<double> w2;
  for (double v : w) w2.push_back(v * 2.0);
  std::vector<double> w3;
  for (double v : w) w3.push_back(v * 0.37);
  const double a = weighted_cross_entropy<double>(logits.cmat(), t, w, no_grad<double>()).loss;
  EXPECT_EQ(a, weighted_cross_entropy<double>(logits.cmat(), t, w2, no_grad<double>()).loss);
  EXPECT_NEAR(a, weighted_cross_entropy<double>(logits.cmat(), t, w3, no_grad<double>()).loss, 1e-14 * a);

  Tensor<float> lf({6, 11});
  for (std::size_t i = 0; i < lf.size(); ++i) lf[i] = static_cast<float>(logits[i]);
  const double af = weighted_cross_entropy<float>(lf.cmat(), t, w, no_grad<float>()).loss;
  const double bf = weighted_cross_entropy<float>(lf.cmat(), t, w3, no_grad<float>()).loss;
  EXPECT_LE(std::abs(af - bf), 1e-6 * af);
}

TEST(CrossEntropy, Gradient) {
  ParamStore<double> ps;
  const auto l = ps.add("logits", {5, 7});
  fill_normal(ps.at(l).value, 3);
  const std::vector<int> t{0, 6, 3, 2, -1};
  const std::vector<double> w{1.0, 2.0, 0.5, 0.0, 0.0};
  auto f = [&](bool grad) {
    return weighted_cross_entropy<double>(ps.at(l).value.cmat(), t, w,
                                          grad ? ps.at(l).grad.mat() : no_grad<double>())
        .loss;
  };
  EXPECT_LT(check(ps, f).max_rel_error, 1e-6);
}

TEST(CrossEntropy, NonFiniteLogitsAreAnError) {
  Tensor<double> logits({2, 3});
  logits[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(weighted_cross_entropy<double>(logits.cmat(), std::vector<int>{0, 1}, std::vector<double>{1, 1},
                                              no_grad<double>()),
               NonFiniteError);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamStore<double> ps(1);
  const auto w = ps.add("w", {3, 3});
  ps.initialize(w, InitKind::normal);
  const auto before = ps.at(w).value;
  auto st = AdamState<double>::for_params(ps, 7.5e-4);
  for (int i = 0; i < 10; ++i) adam_step(ps, st);
  EXPECT_EQ(ps.at(w).value, before);
  EXPECT_EQ(st.step, 10);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore<double> ps;
  const auto w = ps.add("w", {4});
  auto st = AdamState<double>::for_params(ps, 7.5e-4);
  EXPECT_EQ(st.lr, 7.5e-4);
  const std::vector<double> g{0.3, -2.0, 1e-3, 50.0};
  for (std::size_t i = 0; i < 4; ++i) ps.at(w).grad[i] = g[i];
  adam_step(ps, st);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(ps.at(w).value[i], -std::copysign(7.5e-4, g[i]), 1e-8);
    EXPECT_EQ(ps.at(w).grad[i], 0.0);
  }
}

TEST(Adam, MatchesReferenceOverSeveralSteps) {
  ParamStore<double> ps;
  const auto w = ps.add("w", {1});
  auto st = AdamState<double>::for_params(ps, 0.1);
  double m = 0, v = 0, x = 0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 0.5 * t - 1.0;
    ps.at(w).grad[0] = g;
    adam_step(ps, st);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(ps.at(w).value[0], x, 1e-12);
  }
}

TEST(Adam, NonFiniteGradientRejected) {
  ParamStore<double> ps;
  const auto w = ps.add("w", {2});
  auto st = AdamState<double>::for_params(ps, 0.1);
  ps.at(w).grad[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam_step(ps, st), NonFiniteError);
  EXPECT_EQ(ps.at(w).value[0], 0.0);
  EXPECT_EQ(st.step, 0);
}

TEST(GradCheck, QuadraticIsNearlyExact) {
  ParamStore<double> ps;
  const auto w = ps.add("w", {30});
  for (std::size_t i = 0; i < 30; ++i) ps.at(w).value[i] = (i % 2 ? -1.0 : 1.0) * (0.5 + 0.05 * static_cast<double>(i));
  auto f = [&](bool grad) {
    double loss = 0.0;
    for (std::size_t i = 0; i < 30; ++i) {
      const double c = 1.0 + 0.1 * static_cast<double>(i);
      loss += 0.5 * c * ps.at(w).value[i] * ps.at(w).value[i];
      if (grad) ps.at(w).grad[i] += c * ps.at(w).value[i];
    }
    return loss;
  };
  const auto r = check(ps, f);
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.coordinates_checked, 30u);
}

TEST(GradCheck, CorruptedBackwardFails) {
  ParamStore<double> ps;
  const auto x = ps.add("x", {5, 8});
  const auto g = ps.add("gain", {8});
  const auto b = ps.add("bias", {8});
  for (std::size_t i = 0; i < 3; ++i) fill_normal(ps.at(i).value, 40 + i);
  Readout ro({5, 8}, 8);
  auto f = [&](bool grad) {
    Tensor<double> out({5, 8});
    LayerNormCache<double> cache;
    layer_norm<double>(ps.at(x).value.cmat(), ps.at(g).value.cvec(), ps.at(b).value.cvec(), out.mat(), cache);
    if (grad) {
      layer_norm_backward<double>(ps.at(x).value.cmat(), ps.at(g).value.cvec(), cache, ro.r.cmat(),
                                  ps.at(x).grad.mat(), ps.at(g).grad.vec(), ps.at(b).grad.vec());
      ps.at(x).grad.mat() *= 1.01;
    }
    return ro.value(out);
  };
  const auto r = check(ps, f);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.worst_param, "x");
}

TEST(Kernels, Deterministic) {
  Tensor<float> qkv({24, 48});
  for (std::size_t i = 0; i < qkv.size(); ++i) qkv[i] = std::sin(static_cast<float>(i));
  Tensor<float> p1({2 * 4 * 12 * 12}), p2({2 * 4 * 12 * 12});
  Tensor<float> o1({24, 16}), o2({24, 16});
  causal_attention<float>(qkv.cmat(), 2, 12, 4, o1.mat(), p1.values());
  causal_attention<float>(qkv.cmat(), 2, 12, 4, o2.mat(), p2.values());
  EXPECT_EQ(o1, o2);
  EXPECT_EQ(p1, p2);
}

TEST(ParamStore, UniqueNamesAndInit) {
  ParamStore<double> ps(5);
  const auto w = ps.add("w", {100, 10});
  EXPECT_THROW(ps.add("w", {1}), std::invalid_argument);
  ps.initialize(w, InitKind::normal, 0.02);
  double maxabs = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < ps.at(w).value.size(); ++i) {
    maxabs = std::max(maxabs, std::abs(ps.at(w).value[i]));
    sum2 += ps.at(w).value[i] * ps.at(w).value[i];
  }
  EXPECT_LE(maxabs, 0.04);
  EXPECT_NEAR(std::sqrt(sum2 / 1000.0), 0.0176, 0.002);  // std of a 2-sigma truncated normal
  EXPECT_EQ(ps.at(w).grad.shape(), ps.at(w).value.shape());
  EXPECT_EQ(ps.count(), 1000u);
}

}  // namespace
