#include "cicl/kernels.hpp"

#include <unsupported/Eigen/SpecialFunctions>

#include <cmath>
#include <limits>
#include <sstream>

namespace cicl::nn {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

template <typename M>
std::span<const typename M::Scalar> span_of(const M& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
void ensure_finite(std::span<const Scalar> values, const char* what) {
  // Sum-based screen: any NaN/Inf poisons the sum; false positives from
  // overflow of finite values fall through to the exact scan.
  Scalar acc = 0;
  for (Scalar v : values) acc += v * Scalar(0);
  if (std::isfinite(acc)) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NonFiniteError(std::string("non-finite value in ") + what + " at index " +
                           std::to_string(i));
    }
  }
}

template <typename Scalar>
void matmul(ConstMatrixMap<Scalar> a, ConstMatrixMap<Scalar> b, MatrixMap<Scalar> out) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  require(out.rows() == a.rows() && out.cols() == b.cols(), "matmul: bad output shape");
  out.noalias() = a * b;
  ensure_finite(span_of(out), "matmul");
}

template <typename Scalar>
void matmul_backward(ConstMatrixMap<Scalar> a, ConstMatrixMap<Scalar> b,
                     ConstMatrixMap<Scalar> dout, MatrixMap<Scalar> da,
                     MatrixMap<Scalar> db) {
  require(dout.rows() == a.rows() && dout.cols() == b.cols(),
          "matmul_backward: bad upstream shape");
  if (da.data() != nullptr) {
    require(da.rows() == a.rows() && da.cols() == a.cols(), "matmul_backward: bad da");
    da.noalias() += dout * b.transpose();
    ensure_finite(span_of(da), "matmul_backward(da)");
  }
  if (db.data() != nullptr) {
    require(db.rows() == b.rows() && db.cols() == b.cols(), "matmul_backward: bad db");
    db.noalias() += a.transpose() * dout;
    ensure_finite(span_of(db), "matmul_backward(db)");
  }
}

template <typename Scalar>
void linear(ConstMatrixMap<Scalar> x, ConstMatrixMap<Scalar> w,
            ConstVectorMap<Scalar> bias, MatrixMap<Scalar> out) {
  require(x.cols() == w.rows(), "linear: inner dimensions differ");
  require(bias.size() == w.cols(), "linear: bias length");
  require(out.rows() == x.rows() && out.cols() == w.cols(), "linear: bad output shape");
  out.noalias() = x * w;
  out.rowwise() += bias.transpose();
  ensure_finite(span_of(out), "linear");
}

template <typename Scalar>
void linear_backward(ConstMatrixMap<Scalar> x, ConstMatrixMap<Scalar> w,
                     ConstMatrixMap<Scalar> dout, MatrixMap<Scalar> dx,
                     MatrixMap<Scalar> dw, VectorMap<Scalar> dbias) {
  matmul_backward<Scalar>(x, w, dout, dx, dw);
  if (dbias.data() != nullptr) {
    require(dbias.size() == w.cols(), "linear_backward: bias length");
    dbias.noalias() += dout.colwise().sum().transpose();
    ensure_finite(span_of(dbias), "linear_backward(dbias)");
  }
}

template <typename Scalar>
void add(std::span<const Scalar> a, std::span<const Scalar> b, std::span<Scalar> out) {
  require(a.size() == b.size() && a.size() == out.size(), "add: size mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  ensure_finite<Scalar>(out, "add");
}

template <typename Scalar>
void add_backward(std::span<const Scalar> dout, std::span<Scalar> da, std::span<Scalar> db) {
  require(da.size() == dout.size() && db.size() == dout.size(), "add_backward: size");
  for (std::size_t i = 0; i < dout.size(); ++i) {
    da[i] += dout[i];
    db[i] += dout[i];
  }
}

template <typename Scalar>
void scale(std::span<const Scalar> a, Scalar s, std::span<Scalar> out) {
  require(a.size() == out.size(), "scale: size mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  ensure_finite<Scalar>(out, "scale");
}

template <typename Scalar>
void scale_backward(std::span<const Scalar> dout, Scalar s, std::span<Scalar> da) {
  require(da.size() == dout.size(), "scale_backward: size mismatch");
  for (std::size_t i = 0; i < dout.size(); ++i) da[i] += s * dout[i];
}

template <typename Scalar>
void softmax_rows(ConstMatrixMap<Scalar> x, MatrixMap<Scalar> out) {
  require(x.rows() == out.rows() && x.cols() == out.cols(), "softmax_rows: shape");
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mx = x.row(r).maxCoeff();
    if (!std::isfinite(mx)) throw NonFiniteError("softmax_rows: row without finite entry");
    out.row(r) = (x.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  ensure_finite(span_of(out), "softmax_rows");
}

template <typename Scalar>
void softmax_rows_backward(ConstMatrixMap<Scalar> y, ConstMatrixMap<Scalar> dy,
                           MatrixMap<Scalar> dx) {
  require(y.rows() == dy.rows() && y.cols() == dy.cols(), "softmax_rows_backward: shape");
  require(dx.rows() == y.rows() && dx.cols() == y.cols(), "softmax_rows_backward: dx");
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const Scalar dot = y.row(r).dot(dy.row(r));
    dx.row(r).array() += y.row(r).array() * (dy.row(r).array() - dot);
  }
  ensure_finite(span_of(dx), "softmax_rows_backward");
}

template <typename Scalar>
void layer_norm(ConstMatrixMap<Scalar> x, ConstVectorMap<Scalar> gain,
                ConstVectorMap<Scalar> bias, MatrixMap<Scalar> out,
                LayerNormCache<Scalar>& cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  require(gain.size() == d && bias.size() == d, "layer_norm: parameter length");
  require(out.rows() == n && out.cols() == d, "layer_norm: output shape");
  cache.mean.resize(static_cast<std::size_t>(n));
  cache.rstd.resize(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const Scalar mean = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mean).square().mean();
    const Scalar rstd = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEps));
    cache.mean[static_cast<std::size_t>(r)] = mean;
    cache.rstd[static_cast<std::size_t>(r)] = rstd;
    out.row(r) = ((x.row(r).array() - mean) * rstd) * gain.transpose().array() +
                 bias.transpose().array();
  }
  ensure_finite(span_of(out), "layer_norm");
}

template <typename Scalar>
void layer_norm_backward(ConstMatrixMap<Scalar> x, ConstVectorMap<Scalar> gain,
                         const LayerNormCache<Scalar>& cache,
                         ConstMatrixMap<Scalar> dout, MatrixMap<Scalar> dx,
                         VectorMap<Scalar> dgain, VectorMap<Scalar> dbias) {
  const Eigen::Index n = x.rows(), d = x.cols();
  require(dout.rows() == n && dout.cols() == d, "layer_norm_backward: upstream");
  require(static_cast<Eigen::Index>(cache.mean.size()) == n, "layer_norm_backward: cache");
  Eigen::Array<Scalar, 1, Eigen::Dynamic> xhat(d), dxhat(d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Scalar mean = cache.mean[static_cast<std::size_t>(r)];
    const Scalar rstd = cache.rstd[static_cast<std::size_t>(r)];
    xhat = (x.row(r).array() - mean) * rstd;
    dxhat = dout.row(r).array() * gain.transpose().array();
    dgain.array() += (dout.row(r).array() * xhat).transpose();
    dbias.array() += dout.row(r).array().transpose();
    const Scalar mean_dxhat = dxhat.mean();
    const Scalar mean_dxhat_xhat = (dxhat * xhat).mean();
    dx.row(r).array() += rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
  }
  ensure_finite(span_of(dx), "layer_norm_backward");
}

template <typename Scalar>
void gelu(std::span<const Scalar> x, std::span<Scalar> out) {
  require(x.size() == out.size(), "gelu: size mismatch");
  using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  Eigen::Map<const Arr> xa(x.data(), static_cast<Eigen::Index>(x.size()));
  Eigen::Map<Arr> oa(out.data(), static_cast<Eigen::Index>(out.size()));
  const Scalar inv_sqrt2 = Scalar(0.70710678118654752440);
  oa = Scalar(0.5) * xa * (Scalar(1) + (xa * inv_sqrt2).erf());
  ensure_finite<Scalar>(out, "gelu");
}

template <typename Scalar>
void gelu_backward(std::span<const Scalar> x, std::span<const Scalar> dout,
                   std::span<Scalar> dx) {
  require(x.size() == dout.size() && x.size() == dx.size(), "gelu_backward: size");
  using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::Map<const Arr> xa(x.data(), n), ga(dout.data(), n);
  Eigen::Map<Arr> da(dx.data(), n);
  const Scalar inv_sqrt2 = Scalar(0.70710678118654752440);
  const Scalar inv_sqrt2pi = Scalar(0.39894228040143267794);
  da += ga * (Scalar(0.5) * (Scalar(1) + (xa * inv_sqrt2).erf()) +
              xa * inv_sqrt2pi * (Scalar(-0.5) * xa.square()).exp());
  ensure_finite<Scalar>(dx, "gelu_backward");
}

template <typename Scalar>
void embed_lookup(ConstMatrixMap<Scalar> table, std::span<const int> ids,
                  MatrixMap<Scalar> out) {
  require(out.rows() == static_cast<Eigen::Index>(ids.size()) && out.cols() == table.cols(),
          "embed_lookup: output shape");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) throw ShapeError("embed_lookup: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  }
}

template <typename Scalar>
void embed_lookup_backward(std::span<const int> ids, ConstMatrixMap<Scalar> dout,
                           MatrixMap<Scalar> dtable) {
  require(dout.rows() == static_cast<Eigen::Index>(ids.size()) && dout.cols() == dtable.cols(),
          "embed_lookup_backward: shape");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    dtable.row(ids[i]) += dout.row(static_cast<Eigen::Index>(i));
  }
  ensure_finite(span_of(dtable), "embed_lookup_backward");
}

template <typename Scalar>
void causal_attention(ConstMatrixMap<Scalar> qkv, int batch, int seq_len, int heads,
                      MatrixMap<Scalar> out, std::span<Scalar> probs) {
  const Eigen::Index d = out.cols();
  require(qkv.cols() == 3 * d && d % heads == 0, "causal_attention: packed width");
  require(qkv.rows() == Eigen::Index{batch} * seq_len && out.rows() == qkv.rows(),
          "causal_attention: rows");
  require(probs.size() == static_cast<std::size_t>(batch) * heads * seq_len * seq_len,
          "causal_attention: probs size");
  const Eigen::Index dh = d / heads, T = seq_len;
  const Scalar inv_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  RowMatrix<Scalar> scores(T, T);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto q = qkv.block(b * T, h * dh, T, dh);
      const auto k = qkv.block(b * T, d + h * dh, T, dh);
      const auto v = qkv.block(b * T, 2 * d + h * dh, T, dh);
      MatrixMap<Scalar> p(probs.data() + (static_cast<std::size_t>(b) * heads + h) * T * T, T, T);
      scores.noalias() = (q * k.transpose()) * inv_scale;
      p.setZero();
      for (Eigen::Index i = 0; i < T; ++i) {
        auto row = scores.row(i).head(i + 1).array();
        const Scalar mx = row.maxCoeff();
        p.row(i).head(i + 1) = (row - mx).exp().matrix();
        p.row(i).head(i + 1) /= p.row(i).head(i + 1).sum();
      }
      out.block(b * T, h * dh, T, dh).noalias() = p * v;
    }
  }
  ensure_finite(span_of(out), "causal_attention");
}

template <typename Scalar>
void causal_attention_backward(ConstMatrixMap<Scalar> qkv, int batch, int seq_len,
                               int heads, std::span<const Scalar> probs,
                               ConstMatrixMap<Scalar> dout, MatrixMap<Scalar> dqkv) {
  const Eigen::Index d = dout.cols();
  require(dqkv.rows() == qkv.rows() && dqkv.cols() == qkv.cols(),
          "causal_attention_backward: dqkv shape");
  const Eigen::Index dh = d / heads, T = seq_len;
  const Scalar inv_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  RowMatrix<Scalar> dp(T, T), ds(T, T);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const auto q = qkv.block(b * T, h * dh, T, dh);
      const auto k = qkv.block(b * T, d + h * dh, T, dh);
      const auto v = qkv.block(b * T, 2 * d + h * dh, T, dh);
      ConstMatrixMap<Scalar> p(probs.data() + (static_cast<std::size_t>(b) * heads + h) * T * T,
                               T, T);
      const auto dO = dout.block(b * T, h * dh, T, dh);
      dqkv.block(b * T, 2 * d + h * dh, T, dh).noalias() += p.transpose() * dO;
      dp.noalias() = dO * v.transpose();
      for (Eigen::Index i = 0; i < T; ++i) {
        const Scalar dot = p.row(i).head(i + 1).dot(dp.row(i).head(i + 1));
        ds.row(i).head(i + 1) =
            (p.row(i).head(i + 1).array() * (dp.row(i).head(i + 1).array() - dot)).matrix();
        ds.row(i).tail(T - i - 1).setZero();
      }
      ds *= inv_scale;
      dqkv.block(b * T, h * dh, T, dh).noalias() += ds * k;
      dqkv.block(b * T, d + h * dh, T, dh).noalias() += ds.transpose() * q;
    }
  }
  ensure_finite(span_of(dqkv), "causal_attention_backward");
}

template <typename Scalar>
CrossEntropyResult<Scalar> weighted_cross_entropy(ConstMatrixMap<Scalar> logits,
                                                  std::span<const int> targets,
                                                  std::span<const double> weights,
                                                  MatrixMap<Scalar> dlogits) {
  const Eigen::Index n = logits.rows(), vocab = logits.cols();
  require(static_cast<Eigen::Index>(targets.size()) == n &&
              static_cast<Eigen::Index>(weights.size()) == n,
          "weighted_cross_entropy: targets/weights length");
  double total_weight = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw std::invalid_argument("weighted_cross_entropy: weights must be finite and >= 0");
    }
    if (weights[i] > 0.0 && (targets[i] < 0 || targets[i] >= vocab)) {
      throw std::invalid_argument("weighted_cross_entropy: target out of range");
    }
    total_weight += weights[i];
  }
  if (total_weight <= 0.0) {
    throw std::invalid_argument("weighted_cross_entropy: all weights are zero");
  }
  const bool want_grad = dlogits.data() != nullptr;
  if (want_grad) {
    require(dlogits.rows() == n && dlogits.cols() == vocab, "weighted_cross_entropy: dlogits");
  }

  CrossEntropyResult<Scalar> result;
  result.position_loss.assign(static_cast<std::size_t>(n),
                              std::numeric_limits<double>::quiet_NaN());
  double weighted_sum = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int target = targets[static_cast<std::size_t>(r)];
    if (target < 0 || target >= vocab) continue;
    const double w = weights[static_cast<std::size_t>(r)];
    const double mx = static_cast<double>(logits.row(r).maxCoeff());
    double z = 0.0;
    for (Eigen::Index c = 0; c < vocab; ++c) z += std::exp(static_cast<double>(logits(r, c)) - mx);
    const double lse = mx + std::log(z);
    const double nll = lse - static_cast<double>(logits(r, target));
    result.position_loss[static_cast<std::size_t>(r)] = nll;
    if (w == 0.0) continue;
    weighted_sum += w * nll;
    if (want_grad) {
      const double coef = w / total_weight;
      for (Eigen::Index c = 0; c < vocab; ++c) {
        const double prob = std::exp(static_cast<double>(logits(r, c)) - lse);
        dlogits(r, c) += static_cast<Scalar>(coef * (prob - (c == target ? 1.0 : 0.0)));
      }
    }
  }
  result.loss = weighted_sum / total_weight;
  if (!std::isfinite(result.loss)) throw NonFiniteError("weighted_cross_entropy: loss");
  return result;
}

#define CICL_INSTANTIATE_KERNELS(S)                                                        \
  template void ensure_finite<S>(std::span<const S>, const char*);                         \
  template void matmul<S>(ConstMatrixMap<S>, ConstMatrixMap<S>, MatrixMap<S>);             \
  template void matmul_backward<S>(ConstMatrixMap<S>, ConstMatrixMap<S>, ConstMatrixMap<S>, \
                                   MatrixMap<S>, MatrixMap<S>);                            \
  template void linear<S>(ConstMatrixMap<S>, ConstMatrixMap<S>, ConstVectorMap<S>,         \
                          MatrixMap<S>);                                                   \
  template void linear_backward<S>(ConstMatrixMap<S>, ConstMatrixMap<S>, ConstMatrixMap<S>, \
                                   MatrixMap<S>, MatrixMap<S>, VectorMap<S>);              \
  template void add<S>(std::span<const S>, std::span<const S>, std::span<S>);              \
  template void add_backward<S>(std::span<const S>, std::span<S>, std::span<S>);           \
  template void scale<S>(std::span<const S>, S, std::span<S>);                             \
  template void scale_backward<S>(std::span<const S>, S, std::span<S>);                    \
  template void softmax_rows<S>(ConstMatrixMap<S>, MatrixMap<S>);                          \
  template void softmax_rows_backward<S>(ConstMatrixMap<S>, ConstMatrixMap<S>,             \
                                         MatrixMap<S>);                                    \
  template void layer_norm<S>(ConstMatrixMap<S>, ConstVectorMap<S>, ConstVectorMap<S>,     \
                              MatrixMap<S>, LayerNormCache<S>&);                           \
  template void layer_norm_backward<S>(ConstMatrixMap<S>, ConstVectorMap<S>,               \
                                       const LayerNormCache<S>&, ConstMatrixMap<S>,        \
                                       MatrixMap<S>, VectorMap<S>, VectorMap<S>);          \
  template void gelu<S>(std::span<const S>, std::span<S>);                                 \
  template void gelu_backward<S>(std::span<const S>, std::span<const S>, std::span<S>);    \
  template void embed_lookup<S>(ConstMatrixMap<S>, std::span<const int>, MatrixMap<S>);    \
  template void embed_lookup_backward<S>(std::span<const int>, ConstMatrixMap<S>,          \
                                         MatrixMap<S>);                                    \
  template void causal_attention<S>(ConstMatrixMap<S>, int, int, int, MatrixMap<S>,        \
                                    std::span<S>);                                         \
  template void causal_attention_backward<S>(ConstMatrixMap<S>, int, int, int,             \
                                             std::span<const S>, ConstMatrixMap<S>,        \
                                             MatrixMap<S>);                                \
  template CrossEntropyResult<S> weighted_cross_entropy<S>(                                \
      ConstMatrixMap<S>, std::span<const int>, std::span<const double>, MatrixMap<S>);

CICL_INSTANTIATE_KERNELS(float)
CICL_INSTANTIATE_KERNELS(double)

#undef CICL_INSTANTIATE_KERNELS

}  // namespace cicl::nn
