#pragma once

// Forward/backward kernels for the fixed transformer graph. Every backward
// kernel accumulates (+=) into its gradient outputs; callers zero them.
// Matrices are row-major; "rows" index tokens, "cols" index features.

#include <span>
#include <vector>

#include "cicl/tensor.hpp"

namespace cicl::nn {

// out = a * b
template <typename Scalar>
void matmul(ConstMatrixMap<Scalar> a, ConstMatrixMap<Scalar> b, MatrixMap<Scalar> out);
// da += dout * b^T, db += a^T * dout. Either gradient may be skipped with null data.
template <typename Scalar>
void matmul_backward(ConstMatrixMap<Scalar> a, ConstMatrixMap<Scalar> b,
                     ConstMatrixMap<Scalar> dout, MatrixMap<Scalar> da,
                     MatrixMap<Scalar> db);

// out = x * w + bias (bias broadcast over rows).
template <typename Scalar>
void linear(ConstMatrixMap<Scalar> x, ConstMatrixMap<Scalar> w,
            ConstVectorMap<Scalar> bias, MatrixMap<Scalar> out);
template <typename Scalar>
void linear_backward(ConstMatrixMap<Scalar> x, ConstMatrixMap<Scalar> w,
                     ConstMatrixMap<Scalar> dout, MatrixMap<Scalar> dx,
                     MatrixMap<Scalar> dw, VectorMap<Scalar> dbias);

// out = a + b
template <typename Scalar>
void add(std::span<const Scalar> a, std::span<const Scalar> b, std::span<Scalar> out);
template <typename Scalar>
void add_backward(std::span<const Scalar> dout, std::span<Scalar> da, std::span<Scalar> db);

// out = s * a
template <typename Scalar>
void scale(std::span<const Scalar> a, Scalar s, std::span<Scalar> out);
template <typename Scalar>
void scale_backward(std::span<const Scalar> dout, Scalar s, std::span<Scalar> da);

// Row-wise softmax. Entries equal to -inf receive exactly zero probability.
template <typename Scalar>
void softmax_rows(ConstMatrixMap<Scalar> x, MatrixMap<Scalar> out);
template <typename Scalar>
void softmax_rows_backward(ConstMatrixMap<Scalar> y, ConstMatrixMap<Scalar> dy,
                           MatrixMap<Scalar> dx);

template <typename Scalar>
struct LayerNormCache {
  std::vector<Scalar> mean;
  std::vector<Scalar> rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes each row over the last dimension, then applies gain and bias.
template <typename Scalar>
void layer_norm(ConstMatrixMap<Scalar> x, ConstVectorMap<Scalar> gain,
                ConstVectorMap<Scalar> bias, MatrixMap<Scalar> out,
                LayerNormCache<Scalar>& cache);
template <typename Scalar>
void layer_norm_backward(ConstMatrixMap<Scalar> x, ConstVectorMap<Scalar> gain,
                         const LayerNormCache<Scalar>& cache,
                         ConstMatrixMap<Scalar> dout, MatrixMap<Scalar> dx,
                         VectorMap<Scalar> dgain, VectorMap<Scalar> dbias);

// Exact GELU: x * Phi(x).
template <typename Scalar>
void gelu(std::span<const Scalar> x, std::span<Scalar> out);
template <typename Scalar>
void gelu_backward(std::span<const Scalar> x, std::span<const Scalar> dout,
                   std::span<Scalar> dx);

// out[i] = table[ids[i]]
template <typename Scalar>
void embed_lookup(ConstMatrixMap<Scalar> table, std::span<const int> ids,
                  MatrixMap<Scalar> out);
template <typename Scalar>
void embed_lookup_backward(std::span<const int> ids, ConstMatrixMap<Scalar> dout,
                           MatrixMap<Scalar> dtable);

/// Multi-head causal self-attention over a packed [B*T x 3d] q|k|v matrix.
/// `probs` holds B*heads*T*T attention weights; future entries are exactly 0.
template <typename Scalar>
void causal_attention(ConstMatrixMap<Scalar> qkv, int batch, int seq_len, int heads,
                      MatrixMap<Scalar> out, std::span<Scalar> probs);
template <typename Scalar>
void causal_attention_backward(ConstMatrixMap<Scalar> qkv, int batch, int seq_len,
                               int heads, std::span<const Scalar> probs,
                               ConstMatrixMap<Scalar> dout, MatrixMap<Scalar> dqkv);

template <typename Scalar>
struct CrossEntropyResult {
  double loss = 0.0;                   // weighted mean
  std::vector<double> position_loss;   // unweighted -log p(target) per row
};

/// sum_i w_i * -log softmax(logits_i)[target_i] / sum_i w_i. Rows with zero
/// weight contribute to neither value nor gradient (their position_loss is
/// still reported when the target is valid). When `dlogits` has data the
/// gradient of the returned loss is accumulated into it.
template <typename Scalar>
CrossEntropyResult<Scalar> weighted_cross_entropy(ConstMatrixMap<Scalar> logits,
                                                  std::span<const int> targets,
                                                  std::span<const double> weights,
                                                  MatrixMap<Scalar> dlogits);

}  // namespace cicl::nn
