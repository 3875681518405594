#pragma once

// Decoder-only transformer: token embedding plus fixed sinusoidal positions,
// pre-norm causal attention and GELU MLP blocks, final layer norm and an
// untied output projection.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cicl/kernels.hpp"
#include "cicl/tensor.hpp"

namespace cicl {

enum class Precision { f32, f64 };

std::string to_string(Precision precision);
Precision parse_precision(const std::string& name);

struct ModelConfig {
  int layers = 8;
  int d_model = 128;
  int heads = 8;
  int mlp_hidden = 512;
  double pos_time_constant = 120.0;
  int vocab = 59;
  int max_seq = 48;
  Precision precision = Precision::f32;
  double init_std = 0.02;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// PE[t, 2i] = sin(t / tc^(2i/d)), PE[t, 2i+1] = cos(t / tc^(2i/d)).
nn::Tensor<double> sinusoidal_positions(int length, int dim, double time_constant);

/// Model outputs for one batch of B sequences of length T, in double precision.
struct ForwardTrace {
  int batch = 0;
  int seq_len = 0;
  nn::Tensor<double> logits;               // [B*T x vocab]
  std::vector<nn::Tensor<double>> hidden;  // layers+1 entries of [B*T x d]; [0] = embeddings
  std::vector<nn::Tensor<double>> attention;  // per layer [B x heads x T x T]

  /// Attention weights of (sequence, layer, head) as a T x T row-major view.
  nn::ConstMatrixMap<double> attention_map(int seq, int layer, int head) const;
};

/// Read-only view of a trained model, as consumed by the analysis routines.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual int vocab() const = 0;
  virtual int layers() const = 0;
  virtual int heads() const = 0;
  virtual int d_model() const = 0;
  virtual int max_seq() const = 0;
  /// `internals` requests hidden states and attention maps besides logits.
  virtual ForwardTrace trace(std::span<const int> tokens, int batch, int seq_len,
                             bool internals) const = 0;
};

template <typename Scalar>
struct LayerCache {
  nn::Tensor<Scalar> ln1_out, qkv, probs, att_out, mid, ln2_out, fc1, act;
  nn::LayerNormCache<Scalar> ln1, ln2;
};

template <typename Scalar>
struct ForwardCache {
  int batch = 0;
  int seq_len = 0;
  std::vector<int> tokens;
  std::vector<nn::Tensor<Scalar>> resid;  // layers+1 residual stream states
  std::vector<LayerCache<Scalar>> layer;
  nn::Tensor<Scalar> final_out;
  nn::LayerNormCache<Scalar> final_ln;
  nn::Tensor<Scalar> logits;
};

template <typename Scalar>
class Transformer final : public SequenceModel {
 public:
  Transformer(const ModelConfig& config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  nn::ParamStore<Scalar>& params() { return params_; }
  const nn::ParamStore<Scalar>& params() const { return params_; }

  /// Runs the batch and keeps every activation needed by backward().
  void forward(std::span<const int> tokens, int batch, int seq_len,
               ForwardCache<Scalar>& cache) const;
  /// Accumulates parameter gradients for upstream gradient `dlogits`.
  void backward(const ForwardCache<Scalar>& cache, nn::ConstMatrixMap<Scalar> dlogits);

  int vocab() const override { return config_.vocab; }
  int layers() const override { return config_.layers; }
  int heads() const override { return config_.heads; }
  int d_model() const override { return config_.d_model; }
  int max_seq() const override { return config_.max_seq; }
  ForwardTrace trace(std::span<const int> tokens, int batch, int seq_len,
                     bool internals) const override;

 private:
  struct LayerParams {
    std::size_t ln1_gain, ln1_bias, w_qkv, b_qkv, w_o, b_o;
    std::size_t ln2_gain, ln2_bias, w_fc1, b_fc1, w_fc2, b_fc2;
  };

  nn::ConstMatrixMap<Scalar> w(std::size_t i) const { return params_.at(i).value.cmat(); }
  nn::ConstVectorMap<Scalar> v(std::size_t i) const { return params_.at(i).value.cvec(); }
  nn::MatrixMap<Scalar> gw(std::size_t i) { return params_.at(i).grad.mat(); }
  nn::VectorMap<Scalar> gv(std::size_t i) { return params_.at(i).grad.vec(); }

  ModelConfig config_;
  nn::ParamStore<Scalar> params_;
  nn::Tensor<Scalar> positions_;
  std::size_t tok_embed_ = 0;
  std::vector<LayerParams> layer_params_;
  std::size_t lnf_gain_ = 0, lnf_bias_ = 0, w_out_ = 0, b_out_ = 0;
};

/// Number of scalar parameters implied by a configuration.
std::size_t parameter_count(const ModelConfig& config);

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace cicl
