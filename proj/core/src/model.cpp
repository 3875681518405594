#include "cicl/model.hpp"

#include <cmath>
#include <stdexcept>

namespace cicl {

using nn::ConstMatrixMap;
using nn::MatrixMap;
using nn::Tensor;

std::string to_string(Precision precision) {
  return precision == Precision::f32 ? "float32" : "float64";
}

Precision parse_precision(const std::string& name) {
  if (name == "float32") return Precision::f32;
  if (name == "float64") return Precision::f64;
  throw std::invalid_argument("unknown precision '" + name + "' (float32|float64)");
}

void ModelConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("model.layers must be >= 1");
  if (d_model < 2 || d_model % 2 != 0) throw std::invalid_argument("model.d_model must be even");
  if (heads < 1 || d_model % heads != 0) {
    throw std::invalid_argument("model.d_model must be divisible by model.heads");
  }
  if (mlp_hidden < 1) throw std::invalid_argument("model.mlp_hidden must be >= 1");
  if (!(pos_time_constant > 0.0)) throw std::invalid_argument("model.pos_time_constant must be > 0");
  if (vocab < 2) throw std::invalid_argument("model.vocab must be >= 2");
  if (max_seq < 1) throw std::invalid_argument("model.max_seq must be >= 1");
  if (!(init_std > 0.0)) throw std::invalid_argument("model.init_std must be > 0");
}

Tensor<double> sinusoidal_positions(int length, int dim, double time_constant) {
  if (dim % 2 != 0) throw std::invalid_argument("sinusoidal_positions: dim must be even");
  Tensor<double> pe({static_cast<std::size_t>(length), static_cast<std::size_t>(dim)});
  auto m = pe.mat();
  for (int i = 0; i < dim / 2; ++i) {
    const double inv_wavelength = std::pow(time_constant, -2.0 * i / dim);
    for (int t = 0; t < length; ++t) {
      m(t, 2 * i) = std::sin(t * inv_wavelength);
      m(t, 2 * i + 1) = std::cos(t * inv_wavelength);
    }
  }
  return pe;
}

nn::ConstMatrixMap<double> ForwardTrace::attention_map(int seq, int layer, int head) const {
  const auto& att = attention.at(static_cast<std::size_t>(layer));
  const std::size_t heads = att.shape().at(1);
  const std::size_t tt = static_cast<std::size_t>(seq_len) * seq_len;
  return {att.data() + (static_cast<std::size_t>(seq) * heads + head) * tt, seq_len, seq_len};
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, h = c.mlp_hidden, v = c.vocab;
  const std::size_t per_layer = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d +
                                (d * h + h) + (h * d + d);
  return v * d + c.layers * per_layer + 2 * d + d * v + v;
}

template <typename Scalar>
Transformer<Scalar>::Transformer(const ModelConfig& config, std::uint64_t init_seed)
    : config_(config), params_(init_seed) {
  config_.validate();
  const std::size_t d = config_.d_model, hid = config_.mlp_hidden, vocab = config_.vocab;
  const double stdv = config_.init_std;
  auto normal = [&](const std::string& name, std::vector<std::size_t> shape) {
    auto i = params_.add(name, std::move(shape));
    params_.initialize(i, nn::InitKind::normal, stdv);
    return i;
  };
  auto ones = [&](const std::string& name, std::size_t n) {
    auto i = params_.add(name, {n});
    params_.initialize(i, nn::InitKind::ones);
    return i;
  };
  auto zeros = [&](const std::string& name, std::size_t n) { return params_.add(name, {n}); };

  tok_embed_ = normal("tok_embed", {vocab, d});
  for (int l = 0; l < config_.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    LayerParams lp{};
    lp.ln1_gain = ones(pre + "ln1.gain", d);
    lp.ln1_bias = zeros(pre + "ln1.bias", d);
    lp.w_qkv = normal(pre + "attn.w_qkv", {d, 3 * d});
    lp.b_qkv = zeros(pre + "attn.b_qkv", 3 * d);
    lp.w_o = normal(pre + "attn.w_o", {d, d});
    lp.b_o = zeros(pre + "attn.b_o", d);
    lp.ln2_gain = ones(pre + "ln2.gain", d);
    lp.ln2_bias = zeros(pre + "ln2.bias", d);
    lp.w_fc1 = normal(pre + "mlp.w_fc1", {d, hid});
    lp.b_fc1 = zeros(pre + "mlp.b_fc1", hid);
    lp.w_fc2 = normal(pre + "mlp.w_fc2", {hid, d});
    lp.b_fc2 = zeros(pre + "mlp.b_fc2", d);
    layer_params_.push_back(lp);
  }
  lnf_gain_ = ones("final_ln.gain", d);
  lnf_bias_ = zeros("final_ln.bias", d);
  w_out_ = normal("unembed.weight", {d, vocab});
  b_out_ = zeros("unembed.bias", vocab);

  const auto pe = sinusoidal_positions(config_.max_seq, config_.d_model, config_.pos_time_constant);
  positions_ = Tensor<Scalar>(pe.shape());
  for (std::size_t i = 0; i < pe.size(); ++i) positions_[i] = static_cast<Scalar>(pe[i]);
}

template <typename Scalar>
void Transformer<Scalar>::forward(std::span<const int> tokens, int batch, int seq_len,
                                  ForwardCache<Scalar>& cache) const {
  if (seq_len > config_.max_seq) {
    throw std::invalid_argument("sequence length " + std::to_string(seq_len) +
                                " exceeds max_seq " + std::to_string(config_.max_seq));
  }
  if (batch < 1 || seq_len < 1 ||
      tokens.size() != static_cast<std::size_t>(batch) * static_cast<std::size_t>(seq_len)) {
    throw nn::ShapeError("forward: token count does not match batch x seq_len");
  }
  for (int t : tokens) {
    if (t < 0 || t >= config_.vocab) throw std::invalid_argument("forward: token id out of vocab");
  }
  const std::size_t rows = tokens.size();
  const std::size_t d = config_.d_model, hid = config_.mlp_hidden;
  const std::size_t layers = static_cast<std::size_t>(config_.layers);
  cache.batch = batch;
  cache.seq_len = seq_len;
  cache.tokens.assign(tokens.begin(), tokens.end());
  cache.resid.assign(layers + 1, Tensor<Scalar>({rows, d}));
  cache.layer.resize(layers);

  auto x0 = cache.resid[0].mat();
  nn::embed_lookup<Scalar>(w(tok_embed_), tokens, x0);
  const auto pos = positions_.cmat();
  for (int b = 0; b < batch; ++b) x0.block(b * seq_len, 0, seq_len, d) += pos.topRows(seq_len);

  for (std::size_t l = 0; l < layers; ++l) {
    const auto& lp = layer_params_[l];
    auto& lc = cache.layer[l];
    const auto x_in = cache.resid[l].cmat();
    lc.ln1_out = Tensor<Scalar>({rows, d});
    lc.qkv = Tensor<Scalar>({rows, 3 * d});
    lc.probs = Tensor<Scalar>({static_cast<std::size_t>(batch),
                               static_cast<std::size_t>(config_.heads),
                               static_cast<std::size_t>(seq_len),
                               static_cast<std::size_t>(seq_len)});
    lc.att_out = Tensor<Scalar>({rows, d});
    lc.mid = Tensor<Scalar>({rows, d});
    lc.ln2_out = Tensor<Scalar>({rows, d});
    lc.fc1 = Tensor<Scalar>({rows, hid});
    lc.act = Tensor<Scalar>({rows, hid});

    nn::layer_norm<Scalar>(x_in, v(lp.ln1_gain), v(lp.ln1_bias), lc.ln1_out.mat(), lc.ln1);
    nn::linear<Scalar>(lc.ln1_out.cmat(), w(lp.w_qkv), v(lp.b_qkv), lc.qkv.mat());
    nn::causal_attention<Scalar>(lc.qkv.cmat(), batch, seq_len, config_.heads,
                                 lc.att_out.mat(), lc.probs.values());
    auto mid = lc.mid.mat();
    nn::linear<Scalar>(lc.att_out.cmat(), w(lp.w_o), v(lp.b_o), mid);
    mid += x_in;

    nn::layer_norm<Scalar>(lc.mid.cmat(), v(lp.ln2_gain), v(lp.ln2_bias), lc.ln2_out.mat(), lc.ln2);
    nn::linear<Scalar>(lc.ln2_out.cmat(), w(lp.w_fc1), v(lp.b_fc1), lc.fc1.mat());
    nn::gelu<Scalar>(lc.fc1.values(), lc.act.values());
    auto out = cache.resid[l + 1].mat();
    nn::linear<Scalar>(lc.act.cmat(), w(lp.w_fc2), v(lp.b_fc2), out);
    out += lc.mid.cmat();
  }

  cache.final_out = Tensor<Scalar>({rows, d});
  nn::layer_norm<Scalar>(cache.resid[layers].cmat(), v(lnf_gain_), v(lnf_bias_),
                         cache.final_out.mat(), cache.final_ln);
  cache.logits = Tensor<Scalar>({rows, static_cast<std::size_t>(config_.vocab)});
  nn::linear<Scalar>(cache.final_out.cmat(), w(w_out_), v(b_out_), cache.logits.mat());
}

template <typename Scalar>
void Transformer<Scalar>::backward(const ForwardCache<Scalar>& cache,
                                   ConstMatrixMap<Scalar> dlogits) {
  const std::size_t rows = cache.tokens.size();
  const std::size_t d = config_.d_model, hid = config_.mlp_hidden;
  if (dlogits.rows() != static_cast<Eigen::Index>(rows) || dlogits.cols() != config_.vocab) {
    throw nn::ShapeError("backward: dlogits shape");
  }
  Tensor<Scalar> dfinal({rows, d});
  nn::linear_backward<Scalar>(cache.final_out.cmat(), w(w_out_), dlogits, dfinal.mat(),
                              gw(w_out_), gv(b_out_));
  Tensor<Scalar> dx({rows, d});  // gradient w.r.t. the current residual stream
  nn::layer_norm_backward<Scalar>(cache.resid.back().cmat(), v(lnf_gain_), cache.final_ln,
                                  dfinal.cmat(), dx.mat(), gv(lnf_gain_), gv(lnf_bias_));

  Tensor<Scalar> dact({rows, hid}), dfc1({rows, hid}), dln({rows, d}), datt({rows, d});
  Tensor<Scalar> dqkv({rows, 3 * d});
  for (std::size_t li = layer_params_.size(); li-- > 0;) {
    const auto& lp = layer_params_[li];
    const auto& lc = cache.layer[li];
    // MLP branch: resid[l+1] = mid + fc2(gelu(fc1(ln2(mid)))).
    dact.set_zero();
    dfc1.set_zero();
    dln.set_zero();
    nn::linear_backward<Scalar>(lc.act.cmat(), w(lp.w_fc2), dx.cmat(), dact.mat(),
                                gw(lp.w_fc2), gv(lp.b_fc2));
    nn::gelu_backward<Scalar>(lc.fc1.values(), dact.values(), dfc1.values());
    nn::linear_backward<Scalar>(lc.ln2_out.cmat(), w(lp.w_fc1), dfc1.cmat(), dln.mat(),
                                gw(lp.w_fc1), gv(lp.b_fc1));
    // dx now accumulates d(mid): identity path plus the ln2 branch.
    nn::layer_norm_backward<Scalar>(lc.mid.cmat(), v(lp.ln2_gain), lc.ln2, dln.cmat(), dx.mat(),
                                    gv(lp.ln2_gain), gv(lp.ln2_bias));
    // Attention branch: mid = resid[l] + proj(attn(qkv(ln1(resid[l])))).
    datt.set_zero();
    dqkv.set_zero();
    dln.set_zero();
    nn::linear_backward<Scalar>(lc.att_out.cmat(), w(lp.w_o), dx.cmat(), datt.mat(),
                                gw(lp.w_o), gv(lp.b_o));
    nn::causal_attention_backward<Scalar>(lc.qkv.cmat(), cache.batch, cache.seq_len,
                                          config_.heads, lc.probs.values(), datt.cmat(),
                                          dqkv.mat());
    nn::linear_backward<Scalar>(lc.ln1_out.cmat(), w(lp.w_qkv), dqkv.cmat(), dln.mat(),
                                gw(lp.w_qkv), gv(lp.b_qkv));
    nn::layer_norm_backward<Scalar>(cache.resid[li].cmat(), v(lp.ln1_gain), lc.ln1, dln.cmat(),
                                    dx.mat(), gv(lp.ln1_gain), gv(lp.ln1_bias));
  }
  nn::embed_lookup_backward<Scalar>(cache.tokens, dx.cmat(), gw(tok_embed_));
}

template <typename Scalar>
ForwardTrace Transformer<Scalar>::trace(std::span<const int> tokens, int batch, int seq_len,
                                        bool internals) const {
  ForwardCache<Scalar> cache;
  forward(tokens, batch, seq_len, cache);
  auto widen = [](const Tensor<Scalar>& t) {
    Tensor<double> out(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<double>(t[i]);
    return out;
  };
  ForwardTrace trace;
  trace.batch = batch;
  trace.seq_len = seq_len;
  trace.logits = widen(cache.logits);
  if (internals) {
    for (const auto& r : cache.resid) trace.hidden.push_back(widen(r));
    for (const auto& lc : cache.layer) trace.attention.push_back(widen(lc.probs));
  }
  return trace;
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace cicl
