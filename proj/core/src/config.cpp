#include "cicl/config.hpp"

#include <fstream>
#include <set>

namespace cicl {

using nlohmann::json;

namespace {

/// Typed access to one JSON object, reporting errors by dotted path and
/// rejecting keys it was never asked about.
class FieldReader {
 public:
  FieldReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string path_of(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) throw ConfigError(path_of(key), "missing required field");
    return obj_.at(key);
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(path_of(key), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(path_of(key), "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
            throw ConfigError(path_of(key), "expected a non-negative integer");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(path_of(key), "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(path_of(key), "expected a string");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_of(key), e.what());
    }
  }

  void reject_unknown() const {
    for (const auto& [key, _] : obj_.items()) {
      if (!seen_.contains(key)) throw ConfigError(path_of(key), "unknown field");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto wrap(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
}

ModelConfig model_from_json(const json& doc) {
  FieldReader r(doc, "model");
  ModelConfig m;
  r.read("layers", m.layers);
  r.read("d_model", m.d_model);
  r.read("heads", m.heads);
  r.read("mlp_hidden", m.mlp_hidden);
  r.read("pos_time_constant", m.pos_time_constant);
  r.read("vocab", m.vocab);
  r.read("max_seq", m.max_seq);
  r.read("init_std", m.init_std);
  std::string precision = to_string(m.precision);
  r.read("precision", precision);
  m.precision = wrap("model.precision", [&] { return parse_precision(precision); });
  r.reject_unknown();
  return m;
}

CurriculumSpec spec_from_json(const json& doc) {
  FieldReader r(doc, "spec");
  CurriculumSpec s;
  r.read("m", s.m);
  r.read("n", s.n);
  r.read("pairs", s.pairs);
  r.read("loss_on_x", s.loss_on_x);
  std::string mode = to_string(s.mode);
  r.read("mode", mode);
  s.mode = wrap("spec.mode", [&] { return parse_sequence_mode(mode); });
  r.reject_unknown();
  wrap("spec", [&] { s.validate(); return 0; });
  return s;
}

std::vector<RootPair> pairs_from_json(const json& doc, const std::string& path) {
  if (!doc.is_array()) throw ConfigError(path, "expected an array of [a, b] pairs");
  std::vector<RootPair> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& e = doc[i];
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
      throw ConfigError(path + "[" + std::to_string(i) + "]", "expected [a, b]");
    }
    out.emplace_back(e[0].get<std::int64_t>(), e[1].get<std::int64_t>());
  }
  return out;
}

}  // namespace

std::int64_t TrainConfig::checkpoint_interval() const {
  if (checkpoint_every > 0) return checkpoint_every;
  return std::max<std::int64_t>(1, total_steps() / 50);
}

void TrainConfig::validate() const {
  wrap("model", [&] { model.validate(); return 0; });
  wrap("spec", [&] { spec.validate(); return 0; });
  wrap("split", [&] { validate_split(split); return 0; });
  if (model.vocab != split.p.value()) {
    throw ConfigError("model.vocab", "must equal the modulus " + std::to_string(split.p.value()));
  }
  if (model.max_seq != spec.tokens()) {
    throw ConfigError("model.max_seq", "must equal 2 x spec.pairs = " + std::to_string(spec.tokens()));
  }
  if (spec.pairs > split.p.value() &&
      (regime_of(spec.mode) == Regime::vanilla)) {
    throw ConfigError("spec.pairs", "vanilla sequences need pairs <= p for unique inputs");
  }
  if (std::max(spec.m, spec.n) > split.p.value()) {
    throw ConfigError("spec", "block length exceeds the modulus");
  }
  if (!(lr > 0.0)) throw ConfigError("lr", "must be > 0");
  if (batch < 1) throw ConfigError("batch", "must be >= 1");
  if (total_sequences < batch || total_sequences % batch != 0) {
    throw ConfigError("total_sequences", "must be a positive multiple of batch");
  }
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every", "must be >= 1 (or 0 for default)");
  if (log_every < 1) throw ConfigError("log_every", "must be >= 1");
  if (heldout_batch < 1) throw ConfigError("heldout_batch", "must be >= 1");
  if (split.eval_pairs.empty()) throw ConfigError("split.eval_pairs", "must not be empty");
  if (!(analysis.probe_train_fraction > 0.0 && analysis.probe_train_fraction < 1.0)) {
    throw ConfigError("analysis.probe_train_fraction", "must lie in (0, 1)");
  }
  if (analysis.savgol_window % 2 == 0 || analysis.savgol_order >= analysis.savgol_window) {
    throw ConfigError("analysis.savgol_window", "must be odd and exceed savgol_order");
  }
  if (analysis.eval_sequences < 1 || analysis.probe_sequences < 2 || analysis.chunk < 1) {
    throw ConfigError("analysis", "sequence counts must be positive");
  }
}

json split_to_json(const PairSplit& split) {
  auto pairs = [](const std::vector<RootPair>& v) {
    json arr = json::array();
    for (auto [a, b] : v) arr.push_back({a, b});
    return arr;
  };
  return json{{"p", split.p.value()},
              {"seed", split.seed},
              {"train_pairs", pairs(split.train_pairs)},
              {"eval_pairs", pairs(split.eval_pairs)}};
}

PairSplit split_from_json(const json& doc, const std::string& path) {
  FieldReader r(doc, path);
  std::int64_t p = 0;
  std::uint64_t seed = 0;
  r.read("p", p);
  r.read("seed", seed);
  const Modulus mod = wrap(r.path_of("p"), [&] { return Modulus(p); });
  PairSplit split{mod, {}, {}, seed};
  if (r.has("train_pairs") || r.has("eval_pairs")) {
    split.train_pairs = pairs_from_json(r.raw("train_pairs"), r.path_of("train_pairs"));
    split.eval_pairs = pairs_from_json(r.raw("eval_pairs"), r.path_of("eval_pairs"));
    r.reject_unknown();
    wrap(path, [&] { validate_split(split); return 0; });
    return split;
  }
  double fraction = 0.8;
  r.read("train_fraction", fraction);
  r.reject_unknown();
  return wrap(path, [&] { return split_pairs(mod, fraction, seed); });
}

TrainConfig config_from_json(const json& doc, const std::filesystem::path& base_dir) {
  FieldReader r(doc, "");
  TrainConfig c;
  c.model = model_from_json(r.raw("model"));
  c.spec = spec_from_json(r.raw("spec"));

  const json& split = r.raw("split");
  if (split.is_string()) {
    const auto file = base_dir / split.get<std::string>();
    std::ifstream in(file);
    if (!in) throw ConfigError("split", "cannot open split file " + file.string());
    json loaded;
    try {
      loaded = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("split", "malformed split file " + file.string() + ": " + e.what());
    }
    c.split = split_from_json(loaded, "split");
  } else {
    c.split = split_from_json(split, "split");
  }

  // vocab and context length follow the task unless pinned explicitly.
  const json& model_doc = doc.at("model");
  if (!model_doc.contains("vocab")) c.model.vocab = static_cast<int>(c.split.p.value());
  if (!model_doc.contains("max_seq")) c.model.max_seq = c.spec.tokens();

  r.read("lr", c.lr);
  r.read("batch", c.batch);
  r.read("total_sequences", c.total_sequences);
  r.read("checkpoint_every", c.checkpoint_every);
  r.read("seed", c.seed);
  r.read("log_every", c.log_every);
  r.read("heldout_batch", c.heldout_batch);
  if (r.has("adam")) {
    FieldReader a(r.raw("adam"), "adam");
    a.read("beta1", c.adam.beta1);
    a.read("beta2", c.adam.beta2);
    a.read("eps", c.adam.eps);
    a.reject_unknown();
  }
  if (r.has("analysis")) {
    FieldReader a(r.raw("analysis"), "analysis");
    auto& an = c.analysis;
    a.read("eval_sequences", an.eval_sequences);
    a.read("probe_sequences", an.probe_sequences);
    a.read("probe_train_fraction", an.probe_train_fraction);
    a.read("probe_iterations", an.probe_iterations);
    a.read("probe_l2", an.probe_l2);
    a.read("include_layer0", an.include_layer0);
    a.read("mismatch_differ_in_both", an.mismatch_differ_in_both);
    a.read("savgol_window", an.savgol_window);
    a.read("savgol_order", an.savgol_order);
    a.read("seed", an.seed);
    a.read("chunk", an.chunk);
    a.reject_unknown();
  }
  r.reject_unknown();
  c.validate();
  return c;
}

json config_to_json(const TrainConfig& c) {
  const auto& m = c.model;
  const auto& a = c.analysis;
  return json{
      {"model",
       {{"layers", m.layers},
        {"d_model", m.d_model},
        {"heads", m.heads},
        {"mlp_hidden", m.mlp_hidden},
        {"pos_time_constant", m.pos_time_constant},
        {"vocab", m.vocab},
        {"max_seq", m.max_seq},
        {"precision", to_string(m.precision)},
        {"init_std", m.init_std}}},
      {"spec",
       {{"m", c.spec.m},
        {"n", c.spec.n},
        {"mode", to_string(c.spec.mode)},
        {"pairs", c.spec.pairs},
        {"loss_on_x", c.spec.loss_on_x}}},
      {"split", split_to_json(c.split)},
      {"lr", c.lr},
      {"batch", c.batch},
      {"total_sequences", c.total_sequences},
      {"checkpoint_every", c.checkpoint_every},
      {"seed", c.seed},
      {"log_every", c.log_every},
      {"heldout_batch", c.heldout_batch},
      {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
      {"analysis",
       {{"eval_sequences", a.eval_sequences},
        {"probe_sequences", a.probe_sequences},
        {"probe_train_fraction", a.probe_train_fraction},
        {"probe_iterations", a.probe_iterations},
        {"probe_l2", a.probe_l2},
        {"include_layer0", a.include_layer0},
        {"mismatch_differ_in_both", a.mismatch_differ_in_both},
        {"savgol_window", a.savgol_window},
        {"savgol_order", a.savgol_order},
        {"seed", a.seed},
        {"chunk", a.chunk}}}};
}

TrainConfig load_config(const std::filesystem::path& path,
                        const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("", "malformed JSON in " + path.string() + ": " + e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc, path.parent_path());
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(assignment, "override must look like key.path=value");
  }
  std::string key = assignment.substr(0, eq);
  // The document is the training config itself, so "train.lr" means "lr".
  if (key.rfind("train.", 0) == 0 && !doc.contains("train")) key = key.substr(6);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(key, "empty path component");
    if (!node->is_object()) throw ConfigError(key, "cannot descend into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

}  // namespace cicl
