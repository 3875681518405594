#include "cicl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "cicl/trainer.hpp"

namespace cicl {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

template <typename Scalar>
const char* dtype_name() {
  return std::is_same_v<Scalar, float> ? "float32" : "float64";
}

std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Splits a checkpoint image into its header and data section.
std::pair<json, std::size_t> parse_header(const std::string& bytes, const std::string& name) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError(name + ": not a checkpoint (bad magic)");
  }
  const auto len = read_u64_le(reinterpret_cast<const unsigned char*>(bytes.data() + 8));
  if (len > bytes.size() - 16) throw CheckpointError(name + ": truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(16, len));
  } catch (const json::exception& e) {
    throw CheckpointError(name + ": corrupted header: " + e.what());
  }
  if (!header.is_object() || header.value("format_version", -1) != kCheckpointVersion) {
    throw CheckpointError(name + ": unsupported checkpoint version");
  }
  return {header, 16 + len};
}

}  // namespace

template <typename Scalar>
TrainingState<Scalar> TrainingState<Scalar>::initial(const TrainConfig& config) {
  TrainingState state;
  state.config = config;
  state.model = std::make_unique<Transformer<Scalar>>(config.model, derive_seed(config.seed, 1));
  state.adam = nn::AdamState<Scalar>::for_params(state.model->params(), config.lr);
  state.adam.beta1 = config.adam.beta1;
  state.adam.beta2 = config.adam.beta2;
  state.adam.eps = config.adam.eps;
  BatchStream stream(config.split, config.spec, config.batch, derive_seed(config.seed, 2));
  state.stream_rng = stream.rng_state();
  return state;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const TrainingState<Scalar>& state) {
  const auto& params = state.model->params();
  json manifest = json::array();
  std::vector<const nn::Tensor<Scalar>*> arrays;
  std::size_t offset = 0;
  auto add = [&](const std::string& name, const std::string& role, const nn::Tensor<Scalar>& t) {
    manifest.push_back({{"name", name},
                        {"role", role},
                        {"shape", t.shape()},
                        {"offset", offset},
                        {"dtype", dtype_name<Scalar>()}});
    arrays.push_back(&t);
    offset += t.size() * sizeof(Scalar);
  };
  for (const auto& p : params.params()) add(p.name, "param", p.value);
  for (std::size_t i = 0; i < params.size(); ++i) {
    add(params.at(i).name, "adam_m", state.adam.first_moment.at(i));
    add(params.at(i).name, "adam_v", state.adam.second_moment.at(i));
  }
  json header{{"format_version", kCheckpointVersion},
              {"step", state.step},
              {"dtype", dtype_name<Scalar>()},
              {"config", config_to_json(state.config)},
              {"rng", {{"batch_stream", state.stream_rng}}},
              {"adam",
               {{"step", state.adam.step},
                {"lr", state.adam.lr},
                {"beta1", state.adam.beta1},
                {"beta2", state.adam.beta2},
                {"eps", state.adam.eps}}},
              {"manifest", manifest}};
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, 8);
    unsigned char len[8];
    std::uint64_t n = text.size();
    for (auto& b : len) {
      b = static_cast<unsigned char>(n & 0xff);
      n >>= 8;
    }
    out.write(reinterpret_cast<const char*>(len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* t : arrays) {
      out.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->size() * sizeof(Scalar)));
    }
    out.flush();
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp.string() + " (disk full?)");
  }
  std::filesystem::rename(tmp, path);
}

json read_checkpoint_header(const std::filesystem::path& path) {
  return parse_header(read_file(path), path.string()).first;
}

template <typename Scalar>
TrainingState<Scalar> load_checkpoint(const std::filesystem::path& path,
                                      const ModelConfig* expected) {
  const std::string bytes = read_file(path);
  const std::string name = path.string();
  auto [header, data_start] = parse_header(bytes, name);
  if (header.value("dtype", "") != std::string(dtype_name<Scalar>())) {
    throw CheckpointError(name + ": dtype " + header.value("dtype", "?") + " does not match " +
                          dtype_name<Scalar>());
  }
  TrainingState<Scalar> state;
  try {
    state.config = config_from_json(header.at("config"));
    state.step = header.at("step").get<std::int64_t>();
    state.stream_rng = header.at("rng").at("batch_stream").get<std::string>();
  } catch (const std::exception& e) {
    throw CheckpointError(name + ": bad header contents: " + e.what());
  }
  if (expected != nullptr && !(state.config.model == *expected)) {
    throw CheckpointError(name + ": checkpoint model configuration differs from the config");
  }
  state.model = std::make_unique<Transformer<Scalar>>(state.config.model, 0);
  auto& params = state.model->params();
  state.adam = nn::AdamState<Scalar>::for_params(params, state.config.lr);
  const auto& adam = header.at("adam");
  state.adam.step = adam.at("step").get<std::int64_t>();
  state.adam.lr = adam.at("lr").get<double>();
  state.adam.beta1 = adam.at("beta1").get<double>();
  state.adam.beta2 = adam.at("beta2").get<double>();
  state.adam.eps = adam.at("eps").get<double>();

  const auto& manifest = header.at("manifest");
  if (manifest.size() != 3 * params.size()) {
    throw CheckpointError(name + ": manifest does not match the model's parameter list");
  }
  const std::size_t data_bytes = bytes.size() - data_start;
  for (std::size_t k = 0; k < manifest.size(); ++k) {
    const auto& entry = manifest[k];
    const std::size_t pi = k < params.size() ? k : (k - params.size()) / 2;
    const std::string role = k < params.size() ? "param"
                             : ((k - params.size()) % 2 == 0 ? "adam_m" : "adam_v");
    nn::Tensor<Scalar>& target = role == "param"    ? params.at(pi).value
                                 : role == "adam_m" ? state.adam.first_moment.at(pi)
                                                    : state.adam.second_moment.at(pi);
    if (entry.at("name").get<std::string>() != params.at(pi).name ||
        entry.at("role").get<std::string>() != role ||
        entry.at("shape").get<std::vector<std::size_t>>() != target.shape()) {
      throw CheckpointError(name + ": shape/name mismatch for " + params.at(pi).name);
    }
    const auto off = entry.at("offset").get<std::size_t>();
    const std::size_t nbytes = target.size() * sizeof(Scalar);
    if (off > data_bytes || nbytes > data_bytes - off) {
      throw CheckpointError(name + ": truncated data for " + params.at(pi).name);
    }
    std::memcpy(target.data(), bytes.data() + data_start + off, nbytes);
  }
  return state;
}

std::unique_ptr<SequenceModel> load_model(const std::filesystem::path& path,
                                          const ModelConfig* expected) {
  const auto header = read_checkpoint_header(path);
  const std::string dtype = header.value("dtype", "");
  if (dtype == "float32") return std::move(load_checkpoint<float>(path, expected).model);
  if (dtype == "float64") return std::move(load_checkpoint<double>(path, expected).model);
  throw CheckpointError(path.string() + ": unknown dtype '" + dtype + "'");
}

template struct TrainingState<float>;
template struct TrainingState<double>;
template void save_checkpoint<float>(const std::filesystem::path&, const TrainingState<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const TrainingState<double>&);
template TrainingState<float> load_checkpoint<float>(const std::filesystem::path&, const ModelConfig*);
template TrainingState<double> load_checkpoint<double>(const std::filesystem::path&, const ModelConfig*);

}  // namespace cicl
