#include "himap/harness/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <vector>

namespace himap::harness {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

constexpr std::array<char, 4> kMagic = {'H', 'M', 'A', 'P'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& at) {
  if (in.size() < at + sizeof(T)) throw TruncatedError("checkpoint truncated in preamble");
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  at += sizeof(T);
  return v;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct Parsed {
  nlohmann::json header;
  std::size_t payload_begin = 0;
};

Parsed parse_preamble(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
    throw BadMagicError("not a checkpoint: bad magic bytes");
  }
  std::size_t at = 4;
  const auto version = get<std::uint32_t>(bytes, at);
  if (version != kCheckpointVersion) {
    throw VersionMismatchError("checkpoint format version " + std::to_string(version) +
                               ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto header_len = get<std::uint64_t>(bytes, at);
  if (bytes.size() - at < header_len) throw TruncatedError("checkpoint truncated in header");
  Parsed p;
  try {
    p.header = nlohmann::json::parse(bytes.substr(at, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  p.payload_begin = at + header_len;
  return p;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"layers", c.layers},     {"heads", c.heads},
                        {"hidden", c.hidden},     {"ffn", c.ffn},
                        {"vocab", c.vocab},       {"max_seq", c.max_seq},
                        {"init_seed", c.init_seed}, {"init_std", c.init_std}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.hidden = j.value("hidden", c.hidden);
  c.ffn = j.value("ffn", c.ffn);
  c.vocab = j.value("vocab", c.vocab);
  c.max_seq = j.value("max_seq", c.max_seq);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.init_std = j.value("init_std", c.init_std);
  c.validate();
  return c;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : params.named_tensors()) {
    manifest.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m->size()) * sizeof(double);
  }
  const nlohmann::json header{{"config", to_json(params.config)}, {"tensors", manifest}};
  const std::string header_text = header.dump();

  std::string out(kMagic.begin(), kMagic.end());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header_text.size());
  out += header_text;
  for (const auto& [name, m] : params.named_tensors()) {
    out.append(reinterpret_cast<const char*>(m->data()),
               static_cast<std::size_t>(m->size()) * sizeof(double));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  return parse_preamble(slurp(path)).header;
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  const Parsed parsed = parse_preamble(bytes);
  ModelConfig config;
  try {
    config = model_config_from_json(parsed.header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("checkpoint config: ") + e.what());
  }
  ModelParams params = build_model(config);

  const auto& tensors = parsed.header.value("tensors", nlohmann::json::array());
  auto named = params.named_tensors();
  if (tensors.size() != named.size()) {
    throw ManifestError("checkpoint manifest lists " + std::to_string(tensors.size()) +
                        " tensors, model needs " + std::to_string(named.size()));
  }
  const std::size_t payload_size = bytes.size() - parsed.payload_begin;
  for (std::size_t k = 0; k < named.size(); ++k) {
    auto& [name, m] = named[k];
    const auto& entry = tensors[k];
    std::uint64_t offset = 0;
    Index rows = 0;
    Index cols = 0;
    try {
      if (entry.at("name").get<std::string>() != name) {
        throw ManifestError("checkpoint manifest entry " + std::to_string(k) + " is '" +
                            entry.at("name").get<std::string>() + "', expected '" + name + "'");
      }
      rows = entry.at("shape").at(0).get<Index>();
      cols = entry.at("shape").at(1).get<Index>();
      offset = entry.at("offset").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError(std::string("checkpoint manifest: ") + e.what());
    }
    if (rows != m->rows() || cols != m->cols()) {
      throw ManifestError("tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", config implies " +
                          std::to_string(m->rows()) + "x" + std::to_string(m->cols()));
    }
    const std::size_t nbytes = static_cast<std::size_t>(m->size()) * sizeof(double);
    if (offset > payload_size || payload_size - offset < nbytes) {
      throw TruncatedError("checkpoint payload truncated in tensor '" + name + "'");
    }
    std::memcpy(m->data(), bytes.data() + parsed.payload_begin + offset, nbytes);
  }
  return params;
}

}  // namespace himap::harness
