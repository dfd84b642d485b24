#include "himap/harness/dataset.hpp"

#include <fstream>

#include "himap/errors.hpp"
#include "himap/rng.hpp"

namespace himap::harness {

void SyntheticTaskSpec::validate() const {
  if (grid_side < 2) throw ConfigError("task: grid_side must be >= 2");
  if (n_colors < 2) throw ConfigError("task: n_colors must be >= 2");
  if (sys_len < 0) throw ConfigError("task: sys_len must be >= 0");
  if (query_len < 2) throw ConfigError("task: query_len must be >= 2 (a question word and a cell)");
  if (Vocabulary(*this).size > vocab) {
    throw ConfigError("task: needs " + std::to_string(Vocabulary(*this).size) +
                      " token ids but the vocabulary holds " + std::to_string(vocab));
  }
}

Vocabulary::Vocabulary(const SyntheticTaskSpec& spec) {
  sys_begin = 0;
  query_begin = sys_begin + spec.sys_len;
  color_begin = query_begin + (spec.query_len - 1);
  cell_begin = color_begin + spec.n_colors;
  size = cell_begin + spec.image_tokens();
  grid_side = spec.grid_side;
}

std::vector<SyntheticExample> gen_dataset(const SyntheticTaskSpec& spec, std::size_t count,
                                          std::uint64_t split_seed) {
  spec.validate();
  if (count < 1) throw ConfigError("gen_dataset: count must be >= 1");
  const Vocabulary vocab(spec);
  Rng rng(spec.seed ^ (split_seed * 0x9E3779B97F4A7C15ULL));
  const int words = spec.query_len - 1;
  const int patches = spec.image_tokens();

  std::vector<SyntheticExample> out;
  out.reserve(count);
  for (std::size_t e = 0; e < count; ++e) {
    SyntheticExample ex;
    ex.tokens.reserve(static_cast<std::size_t>(spec.sequence_length()));
    for (int s = 0; s < spec.sys_len; ++s) ex.tokens.push_back(vocab.sys_begin + s);
    std::vector<int> colors(static_cast<std::size_t>(patches));
    for (int p = 0; p < patches; ++p) {
      colors[static_cast<std::size_t>(p)] = static_cast<int>(rng.below(spec.n_colors));
      ex.tokens.push_back(vocab.color(colors[static_cast<std::size_t>(p)]));
    }
    ex.queried_patch = static_cast<int>(rng.below(patches));
    for (int w = 0; w < words; ++w) ex.tokens.push_back(vocab.query_begin + w);
    const int row = ex.queried_patch / spec.grid_side;
    ex.tokens.push_back(vocab.cell(row, ex.queried_patch - row * spec.grid_side));
    ex.gold = vocab.color(colors[static_cast<std::size_t>(ex.queried_patch)]);
    ex.tokens.push_back(ex.gold);
    ex.layout = TokenLayout(spec.sys_len, patches, spec.query_len);
    out.push_back(std::move(ex));
  }
  return out;
}

nlohmann::json to_json(const SyntheticExample& ex) {
  return nlohmann::json{{"tokens", ex.tokens},
                        {"layout",
                         {{"sys", ex.layout.sys_len()},
                          {"img", ex.layout.img_len()},
                          {"ins", ex.layout.ins_len()}}},
                        {"gold", ex.gold},
                        {"queried_patch", ex.queried_patch}};
}

SyntheticExample example_from_json(const nlohmann::json& j) {
  SyntheticExample ex;
  try {
    ex.tokens = j.at("tokens").get<std::vector<int>>();
    const auto& l = j.at("layout");
    ex.layout = TokenLayout(l.at("sys").get<Index>(), l.at("img").get<Index>(),
                            l.at("ins").get<Index>());
    ex.gold = j.at("gold").get<int>();
    ex.queried_patch = j.at("queried_patch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed example: ") + e.what());
  }
  if (static_cast<Index>(ex.tokens.size()) != ex.layout.size() + 1) {
    throw ConfigError("malformed example: tokens must be the prompt plus one answer slot");
  }
  return ex;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<SyntheticExample>& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  for (const auto& ex : data) os << to_json(ex).dump() << '\n';
}

std::vector<SyntheticExample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read " + path.string());
  std::vector<SyntheticExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw ConfigError(path.string() + ": no examples");
  return out;
}

nlohmann::json to_json(const SyntheticTaskSpec& s) {
  return nlohmann::json{{"grid_side", s.grid_side}, {"n_colors", s.n_colors},
                        {"sys_len", s.sys_len},     {"query_len", s.query_len},
                        {"seed", s.seed},           {"vocab", s.vocab}};
}

SyntheticTaskSpec task_spec_from_json(const nlohmann::json& j) {
  SyntheticTaskSpec s;
  s.grid_side = j.value("grid_side", s.grid_side);
  s.n_colors = j.value("n_colors", s.n_colors);
  s.sys_len = j.value("sys_len", s.sys_len);
  s.query_len = j.value("query_len", s.query_len);
  s.seed = j.value("seed", s.seed);
  s.vocab = j.value("vocab", s.vocab);
  s.validate();
  return s;
}

}  // namespace himap::harness
