#pragma once

// Synthetic "what colour is the patch at (row, col)?" task. The image is a
// grid of patch tokens, one colour token per patch; the question ends with a
// single position word naming the cell.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "himap/example.hpp"

namespace himap::harness {

struct SyntheticTaskSpec {
  int grid_side = 6;
  int n_colors = 8;
  int sys_len = 4;
  int query_len = 6;
  std::uint64_t seed = 42;
  /// Vocabulary the tokens must fit in (the model's vocab).
  int vocab = 64;

  void validate() const;
  int image_tokens() const { return grid_side * grid_side; }
  /// Prompt plus answer slot.
  int sequence_length() const { return sys_len + image_tokens() + query_len + 1; }

  bool operator==(const SyntheticTaskSpec&) const = default;
};

/// Token id assignment, in id order: system words, query words, colours,
/// position words (one per grid cell, row-major).
struct Vocabulary {
  int sys_begin = 0;
  int query_begin = 0;
  int color_begin = 0;
  int cell_begin = 0;
  int size = 0;
  int grid_side = 0;

  explicit Vocabulary(const SyntheticTaskSpec& spec);
  int color(int c) const { return color_begin + c; }
  int cell(int row, int col) const { return cell_begin + row * grid_side + col; }
};

/// Deterministic for fixed (spec.seed, split_seed); different split seeds
/// give independent draws.
std::vector<SyntheticExample> gen_dataset(const SyntheticTaskSpec& spec, std::size_t count,
                                          std::uint64_t split_seed);

nlohmann::json to_json(const SyntheticExample& ex);
SyntheticExample example_from_json(const nlohmann::json& j);

void write_jsonl(const std::filesystem::path& path, const std::vector<SyntheticExample>& data);
std::vector<SyntheticExample> read_jsonl(const std::filesystem::path& path);

nlohmann::json to_json(const SyntheticTaskSpec& spec);
SyntheticTaskSpec task_spec_from_json(const nlohmann::json& j);

}  // namespace himap::harness
