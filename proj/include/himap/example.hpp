#pragma once

#include <span>
#include <vector>

#include "himap/layout.hpp"

namespace himap {

/// One question about a synthetic image. `tokens` is the prompt followed by
/// the answer slot (holding `gold`); `layout` partitions the prompt.
struct SyntheticExample {
  std::vector<int> tokens;
  TokenLayout layout;
  int gold = 0;
  int queried_patch = 0;

  std::span<const int> prompt() const {
    return std::span<const int>(tokens).first(static_cast<std::size_t>(layout.size()));
  }
  /// The final prompt position, whose logits predict the answer.
  Index answer_position() const { return layout.size() - 1; }

  bool operator==(const SyntheticExample&) const = default;
};

}  // namespace himap
