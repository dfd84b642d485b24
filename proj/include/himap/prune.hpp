#pragma once

// Hierarchical modality-aware pruning of image tokens: importance criteria,
// bottom-R% selection and per-layer keep-index bookkeeping.

#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "himap/layout.hpp"
#include "himap/numerics/types.hpp"

namespace himap {

enum class Criterion { phi_sh, phi_dp, phi_attn };

std::string_view to_string(Criterion c);
Criterion parse_criterion(std::string_view name);

/// Image tokens are ranked on the attention of the `filter_layer`-th layer
/// (1-based, so 0-based layer filter_layer - 1) and the bottom `filter_ratio`
/// percent are absent from 0-based layer `filter_layer` onward. The first
/// `filter_layer` layers therefore see every token.
struct PruneStage {
  int filter_layer = 0;
  double filter_ratio = 0.0;
  Criterion criterion = Criterion::phi_sh;

  bool operator==(const PruneStage&) const = default;
};

struct PruneSchedule {
  std::vector<PruneStage> stages;

  /// Stage layers strictly increasing, each in [1, num_layers), ratios in [0, 100].
  void validate(int num_layers) const;
  bool empty() const { return stages.empty(); }
  const PruneStage* stage_at(int layer) const;

  /// "aggressive", "conservative", "toy-aggressive", "none"; throws on anything else.
  static PruneSchedule preset(std::string_view name);

  bool operator==(const PruneSchedule&) const = default;
};

/// Original image-token index -> score, ordered by index.
using ImportanceScores = std::map<Index, double>;

/// Arithmetic mean over heads.
Matrix head_mean_attention(std::span<const Matrix> heads);

// For the criteria below, row/column k of `attention` is original position
// `positions[k]`; the surviving image tokens are those positions in the image
// segment of `layout`.

/// phi_sh(v) = sum over instruction rows i of A(i, v).
ImportanceScores phi_sh(const Matrix& attention, const TokenLayout& layout,
                        std::span<const Index> positions);

/// phi_dp(v) = sum over surviving image columns i of A(v, i).
ImportanceScores phi_dp(const Matrix& attention, const TokenLayout& layout,
                        std::span<const Index> positions);

/// phi_attn(v) = mean of A(i, v) over the rows i != v that can see v.
ImportanceScores phi_attn(const Matrix& attention, const TokenLayout& layout,
                          std::span<const Index> positions);

ImportanceScores score_image_tokens(Criterion c, const Matrix& attention,
                                    const TokenLayout& layout, std::span<const Index> positions);

/// floor(count * ratio / 100).
Index pruned_count(Index count, double ratio);

/// Keeps the top |scores| - pruned_count(|scores|, ratio) tokens by score,
/// ties resolved in favour of the lower original index. Sorted ascending.
std::vector<Index> select_kept(const ImportanceScores& scores, double ratio);

/// Runs one stage: scores the image tokens among `positions` on the head-mean
/// of `heads`, then drops the pruned ones. Non-image positions always survive.
std::vector<Index> prune_positions(const PruneStage& stage, std::span<const Matrix> heads,
                                   const TokenLayout& layout, std::span<const Index> positions);

/// Per-layer attention heads over the current positions.
using AttentionSource =
    std::function<std::vector<Matrix>(int layer, std::span<const Index> positions)>;

/// Per-layer surviving original indices for a whole stack of `num_layers`.
std::vector<std::vector<Index>> apply_schedule(const PruneSchedule& schedule,
                                               const TokenLayout& layout, int num_layers,
                                               const AttentionSource& attention_at);

}  // namespace himap
