#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "himap/model.hpp"
#include "himap/perturb.hpp"

namespace himap {

/// Inclusive layer range; empty when last < first.
struct LayerWindow {
  int first = 0;
  int last = -1;

  bool empty() const { return last < first; }
  std::set<int> layers() const;
  bool operator==(const LayerWindow&) const = default;
};

/// Comma-separated window list: "firstK", "lastK", "everyK" (consecutive
/// windows of K layers), "a-b", "a", or "none" for the empty window.
std::vector<LayerWindow> parse_windows(std::string_view spec, int num_layers);

/// Which consistency feeds the prediction bias E.
enum class ConsistencyBasis { score, label };

struct SweepOptions {
  std::uint64_t random_seed = 0;
  ConsistencyBasis basis = ConsistencyBasis::score;
  /// Greater than 1 switches label consistency to exact match of generated sequences.
  int answer_length = 1;
};

struct WindowResult {
  LayerWindow window;
  InterventionKind kind = InterventionKind::vt_block;
  double c_label = 1.0;
  double c_score = 1.0;
  double e = 0.0;
  std::optional<double> d;
};

/// Baseline once, then one perturbed pass per window.
std::vector<WindowResult> layer_sweep(const ModelParams& params,
                                      std::span<const SyntheticExample> dataset,
                                      InterventionKind kind,
                                      std::span<const LayerWindow> windows,
                                      const SweepOptions& options = {});

/// vv and vt sweeps over the same windows; both rows of a window carry
/// D = ln(E_vv / E_vt). Rows are ordered (vv, vt) per window.
std::vector<WindowResult> paired_sweep(const ModelParams& params,
                                       std::span<const SyntheticExample> dataset,
                                       std::span<const LayerWindow> windows,
                                       const SweepOptions& options = {});

}  // namespace himap
