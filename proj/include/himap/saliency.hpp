#pragma once

// Attention-edge saliency and the modality / visual-flow scores built on it.

#include <span>
#include <vector>

#include "himap/example.hpp"
#include "himap/layout.hpp"
#include "himap/model.hpp"

namespace himap {

/// values(i, j): importance of the flow from token j into token i at `layer`.
struct SaliencyMatrix {
  int layer = 0;
  Matrix values;
};

/// | sum_h A_h (.) dL/dA_h |, absolute value taken after the head sum.
SaliencyMatrix saliency_matrix(const ForwardTrace& trace, int layer);

/// Column-mass of the saliency matrix per source segment, each divided by the
/// segment size.
struct ModalityScores {
  double sys = 0.0;
  double img = 0.0;
  double ins = 0.0;
};

ModalityScores modality_scores(const SaliencyMatrix& saliency, const TokenLayout& layout);

/// vv: sum over i, j in V of I(i, j), over |V|.
/// vt: sum over i in V, j in I of I(i, j), over |V| (index roles as typeset;
///     structurally zero under a causal mask with V before I).
/// vt_receiver: sum over i in I, j in V of I(i, j), over |V| (image tokens
///     sending into instruction tokens).
struct VisualFlowScores {
  double vv = 0.0;
  double vt = 0.0;
  double vt_receiver = 0.0;
};

VisualFlowScores visual_flow_scores(const SaliencyMatrix& saliency, const TokenLayout& layout);

struct LayerFlowProfile {
  int layer = 0;
  ModalityScores modality;
  VisualFlowScores flow;
};

/// Per-layer scores averaged over examples in index order. Each example's
/// loss is the cross-entropy of its gold answer at the final prompt position.
std::vector<LayerFlowProfile> dataset_flow_profile(const ModelParams& params,
                                                   std::span<const SyntheticExample> dataset);

}  // namespace himap
