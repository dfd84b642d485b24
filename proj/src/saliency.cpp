#include "himap/saliency.hpp"

#include <string>

#include "himap/errors.hpp"

namespace himap {

SaliencyMatrix saliency_matrix(const ForwardTrace& trace, int layer) {
  if (!trace.has_grads()) throw StateError("saliency_matrix: trace carries no attention gradients");
  if (layer < 0 || layer >= static_cast<int>(trace.attention.size())) {
    throw IndexError("saliency_matrix: layer " + std::to_string(layer) + " out of range");
  }
  const auto& heads = trace.attention[static_cast<std::size_t>(layer)];
  const auto& grads = trace.attention_grad[static_cast<std::size_t>(layer)];
  if (heads.empty() || heads.size() != grads.size()) {
    throw StateError("saliency_matrix: attention/gradient head counts differ");
  }
  Matrix total = Matrix::Zero(heads.front().rows(), heads.front().cols());
  for (std::size_t h = 0; h < heads.size(); ++h) {
    total += heads[h].cwiseProduct(grads[h]);
  }
  return {layer, total.cwiseAbs()};
}

namespace {

void check_size(const SaliencyMatrix& s, const TokenLayout& layout) {
  if (s.values.rows() != layout.size() || s.values.cols() != layout.size()) {
    throw ShapeError("saliency matrix is " + std::to_string(s.values.rows()) + "x" +
                     std::to_string(s.values.cols()) + " but layout covers " +
                     std::to_string(layout.size()) + " tokens");
  }
}

double block_sum(const Matrix& m, Index row0, Index rows, Index col0, Index cols) {
  double s = 0.0;
  for (Index i = row0; i < row0 + rows; ++i) {
    for (Index j = col0; j < col0 + cols; ++j) s += m(i, j);
  }
  return s;
}

double per_size(double mass, Index size, const char* segment) {
  if (size == 0) throw ShapeError(std::string("empty ") + segment + " segment: score undefined");
  return mass / static_cast<double>(size);
}

}  // namespace

ModalityScores modality_scores(const SaliencyMatrix& saliency, const TokenLayout& layout) {
  check_size(saliency, layout);
  const Matrix& m = saliency.values;
  const Index n = layout.size();
  ModalityScores s;
  s.sys = per_size(block_sum(m, 0, n, 0, layout.sys_len()), layout.sys_len(), "system");
  s.img = per_size(block_sum(m, 0, n, layout.img_begin(), layout.img_len()), layout.img_len(),
                   "image");
  s.ins = per_size(block_sum(m, 0, n, layout.ins_begin(), layout.ins_len()), layout.ins_len(),
                   "instruction");
  return s;
}

VisualFlowScores visual_flow_scores(const SaliencyMatrix& saliency, const TokenLayout& layout) {
  check_size(saliency, layout);
  const Matrix& m = saliency.values;
  const Index v0 = layout.img_begin();
  const Index nv = layout.img_len();
  const Index i0 = layout.ins_begin();
  const Index ni = layout.ins_len();
  VisualFlowScores s;
  s.vv = per_size(block_sum(m, v0, nv, v0, nv), nv, "image");
  s.vt = per_size(block_sum(m, v0, nv, i0, ni), nv, "image");
  s.vt_receiver = per_size(block_sum(m, i0, ni, v0, nv), nv, "image");
  return s;
}

std::vector<LayerFlowProfile> dataset_flow_profile(const ModelParams& params,
                                                   std::span<const SyntheticExample> dataset) {
  if (dataset.empty()) throw ConfigError("dataset_flow_profile: empty dataset");
  const int layers = params.config.layers;
  std::vector<LayerFlowProfile> sum(static_cast<std::size_t>(layers));
  for (std::size_t e = 0; e < dataset.size(); ++e) {
    const SyntheticExample& ex = dataset[e];
    ForwardTrace trace;
    try {
      ForwardOptions opt;
      opt.want_grads = true;
      opt.loss_target = LossTarget{ex.answer_position(), ex.gold};
      trace = forward(params, ex.prompt(), ex.layout, opt);
    } catch (const Error& err) {
      throw Error("example " + std::to_string(e) + ": " + err.what());
    }
    for (int l = 0; l < layers; ++l) {
      const SaliencyMatrix sm = saliency_matrix(trace, l);
      const ModalityScores ms = modality_scores(sm, ex.layout);
      const VisualFlowScores fs = visual_flow_scores(sm, ex.layout);
      LayerFlowProfile& acc = sum[static_cast<std::size_t>(l)];
      acc.modality.sys += ms.sys;
      acc.modality.img += ms.img;
      acc.modality.ins += ms.ins;
      acc.flow.vv += fs.vv;
      acc.flow.vt += fs.vt;
      acc.flow.vt_receiver += fs.vt_receiver;
    }
  }
  const auto n = static_cast<double>(dataset.size());
  for (int l = 0; l < layers; ++l) {
    LayerFlowProfile& p = sum[static_cast<std::size_t>(l)];
    p.layer = l;
    p.modality.sys /= n;
    p.modality.img /= n;
    p.modality.ins /= n;
    p.flow.vv /= n;
    p.flow.vt /= n;
    p.flow.vt_receiver /= n;
  }
  return sum;
}

}  // namespace himap
