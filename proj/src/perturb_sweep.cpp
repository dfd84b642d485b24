#include "himap/perturb_sweep.hpp"

#include <algorithm>
#include <charconv>

#include "himap/errors.hpp"

namespace himap {

std::set<int> LayerWindow::layers() const {
  std::set<int> out;
  for (int l = first; l <= last; ++l) out.insert(l);
  return out;
}

namespace {

int parse_int(std::string_view s, std::string_view whole) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError("bad layer window '" + std::string(whole) + "'");
  }
  return v;
}

struct Predictions {
  std::vector<int> first;
  std::vector<std::vector<int>> top;
  std::vector<std::vector<int>> sequences;
};

Predictions predict_all(const ModelParams& params, std::span<const SyntheticExample> dataset,
                        const Intervention* iv, int answer_length) {
  Predictions p;
  for (const SyntheticExample& ex : dataset) {
    ForwardOptions opt;
    opt.intervention = iv;
    const ForwardTrace trace = forward(params, ex.prompt(), ex.layout, opt);
    const RowVector logits = trace.logits_at(ex.answer_position());
    const auto best = top5(std::span<const double>(logits.data(), logits.size()));
    p.first.push_back(best[0]);
    p.top.emplace_back(best.begin(), best.end());
    if (answer_length > 1) {
      p.sequences.push_back(
          generate(params, ex.prompt(), ex.layout, answer_length, nullptr, iv));
    }
  }
  return p;
}

double label_of(const Predictions& base, const Predictions& pert, int answer_length) {
  if (answer_length > 1) return label_consistency(base.sequences, pert.sequences);
  return label_consistency(base.first, pert.first);
}

WindowResult compare(const Predictions& base, const Predictions& pert, const LayerWindow& w,
                     InterventionKind kind, const SweepOptions& o) {
  WindowResult r;
  r.window = w;
  r.kind = kind;
  r.c_label = label_of(base, pert, o.answer_length);
  r.c_score = score_consistency(base.top, pert.top);
  const double c_base = o.basis == ConsistencyBasis::score
                            ? score_consistency(base.top, base.top)
                            : label_of(base, base, o.answer_length);
  r.e = prediction_bias(c_base, o.basis == ConsistencyBasis::score ? r.c_score : r.c_label);
  return r;
}

}  // namespace

std::vector<LayerWindow> parse_windows(std::string_view spec, int num_layers) {
  std::vector<LayerWindow> out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const std::size_t comma = std::min(spec.find(',', pos), spec.size());
    std::string_view tok = spec.substr(pos, comma - pos);
    pos = comma + 1;
    if (tok.empty()) {
      if (comma == spec.size()) break;
      continue;
    }
    if (tok == "none" || tok == "empty") {
      out.push_back(LayerWindow{0, -1});
    } else if (tok.starts_with("first")) {
      const int k = parse_int(tok.substr(5), tok);
      out.push_back(LayerWindow{0, std::min(k, num_layers) - 1});
    } else if (tok.starts_with("last")) {
      const int k = parse_int(tok.substr(4), tok);
      out.push_back(LayerWindow{std::max(0, num_layers - k), num_layers - 1});
    } else if (tok.starts_with("every")) {
      const int k = parse_int(tok.substr(5), tok);
      if (k < 1) throw ConfigError("window stride must be >= 1");
      for (int s = 0; s < num_layers; s += k) {
        out.push_back(LayerWindow{s, std::min(s + k, num_layers) - 1});
      }
    } else if (auto dash = tok.find('-'); dash != std::string_view::npos) {
      out.push_back(LayerWindow{parse_int(tok.substr(0, dash), tok),
                                parse_int(tok.substr(dash + 1), tok)});
    } else {
      const int l = parse_int(tok, tok);
      out.push_back(LayerWindow{l, l});
    }
    if (comma == spec.size()) break;
  }
  for (const LayerWindow& w : out) {
    if (!w.empty() && (w.first < 0 || w.last >= num_layers)) {
      throw ConfigError("layer window " + std::to_string(w.first) + "-" + std::to_string(w.last) +
                        " outside [0, " + std::to_string(num_layers) + ")");
    }
  }
  if (out.empty()) throw ConfigError("no layer windows in '" + std::string(spec) + "'");
  return out;
}

std::vector<WindowResult> layer_sweep(const ModelParams& params,
                                      std::span<const SyntheticExample> dataset,
                                      InterventionKind kind,
                                      std::span<const LayerWindow> windows,
                                      const SweepOptions& options) {
  if (dataset.empty()) throw ConfigError("layer_sweep: empty dataset");
  const Predictions base = predict_all(params, dataset, nullptr, options.answer_length);
  std::vector<WindowResult> out;
  for (const LayerWindow& w : windows) {
    Intervention iv{kind, w.layers(), options.random_seed};
    iv.validate(params.config.layers);
    const Predictions pert = predict_all(params, dataset, &iv, options.answer_length);
    out.push_back(compare(base, pert, w, kind, options));
  }
  return out;
}

std::vector<WindowResult> paired_sweep(const ModelParams& params,
                                       std::span<const SyntheticExample> dataset,
                                       std::span<const LayerWindow> windows,
                                       const SweepOptions& options) {
  const auto vv = layer_sweep(params, dataset, InterventionKind::vv_block, windows, options);
  const auto vt = layer_sweep(params, dataset, InterventionKind::vt_block, windows, options);
  std::vector<WindowResult> out;
  for (std::size_t k = 0; k < windows.size(); ++k) {
    WindowResult a = vv[k];
    WindowResult b = vt[k];
    a.d = b.d = bias_ratio(a.e, b.e);
    out.push_back(a);
    out.push_back(b);
  }
  return out;
}

}  // namespace himap
