#include "himap/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include "himap/errors.hpp"
#include "himap/numerics/kernels.hpp"
#include "himap/numerics/tape.hpp"
#include "himap/rng.hpp"

namespace himap {

namespace {

constexpr double kLayerNormEps = 1e-5;

Matrix normal_matrix(Rng& rng, Index rows, Index cols, double std_dev) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal() * std_dev;
  }
  return m;
}

Index argmax(const RowVector& row) {
  Index best = 0;
  for (Index k = 1; k < row.size(); ++k) {
    if (row(k) > row(best)) best = k;
  }
  return best;
}

struct LayerVars {
  Var ln1_gain, ln1_bias, wq, wk, wv, wo, ln2_gain, ln2_bias, w_up, w_down;
};

struct ParamVars {
  Var token_embedding, position_embedding, lnf_gain, lnf_bias, head;
  std::vector<LayerVars> layers;
};

ParamVars bind(GradTape& tape, const ModelParams& p, bool differentiable) {
  auto put = [&](const Matrix& m) { return differentiable ? tape.leaf(m) : tape.constant(m); };
  ParamVars v;
  v.token_embedding = put(p.token_embedding);
  v.position_embedding = put(p.position_embedding);
  for (const LayerParams& lp : p.layers) {
    v.layers.push_back(LayerVars{put(lp.ln1_gain), put(lp.ln1_bias), put(lp.wq), put(lp.wk),
                                 put(lp.wv), put(lp.wo), put(lp.ln2_gain), put(lp.ln2_bias),
                                 put(lp.w_up), put(lp.w_down)});
  }
  v.lnf_gain = put(p.lnf_gain);
  v.lnf_bias = put(p.lnf_bias);
  v.head = put(p.head);
  return v;
}

ModelParams collect_grads(const GradTape& tape, const ParamVars& v, const ModelParams& like) {
  ModelParams g;
  g.config = like.config;
  g.token_embedding = tape.grad(v.token_embedding);
  g.position_embedding = tape.grad(v.position_embedding);
  for (const LayerVars& lv : v.layers) {
    g.layers.push_back(LayerParams{tape.grad(lv.ln1_gain), tape.grad(lv.ln1_bias),
                                   tape.grad(lv.wq), tape.grad(lv.wk), tape.grad(lv.wv),
                                   tape.grad(lv.wo), tape.grad(lv.ln2_gain),
                                   tape.grad(lv.ln2_bias), tape.grad(lv.w_up),
                                   tape.grad(lv.w_down)});
  }
  g.lnf_gain = tape.grad(v.lnf_gain);
  g.lnf_bias = tape.grad(v.lnf_bias);
  g.head = tape.grad(v.head);
  return g;
}

void check_inputs(const ModelParams& params, std::span<const int> tokens,
                  const TokenLayout& layout) {
  const ModelConfig& c = params.config;
  if (static_cast<Index>(tokens.size()) != layout.size()) {
    throw ShapeError("forward: " + std::to_string(tokens.size()) + " tokens but layout covers " +
                     std::to_string(layout.size()));
  }
  if (tokens.empty()) throw ShapeError("forward: empty token sequence");
  if (static_cast<int>(tokens.size()) > c.max_seq) {
    throw LengthError("forward: sequence of " + std::to_string(tokens.size()) +
                      " exceeds max_seq " + std::to_string(c.max_seq));
  }
  for (int t : tokens) {
    if (t < 0 || t >= c.vocab) {
      throw IndexError("forward: token id " + std::to_string(t) + " outside vocab of " +
                       std::to_string(c.vocab));
    }
  }
}

// Records the whole forward pass on `tape`; returns the loss var when a loss
// target is set.
std::optional<Var> run_forward(GradTape& tape, const ParamVars& pv, const ModelParams& params,
                               std::span<const int> tokens, const TokenLayout& layout,
                               const ForwardOptions& opt, ForwardTrace& trace,
                               std::vector<std::vector<Var>>* attention_vars) {
  const ModelConfig& c = params.config;
  const int dh = c.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto n0 = static_cast<Index>(tokens.size());

  std::vector<Index> positions(static_cast<std::size_t>(n0));
  std::vector<Index> token_rows(static_cast<std::size_t>(n0));
  for (Index i = 0; i < n0; ++i) {
    positions[static_cast<std::size_t>(i)] = i;
    token_rows[static_cast<std::size_t>(i)] = tokens[static_cast<std::size_t>(i)];
  }
  Var x = tape.add(tape.gather_rows(pv.token_embedding, token_rows),
                   tape.gather_rows(pv.position_embedding, positions));

  trace.attention.assign(static_cast<std::size_t>(c.layers), {});
  trace.keep_map.clear();
  if (opt.keep_kv) trace.kv.assign(static_cast<std::size_t>(c.layers), {});

  for (int l = 0; l < c.layers; ++l) {
    if (opt.schedule != nullptr) {
      if (const PruneStage* stage = opt.schedule->stage_at(l)) {
        std::vector<Index> survivors = prune_positions(
            *stage, trace.attention[static_cast<std::size_t>(l - 1)], layout, positions);
        std::vector<Index> local;
        local.reserve(survivors.size());
        for (std::size_t k = 0, s = 0; k < positions.size() && s < survivors.size(); ++k) {
          if (positions[k] == survivors[s]) {
            local.push_back(static_cast<Index>(k));
            ++s;
          }
        }
        x = tape.gather_rows(x, local);
        positions = std::move(survivors);
      }
    }
    trace.keep_map.push_back(positions);

    const LayerVars& lv = pv.layers[static_cast<std::size_t>(l)];
    const auto n = static_cast<Index>(positions.size());
    Var h = tape.layer_norm(x, lv.ln1_gain, lv.ln1_bias, kLayerNormEps);
    Var q = tape.matmul(h, lv.wq);
    Var k = tape.matmul(h, lv.wk);
    Var v = tape.matmul(h, lv.wv);
    if (opt.keep_kv) {
      trace.kv[static_cast<std::size_t>(l)] = LayerKV{tape.value(k), tape.value(v)};
    }

    const MaskX allowed = causal_mask(n);
    const bool intervene = opt.intervention != nullptr && opt.intervention->targets(l);
    MaskX zeroed;
    if (intervene) zeroed = intervention_zero_mask(layout, positions, *opt.intervention);

    std::vector<Var> head_out;
    std::vector<Var> head_attention;
    auto& recorded = trace.attention[static_cast<std::size_t>(l)];
    for (int hd = 0; hd < c.heads; ++hd) {
      Var qh = tape.cols(q, hd * dh, dh);
      Var kh = tape.cols(k, hd * dh, dh);
      Var vh = tape.cols(v, hd * dh, dh);
      Var scores = tape.scale(tape.matmul_transposed(qh, kh), inv_sqrt_dh);
      Var a = tape.masked_softmax(scores, allowed);
      if (intervene) a = tape.zero_entries(a, zeroed);
      if (opt.attention_override != nullptr && opt.attention_override->layer == l &&
          opt.attention_override->head == hd) {
        const Matrix& over = opt.attention_override->attention;
        if (over.rows() != n || over.cols() != n) {
          throw ShapeError("attention override must be " + std::to_string(n) + "x" +
                           std::to_string(n));
        }
        a = tape.leaf(over);
      }
      recorded.push_back(tape.value(a));
      head_attention.push_back(a);
      head_out.push_back(tape.matmul(a, vh));
    }
    if (attention_vars != nullptr) attention_vars->push_back(std::move(head_attention));

    x = tape.add(x, tape.matmul(tape.hcat(head_out), lv.wo));
    Var h2 = tape.layer_norm(x, lv.ln2_gain, lv.ln2_bias, kLayerNormEps);
    Var up = tape.gelu(tape.matmul(h2, lv.w_up));
    x = tape.add(x, tape.matmul(up, lv.w_down));
  }

  Var logits =
      tape.matmul(tape.layer_norm(x, pv.lnf_gain, pv.lnf_bias, kLayerNormEps), pv.head);
  trace.logits = tape.value(logits);

  if (!opt.loss_target) return std::nullopt;
  const LossTarget& target = *opt.loss_target;
  auto it = std::find(positions.begin(), positions.end(), target.position);
  if (target.position < 0 || target.position >= n0 || it == positions.end()) {
    throw IndexError("forward: loss target position " + std::to_string(target.position) +
                     " is not a surviving position of the sequence");
  }
  Var loss = tape.cross_entropy(logits, static_cast<Index>(it - positions.begin()), target.token);
  trace.loss = tape.value(loss)(0, 0);
  return loss;
}

// Mean answer-token loss of `batch`, with all sequences stacked row-wise so
// the dense layers run as single products.
Var run_batch(GradTape& tape, const ParamVars& pv, const ModelParams& params,
              std::span<const SyntheticExample> batch) {
  const ModelConfig& c = params.config;
  const int dh = c.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Index> offsets;
  std::vector<Index> token_rows;
  std::vector<Index> positions;
  for (const SyntheticExample& ex : batch) {
    offsets.push_back(static_cast<Index>(token_rows.size()));
    const auto prompt = ex.prompt();
    for (std::size_t i = 0; i < prompt.size(); ++i) {
      token_rows.push_back(prompt[i]);
      positions.push_back(static_cast<Index>(i));
    }
  }
  Var x = tape.add(tape.gather_rows(pv.token_embedding, std::move(token_rows)),
                   tape.gather_rows(pv.position_embedding, std::move(positions)));

  std::vector<MaskX> masks;
  for (const SyntheticExample& ex : batch) masks.push_back(causal_mask(ex.layout.size()));

  for (const LayerVars& lv : pv.layers) {
    Var h = tape.layer_norm(x, lv.ln1_gain, lv.ln1_bias, kLayerNormEps);
    Var q = tape.matmul(h, lv.wq);
    Var k = tape.matmul(h, lv.wk);
    Var v = tape.matmul(h, lv.wv);
    std::vector<Var> per_example;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Index off = offsets[b];
      const Index n = batch[b].layout.size();
      std::vector<Var> heads;
      for (int hd = 0; hd < c.heads; ++hd) {
        Var qh = tape.block(q, off, hd * dh, n, dh);
        Var kh = tape.block(k, off, hd * dh, n, dh);
        Var vh = tape.block(v, off, hd * dh, n, dh);
        Var a = tape.masked_softmax(tape.scale(tape.matmul_transposed(qh, kh), inv_sqrt_dh),
                                    masks[b]);
        heads.push_back(tape.matmul(a, vh));
      }
      per_example.push_back(tape.hcat(heads));
    }
    x = tape.add(x, tape.matmul(tape.vcat(per_example), lv.wo));
    Var h2 = tape.layer_norm(x, lv.ln2_gain, lv.ln2_bias, kLayerNormEps);
    x = tape.add(x, tape.matmul(tape.gelu(tape.matmul(h2, lv.w_up)), lv.w_down));
  }

  std::vector<Index> answer_rows;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    answer_rows.push_back(offsets[b] + batch[b].answer_position());
  }
  Var logits = tape.matmul(tape.layer_norm(tape.gather_rows(x, std::move(answer_rows)),
                                           pv.lnf_gain, pv.lnf_bias, kLayerNormEps),
                           pv.head);
  Var total = tape.cross_entropy(logits, 0, batch[0].gold);
  for (std::size_t b = 1; b < batch.size(); ++b) {
    total = tape.add(total, tape.cross_entropy(logits, static_cast<Index>(b), batch[b].gold));
  }
  return tape.scale(total, 1.0 / static_cast<double>(batch.size()));
}

void validate_options(const ModelParams& params, const ForwardOptions& opt) {
  if (opt.schedule != nullptr) {
    opt.schedule->validate(params.config.layers);
    if (opt.want_grads) {
      throw UnsupportedError("forward: gradients are only defined on the unpruned model");
    }
    if (opt.intervention != nullptr) {
      throw UnsupportedError("forward: interventions cannot be combined with pruning");
    }
    if (opt.attention_override != nullptr) {
      throw UnsupportedError("forward: attention overrides cannot be combined with pruning");
    }
  }
  if (opt.intervention != nullptr) opt.intervention->validate(params.config.layers);
  if (opt.want_grads && !opt.loss_target) {
    throw ConfigError("forward: want_grads requires a loss target");
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 2) throw ConfigError("model: need at least 2 layers");
  if (heads < 1 || hidden < 1 || hidden % heads != 0) {
    throw ConfigError("model: hidden " + std::to_string(hidden) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (ffn < hidden) throw ConfigError("model: ffn must be >= hidden");
  if (vocab < 1 || max_seq < 1) throw ConfigError("model: vocab and max_seq must be positive");
  if (!(init_std >= 0.0) || !std::isfinite(init_std)) {
    throw ConfigError("model: init_std must be finite and non-negative");
  }
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::named_tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  out.emplace_back("token_embedding", &token_embedding);
  out.emplace_back("position_embedding", &position_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerParams& lp = layers[l];
    out.emplace_back(p + "ln1_gain", &lp.ln1_gain);
    out.emplace_back(p + "ln1_bias", &lp.ln1_bias);
    out.emplace_back(p + "wq", &lp.wq);
    out.emplace_back(p + "wk", &lp.wk);
    out.emplace_back(p + "wv", &lp.wv);
    out.emplace_back(p + "wo", &lp.wo);
    out.emplace_back(p + "ln2_gain", &lp.ln2_gain);
    out.emplace_back(p + "ln2_bias", &lp.ln2_bias);
    out.emplace_back(p + "w_up", &lp.w_up);
    out.emplace_back(p + "w_down", &lp.w_down);
  }
  out.emplace_back("lnf_gain", &lnf_gain);
  out.emplace_back("lnf_bias", &lnf_bias);
  out.emplace_back("head", &head);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::named_tensors() const {
  auto mut = const_cast<ModelParams*>(this)->named_tensors();
  return {mut.begin(), mut.end()};
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto& [name, m] : z.named_tensors()) m->setZero();
  return z;
}

ModelParams build_model(const ModelConfig& config) {
  config.validate();
  const Index d = config.hidden;
  const Index m = config.ffn;
  Rng rng(config.init_seed);
  const double s = config.init_std;
  ModelParams p;
  p.config = config;
  p.token_embedding = normal_matrix(rng, config.vocab, d, s);
  p.position_embedding = normal_matrix(rng, config.max_seq, d, s);
  for (int l = 0; l < config.layers; ++l) {
    LayerParams lp;
    lp.ln1_gain = Matrix::Ones(1, d);
    lp.ln1_bias = Matrix::Zero(1, d);
    lp.wq = normal_matrix(rng, d, d, s);
    lp.wk = normal_matrix(rng, d, d, s);
    lp.wv = normal_matrix(rng, d, d, s);
    lp.wo = normal_matrix(rng, d, d, s);
    lp.ln2_gain = Matrix::Ones(1, d);
    lp.ln2_bias = Matrix::Zero(1, d);
    lp.w_up = normal_matrix(rng, d, m, s);
    lp.w_down = normal_matrix(rng, m, d, s);
    p.layers.push_back(std::move(lp));
  }
  p.lnf_gain = Matrix::Ones(1, d);
  p.lnf_bias = Matrix::Zero(1, d);
  p.head = normal_matrix(rng, d, config.vocab, s);
  return p;
}

std::uint64_t params_checksum(const ModelParams& params) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (const auto& [name, m] : params.named_tensors()) {
    for (Index k = 0; k < m->size(); ++k) {
      std::uint64_t bits = 0;
      const double v = m->data()[k];
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        hash ^= (bits >> (8 * b)) & 0xffU;
        hash *= 1099511628211ULL;
      }
    }
  }
  return hash;
}

RowVector ForwardTrace::logits_at(Index position) const {
  const auto& last = keep_map.back();
  auto it = std::find(last.begin(), last.end(), position);
  if (it == last.end()) {
    throw IndexError("logits_at: position " + std::to_string(position) + " did not survive");
  }
  return logits.row(it - last.begin());
}

ForwardTrace forward(const ModelParams& params, std::span<const int> tokens,
                     const TokenLayout& layout, const ForwardOptions& options) {
  check_inputs(params, tokens, layout);
  validate_options(params, options);
  GradTape tape;
  const ParamVars pv = bind(tape, params, options.want_grads);
  ForwardTrace trace;
  std::vector<std::vector<Var>> attention_vars;
  std::optional<Var> loss =
      run_forward(tape, pv, params, tokens, layout, options, trace, &attention_vars);
  if (options.want_grads) {
    tape.backward(*loss);
    trace.attention_grad.resize(attention_vars.size());
    for (std::size_t l = 0; l < attention_vars.size(); ++l) {
      for (Var a : attention_vars[l]) trace.attention_grad[l].push_back(tape.grad(a));
    }
  }
  return trace;
}

LossAndGrads loss_and_grads(const ModelParams& params, std::span<const int> tokens,
                            const TokenLayout& layout, LossTarget target) {
  check_inputs(params, tokens, layout);
  GradTape tape;
  const ParamVars pv = bind(tape, params, true);
  ForwardTrace trace;
  ForwardOptions opt;
  opt.loss_target = target;
  std::optional<Var> loss = run_forward(tape, pv, params, tokens, layout, opt, trace, nullptr);
  tape.backward(*loss);
  return {*trace.loss, collect_grads(tape, pv, params)};
}

LossAndGrads batch_loss_and_grads(const ModelParams& params,
                                  std::span<const SyntheticExample> batch) {
  if (batch.empty()) throw ConfigError("batch_loss_and_grads: empty batch");
  for (const SyntheticExample& ex : batch) check_inputs(params, ex.prompt(), ex.layout);
  GradTape tape;
  const ParamVars pv = bind(tape, params, true);
  Var loss = run_batch(tape, pv, params, batch);
  tape.backward(loss);
  return {tape.value(loss)(0, 0), collect_grads(tape, pv, params)};
}

void TrainSpec::validate() const {
  if (steps < 1) throw ConfigError("train: steps must be >= 1");
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
  if (!(grad_clip > 0.0)) throw ConfigError("train: grad_clip must be positive");
}

TrainResult train(ModelParams params, std::span<const SyntheticExample> dataset,
                  const TrainSpec& spec) {
  spec.validate();
  params.config.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  for (const SyntheticExample& ex : dataset) {
    if (static_cast<int>(ex.layout.size()) > params.config.max_seq) {
      throw LengthError("train: example longer than max_seq");
    }
  }

  ModelParams m1 = params.zeros_like();
  ModelParams m2 = params.zeros_like();
  Rng rng(spec.seed);
  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(spec.steps));

  for (int step = 0; step < spec.steps; ++step) {
    std::vector<SyntheticExample> batch;
    batch.reserve(static_cast<std::size_t>(spec.batch));
    for (int b = 0; b < spec.batch; ++b) batch.push_back(dataset[rng.below(dataset.size())]);
    LossAndGrads lg = batch_loss_and_grads(params, batch);
    const double loss = lg.loss;
    if (!std::isfinite(loss)) throw TrainingError(static_cast<std::size_t>(step), "non-finite loss");
    result.losses.push_back(loss);

    auto g = lg.grads.named_tensors();
    double norm_sq = 0.0;
    for (auto& [name, t] : g) norm_sq += t->squaredNorm();
    const double norm = std::sqrt(norm_sq);
    if (!std::isfinite(norm)) {
      throw TrainingError(static_cast<std::size_t>(step), "non-finite gradient");
    }
    const double clip = norm > spec.grad_clip ? spec.grad_clip / norm : 1.0;

    const double t = step + 1;
    const double bc1 = 1.0 - std::pow(spec.beta1, t);
    const double bc2 = 1.0 - std::pow(spec.beta2, t);
    auto p = params.named_tensors();
    auto a = m1.named_tensors();
    auto s = m2.named_tensors();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const Matrix gk = *g[k].second * clip;
      *a[k].second = spec.beta1 * *a[k].second + (1.0 - spec.beta1) * gk;
      *s[k].second = spec.beta2 * *s[k].second + (1.0 - spec.beta2) * gk.cwiseProduct(gk);
      const Matrix step_dir =
          ((*a[k].second / bc1).array() / ((*s[k].second / bc2).array().sqrt() + spec.adam_eps))
              .matrix();
      *p[k].second -= spec.learning_rate * step_dir;
    }
  }
  result.params = std::move(params);
  return result;
}

namespace {

// One cached decode step at `position`; appends the token's keys/values to
// every layer's cache and returns the next-token logits.
RowVector decode_step(const ModelParams& params, std::vector<LayerKV>& cache, int token,
                      Index position) {
  const ModelConfig& c = params.config;
  const int dh = c.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix x = params.token_embedding.row(token) + params.position_embedding.row(position);
  for (int l = 0; l < c.layers; ++l) {
    const LayerParams& lp = params.layers[static_cast<std::size_t>(l)];
    LayerKV& kv = cache[static_cast<std::size_t>(l)];
    const Matrix h = layer_norm<double>(x, lp.ln1_gain, lp.ln1_bias, kLayerNormEps);
    const Matrix q = matmul(h, lp.wq);
    const Matrix k = matmul(h, lp.wk);
    const Matrix v = matmul(h, lp.wv);
    const Index n = kv.keys.rows();
    kv.keys.conservativeResize(n + 1, Eigen::NoChange);
    kv.values.conservativeResize(n + 1, Eigen::NoChange);
    kv.keys.row(n) = k;
    kv.values.row(n) = v;
    const MaskX allowed = MaskX::Constant(1, n + 1, true);
    Matrix mixed(1, c.hidden);
    for (int hd = 0; hd < c.heads; ++hd) {
      const Matrix qh = q.middleCols(hd * dh, dh);
      const Matrix kh = kv.keys.middleCols(hd * dh, dh);
      const Matrix vh = kv.values.middleCols(hd * dh, dh);
      const Matrix scores = (qh * kh.transpose()) * inv_sqrt_dh;
      const Matrix a = masked_row_softmax<double>(scores, allowed);
      mixed.middleCols(hd * dh, dh) = a * vh;
    }
    x = x + matmul(mixed, lp.wo);
    const Matrix h2 = layer_norm<double>(x, lp.ln2_gain, lp.ln2_bias, kLayerNormEps);
    x = x + matmul(gelu<double>(matmul(h2, lp.w_up)), lp.w_down);
  }
  const Matrix out =
      matmul(layer_norm<double>(x, params.lnf_gain, params.lnf_bias, kLayerNormEps), params.head);
  return out.row(0);
}

}  // namespace

std::vector<int> generate(const ModelParams& params, std::span<const int> prompt,
                          const TokenLayout& layout, int max_new, const PruneSchedule* schedule,
                          const Intervention* intervention) {
  if (max_new < 0) throw LengthError("generate: max_new must be >= 0");
  if (static_cast<int>(prompt.size()) > params.config.max_seq - max_new) {
    throw LengthError("generate: prompt of " + std::to_string(prompt.size()) + " plus " +
                      std::to_string(max_new) + " new tokens exceeds max_seq " +
                      std::to_string(params.config.max_seq));
  }
  std::vector<int> out;
  if (max_new == 0) return out;
  ForwardOptions opt;
  opt.schedule = schedule;
  opt.intervention = intervention;
  opt.keep_kv = true;
  ForwardTrace trace = forward(params, prompt, layout, opt);
  RowVector next = trace.logits.row(trace.logits.rows() - 1);
  Index position = static_cast<Index>(prompt.size());
  for (int k = 0; k < max_new; ++k) {
    const int token = static_cast<int>(argmax(next));
    out.push_back(token);
    if (k + 1 == max_new) break;
    next = decode_step(params, trace.kv, token, position++);
  }
  return out;
}

int predict(const ModelParams& params, const SyntheticExample& example,
            const PruneSchedule* schedule) {
  ForwardOptions opt;
  opt.schedule = schedule;
  const ForwardTrace trace = forward(params, example.prompt(), example.layout, opt);
  return static_cast<int>(argmax(trace.logits_at(example.answer_position())));
}

}  // namespace himap
