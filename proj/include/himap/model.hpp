#pragma once

// Tiny pre-norm decoder-only transformer over a system/image/instruction token
// layout. Forward passes run on a gradient tape so the post-softmax attention
// matrices and their loss gradients can be read back for saliency analysis.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "himap/example.hpp"
#include "himap/layout.hpp"
#include "himap/numerics/types.hpp"
#include "himap/perturb.hpp"
#include "himap/prune.hpp"

namespace himap {

struct ModelConfig {
  int layers = 8;
  int heads = 4;
  int hidden = 64;
  int ffn = 128;
  int vocab = 64;
  int max_seq = 64;
  std::uint64_t init_seed = 0;
  double init_std = 0.1;

  /// Throws ConfigError unless hidden % heads == 0, layers >= 2, ffn >= hidden.
  void validate() const;
  int head_dim() const { return hidden / heads; }

  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Matrix ln1_gain, ln1_bias;  // 1 x d
  Matrix wq, wk, wv, wo;      // d x d
  Matrix ln2_gain, ln2_bias;  // 1 x d
  Matrix w_up;                // d x m
  Matrix w_down;              // m x d
};

struct ModelParams {
  ModelConfig config;
  Matrix token_embedding;     // vocab x d
  Matrix position_embedding;  // max_seq x d
  std::vector<LayerParams> layers;
  Matrix lnf_gain, lnf_bias;  // 1 x d
  Matrix head;                // d x vocab

  /// Every tensor with a stable name, in manifest order.
  std::vector<std::pair<std::string, Matrix*>> named_tensors();
  std::vector<std::pair<std::string, const Matrix*>> named_tensors() const;

  /// Same shapes, all zeros.
  ModelParams zeros_like() const;
};

/// Weights ~ N(0, init_std^2) from init_seed; layer-norm gains 1, biases 0.
ModelParams build_model(const ModelConfig& config);

/// FNV-1a over the little-endian bytes of every tensor in manifest order.
std::uint64_t params_checksum(const ModelParams& params);

struct LossTarget {
  Index position = 0;
  int token = 0;
};

/// Replaces one head's attention by a fixed matrix; the replacement becomes
/// the recorded attention for that head. Testing aid for gradient checks.
struct AttentionOverride {
  int layer = 0;
  int head = 0;
  Matrix attention;
};

struct ForwardOptions {
  const Intervention* intervention = nullptr;
  const PruneSchedule* schedule = nullptr;
  bool want_grads = false;
  std::optional<LossTarget> loss_target;
  const AttentionOverride* attention_override = nullptr;
  /// Keep per-layer key/value rows for cached decoding.
  bool keep_kv = false;
};

struct LayerKV {
  Matrix keys;    // surviving tokens x d (heads side by side)
  Matrix values;  // surviving tokens x d
};

struct ForwardTrace {
  /// attention[l][h]: post-softmax, post-intervention matrix over keep_map[l].
  std::vector<std::vector<Matrix>> attention;
  /// Same shapes as attention; empty unless gradients were requested.
  std::vector<std::vector<Matrix>> attention_grad;
  /// One row per surviving position of the last layer.
  Matrix logits;
  std::vector<std::vector<Index>> keep_map;
  std::optional<double> loss;
  std::vector<LayerKV> kv;

  bool has_grads() const { return !attention_grad.empty(); }
  /// Logits row for original position `position`; throws if it was pruned.
  RowVector logits_at(Index position) const;
};

ForwardTrace forward(const ModelParams& params, std::span<const int> tokens,
                     const TokenLayout& layout, const ForwardOptions& options = {});

/// Cross-entropy at `target` and its gradient for every parameter.
struct LossAndGrads {
  double loss = 0.0;
  ModelParams grads;
};
LossAndGrads loss_and_grads(const ModelParams& params, std::span<const int> tokens,
                            const TokenLayout& layout, LossTarget target);

struct TrainSpec {
  int steps = 2000;
  int batch = 8;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  std::uint64_t seed = 42;

  void validate() const;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> losses;
};

/// Mean answer-token loss over `batch` and its parameter gradients, computed
/// in one stacked pass.
LossAndGrads batch_loss_and_grads(const ModelParams& params,
                                  std::span<const SyntheticExample> batch);

/// Adam on the answer-token cross-entropy. Batches are drawn with
/// replacement from `seed`.
TrainResult train(ModelParams params, std::span<const SyntheticExample> dataset,
                  const TrainSpec& spec);

/// Greedy decoding. With a schedule, pruning is decided once on the prompt
/// and pruned tokens never enter the key/value cache of later layers. An
/// intervention applies to the prompt pass only; decoded tokens lie outside
/// every segment of the layout.
std::vector<int> generate(const ModelParams& params, std::span<const int> prompt,
                          const TokenLayout& layout, int max_new,
                          const PruneSchedule* schedule = nullptr,
                          const Intervention* intervention = nullptr);

/// Greedy answer token at the final prompt position.
int predict(const ModelParams& params, const SyntheticExample& example,
            const PruneSchedule* schedule = nullptr);

}  // namespace himap
