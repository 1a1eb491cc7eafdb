#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plop/nfn.hpp"
#include "plop/tensor.hpp"
#include "plop/theory.hpp"

// Minimal decoder-only transformer: pre-norm RMSNorm without learned gains,
// causal multi-head attention, SiLU-gated MLP, learned absolute positions,
// no biases, unembedding tied to the embedding. The tied head keeps the
// linear-module inventory at exactly the seven projection types per layer.
// Weights persist in f32; forward, backward and training arithmetic runs in
// double.
namespace plop::toy {

struct TransformerConfig {
  int vocab = 16;
  int d_model = 64;
  int n_heads = 4;
  int d_mlp = 128;
  int n_layers = 2;
  int max_seq = 64;  // learned position table size
  uint64_t seed = 0;
};

void validate(const TransformerConfig& c);

struct LayerWeights {
  Matrix wq, wk, wv, wo;       // d_model x d_model
  Matrix w_gate, w_up;         // d_mlp x d_model
  Matrix w_down;               // d_model x d_mlp
};

struct Transformer {
  TransformerConfig config;
  Matrix embedding;  // vocab x d_model, doubles as the unembedding
  Matrix positions;  // max_seq x d_model
  std::vector<LayerWeights> layers;
};

Transformer init_transformer(const TransformerConfig& c);

struct ModuleRef {
  std::string name;  // "layers.<i>.attn.q_proj", "layers.<i>.mlp.down_proj", ...
  const Matrix* weight;
};

// The seven projections per layer, layer-major, attention before mlp.
std::vector<ModuleRef> list_modules(const Transformer& m);

// f64 mirror used by training and the finite-difference checks. Shapes match
// the f32 model field for field, so the same struct carries gradients.
struct TransformerF64 {
  TransformerConfig config;
  lab::Mat64 embedding, positions;
  struct Layer {
    lab::Mat64 wq, wk, wv, wo, w_gate, w_up, w_down;
  };
  std::vector<Layer> layers;
};

TransformerF64 widen(const Transformer& m);
Transformer narrow(const TransformerF64& m);  // rounds back to f32

// Next-token cross entropy, averaged over every predicted position of the
// batch. Sequences are rows of token ids; each must fit max_seq and hold at
// least two tokens.
double loss(const TransformerF64& m, const std::vector<std::vector<int>>& batch);

// Same forward, plus gradients for every weight accumulated into `grads`
// (overwritten, not summed). Returns the loss.
double loss_and_gradients(const TransformerF64& m, const std::vector<std::vector<int>>& batch,
                          TransformerF64& grads);

// Vocab logits for one sequence, one row per position. Row t depends only on
// tokens 0..t, which makes the causal mask directly observable.
lab::Mat64 sequence_logits(const TransformerF64& m, const std::vector<int>& tokens);

// Runs the batch in f64 and records every module's per-position input as f32,
// one ActivationBatch per module, aligned with list_modules order. The q/k/v
// projections of a layer read the same normed vector, so their captures are
// bitwise equal.
std::vector<ActivationBatch> capture_inputs(const Transformer& m,
                                            const std::vector<std::vector<int>>& batch);

inline constexpr int kTokPlus = 10;
inline constexpr int kTokEquals = 11;
inline constexpr int kTokSemicolon = 12;

enum class Task { kArithmetic, kShuffled };

// Task A rows are back-to-back modular-addition clauses "a+b=c;" (six tokens
// each, c = a+b mod 10), the last clause cut to fit seq; task B shuffles each
// row in place, keeping the token marginals and destroying the structure.
std::vector<std::vector<int>> sample_batch(Task task, int batch, int seq, uint64_t seed,
                                           int64_t step);

// Full-model Adam on a fresh batch per step; returns the loss curve. The f32
// weights are widened once, trained in double, and rounded back at the end,
// so steps == 0 leaves the model bit-identical.
std::vector<double> train_adam(Transformer& m, Task task, int steps, int batch, int seq,
                               const lab::AdamParams& adam, uint64_t data_seed);

}  // namespace plop::toy
