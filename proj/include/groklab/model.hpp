#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "groklab/dataset.hpp"
#include "groklab/tensor.hpp"

namespace groklab {

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 1;
  int vocab_size = 0;
  int n_classes = 0;
  int ff_mult = 4;
  std::uint64_t init_seed = 0;
  static constexpr int seq_len = 3;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

struct NamedParam {
  std::string name;
  TensorPtr tensor;
  bool decay;  // weight decay applies to matrices of rank >= 2 only
};

// Transformer encoder classifier over [a, b, =] sequences. Post-layer-norm
// sublayers, learned positional embeddings, ReLU feedforward, no dropout.
struct ModelParams {
  ModelConfig config;
  TensorPtr tok_emb;  // [vocab, d]
  TensorPtr pos_emb;  // [3, d]
  struct LayerParams {
    TensorPtr wq, wk, wv, wo;        // [d, d], no biases
    TensorPtr ln1_gain, ln1_bias;    // [d]
    TensorPtr w1, b1;                // [d, ff], [ff]
    TensorPtr w2, b2;                // [ff, d], [d]
    TensorPtr ln2_gain, ln2_bias;    // [d]
  };
  std::vector<LayerParams> layers;
  TensorPtr head_w;  // [d, n_classes]
  TensorPtr head_b;  // [n_classes]

  // Registration order is fixed; it defines the checkpoint layout and which
  // matrices the spectral-entropy diagnostic sees first.
  std::vector<NamedParam> named() const;
  std::vector<TensorPtr> tensors() const;
  std::int64_t param_count() const;
};

// Matrices ~ Normal(0, 0.02^2) truncated at +-2 sigma, biases zero, gains one.
ModelParams init_params(const ModelConfig& config);

struct ForwardOut {
  TensorPtr logits;  // [B, n_classes]
  TensorPtr phi;     // [B, d]: final-position output of the last encoder layer,
                     // exactly the vector the classifier head multiplies
  std::vector<TensorPtr> attention;  // per layer, [B*heads, 3, 3]
};

// tokens holds B rows of 3 ids. tape may be null for inference.
ForwardOut forward(Tape* tape, const ModelParams& params, std::span<const std::int32_t> tokens);

// Argmax accuracy over the entire index list, batched internally.
double evaluate(const ModelParams& params, const Dataset& data,
                std::span<const std::int32_t> indices);

struct SplitEval {
  double accuracy = 0.0;
  std::vector<double> phi;            // row-major [n_phi, d], in `indices` order
  std::vector<std::int32_t> phi_labels;
};

// Single pass over `indices`; rows listed in phi_rows (dataset indices, must be
// a subset of `indices`) additionally get their representation copied out.
SplitEval evaluate_collect_phi(const ModelParams& params, const Dataset& data,
                               std::span<const std::int32_t> indices,
                               std::span<const std::int32_t> phi_rows);

// Flat binary checkpoint: header, config, then named arrays with shape
// prefixes in registration order. See README for the exact layout.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace groklab
