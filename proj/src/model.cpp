#include "groklab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "groklab/rng.hpp"

namespace groklab {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr int kEvalBatch = 512;

// Embeddings start at unit scale, projections uniform in +-1/sqrt(fan_in).
// Training must begin in the large-norm memorization regime; a small init
// collapses the memorization phase and with it the delayed transition.
TensorPtr init_embedding(std::vector<int> shape, RandomStream& rng) {
  auto t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t->data) v = rng.normal(0.0, 1.0);
  return t;
}

TensorPtr init_projection(std::vector<int> shape, RandomStream& rng) {
  auto t = Tensor::zeros(std::move(shape), true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(t->shape[0]));
  for (auto& v : t->data) v = bound * (2.0 * rng.uniform01() - 1.0);
  return t;
}

TensorPtr init_const(std::vector<int> shape, double value) {
  auto t = Tensor::zeros(std::move(shape), true);
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || ff_mult <= 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("d_model must be divisible by n_heads");
  }
  if (vocab_size <= 0 || n_classes <= 0) {
    throw std::invalid_argument("vocab_size and n_classes must be set");
  }
}

std::vector<NamedParam> ModelParams::named() const {
  std::vector<NamedParam> out;
  auto push = [&out](const std::string& name, const TensorPtr& t) {
    out.push_back(NamedParam{name, t, t->rank() >= 2});
  };
  push("tok_emb", tok_emb);
  push("pos_emb", pos_emb);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& lp = layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    push(prefix + "wq", lp.wq);
    push(prefix + "wk", lp.wk);
    push(prefix + "wv", lp.wv);
    push(prefix + "wo", lp.wo);
    push(prefix + "ln1_gain", lp.ln1_gain);
    push(prefix + "ln1_bias", lp.ln1_bias);
    push(prefix + "w1", lp.w1);
    push(prefix + "b1", lp.b1);
    push(prefix + "w2", lp.w2);
    push(prefix + "b2", lp.b2);
    push(prefix + "ln2_gain", lp.ln2_gain);
    push(prefix + "ln2_bias", lp.ln2_bias);
  }
  push("head.w", head_w);
  push("head.b", head_b);
  return out;
}

std::vector<TensorPtr> ModelParams::tensors() const {
  std::vector<TensorPtr> out;
  for (const auto& np : named()) out.push_back(np.tensor);
  return out;
}

std::int64_t ModelParams::param_count() const {
  std::int64_t n = 0;
  for (const auto& np : named()) n += np.tensor->numel();
  return n;
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  RandomStream rng(config.init_seed);
  ModelParams p;
  p.config = config;
  const int d = config.d_model;
  const int ff = config.ff_mult * d;
  p.tok_emb = init_embedding({config.vocab_size, d}, rng);
  p.pos_emb = init_embedding({ModelConfig::seq_len, d}, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    ModelParams::LayerParams lp;
    lp.wq = init_projection({d, d}, rng);
    lp.wk = init_projection({d, d}, rng);
    lp.wv = init_projection({d, d}, rng);
    lp.wo = init_projection({d, d}, rng);
    lp.ln1_gain = init_const({d}, 1.0);
    lp.ln1_bias = init_const({d}, 0.0);
    lp.w1 = init_projection({d, ff}, rng);
    lp.b1 = init_const({ff}, 0.0);
    lp.w2 = init_projection({ff, d}, rng);
    lp.b2 = init_const({d}, 0.0);
    lp.ln2_gain = init_const({d}, 1.0);
    lp.ln2_bias = init_const({d}, 0.0);
    p.layers.push_back(std::move(lp));
  }
  p.head_w = init_projection({d, config.n_classes}, rng);
  p.head_b = init_const({config.n_classes}, 0.0);
  return p;
}

ForwardOut forward(Tape* tape, const ModelParams& params, std::span<const std::int32_t> tokens) {
  const auto& cfg = params.config;
  if (tokens.empty() || tokens.size() % ModelConfig::seq_len != 0) {
    throw std::invalid_argument("forward: token count must be a positive multiple of 3");
  }
  for (auto t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) throw std::out_of_range("forward: token id out of range");
  }
  const int batch = static_cast<int>(tokens.size()) / ModelConfig::seq_len;
  const int seq = ModelConfig::seq_len;
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int hd = cfg.head_dim();

  std::vector<std::int32_t> pos_ids(tokens.size());
  for (std::size_t i = 0; i < pos_ids.size(); ++i) pos_ids[i] = static_cast<std::int32_t>(i % seq);

  auto x = ops::add(tape, ops::gather_rows(tape, params.tok_emb, tokens),
                    ops::gather_rows(tape, params.pos_emb, pos_ids));  // [B*3, d]

  ForwardOut out;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  auto split_heads = [&](const TensorPtr& t) {
    auto r = ops::reshape(tape, t, {batch, seq, heads, hd});
    auto pm = ops::permute(tape, r, {0, 2, 1, 3});  // [B, H, 3, hd]
    return ops::reshape(tape, pm, {batch * heads, seq, hd});
  };

  for (const auto& lp : params.layers) {
    auto q = split_heads(ops::matmul(tape, x, lp.wq));
    auto k = split_heads(ops::matmul(tape, x, lp.wk));
    auto v = split_heads(ops::matmul(tape, x, lp.wv));
    auto scores = ops::scale(tape, ops::bmm(tape, q, ops::permute(tape, k, {0, 2, 1})), att_scale);
    auto attn = ops::softmax(tape, scores, 2);  // [B*H, 3, 3]
    out.attention.push_back(attn);
    auto ctx = ops::bmm(tape, attn, v);  // [B*H, 3, hd]
    auto merged = ops::reshape(
        tape, ops::permute(tape, ops::reshape(tape, ctx, {batch, heads, seq, hd}), {0, 2, 1, 3}),
        {batch * seq, d});
    auto attn_out = ops::matmul(tape, merged, lp.wo);
    x = ops::layer_norm(tape, ops::add(tape, x, attn_out), lp.ln1_gain, lp.ln1_bias, kLayerNormEps);
    auto hidden = ops::relu(tape, ops::add_bias(tape, ops::matmul(tape, x, lp.w1), lp.b1));
    auto ff_out = ops::add_bias(tape, ops::matmul(tape, hidden, lp.w2), lp.b2);
    x = ops::layer_norm(tape, ops::add(tape, x, ff_out), lp.ln2_gain, lp.ln2_bias, kLayerNormEps);
  }

  // final-position representation feeds the classifier head
  std::vector<std::int32_t> readout(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) readout[static_cast<std::size_t>(b)] = b * seq + (seq - 1);
  out.phi = ops::gather_rows(tape, x, readout);
  out.logits = ops::add_bias(tape, ops::matmul(tape, out.phi, params.head_w), params.head_b);
  return out;
}

double evaluate(const ModelParams& params, const Dataset& data,
                std::span<const std::int32_t> indices) {
  return evaluate_collect_phi(params, data, indices, {}).accuracy;
}

SplitEval evaluate_collect_phi(const ModelParams& params, const Dataset& data,
                               std::span<const std::int32_t> indices,
                               std::span<const std::int32_t> phi_rows) {
  if (indices.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<char> want_phi(static_cast<std::size_t>(data.rows()), 0);
  for (auto r : phi_rows) want_phi.at(static_cast<std::size_t>(r)) = 1;

  SplitEval result;
  const int d = params.config.d_model;
  result.phi.reserve(phi_rows.size() * static_cast<std::size_t>(d));
  result.phi_labels.reserve(phi_rows.size());

  std::int64_t correct = 0;
  const auto n = static_cast<std::int64_t>(indices.size());
  std::vector<std::int32_t> tokens;
  for (std::int64_t start = 0; start < n; start += kEvalBatch) {
    const auto count = std::min<std::int64_t>(kEvalBatch, n - start);
    tokens.clear();
    for (std::int64_t i = 0; i < count; ++i) {
      const auto row = data.row(indices[static_cast<std::size_t>(start + i)]);
      tokens.insert(tokens.end(), row.begin(), row.end());
    }
    const auto fwd = forward(nullptr, params, tokens);
    const int classes = params.config.n_classes;
    for (std::int64_t i = 0; i < count; ++i) {
      const auto idx = indices[static_cast<std::size_t>(start + i)];
      const double* row = fwd.logits->data.data() + i * classes;
      int best = 0;
      for (int c = 1; c < classes; ++c) {
        if (row[c] > row[best]) best = c;
      }
      if (best == data.labels[static_cast<std::size_t>(idx)]) ++correct;
      if (want_phi[static_cast<std::size_t>(idx)]) {
        const double* ph = fwd.phi->data.data() + i * d;
        result.phi.insert(result.phi.end(), ph, ph + d);
        result.phi_labels.push_back(data.labels[static_cast<std::size_t>(idx)]);
      }
    }
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return result;
}

namespace {

constexpr char kCheckpointMagic[8] = {'G', 'L', 'C', 'P', '0', '0', '0', '1'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const auto& c = params.config;
  write_pod(out, static_cast<std::int32_t>(c.d_model));
  write_pod(out, static_cast<std::int32_t>(c.n_heads));
  write_pod(out, static_cast<std::int32_t>(c.n_layers));
  write_pod(out, static_cast<std::int32_t>(c.vocab_size));
  write_pod(out, static_cast<std::int32_t>(c.n_classes));
  write_pod(out, static_cast<std::int32_t>(c.ff_mult));
  write_pod(out, static_cast<std::uint64_t>(c.init_seed));
  const auto named = params.named();
  write_pod(out, static_cast<std::int32_t>(named.size()));
  for (const auto& np : named) {
    write_pod(out, static_cast<std::int32_t>(np.name.size()));
    out.write(np.name.data(), static_cast<std::streamsize>(np.name.size()));
    write_pod(out, static_cast<std::int32_t>(np.tensor->rank()));
    for (int dim : np.tensor->shape) write_pod(out, static_cast<std::int32_t>(dim));
    out.write(reinterpret_cast<const char*>(np.tensor->data.data()),
              static_cast<std::streamsize>(np.tensor->data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  ModelConfig cfg;
  cfg.d_model = read_pod<std::int32_t>(in);
  cfg.n_heads = read_pod<std::int32_t>(in);
  cfg.n_layers = read_pod<std::int32_t>(in);
  cfg.vocab_size = read_pod<std::int32_t>(in);
  cfg.n_classes = read_pod<std::int32_t>(in);
  cfg.ff_mult = read_pod<std::int32_t>(in);
  cfg.init_seed = read_pod<std::uint64_t>(in);
  ModelParams params = init_params(cfg);
  const auto named = params.named();
  const auto count = read_pod<std::int32_t>(in);
  if (count != static_cast<std::int32_t>(named.size())) {
    throw std::runtime_error("checkpoint: tensor count mismatch");
  }
  for (const auto& np : named) {
    const auto name_len = read_pod<std::int32_t>(in);
    std::string name(static_cast<std::size_t>(name_len), '\0');
    in.read(name.data(), name_len);
    if (name != np.name) throw std::runtime_error("checkpoint: expected " + np.name + ", found " + name);
    const auto rank = read_pod<std::int32_t>(in);
    if (rank != np.tensor->rank()) throw std::runtime_error("checkpoint: rank mismatch for " + name);
    for (int i = 0; i < rank; ++i) {
      if (read_pod<std::int32_t>(in) != np.tensor->dim(i)) {
        throw std::runtime_error("checkpoint: shape mismatch for " + name);
      }
    }
    in.read(reinterpret_cast<char*>(np.tensor->data.data()),
            static_cast<std::streamsize>(np.tensor->data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor " + name);
  }
  return params;
}

}  // namespace groklab
