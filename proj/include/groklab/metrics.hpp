#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "groklab/model.hpp"
#include "groklab/tensor.hpp"

namespace groklab {

// Held-out representations for the geometry metric.
struct EmbeddingBatch {
  std::vector<double> phi;  // row-major [n, dim]
  std::vector<std::int32_t> labels;
  int dim = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

struct IldrResult {
  double ildr = 0.0;
  double inter = 0.0;  // mean squared distance over unordered centroid pairs
  double intra = 0.0;  // mean over classes of mean squared distance to own centroid
};

// Inter/Intra-class distance ratio of the embeddings. Classes absent from the
// batch are omitted from both sums; intra averages per class first, then over
// classes, so unequal class counts do not reweight the scatter.
IldrResult ildr(const EmbeddingBatch& batch, double eps = 1e-8);

// Stable metric subsample: everything if the split fits, otherwise n_max
// indices uniform without replacement. Drawn once per run and reused at every
// checkpoint. Returned sorted.
std::vector<std::int32_t> subsample(std::span<const std::int32_t> test_split, int n_max,
                                    std::uint64_t metric_seed);

// Sum of per-tensor L2 norms, every parameter included.
double weight_norm(std::span<const TensorPtr> params);

// Passive gradient EMA (decay 0.99). Buffers start at zero; update() reads the
// current gradients without modifying them and returns the L2 magnitude of the
// concatenated EMA.
class GrokfastEma {
 public:
  explicit GrokfastEma(std::vector<TensorPtr> params, double alpha = 0.99);

  double update();
  double magnitude() const { return magnitude_; }

 private:
  double alpha_;
  std::vector<TensorPtr> params_;
  std::vector<std::vector<double>> ema_;
  double magnitude_ = 0.0;
};

// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations; descending.
std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n, double tol = 1e-10);

// Singular values of a rank-2 tensor via Jacobi on A^T A; descending.
std::vector<double> singular_values(const Tensor& a);

// Shannon entropy of the normalized singular-value distribution. A zero matrix
// has entropy 0.
double spectral_entropy_of(const Tensor& a);

// Diagnostic over the first two weight matrices in registration order (token
// embedding and the first layer's Q projection); returns the sum.
double spectral_entropy(const ModelParams& params);

// One checkpoint row of the run log.
struct MetricSnapshot {
  int step = 0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double ildr = 0.0;
  double inter = 0.0;
  double intra = 0.0;
  double weight_norm = 0.0;
  double grokfast_norm = 0.0;
  double spectral_entropy = 0.0;
  double lr = 0.0;
  double wd = 0.0;
};

}  // namespace groklab
