#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace groklab {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense float64 tensor, row-major contiguous storage. grad, when allocated,
// has the same element count as data.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  static TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
  static TensorPtr from(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
  static TensorPtr scalar(double value);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  void ensure_grad();  // allocate a zero gradient buffer if missing
  void zero_grad();
};

// Element count implied by a shape; throws on non-positive dimensions.
std::int64_t shape_numel(std::span<const int> shape);

// Worker threads used inside large matrix products. Results are bit-identical
// for any setting: work is split into fixed-size row chunks and every output
// row is produced by exactly one thread.
void set_compute_threads(int n);
int compute_threads();

// Reverse-mode tape, rebuilt per forward pass. Operations append themselves in
// execution order, which is a topological order of the dataflow graph;
// backward() replays the closures in reverse.
class Tape {
 public:
  void record(TensorPtr out, std::function<void()> backward_fn);

  // Populates grad for every tensor reachable from loss. Interior gradients
  // are reset on entry; leaf gradients accumulate across calls.
  void backward(const TensorPtr& loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    TensorPtr out;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
};

namespace ops {

// tape may be null: forward-only evaluation, nothing is recorded.

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b);  // [m,k]x[k,n]
TensorPtr bmm(Tape* tape, const TensorPtr& a, const TensorPtr& b);     // [n,p,q]x[n,q,r]
TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr add_bias(Tape* tape, const TensorPtr& a, const TensorPtr& bias);  // [..,n] + [n]
TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape* tape, const TensorPtr& a, double c);
TensorPtr relu(Tape* tape, const TensorPtr& a);

// Max-subtracted softmax along `axis`; rows sum to 1 for all finite inputs.
TensorPtr softmax(Tape* tape, const TensorPtr& a, int axis);

// Normalization over the last axis with population variance, then affine.
TensorPtr layer_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gain,
                     const TensorPtr& bias, double eps);

// out[i] = table[ids[i]]; backward scatter-adds into the table gradient.
TensorPtr gather_rows(Tape* tape, const TensorPtr& table, std::span<const std::int32_t> ids);

TensorPtr reshape(Tape* tape, const TensorPtr& a, std::vector<int> new_shape);
TensorPtr permute(Tape* tape, const TensorPtr& a, std::vector<int> axes);

// Mean negative log-softmax of the true class over the batch; scalar output.
TensorPtr cross_entropy(Tape* tape, const TensorPtr& logits, std::span<const std::int32_t> labels);

TensorPtr sum(Tape* tape, const TensorPtr& a);

}  // namespace ops
}  // namespace groklab
