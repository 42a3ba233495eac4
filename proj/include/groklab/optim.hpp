#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "groklab/model.hpp"

namespace groklab {

// AdamW with decoupled weight decay. The decay term applies only to parameters
// registered with decay=true (matrices of rank >= 2); biases and layer-norm
// affines follow plain Adam. Hyperparameters are mutable at runtime without
// touching the moment buffers, which is what intervention experiments rely on.
struct AdamWHyper {
  double lr = 1e-3;
  double weight_decay = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamW {
 public:
  using Hyper = AdamWHyper;

  explicit AdamW(const std::vector<NamedParam>& params, Hyper hyper = {});

  // One update from the gradients currently stored on the parameters.
  void step();

  // lr must stay positive; weight decay may be zero. Moments are untouched.
  void set_hyperparams(std::optional<double> lr, std::optional<double> weight_decay);

  double lr() const { return hyper_.lr; }
  double weight_decay() const { return hyper_.weight_decay; }
  std::int64_t step_count() const { return t_; }

 private:
  struct Slot {
    TensorPtr param;
    bool decay;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  Hyper hyper_;
  std::int64_t t_ = 0;
};

}  // namespace groklab
