#include "groklab/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace groklab {

AdamW::AdamW(const std::vector<NamedParam>& params, Hyper hyper) : hyper_(hyper) {
  if (hyper_.lr <= 0.0 || hyper_.weight_decay < 0.0) {
    throw std::invalid_argument("AdamW: lr must be positive and weight_decay non-negative");
  }
  slots_.reserve(params.size());
  for (const auto& np : params) {
    Slot s;
    s.param = np.tensor;
    s.decay = np.decay;
    s.m.assign(np.tensor->data.size(), 0.0);
    s.v.assign(np.tensor->data.size(), 0.0);
    slots_.push_back(std::move(s));
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    auto& theta = s.param->data;
    const auto& g = s.param->grad;
    if (g.size() != theta.size()) {
      throw std::invalid_argument("AdamW::step: gradient missing or shape mismatch");
    }
    const double lambda = s.decay ? hyper_.weight_decay : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      s.m[i] = hyper_.beta1 * s.m[i] + (1.0 - hyper_.beta1) * g[i];
      s.v[i] = hyper_.beta2 * s.v[i] + (1.0 - hyper_.beta2) * g[i] * g[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      theta[i] -= hyper_.lr * (mhat / (std::sqrt(vhat) + hyper_.eps) + lambda * theta[i]);
    }
  }
}

void AdamW::set_hyperparams(std::optional<double> lr, std::optional<double> weight_decay) {
  if (lr && *lr <= 0.0) throw std::invalid_argument("set_hyperparams: lr must be positive");
  if (weight_decay && *weight_decay < 0.0) {
    throw std::invalid_argument("set_hyperparams: weight_decay must be non-negative");
  }
  if (lr) hyper_.lr = *lr;
  if (weight_decay) hyper_.weight_decay = *weight_decay;
}

}  // namespace groklab
