#include "groklab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "groklab/rng.hpp"

namespace groklab {

IldrResult ildr(const EmbeddingBatch& batch, double eps) {
  const std::int64_t n = batch.size();
  const int d = batch.dim;
  if (n == 0) throw std::invalid_argument("ildr: empty batch");
  if (static_cast<std::int64_t>(batch.phi.size()) != n * d) {
    throw std::invalid_argument("ildr: phi size does not match labels and dim");
  }

  // class -> member rows, keyed in sorted label order
  std::map<std::int32_t, std::vector<std::int64_t>> members;
  for (std::int64_t i = 0; i < n; ++i) members[batch.labels[static_cast<std::size_t>(i)]].push_back(i);
  const auto n_classes = static_cast<std::int64_t>(members.size());
  if (n_classes < 2) throw std::invalid_argument("ildr: need at least 2 distinct classes");

  std::vector<double> centroids(static_cast<std::size_t>(n_classes * d), 0.0);
  std::vector<double> msd(static_cast<std::size_t>(n_classes), 0.0);
  std::int64_t c = 0;
  for (const auto& [label, rows] : members) {
    double* mu = centroids.data() + c * d;
    for (const auto i : rows) {
      const double* row = batch.phi.data() + i * d;
      for (int j = 0; j < d; ++j) mu[j] += row[j];
    }
    const auto count = static_cast<double>(rows.size());
    for (int j = 0; j < d; ++j) mu[j] /= count;
    double acc = 0.0;
    for (const auto i : rows) {
      const double* row = batch.phi.data() + i * d;
      for (int j = 0; j < d; ++j) {
        const double diff = row[j] - mu[j];
        acc += diff * diff;
      }
    }
    msd[static_cast<std::size_t>(c)] = acc / count;
    ++c;
  }

  IldrResult r;
  r.intra = std::accumulate(msd.begin(), msd.end(), 0.0) / static_cast<double>(n_classes);
  double inter_acc = 0.0;
  for (std::int64_t a = 0; a < n_classes; ++a) {
    const double* mu_a = centroids.data() + a * d;
    for (std::int64_t b = a + 1; b < n_classes; ++b) {
      const double* mu_b = centroids.data() + b * d;
      double dist = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = mu_a[j] - mu_b[j];
        dist += diff * diff;
      }
      inter_acc += dist;
    }
  }
  r.inter = inter_acc / (static_cast<double>(n_classes) * static_cast<double>(n_classes - 1) / 2.0);
  r.ildr = r.inter / (r.intra + eps);
  return r;
}

std::vector<std::int32_t> subsample(std::span<const std::int32_t> test_split, int n_max,
                                    std::uint64_t metric_seed) {
  if (test_split.empty()) throw std::invalid_argument("subsample: empty test split");
  std::vector<std::int32_t> out(test_split.begin(), test_split.end());
  if (static_cast<int>(out.size()) > n_max) {
    RandomStream rng(metric_seed);
    // partial Fisher-Yates: the first n_max slots become the sample
    for (int i = 0; i < n_max; ++i) {
      const auto j = i + static_cast<std::int64_t>(rng.below(out.size() - static_cast<std::size_t>(i)));
      std::swap(out[static_cast<std::size_t>(i)], out[static_cast<std::size_t>(j)]);
    }
    out.resize(static_cast<std::size_t>(n_max));
  }
  std::sort(out.begin(), out.end());
  return out;
}

double weight_norm(std::span<const TensorPtr> params) {
  double total = 0.0;
  for (const auto& t : params) {
    double sq = 0.0;
    for (double v : t->data) sq += v * v;
    total += std::sqrt(sq);
  }
  return total;
}

GrokfastEma::GrokfastEma(std::vector<TensorPtr> params, double alpha)
    : alpha_(alpha), params_(std::move(params)) {
  ema_.reserve(params_.size());
  for (const auto& t : params_) ema_.emplace_back(t->data.size(), 0.0);
}

double GrokfastEma::update() {
  double sq = 0.0;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto& g = params_[k]->grad;
    auto& e = ema_[k];
    if (g.size() != e.size()) {
      throw std::invalid_argument("GrokfastEma::update: gradient shape drift");
    }
    for (std::size_t i = 0; i < e.size(); ++i) {
      e[i] = alpha_ * e[i] + (1.0 - alpha_) * g[i];
      sq += e[i] * e[i];
    }
  }
  magnitude_ = std::sqrt(sq);
  return magnitude_;
}

std::vector<double> jacobi_eigenvalues(std::vector<double> a, int n, double tol) {
  if (n <= 0 || static_cast<std::size_t>(n) * static_cast<std::size_t>(n) != a.size()) {
    throw std::invalid_argument("jacobi_eigenvalues: bad matrix size");
  }
  auto at = [&a, n](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
  double frob = 0.0;
  for (double v : a) frob += v * v;
  frob = std::sqrt(frob);
  if (frob == 0.0) return std::vector<double>(static_cast<std::size_t>(n), 0.0);

  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) off += 2.0 * at(i, j) * at(i, j);
    }
    if (std::sqrt(off) <= tol * frob) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double app = at(p, p), aqq = at(q, q);
        at(p, p) = app - t * apq;
        at(q, q) = aqq + t * apq;
        at(p, q) = 0.0;
        at(q, p) = 0.0;
        for (int i = 0; i < n; ++i) {
          if (i == p || i == q) continue;
          const double aip = at(i, p), aiq = at(i, q);
          at(i, p) = c * aip - s * aiq;
          at(p, i) = at(i, p);
          at(i, q) = s * aip + c * aiq;
          at(q, i) = at(i, q);
        }
      }
    }
  }
  std::vector<double> eig(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) eig[static_cast<std::size_t>(i)] = at(i, i);
  std::sort(eig.rbegin(), eig.rend());
  return eig;
}

std::vector<double> singular_values(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("singular_values: rank-2 tensor expected");
  const int rows = a.dim(0), cols = a.dim(1);
  std::vector<double> gram(static_cast<std::size_t>(cols) * cols, 0.0);
  for (int r = 0; r < rows; ++r) {
    const double* row = a.data.data() + static_cast<std::int64_t>(r) * cols;
    for (int i = 0; i < cols; ++i) {
      const double ri = row[i];
      if (ri == 0.0) continue;
      for (int j = i; j < cols; ++j) gram[static_cast<std::size_t>(i) * cols + j] += ri * row[j];
    }
  }
  for (int i = 0; i < cols; ++i) {
    for (int j = 0; j < i; ++j) {
      gram[static_cast<std::size_t>(i) * cols + j] = gram[static_cast<std::size_t>(j) * cols + i];
    }
  }
  auto eig = jacobi_eigenvalues(std::move(gram), cols);
  for (auto& v : eig) v = std::sqrt(std::max(0.0, v));
  return eig;
}

double spectral_entropy_of(const Tensor& a) {
  auto sv = singular_values(a);
  if (sv.empty() || sv.front() <= 0.0) return 0.0;
  // the Gram route cannot resolve singular values below sqrt(eps) * sigma_max;
  // anything smaller is numerical residue of an exact zero
  const double floor = 1.5e-8 * sv.front();
  double total = 0.0;
  for (auto& s : sv) {
    if (s < floor) s = 0.0;
    total += s;
  }
  double h = 0.0;
  for (double s : sv) {
    if (s <= 0.0) continue;
    const double p = s / total;
    h -= p * std::log(p);
  }
  return h;
}

double spectral_entropy(const ModelParams& params) {
  if (params.layers.empty()) throw std::invalid_argument("spectral_entropy: model has no layers");
  return spectral_entropy_of(*params.tok_emb) + spectral_entropy_of(*params.layers[0].wq);
}

}  // namespace groklab
