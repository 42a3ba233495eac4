#include "groklab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace groklab {

namespace {

constexpr int kSeqLen = 3;

// Uniform split of size round(f * total) drawn with the split seed; both index
// lists are kept sorted so iteration order is deterministic.
void make_split(Dataset& data, double fraction, std::uint64_t split_seed) {
  const auto total = static_cast<std::int64_t>(data.labels.size());
  const auto train_size = static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(total)));
  std::vector<std::int32_t> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  RandomStream rng(split_seed);
  for (std::int64_t i = total - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  data.train_idx.assign(order.begin(), order.begin() + train_size);
  data.test_idx.assign(order.begin() + train_size, order.end());
  std::sort(data.train_idx.begin(), data.train_idx.end());
  std::sort(data.test_idx.begin(), data.test_idx.end());
}

void push_row(Dataset& data, int a, int b, int label) {
  data.tokens.push_back(static_cast<std::int32_t>(a));
  data.tokens.push_back(static_cast<std::int32_t>(b));
  data.tokens.push_back(static_cast<std::int32_t>(data.vocab_size - 1));
  data.labels.push_back(static_cast<std::int32_t>(label));
}

}  // namespace

TaskOp task_op_from_string(const std::string& name) {
  if (name == "add") return TaskOp::add;
  if (name == "mul") return TaskOp::mul;
  if (name == "div") return TaskOp::div;
  if (name == "s5") return TaskOp::s5;
  throw std::invalid_argument("unknown task operation: " + name);
}

std::string to_string(TaskOp op) {
  switch (op) {
    case TaskOp::add: return "add";
    case TaskOp::mul: return "mul";
    case TaskOp::div: return "div";
    case TaskOp::s5: return "s5";
  }
  return "?";
}

void TaskSpec::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("train_fraction must lie in (0, 1)");
  }
  if (operation != TaskOp::s5 && !is_prime(modulus)) {
    throw std::invalid_argument("modulus must be prime, got " + std::to_string(modulus));
  }
}

bool is_prime(int n) {
  if (n < 2) return false;
  for (int d = 2; static_cast<std::int64_t>(d) * d <= n; ++d) {
    if (n % d == 0) return false;
  }
  return true;
}

int mod_inverse(int b, int p) {
  if (!is_prime(p)) throw std::invalid_argument("mod_inverse: p must be prime");
  if (b <= 0 || b >= p) throw std::invalid_argument("mod_inverse: b must be a nonzero residue");
  std::int64_t base = b, result = 1;
  int exp = p - 2;
  while (exp > 0) {
    if (exp & 1) result = result * base % p;
    base = base * base % p;
    exp >>= 1;
  }
  return static_cast<int>(result);
}

Dataset generate_modular(const TaskSpec& spec) {
  spec.validate();
  if (spec.operation == TaskOp::s5) {
    throw std::invalid_argument("generate_modular: operation must be add, mul, or div");
  }
  const int p = spec.modulus;
  Dataset data;
  data.vocab_size = p + 1;
  data.n_classes = p;
  // pair enumeration is (a, b) lexicographic; division skips b = 0
  for (int a = 0; a < p; ++a) {
    const int b_start = spec.operation == TaskOp::div ? 1 : 0;
    for (int b = b_start; b < p; ++b) {
      int label = 0;
      switch (spec.operation) {
        case TaskOp::add: label = (a + b) % p; break;
        case TaskOp::mul: label = static_cast<int>(static_cast<std::int64_t>(a) * b % p); break;
        case TaskOp::div:
          label = static_cast<int>(static_cast<std::int64_t>(a) * mod_inverse(b, p) % p);
          break;
        case TaskOp::s5: break;
      }
      push_row(data, a, b, label);
    }
  }
  make_split(data, spec.train_fraction, spec.split_seed);
  return data;
}

Dataset generate_s5(const TaskSpec& spec) {
  spec.validate();
  if (spec.operation != TaskOp::s5) {
    throw std::invalid_argument("generate_s5: operation must be s5");
  }
  constexpr int kOrder = 120;
  std::vector<std::vector<int>> perms;
  perms.reserve(kOrder);
  for (int r = 0; r < kOrder; ++r) perms.push_back(unrank_permutation(r, 5));
  Dataset data;
  data.vocab_size = kOrder + 1;
  data.n_classes = kOrder;
  for (int i = 0; i < kOrder; ++i) {
    for (int j = 0; j < kOrder; ++j) {
      // label = rank of (sigma_j compose sigma_i); sigma_i applies first
      const auto composed = compose_permutations(perms[static_cast<std::size_t>(j)],
                                                 perms[static_cast<std::size_t>(i)]);
      push_row(data, i, j, rank_permutation(composed));
    }
  }
  make_split(data, spec.train_fraction, spec.split_seed);
  return data;
}

Dataset generate_dataset(const TaskSpec& spec) {
  return spec.operation == TaskOp::s5 ? generate_s5(spec) : generate_modular(spec);
}

Batch sample_batch(const Dataset& data, std::span<const std::int32_t> split, int batch_size,
                   RandomStream& rng) {
  if (batch_size < 1) throw std::invalid_argument("sample_batch: batch_size must be >= 1");
  if (split.empty()) throw std::invalid_argument("sample_batch: empty split");
  Batch batch;
  batch.tokens.reserve(static_cast<std::size_t>(batch_size) * kSeqLen);
  batch.labels.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    const auto pick = split[static_cast<std::size_t>(rng.below(split.size()))];
    const auto row = data.row(pick);
    batch.tokens.insert(batch.tokens.end(), row.begin(), row.end());
    batch.labels.push_back(data.labels[static_cast<std::size_t>(pick)]);
  }
  return batch;
}

void dump_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "a,b,label,split\n";
  std::vector<char> in_train(static_cast<std::size_t>(data.rows()), 0);
  for (auto i : data.train_idx) in_train[static_cast<std::size_t>(i)] = 1;
  for (std::int64_t r = 0; r < data.rows(); ++r) {
    const auto row = data.row(r);
    out << row[0] << ',' << row[1] << ',' << data.labels[static_cast<std::size_t>(r)] << ','
        << (in_train[static_cast<std::size_t>(r)] ? "train" : "test") << '\n';
  }
}

std::vector<int> unrank_permutation(int rank, int n) {
  std::int64_t fact = 1;
  for (int i = 2; i <= n; ++i) fact *= i;
  if (rank < 0 || rank >= fact) throw std::invalid_argument("unrank_permutation: rank out of range");
  std::vector<int> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<int> perm;
  perm.reserve(static_cast<std::size_t>(n));
  std::int64_t rem = rank;
  for (int i = n; i >= 1; --i) {
    fact /= i;
    const auto k = static_cast<std::size_t>(rem / fact);
    rem %= fact;
    perm.push_back(pool[k]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return perm;
}

int rank_permutation(std::span<const int> perm) {
  const int n = static_cast<int>(perm.size());
  std::int64_t fact = 1;
  for (int i = 2; i < n; ++i) fact *= i;  // (n-1)!
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  std::int64_t rank = 0;
  for (int i = 0; i < n; ++i) {
    const int v = perm[static_cast<std::size_t>(i)];
    if (v < 0 || v >= n || used[static_cast<std::size_t>(v)]) {
      throw std::invalid_argument("rank_permutation: not a permutation");
    }
    int smaller = 0;
    for (int u = 0; u < v; ++u) {
      if (!used[static_cast<std::size_t>(u)]) ++smaller;
    }
    used[static_cast<std::size_t>(v)] = true;
    rank += smaller * fact;
    if (i + 1 < n) fact /= (n - 1 - i);
  }
  return static_cast<int>(rank);
}

std::vector<int> compose_permutations(std::span<const int> f, std::span<const int> g) {
  if (f.size() != g.size()) throw std::invalid_argument("compose_permutations: size mismatch");
  std::vector<int> out(f.size());
  for (std::size_t x = 0; x < g.size(); ++x) {
    out[x] = f[static_cast<std::size_t>(g[x])];
  }
  return out;
}

}  // namespace groklab
