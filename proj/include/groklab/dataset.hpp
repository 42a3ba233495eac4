#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "groklab/rng.hpp"

namespace groklab {

enum class TaskOp { add, mul, div, s5 };

TaskOp task_op_from_string(const std::string& name);
std::string to_string(TaskOp op);

struct TaskSpec {
  TaskOp operation = TaskOp::mul;
  int modulus = 97;              // ignored for s5
  double train_fraction = 0.3;
  std::uint64_t split_seed = 0;

  void validate() const;  // prime modulus (trial division), fraction in (0,1)
};

// Tokenized task instances: every row is the 3-token sequence [a, b, EQ] with a
// class label, plus a disjoint train/test partition over all rows.
struct Dataset {
  std::vector<std::int32_t> tokens;  // 3 per row
  std::vector<std::int32_t> labels;
  std::vector<std::int32_t> train_idx;
  std::vector<std::int32_t> test_idx;
  int vocab_size = 0;   // EQ token id is vocab_size - 1
  int n_classes = 0;

  std::int64_t rows() const { return static_cast<std::int64_t>(labels.size()); }
  std::span<const std::int32_t> row(std::int64_t r) const {
    return {tokens.data() + r * 3, 3};
  }
  int eq_token() const { return vocab_size - 1; }
};

bool is_prime(int n);

// b^(p-2) mod p via fast exponentiation (Fermat). Errors on b = 0 or composite p.
int mod_inverse(int b, int p);

Dataset generate_modular(const TaskSpec& spec);
Dataset generate_s5(const TaskSpec& spec);
Dataset generate_dataset(const TaskSpec& spec);  // dispatch on spec.operation

struct Batch {
  std::vector<std::int32_t> tokens;  // batch_size x 3
  std::vector<std::int32_t> labels;
};

// batch_size indices drawn i.i.d. uniform with replacement from `split`.
Batch sample_batch(const Dataset& data, std::span<const std::int32_t> split, int batch_size,
                   RandomStream& rng);

// Audit dump: columns a,b,label,split.
void dump_dataset_csv(const Dataset& data, const std::string& path);

// Permutations in one-line notation, indexed by lexicographic rank.
std::vector<int> unrank_permutation(int rank, int n);
int rank_permutation(std::span<const int> perm);
// (f compose g)(x) = f(g(x)): g applies first.
std::vector<int> compose_permutations(std::span<const int> f, std::span<const int> g);

}  // namespace groklab
