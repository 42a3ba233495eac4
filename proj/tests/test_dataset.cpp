#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "groklab/dataset.hpp"

using namespace groklab;

TEST_CASE("mod_inverse small cases") {
  CHECK(mod_inverse(2, 5) == 3);
  CHECK(mod_inverse(1, 97) == 1);
  CHECK_THROWS_AS(mod_inverse(0, 5), std::invalid_argument);
  CHECK_THROWS_AS(mod_inverse(5, 5), std::invalid_argument);
  CHECK_THROWS_AS(mod_inverse(2, 6), std::invalid_argument);
}

TEST_CASE("mod_inverse exhaustive for p in {5, 97}") {
  for (int p : {5, 97}) {
    for (int b = 1; b < p; ++b) {
      CHECK(static_cast<std::int64_t>(b) * mod_inverse(b, p) % p == 1);
    }
  }
}

TEST_CASE("is_prime trial division") {
  CHECK(is_prime(2));
  CHECK(is_prime(97));
  CHECK(is_prime(113));
  CHECK_FALSE(is_prime(1));
  CHECK_FALSE(is_prime(91));  // 7 * 13
}

TEST_CASE("modular datasets: labels, counts, tokens") {
  TaskSpec add{TaskOp::add, 5, 0.4, 1};
  const auto da = generate_modular(add);
  CHECK(da.rows() == 25);
  CHECK(da.vocab_size == 6);
  CHECK(da.n_classes == 5);
  // (a,b) lexicographic: pair (3,4) sits at row 3*5+4
  CHECK(da.labels[3 * 5 + 4] == 2);
  CHECK(da.row(3 * 5 + 4)[0] == 3);
  CHECK(da.row(3 * 5 + 4)[1] == 4);
  CHECK(da.row(3 * 5 + 4)[2] == 5);  // EQ token

  TaskSpec div{TaskOp::div, 5, 0.4, 1};
  const auto dd = generate_modular(div);
  CHECK(dd.rows() == 20);  // b = 0 excluded
  // (4,2): 4 * inv(2) = 4 * 3 = 12 = 2 mod 5; row index 4*4 + (2-1)
  CHECK(dd.labels[4 * 4 + 1] == 2);
  for (std::int64_t r = 0; r < dd.rows(); ++r) CHECK(dd.row(r)[1] != 0);

  TaskSpec mul97{TaskOp::mul, 97, 0.3, 0};
  const auto dm = generate_modular(mul97);
  CHECK(dm.rows() == 9409);
  TaskSpec div97{TaskOp::div, 97, 0.3, 0};
  CHECK(generate_modular(div97).rows() == 9312);
}

TEST_CASE("split sizes follow round(f * total)") {
  TaskSpec spec{TaskOp::mul, 97, 0.3, 123};
  const auto data = generate_modular(spec);
  CHECK(data.train_idx.size() == 2823);  // round(0.3 * 9409)
  CHECK(data.test_idx.size() == 6586);
}

TEST_CASE("split is reproducible, disjoint, and covering") {
  TaskSpec spec{TaskOp::add, 13, 0.37, 99};
  const auto d1 = generate_modular(spec);
  const auto d2 = generate_modular(spec);
  CHECK(d1.train_idx == d2.train_idx);
  CHECK(d1.test_idx == d2.test_idx);

  TaskSpec other = spec;
  other.split_seed = 100;
  CHECK(generate_modular(other).train_idx != d1.train_idx);

  std::vector<std::int32_t> all(d1.train_idx);
  all.insert(all.end(), d1.test_idx.begin(), d1.test_idx.end());
  std::sort(all.begin(), all.end());
  std::vector<std::int32_t> expect(static_cast<std::size_t>(d1.rows()));
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);
}

TEST_CASE("labels and tokens stay in range") {
  for (TaskOp op : {TaskOp::add, TaskOp::mul, TaskOp::div}) {
    TaskSpec spec{op, 11, 0.5, 7};
    const auto data = generate_modular(spec);
    for (std::int64_t r = 0; r < data.rows(); ++r) {
      CHECK(data.labels[static_cast<std::size_t>(r)] >= 0);
      CHECK(data.labels[static_cast<std::size_t>(r)] < data.n_classes);
      for (auto tok : data.row(r)) {
        CHECK(tok >= 0);
        CHECK(tok < data.vocab_size);
      }
    }
  }
}

TEST_CASE("TaskSpec validation") {
  CHECK_THROWS_AS((TaskSpec{TaskOp::add, 9, 0.3, 0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((TaskSpec{TaskOp::add, 7, 0.0, 0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((TaskSpec{TaskOp::add, 7, 1.0, 0}.validate()), std::invalid_argument);
  CHECK_NOTHROW((TaskSpec{TaskOp::s5, 4, 0.3, 0}.validate()));  // modulus ignored for s5
}

TEST_CASE("permutation rank and unrank are inverse bijections") {
  for (int r = 0; r < 120; ++r) {
    const auto perm = unrank_permutation(r, 5);
    CHECK(rank_permutation(perm) == r);
  }
  CHECK(unrank_permutation(0, 5) == std::vector<int>{0, 1, 2, 3, 4});
  CHECK_THROWS_AS(unrank_permutation(120, 5), std::invalid_argument);
}

TEST_CASE("S3 composition table matches brute-force oracle") {
  // independent oracle: enumerate S3 with std::next_permutation and compose by
  // direct function application
  std::vector<std::vector<int>> s3;
  std::vector<int> base = {0, 1, 2};
  do {
    s3.push_back(base);
  } while (std::next_permutation(base.begin(), base.end()));
  auto oracle_rank = [&s3](const std::vector<int>& p) {
    for (std::size_t i = 0; i < s3.size(); ++i) {
      if (s3[i] == p) return static_cast<int>(i);
    }
    return -1;
  };
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      std::vector<int> expect(3);
      for (int x = 0; x < 3; ++x) expect[static_cast<std::size_t>(x)] = s3[j][s3[i][x]];
      const auto got = compose_permutations(unrank_permutation(j, 3), unrank_permutation(i, 3));
      CHECK(rank_permutation(got) == oracle_rank(expect));
    }
  }
}

TEST_CASE("S5 dataset group laws") {
  TaskSpec spec{TaskOp::s5, 0, 0.3, 5};
  const auto data = generate_s5(spec);
  CHECK(data.rows() == 14400);
  CHECK(data.vocab_size == 121);
  CHECK(data.n_classes == 120);

  // identity law: (id, sigma) -> rank(sigma)
  for (int j : {0, 1, 17, 119}) CHECK(data.labels[static_cast<std::size_t>(j)] == j);

  // inverse law: (sigma, sigma^-1) -> identity rank 0
  for (int i : {3, 42, 87}) {
    const auto sigma = unrank_permutation(i, 5);
    std::vector<int> inv(5);
    for (int x = 0; x < 5; ++x) inv[static_cast<std::size_t>(sigma[static_cast<std::size_t>(x)])] = x;
    const int j = rank_permutation(inv);
    CHECK(data.labels[static_cast<std::size_t>(i * 120 + j)] == 0);
  }

  // associativity on sampled triples
  RandomStream rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = unrank_permutation(static_cast<int>(rng.below(120)), 5);
    const auto b = unrank_permutation(static_cast<int>(rng.below(120)), 5);
    const auto c = unrank_permutation(static_cast<int>(rng.below(120)), 5);
    const auto left = compose_permutations(compose_permutations(c, b), a);
    const auto right = compose_permutations(c, compose_permutations(b, a));
    CHECK(left == right);
  }
}

TEST_CASE("sample_batch basics") {
  TaskSpec spec{TaskOp::mul, 13, 0.5, 3};
  const auto data = generate_modular(spec);
  RandomStream rng(1);
  const auto batch = sample_batch(data, data.train_idx, 512, rng);
  CHECK(batch.labels.size() == 512);
  CHECK(batch.tokens.size() == 3 * 512);

  std::vector<std::int32_t> single = {data.train_idx[0]};
  RandomStream rng2(2);
  const auto rep = sample_batch(data, single, 8, rng2);
  for (int i = 0; i < 8; ++i) {
    CHECK(rep.labels[static_cast<std::size_t>(i)] == rep.labels[0]);
    CHECK(rep.tokens[static_cast<std::size_t>(3 * i)] == rep.tokens[0]);
  }

  std::vector<std::int32_t> empty;
  RandomStream rng3(3);
  CHECK_THROWS_AS(sample_batch(data, empty, 4, rng3), std::invalid_argument);
  CHECK_THROWS_AS(sample_batch(data, single, 0, rng3), std::invalid_argument);
}

TEST_CASE("sample_batch draws are uniform (chi-square)") {
  TaskSpec spec{TaskOp::add, 7, 0.5, 11};
  const auto data = generate_modular(spec);
  // 25 train rows for p=7 at f=0.5 (round half away from zero)
  const auto split = data.train_idx;
  const auto cells = split.size();
  std::vector<std::int64_t> counts(static_cast<std::size_t>(data.rows()), 0);
  RandomStream rng(424242);
  const int draws = 1000000;
  const int per_batch = 1000;
  for (int i = 0; i < draws / per_batch; ++i) {
    const auto batch = sample_batch(data, split, per_batch, rng);
    for (int j = 0; j < per_batch; ++j) {
      const auto a = batch.tokens[static_cast<std::size_t>(3 * j)];
      const auto b = batch.tokens[static_cast<std::size_t>(3 * j + 1)];
      ++counts[static_cast<std::size_t>(a * 7 + b)];
    }
  }
  const double expected = static_cast<double>(draws) / static_cast<double>(cells);
  double chi2 = 0.0;
  std::size_t nonzero_cells = 0;
  for (auto idx : split) {
    const double diff = static_cast<double>(counts[static_cast<std::size_t>(idx)]) - expected;
    chi2 += diff * diff / expected;
    ++nonzero_cells;
  }
  CHECK(nonzero_cells == cells);
  // df = 24; 0.9987 quantile (3-sigma equivalent) is ~50.3
  CHECK(chi2 < 50.3);
  // rows outside the split are never drawn
  std::set<std::int32_t> train_set(split.begin(), split.end());
  for (std::int64_t r = 0; r < data.rows(); ++r) {
    if (!train_set.count(static_cast<std::int32_t>(r))) CHECK(counts[static_cast<std::size_t>(r)] == 0);
  }
}

TEST_CASE("dataset dump has one row per pair") {
  TaskSpec spec{TaskOp::add, 5, 0.4, 1};
  const auto data = generate_modular(spec);
  const auto path = std::string("dump_test.csv");
  dump_dataset_csv(data, path);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 26);  // header + 25 pairs
}
