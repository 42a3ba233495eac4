#include "groklab/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>
#include <thread>

namespace groklab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::atomic<int> g_threads{1};

// Fixed chunk size: the set of per-chunk products is independent of the thread
// count, so results are bit-identical no matter how the chunks are scheduled.
constexpr std::int64_t kRowChunk = 256;

void run_chunks(std::int64_t n_chunks, const std::function<void(std::int64_t)>& fn) {
  const int threads = std::min<std::int64_t>(g_threads.load(), n_chunks);
  if (threads <= 1) {
    for (std::int64_t c = 0; c < n_chunks; ++c) fn(c);
    return;
  }
  std::atomic<std::int64_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::int64_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      fn(c);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads - 1));
  for (int i = 0; i < threads - 1; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

// c[m,n] (+)= a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool add_into) {
  const std::int64_t n_chunks = (m + kRowChunk - 1) / kRowChunk;
  run_chunks(n_chunks, [&](std::int64_t ci) {
    const std::int64_t r0 = ci * kRowChunk;
    const std::int64_t rows = std::min(kRowChunk, m - r0);
    ConstMatMap am(a + r0 * k, rows, k);
    ConstMatMap bm(b, k, n);
    MatMap cm(c + r0 * n, rows, n);
    if (add_into) {
      cm.noalias() += am * bm;
    } else {
      cm.noalias() = am * bm;
    }
  });
}

// da[m,k] += dc[m,n] * b[k,n]^T
void gemm_nt(const double* dc, const double* b, double* da, std::int64_t m, std::int64_t n,
             std::int64_t k) {
  const std::int64_t n_chunks = (m + kRowChunk - 1) / kRowChunk;
  run_chunks(n_chunks, [&](std::int64_t ci) {
    const std::int64_t r0 = ci * kRowChunk;
    const std::int64_t rows = std::min(kRowChunk, m - r0);
    ConstMatMap dcm(dc + r0 * n, rows, n);
    ConstMatMap bm(b, k, n);
    MatMap dam(da + r0 * k, rows, k);
    dam.noalias() += dcm * bm.transpose();
  });
}

// db[k,n] += a[m,k]^T * dc[m,n]
void gemm_tn(const double* a, const double* dc, double* db, std::int64_t m, std::int64_t k,
             std::int64_t n) {
  const std::int64_t n_chunks = (k + kRowChunk - 1) / kRowChunk;
  run_chunks(n_chunks, [&](std::int64_t ci) {
    const std::int64_t r0 = ci * kRowChunk;
    const std::int64_t rows = std::min(kRowChunk, k - r0);
    ConstMatMap am(a, m, k);
    ConstMatMap dcm(dc, m, n);
    MatMap dbm(db + r0 * n, rows, n);
    dbm.noalias() += am.middleCols(r0, rows).transpose() * dcm;
  });
}

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

std::vector<std::int64_t> strides_of(const std::vector<int>& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] =
        s[static_cast<std::size_t>(i + 1)] * shape[static_cast<std::size_t>(i + 1)];
  }
  return s;
}

}  // namespace

std::int64_t shape_numel(std::span<const int> shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape dimensions must be positive");
    n *= d;
  }
  return n;
}

TensorPtr Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  const std::int64_t n = shape_numel(shape);
  t->shape = std::move(shape);
  t->data.assign(static_cast<std::size_t>(n), 0.0);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size())) {
    throw std::invalid_argument("tensor data size does not match shape");
  }
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr Tensor::scalar(double value) { return from({1}, {value}); }

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
  if (grad.size() != data.size()) {
    grad.assign(data.size(), 0.0);
  } else {
    std::fill(grad.begin(), grad.end(), 0.0);
  }
}

void set_compute_threads(int n) { g_threads.store(std::max(1, n)); }
int compute_threads() { return g_threads.load(); }

void Tape::record(TensorPtr out, std::function<void()> backward_fn) {
  nodes_.push_back(Node{std::move(out), std::move(backward_fn)});
}

void Tape::backward(const TensorPtr& loss) {
  if (!loss || loss->numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  }
  for (auto& node : nodes_) node.out->zero_grad();
  loss->ensure_grad();
  loss->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back();
}

namespace ops {

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2) {
    throw std::invalid_argument("matmul: expects rank-2 tensors");
  }
  const std::int64_t m = a->dim(0), k = a->dim(1), n = b->dim(1);
  if (b->dim(0) != k) {
    throw std::invalid_argument("matmul: inner dimensions disagree (" + std::to_string(k) +
                                " vs " + std::to_string(b->dim(0)) + ")");
  }
  auto out = Tensor::zeros({static_cast<int>(m), static_cast<int>(n)});
  gemm_nn(a->data.data(), b->data.data(), out->data.data(), m, k, n, false);
  if (tape) {
    tape->record(out, [a, b, out, m, k, n] {
      a->ensure_grad();
      b->ensure_grad();
      gemm_nt(out->grad.data(), b->data.data(), a->grad.data(), m, n, k);
      gemm_tn(a->data.data(), out->grad.data(), b->grad.data(), m, k, n);
    });
  }
  return out;
}

TensorPtr bmm(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 3 || b->rank() != 3 || a->dim(0) != b->dim(0) || a->dim(2) != b->dim(1)) {
    throw std::invalid_argument("bmm: expects [n,p,q] x [n,q,r]");
  }
  const std::int64_t slices = a->dim(0), p = a->dim(1), q = a->dim(2), r = b->dim(2);
  auto out = Tensor::zeros({static_cast<int>(slices), static_cast<int>(p), static_cast<int>(r)});
  const double* ad = a->data.data();
  const double* bd = b->data.data();
  double* od = out->data.data();
  for (std::int64_t s = 0; s < slices; ++s) {
    const double* as = ad + s * p * q;
    const double* bs = bd + s * q * r;
    double* os = od + s * p * r;
    for (std::int64_t i = 0; i < p; ++i) {
      for (std::int64_t l = 0; l < q; ++l) {
        const double av = as[i * q + l];
        for (std::int64_t j = 0; j < r; ++j) os[i * r + j] += av * bs[l * r + j];
      }
    }
  }
  if (tape) {
    tape->record(out, [a, b, out, slices, p, q, r] {
      a->ensure_grad();
      b->ensure_grad();
      const double* ad = a->data.data();
      const double* bd = b->data.data();
      const double* gd = out->grad.data();
      double* dad = a->grad.data();
      double* dbd = b->grad.data();
      for (std::int64_t s = 0; s < slices; ++s) {
        const double* as = ad + s * p * q;
        const double* bs = bd + s * q * r;
        const double* gs = gd + s * p * r;
        double* das = dad + s * p * q;
        double* dbs = dbd + s * q * r;
        for (std::int64_t i = 0; i < p; ++i) {
          for (std::int64_t l = 0; l < q; ++l) {
            double acc = 0.0;
            for (std::int64_t j = 0; j < r; ++j) acc += gs[i * r + j] * bs[l * r + j];
            das[i * q + l] += acc;
          }
        }
        for (std::int64_t l = 0; l < q; ++l) {
          for (std::int64_t i = 0; i < p; ++i) {
            const double av = as[i * q + l];
            for (std::int64_t j = 0; j < r; ++j) dbs[l * r + j] += av * gs[i * r + j];
          }
        }
      }
    });
  }
  return out;
}

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "add");
  auto out = Tensor::zeros(a->shape);
  const std::int64_t n = a->numel();
  for (std::int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
  if (tape) {
    tape->record(out, [a, b, out, n] {
      a->ensure_grad();
      b->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        a->grad[i] += out->grad[i];
        b->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr add_bias(Tape* tape, const TensorPtr& a, const TensorPtr& bias) {
  if (bias->rank() != 1 || a->rank() < 1 || a->shape.back() != bias->dim(0)) {
    throw std::invalid_argument("add_bias: bias must match the last axis");
  }
  const std::int64_t n = bias->dim(0);
  const std::int64_t rows = a->numel() / n;
  auto out = Tensor::zeros(a->shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < n; ++j) out->data[r * n + j] = a->data[r * n + j] + bias->data[j];
  }
  if (tape) {
    tape->record(out, [a, bias, out, rows, n] {
      a->ensure_grad();
      bias->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < n; ++j) {
          const double g = out->grad[r * n + j];
          a->grad[r * n + j] += g;
          bias->grad[j] += g;
        }
      }
    });
  }
  return out;
}

TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "mul");
  auto out = Tensor::zeros(a->shape);
  const std::int64_t n = a->numel();
  for (std::int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
  if (tape) {
    tape->record(out, [a, b, out, n] {
      a->ensure_grad();
      b->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        a->grad[i] += out->grad[i] * b->data[i];
        b->grad[i] += out->grad[i] * a->data[i];
      }
    });
  }
  return out;
}

TensorPtr scale(Tape* tape, const TensorPtr& a, double c) {
  auto out = Tensor::zeros(a->shape);
  const std::int64_t n = a->numel();
  for (std::int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] * c;
  if (tape) {
    tape->record(out, [a, out, c, n] {
      a->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) a->grad[i] += c * out->grad[i];
    });
  }
  return out;
}

TensorPtr relu(Tape* tape, const TensorPtr& a) {
  auto out = Tensor::zeros(a->shape);
  const std::int64_t n = a->numel();
  for (std::int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
  if (tape) {
    tape->record(out, [a, out, n] {
      a->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        if (a->data[i] > 0.0) a->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr softmax(Tape* tape, const TensorPtr& a, int axis) {
  if (axis < 0 || axis >= a->rank()) throw std::invalid_argument("softmax: axis out of range");
  const auto strides = strides_of(a->shape);
  const std::int64_t len = a->dim(axis);
  const std::int64_t inner = strides[static_cast<std::size_t>(axis)];
  const std::int64_t outer = a->numel() / (len * inner);
  auto out = Tensor::zeros(a->shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      double mx = a->data[base];
      for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, a->data[base + j * inner]);
      double total = 0.0;
      for (std::int64_t j = 0; j < len; ++j) {
        const double e = std::exp(a->data[base + j * inner] - mx);
        out->data[base + j * inner] = e;
        total += e;
      }
      for (std::int64_t j = 0; j < len; ++j) out->data[base + j * inner] /= total;
    }
  }
  if (tape) {
    tape->record(out, [a, out, outer, len, inner] {
      a->ensure_grad();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * len * inner + i;
          double dot = 0.0;
          for (std::int64_t j = 0; j < len; ++j) {
            dot += out->grad[base + j * inner] * out->data[base + j * inner];
          }
          for (std::int64_t j = 0; j < len; ++j) {
            const std::int64_t idx = base + j * inner;
            a->grad[idx] += out->data[idx] * (out->grad[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

TensorPtr layer_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gain,
                     const TensorPtr& bias, double eps) {
  if (x->rank() < 1) throw std::invalid_argument("layer_norm: rank-0 input");
  const std::int64_t d = x->shape.back();
  if (gain->numel() != d || bias->numel() != d) {
    throw std::invalid_argument("layer_norm: gain/bias must match the last axis");
  }
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::int64_t rows = x->numel() / d;
  auto out = Tensor::zeros(x->shape);
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows * d));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = x->data.data() + r * d;
    double mean = 0.0;
    for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    for (std::int64_t j = 0; j < d; ++j) {
      const double xh = (xr[j] - mean) * is;
      (*xhat)[static_cast<std::size_t>(r * d + j)] = xh;
      out->data[r * d + j] = xh * gain->data[j] + bias->data[j];
    }
  }
  if (tape) {
    tape->record(out, [x, gain, bias, out, xhat, inv_std, rows, d] {
      x->ensure_grad();
      gain->ensure_grad();
      bias->ensure_grad();
      std::vector<double> dxhat(static_cast<std::size_t>(d));
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* go = out->grad.data() + r * d;
        const double* xh = xhat->data() + r * d;
        double mean_dxhat = 0.0, mean_dxhat_xh = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
          const double dh = go[j] * gain->data[j];
          dxhat[static_cast<std::size_t>(j)] = dh;
          mean_dxhat += dh;
          mean_dxhat_xh += dh * xh[j];
          gain->grad[j] += go[j] * xh[j];
          bias->grad[j] += go[j];
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xh /= static_cast<double>(d);
        const double is = (*inv_std)[static_cast<std::size_t>(r)];
        for (std::int64_t j = 0; j < d; ++j) {
          x->grad[r * d + j] +=
              is * (dxhat[static_cast<std::size_t>(j)] - mean_dxhat - xh[j] * mean_dxhat_xh);
        }
      }
    });
  }
  return out;
}

TensorPtr gather_rows(Tape* tape, const TensorPtr& table, std::span<const std::int32_t> ids) {
  if (table->rank() != 2) throw std::invalid_argument("gather_rows: table must be rank-2");
  const std::int64_t v = table->dim(0), d = table->dim(1);
  for (std::int32_t id : ids) {
    if (id < 0 || id >= v) throw std::out_of_range("gather_rows: row id out of range");
  }
  const std::int64_t n = static_cast<std::int64_t>(ids.size());
  auto out = Tensor::zeros({static_cast<int>(n), static_cast<int>(d)});
  for (std::int64_t i = 0; i < n; ++i) {
    const double* src = table->data.data() + static_cast<std::int64_t>(ids[i]) * d;
    std::copy(src, src + d, out->data.data() + i * d);
  }
  if (tape) {
    std::vector<std::int32_t> owned(ids.begin(), ids.end());
    tape->record(out, [table, out, owned = std::move(owned), d] {
      table->ensure_grad();
      const std::int64_t n = static_cast<std::int64_t>(owned.size());
      for (std::int64_t i = 0; i < n; ++i) {
        double* dst = table->grad.data() + static_cast<std::int64_t>(owned[i]) * d;
        const double* src = out->grad.data() + i * d;
        for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

TensorPtr reshape(Tape* tape, const TensorPtr& a, std::vector<int> new_shape) {
  if (shape_numel(new_shape) != a->numel()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  auto out = Tensor::from(std::move(new_shape), a->data);
  if (tape) {
    tape->record(out, [a, out] {
      a->ensure_grad();
      const std::int64_t n = a->numel();
      for (std::int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr permute(Tape* tape, const TensorPtr& a, std::vector<int> axes) {
  const int r = a->rank();
  if (static_cast<int>(axes.size()) != r) throw std::invalid_argument("permute: axes size mismatch");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int ax : axes) {
    if (ax < 0 || ax >= r || seen[static_cast<std::size_t>(ax)]) {
      throw std::invalid_argument("permute: axes must be a permutation");
    }
    seen[static_cast<std::size_t>(ax)] = true;
  }
  std::vector<int> out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = a->dim(axes[static_cast<std::size_t>(i)]);
  const auto in_strides = strides_of(a->shape);
  // stride of output axis i in the input linear layout
  std::vector<std::int64_t> map_strides(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    map_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
  }
  auto out = Tensor::zeros(out_shape);
  const std::int64_t n = a->numel();
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t in_lin = 0;
  for (std::int64_t o = 0; o < n; ++o) {
    out->data[o] = a->data[in_lin];
    for (int ax = r - 1; ax >= 0; --ax) {
      auto uax = static_cast<std::size_t>(ax);
      if (++idx[uax] < out_shape[uax]) {
        in_lin += map_strides[uax];
        break;
      }
      idx[uax] = 0;
      in_lin -= map_strides[uax] * (out_shape[uax] - 1);
    }
  }
  if (tape) {
    tape->record(out, [a, out, out_shape, map_strides, r] {
      a->ensure_grad();
      const std::int64_t n = a->numel();
      std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
      std::int64_t in_lin = 0;
      for (std::int64_t o = 0; o < n; ++o) {
        a->grad[in_lin] += out->grad[o];
        for (int ax = r - 1; ax >= 0; --ax) {
          auto uax = static_cast<std::size_t>(ax);
          if (++idx[uax] < out_shape[uax]) {
            in_lin += map_strides[uax];
            break;
          }
          idx[uax] = 0;
          in_lin -= map_strides[uax] * (out_shape[uax] - 1);
        }
      }
    });
  }
  return out;
}

TensorPtr cross_entropy(Tape* tape, const TensorPtr& logits, std::span<const std::int32_t> labels) {
  if (logits->rank() != 2) throw std::invalid_argument("cross_entropy: logits must be rank-2");
  const std::int64_t batch = logits->dim(0), classes = logits->dim(1);
  if (static_cast<std::int64_t>(labels.size()) != batch) {
    throw std::invalid_argument("cross_entropy: label count mismatch");
  }
  for (std::int32_t y : labels) {
    if (y < 0 || y >= classes) throw std::out_of_range("cross_entropy: label out of range");
  }
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(batch * classes));
  double loss = 0.0;
  for (std::int64_t b = 0; b < batch; ++b) {
    const double* row = logits->data.data() + b * classes;
    double mx = row[0];
    for (std::int64_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double total = 0.0;
    for (std::int64_t c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
    const double lse = mx + std::log(total);
    loss += lse - row[labels[static_cast<std::size_t>(b)]];
    for (std::int64_t c = 0; c < classes; ++c) {
      (*probs)[static_cast<std::size_t>(b * classes + c)] = std::exp(row[c] - lse);
    }
  }
  loss /= static_cast<double>(batch);
  auto out = Tensor::scalar(loss);
  if (tape) {
    std::vector<std::int32_t> owned(labels.begin(), labels.end());
    tape->record(out, [logits, out, probs, owned = std::move(owned), batch, classes] {
      logits->ensure_grad();
      const double g = out->grad[0] / static_cast<double>(batch);
      for (std::int64_t b = 0; b < batch; ++b) {
        const std::int32_t y = owned[static_cast<std::size_t>(b)];
        for (std::int64_t c = 0; c < classes; ++c) {
          const double p = (*probs)[static_cast<std::size_t>(b * classes + c)];
          logits->grad[b * classes + c] += g * (p - (c == y ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

TensorPtr sum(Tape* tape, const TensorPtr& a) {
  double total = 0.0;
  for (double v : a->data) total += v;
  auto out = Tensor::scalar(total);
  if (tape) {
    tape->record(out, [a, out] {
      a->ensure_grad();
      const double g = out->grad[0];
      for (auto& v : a->grad) v += g;
    });
  }
  return out;
}

}  // namespace ops
}  // namespace groklab
