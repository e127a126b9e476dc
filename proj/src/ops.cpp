#include "boxagent/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "boxagent/simd/kernels.hpp"

namespace boxagent::numerics {
namespace {

using simd::GemmArgs;
using simd::kernels;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// ---- broadcasting ---------------------------------------------------------

struct Broadcast {
  enum class Kind { same, b_repeat, a_repeat, general };
  Kind kind = Kind::same;
  Shape out;
  std::vector<std::size_t> ai;
  std::vector<std::size_t> bi;

  std::size_t a_index(std::size_t i, std::size_t a_size) const {
    switch (kind) {
      case Kind::same:
      case Kind::b_repeat:
        return i;
      case Kind::a_repeat:
        return i % a_size;
      case Kind::general:
        return ai[i];
    }
    return 0;
  }
  std::size_t b_index(std::size_t i, std::size_t b_size) const {
    switch (kind) {
      case Kind::same:
      case Kind::a_repeat:
        return i;
      case Kind::b_repeat:
        return i % b_size;
      case Kind::general:
        return bi[i];
    }
    return 0;
  }
};

Shape strip_leading_ones(const Shape& s) {
  std::size_t k = 0;
  while (k < s.size() && s[k] == 1) ++k;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(k), s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  const Shape s = strip_leading_ones(small);
  if (s.size() > big.size()) return false;
  return std::equal(s.rbegin(), s.rend(), big.rbegin());
}

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  p.out.assign(rank, 1);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const std::size_t db = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
    p.out[k] = std::max(da, db);
  }
  if (numel(a) == numel(p.out) && is_suffix(b, p.out)) {
    p.kind = Broadcast::Kind::b_repeat;
    return p;
  }
  if (numel(b) == numel(p.out) && is_suffix(a, p.out)) {
    p.kind = Broadcast::Kind::a_repeat;
    return p;
  }
  p.kind = Broadcast::Kind::general;
  auto strides_for = [&](const Shape& s) {
    std::vector<std::size_t> st(rank, 0);
    std::size_t acc = 1;
    for (std::size_t k = s.size(); k-- > 0;) {
      const std::size_t pos = k + (rank - s.size());
      st[pos] = s[k] == 1 ? 0 : acc;
      acc *= s[k];
    }
    return st;
  };
  const auto sa = strides_for(a);
  const auto sb = strides_for(b);
  const std::size_t n = numel(p.out);
  p.ai.resize(n);
  p.bi.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    p.ai[i] = ia;
    p.bi[i] = ib;
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      ia += sa[k];
      ib += sb[k];
      if (idx[k] < p.out[k]) break;
      ia -= sa[k] * idx[k];
      ib -= sb[k] * idx[k];
      idx[k] = 0;
    }
  }
  return p;
}

// f(x, y) -> value; dfa(x, y, z) and dfb(x, y, z) -> partial derivatives.
template <class F, class DA, class DB>
Tensor binary(OpKind op, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(op_name(op), a.shape(), b.shape()));
  const std::size_t n = numel(plan->out);
  std::vector<double> out(n);
  const double* av = a.data();
  const double* bv = b.data();
  const std::size_t as = a.size(), bs = b.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[plan->a_index(i, as)], bv[plan->b_index(i, bs)]);
  Shape shape = plan->out;
  return Tensor::from_op(op, std::move(shape), std::move(out), {a, b}, [plan, dfa, dfb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t as = pa.value.size(), bs = pb.value.size();
    if (pa.requires_grad) {
      auto ga = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const std::size_t ia = plan->a_index(i, as);
        ga[ia] += self.grad[i] * dfa(pa.value[ia], pb.value[plan->b_index(i, bs)], self.value[i]);
      }
    }
    if (pb.requires_grad) {
      auto gb = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const std::size_t ib = plan->b_index(i, bs);
        gb[ib] += self.grad[i] * dfb(pa.value[plan->a_index(i, as)], pb.value[ib], self.value[i]);
      }
    }
  });
}

// f(x) -> value; df(x, y) -> derivative given input and output.
template <class F, class D>
Tensor unary(OpKind op, const Tensor& a, F f, D df) {
  std::vector<double> out(a.size());
  const double* av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return Tensor::from_op(op, a.shape(), std::move(out), {a}, [df](Node& self) {
    Node& p = *self.parents[0];
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t a_row,
          std::size_t a_col, const double* b, std::size_t ldb, double* c, std::size_t ldc,
          bool accumulate) {
  if (m == 0 || n == 0) return;
  GemmArgs g{m, n, k, a, a_row, a_col, b, ldb, c, ldc, accumulate};
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0);
    }
    return;
  }
  kernels().gemm(g);
}

std::vector<double> transposed(const double* src, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = src[i * cols + j];
  return t;
}

std::size_t last_extent(const char* op, const Tensor& a) {
  if (a.rank() == 0) throw ShapeError(std::string(op) + ": needs rank >= 1, got a scalar");
  return a.shape().back();
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    kernels().add(a.data(), b.data(), out.data(), out.size());
    return Tensor::from_op(OpKind::add, a.shape(), std::move(out), {a, b}, [](Node& self) {
      for (auto& p : self.parents) {
        if (p->requires_grad) kernels().axpy(1.0, self.grad.data(), p->grad_buffer().data(), self.grad.size());
      }
    });
  }
  return binary(
      OpKind::add, a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::sub, a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    kernels().mul(a.data(), b.data(), out.data(), out.size());
    return Tensor::from_op(OpKind::mul, a.shape(), std::move(out), {a, b}, [](Node& self) {
      Node& pa = *self.parents[0];
      Node& pb = *self.parents[1];
      const std::size_t n = self.grad.size();
      if (pa.requires_grad) {
        auto g = pa.grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * pb.value[i];
      }
      if (pb.requires_grad) {
        auto g = pb.grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * pa.value[i];
      }
    });
  }
  return binary(
      OpKind::mul, a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::div, a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::maximum, a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::minimum, a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Tensor neg(const Tensor& a) {
  return unary(OpKind::neg, a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(OpKind::scale, a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(OpKind::add_scalar, a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      OpKind::sigmoid, a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(OpKind::tanh, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      OpKind::relu, a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(OpKind::exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0)) throw NumericError("log: non-positive input " + std::to_string(v));
  }
  return unary(OpKind::log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      OpKind::abs, a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      OpKind::clamp, a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() == 3 && b.rank() == 3) {
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k) shape_fail("matmul", a.shape(), b.shape());
    std::vector<double> out(batch * m * n);
    for (std::size_t s = 0; s < batch; ++s) {
      gemm(m, n, k, a.data() + s * m * k, k, 1, b.data() + s * k * n, n, out.data() + s * m * n, n, false);
    }
    return Tensor::from_op(OpKind::matmul, {batch, m, n}, std::move(out), {a, b},
                           [batch, m, n, k](Node& self) {
                             Node& pa = *self.parents[0];
                             Node& pb = *self.parents[1];
                             for (std::size_t s = 0; s < batch; ++s) {
                               const double* dc = self.grad.data() + s * m * n;
                               if (pa.requires_grad) {
                                 auto bt = transposed(pb.value.data() + s * k * n, k, n);
                                 gemm(m, k, n, dc, n, 1, bt.data(), k, pa.grad_buffer().data() + s * m * k, k, true);
                               }
                               if (pb.requires_grad) {
                                 gemm(k, n, m, pa.value.data() + s * m * k, 1, k, dc, n,
                                      pb.grad_buffer().data() + s * k * n, n, true);
                               }
                             }
                           });
  }
  if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    shape_fail("matmul", a.shape(), b.shape());
  }
  const std::size_t k = b.dim(0), n = b.dim(1);
  const std::size_t m = a.size() / std::max<std::size_t>(k, 1);
  Shape shape = a.shape();
  shape.back() = n;
  std::vector<double> out(m * n);
  gemm(m, n, k, a.data(), k, 1, b.data(), n, out.data(), n, false);
  return Tensor::from_op(OpKind::matmul, std::move(shape), std::move(out), {a, b}, [m, n, k](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto bt = transposed(pb.value.data(), k, n);
      gemm(m, k, n, self.grad.data(), n, 1, bt.data(), k, pa.grad_buffer().data(), k, true);
    }
    if (pb.requires_grad) {
      gemm(k, n, m, pa.value.data(), 1, k, self.grad.data(), n, pb.grad_buffer().data(), n, true);
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) shape_fail("matmul_nt", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  auto bt = transposed(b.data(), n, k);
  std::vector<double> out(m * n);
  gemm(m, n, k, a.data(), k, 1, bt.data(), n, out.data(), n, false);
  return Tensor::from_op(OpKind::matmul_nt, {m, n}, std::move(out), {a, b}, [m, n, k](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      gemm(m, k, n, self.grad.data(), n, 1, pb.value.data(), k, pa.grad_buffer().data(), k, true);
    }
    if (pb.requires_grad) {
      gemm(n, k, m, self.grad.data(), 1, n, pa.value.data(), k, pb.grad_buffer().data(), k, true);
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: needs rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  return Tensor::from_op(OpKind::transpose, {c, r}, transposed(a.data(), r, c), {a}, [r, c](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

// ---- row-wise ops -------------------------------------------------------------

Tensor softmax(const Tensor& a) {
  const std::size_t len = last_extent("softmax", a);
  const std::size_t rows = len ? a.size() / len : 0;
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data() + r * len;
    double* y = out.data() + r * len;
    const double mx = *std::max_element(x, x + len);
    double s = 0.0;
    for (std::size_t j = 0; j < len; ++j) s += (y[j] = std::exp(x[j] - mx));
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < len; ++j) y[j] *= inv;
  }
  return Tensor::from_op(OpKind::softmax, a.shape(), std::move(out), {a}, [rows, len](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * len;
      const double* dy = self.grad.data() + r * len;
      const double dot = kernels().dot(y, dy, len);
      for (std::size_t j = 0; j < len; ++j) g[r * len + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t len = last_extent("log_softmax", a);
  const std::size_t rows = len ? a.size() / len : 0;
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data() + r * len;
    double* y = out.data() + r * len;
    const double mx = *std::max_element(x, x + len);
    double s = 0.0;
    for (std::size_t j = 0; j < len; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < len; ++j) y[j] = x[j] - lse;
  }
  return Tensor::from_op(OpKind::log_softmax, a.shape(), std::move(out), {a}, [rows, len](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * len;
      const double* dy = self.grad.data() + r * len;
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) total += dy[j];
      for (std::size_t j = 0; j < len; ++j) g[r * len + j] += dy[j] - std::exp(y[j]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& a, double eps) {
  const std::size_t len = last_extent("layer_norm", a);
  const std::size_t rows = len ? a.size() / len : 0;
  std::vector<double> out(a.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data() + r * len;
    double mu = 0.0;
    for (std::size_t j = 0; j < len; ++j) mu += x[j];
    mu /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t j = 0; j < len; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(len);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = (x[j] - mu) * rstd[r];
  }
  return Tensor::from_op(OpKind::layer_norm, a.shape(), std::move(out), {a},
                         [rows, len, rstd = std::move(rstd)](Node& self) {
                           auto g = self.parents[0]->grad_buffer();
                           const double inv_len = 1.0 / static_cast<double>(len);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* xh = self.value.data() + r * len;
                             const double* dy = self.grad.data() + r * len;
                             double m1 = 0.0, m2 = 0.0;
                             for (std::size_t j = 0; j < len; ++j) {
                               m1 += dy[j];
                               m2 += dy[j] * xh[j];
                             }
                             m1 *= inv_len;
                             m2 *= inv_len;
                             for (std::size_t j = 0; j < len; ++j) {
                               g[r * len + j] += rstd[r] * (dy[j] - m1 - xh[j] * m2);
                             }
                           }
                         });
}

// ---- structural ops -------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_str(ref));
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= ref[k];
  for (std::size_t k = axis + 1; k < ref.size(); ++k) inner *= ref[k];
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t k = 0; ok && k < s.size(); ++k) ok = (k == axis) || s[k] == ref[k];
    if (!ok) shape_fail("concat", ref, s);
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape shape = ref;
  shape[axis] = total;
  std::vector<double> out(numel(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t block = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(parts[p].data() + o * block, block, out.data() + o * total * inner + offset * inner);
    }
    offset += extents[p];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::from_op(OpKind::concat, std::move(shape), std::move(out), std::move(inputs),
                         [outer, inner, total, extents](Node& self) {
                           std::size_t offset = 0;
                           for (std::size_t p = 0; p < self.parents.size(); ++p) {
                             const std::size_t block = extents[p] * inner;
                             if (self.parents[p]->requires_grad) {
                               auto g = self.parents[p]->grad_buffer();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 const double* src = self.grad.data() + o * total * inner + offset * inner;
                                 for (std::size_t j = 0; j < block; ++j) g[o * block + j] += src[j];
                               }
                             }
                             offset += extents[p];
                           }
                         });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= s[k];
  for (std::size_t k = axis + 1; k < s.size(); ++k) inner *= s[k];
  const std::size_t extent = s[axis];
  Shape shape = s;
  shape[axis] = length;
  std::vector<double> out(numel(shape));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data() + (o * extent + start) * inner, length * inner, out.data() + o * length * inner);
  }
  return Tensor::from_op(OpKind::slice, std::move(shape), std::move(out), {a},
                         [outer, inner, extent, start, length](Node& self) {
                           auto g = self.parents[0]->grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o) {
                             double* dst = g.data() + (o * extent + start) * inner;
                             const double* src = self.grad.data() + o * length * inner;
                             for (std::size_t j = 0; j < length * inner; ++j) dst[j] += src[j];
                           }
                         });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
  std::vector<double> out(a.values().begin(), a.values().end());
  return Tensor::from_op(OpKind::reshape, std::move(shape), std::move(out), {a}, [](Node& self) {
    kernels().axpy(1.0, self.grad.data(), self.parents[0]->grad_buffer().data(), self.grad.size());
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  if (a.rank() < 1) throw ShapeError("gather_rows: needs rank >= 1");
  const std::size_t count = a.dim(0);
  const std::size_t width = count ? a.size() / count : 0;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Shape shape = a.shape();
  shape[0] = idx.size();
  std::vector<double> out(idx.size() * width);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= count) {
      throw ShapeError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " + shape_str(a.shape()));
    }
    std::copy_n(a.data() + idx[r] * width, width, out.data() + r * width);
  }
  return Tensor::from_op(OpKind::gather_rows, std::move(shape), std::move(out), {a},
                         [idx = std::move(idx), width](Node& self) {
                           auto g = self.parents[0]->grad_buffer();
                           for (std::size_t r = 0; r < idx.size(); ++r)
                             for (std::size_t j = 0; j < width; ++j) g[idx[r] * width + j] += self.grad[r * width + j];
                         });
}

// ---- reductions -------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::from_op(OpKind::sum, {}, {s}, {a}, [](Node& self) {
    const double d = self.grad[0];
    for (auto& g : self.parents[0]->grad_buffer()) g += d;
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.size());
  return Tensor::from_op(OpKind::mean, {}, {s * inv}, {a}, [inv](Node& self) {
    const double d = self.grad[0] * inv;
    for (auto& g : self.parents[0]->grad_buffer()) g += d;
  });
}

Tensor sum_last(const Tensor& a) {
  const std::size_t len = last_extent("sum_last", a);
  const std::size_t rows = len ? a.size() / len : 0;
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < len; ++j) out[r] += a[r * len + j];
  return Tensor::from_op(OpKind::sum_last, std::move(shape), std::move(out), {a}, [rows, len](Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) g[r * len + j] += self.grad[r];
  });
}

Tensor detach(const Tensor& a) {
  return Tensor::constant(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
}

}  // namespace boxagent::numerics
