// Copyright 2026 The Paving Authors
// SPDX-License-Identifier: Apache-2.0

#include "paving/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "paving/errors.hpp"

namespace paving::num {

namespace {

constexpr double kGeluC = 0.79788456080286535587989211986876;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

void require_same_shape(const Array& a, const Array& b, const char* op) {
  require_config(a.same_shape(b), std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                                      shape_string(b));
}

void require_scalar(const Array& a, const char* op) {
  require_config(a.rows() == 1 && a.cols() == 1,
                 std::string(op) + ": expected 1x1 operand, got " + shape_string(a));
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_acc(const Array& a, const Array& b, Array& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.row(i).data();
    const double* arow = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.row(p).data();
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T where B is [n x k]
void gemm_nt_acc(const Array& a, const Array& b, Array& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.row(i).data();
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.row(j).data();
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c(i, j) += s;
    }
  }
}

// C[k x n] += A^T * B where A is [m x k], B is [m x n]
void gemm_tn_acc(const Array& a, const Array& b, Array& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.row(i).data();
    const double* brow = b.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c.row(p).data();
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

double row_lse(const double* x, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, x[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - mx);
  return mx + std::log(s);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Var matmul(Var a, Var b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  require_config(av.cols() == bv.rows(),
                 "matmul: inner dimensions differ " + shape_string(av) + " * " + shape_string(bv));
  Array out(av.rows(), bv.cols());
  gemm_acc(av, bv, out);
  return a.tape->record("matmul", std::move(out), {a, b}, [](Tape& t, std::uint32_t self) {
    const auto ia = t.input(self, 0), ib = t.input(self, 1);
    const Array& g = t.grad_of(self);
    if (t.tracks(ia)) gemm_nt_acc(g, t.value_of(ib), t.accumulate(ia));
    if (t.tracks(ib)) gemm_tn_acc(t.value_of(ia), g, t.accumulate(ib));
  });
}

Var transpose(Var a) {
  const Array& av = a.value();
  Array out(av.cols(), av.rows());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(j, i) = av(i, j);
  return a.tape->record("transpose", std::move(out), {a}, [](Tape& t, std::uint32_t self) {
    const Array& g = t.grad_of(self);
    Array& ga = t.accumulate(t.input(self, 0));
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Array out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return a.tape->record("add", std::move(out), {a, b}, [](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self).data();
    for (std::size_t k = 0; k < 2; ++k) {
      const auto in = t.input(self, k);
      if (!t.tracks(in)) continue;
      auto d = t.accumulate(in).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Array out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return a.tape->record("sub", std::move(out), {a, b}, [](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self).data();
    const auto ia = t.input(self, 0), ib = t.input(self, 1);
    if (t.tracks(ia)) {
      auto d = t.accumulate(ia).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (t.tracks(ib)) {
      auto d = t.accumulate(ib).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Array out = a.value();
  const auto bv = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return a.tape->record("mul", std::move(out), {a, b}, [](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self).data();
    const auto ia = t.input(self, 0), ib = t.input(self, 1);
    if (t.tracks(ia)) {
      const auto bv = t.value_of(ib).data();
      auto d = t.accumulate(ia).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.tracks(ib)) {
      const auto av = t.value_of(ia).data();
      auto d = t.accumulate(ib).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double c) {
  Array out = a.value();
  for (double& v : out.data()) v *= c;
  return a.tape->record("scale", std::move(out), {a}, [c](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self).data();
    auto d = t.accumulate(t.input(self, 0)).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += c * g[i];
  });
}

Var scale_by(Var a, Var s) {
  require_scalar(s.value(), "scale_by");
  const double sv = s.value()[0];
  Array out = a.value();
  for (double& v : out.data()) v *= sv;
  return a.tape->record("scale_by", std::move(out), {a, s}, [](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self).data();
    const auto ia = t.input(self, 0), is = t.input(self, 1);
    const double sv = t.value_of(is)[0];
    if (t.tracks(ia)) {
      auto d = t.accumulate(ia).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += sv * g[i];
    }
    if (t.tracks(is)) {
      const auto av = t.value_of(ia).data();
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      t.accumulate(is)[0] += acc;
    }
  });
}

Var add_row(Var a, Var bias) {
  const Array& av = a.value();
  const Array& bv = bias.value();
  require_config(bv.rows() == 1 && bv.cols() == av.cols(),
                 "add_row: bias " + shape_string(bv) + " does not match " + shape_string(av));
  Array out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bv[j];
  }
  return a.tape->record("add_row", std::move(out), {a, bias}, [](Tape& t, std::uint32_t self) {
    const Array& g = t.grad_of(self);
    const auto ia = t.input(self, 0), ib = t.input(self, 1);
    if (t.tracks(ia)) {
      auto d = t.accumulate(ia).data();
      const auto gd = g.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += gd[i];
    }
    if (t.tracks(ib)) {
      Array& d = t.accumulate(ib);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < g.cols(); ++j) d[j] += g(r, j);
    }
  });
}

double gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

Var gelu(Var a) {
  Array out = a.value();
  for (double& v : out.data()) v = gelu(v);
  return a.tape->record("gelu", std::move(out), {a}, [](Tape& t, std::uint32_t self) {
    const auto ia = t.input(self, 0);
    const auto x = t.value_of(ia).data();
    const auto g = t.grad_of(self).data();
    auto d = t.accumulate(ia).data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double xi = x[i];
      const double th = std::tanh(kGeluC * (xi + kGeluA * xi * xi * xi));
      const double dudx = kGeluC * (1.0 + 3.0 * kGeluA * xi * xi);
      d[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * xi * (1.0 - th * th) * dudx);
    }
  });
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var sigmoid(Var a) {
  Array out = a.value();
  for (double& v : out.data()) v = sigmoid(v);
  return a.tape->record("sigmoid", std::move(out), {a}, [](Tape& t, std::uint32_t self) {
    const auto y = t.value_of(self).data();
    const auto g = t.grad_of(self).data();
    auto d = t.accumulate(t.input(self, 0)).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var relu(Var a) {
  Array out = a.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return a.tape->record("relu", std::move(out), {a}, [](Tape& t, std::uint32_t self) {
    const auto ia = t.input(self, 0);
    const auto x = t.value_of(ia).data();
    const auto g = t.grad_of(self).data();
    auto d = t.accumulate(ia).data();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (x[i] > 0.0) d[i] += g[i];
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Array& xv = x.value();
  const std::size_t n = xv.cols();
  require_config(gain.value().rows() == 1 && gain.value().cols() == n && bias.value().same_shape(gain.value()),
                 "layer_norm: gain/bias must be 1x" + std::to_string(n));
  Array xhat(xv.rows(), n);
  std::vector<double> inv_std(xv.rows());
  Array out(xv.rows(), n);
  const Array& gv = gain.value();
  const Array& bv = bias.value();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const auto row = xv.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(r, j) = (row[j] - mu) * inv_std[r];
      out(r, j) = xhat(r, j) * gv[j] + bv[j];
    }
  }
  return x.tape->record(
      "layer_norm", std::move(out), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, std::uint32_t self) {
        const Array& g = t.grad_of(self);
        const auto ix = t.input(self, 0), ig = t.input(self, 1), ib = t.input(self, 2);
        const Array& gv = t.value_of(ig);
        const std::size_t n = g.cols();
        if (t.tracks(ig)) {
          Array& d = t.accumulate(ig);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < n; ++j) d[j] += g(r, j) * xhat(r, j);
        }
        if (t.tracks(ib)) {
          Array& d = t.accumulate(ib);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t j = 0; j < n; ++j) d[j] += g(r, j);
        }
        if (t.tracks(ix)) {
          Array& d = t.accumulate(ix);
          std::vector<double> dxhat(n);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = g(r, j) * gv[j];
              s1 += dxhat[j];
              s2 += dxhat[j] * xhat(r, j);
            }
            const double k = inv_std[r] / static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j)
              d(r, j) += k * (static_cast<double>(n) * dxhat[j] - s1 - xhat(r, j) * s2);
          }
        }
      });
}

double log_sum_exp(std::span<const double> x) { return row_lse(x.data(), x.size()); }

std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(logits[i] - lse);
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require_config(p.size() == q.size(), "kl_divergence: support sizes differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    require(q[i] > 0.0, "kl_divergence: q has zero mass where p is positive");
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return kl;
}

Var softmax_rows(Var a) {
  const Array& av = a.value();
  Array out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto p = softmax(av.row(r));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return a.tape->record("softmax", std::move(out), {a}, [](Tape& t, std::uint32_t self) {
    const Array& y = t.value_of(self);
    const Array& g = t.grad_of(self);
    Array& d = t.accumulate(t.input(self, 0));
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(r, j) * y(r, j);
      for (std::size_t j = 0; j < y.cols(); ++j) d(r, j) += y(r, j) * (g(r, j) - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  const Array& av = a.value();
  Array out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto p = log_softmax(av.row(r));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return a.tape->record("log_softmax", std::move(out), {a}, [](Tape& t, std::uint32_t self) {
    const Array& y = t.value_of(self);
    const Array& g = t.grad_of(self);
    Array& d = t.accumulate(t.input(self, 0));
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) gs += g(r, j);
      for (std::size_t j = 0; j < y.cols(); ++j) d(r, j) += g(r, j) - std::exp(y(r, j)) * gs;
    }
  });
}

Var causal_softmax(Var scores) {
  const Array& s = scores.value();
  require_config(s.rows() == s.cols(), "causal_softmax: scores must be square, got " + shape_string(s));
  Array out(s.rows(), s.cols());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const auto p = softmax(s.row(r).first(r + 1));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return scores.tape->record("causal_softmax", std::move(out), {scores}, [](Tape& t, std::uint32_t self) {
    const Array& y = t.value_of(self);
    const Array& g = t.grad_of(self);
    Array& d = t.accumulate(t.input(self, 0));
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j <= r; ++j) dot += g(r, j) * y(r, j);
      for (std::size_t j = 0; j <= r; ++j) d(r, j) += y(r, j) * (g(r, j) - dot);
    }
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Array& tv = table.value();
  Array out(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require_config(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < tv.rows(),
                   "embedding: id " + std::to_string(ids[i]) + " out of range");
    const auto src = tv.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<int> keep(ids.begin(), ids.end());
  return table.tape->record("embedding", std::move(out), {table},
                            [keep = std::move(keep)](Tape& t, std::uint32_t self) {
                              const Array& g = t.grad_of(self);
                              Array& d = t.accumulate(t.input(self, 0));
                              for (std::size_t i = 0; i < keep.size(); ++i) {
                                auto dst = d.row(static_cast<std::size_t>(keep[i]));
                                const auto src = g.row(i);
                                for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                              }
                            });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Array& av = a.value();
  Array out(rows.size(), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require_config(rows[i] < av.rows(), "gather_rows: row index out of range");
    const auto src = av.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::size_t> keep(rows.begin(), rows.end());
  return a.tape->record("gather_rows", std::move(out), {a}, [keep = std::move(keep)](Tape& t, std::uint32_t self) {
    const Array& g = t.grad_of(self);
    Array& d = t.accumulate(t.input(self, 0));
    for (std::size_t i = 0; i < keep.size(); ++i) {
      auto dst = d.row(keep[i]);
      const auto src = g.row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Array& av = a.value();
  require_config(start + count <= av.rows(), "slice_rows: range exceeds " + shape_string(av));
  Array out(count, av.cols());
  std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(start * av.cols()), count * av.cols(),
              out.data().begin());
  return a.tape->record("slice_rows", std::move(out), {a}, [start](Tape& t, std::uint32_t self) {
    const Array& g = t.grad_of(self);
    Array& d = t.accumulate(t.input(self, 0));
    auto dst = d.data().subspan(start * d.cols(), g.size());
    const auto src = g.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Array& av = a.value();
  require_config(start + count <= av.cols(), "slice_cols: range exceeds " + shape_string(av));
  Array out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t j = 0; j < count; ++j) out(r, j) = av(r, start + j);
  return a.tape->record("slice_cols", std::move(out), {a}, [start](Tape& t, std::uint32_t self) {
    const Array& g = t.grad_of(self);
    Array& d = t.accumulate(t.input(self, 0));
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t j = 0; j < g.cols(); ++j) d(r, start + j) += g(r, j);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require_config(p.cols() == cols, "concat_rows: column counts differ");
    rows += p.rows();
  }
  Array out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += src.size();
  }
  return parts.front().tape->record("concat_rows", std::move(out), parts, [](Tape& t, std::uint32_t self) {
    const auto g = t.grad_of(self).data();
    std::size_t off = 0;
    for (std::size_t k = 0;; ++k) {
      if (off >= g.size()) break;
      const auto in = t.input(self, k);
      const std::size_t n = t.value_of(in).size();
      if (t.tracks(in)) {
        auto d = t.accumulate(in).data();
        for (std::size_t i = 0; i < n; ++i) d[i] += g[off + i];
      }
      off += n;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    require_config(p.rows() == rows, "concat_cols: row counts differ");
    cols += p.cols();
  }
  Array out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Array& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < v.cols(); ++j) out(r, off + j) = v(r, j);
    off += v.cols();
  }
  return parts.front().tape->record("concat_cols", std::move(out), parts, [](Tape& t, std::uint32_t self) {
    const Array& g = t.grad_of(self);
    std::size_t off = 0;
    for (std::size_t k = 0; off < g.cols(); ++k) {
      const auto in = t.input(self, k);
      const std::size_t w = t.value_of(in).cols();
      if (t.tracks(in)) {
        Array& d = t.accumulate(in);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < w; ++j) d(r, j) += g(r, off + j);
      }
      off += w;
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape->record("sum", Array::scalar(s), {a}, [](Tape& t, std::uint32_t self) {
    const double g = t.grad_of(self)[0];
    for (double& d : t.accumulate(t.input(self, 0)).data()) d += g;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  require(n > 0, "mean of empty array");
  return scale(sum(a), 1.0 / n);
}

Var sum_squares(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  return a.tape->record("sum_squares", Array::scalar(s), {a}, [](Tape& t, std::uint32_t self) {
    const double g = t.grad_of(self)[0];
    const auto ia = t.input(self, 0);
    const auto x = t.value_of(ia).data();
    auto d = t.accumulate(ia).data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * g * x[i];
  });
}

Var cosine(Var a, Var b) {
  require_config(a.value().size() == b.value().size(), "cosine: element counts differ");
  const auto x = a.value().data();
  const auto y = b.value().data();
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xy += x[i] * y[i];
    xx += x[i] * x[i];
    yy += y[i] * y[i];
  }
  const double nx = std::sqrt(xx), ny = std::sqrt(yy);
  const bool degenerate = nx == 0.0 || ny == 0.0;
  const double c = degenerate ? 0.0 : xy / (nx * ny);
  return a.tape->record("cosine", Array::scalar(c), {a, b},
                        [nx, ny, c, degenerate](Tape& t, std::uint32_t self) {
                          if (degenerate) return;
                          const double g = t.grad_of(self)[0];
                          const auto ia = t.input(self, 0), ib = t.input(self, 1);
                          const auto x = t.value_of(ia).data();
                          const auto y = t.value_of(ib).data();
                          if (t.tracks(ia)) {
                            auto d = t.accumulate(ia).data();
                            for (std::size_t i = 0; i < d.size(); ++i)
                              d[i] += g * (y[i] / (nx * ny) - c * x[i] / (nx * nx));
                          }
                          if (t.tracks(ib)) {
                            auto d = t.accumulate(ib).data();
                            for (std::size_t i = 0; i < d.size(); ++i)
                              d[i] += g * (x[i] / (nx * ny) - c * y[i] / (ny * ny));
                          }
                        });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Array& lv = logits.value();
  require_config(targets.size() == lv.rows(), "cross_entropy: one target per row required");
  require(lv.rows() > 0, "cross_entropy: empty logits");
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    require_config(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < lv.cols(),
                   "cross_entropy: target out of range");
    loss += row_lse(lv.row(r).data(), lv.cols()) - lv(r, static_cast<std::size_t>(targets[r]));
  }
  loss /= static_cast<double>(lv.rows());
  std::vector<int> keep(targets.begin(), targets.end());
  return logits.tape->record("cross_entropy", Array::scalar(loss), {logits},
                             [keep = std::move(keep)](Tape& t, std::uint32_t self) {
                               const double g = t.grad_of(self)[0];
                               const auto il = t.input(self, 0);
                               const Array& lv = t.value_of(il);
                               Array& d = t.accumulate(il);
                               const double k = g / static_cast<double>(lv.rows());
                               for (std::size_t r = 0; r < lv.rows(); ++r) {
                                 const auto p = softmax(lv.row(r));
                                 for (std::size_t j = 0; j < lv.cols(); ++j) d(r, j) += k * p[j];
                                 d(r, static_cast<std::size_t>(keep[r])) -= k;
                               }
                             });
}

Var kl_to_logits(const Array& target_probs, Var logits) {
  const Array& lv = logits.value();
  require_same_shape(target_probs, lv, "kl_to_logits");
  require(lv.rows() > 0, "kl_to_logits: empty logits");
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    const auto lq = log_softmax(lv.row(r));
    for (std::size_t j = 0; j < lv.cols(); ++j) {
      const double p = target_probs(r, j);
      if (p > 0.0) loss += p * (std::log(p) - lq[j]);
    }
  }
  loss /= static_cast<double>(lv.rows());
  return logits.tape->record("kl", Array::scalar(loss), {logits},
                             [target_probs](Tape& t, std::uint32_t self) {
                               const double g = t.grad_of(self)[0];
                               const auto il = t.input(self, 0);
                               const Array& lv = t.value_of(il);
                               Array& d = t.accumulate(il);
                               const double k = g / static_cast<double>(lv.rows());
                               for (std::size_t r = 0; r < lv.rows(); ++r) {
                                 const auto q = softmax(lv.row(r));
                                 double mass = 0.0;
                                 for (std::size_t j = 0; j < lv.cols(); ++j) mass += target_probs(r, j);
                                 for (std::size_t j = 0; j < lv.cols(); ++j)
                                   d(r, j) += k * (mass * q[j] - target_probs(r, j));
                               }
                             });
}

Var kl_on_support(std::span<const SupportDistribution> targets, Var logits) {
  const Array& lv = logits.value();
  require_config(targets.size() == lv.rows(), "kl_on_support: one support per row required");
  require(lv.rows() > 0, "kl_on_support: empty logits");
  double loss = 0.0;
  std::vector<SupportDistribution> keep(targets.begin(), targets.end());
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    const auto& s = keep[r];
    require(s.ids.size() == s.probs.size() && !s.ids.empty(), "kl_on_support: malformed support row");
    std::vector<double> sub(s.ids.size());
    for (std::size_t i = 0; i < s.ids.size(); ++i) {
      require(s.ids[i] >= 0 && static_cast<std::size_t>(s.ids[i]) < lv.cols(), "kl_on_support: id out of range");
      sub[i] = lv(r, static_cast<std::size_t>(s.ids[i]));
    }
    const auto lq = log_softmax(sub);
    for (std::size_t i = 0; i < sub.size(); ++i)
      if (s.probs[i] > 0.0) loss += s.probs[i] * (std::log(s.probs[i]) - lq[i]);
  }
  loss /= static_cast<double>(lv.rows());
  return logits.tape->record("kl_support", Array::scalar(loss), {logits},
                             [keep = std::move(keep)](Tape& t, std::uint32_t self) {
                               const double g = t.grad_of(self)[0];
                               const auto il = t.input(self, 0);
                               const Array& lv = t.value_of(il);
                               Array& d = t.accumulate(il);
                               const double k = g / static_cast<double>(lv.rows());
                               for (std::size_t r = 0; r < lv.rows(); ++r) {
                                 const auto& s = keep[r];
                                 std::vector<double> sub(s.ids.size());
                                 double mass = 0.0;
                                 for (std::size_t i = 0; i < s.ids.size(); ++i) {
                                   sub[i] = lv(r, static_cast<std::size_t>(s.ids[i]));
                                   mass += s.probs[i];
                                 }
                                 const auto q = softmax(sub);
                                 for (std::size_t i = 0; i < s.ids.size(); ++i)
                                   d(r, static_cast<std::size_t>(s.ids[i])) += k * (mass * q[i] - s.probs[i]);
                               }
                             });
}

Var bce_with_logit(Var a, double target) {
  require_scalar(a.value(), "bce_with_logit");
  const double x = a.value()[0];
  const double loss = softplus(x) - target * x;
  return a.tape->record("bce", Array::scalar(loss), {a}, [target](Tape& t, std::uint32_t self) {
    const auto ia = t.input(self, 0);
    t.accumulate(ia)[0] += t.grad_of(self)[0] * (sigmoid(t.value_of(ia)[0]) - target);
  });
}

Var clip_row_norms(Var e, Var h, double gmax) {
  const Array& ev = e.value();
  const Array& hv = h.value();
  require_same_shape(ev, hv, "clip_row_norms");
  Array out = ev;
  std::vector<double> ne(ev.rows()), nh(ev.rows());
  std::vector<char> clipped(ev.rows(), 0);
  for (std::size_t r = 0; r < ev.rows(); ++r) {
    double se = 0.0, sh = 0.0;
    for (std::size_t j = 0; j < ev.cols(); ++j) {
      se += ev(r, j) * ev(r, j);
      sh += hv(r, j) * hv(r, j);
    }
    ne[r] = std::sqrt(se);
    nh[r] = std::sqrt(sh);
    const double limit = gmax * nh[r];
    if (ne[r] > limit) {
      clipped[r] = 1;
      const double f = ne[r] > 0.0 ? limit / ne[r] : 0.0;
      for (double& v : out.row(r)) v *= f;
    }
  }
  return e.tape->record(
      "clip_row_norms", std::move(out), {e, h},
      [gmax, ne = std::move(ne), nh = std::move(nh), clipped = std::move(clipped)](Tape& t, std::uint32_t self) {
        const Array& g = t.grad_of(self);
        const auto ie = t.input(self, 0), ih = t.input(self, 1);
        const Array& ev = t.value_of(ie);
        const Array& hv = t.value_of(ih);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          if (!clipped[r]) {
            if (t.tracks(ie)) {
              auto d = t.accumulate(ie).row(r);
              const auto gr = g.row(r);
              for (std::size_t j = 0; j < d.size(); ++j) d[j] += gr[j];
            }
            continue;
          }
          if (ne[r] == 0.0) continue;
          double edg = 0.0;
          for (std::size_t j = 0; j < g.cols(); ++j) edg += ev(r, j) * g(r, j);
          edg /= ne[r];  // e_hat . g
          if (t.tracks(ie)) {
            const double f = gmax * nh[r] / ne[r];
            auto d = t.accumulate(ie).row(r);
            for (std::size_t j = 0; j < d.size(); ++j) d[j] += f * (g(r, j) - ev(r, j) / ne[r] * edg);
          }
          if (t.tracks(ih) && nh[r] > 0.0) {
            auto d = t.accumulate(ih).row(r);
            for (std::size_t j = 0; j < d.size(); ++j) d[j] += gmax * edg * hv(r, j) / nh[r];
          }
        }
      });
}

}  // namespace paving::num
