#include "vst/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "vst/errors.hpp"

namespace vst {

namespace {

constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;
constexpr double kInvSqrt2Pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

using detail::Node;

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank) {
  auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

void require_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

// Outer / axis / inner decomposition for reductions along one axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

enum class Binary { add, sub, mul };

Tensor binary(const Tensor& a_in, const Tensor& b_in, Binary kind) {
  const Tensor* a = &a_in;
  const Tensor* b = &b_in;
  if (!is_suffix(a->shape(), b->shape())) {
    if (kind != Binary::sub && is_suffix(b->shape(), a->shape())) {
      std::swap(a, b);
    } else {
      throw DimensionError("elementwise op: shapes " + to_string(a_in.shape()) + " and " + to_string(b_in.shape()) +
                           " are not compatible");
    }
  }
  auto av = a->values();
  auto bv = b->values();
  const std::size_t nb = bv.size();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    double y = bv[i % nb];
    switch (kind) {
      case Binary::add: out[i] = av[i] + y; break;
      case Binary::sub: out[i] = av[i] - y; break;
      case Binary::mul: out[i] = av[i] * y; break;
    }
  }
  const char* name = kind == Binary::add ? "add" : kind == Binary::sub ? "sub" : "mul";
  return Tensor::from_op(name, a->shape(), std::move(out), {*a, *b}, [kind, nb](Node& self) {
    const auto& g = self.grad;
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      if (kind == Binary::mul) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb.value[i % nb];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      switch (kind) {
        case Binary::add:
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
          break;
        case Binary::sub:
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] -= g[i];
          break;
        case Binary::mul:
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i] * pa.value[i];
          break;
      }
    }
  });
}

}  // namespace

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::mul); }

Tensor scale(const Tensor& a, double factor) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
  return Tensor::from_op("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto& ga = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * factor;
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2 || as[as.size() - 1] != bs[bs.size() - 2]) {
    throw DimensionError("matmul: cannot multiply " + to_string(as) + " by " + to_string(bs));
  }
  const std::size_t m = as[as.size() - 2], k = as.back(), n = bs.back();
  Shape abatch(as.begin(), as.end() - 2), bbatch(bs.begin(), bs.end() - 2);
  const std::size_t rank = std::max(abatch.size(), bbatch.size());
  Shape batch(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t ea = i + abatch.size() >= rank ? abatch[i + abatch.size() - rank] : 1;
    std::size_t eb = i + bbatch.size() >= rank ? bbatch[i + bbatch.size() - rank] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("matmul: batch axes of " + to_string(as) + " and " + to_string(bs) + " do not broadcast");
    }
    batch[i] = std::max(ea, eb);
  }
  const std::size_t nbatch = numel(batch);
  const std::size_t a_batch = numel(abatch), b_batch = numel(bbatch);

  // Per output batch, which a/b matrix it reads.
  std::vector<std::size_t> a_off(nbatch), b_off(nbatch);
  {
    auto astr = strides_of(abatch), bstr = strides_of(bbatch);
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t t = 0; t < nbatch; ++t) {
      std::size_t ao = 0, bo = 0;
      for (std::size_t i = 0; i < rank; ++i) {
        if (i + abatch.size() >= rank) {
          std::size_t ai = i + abatch.size() - rank;
          if (abatch[ai] != 1) ao += idx[i] * astr[ai];
        }
        if (i + bbatch.size() >= rank) {
          std::size_t bi = i + bbatch.size() - rank;
          if (bbatch[bi] != 1) bo += idx[i] * bstr[bi];
        }
      }
      a_off[t] = ao;
      b_off[t] = bo;
      for (std::size_t i = rank; i-- > 0;) {
        if (++idx[i] < batch[i]) break;
        idx[i] = 0;
      }
    }
  }

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(nbatch * m * n);
  const double* pa = a.values().data();
  const double* pb = b.values().data();

  // A shared right operand turns the whole batch into one tall product.
  const bool shared_rhs = b_batch == 1 && a_batch == nbatch;
  if (shared_rhs) {
    MutMap(out.data(), static_cast<Eigen::Index>(nbatch * m), static_cast<Eigen::Index>(n)).noalias() =
        ConstMap(pa, static_cast<Eigen::Index>(nbatch * m), static_cast<Eigen::Index>(k)) *
        ConstMap(pb, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  } else {
    for (std::size_t t = 0; t < nbatch; ++t) {
      MutMap(out.data() + t * m * n, m, n).noalias() = ConstMap(pa + a_off[t] * m * k, m, k) *
                                                       ConstMap(pb + b_off[t] * k * n, k, n);
    }
  }

  return Tensor::from_op(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [m, k, n, nbatch, shared_rhs, a_off = std::move(a_off), b_off = std::move(b_off)](Node& self) {
        Node& na = parent(self, 0);
        Node& nb = parent(self, 1);
        const double* g = self.grad.data();
        if (shared_rhs) {
          const auto rows = static_cast<Eigen::Index>(nbatch * m);
          ConstMap G(g, rows, n);
          if (na.requires_grad) {
            MutMap(na.grad_buffer().data(), rows, k).noalias() += G * ConstMap(nb.value.data(), k, n).transpose();
          }
          if (nb.requires_grad) {
            MutMap(nb.grad_buffer().data(), k, n).noalias() += ConstMap(na.value.data(), rows, k).transpose() * G;
          }
          return;
        }
        double* ga = na.requires_grad ? na.grad_buffer().data() : nullptr;
        double* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
        for (std::size_t t = 0; t < nbatch; ++t) {
          ConstMap G(g + t * m * n, m, n);
          if (ga) {
            MutMap(ga + a_off[t] * m * k, m, k).noalias() += G * ConstMap(nb.value.data() + b_off[t] * k * n, k, n).transpose();
          }
          if (gb) {
            MutMap(gb + b_off[t] * k * n, k, n).noalias() += ConstMap(na.value.data() + a_off[t] * m * k, m, k).transpose() * G;
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw DimensionError("linear: weight must be rank 2, got " + to_string(weight.shape()));
  auto y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

Tensor softmax(const Tensor& x, std::ptrdiff_t axis_in) {
  const auto axis = normalize_axis(axis_in, x.rank());
  const auto sp = split_at(x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j) {
        double v = xv[base + j * sp.inner];
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
          throw NumericError("softmax: NaN or +inf in input");
        }
        mx = std::max(mx, v);
      }
      // -inf entries are additive masks; a fully masked slice has no distribution.
      if (!std::isfinite(mx)) throw NumericError("softmax: every entry of a slice is -inf");
      double total = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        double e = std::exp(xv[base + j * sp.inner] - mx);
        out[base + j * sp.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < sp.n; ++j) out[base + j * sp.inner] /= total;
    }
  }
  return Tensor::from_op("softmax", x.shape(), std::move(out), {x}, [sp](Node& self) {
    auto& gx = parent(self, 0).grad_buffer();
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.n * sp.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.n; ++j) dot += g[base + j * sp.inner] * y[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.n; ++j) {
          const auto p = base + j * sp.inner;
          gx[p] += y[p] * (g[p] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = x.extent(-1);
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gain " + to_string(gain.shape()) + " / bias " + to_string(bias.shape()) +
                         " do not match last axis of " + to_string(x.shape()));
  }
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  const std::size_t rows = xv.size() / n;
  std::vector<double> out(xv.size()), xhat(xv.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return Tensor::from_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& nx = parent(self, 0);
        Node& ng = parent(self, 1);
        Node& nbias = parent(self, 2);
        const auto& g = self.grad;
        if (ng.requires_grad) {
          auto& gg = ng.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % n] += g[i] * xhat[i];
        }
        if (nbias.requires_grad) {
          auto& gb = nbias.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
        }
        if (nx.requires_grad) {
          auto& gx = nx.grad_buffer();
          const auto& gain_v = ng.value;
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g[r * n + j] * gain_v[j];
              mean_d += d;
              mean_dh += d * xhat[r * n + j];
            }
            mean_d /= static_cast<double>(n);
            mean_dh /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g[r * n + j] * gain_v[j];
              gx[r * n + j] += inv_std[r] * (d - mean_d - xhat[r * n + j] * mean_dh);
            }
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = 0.5 * xv[i] * std::erfc(-xv[i] * kInvSqrt2);
  return Tensor::from_op("gelu", x.shape(), std::move(out), {x}, [](Node& self) {
    Node& nx = parent(self, 0);
    auto& gx = nx.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = nx.value[i];
      const double cdf = 0.5 * std::erfc(-v * kInvSqrt2);
      const double pdf = std::exp(-0.5 * v * v) * kInvSqrt2Pi;
      gx[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2) throw DimensionError("cross entropy expects [batch, classes], got " + to_string(logits.shape()));
  const std::size_t rows = logits.extent(0), k = logits.extent(1);
  if (targets.size() != rows) {
    throw ContractError("cross entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(rows) +
                        " rows");
  }
  auto xv = logits.values();
  require_finite(xv, "cross entropy");
  std::vector<double> probs(xv.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= k) {
      throw ContractError("cross entropy: target " + std::to_string(targets[r]) + " out of range for " +
                          std::to_string(k) + " classes");
    }
    const double* row = xv.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    loss += lse - row[targets[r]];
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - lse);
  }
  loss /= static_cast<double>(rows);
  std::vector<std::size_t> t(targets.begin(), targets.end());
  return Tensor::from_op("cross_entropy", {1}, {loss}, {logits},
                         [rows, k, probs = std::move(probs), t = std::move(t)](Node& self) {
                           auto& gx = parent(self, 0).grad_buffer();
                           const double g = self.grad[0] / static_cast<double>(rows);
                           for (std::size_t r = 0; r < rows; ++r) {
                             for (std::size_t j = 0; j < k; ++j) {
                               gx[r * k + j] += g * (probs[r * k + j] - (j == t[r] ? 1.0 : 0.0));
                             }
                           }
                         });
}

Tensor sum(const Tensor& x) {
  auto xv = x.values();
  double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  return Tensor::from_op("sum", {1}, {s}, {x}, [](Node& self) {
    auto& gx = parent(self, 0).grad_buffer();
    for (auto& v : gx) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mean_axis(const Tensor& x, std::ptrdiff_t axis_in) {
  const auto axis = normalize_axis(axis_in, x.rank());
  const auto sp = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape.push_back(1);
  auto xv = x.values();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(sp.n);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = 0; j < sp.n; ++j) {
      const double* src = xv.data() + (o * sp.n + j) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t in = 0; in < sp.inner; ++in) dst[in] += src[in];
    }
  }
  for (auto& v : out) v *= inv;
  return Tensor::from_op("mean_axis", std::move(out_shape), std::move(out), {x}, [sp, inv](Node& self) {
    auto& gx = parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t j = 0; j < sp.n; ++j) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
          gx[(o * sp.n + j) * sp.inner + in] += self.grad[o * sp.inner + in] * inv;
        }
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape) + " changes element count");
  }
  auto xv = x.values();
  return Tensor::from_op("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                         [](Node& self) {
                           auto& gx = parent(self, 0).grad_buffer();
                           for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                         });
}

Tensor gather(const Tensor& x, Shape out_shape, std::vector<std::int64_t> index) {
  if (numel(out_shape) != index.size()) {
    throw DimensionError("gather: index length " + std::to_string(index.size()) + " does not match shape " +
                         to_string(out_shape));
  }
  auto xv = x.values();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto src = index[i];
    if (src >= static_cast<std::int64_t>(xv.size())) throw DimensionError("gather: index out of range");
    out[i] = src < 0 ? 0.0 : xv[static_cast<std::size_t>(src)];
  }
  return Tensor::from_op("gather", std::move(out_shape), std::move(out), {x},
                         [index = std::move(index)](Node& self) {
                           auto& gx = parent(self, 0).grad_buffer();
                           for (std::size_t i = 0; i < index.size(); ++i) {
                             if (index[i] >= 0) gx[static_cast<std::size_t>(index[i])] += self.grad[i];
                           }
                         });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const auto& xs = x.shape();
  const std::size_t r = xs.size();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) throw DimensionError("permute: axis list length does not match rank of " + to_string(xs));
  for (auto a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: invalid axis list for " + to_string(xs));
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = xs[axes[i]];
  const auto in_str = strides_of(xs);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) step[i] = in_str[axes[i]];
  std::vector<std::int64_t> index(x.size());
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    index[i] = static_cast<std::int64_t>(off);
    for (std::size_t d = r; d-- > 0;) {
      off += step[d];
      if (++idx[d] < out_shape[d]) break;
      off -= step[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return gather(x, std::move(out_shape), std::move(index));
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes) {
  return permute(x, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor transpose_last(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last needs rank >= 2, got " + to_string(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

Tensor slice(const Tensor& x, std::ptrdiff_t axis_in, std::size_t begin, std::size_t end) {
  const auto axis = normalize_axis(axis_in, x.rank());
  const auto sp = split_at(x.shape(), axis);
  if (begin >= end || end > sp.n) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                         to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t len = end - begin;
  std::vector<std::int64_t> index;
  index.reserve(sp.outer * len * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t j = begin; j < end; ++j) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        index.push_back(static_cast<std::int64_t>((o * sp.n + j) * sp.inner + in));
      }
    }
  }
  return gather(x, std::move(out_shape), std::move(index));
}

Tensor roll(const Tensor& x, std::span<const std::ptrdiff_t> shifts) {
  const auto& xs = x.shape();
  const std::size_t r = xs.size();
  if (shifts.size() != r) throw DimensionError("roll: need one shift per axis of " + to_string(xs));
  const auto str = strides_of(xs);
  std::vector<std::int64_t> index(x.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < r; ++d) {
      const auto n = static_cast<std::ptrdiff_t>(xs[d]);
      auto src = (static_cast<std::ptrdiff_t>(idx[d]) - shifts[d]) % n;
      if (src < 0) src += n;
      off += static_cast<std::size_t>(src) * str[d];
    }
    index[i] = static_cast<std::int64_t>(off);
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < xs[d]) break;
      idx[d] = 0;
    }
  }
  return gather(x, xs, std::move(index));
}

}  // namespace vst
