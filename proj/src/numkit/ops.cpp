#include "seqrisk/numkit/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "seqrisk/numkit/graph.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace numkit {

namespace {

using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Graph::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void check_finite(const Tensor& t, const char* op) {
  for (Scalar v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string("non-finite value produced by ") + op + " (shape " +
                           shape_string(t.shape()) + ")");
    }
  }
}

Tensor finish(Tensor out, const char* op, std::initializer_list<const Tensor*> inputs, Graph::BackwardFn fn) {
  check_finite(out, op);
  if (tracking(inputs)) {
    out.set_requires_grad(true);
    Graph::active()->record(out, std::move(fn));
  }
  return out;
}

// Number of times b repeats inside a under suffix broadcasting.
std::size_t suffix_repeats(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!ok) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(sb) + " onto " + shape_string(sa));
  }
  return a.numel() / b.numel();
}

std::size_t rows_of(const Tensor& x) { return x.numel() / static_cast<std::size_t>(x.dim(-1)); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw mismatch();
  const int m = a.dim(-2);
  const int k = a.dim(-1);
  const int n = b.dim(-1);
  if (b.dim(-2) != k) throw mismatch();

  if (b.rank() == 2) {
    const int rows = static_cast<int>(rows_of(a));
    Shape out_shape = a.shape();
    out_shape.back() = n;
    Tensor out(out_shape);
    MutMap(out.mutable_values().data(), rows, n).noalias() =
        ConstMap(a.values().data(), rows, k) * ConstMap(b.values().data(), k, n);
    return finish(out, "matmul", {&a, &b}, [a, b, out, rows, k, n]() mutable {
      ConstMap dc(out.grad().data(), rows, n);
      if (a.requires_grad()) {
        MutMap(a.mutable_grad().data(), rows, k).noalias() += dc * ConstMap(b.values().data(), k, n).transpose();
      }
      if (b.requires_grad()) {
        MutMap(b.mutable_grad().data(), k, n).noalias() += ConstMap(a.values().data(), rows, k).transpose() * dc;
      }
    });
  }

  if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    throw mismatch();
  }
  const std::size_t batch = a.numel() / (static_cast<std::size_t>(m) * k);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  const std::size_t sa = static_cast<std::size_t>(m) * k, sb = static_cast<std::size_t>(k) * n,
                    sc = static_cast<std::size_t>(m) * n;
  for (std::size_t i = 0; i < batch; ++i) {
    MutMap(out.mutable_values().data() + i * sc, m, n).noalias() =
        ConstMap(a.values().data() + i * sa, m, k) * ConstMap(b.values().data() + i * sb, k, n);
  }
  return finish(out, "matmul", {&a, &b}, [a, b, out, batch, m, k, n, sa, sb, sc]() mutable {
    for (std::size_t i = 0; i < batch; ++i) {
      ConstMap dc(out.grad().data() + i * sc, m, n);
      if (a.requires_grad()) {
        MutMap(a.mutable_grad().data() + i * sa, m, k).noalias() +=
            dc * ConstMap(b.values().data() + i * sb, k, n).transpose();
      }
      if (b.requires_grad()) {
        MutMap(b.mutable_grad().data() + i * sb, k, n).noalias() +=
            ConstMap(a.values().data() + i * sa, m, k).transpose() * dc;
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (b.rank() > a.rank()) return add(b, a);
  const std::size_t reps = suffix_repeats(a, b, "add");
  const std::size_t nb = b.numel();
  Tensor out(a.shape());
  auto o = out.mutable_values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t j = 0; j < nb; ++j) o[r * nb + j] = av[r * nb + j] + bv[j];
  }
  return finish(out, "add", {&a, &b}, [a, b, out, reps, nb]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t j = 0; j < nb; ++j) gb[j] += g[r * nb + j];
      }
    }
  });
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  if (b.rank() > a.rank()) return multiply(b, a);
  const std::size_t reps = suffix_repeats(a, b, "multiply");
  const std::size_t nb = b.numel();
  Tensor out(a.shape());
  auto o = out.mutable_values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t j = 0; j < nb; ++j) o[r * nb + j] = av[r * nb + j] * bv[j];
  }
  return finish(out, "multiply", {&a, &b}, [a, b, out, reps, nb]() mutable {
    auto g = out.grad();
    auto av = a.values();
    auto bv = b.values();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t j = 0; j < nb; ++j) ga[r * nb + j] += g[r * nb + j] * bv[j];
      }
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t r = 0; r < reps; ++r) {
        for (std::size_t j = 0; j < nb; ++j) gb[j] += g[r * nb + j] * av[r * nb + j];
      }
    }
  });
}

Tensor scale(const Tensor& x, Scalar factor) {
  Tensor out(x.shape());
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factor;
  return finish(out, "scale", {&x}, [x, out, factor]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * factor;
  });
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] > 0 ? xv[i] : Scalar(0);
  return finish(out, "relu", {&x}, [x, out]() mutable {
    auto g = out.grad();
    auto xv = x.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0) gx[i] += g[i];
    }
  });
}

Tensor exp(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(xv[i]);
  return finish(out, "exp", {&x}, [x, out]() mutable {
    auto g = out.grad();
    auto ov = out.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * ov[i];
  });
}

Tensor log(const Tensor& x) {
  Tensor out(x.shape());
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(xv[i]);
  return finish(out, "log", {&x}, [x, out]() mutable {
    auto g = out.grad();
    auto xv = x.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] / xv[i];
  });
}

Tensor softmax(const Tensor& x) {
  const std::size_t v = static_cast<std::size_t>(x.dim(-1));
  const std::size_t rows = rows_of(x);
  Tensor out(x.shape());
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* in = xv.data() + r * v;
    Scalar* dst = o.data() + r * v;
    const Scalar mx = *std::max_element(in, in + v);
    Scalar total = 0;
    for (std::size_t j = 0; j < v; ++j) {
      dst[j] = std::exp(in[j] - mx);
      total += dst[j];
    }
    for (std::size_t j = 0; j < v; ++j) dst[j] /= total;
  }
  return finish(out, "softmax", {&x}, [x, out, rows, v]() mutable {
    auto g = out.grad();
    auto y = out.values();
    auto gx = x.mutable_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      Scalar dot = 0;
      for (std::size_t j = 0; j < v; ++j) dot += g[r * v + j] * y[r * v + j];
      for (std::size_t j = 0; j < v; ++j) gx[r * v + j] += y[r * v + j] * (g[r * v + j] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t v = static_cast<std::size_t>(x.dim(-1));
  const std::size_t rows = rows_of(x);
  Tensor out(x.shape());
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* in = xv.data() + r * v;
    Scalar* dst = o.data() + r * v;
    const Scalar mx = *std::max_element(in, in + v);
    Scalar total = 0;
    for (std::size_t j = 0; j < v; ++j) total += std::exp(in[j] - mx);
    const Scalar lse = mx + std::log(total);
    for (std::size_t j = 0; j < v; ++j) dst[j] = in[j] - lse;
  }
  return finish(out, "log_softmax", {&x}, [x, out, rows, v]() mutable {
    auto g = out.grad();
    auto y = out.values();
    auto gx = x.mutable_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      Scalar total = 0;
      for (std::size_t j = 0; j < v; ++j) total += g[r * v + j];
      for (std::size_t j = 0; j < v; ++j) gx[r * v + j] += g[r * v + j] - std::exp(y[r * v + j]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps) {
  const std::size_t d = static_cast<std::size_t>(x.dim(-1));
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                     " do not match input " + shape_string(x.shape()));
  }
  const std::size_t rows = rows_of(x);
  Tensor out(x.shape());
  // Normalized activations and inverse deviations, kept for the backward rule.
  auto xhat = std::make_shared<std::vector<Scalar>>(x.numel());
  auto inv_std = std::make_shared<std::vector<Scalar>>(rows);
  auto o = out.mutable_values();
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* in = xv.data() + r * d;
    Scalar mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<Scalar>(d);
    Scalar var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<Scalar>(d);
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const Scalar h = (in[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      o[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return finish(out, "layer_norm", {&x, &gain, &bias}, [x, gain, bias, out, xhat, inv_std, rows, d]() mutable {
    auto g = out.grad();
    auto gv = gain.values();
    if (gain.requires_grad() || bias.requires_grad()) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          if (gain.requires_grad()) gain.mutable_grad()[j] += g[r * d + j] * (*xhat)[r * d + j];
          if (bias.requires_grad()) bias.mutable_grad()[j] += g[r * d + j];
        }
      }
    }
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    const Scalar inv_d = Scalar(1) / static_cast<Scalar>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      Scalar mean_dh = 0, mean_dh_h = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const Scalar dh = g[r * d + j] * gv[j];
        mean_dh += dh;
        mean_dh_h += dh * (*xhat)[r * d + j];
      }
      mean_dh *= inv_d;
      mean_dh_h *= inv_d;
      for (std::size_t j = 0; j < d; ++j) {
        const Scalar dh = g[r * d + j] * gv[j];
        gx[r * d + j] += (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
      }
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be 2-D, got " + shape_string(table.shape()));
  if (ids.empty()) throw ContractError("embedding: empty id list");
  const int vocab = table.dim(0);
  const std::size_t d = static_cast<std::size_t>(table.dim(1));
  std::vector<int> rows(ids.begin(), ids.end());
  Tensor out({static_cast<int>(rows.size()), static_cast<int>(d)});
  auto o = out.mutable_values();
  auto tv = table.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= vocab) {
      throw ContractError("embedding: id " + std::to_string(rows[i]) + " outside vocabulary of " +
                          std::to_string(vocab));
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(rows[i]) * d, d, o.data() + i * d);
  }
  return finish(out, "embedding", {&table}, [table, out, rows, d]() mutable {
    auto g = out.grad();
    auto gt = table.mutable_grad();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Scalar* dst = gt.data() + static_cast<std::size_t>(rows[i]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
    }
  });
}

Tensor pick(const Tensor& x, std::span<const int> ids) {
  const std::size_t rows = rows_of(x);
  const int v = x.dim(-1);
  if (ids.size() != rows) {
    throw ShapeError("pick: " + std::to_string(ids.size()) + " ids for " + std::to_string(rows) + " rows of " +
                     shape_string(x.shape()));
  }
  std::vector<int> idx(ids.begin(), ids.end());
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] < 0 || idx[r] >= v) throw ContractError("pick: index " + std::to_string(idx[r]) + " out of range");
    o[r] = xv[r * static_cast<std::size_t>(v) + static_cast<std::size_t>(idx[r])];
  }
  return finish(out, "pick", {&x}, [x, out, idx, v]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      gx[r * static_cast<std::size_t>(v) + static_cast<std::size_t>(idx[r])] += g[r];
    }
  });
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
  const int r = x.rank();
  if (axis0 < 0) axis0 += r;
  if (axis1 < 0) axis1 += r;
  if (axis0 < 0 || axis1 < 0 || axis0 >= r || axis1 >= r) {
    throw ShapeError("transpose: axes out of range for " + shape_string(x.shape()));
  }
  Shape out_shape = x.shape();
  std::swap(out_shape[static_cast<std::size_t>(axis0)], out_shape[static_cast<std::size_t>(axis1)]);
  // Source offset for every destination element.
  std::vector<std::size_t> in_strides(static_cast<std::size_t>(r));
  std::size_t s = 1;
  for (int i = r - 1; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] = s;
    s *= static_cast<std::size_t>(x.shape()[static_cast<std::size_t>(i)]);
  }
  std::vector<std::size_t> perm_strides = in_strides;
  std::swap(perm_strides[static_cast<std::size_t>(axis0)], perm_strides[static_cast<std::size_t>(axis1)]);
  auto offsets = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<int> index(static_cast<std::size_t>(r), 0);
  std::size_t src = 0;
  for (std::size_t n = 0; n < x.numel(); ++n) {
    (*offsets)[n] = src;
    for (int i = r - 1; i >= 0; --i) {
      const auto ui = static_cast<std::size_t>(i);
      if (++index[ui] < out_shape[ui]) {
        src += perm_strides[ui];
        break;
      }
      src -= perm_strides[ui] * static_cast<std::size_t>(out_shape[ui] - 1);
      index[ui] = 0;
    }
  }
  Tensor out(out_shape);
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t n = 0; n < o.size(); ++n) o[n] = xv[(*offsets)[n]];
  return finish(out, "transpose", {&x}, [x, out, offsets]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t n = 0; n < g.size(); ++n) gx[(*offsets)[n]] += g[n];
  });
}

Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, Scalar value) {
  if (mask.empty() || x.numel() % mask.size() != 0) {
    throw ShapeError("masked_fill: mask of " + std::to_string(mask.size()) + " entries for " +
                     shape_string(x.shape()));
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  Tensor out(x.shape());
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = m[i % m.size()] ? value : xv[i];
  return finish(out, "masked_fill", {&x}, [x, out, m]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (!m[i % m.size()]) gx[i] += g[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  Scalar total = 0;
  for (Scalar v : x.values()) total += v;
  Tensor out = Tensor::scalar(total);
  return finish(out, "sum", {&x}, [x, out]() mutable {
    const Scalar g = out.grad()[0];
    for (Scalar& gx : x.mutable_grad()) gx += g;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.numel())); }

Tensor sum_last(const Tensor& x) {
  const std::size_t v = static_cast<std::size_t>(x.dim(-1));
  const std::size_t rows = rows_of(x);
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    Scalar total = 0;
    for (std::size_t j = 0; j < v; ++j) total += xv[r * v + j];
    o[r] = total;
  }
  return finish(out, "sum_last", {&x}, [x, out, rows, v]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < v; ++j) gx[r * v + j] += g[r];
    }
  });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  const int r = a.rank();
  if (axis < 0) axis += r;
  bool ok = b.rank() == r && axis >= 0 && axis < r;
  for (int i = 0; ok && i < r; ++i) {
    if (i != axis && a.shape()[static_cast<std::size_t>(i)] != b.shape()[static_cast<std::size_t>(i)]) ok = false;
  }
  if (!ok) {
    throw ShapeError("concat: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(i)]);
  for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(a.shape()[static_cast<std::size_t>(i)]);
  const std::size_t na = static_cast<std::size_t>(a.dim(axis)) * inner;
  const std::size_t nb = static_cast<std::size_t>(b.dim(axis)) * inner;
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] += b.dim(axis);
  Tensor out(out_shape);
  auto o = out.mutable_values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < outer; ++i) {
    std::copy_n(av.data() + i * na, na, o.data() + i * (na + nb));
    std::copy_n(bv.data() + i * nb, nb, o.data() + i * (na + nb) + na);
  }
  return finish(out, "concat", {&a, &b}, [a, b, out, outer, na, nb]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < outer; ++i) {
        for (std::size_t j = 0; j < na; ++j) ga[i * na + j] += g[i * (na + nb) + j];
      }
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < outer; ++i) {
        for (std::size_t j = 0; j < nb; ++j) gb[i * nb + j] += g[i * (na + nb) + na + j];
      }
    }
  });
}

Tensor index_select(const Tensor& x, std::span<const int> indices) {
  if (indices.empty()) throw ContractError("index_select: empty index list");
  const int n0 = x.dim(0);
  const std::size_t inner = x.numel() / static_cast<std::size_t>(n0);
  std::vector<int> idx(indices.begin(), indices.end());
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<int>(idx.size());
  Tensor out(out_shape);
  auto o = out.mutable_values();
  auto xv = x.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n0) throw ContractError("index_select: index out of range");
    std::copy_n(xv.data() + static_cast<std::size_t>(idx[i]) * inner, inner, o.data() + i * inner);
  }
  return finish(out, "index_select", {&x}, [x, out, idx, inner]() mutable {
    auto g = out.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < inner; ++j) gx[static_cast<std::size_t>(idx[i]) * inner + j] += g[i * inner + j];
    }
  });
}

Tensor dropout(const Tensor& x, Scalar rate, std::mt19937_64& rng) {
  if (rate <= 0) return x;
  if (rate >= 1) throw ContractError("dropout rate must be below 1");
  Tensor mask(x.shape());
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const Scalar kept = Scalar(1) / (Scalar(1) - rate);
  for (Scalar& m : mask.mutable_values()) m = keep(rng) ? kept : Scalar(0);
  return multiply(x, mask);
}

}  // namespace numkit
SEQRISK_END_NAMESPACE
