#include "homotion/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "homotion/errors.hpp"

namespace homotion::tensor {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using Offsets = std::shared_ptr<const std::vector<std::size_t>>;

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

// Offset into a source buffer for every element of `out_shape`, walking the
// source with per-axis `strides` starting at `base`.
Offsets strided_offsets(const Shape& out_shape, const std::vector<std::size_t>& strides,
                        std::size_t base = 0) {
  auto result = std::make_shared<std::vector<std::size_t>>();
  const std::size_t n = numel(out_shape);
  result->reserve(n);
  if (n == 0) return result;
  const std::size_t rank = out_shape.size();
  if (rank == 0) {
    result->push_back(base);
    return result;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t cur = base;
  for (std::size_t e = 0; e < n; ++e) {
    result->push_back(cur);
    std::size_t d = rank - 1;
    ++idx[d];
    cur += strides[d];
    while (idx[d] == out_shape[d] && d > 0) {
      cur -= strides[d] * out_shape[d];
      idx[d] = 0;
      --d;
      ++idx[d];
      cur += strides[d];
    }
  }
  return result;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t db = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast shapes " + to_string(a) +
                           " and " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Visits every element of `shape` in row-major order, calling
// f(i, offset_a, offset_b) with offsets advanced by the two stride vectors.
template <class F>
void walk(const Shape& shape, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t n = numel(shape);
  if (n == 0) return;
  const std::size_t rank = shape.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t inner = shape[rank - 1];
  const std::size_t ia = sa[rank - 1], ib = sb[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ca = 0, cb = 0;
  for (std::size_t e = 0; e < n; e += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(e + j, ca + j * ia, cb + j * ib);
    for (std::size_t d = rank - 1; d > 0;) {
      --d;
      ++idx[d];
      ca += sa[d];
      cb += sb[d];
      if (idx[d] < shape[d]) break;
      ca -= sa[d] * shape[d];
      cb -= sb[d] * shape[d];
      idx[d] = 0;
    }
  }
}

std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const auto in_st = strides_of(in);
  std::vector<std::size_t> st(out.size(), 0);
  const std::size_t shift = out.size() - in.size();
  for (std::size_t i = shift; i < out.size(); ++i) {
    const std::size_t j = i - shift;
    st[i] = in[j] == 1 ? 0 : in_st[j];
  }
  return st;
}

// out[i] = src[offsets[i]]; the adjoint scatters back with accumulation.
Tensor gather(const Tensor& src, Shape out_shape, Offsets offsets) {
  Tensor out(std::move(out_shape));
  auto o = out.data();
  auto s = src.data();
  const auto& off = *offsets;
  for (std::size_t i = 0; i < off.size(); ++i) o[i] = s[off[i]];
  if (detail::should_record({&src})) {
    out.set_requires_grad();
    auto in = src.impl();
    auto res = out.impl();
    Tape::active()->record([in, res, offsets] {
      if (res->grad.empty()) return;
      auto& g = detail::grad_of(*in);
      const auto& off = *offsets;
      for (std::size_t i = 0; i < off.size(); ++i) g[off[i]] += res->grad[i];
    });
  }
  return out;
}

enum class BinaryKind { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  const bool same = a.shape() == b.shape();
  const Shape out_shape = same ? a.shape() : broadcast_shape(a.shape(), b.shape(), name);
  Tensor out(out_shape);
  auto o = out.data();
  auto ad = a.data();
  auto bd = b.data();
  auto apply = [&](std::size_t i, double x, double y) {
    switch (kind) {
      case BinaryKind::kAdd: o[i] = x + y; break;
      case BinaryKind::kSub: o[i] = x - y; break;
      case BinaryKind::kMul: o[i] = x * y; break;
    }
  };
  std::vector<std::size_t> sa, sb;
  if (same) {
    for (std::size_t i = 0; i < o.size(); ++i) apply(i, ad[i], bd[i]);
  } else {
    sa = broadcast_strides(a.shape(), out_shape);
    sb = broadcast_strides(b.shape(), out_shape);
    walk(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) { apply(i, ad[ia], bd[ib]); });
  }
  if (detail::should_record({&a, &b})) {
    out.set_requires_grad();
    auto ai = a.impl();
    auto bi = b.impl();
    auto res = out.impl();
    Tape::active()->record([ai, bi, res, out_shape, sa, sb, same, kind] {
      if (res->grad.empty()) return;
      const auto& g = res->grad;
      auto visit = [&](auto&& f) {
        if (same) {
          for (std::size_t i = 0; i < g.size(); ++i) f(i, i, i);
        } else {
          walk(out_shape, sa, sb, f);
        }
      };
      if (ai->requires_grad) {
        auto& ga = detail::grad_of(*ai);
        const auto& b_data = bi->data;
        visit([&](std::size_t i, std::size_t ia, std::size_t ib) {
          ga[ia] += kind == BinaryKind::kMul ? g[i] * b_data[ib] : g[i];
        });
      }
      if (bi->requires_grad) {
        auto& gb = detail::grad_of(*bi);
        const auto& a_data = ai->data;
        visit([&](std::size_t i, std::size_t ia, std::size_t ib) {
          switch (kind) {
            case BinaryKind::kAdd: gb[ib] += g[i]; break;
            case BinaryKind::kSub: gb[ib] -= g[i]; break;
            case BinaryKind::kMul: gb[ib] += g[i] * a_data[ia]; break;
          }
        });
      }
    });
  }
  return out;
}

// Applies f elementwise; df(x, y) gives dy/dx from input x and output y.
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  Tensor out(a.shape());
  auto o = out.data();
  auto in = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  if (detail::should_record({&a})) {
    out.set_requires_grad();
    auto ai = a.impl();
    auto res = out.impl();
    Tape::active()->record([ai, res, df] {
      if (res->grad.empty()) return;
      auto& ga = detail::grad_of(*ai);
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += res->grad[i] * df(ai->data[i], res->data[i]);
      }
    });
  }
  return out;
}

// Map from every input element to its reduced output slot.
struct Reduction {
  Shape in_shape;
  Shape out_shape;
  std::vector<std::size_t> strides;  // output offset per input axis, 0 on reduced axes
  std::size_t count = 1;
};

Reduction make_reduction(const Shape& in, const std::vector<std::size_t>& axes, bool keepdim) {
  std::vector<bool> reduced(in.size(), false);
  for (auto ax : axes) {
    if (ax >= in.size()) {
      throw DimensionError("reduction axis " + std::to_string(ax) + " out of range for shape " +
                           to_string(in));
    }
    reduced[ax] = true;
  }
  Reduction r;
  Shape kept_shape(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    kept_shape[i] = reduced[i] ? 1 : in[i];
    if (reduced[i]) {
      r.count *= in[i];
    } else {
      r.out_shape.push_back(in[i]);
    }
  }
  if (keepdim) r.out_shape = kept_shape;
  // Walking the input shape with the output's strides (0 on reduced axes)
  // yields the destination of each input element.
  auto st = strides_of(kept_shape);
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (reduced[i]) st[i] = 0;
  }
  r.in_shape = in;
  r.strides = std::move(st);
  return r;
}

Tensor reduce(const Tensor& a, const Reduction& r, double factor) {
  Tensor out(r.out_shape);
  auto o = out.data();
  auto in = a.data();
  walk(r.in_shape, r.strides, r.strides, [&](std::size_t i, std::size_t j, std::size_t) { o[j] += in[i]; });
  if (factor != 1.0) {
    for (auto& v : o) v *= factor;
  }
  if (detail::should_record({&a})) {
    out.set_requires_grad();
    auto ai = a.impl();
    auto res = out.impl();
    Tape::active()->record([ai, res, r, factor] {
      if (res->grad.empty()) return;
      auto& ga = detail::grad_of(*ai);
      const auto& g = res->grad;
      walk(r.in_shape, r.strides, r.strides,
           [&](std::size_t i, std::size_t j, std::size_t) { ga[i] += factor * g[j]; });
    });
  }
  return out;
}

std::vector<std::size_t> all_axes(const Tensor& a) {
  std::vector<std::size_t> axes(a.dim());
  std::iota(axes.begin(), axes.end(), 0);
  return axes;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() < 2 || b.dim() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.shape()[a.dim() - 2];
  const std::size_t k = a.shape()[a.dim() - 1];
  const std::size_t k2 = b.shape()[b.dim() - 2];
  const std::size_t n = b.shape()[b.dim() - 1];
  if (k != k2) {
    throw DimensionError("matmul inner dimensions differ: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shape(a_batch, b_batch, "matmul");
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  auto ab = strided_offsets(batch, broadcast_strides(a_batch, batch));
  auto bb = strided_offsets(batch, broadcast_strides(b_batch, batch));
  const std::size_t nbatch = numel(batch);

  Tensor out(out_shape);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  double* od = out.data().data();
  for (std::size_t i = 0; i < nbatch; ++i) {
    ConstMapMat am(ad + (*ab)[i] * m * k, m, k);
    ConstMapMat bm(bd + (*bb)[i] * k * n, k, n);
    MapMat(od + i * m * n, m, n).noalias() = am * bm;
  }

  if (detail::should_record({&a, &b})) {
    out.set_requires_grad();
    auto ai = a.impl();
    auto bi = b.impl();
    auto res = out.impl();
    Tape::active()->record([ai, bi, res, ab, bb, nbatch, m, k, n] {
      if (res->grad.empty()) return;
      const double* g = res->grad.data();
      if (ai->requires_grad) {
        double* ga = detail::grad_of(*ai).data();
        for (std::size_t i = 0; i < nbatch; ++i) {
          ConstMapMat gm(g + i * m * n, m, n);
          ConstMapMat bm(bi->data.data() + (*bb)[i] * k * n, k, n);
          MapMat(ga + (*ab)[i] * m * k, m, k).noalias() += gm * bm.transpose();
        }
      }
      if (bi->requires_grad) {
        double* gb = detail::grad_of(*bi).data();
        for (std::size_t i = 0; i < nbatch; ++i) {
          ConstMapMat gm(g + i * m * n, m, n);
          ConstMapMat am(ai->data.data() + (*ab)[i] * m * k, m, k);
          MapMat(gb + (*bb)[i] * k * n, k, n).noalias() += am.transpose() * gm;
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw DimensionError("cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (detail::should_record({&a})) {
    out.set_requires_grad();
    auto ai = a.impl();
    auto res = out.impl();
    Tape::active()->record([ai, res] {
      if (res->grad.empty()) return;
      auto& ga = detail::grad_of(*ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += res->grad[i];
    });
  }
  return out;
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& order) {
  if (order.size() != a.dim()) {
    throw DimensionError("permute order has " + std::to_string(order.size()) +
                         " axes for shape " + to_string(a.shape()));
  }
  std::vector<bool> seen(order.size(), false);
  const auto in_st = strides_of(a.shape());
  Shape out_shape(order.size());
  std::vector<std::size_t> st(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= order.size() || seen[order[i]]) {
      throw DimensionError("permute order is not a permutation for shape " + to_string(a.shape()));
    }
    seen[order[i]] = true;
    out_shape[i] = a.shape()[order[i]];
    st[i] = in_st[order[i]];
  }
  auto offsets = strided_offsets(out_shape, st);
  return gather(a, out_shape, offsets);
}

Tensor transpose(const Tensor& a) {
  if (a.dim() < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(a.shape()));
  std::vector<std::size_t> order(a.dim());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[a.dim() - 1], order[a.dim() - 2]);
  return permute(a, order);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) {
    throw DimensionError("concat axis " + std::to_string(axis) + " out of range for " +
                         to_string(ref));
  }
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != ref[i]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat along axis " + std::to_string(axis) + ": shape " +
                           to_string(s) + " does not match " + to_string(ref));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];

  Tensor out(out_shape);
  auto o = out.data();
  const std::size_t row = out_shape[axis] * inner;
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.shape()[axis] * inner;
    auto pd = p.data();
    for (std::size_t r = 0; r < outer; ++r) {
      std::copy_n(pd.begin() + r * chunk, chunk, o.begin() + r * row + col);
    }
    col += chunk;
  }

  bool record = false;
  for (const auto& p : parts) record = record || detail::should_record({&p});
  if (record) {
    out.set_requires_grad();
    std::vector<std::shared_ptr<TensorImpl>> ins;
    for (const auto& p : parts) ins.push_back(p.impl());
    auto res = out.impl();
    Tape::active()->record([ins, res, outer, inner, row, axis] {
      if (res->grad.empty()) return;
      std::size_t col = 0;
      for (const auto& in : ins) {
        const std::size_t chunk = in->shape[axis] * inner;
        if (in->requires_grad) {
          auto& g = detail::grad_of(*in);
          for (std::size_t r = 0; r < outer; ++r) {
            for (std::size_t c = 0; c < chunk; ++c) g[r * chunk + c] += res->grad[r * row + col + c];
          }
        }
        col += chunk;
      }
    });
  }
  return out;
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.dim() || start + length > a.shape()[axis]) {
    throw DimensionError("narrow(" + std::to_string(axis) + ", " + std::to_string(start) + ", " +
                         std::to_string(length) + ") out of range for " + to_string(a.shape()));
  }
  const auto st = strides_of(a.shape());
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  return gather(a, out_shape, strided_offsets(out_shape, st, start * st[axis]));
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  if (broadcast_shape(a.shape(), shape, "broadcast_to") != shape) {
    throw DimensionError("cannot broadcast " + to_string(a.shape()) + " to " + to_string(shape));
  }
  return gather(a, shape, strided_offsets(shape, broadcast_strides(a.shape(), shape)));
}

Tensor broadcast(const Tensor& a, std::size_t axis, std::size_t count) {
  if (axis > a.dim()) {
    throw DimensionError("broadcast axis " + std::to_string(axis) + " out of range for " +
                         to_string(a.shape()));
  }
  Shape unsq = a.shape();
  unsq.insert(unsq.begin() + static_cast<std::ptrdiff_t>(axis), 1);
  Shape target = unsq;
  target[axis] = count;
  return gather(a, target, strided_offsets(target, broadcast_strides(unsq, target)));
}

Tensor sum(const Tensor& a) { return reduce(a, make_reduction(a.shape(), all_axes(a), false), 1.0); }

Tensor sum(const Tensor& a, const std::vector<std::size_t>& axes, bool keepdim) {
  return reduce(a, make_reduction(a.shape(), axes, keepdim), 1.0);
}

Tensor mean_pool(const Tensor& a) { return mean_pool(a, all_axes(a), false); }

Tensor mean_pool(const Tensor& a, const std::vector<std::size_t>& axes, bool keepdim) {
  auto r = make_reduction(a.shape(), axes, keepdim);
  if (r.count == 0) throw DimensionError("mean over an empty axis of " + to_string(a.shape()));
  return reduce(a, r, 1.0 / static_cast<double>(r.count));
}

Tensor l2norm(const Tensor& a) {
  if (a.dim() == 0) throw DimensionError("l2norm of a scalar");
  const std::size_t n = a.shape().back();
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  Tensor out(out_shape);
  auto o = out.data();
  auto in = a.data();
  for (std::size_t r = 0; r < o.size(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += in[r * n + j] * in[r * n + j];
    o[r] = std::sqrt(s);
  }
  if (detail::should_record({&a})) {
    out.set_requires_grad();
    auto ai = a.impl();
    auto res = out.impl();
    Tape::active()->record([ai, res, n] {
      if (res->grad.empty()) return;
      auto& ga = detail::grad_of(*ai);
      for (std::size_t r = 0; r < res->data.size(); ++r) {
        const double norm = res->data[r];
        if (norm == 0.0) continue;
        const double f = res->grad[r] / norm;
        for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += f * ai->data[r * n + j];
      }
    });
  }
  return out;
}

Tensor temporal_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.dim() != 3) throw DimensionError("temporal_conv weight must be [C_out, C_in, G], got " + to_string(w.shape()));
  const std::size_t cout = w.shape()[0];
  const std::size_t cin = w.shape()[1];
  const std::size_t taps = w.shape()[2];
  if (taps % 2 == 0) {
    throw ConfigError("temporal kernel length must be odd, got " + std::to_string(taps));
  }
  if (x.dim() < 3 || x.shape()[0] != cin) {
    throw DimensionError("temporal_conv input " + to_string(x.shape()) +
                         " does not match weight " + to_string(w.shape()));
  }
  if (b.numel() != cout) {
    throw DimensionError("temporal_conv bias " + to_string(b.shape()) + " for weight " +
                         to_string(w.shape()));
  }
  const std::size_t frames = x.shape()[x.dim() - 2];
  const std::size_t nodes = x.shape()[x.dim() - 1];
  const std::size_t plane = frames * nodes;
  const std::size_t slices = x.numel() / (cin * plane);
  const std::size_t cols = slices * plane;
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(taps / 2);

  // Unfold: row (ci, g), column (s, t, v) holds x[ci, s, t + g - pad, v].
  auto unfolded = std::make_shared<std::vector<double>>(cin * taps * cols, 0.0);
  auto xd = x.data();
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t g = 0; g < taps; ++g) {
      double* row = unfolded->data() + (ci * taps + g) * cols;
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(g) - pad;
      for (std::size_t s = 0; s < slices; ++s) {
        const double* src = xd.data() + (ci * slices + s) * plane;
        double* dst = row + s * plane;
        for (std::size_t t = 0; t < frames; ++t) {
          const std::ptrdiff_t ts = static_cast<std::ptrdiff_t>(t) + shift;
          if (ts < 0 || ts >= static_cast<std::ptrdiff_t>(frames)) continue;
          std::copy_n(src + ts * nodes, nodes, dst + t * nodes);
        }
      }
    }
  }

  Shape out_shape = x.shape();
  out_shape[0] = cout;
  Tensor out(out_shape);
  MapMat om(out.data().data(), cout, cols);
  om.noalias() = ConstMapMat(w.data().data(), cout, cin * taps) *
                 ConstMapMat(unfolded->data(), cin * taps, cols);
  auto bd = b.data();
  for (std::size_t co = 0; co < cout; ++co) om.row(co).array() += bd[co];

  if (detail::should_record({&x, &w, &b})) {
    out.set_requires_grad();
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = b.impl();
    auto res = out.impl();
    Tape::active()->record([xi, wi, bi, res, unfolded, cin, cout, taps, cols, slices, plane, frames,
                            nodes, pad] {
      if (res->grad.empty()) return;
      ConstMapMat gm(res->grad.data(), cout, cols);
      if (bi->requires_grad) {
        auto& gb = detail::grad_of(*bi);
        for (std::size_t co = 0; co < cout; ++co) {
          const double* row = res->grad.data() + co * cols;
          double acc = 0.0;
          for (std::size_t j = 0; j < cols; ++j) acc += row[j];
          gb[co] += acc;
        }
      }
      if (wi->requires_grad) {
        MapMat(detail::grad_of(*wi).data(), cout, cin * taps).noalias() +=
            gm * ConstMapMat(unfolded->data(), cin * taps, cols).transpose();
      }
      if (xi->requires_grad) {
        RowMat dcols = ConstMapMat(wi->data.data(), cout, cin * taps).transpose() * gm;
        auto& gx = detail::grad_of(*xi);
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t g = 0; g < taps; ++g) {
            const double* row = dcols.data() + (ci * taps + g) * cols;
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(g) - pad;
            for (std::size_t s = 0; s < slices; ++s) {
              double* dst = gx.data() + (ci * slices + s) * plane;
              const double* src = row + s * plane;
              for (std::size_t t = 0; t < frames; ++t) {
                const std::ptrdiff_t ts = static_cast<std::ptrdiff_t>(t) + shift;
                if (ts < 0 || ts >= static_cast<std::ptrdiff_t>(frames)) continue;
                for (std::size_t v = 0; v < nodes; ++v) dst[ts * nodes + v] += src[t * nodes + v];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training, double momentum, double eps) {
  if (x.dim() < 1) throw DimensionError("batch_norm of a scalar");
  const std::size_t channels = x.shape()[0];
  if (gamma.numel() != channels || beta.numel() != channels ||
      state.running_mean.numel() != channels || state.running_var.numel() != channels) {
    throw DimensionError("batch_norm parameters do not match " + std::to_string(channels) +
                         " channels of input " + to_string(x.shape()));
  }
  const std::size_t count = x.numel() / channels;
  auto mean = std::make_shared<std::vector<double>>(channels);
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  auto xd = x.data();
  if (training) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* p = xd.data() + c * count;
      double m = 0.0;
      for (std::size_t i = 0; i < count; ++i) m += p[i];
      m /= static_cast<double>(count);
      double v = 0.0;
      for (std::size_t i = 0; i < count; ++i) v += (p[i] - m) * (p[i] - m);
      const double biased = v / static_cast<double>(count);
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : biased;
      (*mean)[c] = m;
      (*inv_std)[c] = 1.0 / std::sqrt(biased + eps);
      state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * m;
      state.running_var[c] = (1.0 - momentum) * state.running_var[c] + momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      (*mean)[c] = state.running_mean[c];
      (*inv_std)[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
    }
  }

  Tensor out(x.shape());
  auto o = out.data();
  for (std::size_t c = 0; c < channels; ++c) {
    const double scale_c = gamma[c] * (*inv_std)[c];
    const double shift_c = beta[c] - scale_c * (*mean)[c];
    for (std::size_t i = 0; i < count; ++i) o[c * count + i] = scale_c * xd[c * count + i] + shift_c;
  }

  if (detail::should_record({&x, &gamma, &beta})) {
    out.set_requires_grad();
    auto xi = x.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    auto res = out.impl();
    Tape::active()->record([xi, gi, bi, res, mean, inv_std, channels, count, training] {
      if (res->grad.empty()) return;
      const auto& g = res->grad;
      const double n = static_cast<double>(count);
      for (std::size_t c = 0; c < channels; ++c) {
        const double m = (*mean)[c];
        const double is = (*inv_std)[c];
        const double* xp = xi->data.data() + c * count;
        const double* gp = g.data() + c * count;
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
          sum_g += gp[i];
          sum_gx += gp[i] * (xp[i] - m) * is;
        }
        if (gi->requires_grad) detail::grad_of(*gi)[c] += sum_gx;
        if (bi->requires_grad) detail::grad_of(*bi)[c] += sum_g;
        if (!xi->requires_grad) continue;
        auto& gx = detail::grad_of(*xi);
        const double gam = gi->data[c];
        if (training) {
          for (std::size_t i = 0; i < count; ++i) {
            const double xhat = (xp[i] - m) * is;
            gx[c * count + i] += gam * is / n * (n * gp[i] - sum_g - xhat * sum_gx);
          }
        } else {
          for (std::size_t i = 0; i < count; ++i) gx[c * count + i] += gam * is * gp[i];
        }
      }
    });
  }
  return out;
}

namespace {

// R = I + a K + b K^2 with a = sin(t)/t, b = (1 - cos t)/t^2. `da`, `db` are
// (da/dt)/t and (db/dt)/t so that d/dr_i = (..)/t * r_i.
struct RodriguesCoeffs {
  double a, b, da, db;
};

RodriguesCoeffs rodrigues_coeffs(double theta) {
  // Series below 1e-4 keeps the derivative terms free of cancellation.
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    return {1.0 - t2 / 6.0, 0.5 - t2 / 24.0, -1.0 / 3.0 + t2 / 30.0, -1.0 / 12.0 + t2 / 180.0};
  }
  const double s = std::sin(theta), c = std::cos(theta);
  const double t2 = theta * theta, t3 = t2 * theta;
  return {s / theta, (1.0 - c) / t2, (theta * c - s) / t3, (theta * s - 2.0 * (1.0 - c)) / (t3 * theta)};
}

using Mat3 = Eigen::Matrix3d;

Mat3 hat(double x, double y, double z) {
  Mat3 k;
  k << 0, -z, y, z, 0, -x, -y, x, 0;
  return k;
}

}  // namespace

Tensor rodrigues(const Tensor& r) {
  if (r.dim() < 1 || r.shape().back() != 3) {
    throw DimensionError("rodrigues expects [.., 3], got " + to_string(r.shape()));
  }
  const std::size_t count = r.numel() / 3;
  Shape out_shape = r.shape();
  out_shape.back() = 3;
  out_shape.push_back(3);
  Tensor out(out_shape);
  auto rd = r.data();
  auto o = out.data();
  for (std::size_t i = 0; i < count; ++i) {
    const double x = rd[3 * i], y = rd[3 * i + 1], z = rd[3 * i + 2];
    const double theta = std::sqrt(x * x + y * y + z * z);
    const auto co = rodrigues_coeffs(theta);
    const Mat3 k = hat(x, y, z);
    const Mat3 rot = Mat3::Identity() + co.a * k + co.b * k * k;
    Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(o.data() + 9 * i) = rot;
  }
  if (detail::should_record({&r})) {
    out.set_requires_grad();
    auto ri = r.impl();
    auto res = out.impl();
    Tape::active()->record([ri, res, count] {
      if (res->grad.empty()) return;
      auto& gr = detail::grad_of(*ri);
      for (std::size_t i = 0; i < count; ++i) {
        const double v[3] = {ri->data[3 * i], ri->data[3 * i + 1], ri->data[3 * i + 2]};
        const double theta = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        const auto co = rodrigues_coeffs(theta);
        const Mat3 k = hat(v[0], v[1], v[2]);
        const Mat3 k2 = k * k;
        const Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> g(res->grad.data() + 9 * i);
        for (int j = 0; j < 3; ++j) {
          const Mat3 dk = hat(j == 0, j == 1, j == 2);
          const Mat3 dr = co.da * v[j] * k + co.a * dk + co.db * v[j] * k2 + co.b * (dk * k + k * dk);
          gr[3 * i + j] += (g.array() * dr.array()).sum();
        }
      }
    });
  }
  return out;
}

}  // namespace homotion::tensor
