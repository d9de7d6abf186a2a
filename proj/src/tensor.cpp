#include "gctaf/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <functional>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "gctaf/errors.hpp"

namespace gctaf {

size_t shape_size(const Shape& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

struct TensorImpl;

using BackwardFn = std::function<void(TensorImpl& self, const std::vector<double>& gout,
                                      const std::vector<std::vector<double>*>& pgrads)>;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // leaf accumulator, allocated lazily

  // Graph node: parents keep inputs alive; backprop distributes this node's
  // gradient into the parents' buffers. Empty for leaves.
  std::vector<std::shared_ptr<TensorImpl>> parents;
  BackwardFn backprop;
};

}  // namespace detail

using detail::TensorImpl;

detail::TensorImpl& detail_impl(const Tensor& t) { return *t.impl_; }
std::shared_ptr<TensorImpl> detail_share(const Tensor& t) { return t.impl_; }
Tensor detail_wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

static std::atomic<bool> g_nan_guard{false};

void set_nan_guard(bool enabled) { g_nan_guard.store(enabled); }
bool nan_guard_enabled() { return g_nan_guard.load(); }

static void guard_finite(const char* op, const std::vector<double>& data) {
  if (!g_nan_guard.load(std::memory_order_relaxed)) return;
  for (size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw NumericError(std::string("non-finite value produced by op '") + op +
                         "' at flat index " + std::to_string(i));
    }
  }
}

static TensorImpl& impl_of(const Tensor& t) {
  if (!t.defined()) throw ContractError("operation on an undefined tensor");
  return detail_impl(t);
}

// ---------------------------------------------------------------------------
// construction

static Tensor make_leaf(Shape shape, std::vector<double> data) {
  if (shape_size(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return detail_wrap(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) {
  size_t n = shape_size(shape);
  return make_leaf(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  size_t n = shape_size(shape);
  return make_leaf(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values) {
  guard_finite("from_data", values);
  return make_leaf(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double value) { return make_leaf({}, {value}); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
  size_t n = shape_size(shape);
  std::vector<double> data(n);
  for (double& v : data) v = rng.uniform(lo, hi);
  return make_leaf(std::move(shape), std::move(data));
}

const Shape& Tensor::shape() const { return impl_of(*this).shape; }
size_t Tensor::size() const { return impl_of(*this).data.size(); }
size_t Tensor::rank() const { return impl_of(*this).shape.size(); }

double Tensor::value() const {
  auto& impl = impl_of(*this);
  if (impl.data.size() != 1) {
    throw ContractError("value() requires a scalar tensor; got shape " + shape_str(impl.shape));
  }
  return impl.data[0];
}

std::span<const double> Tensor::data() const { return impl_of(*this).data; }

double* Tensor::mutable_data() {
  auto& impl = impl_of(*this);
  if (!impl.parents.empty()) {
    throw ContractError("mutable_data() is restricted to leaf tensors");
  }
  return impl.data.data();
}

bool Tensor::requires_grad() const { return impl_of(*this).requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  auto& impl = impl_of(*this);
  if (!impl.parents.empty()) {
    throw ContractError("requires_grad can only be toggled on leaf tensors");
  }
  impl.requires_grad = value;
  if (!value) impl.grad.clear();
  return *this;
}

bool Tensor::is_leaf() const { return impl_of(*this).parents.empty(); }

std::span<const double> Tensor::grad() const { return impl_of(*this).grad; }

void Tensor::zero_grad() {
  auto& impl = impl_of(*this);
  std::fill(impl.grad.begin(), impl.grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto& impl = impl_of(*this);
  return make_leaf(impl.shape, impl.data);
}

// ---------------------------------------------------------------------------
// graph plumbing

static Tensor make_op(const char* name, Shape shape, std::vector<double> data,
                      std::vector<Tensor> parents, detail::BackwardFn backprop) {
  guard_finite(name, data);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || impl_of(p).requires_grad;
  if (needs_grad) {
    impl->requires_grad = true;
    impl->parents.reserve(parents.size());
    for (const auto& p : parents) impl->parents.push_back(detail_share(p));
    impl->backprop = std::move(backprop);
  }
  return detail_wrap(std::move(impl));
}

void Tensor::backward() const {
  auto& root = impl_of(*this);
  if (root.data.size() != 1) {
    throw ContractError("backward requires a scalar loss; got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) return;  // no parameters reachable

  // Post-order over requires_grad ancestors; reversing it processes every
  // consumer before its inputs, so each node's gradient is complete when its
  // backprop runs.
  enum class Mark : uint8_t { none = 0, open, done };
  std::vector<TensorImpl*> order;
  std::unordered_map<TensorImpl*, Mark> mark;
  std::vector<TensorImpl*> stack{&root};
  while (!stack.empty()) {
    TensorImpl* n = stack.back();
    Mark& m = mark[n];
    if (m == Mark::none) {
      m = Mark::open;
      for (const auto& p : n->parents) {
        TensorImpl* pi = p.get();
        if (pi->requires_grad && mark[pi] == Mark::none) stack.push_back(pi);
      }
    } else if (m == Mark::open) {
      m = Mark::done;
      order.push_back(n);
      stack.pop_back();
    } else {
      stack.pop_back();  // duplicate entry, already finalized
    }
  }

  std::unordered_map<TensorImpl*, std::vector<double>> gbuf;
  gbuf.emplace(&root, std::vector<double>{1.0});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* n = *it;
    if (!n->backprop) continue;
    if (gbuf.find(n) == gbuf.end()) continue;
    std::vector<std::vector<double>*> pgrads(n->parents.size(), nullptr);
    for (size_t i = 0; i < n->parents.size(); ++i) {
      TensorImpl* p = n->parents[i].get();
      if (!p->requires_grad) continue;
      auto [slot, inserted] = gbuf.try_emplace(p);
      if (inserted) slot->second.assign(p->data.size(), 0.0);
      pgrads[i] = &slot->second;
    }
    const std::vector<double>& gout = gbuf.find(n)->second;
    n->backprop(*n, gout, pgrads);
    gbuf.erase(n);  // intermediate buffers are scratch
  }

  // Leaves accumulate; intermediates were transient.
  for (TensorImpl* n : order) {
    if (n->backprop) continue;
    auto it = gbuf.find(n);
    if (it == gbuf.end()) continue;
    if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
    const auto& g = it->second;
    for (size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
  }
}

// ---------------------------------------------------------------------------
// broadcasting helpers

static std::vector<size_t> natural_strides(const Shape& shape) {
  std::vector<size_t> strides(shape.size(), 1);
  for (size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

static Shape pad_left(const Shape& s, size_t rank) {
  Shape out(rank, 1);
  std::copy(s.begin(), s.end(), out.begin() + (rank - s.size()));
  return out;
}

static Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  size_t rank = std::max(a.size(), b.size());
  Shape pa = pad_left(a, rank), pb = pad_left(b, rank), out(rank);
  for (size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pa[i] == 1 || pb[i] == 1) {
      out[i] = std::max(pa[i], pb[i]);
    } else {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " are not broadcastable");
    }
  }
  return out;
}

// Strides of a (padded) input shape against an output shape, zero where the
// input extent is 1 and the output extent is larger.
static std::vector<size_t> broadcast_strides(const Shape& padded, const Shape& out) {
  auto strides = natural_strides(padded);
  for (size_t i = 0; i < out.size(); ++i) {
    if (padded[i] == 1 && out[i] != 1) strides[i] = 0;
  }
  return strides;
}

static bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Calls fn(io, ia, ib) for every element of the output of a broadcast binary
// op. Fast paths cover equal shapes and trailing-block (bias-style) operands.
template <class F>
static void for_each_broadcast2(const Shape& out, const Shape& a, const Shape& b, F&& fn) {
  size_t total = shape_size(out);
  if (a == out && b == out) {
    for (size_t i = 0; i < total; ++i) fn(i, i, i);
    return;
  }
  if (a == out && is_suffix(b, a)) {
    size_t nb = shape_size(b);
    for (size_t i = 0; i < total; ++i) fn(i, i, i % nb);
    return;
  }
  if (b == out && is_suffix(a, b)) {
    size_t na = shape_size(a);
    for (size_t i = 0; i < total; ++i) fn(i, i % na, i);
    return;
  }
  size_t rank = out.size();
  Shape pa = pad_left(a, rank), pb = pad_left(b, rank);
  auto sa = broadcast_strides(pa, out);
  auto sb = broadcast_strides(pb, out);
  std::vector<size_t> idx(rank, 0);
  size_t ia = 0, ib = 0;
  for (size_t io = 0; io < total; ++io) {
    fn(io, ia, ib);
    for (size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
  auto& ia = impl_of(a);
  auto& ib = impl_of(b);
  Shape out_shape = broadcast_shape("add", ia.shape, ib.shape);
  std::vector<double> out(shape_size(out_shape));
  for_each_broadcast2(out_shape, ia.shape, ib.shape,
                      [&](size_t io, size_t pa, size_t pb) { out[io] = ia.data[pa] + ib.data[pb]; });
  return make_op(
      "add", std::move(out_shape), std::move(out), {a, b},
      [](TensorImpl& self, const std::vector<double>& g,
         const std::vector<std::vector<double>*>& pg) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for_each_broadcast2(self.shape, pa.shape, pb.shape, [&](size_t io, size_t ja, size_t jb) {
          if (pg[0]) (*pg[0])[ja] += g[io];
          if (pg[1]) (*pg[1])[jb] += g[io];
        });
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto& ia = impl_of(a);
  auto& ib = impl_of(b);
  Shape out_shape = broadcast_shape("sub", ia.shape, ib.shape);
  std::vector<double> out(shape_size(out_shape));
  for_each_broadcast2(out_shape, ia.shape, ib.shape,
                      [&](size_t io, size_t pa, size_t pb) { out[io] = ia.data[pa] - ib.data[pb]; });
  return make_op(
      "sub", std::move(out_shape), std::move(out), {a, b},
      [](TensorImpl& self, const std::vector<double>& g,
         const std::vector<std::vector<double>*>& pg) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for_each_broadcast2(self.shape, pa.shape, pb.shape, [&](size_t io, size_t ja, size_t jb) {
          if (pg[0]) (*pg[0])[ja] += g[io];
          if (pg[1]) (*pg[1])[jb] -= g[io];
        });
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto& ia = impl_of(a);
  auto& ib = impl_of(b);
  Shape out_shape = broadcast_shape("mul", ia.shape, ib.shape);
  std::vector<double> out(shape_size(out_shape));
  for_each_broadcast2(out_shape, ia.shape, ib.shape,
                      [&](size_t io, size_t pa, size_t pb) { out[io] = ia.data[pa] * ib.data[pb]; });
  return make_op(
      "mul", std::move(out_shape), std::move(out), {a, b},
      [](TensorImpl& self, const std::vector<double>& g,
         const std::vector<std::vector<double>*>& pg) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for_each_broadcast2(self.shape, pa.shape, pb.shape, [&](size_t io, size_t ja, size_t jb) {
          if (pg[0]) (*pg[0])[ja] += g[io] * pb.data[jb];
          if (pg[1]) (*pg[1])[jb] += g[io] * pa.data[ja];
        });
      });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
  auto& ix = impl_of(x);
  std::vector<double> out(ix.data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = ix.data[i] * factor;
  return make_op("scale", ix.shape, std::move(out), {x},
                 [factor](TensorImpl&, const std::vector<double>& g,
                          const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   for (size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * factor;
                 });
}

Tensor add_scalar(const Tensor& x, double offset) {
  auto& ix = impl_of(x);
  std::vector<double> out(ix.data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = ix.data[i] + offset;
  return make_op("add_scalar", ix.shape, std::move(out), {x},
                 [](TensorImpl&, const std::vector<double>& g,
                    const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   for (size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                 });
}

Tensor relu(const Tensor& x) {
  auto& ix = impl_of(x);
  std::vector<double> out(ix.data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = ix.data[i] > 0.0 ? ix.data[i] : 0.0;
  return make_op("relu", ix.shape, std::move(out), {x},
                 [](TensorImpl& self, const std::vector<double>& g,
                    const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   const auto& in = self.parents[0]->data;
                   for (size_t i = 0; i < g.size(); ++i) {
                     if (in[i] > 0.0) (*pg[0])[i] += g[i];
                   }
                 });
}

// ---------------------------------------------------------------------------
// matmul

// C[m,n] += A[m,k] * B[k,n]
static void gemm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      double aip = arow[p];
      const double* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
static void gemm_nt(const double* g, const double* b, double* c, size_t m, size_t n, size_t k) {
  for (size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* crow = c + i * k;
    for (size_t q = 0; q < k; ++q) {
      const double* brow = b + q * n;
      double s = 0.0;
      for (size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      crow[q] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
static void gemm_tn(const double* a, const double* g, double* c, size_t k, size_t m, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (size_t p = 0; p < k; ++p) {
      double aip = arow[p];
      double* crow = c + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += aip * grow[j];
    }
  }
}

namespace {
struct BatchMap {
  Shape out_batch;
  std::vector<size_t> a_strides, b_strides;  // in slab units
  size_t count = 1;
};
}  // namespace

static BatchMap batch_map(const char* op, const Shape& a, const Shape& b) {
  Shape ab(a.begin(), a.end() - 2), bb(b.begin(), b.end() - 2);
  BatchMap m;
  m.out_batch = broadcast_shape(op, ab, bb);
  m.count = shape_size(m.out_batch);
  size_t rank = m.out_batch.size();
  m.a_strides = broadcast_strides(pad_left(ab, rank), m.out_batch);
  m.b_strides = broadcast_strides(pad_left(bb, rank), m.out_batch);
  return m;
}

template <class F>
static void for_each_batch(const BatchMap& m, F&& fn) {
  size_t rank = m.out_batch.size();
  std::vector<size_t> idx(rank, 0);
  size_t ia = 0, ib = 0;
  for (size_t io = 0; io < m.count; ++io) {
    fn(io, ia, ib);
    for (size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += m.a_strides[d];
      ib += m.b_strides[d];
      if (idx[d] < m.out_batch[d]) break;
      idx[d] = 0;
      ia -= m.a_strides[d] * m.out_batch[d];
      ib -= m.b_strides[d] * m.out_batch[d];
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  auto& ia = impl_of(a);
  auto& ib = impl_of(b);
  if (ia.shape.size() < 2 || ib.shape.size() < 2) {
    throw DimensionError("matmul requires rank >= 2 operands; got " + shape_str(ia.shape) +
                         " and " + shape_str(ib.shape));
  }
  size_t m = ia.shape[ia.shape.size() - 2];
  size_t k = ia.shape.back();
  size_t k2 = ib.shape[ib.shape.size() - 2];
  size_t n = ib.shape.back();
  if (k != k2) {
    throw DimensionError("matmul inner extents disagree: " + shape_str(ia.shape) + " x " +
                         shape_str(ib.shape));
  }
  BatchMap bm = batch_map("matmul", ia.shape, ib.shape);
  Shape out_shape = bm.out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(shape_size(out_shape), 0.0);
  const size_t a_slab = m * k, b_slab = k * n, o_slab = m * n;
  for_each_batch(bm, [&](size_t io, size_t ja, size_t jb) {
    gemm_nn(ia.data.data() + ja * a_slab, ib.data.data() + jb * b_slab,
            out.data() + io * o_slab, m, k, n);
  });
  return make_op(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [m, k, n, a_slab, b_slab, o_slab](TensorImpl& self, const std::vector<double>& g,
                                        const std::vector<std::vector<double>*>& pg) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        BatchMap bm = batch_map("matmul", pa.shape, pb.shape);
        for_each_batch(bm, [&](size_t io, size_t ja, size_t jb) {
          const double* gslab = g.data() + io * o_slab;
          if (pg[0]) {
            gemm_nt(gslab, pb.data.data() + jb * b_slab, pg[0]->data() + ja * a_slab, m, n, k);
          }
          if (pg[1]) {
            gemm_tn(pa.data.data() + ja * a_slab, gslab, pg[1]->data() + jb * b_slab, k, m, n);
          }
        });
      });
}

// ---------------------------------------------------------------------------
// axis reductions and normalizers

namespace {
struct AxisSplit {
  size_t outer, len, inner;
};
}  // namespace

static AxisSplit axis_split(const char* op, const Shape& shape, size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of bounds for shape " + shape_str(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Tensor softmax(const Tensor& x, size_t axis) {
  auto& ix = impl_of(x);
  AxisSplit s = axis_split("softmax", ix.shape, axis);
  std::vector<double> out(ix.data.size());
  for (size_t o = 0; o < s.outer; ++o) {
    for (size_t in = 0; in < s.inner; ++in) {
      size_t base = o * s.len * s.inner + in;
      double mx = ix.data[base];
      for (size_t l = 1; l < s.len; ++l) mx = std::max(mx, ix.data[base + l * s.inner]);
      double denom = 0.0;
      for (size_t l = 0; l < s.len; ++l) {
        double e = std::exp(ix.data[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        denom += e;
      }
      for (size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= denom;
    }
  }
  return make_op("softmax", ix.shape, std::move(out), {x},
                 [s](TensorImpl& self, const std::vector<double>& g,
                     const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   const auto& y = self.data;
                   for (size_t o = 0; o < s.outer; ++o) {
                     for (size_t in = 0; in < s.inner; ++in) {
                       size_t base = o * s.len * s.inner + in;
                       double dot = 0.0;
                       for (size_t l = 0; l < s.len; ++l) {
                         size_t i = base + l * s.inner;
                         dot += g[i] * y[i];
                       }
                       for (size_t l = 0; l < s.len; ++l) {
                         size_t i = base + l * s.inner;
                         (*pg[0])[i] += y[i] * (g[i] - dot);
                       }
                     }
                   }
                 });
}

Tensor log_softmax(const Tensor& x, size_t axis) {
  auto& ix = impl_of(x);
  AxisSplit s = axis_split("log_softmax", ix.shape, axis);
  std::vector<double> out(ix.data.size());
  for (size_t o = 0; o < s.outer; ++o) {
    for (size_t in = 0; in < s.inner; ++in) {
      size_t base = o * s.len * s.inner + in;
      double mx = ix.data[base];
      for (size_t l = 1; l < s.len; ++l) mx = std::max(mx, ix.data[base + l * s.inner]);
      double denom = 0.0;
      for (size_t l = 0; l < s.len; ++l) denom += std::exp(ix.data[base + l * s.inner] - mx);
      double lse = mx + std::log(denom);
      for (size_t l = 0; l < s.len; ++l) {
        size_t i = base + l * s.inner;
        out[i] = ix.data[i] - lse;
      }
    }
  }
  return make_op("log_softmax", ix.shape, std::move(out), {x},
                 [s](TensorImpl& self, const std::vector<double>& g,
                     const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   const auto& y = self.data;  // log-probabilities
                   for (size_t o = 0; o < s.outer; ++o) {
                     for (size_t in = 0; in < s.inner; ++in) {
                       size_t base = o * s.len * s.inner + in;
                       double gsum = 0.0;
                       for (size_t l = 0; l < s.len; ++l) gsum += g[base + l * s.inner];
                       for (size_t l = 0; l < s.len; ++l) {
                         size_t i = base + l * s.inner;
                         (*pg[0])[i] += g[i] - std::exp(y[i]) * gsum;
                       }
                     }
                   }
                 });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  auto& ix = impl_of(x);
  auto& ig = impl_of(gamma);
  auto& ib = impl_of(beta);
  if (ix.shape.empty()) throw DimensionError("layer_norm requires rank >= 1 input");
  size_t n = ix.shape.back();
  if (ig.shape != Shape{n} || ib.shape != Shape{n}) {
    throw DimensionError("layer_norm affine parameters must have shape [" + std::to_string(n) +
                         "]; got gamma " + shape_str(ig.shape) + ", beta " + shape_str(ib.shape));
  }
  if (eps <= 0.0) throw ContractError("layer_norm eps must be positive");
  size_t rows = ix.data.size() / n;
  std::vector<double> out(ix.data.size());
  std::vector<double> xhat(ix.data.size());
  std::vector<double> istd(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* row = ix.data.data() + r * n;
    double mean = 0.0;
    for (size_t i = 0; i < n; ++i) mean += row[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double d = row[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    istd[r] = is;
    for (size_t i = 0; i < n; ++i) {
      double h = (row[i] - mean) * is;
      xhat[r * n + i] = h;
      out[r * n + i] = ig.data[i] * h + ib.data[i];
    }
  }
  return make_op(
      "layer_norm", ix.shape, std::move(out), {x, gamma, beta},
      [n, rows, xhat = std::move(xhat), istd = std::move(istd)](
          TensorImpl& self, const std::vector<double>& g,
          const std::vector<std::vector<double>*>& pg) {
        const auto& gamma = self.parents[1]->data;
        for (size_t r = 0; r < rows; ++r) {
          const double* grow = g.data() + r * n;
          const double* hrow = xhat.data() + r * n;
          if (pg[1] || pg[2]) {
            for (size_t i = 0; i < n; ++i) {
              if (pg[1]) (*pg[1])[i] += grow[i] * hrow[i];
              if (pg[2]) (*pg[2])[i] += grow[i];
            }
          }
          if (pg[0]) {
            double m1 = 0.0, m2 = 0.0;
            for (size_t i = 0; i < n; ++i) {
              double gi = grow[i] * gamma[i];
              m1 += gi;
              m2 += gi * hrow[i];
            }
            m1 /= static_cast<double>(n);
            m2 /= static_cast<double>(n);
            double* dst = pg[0]->data() + r * n;
            for (size_t i = 0; i < n; ++i) {
              double gi = grow[i] * gamma[i];
              dst[i] += istd[r] * (gi - m1 - hrow[i] * m2);
            }
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  if (b.defined()) y = add(y, b);
  return y;
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw ContractError("dropout probability must satisfy 0 <= p < 1; got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  auto& ix = impl_of(x);
  double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(ix.data.size());
  for (double& m : mask) m = (rng.next_double() >= p) ? keep_scale : 0.0;
  std::vector<double> out(ix.data.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = ix.data[i] * mask[i];
  return make_op("dropout", ix.shape, std::move(out), {x},
                 [mask = std::move(mask)](TensorImpl&, const std::vector<double>& g,
                                          const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   for (size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * mask[i];
                 });
}

Tensor sum(const Tensor& x, size_t axis) {
  auto& ix = impl_of(x);
  AxisSplit s = axis_split("sum", ix.shape, axis);
  Shape out_shape = ix.shape;
  out_shape.erase(out_shape.begin() + static_cast<ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (size_t o = 0; o < s.outer; ++o) {
    for (size_t l = 0; l < s.len; ++l) {
      const double* src = ix.data.data() + (o * s.len + l) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
    }
  }
  return make_op("sum", std::move(out_shape), std::move(out), {x},
                 [s](TensorImpl&, const std::vector<double>& g,
                     const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   for (size_t o = 0; o < s.outer; ++o) {
                     for (size_t l = 0; l < s.len; ++l) {
                       double* dst = pg[0]->data() + (o * s.len + l) * s.inner;
                       const double* src = g.data() + o * s.inner;
                       for (size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
                     }
                   }
                 });
}

Tensor mean(const Tensor& x, size_t axis) {
  auto& ix = impl_of(x);
  AxisSplit s = axis_split("mean", ix.shape, axis);
  return scale(sum(x, axis), 1.0 / static_cast<double>(s.len));
}

Tensor sum_all(const Tensor& x) {
  auto& ix = impl_of(x);
  double total = 0.0;
  for (double v : ix.data) total += v;
  return make_op("sum_all", {}, {total}, {x},
                 [](TensorImpl&, const std::vector<double>& g,
                    const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   for (double& v : *pg[0]) v += g[0];
                 });
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(impl_of(x).data.size()));
}

// ---------------------------------------------------------------------------
// shape ops

Tensor concat(std::span<const Tensor> parts, size_t axis) {
  if (parts.empty()) throw ContractError("concat requires at least one tensor");
  const Shape& first = impl_of(parts[0]).shape;
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of bounds for shape " +
                         shape_str(first));
  }
  Shape out_shape = first;
  size_t axis_total = 0;
  for (const Tensor& t : parts) {
    const Shape& s = impl_of(t).shape;
    if (s.size() != first.size()) {
      throw DimensionError("concat: rank mismatch between " + shape_str(first) + " and " +
                           shape_str(s));
    }
    for (size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw DimensionError("concat: shapes " + shape_str(first) + " and " + shape_str(s) +
                             " differ outside axis " + std::to_string(axis));
      }
    }
    axis_total += s[axis];
  }
  out_shape[axis] = axis_total;
  AxisSplit so = axis_split("concat", out_shape, axis);
  std::vector<double> out(shape_size(out_shape));
  std::vector<size_t> lens;
  lens.reserve(parts.size());
  size_t offset = 0;
  for (const Tensor& t : parts) {
    auto& it = impl_of(t);
    size_t len = it.shape[axis];
    lens.push_back(len);
    for (size_t o = 0; o < so.outer; ++o) {
      const double* src = it.data.data() + o * len * so.inner;
      double* dst = out.data() + (o * so.len + offset) * so.inner;
      std::memcpy(dst, src, len * so.inner * sizeof(double));
    }
    offset += len;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op("concat", std::move(out_shape), std::move(out), std::move(parents),
                 [so, lens = std::move(lens)](TensorImpl&, const std::vector<double>& g,
                                              const std::vector<std::vector<double>*>& pg) {
                   size_t offset = 0;
                   for (size_t pi = 0; pi < lens.size(); ++pi) {
                     size_t len = lens[pi];
                     if (pg[pi]) {
                       for (size_t o = 0; o < so.outer; ++o) {
                         const double* src = g.data() + (o * so.len + offset) * so.inner;
                         double* dst = pg[pi]->data() + o * len * so.inner;
                         for (size_t i = 0; i < len * so.inner; ++i) dst[i] += src[i];
                       }
                     }
                     offset += len;
                   }
                 });
}

Tensor slice(const Tensor& x, size_t axis, size_t start, size_t end) {
  auto& ix = impl_of(x);
  AxisSplit s = axis_split("slice", ix.shape, axis);
  if (start >= end || end > s.len) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(end) +
                         ") invalid for extent " + std::to_string(s.len) + " of shape " +
                         shape_str(ix.shape));
  }
  size_t len = end - start;
  Shape out_shape = ix.shape;
  out_shape[axis] = len;
  std::vector<double> out(shape_size(out_shape));
  for (size_t o = 0; o < s.outer; ++o) {
    const double* src = ix.data.data() + (o * s.len + start) * s.inner;
    double* dst = out.data() + o * len * s.inner;
    std::memcpy(dst, src, len * s.inner * sizeof(double));
  }
  return make_op("slice", std::move(out_shape), std::move(out), {x},
                 [s, start, len](TensorImpl&, const std::vector<double>& g,
                                 const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   for (size_t o = 0; o < s.outer; ++o) {
                     const double* src = g.data() + o * len * s.inner;
                     double* dst = pg[0]->data() + (o * s.len + start) * s.inner;
                     for (size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                   }
                 });
}

Tensor reshape(const Tensor& x, Shape shape) {
  auto& ix = impl_of(x);
  if (shape_size(shape) != ix.data.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(ix.shape) + " as " +
                         shape_str(shape));
  }
  return make_op("reshape", std::move(shape), ix.data, {x},
                 [](TensorImpl&, const std::vector<double>& g,
                    const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   for (size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                 });
}

// Copies src (described by shape) into dst with two axes swapped.
static void transpose_copy(const std::vector<double>& src, const Shape& in_shape, size_t ax0,
                           size_t ax1, std::vector<double>& dst) {
  Shape out_shape = in_shape;
  std::swap(out_shape[ax0], out_shape[ax1]);
  auto in_strides = natural_strides(in_shape);
  std::swap(in_strides[ax0], in_strides[ax1]);  // strides in output-dim order
  size_t rank = out_shape.size();
  std::vector<size_t> idx(rank, 0);
  size_t is = 0;
  size_t total = src.size();
  for (size_t io = 0; io < total; ++io) {
    dst[io] = src[is];
    for (size_t d = rank; d-- > 0;) {
      ++idx[d];
      is += in_strides[d];
      if (idx[d] < out_shape[d]) break;
      idx[d] = 0;
      is -= in_strides[d] * out_shape[d];
    }
  }
}

Tensor transpose(const Tensor& x, size_t axis0, size_t axis1) {
  auto& ix = impl_of(x);
  if (axis0 >= ix.shape.size() || axis1 >= ix.shape.size()) {
    throw DimensionError("transpose: axes (" + std::to_string(axis0) + ", " +
                         std::to_string(axis1) + ") out of bounds for shape " +
                         shape_str(ix.shape));
  }
  if (axis0 == axis1) return x;
  Shape out_shape = ix.shape;
  std::swap(out_shape[axis0], out_shape[axis1]);
  std::vector<double> out(ix.data.size());
  transpose_copy(ix.data, ix.shape, axis0, axis1, out);
  return make_op("transpose", std::move(out_shape), std::move(out), {x},
                 [axis0, axis1](TensorImpl& self, const std::vector<double>& g,
                                const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   std::vector<double> gt(g.size());
                   transpose_copy(g, self.shape, axis0, axis1, gt);
                   for (size_t i = 0; i < gt.size(); ++i) (*pg[0])[i] += gt[i];
                 });
}

Tensor expand(const Tensor& x, Shape shape) {
  auto& ix = impl_of(x);
  if (shape.size() != ix.shape.size()) {
    throw DimensionError("expand: rank mismatch between " + shape_str(ix.shape) + " and " +
                         shape_str(shape));
  }
  for (size_t i = 0; i < shape.size(); ++i) {
    if (ix.shape[i] != shape[i] && ix.shape[i] != 1) {
      throw DimensionError("expand: cannot broadcast " + shape_str(ix.shape) + " to " +
                           shape_str(shape));
    }
  }
  std::vector<double> out(shape_size(shape));
  for_each_broadcast2(shape, ix.shape, ix.shape,
                      [&](size_t io, size_t ji, size_t) { out[io] = ix.data[ji]; });
  return make_op("expand", std::move(shape), std::move(out), {x},
                 [](TensorImpl& self, const std::vector<double>& g,
                    const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   auto& p = *self.parents[0];
                   for_each_broadcast2(self.shape, p.shape, p.shape,
                                       [&](size_t io, size_t ji, size_t) { (*pg[0])[ji] += g[io]; });
                 });
}

}  // namespace gctaf
