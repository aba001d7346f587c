#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace uvs {

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class GraphError : public std::runtime_error {
 public:
  explicit GraphError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {
inline std::atomic<int64_t>& node_id_counter() {
  static std::atomic<int64_t> c{1};
  return c;
}
inline thread_local int no_grad_depth = 0;
}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// Temporarily disables producer recording; forwards computed under the guard
// are plain values with no tape behind them.
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
class GradSink;

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(const std::vector<T>&, GradSink<T>&)> backward_fn;
  int64_t id = 0;
};

template <typename T>
class GradSink {
 public:
  std::vector<T>& buffer(const TensorNode<T>* node) {
    auto it = buffers_.find(node);
    if (it == buffers_.end()) {
      it = buffers_.emplace(node, std::vector<T>(shape_numel(node->shape), T(0))).first;
    }
    return it->second;
  }
  bool has(const TensorNode<T>* node) const { return buffers_.count(node) != 0; }
  std::vector<T> take(const TensorNode<T>* node) {
    auto it = buffers_.find(node);
    if (it == buffers_.end()) return {};
    std::vector<T> v = std::move(it->second);
    buffers_.erase(it);
    return v;
  }
  void drop(const TensorNode<T>* node) { buffers_.erase(node); }

 private:
  std::unordered_map<const TensorNode<T>*, std::vector<T>> buffers_;
};

template <typename T>
class Tensor {
 public:
  Tensor() : node_(nullptr) {}

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw ShapeError("tensor value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    n->id = detail::node_id_counter()++;
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<T> v(shape_numel(shape), T(0));
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> v(shape_numel(shape), value);
    return from(std::move(shape), std::move(v), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return shape_numel(node_->shape); }
  const std::vector<T>& values() const { return node_->values; }
  // In-place access; meant for leaves (parameter updates, finite differences).
  std::vector<T>& raw_values() { return node_->values; }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  int64_t id() const { return node_->id; }
  const char* op_name() const { return node_->op; }

  std::vector<int64_t> parent_ids() const {
    std::vector<int64_t> ids;
    for (const auto& p : node_->parents) ids.push_back(p->id);
    return ids;
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->values[0];
  }

  T operator[](int64_t i) const { return node_->values[i]; }

  // Copy of the values as a fresh leaf outside the graph.
  Tensor detach() const { return from(node_->shape, node_->values, false); }

  Tensor clone(bool requires_grad = false) const {
    return from(node_->shape, node_->values, requires_grad);
  }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

  static Tensor adopt(std::shared_ptr<TensorNode<T>> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Builds an op result node. Producer metadata is recorded only when grads are
// enabled and at least one parent requires them.
template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> values,
                  std::vector<Tensor<T>> parents,
                  std::function<void(const std::vector<T>&, GradSink<T>&)> backward_fn) {
  bool track = grad_enabled();
  if (track) {
    track = false;
    for (const auto& p : parents)
      if (p.requires_grad()) {
        track = true;
        break;
      }
  }
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->id = detail::node_id_counter()++;
  if (track) {
    n->requires_grad = true;
    n->leaf = false;
    n->op = op;
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>::adopt(std::move(n));
}

// ---------------------------------------------------------------------------
// Broadcasting (standard right-aligned rules)
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

namespace detail {

// Strides of `s` aligned to rank of `out`, with 0 on broadcast dims.
inline std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  int64_t stride = 1;
  for (size_t i = 0; i < s.size(); ++i) {
    size_t si = s.size() - 1 - i;
    size_t oi = out.size() - 1 - i;
    st[oi] = (s[si] == 1 && out[oi] != 1) ? 0 : stride;
    stride *= s[si];
  }
  return st;
}

template <typename T, typename F>
std::vector<T> broadcast_apply(const std::vector<T>& a, const Shape& as, const std::vector<T>& b,
                               const Shape& bs, const Shape& out, F&& f) {
  int64_t n = shape_numel(out);
  std::vector<T> r(n);
  if (as == bs) {
    for (int64_t i = 0; i < n; ++i) r[i] = f(a[i], b[i]);
    return r;
  }
  if (shape_numel(bs) == 1) {
    T bv = b[0];
    for (int64_t i = 0; i < n; ++i) r[i] = f(a[i], bv);
    return r;
  }
  if (shape_numel(as) == 1) {
    T av = a[0];
    for (int64_t i = 0; i < n; ++i) r[i] = f(av, b[i]);
    return r;
  }
  auto sa = broadcast_strides(as, out);
  auto sb = broadcast_strides(bs, out);
  size_t rank = out.size();
  std::vector<int64_t> idx(rank, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t i = 0; i < n; ++i) {
    r[i] = f(a[ia], b[ib]);
    for (size_t d = rank; d-- > 0;) {
      if (++idx[d] < out[d]) {
        ia += sa[d];
        ib += sb[d];
        break;
      }
      idx[d] = 0;
      ia -= sa[d] * (out[d] - 1);
      ib -= sb[d] * (out[d] - 1);
    }
  }
  return r;
}

// Sums `g` (laid out per `gshape`) down to `target` shape.
template <typename T>
std::vector<T> reduce_grad_to(const std::vector<T>& g, const Shape& gshape, const Shape& target) {
  if (gshape == target) return g;
  int64_t tn = shape_numel(target);
  std::vector<T> out(tn, T(0));
  auto st = broadcast_strides(target, gshape);
  size_t rank = gshape.size();
  std::vector<int64_t> idx(rank, 0);
  int64_t it = 0;
  int64_t n = shape_numel(gshape);
  for (int64_t i = 0; i < n; ++i) {
    out[it] += g[i];
    for (size_t d = rank; d-- > 0;) {
      if (++idx[d] < gshape[d]) {
        it += st[d];
        break;
      }
      idx[d] = 0;
      it -= st[d] * (gshape[d] - 1);
    }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T, typename FwdF, typename GaF, typename GbF>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, FwdF fwd, GaF dfda,
                    GbF dfdb) {
  Shape out = broadcast_shape(a.shape(), b.shape());
  std::vector<T> v = detail::broadcast_apply(a.values(), a.shape(), b.values(), b.shape(), out, fwd);
  Shape ashape = a.shape(), bshape = b.shape();
  Tensor<T> ac = a, bc = b;
  return make_op<T>(
      name, out, std::move(v), {a, b},
      [ac, bc, ashape, bshape, out, dfda, dfdb](const std::vector<T>& g, GradSink<T>& sink) {
        if (ac.requires_grad()) {
          std::vector<T> ga = detail::broadcast_apply(ac.values(), ashape, bc.values(), bshape, out,
                                                      dfda);
          for (size_t i = 0; i < ga.size(); ++i) ga[i] *= g[i];
          auto r = detail::reduce_grad_to(ga, out, ashape);
          auto& buf = sink.buffer(ac.node().get());
          for (size_t i = 0; i < r.size(); ++i) buf[i] += r[i];
        }
        if (bc.requires_grad()) {
          std::vector<T> gb = detail::broadcast_apply(ac.values(), ashape, bc.values(), bshape, out,
                                                      dfdb);
          for (size_t i = 0; i < gb.size(); ++i) gb[i] *= g[i];
          auto r = detail::reduce_grad_to(gb, out, bshape);
          auto& buf = sink.buffer(bc.node().get());
          for (size_t i = 0; i < r.size(); ++i) buf[i] += r[i];
        }
      });
}

template <typename T, typename FwdF, typename DF>
Tensor<T> unary_op(const char* name, const Tensor<T>& x, FwdF fwd, DF dfdx) {
  int64_t n = x.numel();
  std::vector<T> v(n);
  const auto& xv = x.values();
  for (int64_t i = 0; i < n; ++i) v[i] = fwd(xv[i]);
  Tensor<T> xc = x;
  return make_op<T>(name, x.shape(), std::move(v), {x},
                    [xc, dfdx](const std::vector<T>& g, GradSink<T>& sink) {
                      if (!xc.requires_grad()) return;
                      auto& buf = sink.buffer(xc.node().get());
                      const auto& xv = xc.values();
                      for (size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * dfdx(xv[i]);
                    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary_op<T>(
      "neg", x, [](T v) { return -v; }, [](T) { return T(-1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary_op<T>(
      "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_op<T>(
      "sigmoid", x,
      [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T v) {
        T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
        return s * (T(1) - s);
      });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary_op<T>(
      "tanh", x, [](T v) { return std::tanh(v); },
      [](T v) {
        T t = std::tanh(v);
        return T(1) - t * t;
      });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary_op<T>(
      "abs", x, [](T v) { return v < T(0) ? -v : v; },
      [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary_op<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); },
      [](T v) { return T(0.5) / std::sqrt(v); });
}

// max(x, c) elementwise against a constant; gradient passes where x >= c.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& x, T c) {
  return unary_op<T>(
      "clamp_min", x, [c](T v) { return v < c ? c : v; },
      [c](T v) { return v >= c ? T(1) : T(0); });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, T s) {
  return add(a, Tensor<T>::scalar(s));
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, T s) {
  return mul(a, Tensor<T>::scalar(s));
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}
template <typename T>
Tensor<T> operator*(T s, const Tensor<T>& a) {
  return mul(a, s);
}

enum class EwOp { add, sub, mul, neg, relu, leaky_relu, sigmoid, tanh, abs };

// Dispatcher form of the elementwise op set; `b` is required for binary kinds.
template <typename T>
Tensor<T> elementwise(EwOp op, const Tensor<T>& a, const Tensor<T>* b = nullptr,
                      T leaky_slope = T(0.2)) {
  auto need_b = [&]() -> const Tensor<T>& {
    if (!b) throw ShapeError("binary elementwise op requires a second operand");
    return *b;
  };
  switch (op) {
    case EwOp::add: return add(a, need_b());
    case EwOp::sub: return sub(a, need_b());
    case EwOp::mul: return mul(a, need_b());
    case EwOp::neg: return neg(a);
    case EwOp::relu: return relu(a);
    case EwOp::leaky_relu: return leaky_relu(a, leaky_slope);
    case EwOp::sigmoid: return sigmoid(a);
    case EwOp::tanh: return tanh(a);
    case EwOp::abs: return abs(a);
  }
  throw GraphError("unknown elementwise op");
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class ReduceOp { sum, mean, max };

namespace detail {

inline Shape reduced_shape(const Shape& in, const std::vector<int>& axes, bool keepdims) {
  std::vector<bool> red(in.size(), false);
  for (int a : axes) {
    if (a < 0 || a >= static_cast<int>(in.size()))
      throw ShapeError("invalid reduce axis " + std::to_string(a) + " for shape " + shape_str(in));
    red[a] = true;
  }
  Shape out;
  for (size_t i = 0; i < in.size(); ++i) {
    if (red[i]) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(in[i]);
    }
  }
  return out;
}

// For every input linear index, the linear index of its reduction group.
inline std::vector<int64_t> group_index_map(const Shape& in, const std::vector<int>& axes) {
  std::vector<bool> red(in.size(), false);
  for (int a : axes) red[a] = true;
  std::vector<int64_t> out_stride(in.size(), 0);
  int64_t stride = 1;
  for (size_t i = in.size(); i-- > 0;) {
    if (!red[i]) {
      out_stride[i] = stride;
      stride *= in[i];
    }
  }
  int64_t n = shape_numel(in);
  std::vector<int64_t> map(n);
  std::vector<int64_t> idx(in.size(), 0);
  int64_t cur = 0;
  for (int64_t i = 0; i < n; ++i) {
    map[i] = cur;
    for (size_t d = in.size(); d-- > 0;) {
      if (++idx[d] < in[d]) {
        cur += out_stride[d];
        break;
      }
      idx[d] = 0;
      cur -= out_stride[d] * (in[d] - 1);
    }
  }
  return map;
}

}  // namespace detail

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& a, std::vector<int> axes = {},
                 bool keepdims = false) {
  const Shape& in = a.shape();
  if (axes.empty())
    for (size_t i = 0; i < in.size(); ++i) axes.push_back(static_cast<int>(i));
  Shape out = detail::reduced_shape(in, axes, keepdims);
  int64_t out_n = shape_numel(out);
  int64_t in_n = a.numel();
  int64_t count = out_n > 0 ? in_n / out_n : 0;
  std::vector<int64_t> gmap = detail::group_index_map(in, axes);
  const auto& av = a.values();
  std::vector<T> v(out_n);
  std::vector<int64_t> argmax;
  if (op == ReduceOp::max) {
    if (in_n == 0) throw ShapeError("max reduction over empty tensor");
    argmax.assign(out_n, -1);
    std::vector<bool> seen(out_n, false);
    for (int64_t i = 0; i < in_n; ++i) {
      int64_t gi = gmap[i];
      if (!seen[gi] || av[i] > v[gi]) {
        v[gi] = av[i];
        argmax[gi] = i;
        seen[gi] = true;
      }
    }
  } else {
    std::fill(v.begin(), v.end(), T(0));
    for (int64_t i = 0; i < in_n; ++i) v[gmap[i]] += av[i];
    if (op == ReduceOp::mean)
      for (auto& x : v) x /= static_cast<T>(count);
  }
  Tensor<T> ac = a;
  return make_op<T>(
      op == ReduceOp::sum ? "sum" : (op == ReduceOp::mean ? "mean" : "max"), out, std::move(v), {a},
      [ac, gmap = std::move(gmap), argmax = std::move(argmax), op,
       count](const std::vector<T>& g, GradSink<T>& sink) {
        if (!ac.requires_grad()) return;
        auto& buf = sink.buffer(ac.node().get());
        if (op == ReduceOp::max) {
          for (size_t gi = 0; gi < argmax.size(); ++gi) buf[argmax[gi]] += g[gi];
        } else {
          T scale = op == ReduceOp::mean ? T(1) / static_cast<T>(count) : T(1);
          for (size_t i = 0; i < buf.size(); ++i) buf[i] += g[gmap[i]] * scale;
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::vector<int> axes = {}, bool keepdims = false) {
  return reduce(ReduceOp::sum, a, std::move(axes), keepdims);
}
template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::vector<int> axes = {}, bool keepdims = false) {
  return reduce(ReduceOp::mean, a, std::move(axes), keepdims);
}
template <typename T>
Tensor<T> reduce_max(const Tensor<T>& a, std::vector<int> axes = {}, bool keepdims = false) {
  return reduce(ReduceOp::max, a, std::move(axes), keepdims);
}

// ---------------------------------------------------------------------------
// Layout ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  Tensor<T> ac = a;
  return make_op<T>("reshape", std::move(shape), a.values(), {a},
                    [ac](const std::vector<T>& g, GradSink<T>& sink) {
                      if (!ac.requires_grad()) return;
                      auto& buf = sink.buffer(ac.node().get());
                      for (size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
                    });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& axes) {
  const Shape& in = a.shape();
  if (axes.size() != in.size()) throw ShapeError("permute axes rank mismatch");
  Shape out(in.size());
  for (size_t i = 0; i < axes.size(); ++i) out[i] = in[axes[i]];
  // map[out_linear] = in_linear
  std::vector<int64_t> in_strides(in.size(), 1);
  for (int64_t i = static_cast<int64_t>(in.size()) - 2; i >= 0; --i)
    in_strides[i] = in_strides[i + 1] * in[i + 1];
  int64_t n = a.numel();
  std::vector<int64_t> map(n);
  std::vector<int64_t> idx(out.size(), 0);
  for (int64_t i = 0; i < n; ++i) {
    int64_t src = 0;
    for (size_t d = 0; d < out.size(); ++d) src += idx[d] * in_strides[axes[d]];
    map[i] = src;
    for (size_t d = out.size(); d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  const auto& av = a.values();
  std::vector<T> v(n);
  for (int64_t i = 0; i < n; ++i) v[i] = av[map[i]];
  Tensor<T> ac = a;
  return make_op<T>("permute", std::move(out), std::move(v), {a},
                    [ac, map = std::move(map)](const std::vector<T>& g, GradSink<T>& sink) {
                      if (!ac.requires_grad()) return;
                      auto& buf = sink.buffer(ac.node().get());
                      for (size_t i = 0; i < g.size(); ++i) buf[map[i]] += g[i];
                    });
}

// ---------------------------------------------------------------------------
// Reverse-mode backward pass
// ---------------------------------------------------------------------------

template <typename T>
class GradientMap {
 public:
  void insert(int64_t id, Tensor<T> grad) { grads_.emplace(id, std::move(grad)); }
  bool contains(const Tensor<T>& p) const { return grads_.count(p.id()) != 0; }
  // Gradient for p; absent entries mean zero.
  Tensor<T> at(const Tensor<T>& p) const {
    auto it = grads_.find(p.id());
    if (it == grads_.end()) return Tensor<T>::zeros(p.shape());
    return it->second;
  }
  size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<int64_t, Tensor<T>> grads_;
};

// Accumulates d(root)/d(leaf) for every requires_grad leaf reachable from
// root. Each node's backward runs exactly once, in reverse topological order.
template <typename T>
GradientMap<T> backward(const Tensor<T>& root) {
  if (root.numel() != 1)
    throw GraphError("backward requires a scalar root, got shape " + shape_str(root.shape()));
  using NodeP = TensorNode<T>*;
  std::vector<NodeP> topo;  // parents before children
  std::unordered_set<NodeP> visited;
  struct Frame {
    NodeP node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  if (root.node()->requires_grad) stack.push_back({root.node().get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (visited.count(f.node)) {
      stack.pop_back();
      continue;
    }
    if (f.next_parent < f.node->parents.size()) {
      NodeP p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) stack.push_back({p, 0});
    } else {
      visited.insert(f.node);
      topo.push_back(f.node);
      stack.pop_back();
    }
  }
  GradSink<T> sink;
  if (!topo.empty()) sink.buffer(topo.back()).assign(1, T(1));
  GradientMap<T> out;
  for (size_t i = topo.size(); i-- > 0;) {
    NodeP n = topo[i];
    if (!sink.has(n)) continue;  // unreachable via differentiable paths
    if (n->leaf) {
      out.insert(n->id, Tensor<T>::from(n->shape, sink.take(n)));
    } else {
      std::vector<T> g = sink.take(n);
      n->backward_fn(g, sink);
    }
  }
  return out;
}

}  // namespace uvs
