#include "hypercut/diffcore/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "hypercut/diffcore/kernels.hpp"

namespace hypercut::diff {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAddBias: return "add_bias";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kConvTranspose2d: return "conv_transpose2d";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kSquare: return "square";
    case OpKind::kAbs: return "abs";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSumRows: return "sum_rows";
    case OpKind::kNormRows: return "norm_rows";
    case OpKind::kL2NormalizeRows: return "l2_normalize_rows";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kReshape: return "reshape";
    case OpKind::kGlobalAvgPool: return "global_avg_pool";
    case OpKind::kCustom: return "custom";
  }
  return "?";
}

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

namespace {

constexpr std::size_t kParallelThreshold = 1u << 15;
constexpr double kNormalizeEps = 1e-12;

template <typename F>
void for_each_index(std::size_t n, F&& f) {
  if (n < kParallelThreshold) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) f(static_cast<std::size_t>(i));
}

template <typename T>
T sigmoid_of(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus_of(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

std::size_t outer_size(const Shape& s, int axis) {
  std::size_t n = 1;
  for (int i = 0; i < axis; ++i) n *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  return n;
}

std::size_t inner_size(const Shape& s, int axis) {
  std::size_t n = 1;
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) n *= static_cast<std::size_t>(s[i]);
  return n;
}

std::size_t row_size(const Shape& s) { return s.empty() ? 1 : inner_size(s, 0); }

}  // namespace

template <typename T>
Var BasicGraph<T>::push(Node n) {
  for (int in : n.inputs) {
    if (in < 0 || in >= static_cast<int>(nodes_.size())) {
      throw std::invalid_argument(std::string("invalid input handle for ") + op_name(n.op) + " node");
    }
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
typename BasicGraph<T>::Node& BasicGraph<T>::node(Var v) {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw std::out_of_range("invalid graph handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
const typename BasicGraph<T>::Node& BasicGraph<T>::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw std::out_of_range("invalid graph handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
std::string BasicGraph<T>::describe(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  std::ostringstream os;
  os << "node #" << id << " (" << op_name(n.op);
  if (!n.label.empty()) os << " '" << n.label << "'";
  os << ")";
  return os.str();
}

template <typename T>
void BasicGraph<T>::fail(int id, const std::string& message) const {
  throw ShapeError(describe(id) + ": " + message);
}

template <typename T>
Var BasicGraph<T>::input(const std::string& name, Shape shape, bool requires_grad) {
  if (input_index_.count(name)) throw std::invalid_argument("duplicate graph input: " + name);
  Node n;
  n.op = OpKind::kInput;
  n.label = name;
  n.declared = std::move(shape);
  n.requires_grad = requires_grad;
  Var v = push(std::move(n));
  input_index_[name] = v.id;
  return v;
}

template <typename T>
Var BasicGraph<T>::parameter(ParameterT& p) {
  Node n;
  n.op = OpKind::kParameter;
  n.label = p.name;
  n.param = &p;
  return push(std::move(n));
}

template <typename T>
Var BasicGraph<T>::constant(TensorT value, const std::string& label) {
  Node n;
  n.op = OpKind::kConstant;
  n.label = label;
  n.value = std::move(value);
  n.bound = true;
  return push(std::move(n));
}

#define HYPERCUT_SIMPLE_OP(method, kind)            \
  template <typename T>                             \
  Var BasicGraph<T>::method(Var a) {                \
    Node n;                                         \
    n.op = OpKind::kind;                            \
    n.inputs = {a.id};                              \
    return push(std::move(n));                      \
  }

HYPERCUT_SIMPLE_OP(sigmoid, kSigmoid)
HYPERCUT_SIMPLE_OP(softplus, kSoftplus)
HYPERCUT_SIMPLE_OP(square, kSquare)
HYPERCUT_SIMPLE_OP(abs, kAbs)
HYPERCUT_SIMPLE_OP(sum, kSum)
HYPERCUT_SIMPLE_OP(mean, kMean)
HYPERCUT_SIMPLE_OP(sum_rows, kSumRows)
HYPERCUT_SIMPLE_OP(norm_rows, kNormRows)
HYPERCUT_SIMPLE_OP(l2_normalize_rows, kL2NormalizeRows)
HYPERCUT_SIMPLE_OP(global_avg_pool, kGlobalAvgPool)

#undef HYPERCUT_SIMPLE_OP

#define HYPERCUT_BINARY_OP(method, kind)            \
  template <typename T>                             \
  Var BasicGraph<T>::method(Var a, Var b) {         \
    Node n;                                         \
    n.op = OpKind::kind;                            \
    n.inputs = {a.id, b.id};                        \
    return push(std::move(n));                      \
  }

HYPERCUT_BINARY_OP(add, kAdd)
HYPERCUT_BINARY_OP(sub, kSub)
HYPERCUT_BINARY_OP(mul, kMul)
HYPERCUT_BINARY_OP(matmul, kMatMul)
HYPERCUT_BINARY_OP(add_bias, kAddBias)

#undef HYPERCUT_BINARY_OP

template <typename T>
Var BasicGraph<T>::scale(Var a, double factor) {
  Node n;
  n.op = OpKind::kScale;
  n.inputs = {a.id};
  n.real = factor;
  return push(std::move(n));
}

template <typename T>
Var BasicGraph<T>::leaky_relu(Var a, double slope) {
  Node n;
  n.op = OpKind::kLeakyRelu;
  n.inputs = {a.id};
  n.real = slope;
  return push(std::move(n));
}

template <typename T>
Var BasicGraph<T>::conv2d(Var x, Var w, Var b, int stride, int pad) {
  Node n;
  n.op = OpKind::kConv2d;
  n.inputs = {x.id, w.id, b.id};
  n.ints[0] = stride;
  n.ints[1] = pad;
  return push(std::move(n));
}

template <typename T>
Var BasicGraph<T>::conv_transpose2d(Var x, Var w, Var b, int stride, int pad, int output_pad) {
  Node n;
  n.op = OpKind::kConvTranspose2d;
  n.inputs = {x.id, w.id, b.id};
  n.ints[0] = stride;
  n.ints[1] = pad;
  n.ints[2] = output_pad;
  return push(std::move(n));
}

template <typename T>
Var BasicGraph<T>::concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  Node n;
  n.op = OpKind::kConcat;
  for (Var p : parts) n.inputs.push_back(p.id);
  n.ints[0] = axis;
  return push(std::move(n));
}

template <typename T>
Var BasicGraph<T>::slice(Var a, int axis, int start, int length) {
  Node n;
  n.op = OpKind::kSlice;
  n.inputs = {a.id};
  n.ints[0] = axis;
  n.ints[1] = start;
  n.ints[2] = length;
  return push(std::move(n));
}

template <typename T>
Var BasicGraph<T>::reshape(Var a, Shape shape) {
  if (std::count(shape.begin(), shape.end(), -1) > 1) {
    throw std::invalid_argument("reshape target may contain at most one -1");
  }
  Node n;
  n.op = OpKind::kReshape;
  n.inputs = {a.id};
  n.declared = std::move(shape);
  return push(std::move(n));
}

template <typename T>
Var BasicGraph<T>::custom(Var a, CustomForward forward, CustomBackward backward,
                          const std::string& label) {
  Node n;
  n.op = OpKind::kCustom;
  n.inputs = {a.id};
  n.label = label;
  n.custom_forward = std::move(forward);
  n.custom_backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
void BasicGraph<T>::set_label(Var v, std::string label) {
  node(v).label = std::move(label);
}

template <typename T>
void BasicGraph<T>::set_input(const std::string& name, const TensorT& value) {
  auto it = input_index_.find(name);
  if (it == input_index_.end()) throw std::invalid_argument("graph has no input named '" + name + "'");
  Node& n = nodes_[static_cast<std::size_t>(it->second)];
  const Shape& got = value.shape();
  bool ok = got.size() == n.declared.size();
  for (std::size_t i = 0; ok && i < got.size(); ++i) {
    ok = n.declared[i] < 0 || n.declared[i] == got[i];
  }
  if (!ok) {
    fail(it->second, "input '" + name + "' expects shape " + shape_str(n.declared) + ", got " +
                         shape_str(got));
  }
  n.value = value;
  n.bound = true;
}

template <typename T>
void BasicGraph<T>::evaluate(const std::map<std::string, TensorT>& inputs) {
  for (const auto& [name, tensor] : inputs) set_input(name, tensor);
  forward();
}

template <typename T>
void BasicGraph<T>::forward() {
  for (int id = 0; id < static_cast<int>(nodes_.size()); ++id) forward_node(id);
}

template <typename T>
const BasicTensor<T>& BasicGraph<T>::value(Var v) const {
  const Node& n = node(v);
  return n.op == OpKind::kParameter ? n.param->value : n.value;
}

template <typename T>
const BasicTensor<T>& BasicGraph<T>::grad(Var v) const {
  const Node& n = node(v);
  return n.op == OpKind::kParameter ? n.param->grad : n.grad;
}

template <typename T>
BasicTensor<T>& BasicGraph<T>::grad_of(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.op == OpKind::kParameter ? n.param->grad : n.grad;
}

template <typename T>
std::vector<std::string> BasicGraph<T>::input_names() const {
  std::vector<std::string> out;
  for (const auto& [name, id] : input_index_) out.push_back(name);
  return out;
}

template <typename T>
Var BasicGraph<T>::find_input(const std::string& name) const {
  auto it = input_index_.find(name);
  if (it == input_index_.end()) throw std::invalid_argument("graph has no input named '" + name + "'");
  return Var{it->second};
}

template <typename T>
std::vector<BasicParameter<T>*> BasicGraph<T>::parameters() const {
  std::vector<ParameterT*> out;
  for (const Node& n : nodes_) {
    if (n.op == OpKind::kParameter && std::find(out.begin(), out.end(), n.param) == out.end()) {
      out.push_back(n.param);
    }
  }
  return out;
}

template <typename T>
void BasicGraph<T>::forward_node(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  auto in = [&](std::size_t i) -> const TensorT& { return value(Var{n.inputs[i]}); };
  TensorT& y = n.value;

  switch (n.op) {
    case OpKind::kInput:
      if (!n.bound) fail(id, "input '" + n.label + "' was not provided");
      return;
    case OpKind::kParameter:
    case OpKind::kConstant:
      return;

    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      const TensorT& a = in(0);
      const TensorT& b = in(1);
      if (a.shape() != b.shape()) {
        fail(id, "operand shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
      }
      y.resize(a.shape());
      const T* pa = a.data();
      const T* pb = b.data();
      T* py = y.data();
      if (n.op == OpKind::kAdd) {
        for_each_index(a.size(), [&](std::size_t i) { py[i] = pa[i] + pb[i]; });
      } else if (n.op == OpKind::kSub) {
        for_each_index(a.size(), [&](std::size_t i) { py[i] = pa[i] - pb[i]; });
      } else {
        for_each_index(a.size(), [&](std::size_t i) { py[i] = pa[i] * pb[i]; });
      }
      return;
    }

    case OpKind::kScale: {
      const TensorT& a = in(0);
      y.resize(a.shape());
      const T f = static_cast<T>(n.real);
      for_each_index(a.size(), [&](std::size_t i) { y[i] = a[i] * f; });
      return;
    }

    case OpKind::kMatMul: {
      const TensorT& a = in(0);
      const TensorT& b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        fail(id, "cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
      }
      y.resize({a.dim(0), b.dim(1)});
      kernels::gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.data(), b.data(), y.data(), false);
      return;
    }

    case OpKind::kAddBias: {
      const TensorT& a = in(0);
      const TensorT& b = in(1);
      if (a.rank() != 2 || b.rank() != 1 || a.dim(1) != b.dim(0)) {
        fail(id, "bias " + shape_str(b.shape()) + " does not match " + shape_str(a.shape()));
      }
      y.resize(a.shape());
      const std::size_t cols = static_cast<std::size_t>(a.dim(1));
      for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i % cols];
      return;
    }

    case OpKind::kConv2d: {
      const TensorT& x = in(0);
      const TensorT& w = in(1);
      const TensorT& b = in(2);
      if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1 || w.dim(1) != x.dim(1) ||
          w.dim(2) != w.dim(3) || b.dim(0) != w.dim(0)) {
        fail(id, "conv2d shapes incompatible: x " + shape_str(x.shape()) + ", w " +
                     shape_str(w.shape()) + ", b " + shape_str(b.shape()));
      }
      const int batch = x.dim(0);
      const int out_c = w.dim(0);
      const auto g = kernels::conv_geometry(x.dim(1), x.dim(2), x.dim(3), w.dim(2), n.ints[0], n.ints[1]);
      const int cols = batch * g.positions();
      n.scratch.resize({g.col_rows(), cols});
      kernels::im2col(g, batch, x.data(), n.scratch.data());
      n.scratch2.resize({out_c, cols});
      kernels::gemm(false, false, out_c, cols, g.col_rows(), w.data(), n.scratch.data(),
                    n.scratch2.data(), false);
      y.resize({batch, out_c, g.out_height, g.out_width});
      kernels::from_channel_major(batch, out_c, g.positions(), n.scratch2.data(), y.data());
      const std::size_t plane = static_cast<std::size_t>(g.positions());
      for (int bi = 0; bi < batch; ++bi) {
        for (int o = 0; o < out_c; ++o) {
          T* p = y.data() + (static_cast<std::size_t>(bi) * out_c + o) * plane;
          const T bias = b[static_cast<std::size_t>(o)];
          for (std::size_t i = 0; i < plane; ++i) p[i] += bias;
        }
      }
      return;
    }

    case OpKind::kConvTranspose2d: {
      const TensorT& x = in(0);
      const TensorT& w = in(1);
      const TensorT& b = in(2);
      if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1 || w.dim(0) != x.dim(1) ||
          w.dim(2) != w.dim(3) || b.dim(0) != w.dim(1)) {
        fail(id, "conv_transpose2d shapes incompatible: x " + shape_str(x.shape()) + ", w " +
                     shape_str(w.shape()) + ", b " + shape_str(b.shape()));
      }
      const int batch = x.dim(0);
      const int in_c = x.dim(1);
      const int out_c = w.dim(1);
      const int k = w.dim(2);
      const int stride = n.ints[0];
      const int pad = n.ints[1];
      const int out_h = (x.dim(2) - 1) * stride - 2 * pad + k + n.ints[2];
      const int out_w = (x.dim(3) - 1) * stride - 2 * pad + k + n.ints[2];
      const auto g = kernels::conv_geometry(out_c, out_h, out_w, k, stride, pad);
      if (g.out_height != x.dim(2) || g.out_width != x.dim(3)) {
        fail(id, "output padding inconsistent with input " + shape_str(x.shape()));
      }
      const int cols = batch * g.positions();
      n.scratch.resize({in_c, cols});
      kernels::to_channel_major(batch, in_c, g.positions(), x.data(), n.scratch.data());
      n.scratch2.resize({g.col_rows(), cols});
      kernels::gemm(true, false, g.col_rows(), cols, in_c, w.data(), n.scratch.data(),
                    n.scratch2.data(), false);
      y.resize({batch, out_c, out_h, out_w});
      kernels::col2im(g, batch, n.scratch2.data(), y.data());
      const std::size_t plane = static_cast<std::size_t>(g.pixels());
      for (int bi = 0; bi < batch; ++bi) {
        for (int o = 0; o < out_c; ++o) {
          T* p = y.data() + (static_cast<std::size_t>(bi) * out_c + o) * plane;
          const T bias = b[static_cast<std::size_t>(o)];
          for (std::size_t i = 0; i < plane; ++i) p[i] += bias;
        }
      }
      return;
    }

    case OpKind::kLeakyRelu: {
      const TensorT& a = in(0);
      y.resize(a.shape());
      const T slope = static_cast<T>(n.real);
      for_each_index(a.size(), [&](std::size_t i) { y[i] = a[i] > T(0) ? a[i] : a[i] * slope; });
      return;
    }
    case OpKind::kSigmoid: {
      const TensorT& a = in(0);
      y.resize(a.shape());
      for_each_index(a.size(), [&](std::size_t i) { y[i] = sigmoid_of(a[i]); });
      return;
    }
    case OpKind::kSoftplus: {
      const TensorT& a = in(0);
      y.resize(a.shape());
      for_each_index(a.size(), [&](std::size_t i) { y[i] = softplus_of(a[i]); });
      return;
    }
    case OpKind::kSquare: {
      const TensorT& a = in(0);
      y.resize(a.shape());
      for_each_index(a.size(), [&](std::size_t i) { y[i] = a[i] * a[i]; });
      return;
    }
    case OpKind::kAbs: {
      const TensorT& a = in(0);
      y.resize(a.shape());
      for_each_index(a.size(), [&](std::size_t i) { y[i] = std::abs(a[i]); });
      return;
    }

    case OpKind::kSum:
    case OpKind::kMean: {
      const TensorT& a = in(0);
      if (a.empty()) fail(id, "reduction over an empty tensor");
      double acc = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]);
      if (n.op == OpKind::kMean) acc /= static_cast<double>(a.size());
      y.resize({1});
      y[0] = static_cast<T>(acc);
      return;
    }

    case OpKind::kSumRows:
    case OpKind::kNormRows: {
      const TensorT& a = in(0);
      if (a.rank() < 1) fail(id, "row reduction needs rank >= 1");
      const int rows = a.dim(0);
      const std::size_t len = row_size(a.shape());
      y.resize({rows});
      for (int r = 0; r < rows; ++r) {
        const T* p = a.data() + static_cast<std::size_t>(r) * len;
        double acc = 0.0;
        if (n.op == OpKind::kSumRows) {
          for (std::size_t i = 0; i < len; ++i) acc += static_cast<double>(p[i]);
        } else {
          for (std::size_t i = 0; i < len; ++i) acc += static_cast<double>(p[i]) * static_cast<double>(p[i]);
          acc = std::sqrt(acc);
        }
        y[static_cast<std::size_t>(r)] = static_cast<T>(acc);
      }
      return;
    }

    case OpKind::kL2NormalizeRows: {
      const TensorT& a = in(0);
      if (a.rank() != 2) fail(id, "expects a [rows, features] tensor, got " + shape_str(a.shape()));
      const int rows = a.dim(0);
      const std::size_t len = static_cast<std::size_t>(a.dim(1));
      y.resize(a.shape());
      n.scratch.resize({rows});
      for (int r = 0; r < rows; ++r) {
        const T* p = a.data() + static_cast<std::size_t>(r) * len;
        double acc = kNormalizeEps;
        for (std::size_t i = 0; i < len; ++i) acc += static_cast<double>(p[i]) * static_cast<double>(p[i]);
        const double norm = std::sqrt(acc);
        n.scratch[static_cast<std::size_t>(r)] = static_cast<T>(norm);
        T* q = y.data() + static_cast<std::size_t>(r) * len;
        for (std::size_t i = 0; i < len; ++i) q[i] = static_cast<T>(static_cast<double>(p[i]) / norm);
      }
      return;
    }

    case OpKind::kConcat: {
      const int axis_raw = n.ints[0];
      const TensorT& first = in(0);
      const int axis = axis_raw < 0 ? axis_raw + first.rank() : axis_raw;
      if (axis < 0 || axis >= first.rank()) fail(id, "concat axis out of range");
      Shape out = first.shape();
      out[static_cast<std::size_t>(axis)] = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const Shape& s = in(i).shape();
        bool ok = s.size() == out.size();
        for (std::size_t d = 0; ok && d < s.size(); ++d) {
          ok = static_cast<int>(d) == axis || s[d] == first.shape()[d];
        }
        if (!ok) {
          fail(id, "cannot concatenate " + shape_str(s) + " with " + shape_str(first.shape()) +
                       " along axis " + std::to_string(axis));
        }
        out[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
      }
      y.resize(out);
      const std::size_t outer = outer_size(out, axis);
      const std::size_t inner = inner_size(out, axis);
      const std::size_t out_block = static_cast<std::size_t>(out[static_cast<std::size_t>(axis)]) * inner;
      std::size_t offset = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const TensorT& part = in(i);
        const std::size_t block = static_cast<std::size_t>(part.dim(axis)) * inner;
        for (std::size_t o = 0; o < outer; ++o) {
          std::memcpy(y.data() + o * out_block + offset, part.data() + o * block, sizeof(T) * block);
        }
        offset += block;
      }
      return;
    }

    case OpKind::kSlice: {
      const TensorT& a = in(0);
      const int axis = n.ints[0] < 0 ? n.ints[0] + a.rank() : n.ints[0];
      if (axis < 0 || axis >= a.rank()) fail(id, "slice axis out of range");
      const int start = n.ints[1];
      const int length = n.ints[2];
      if (start < 0 || length <= 0 || start + length > a.dim(axis)) {
        fail(id, "slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for " + shape_str(a.shape()));
      }
      Shape out = a.shape();
      out[static_cast<std::size_t>(axis)] = length;
      y.resize(out);
      const std::size_t outer = outer_size(out, axis);
      const std::size_t inner = inner_size(out, axis);
      const std::size_t src_block = static_cast<std::size_t>(a.dim(axis)) * inner;
      const std::size_t dst_block = static_cast<std::size_t>(length) * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        std::memcpy(y.data() + o * dst_block, a.data() + o * src_block + static_cast<std::size_t>(start) * inner,
                    sizeof(T) * dst_block);
      }
      return;
    }

    case OpKind::kReshape: {
      const TensorT& a = in(0);
      Shape out = n.declared;
      std::size_t known = 1;
      int infer = -1;
      for (std::size_t d = 0; d < out.size(); ++d) {
        if (out[d] == -1) {
          infer = static_cast<int>(d);
        } else {
          known *= static_cast<std::size_t>(out[d]);
        }
      }
      if (infer >= 0) {
        if (known == 0 || a.size() % known != 0) fail(id, "cannot infer reshape of " + shape_str(a.shape()));
        out[static_cast<std::size_t>(infer)] = static_cast<int>(a.size() / known);
      }
      if (shape_size(out) != a.size()) {
        fail(id, "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(n.declared));
      }
      y.resize(out);
      std::memcpy(y.data(), a.data(), sizeof(T) * a.size());
      return;
    }

    case OpKind::kGlobalAvgPool: {
      const TensorT& a = in(0);
      if (a.rank() != 4) fail(id, "expects [B,C,H,W], got " + shape_str(a.shape()));
      const int rows = a.dim(0) * a.dim(1);
      const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * static_cast<std::size_t>(a.dim(3));
      y.resize({a.dim(0), a.dim(1)});
      for (int r = 0; r < rows; ++r) {
        const T* p = a.data() + static_cast<std::size_t>(r) * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
        y[static_cast<std::size_t>(r)] = static_cast<T>(acc / static_cast<double>(plane));
      }
      return;
    }

    case OpKind::kCustom:
      n.custom_forward(in(0), y);
      return;
  }
}

template <typename T>
void BasicGraph<T>::backward(Var loss) {
  const Node& ln = node(loss);
  if (value(loss).size() != 1) {
    fail(loss.id, "backward needs a scalar loss, got shape " + shape_str(value(loss).shape()));
  }
  (void)ln;
  const std::size_t count = static_cast<std::size_t>(loss.id) + 1;
  needs_grad_.assign(nodes_.size(), 0);
  for (std::size_t i = 0; i < count; ++i) {
    const Node& n = nodes_[i];
    switch (n.op) {
      case OpKind::kParameter: needs_grad_[i] = n.param->trainable; break;
      case OpKind::kInput: needs_grad_[i] = n.requires_grad; break;
      case OpKind::kConstant: needs_grad_[i] = 0; break;
      default:
        for (int in : n.inputs) needs_grad_[i] |= needs_grad_[static_cast<std::size_t>(in)];
    }
  }
  for (std::size_t i = 0; i < count; ++i) {
    Node& n = nodes_[i];
    if (n.op == OpKind::kParameter) {
      if (n.param->grad.shape() != n.param->value.shape()) {
        n.param->grad.resize(n.param->value.shape());
        n.param->grad.fill(T(0));
      }
      continue;
    }
    if (needs_grad_[i]) {
      n.grad.resize(n.value.shape());
      n.grad.fill(T(0));
    } else {
      n.grad.resize({0});
    }
  }
  if (!needs_grad_[static_cast<std::size_t>(loss.id)]) return;
  grad_of(loss.id)[0] += T(1);
  for (int id = loss.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!needs_grad_[static_cast<std::size_t>(id)] || n.inputs.empty()) continue;
    backward_node(id);
  }
}

template <typename T>
void BasicGraph<T>::backward_node(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const TensorT& gy = n.grad;
  const TensorT& y = n.value;
  auto in = [&](std::size_t i) -> const TensorT& { return value(Var{n.inputs[i]}); };
  auto wants = [&](std::size_t i) { return needs_grad_[static_cast<std::size_t>(n.inputs[i])] != 0; };
  auto gin = [&](std::size_t i) -> TensorT& { return grad_of(n.inputs[i]); };

  switch (n.op) {
    case OpKind::kInput:
    case OpKind::kParameter:
    case OpKind::kConstant:
      return;

    case OpKind::kAdd:
    case OpKind::kSub: {
      const T sign = n.op == OpKind::kAdd ? T(1) : T(-1);
      if (wants(0)) {
        TensorT& g = gin(0);
        for_each_index(gy.size(), [&](std::size_t i) { g[i] += gy[i]; });
      }
      if (wants(1)) {
        TensorT& g = gin(1);
        for_each_index(gy.size(), [&](std::size_t i) { g[i] += sign * gy[i]; });
      }
      return;
    }
    case OpKind::kMul: {
      const TensorT& a = in(0);
      const TensorT& b = in(1);
      if (wants(0)) {
        TensorT& g = gin(0);
        for_each_index(gy.size(), [&](std::size_t i) { g[i] += gy[i] * b[i]; });
      }
      if (wants(1)) {
        TensorT& g = gin(1);
        for_each_index(gy.size(), [&](std::size_t i) { g[i] += gy[i] * a[i]; });
      }
      return;
    }
    case OpKind::kScale: {
      TensorT& g = gin(0);
      const T f = static_cast<T>(n.real);
      for_each_index(gy.size(), [&](std::size_t i) { g[i] += gy[i] * f; });
      return;
    }
    case OpKind::kMatMul: {
      const TensorT& a = in(0);
      const TensorT& b = in(1);
      const int rows = a.dim(0);
      const int inner = a.dim(1);
      const int cols = b.dim(1);
      if (wants(0)) kernels::gemm(false, true, rows, inner, cols, gy.data(), b.data(), gin(0).data(), true);
      if (wants(1)) kernels::gemm(true, false, inner, cols, rows, a.data(), gy.data(), gin(1).data(), true);
      return;
    }
    case OpKind::kAddBias: {
      if (wants(0)) {
        TensorT& g = gin(0);
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
      }
      if (wants(1)) {
        TensorT& g = gin(1);
        const std::size_t cols = g.size();
        for (std::size_t i = 0; i < gy.size(); ++i) g[i % cols] += gy[i];
      }
      return;
    }

    case OpKind::kConv2d: {
      const TensorT& x = in(0);
      const TensorT& w = in(1);
      const int batch = x.dim(0);
      const int out_c = w.dim(0);
      const auto g = kernels::conv_geometry(x.dim(1), x.dim(2), x.dim(3), w.dim(2), n.ints[0], n.ints[1]);
      const int cols = batch * g.positions();
      TensorT& gyt = n.scratch2;  // reuse the forward output buffer, [O, B*P]
      kernels::to_channel_major(batch, out_c, g.positions(), gy.data(), gyt.data());
      if (wants(2)) {
        TensorT& gb = gin(2);
        for (int o = 0; o < out_c; ++o) {
          const T* p = gyt.data() + static_cast<std::size_t>(o) * cols;
          double acc = 0.0;
          for (int i = 0; i < cols; ++i) acc += static_cast<double>(p[i]);
          gb[static_cast<std::size_t>(o)] += static_cast<T>(acc);
        }
      }
      if (wants(1)) {
        kernels::gemm(false, true, out_c, g.col_rows(), cols, gyt.data(), n.scratch.data(), gin(1).data(), true);
      }
      if (wants(0)) {
        TensorT dcol({g.col_rows(), cols});
        kernels::gemm(true, false, g.col_rows(), cols, out_c, w.data(), gyt.data(), dcol.data(), false);
        TensorT dx(x.shape());
        kernels::col2im(g, batch, dcol.data(), dx.data());
        TensorT& gx = gin(0);
        for_each_index(dx.size(), [&](std::size_t i) { gx[i] += dx[i]; });
      }
      return;
    }

    case OpKind::kConvTranspose2d: {
      const TensorT& x = in(0);
      const TensorT& w = in(1);
      const int batch = x.dim(0);
      const int in_c = x.dim(1);
      const int out_c = w.dim(1);
      const auto g = kernels::conv_geometry(out_c, y.dim(2), y.dim(3), w.dim(2), n.ints[0], n.ints[1]);
      const int cols = batch * g.positions();
      if (wants(2)) {
        TensorT& gb = gin(2);
        const std::size_t plane = static_cast<std::size_t>(g.pixels());
        for (int o = 0; o < out_c; ++o) {
          double acc = 0.0;
          for (int bi = 0; bi < batch; ++bi) {
            const T* p = gy.data() + (static_cast<std::size_t>(bi) * out_c + o) * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
          }
          gb[static_cast<std::size_t>(o)] += static_cast<T>(acc);
        }
      }
      if (!wants(0) && !wants(1)) return;
      TensorT& dcol = n.scratch2;  // [Cout*k*k, B*Pin]
      kernels::im2col(g, batch, gy.data(), dcol.data());
      if (wants(1)) {
        kernels::gemm(false, true, in_c, g.col_rows(), cols, n.scratch.data(), dcol.data(), gin(1).data(), true);
      }
      if (wants(0)) {
        TensorT dxt({in_c, cols});
        kernels::gemm(false, false, in_c, cols, g.col_rows(), w.data(), dcol.data(), dxt.data(), false);
        TensorT dx(x.shape());
        kernels::from_channel_major(batch, in_c, g.positions(), dxt.data(), dx.data());
        TensorT& gx = gin(0);
        for_each_index(dx.size(), [&](std::size_t i) { gx[i] += dx[i]; });
      }
      return;
    }

    case OpKind::kLeakyRelu: {
      const TensorT& a = in(0);
      TensorT& g = gin(0);
      const T slope = static_cast<T>(n.real);
      for_each_index(gy.size(), [&](std::size_t i) { g[i] += a[i] > T(0) ? gy[i] : gy[i] * slope; });
      return;
    }
    case OpKind::kSigmoid: {
      TensorT& g = gin(0);
      for_each_index(gy.size(), [&](std::size_t i) { g[i] += gy[i] * y[i] * (T(1) - y[i]); });
      return;
    }
    case OpKind::kSoftplus: {
      const TensorT& a = in(0);
      TensorT& g = gin(0);
      for_each_index(gy.size(), [&](std::size_t i) { g[i] += gy[i] * sigmoid_of(a[i]); });
      return;
    }
    case OpKind::kSquare: {
      const TensorT& a = in(0);
      TensorT& g = gin(0);
      for_each_index(gy.size(), [&](std::size_t i) { g[i] += gy[i] * T(2) * a[i]; });
      return;
    }
    case OpKind::kAbs: {
      const TensorT& a = in(0);
      TensorT& g = gin(0);
      for_each_index(gy.size(), [&](std::size_t i) {
        const T s = a[i] > T(0) ? T(1) : (a[i] < T(0) ? T(-1) : T(0));
        g[i] += gy[i] * s;
      });
      return;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
      TensorT& g = gin(0);
      T v = gy[0];
      if (n.op == OpKind::kMean) v = static_cast<T>(static_cast<double>(v) / static_cast<double>(g.size()));
      for_each_index(g.size(), [&](std::size_t i) { g[i] += v; });
      return;
    }
    case OpKind::kSumRows:
    case OpKind::kNormRows: {
      const TensorT& a = in(0);
      TensorT& g = gin(0);
      const int rows = a.dim(0);
      const std::size_t len = row_size(a.shape());
      for (int r = 0; r < rows; ++r) {
        const T gr = gy[static_cast<std::size_t>(r)];
        T* q = g.data() + static_cast<std::size_t>(r) * len;
        if (n.op == OpKind::kSumRows) {
          for (std::size_t i = 0; i < len; ++i) q[i] += gr;
        } else {
          const T norm = y[static_cast<std::size_t>(r)];
          if (norm == T(0)) continue;
          const T* p = a.data() + static_cast<std::size_t>(r) * len;
          const T f = gr / norm;
          for (std::size_t i = 0; i < len; ++i) q[i] += f * p[i];
        }
      }
      return;
    }
    case OpKind::kL2NormalizeRows: {
      TensorT& g = gin(0);
      const int rows = y.dim(0);
      const std::size_t len = static_cast<std::size_t>(y.dim(1));
      for (int r = 0; r < rows; ++r) {
        const T* yr = y.data() + static_cast<std::size_t>(r) * len;
        const T* gr = gy.data() + static_cast<std::size_t>(r) * len;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) dot += static_cast<double>(yr[i]) * static_cast<double>(gr[i]);
        const double norm = static_cast<double>(n.scratch[static_cast<std::size_t>(r)]);
        T* q = g.data() + static_cast<std::size_t>(r) * len;
        for (std::size_t i = 0; i < len; ++i) {
          q[i] += static_cast<T>((static_cast<double>(gr[i]) - static_cast<double>(yr[i]) * dot) / norm);
        }
      }
      return;
    }
    case OpKind::kConcat: {
      const int axis = n.ints[0] < 0 ? n.ints[0] + y.rank() : n.ints[0];
      const std::size_t outer = outer_size(y.shape(), axis);
      const std::size_t inner = inner_size(y.shape(), axis);
      const std::size_t out_block = static_cast<std::size_t>(y.dim(axis)) * inner;
      std::size_t offset = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const std::size_t block = static_cast<std::size_t>(in(i).dim(axis)) * inner;
        if (wants(i)) {
          TensorT& g = gin(i);
          for (std::size_t o = 0; o < outer; ++o) {
            const T* src = gy.data() + o * out_block + offset;
            T* dst = g.data() + o * block;
            for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
          }
        }
        offset += block;
      }
      return;
    }
    case OpKind::kSlice: {
      const TensorT& a = in(0);
      TensorT& g = gin(0);
      const int axis = n.ints[0] < 0 ? n.ints[0] + a.rank() : n.ints[0];
      const std::size_t outer = outer_size(y.shape(), axis);
      const std::size_t inner = inner_size(y.shape(), axis);
      const std::size_t src_block = static_cast<std::size_t>(a.dim(axis)) * inner;
      const std::size_t dst_block = static_cast<std::size_t>(n.ints[2]) * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        T* dst = g.data() + o * src_block + static_cast<std::size_t>(n.ints[1]) * inner;
        const T* src = gy.data() + o * dst_block;
        for (std::size_t j = 0; j < dst_block; ++j) dst[j] += src[j];
      }
      return;
    }
    case OpKind::kReshape: {
      TensorT& g = gin(0);
      for_each_index(gy.size(), [&](std::size_t i) { g[i] += gy[i]; });
      return;
    }
    case OpKind::kGlobalAvgPool: {
      const TensorT& a = in(0);
      TensorT& g = gin(0);
      const int rows = a.dim(0) * a.dim(1);
      const std::size_t plane = static_cast<std::size_t>(a.dim(2)) * static_cast<std::size_t>(a.dim(3));
      for (int r = 0; r < rows; ++r) {
        const T v = static_cast<T>(static_cast<double>(gy[static_cast<std::size_t>(r)]) / static_cast<double>(plane));
        T* q = g.data() + static_cast<std::size_t>(r) * plane;
        for (std::size_t i = 0; i < plane; ++i) q[i] += v;
      }
      return;
    }
    case OpKind::kCustom:
      n.custom_backward(in(0), y, gy, gin(0));
      return;
  }
}

template class BasicGraph<float>;
template class BasicGraph<double>;

}  // namespace hypercut::diff
