#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hypercut/diffcore/parameters.hpp"
#include "hypercut/diffcore/tensor.hpp"

namespace hypercut::diff {

/// Handle to a node inside one graph.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

enum class OpKind {
  kInput,
  kParameter,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatMul,
  kAddBias,
  kConv2d,
  kConvTranspose2d,
  kLeakyRelu,
  kSigmoid,
  kSoftplus,
  kSquare,
  kAbs,
  kSum,
  kMean,
  kSumRows,
  kNormRows,
  kL2NormalizeRows,
  kConcat,
  kSlice,
  kReshape,
  kGlobalAvgPool,
  kCustom,
};

const char* op_name(OpKind op);

/// Overflow-safe softplus: max(t, 0) + log(1 + exp(-|t|)).
double softplus(double t);

/// Static computation graph.
///
/// Nodes are appended in construction order, which is a topological order.
/// `evaluate` binds named inputs and runs every node forward; `backward`
/// walks the nodes in reverse and accumulates into trainable parameter
/// gradients. Shapes are checked at evaluation time, so the leading (batch)
/// dimension of inputs declared with -1 may change between calls.
template <typename T>
class BasicGraph {
 public:
  using TensorT = BasicTensor<T>;
  using ParameterT = BasicParameter<T>;
  /// Custom unary op hooks. The backward hook accumulates into `grad_x`.
  using CustomForward = std::function<void(const TensorT& x, TensorT& y)>;
  using CustomBackward =
      std::function<void(const TensorT& x, const TensorT& y, const TensorT& grad_y, TensorT& grad_x)>;

  Var input(const std::string& name, Shape shape, bool requires_grad = false);
  Var parameter(ParameterT& p);
  Var constant(TensorT value, const std::string& label = {});

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  /// [B,K] x [K,M] -> [B,M]
  Var matmul(Var a, Var b);
  /// [B,M] + bias[M]
  Var add_bias(Var a, Var bias);
  /// x [B,C,H,W], w [O,C,k,k], b [O]
  Var conv2d(Var x, Var w, Var b, int stride, int pad);
  /// x [B,C,H,W], w [C,O,k,k], b [O]; output (H-1)*stride - 2*pad + k + output_pad
  Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad, int output_pad);
  Var leaky_relu(Var a, double slope);
  Var sigmoid(Var a);
  Var softplus(Var a);
  Var square(Var a);
  Var abs(Var a);
  /// Sum / mean over every element -> shape [1].
  Var sum(Var a);
  Var mean(Var a);
  /// [B,...] -> [B]
  Var sum_rows(Var a);
  /// [B,...] -> [B], Euclidean norm of each row.
  Var norm_rows(Var a);
  /// [B,M] -> rows scaled to unit Euclidean norm.
  Var l2_normalize_rows(Var a);
  Var concat(const std::vector<Var>& parts, int axis);
  Var slice(Var a, int axis, int start, int length);
  /// One target dimension may be -1 (inferred).
  Var reshape(Var a, Shape shape);
  /// [B,C,H,W] -> [B,C]
  Var global_avg_pool(Var a);
  Var custom(Var a, CustomForward forward, CustomBackward backward, const std::string& label);

  void set_label(Var v, std::string label);

  /// Binds every declared input and runs the forward pass.
  void evaluate(const std::map<std::string, TensorT>& inputs);
  /// Binds one input without evaluating.
  void set_input(const std::string& name, const TensorT& value);
  /// Forward pass over the currently bound inputs.
  void forward();

  /// Reverse pass from a one-element loss node. Parameter gradients are
  /// accumulated (call zero_grad on the owning set first).
  void backward(Var loss);

  const TensorT& value(Var v) const;
  /// Adjoint of a node after `backward`; zero-sized for nodes that carried no gradient.
  const TensorT& grad(Var v) const;

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::vector<std::string> input_names() const;
  Var find_input(const std::string& name) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::vector<ParameterT*> parameters() const;

 private:
  struct Node {
    OpKind op = OpKind::kInput;
    std::vector<int> inputs;
    std::string label;
    Shape declared;
    ParameterT* param = nullptr;
    bool requires_grad = false;
    bool bound = false;
    int ints[4] = {0, 0, 0, 0};
    double real = 0.0;
    CustomForward custom_forward;
    CustomBackward custom_backward;
    TensorT value;
    TensorT grad;
    TensorT scratch;
    TensorT scratch2;
  };

  Var push(Node node);
  Node& node(Var v);
  const Node& node(Var v) const;
  std::string describe(int id) const;
  [[noreturn]] void fail(int id, const std::string& message) const;

  void forward_node(int id);
  void backward_node(int id);
  TensorT& grad_of(int id);

  std::vector<Node> nodes_;
  std::map<std::string, int> input_index_;
  std::vector<char> needs_grad_;
};

using Graph = BasicGraph<float>;

extern template class BasicGraph<float>;
extern template class BasicGraph<double>;

}  // namespace hypercut::diff
