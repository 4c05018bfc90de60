#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Values are rank-2
// (vectors are 1 x n rows). Backward supports three propagation rules:
//   * standard         exact reverse-mode gradients;
//   * deeplift-rescale discrete multipliers dy/dx = (y - y0)/(x - x0) measured
//                      against a reference pass over the same tape structure,
//                      so that summation-to-delta holds exactly;
//   * gim              softmax Jacobians re-evaluated at temperature, frozen
//                      layer-norm statistics, and gate-aware products.

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace tsattr::ad {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Tensor = MatrixX<double>;

inline constexpr double kLayerNormEpsilon = 1e-5;

enum class OpKind : std::uint8_t {
  kLeaf,
  kConstant,
  kMatMul,
  kAdd,
  kMul,
  kScale,
  kTranspose,
  kRelu,
  kSigmoid,
  kTanh,
  kExp,
  kSoftmax,
  kLayerNorm,
  kEmbeddingLookup,
  kConcat,
  kSlice,
  kSum,
  kMean,
};

std::string_view op_name(OpKind kind);

/// True for ops whose deeplift backward needs reference activations
/// (elementwise nonlinearities, softmax, layer-norm and the bilinear products).
bool needs_reference(OpKind kind);

/// Handle to a node on a tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
  friend bool operator==(Var, Var) = default;
};

/// Marks one operand of an elementwise product as a gate for GIM.
struct GateFlag {
  std::string tag;
  int operand = 0;  // 0 = lhs is the gate, 1 = rhs is the gate
};

struct NodeSignature {
  OpKind kind;
  Eigen::Index rows;
  Eigen::Index cols;
  friend bool operator==(const NodeSignature&, const NodeSignature&) = default;
};

class Tape {
 public:
  struct Node {
    OpKind kind = OpKind::kConstant;
    std::vector<int> parents;
    Tensor value;
    const Tensor* borrowed = nullptr;
    bool requires_grad = false;
    // op-specific forward context
    double scalar = 0.0;
    Eigen::Index row0 = 0, col0 = 0;
    int axis = 0;
    std::vector<int> indices;
    Tensor saved_a;  // layer-norm: inverse std per row (rows x 1)
    Tensor saved_b;  // layer-norm: normalized pre-affine output
    std::string gate_tag;
    int gate_operand = -1;

    const Tensor& out() const { return borrowed ? *borrowed : value; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Differentiable input owned by the tape.
  Var leaf(Tensor value);
  /// Differentiable input referencing external storage, which must outlive the tape.
  Var leaf_ref(const Tensor& value);
  /// Non-differentiable input.
  Var constant(Tensor value);
  /// Non-differentiable input referencing external storage.
  Var constant_ref(const Tensor& value);

  const Tensor& value(Var v) const { return node(v).out(); }
  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
  std::size_t size() const { return nodes_.size(); }
  std::vector<NodeSignature> structure() const;

  // Used by the op free functions.
  Var push(Node node);

 private:
  std::vector<Node> nodes_;
};

// ---- forward ops ---------------------------------------------------------

Var matmul(Tape& tape, Var a, Var b);
/// Same-shape sum, or row broadcast when `b` is 1 x cols(a).
Var add(Tape& tape, Var a, Var b);
Var sub(Tape& tape, Var a, Var b);
/// Elementwise product. `gate` marks one operand as a gate for GIM.
Var mul(Tape& tape, Var a, Var b, const GateFlag* gate = nullptr);
Var scale(Tape& tape, Var a, double factor);
Var transpose(Tape& tape, Var a);
Var relu(Tape& tape, Var a);
Var sigmoid(Tape& tape, Var a);
Var tanh(Tape& tape, Var a);
Var exp(Tape& tape, Var a);
/// Row-wise softmax.
Var softmax(Tape& tape, Var a);
/// Row-wise layer normalization with affine 1 x cols `gamma` and `beta`.
Var layer_norm(Tape& tape, Var a, Var gamma, Var beta);
Var embedding_lookup(Tape& tape, Var table, std::span<const int> rows);
/// axis 0 stacks rows, axis 1 stacks columns.
Var concat(Tape& tape, std::span<const Var> parts, int axis);
Var slice(Tape& tape, Var a, Eigen::Index row0, Eigen::Index rows, Eigen::Index col0, Eigen::Index cols);
/// Sum of all entries, 1 x 1.
Var sum(Tape& tape, Var a);
/// Mean over rows, 1 x cols.
Var mean(Tape& tape, Var a);

// ---- backward ------------------------------------------------------------

enum class BackwardMode { kStandard, kDeepLiftRescale, kGim };

struct ReferenceEntry {
  std::vector<Tensor> inputs;
  Tensor output;
};

/// Activations of a reference forward pass, one entry per nonlinearity node,
/// plus the tape structure they were recorded from.
struct ReferenceActivations {
  std::vector<NodeSignature> structure;
  std::map<int, ReferenceEntry> entries;

  static ReferenceActivations capture(const Tape& tape);
};

struct BackwardPolicy {
  BackwardMode mode = BackwardMode::kStandard;
  double gim_temperature = 2.0;
  /// Gate tags honoured in gim mode.
  std::set<std::string> gim_gate_tags;
  /// gim mode: treat layer-norm mean and variance as constants.
  bool gim_freeze_norm_stats = true;
  const ReferenceActivations* reference = nullptr;
  double near_zero_delta = 1e-7;
};

class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> grads, std::vector<bool> present)
      : grads_(std::move(grads)), present_(std::move(present)) {}

  bool has(Var v) const { return v.valid() && static_cast<std::size_t>(v.id) < present_.size() && present_[v.id]; }
  /// Gradient for `v`; a zero tensor of the node's shape when no signal reached it.
  Tensor of(const Tape& tape, Var v) const;
  const Tensor& at(Var v) const;

 private:
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
};

/// Backward from a 1 x 1 output node.
Gradients backward(const Tape& tape, Var output, const BackwardPolicy& policy = {});
/// Backward from an arbitrary node with an explicit upstream seed.
Gradients backward_seeded(const Tape& tape, Var output, const Tensor& seed,
                          const BackwardPolicy& policy = {});

// ---- scalar-generic kernels shared with tests ----------------------------

template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar shift = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - shift).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace tsattr::ad
