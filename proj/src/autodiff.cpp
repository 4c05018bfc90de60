#include "tsattr/autodiff.hpp"

#include <cmath>
#include <sstream>

#include "tsattr/error.hpp"

namespace tsattr::ad {
namespace {

using Node = Tape::Node;

std::string dims(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

[[noreturn]] void shape_error(OpKind kind, const std::string& detail) {
  throw ShapeError(std::string(op_name(kind)) + ": " + detail);
}

Node make(OpKind kind, std::initializer_list<Var> parents) {
  Node n;
  n.kind = kind;
  for (Var p : parents) n.parents.push_back(p.id);
  return n;
}

void check_var(const Tape& tape, Var v, OpKind kind) {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= tape.size()) {
    shape_error(kind, "operand is not on this tape");
  }
}

Tensor elementwise_derivative(OpKind kind, const Tensor& x, const Tensor& y) {
  switch (kind) {
    case OpKind::kRelu:
      return (x.array() > 0.0).cast<double>().matrix();
    case OpKind::kSigmoid:
      return (y.array() * (1.0 - y.array())).matrix();
    case OpKind::kTanh:
      return (1.0 - y.array().square()).matrix();
    case OpKind::kExp:
      return y;
    default:
      throw Error("elementwise_derivative: unsupported op");
  }
}

Var unary(Tape& tape, Var a, OpKind kind) {
  check_var(tape, a, kind);
  Node n = make(kind, {a});
  const Tensor& x = tape.value(a);
  switch (kind) {
    case OpKind::kRelu:
      n.value = x.cwiseMax(0.0);
      break;
    case OpKind::kSigmoid:
      n.value = (1.0 / (1.0 + (-x.array()).exp())).matrix();
      break;
    case OpKind::kTanh:
      n.value = x.array().tanh().matrix();
      break;
    case OpKind::kExp:
      n.value = x.array().exp().matrix();
      break;
    default:
      throw Error("unary: unsupported op");
  }
  return tape.push(std::move(n));
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "elementwise-mul";
    case OpKind::kScale: return "scale";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kExp: return "exp";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLayerNorm: return "layer-norm";
    case OpKind::kEmbeddingLookup: return "embedding-lookup";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
  }
  return "unknown";
}

bool needs_reference(OpKind kind) {
  switch (kind) {
    case OpKind::kMatMul:
    case OpKind::kMul:
    case OpKind::kRelu:
    case OpKind::kSigmoid:
    case OpKind::kTanh:
    case OpKind::kExp:
    case OpKind::kSoftmax:
    case OpKind::kLayerNorm:
      return true;
    default:
      return false;
  }
}

// ---- Tape ----------------------------------------------------------------

Var Tape::push(Node node) {
  if (!node.borrowed && !node.value.allFinite()) {
    throw NumericError(std::string(op_name(node.kind)) + ": non-finite output");
  }
  if (node.kind == OpKind::kLeaf) {
    node.requires_grad = true;
  } else if (node.kind != OpKind::kConstant) {
    for (int p : node.parents) node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf_ref(const Tensor& value) {
  if (!value.allFinite()) throw NumericError("leaf: non-finite value");
  Node n;
  n.kind = OpKind::kLeaf;
  n.borrowed = &value;
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.kind = OpKind::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
  if (!value.allFinite()) throw NumericError("constant: non-finite value");
  Node n;
  n.kind = OpKind::kConstant;
  n.borrowed = &value;
  return push(std::move(n));
}

std::vector<NodeSignature> Tape::structure() const {
  std::vector<NodeSignature> out;
  out.reserve(nodes_.size());
  for (const Node& n : nodes_) out.push_back({n.kind, n.out().rows(), n.out().cols()});
  return out;
}

// ---- forward ops ---------------------------------------------------------

Var matmul(Tape& tape, Var a, Var b) {
  check_var(tape, a, OpKind::kMatMul);
  check_var(tape, b, OpKind::kMatMul);
  const Tensor& x = tape.value(a);
  const Tensor& y = tape.value(b);
  if (x.cols() != y.rows()) shape_error(OpKind::kMatMul, dims(x) + " * " + dims(y));
  Node n = make(OpKind::kMatMul, {a, b});
  n.value.noalias() = x * y;
  return tape.push(std::move(n));
}

Var add(Tape& tape, Var a, Var b) {
  check_var(tape, a, OpKind::kAdd);
  check_var(tape, b, OpKind::kAdd);
  const Tensor& x = tape.value(a);
  const Tensor& y = tape.value(b);
  Node n = make(OpKind::kAdd, {a, b});
  if (x.rows() == y.rows() && x.cols() == y.cols()) {
    n.value = x + y;
  } else if (y.rows() == 1 && y.cols() == x.cols()) {
    n.axis = 1;  // row broadcast
    n.value = x.rowwise() + y.row(0);
  } else {
    shape_error(OpKind::kAdd, dims(x) + " + " + dims(y));
  }
  return tape.push(std::move(n));
}

Var sub(Tape& tape, Var a, Var b) { return add(tape, a, scale(tape, b, -1.0)); }

Var mul(Tape& tape, Var a, Var b, const GateFlag* gate) {
  check_var(tape, a, OpKind::kMul);
  check_var(tape, b, OpKind::kMul);
  const Tensor& x = tape.value(a);
  const Tensor& y = tape.value(b);
  if (x.rows() != y.rows() || x.cols() != y.cols()) shape_error(OpKind::kMul, dims(x) + " .* " + dims(y));
  Node n = make(OpKind::kMul, {a, b});
  n.value = x.cwiseProduct(y);
  if (gate) {
    if (gate->operand != 0 && gate->operand != 1) shape_error(OpKind::kMul, "gate operand must be 0 or 1");
    n.gate_tag = gate->tag;
    n.gate_operand = gate->operand;
  }
  return tape.push(std::move(n));
}

Var scale(Tape& tape, Var a, double factor) {
  check_var(tape, a, OpKind::kScale);
  Node n = make(OpKind::kScale, {a});
  n.scalar = factor;
  n.value = tape.value(a) * factor;
  return tape.push(std::move(n));
}

Var transpose(Tape& tape, Var a) {
  check_var(tape, a, OpKind::kTranspose);
  Node n = make(OpKind::kTranspose, {a});
  n.value = tape.value(a).transpose();
  return tape.push(std::move(n));
}

Var relu(Tape& tape, Var a) { return unary(tape, a, OpKind::kRelu); }
Var sigmoid(Tape& tape, Var a) { return unary(tape, a, OpKind::kSigmoid); }
Var tanh(Tape& tape, Var a) { return unary(tape, a, OpKind::kTanh); }
Var exp(Tape& tape, Var a) { return unary(tape, a, OpKind::kExp); }

Var softmax(Tape& tape, Var a) {
  check_var(tape, a, OpKind::kSoftmax);
  const Tensor& x = tape.value(a);
  if (x.cols() == 0) shape_error(OpKind::kSoftmax, "empty rows");
  Node n = make(OpKind::kSoftmax, {a});
  n.value = softmax_rows(x);
  return tape.push(std::move(n));
}

Var layer_norm(Tape& tape, Var a, Var gamma, Var beta) {
  check_var(tape, a, OpKind::kLayerNorm);
  check_var(tape, gamma, OpKind::kLayerNorm);
  check_var(tape, beta, OpKind::kLayerNorm);
  const Tensor& x = tape.value(a);
  const Tensor& g = tape.value(gamma);
  const Tensor& b = tape.value(beta);
  if (g.rows() != 1 || g.cols() != x.cols() || b.rows() != 1 || b.cols() != x.cols()) {
    shape_error(OpKind::kLayerNorm, "input " + dims(x) + ", gamma " + dims(g) + ", beta " + dims(b));
  }
  Node n = make(OpKind::kLayerNorm, {a, gamma, beta});
  n.scalar = kLayerNormEpsilon;
  const Eigen::Index cols = x.cols();
  n.saved_a.resize(x.rows(), 1);
  n.saved_b.resize(x.rows(), cols);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const auto centered = (x.row(r).array() - mu).eval();
    const double var = centered.square().sum() / static_cast<double>(cols);
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    n.saved_a(r, 0) = inv_std;
    n.saved_b.row(r) = (centered * inv_std).matrix();
  }
  n.value = (n.saved_b.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  return tape.push(std::move(n));
}

Var embedding_lookup(Tape& tape, Var table, std::span<const int> rows) {
  check_var(tape, table, OpKind::kEmbeddingLookup);
  const Tensor& t = tape.value(table);
  Node n = make(OpKind::kEmbeddingLookup, {table});
  n.indices.assign(rows.begin(), rows.end());
  n.value.resize(static_cast<Eigen::Index>(rows.size()), t.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= t.rows()) {
      shape_error(OpKind::kEmbeddingLookup, "index " + std::to_string(rows[i]) + " outside table of " +
                                                std::to_string(t.rows()) + " rows");
    }
    n.value.row(static_cast<Eigen::Index>(i)) = t.row(rows[i]);
  }
  return tape.push(std::move(n));
}

Var concat(Tape& tape, std::span<const Var> parts, int axis) {
  if (parts.empty()) shape_error(OpKind::kConcat, "no operands");
  if (axis != 0 && axis != 1) shape_error(OpKind::kConcat, "axis must be 0 or 1");
  Node n;
  n.kind = OpKind::kConcat;
  n.axis = axis;
  Eigen::Index rows = 0, cols = 0;
  for (Var p : parts) {
    check_var(tape, p, OpKind::kConcat);
    const Tensor& t = tape.value(p);
    if (axis == 0) {
      if (rows > 0 && t.cols() != cols) shape_error(OpKind::kConcat, "column mismatch " + dims(t));
      cols = t.cols();
      rows += t.rows();
    } else {
      if (cols > 0 && t.rows() != rows) shape_error(OpKind::kConcat, "row mismatch " + dims(t));
      rows = t.rows();
      cols += t.cols();
    }
    n.parents.push_back(p.id);
  }
  n.value.resize(rows, cols);
  Eigen::Index offset = 0;
  for (Var p : parts) {
    const Tensor& t = tape.value(p);
    if (axis == 0) {
      n.value.middleRows(offset, t.rows()) = t;
      offset += t.rows();
    } else {
      n.value.middleCols(offset, t.cols()) = t;
      offset += t.cols();
    }
  }
  return tape.push(std::move(n));
}

Var slice(Tape& tape, Var a, Eigen::Index row0, Eigen::Index rows, Eigen::Index col0, Eigen::Index cols) {
  check_var(tape, a, OpKind::kSlice);
  const Tensor& x = tape.value(a);
  if (row0 < 0 || col0 < 0 || rows < 0 || cols < 0 || row0 + rows > x.rows() || col0 + cols > x.cols()) {
    shape_error(OpKind::kSlice, "block (" + std::to_string(row0) + "," + std::to_string(col0) + ")+" +
                                    std::to_string(rows) + "x" + std::to_string(cols) + " outside " + dims(x));
  }
  Node n = make(OpKind::kSlice, {a});
  n.row0 = row0;
  n.col0 = col0;
  n.value = x.block(row0, col0, rows, cols);
  return tape.push(std::move(n));
}

Var sum(Tape& tape, Var a) {
  check_var(tape, a, OpKind::kSum);
  Node n = make(OpKind::kSum, {a});
  n.value = Tensor::Constant(1, 1, tape.value(a).sum());
  return tape.push(std::move(n));
}

Var mean(Tape& tape, Var a) {
  check_var(tape, a, OpKind::kMean);
  const Tensor& x = tape.value(a);
  if (x.rows() == 0) shape_error(OpKind::kMean, "mean over zero rows");
  Node n = make(OpKind::kMean, {a});
  n.value = x.colwise().mean();
  return tape.push(std::move(n));
}

// ---- reference activations ----------------------------------------------

ReferenceActivations ReferenceActivations::capture(const Tape& tape) {
  ReferenceActivations ref;
  ref.structure = tape.structure();
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const Node& n = tape.node(Var{static_cast<int>(i)});
    if (!needs_reference(n.kind)) continue;
    ReferenceEntry entry;
    for (int p : n.parents) entry.inputs.push_back(tape.node(Var{p}).out());
    entry.output = n.out();
    ref.entries.emplace(static_cast<int>(i), std::move(entry));
  }
  return ref;
}

// ---- backward ------------------------------------------------------------

Tensor Gradients::of(const Tape& tape, Var v) const {
  if (has(v)) return grads_[v.id];
  const Tensor& value = tape.value(v);
  return Tensor::Zero(value.rows(), value.cols());
}

const Tensor& Gradients::at(Var v) const {
  if (!has(v)) throw InvalidArgument("no gradient recorded for node " + std::to_string(v.id));
  return grads_[v.id];
}

namespace {

class BackwardPass {
 public:
  BackwardPass(const Tape& tape, const BackwardPolicy& policy)
      : tape_(tape), policy_(policy), grads_(tape.size()), present_(tape.size(), false) {}

  Gradients run(Var output, const Tensor& seed) {
    accumulate(output.id, seed);
    for (int id = output.id; id >= 0; --id) {
      if (!present_[id]) continue;
      const Node& n = tape_.node(Var{id});
      if (n.kind == OpKind::kLeaf || n.kind == OpKind::kConstant) continue;
      propagate(id, n);
    }
    return Gradients(std::move(grads_), std::move(present_));
  }

 private:
  const Tensor& val(int id) const { return tape_.node(Var{id}).out(); }
  bool wants(int id) const { return tape_.node(Var{id}).requires_grad; }

  void accumulate(int id, const Tensor& g) {
    if (!wants(id)) return;
    if (present_[id]) {
      grads_[id] += g;
    } else {
      grads_[id] = g;
      present_[id] = true;
    }
  }

  const ReferenceEntry& ref(int id) const {
    auto it = policy_.reference->entries.find(id);
    if (it == policy_.reference->entries.end()) {
      throw InvalidArgument("deeplift-rescale: missing reference activation for node " + std::to_string(id));
    }
    return it->second;
  }

  void propagate(int id, const Node& n) {
    const Tensor& g = grads_[id];
    const auto& p = n.parents;
    const bool deeplift = policy_.mode == BackwardMode::kDeepLiftRescale;
    const bool gim = policy_.mode == BackwardMode::kGim;
    switch (n.kind) {
      case OpKind::kMatMul: {
        const Tensor& a = val(p[0]);
        const Tensor& b = val(p[1]);
        if (deeplift) {
          const ReferenceEntry& r = ref(id);
          if (wants(p[0])) accumulate(p[0], g * (0.5 * (b + r.inputs[1])).transpose());
          if (wants(p[1])) accumulate(p[1], (0.5 * (a + r.inputs[0])).transpose() * g);
        } else {
          if (wants(p[0])) accumulate(p[0], g * b.transpose());
          if (wants(p[1])) accumulate(p[1], a.transpose() * g);
        }
        break;
      }
      case OpKind::kAdd: {
        accumulate(p[0], g);
        if (wants(p[1])) {
          if (n.axis == 1) {
            accumulate(p[1], g.colwise().sum());
          } else {
            accumulate(p[1], g);
          }
        }
        break;
      }
      case OpKind::kMul: {
        const Tensor& a = val(p[0]);
        const Tensor& b = val(p[1]);
        int blocked = -1;
        if (gim && n.gate_operand >= 0 && policy_.gim_gate_tags.contains(n.gate_tag)) blocked = n.gate_operand;
        if (deeplift) {
          const ReferenceEntry& r = ref(id);
          if (wants(p[0])) accumulate(p[0], g.cwiseProduct(0.5 * (b + r.inputs[1])));
          if (wants(p[1])) accumulate(p[1], g.cwiseProduct(0.5 * (a + r.inputs[0])));
        } else {
          if (blocked != 0 && wants(p[0])) accumulate(p[0], g.cwiseProduct(b));
          if (blocked != 1 && wants(p[1])) accumulate(p[1], g.cwiseProduct(a));
        }
        break;
      }
      case OpKind::kScale:
        accumulate(p[0], g * n.scalar);
        break;
      case OpKind::kTranspose:
        accumulate(p[0], g.transpose());
        break;
      case OpKind::kRelu:
      case OpKind::kSigmoid:
      case OpKind::kTanh:
      case OpKind::kExp: {
        const Tensor& x = val(p[0]);
        const Tensor& y = n.out();
        const Tensor local = elementwise_derivative(n.kind, x, y);
        if (deeplift) {
          const ReferenceEntry& r = ref(id);
          const Tensor dx = x - r.inputs[0];
          const Tensor dy = y - r.output;
          Tensor m(x.rows(), x.cols());
          for (Eigen::Index i = 0; i < x.size(); ++i) {
            m.data()[i] = std::abs(dx.data()[i]) < policy_.near_zero_delta ? local.data()[i]
                                                                          : dy.data()[i] / dx.data()[i];
          }
          accumulate(p[0], g.cwiseProduct(m));
        } else {
          accumulate(p[0], g.cwiseProduct(local));
        }
        break;
      }
      case OpKind::kSoftmax:
        if (deeplift) {
          softmax_deeplift(id, n, g);
        } else {
          const Tensor* y = &n.out();
          Tensor tempered;
          if (gim) {
            tempered = softmax_rows(val(p[0]) / policy_.gim_temperature);
            y = &tempered;
          }
          const Eigen::VectorXd dot = g.cwiseProduct(*y).rowwise().sum();
          accumulate(p[0], y->cwiseProduct(g.colwise() - dot));
        }
        break;
      case OpKind::kLayerNorm:
        layer_norm_backward(id, n, g, deeplift, gim && policy_.gim_freeze_norm_stats);
        break;
      case OpKind::kEmbeddingLookup: {
        if (!wants(p[0])) break;
        const Tensor& table = val(p[0]);
        Tensor gt = Tensor::Zero(table.rows(), table.cols());
        for (std::size_t i = 0; i < n.indices.size(); ++i) gt.row(n.indices[i]) += g.row(static_cast<Eigen::Index>(i));
        accumulate(p[0], gt);
        break;
      }
      case OpKind::kConcat: {
        Eigen::Index offset = 0;
        for (int parent : p) {
          const Tensor& t = val(parent);
          if (n.axis == 0) {
            if (wants(parent)) accumulate(parent, g.middleRows(offset, t.rows()));
            offset += t.rows();
          } else {
            if (wants(parent)) accumulate(parent, g.middleCols(offset, t.cols()));
            offset += t.cols();
          }
        }
        break;
      }
      case OpKind::kSlice: {
        if (!wants(p[0])) break;
        const Tensor& x = val(p[0]);
        Tensor gx = Tensor::Zero(x.rows(), x.cols());
        gx.block(n.row0, n.col0, g.rows(), g.cols()) = g;
        accumulate(p[0], gx);
        break;
      }
      case OpKind::kSum: {
        const Tensor& x = val(p[0]);
        accumulate(p[0], Tensor::Constant(x.rows(), x.cols(), g(0, 0)));
        break;
      }
      case OpKind::kMean: {
        const Tensor& x = val(p[0]);
        Tensor gx(x.rows(), x.cols());
        gx.rowwise() = g.row(0) / static_cast<double>(x.rows());
        accumulate(p[0], gx);
        break;
      }
      case OpKind::kLeaf:
      case OpKind::kConstant:
        break;
    }
  }

  // Exact multipliers for y = exp(x - L), L = logsumexp(x). dL is split over
  // inputs in proportion to the secant slopes of exp, so every factor stays
  // bounded for arbitrarily large logits.
  void softmax_deeplift(int id, const Node& n, const Tensor& g) {
    const ReferenceEntry& r = ref(id);
    const Tensor& x = val(n.parents[0]);
    const Tensor& x0 = r.inputs[0];
    const double thr = policy_.near_zero_delta;
    Tensor gx(x.rows(), x.cols());
    for (Eigen::Index row = 0; row < x.rows(); ++row) {
      const Eigen::ArrayXd xr = x.row(row).transpose().array();
      const Eigen::ArrayXd x0r = x0.row(row).transpose().array();
      const Eigen::ArrayXd dx = xr - x0r;
      const double shift = std::max(xr.maxCoeff(), x0r.maxCoeff());
      const Eigen::ArrayXd u = (xr - shift).exp();
      const Eigen::ArrayXd u0 = (x0r - shift).exp();
      Eigen::ArrayXd q(xr.size());
      for (Eigen::Index j = 0; j < q.size(); ++j) q(j) = std::abs(dx(j)) < thr ? u(j) : (u(j) - u0(j)) / dx(j);
      const double s0 = u0.sum();
      const double ds = (q * dx).sum();
      const double lse = xr.maxCoeff() + std::log((xr - xr.maxCoeff()).exp().sum());
      const double lse0 = x0r.maxCoeff() + std::log((x0r - x0r.maxCoeff()).exp().sum());
      // dL / dS for S = sum(u)
      double ratio = 0.0;
      const double rel = ds / s0;
      if (std::abs(rel) < 1e-8) {
        ratio = (1.0 - 0.5 * rel) / s0;
      } else if (std::abs(rel) < 0.5) {
        ratio = std::log1p(rel) / ds;
      } else {
        ratio = (lse - lse0) / ds;
      }
      const Eigen::ArrayXd w = ratio * q;
      const double dl = ratio * ds;
      const Eigen::ArrayXd y = (xr - lse).exp();
      const Eigen::ArrayXd y0 = (x0r - lse0).exp();
      Eigen::ArrayXd e(xr.size());
      for (Eigen::Index j = 0; j < e.size(); ++j) {
        const double dz = dx(j) - dl;
        e(j) = std::abs(dz) < thr ? y(j) : (y(j) - y0(j)) / dz;
      }
      const Eigen::ArrayXd ge = g.row(row).transpose().array() * e;
      gx.row(row) = (ge - w * ge.sum()).transpose().matrix();
    }
    accumulate(n.parents[0], gx);
  }

  void layer_norm_backward(int id, const Node& n, const Tensor& g, bool deeplift, bool frozen) {
    const int xi = n.parents[0], gi = n.parents[1], bi = n.parents[2];
    const Tensor& x = val(xi);
    const Tensor& gamma = val(gi);
    const Eigen::Index cols = x.cols();
    const double inv_cols = 1.0 / static_cast<double>(cols);
    const Tensor& normed = n.saved_b;
    const Tensor g_n = g.array().rowwise() * gamma.row(0).array();

    if (wants(bi)) accumulate(bi, g.colwise().sum());

    if (deeplift) {
      const ReferenceEntry& r = ref(id);
      const Tensor& x0 = r.inputs[0];
      // reference normalized output, recomputed from the reference input
      Tensor normed0(x0.rows(), cols);
      Tensor gx(x.rows(), cols);
      const double thr = policy_.near_zero_delta;
      for (Eigen::Index row = 0; row < x.rows(); ++row) {
        const Eigen::ArrayXd c = (x.row(row).array() - x.row(row).mean()).transpose();
        const Eigen::ArrayXd c0 = (x0.row(row).array() - x0.row(row).mean()).transpose();
        const double v = c.square().sum() * inv_cols + n.scalar;
        const double v0 = c0.square().sum() * inv_cols + n.scalar;
        const double s = 1.0 / std::sqrt(v), s0 = 1.0 / std::sqrt(v0);
        normed0.row(row) = (c0 * s0).transpose().matrix();
        const double m_s = std::abs(v - v0) < thr ? -0.5 * s * s * s : (s - s0) / (v - v0);
        const Eigen::ArrayXd gn = g_n.row(row).array().transpose();
        Eigen::ArrayXd gc = gn * (0.5 * (s + s0));
        const double g_s = (gn * 0.5 * (c + c0)).sum();
        const double g_q = g_s * m_s * inv_cols;
        gc += g_q * (c + c0);
        gx.row(row) = (gc - gc.mean()).transpose().matrix();
      }
      if (wants(gi)) accumulate(gi, g.cwiseProduct(0.5 * (normed + normed0)).colwise().sum());
      accumulate(xi, gx);
      return;
    }

    if (wants(gi)) accumulate(gi, g.cwiseProduct(normed).colwise().sum());
    if (!wants(xi)) return;
    Tensor gx(x.rows(), cols);
    for (Eigen::Index row = 0; row < x.rows(); ++row) {
      const double inv_std = n.saved_a(row, 0);
      if (frozen) {
        gx.row(row) = g_n.row(row) * inv_std;
      } else {
        const double mean_g = g_n.row(row).mean();
        const double mean_gn = g_n.row(row).cwiseProduct(normed.row(row)).mean();
        gx.row(row) = inv_std * (g_n.row(row).array() - mean_g - normed.row(row).array() * mean_gn).matrix();
      }
    }
    accumulate(xi, gx);
  }

  const Tape& tape_;
  const BackwardPolicy& policy_;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
};

void validate(const Tape& tape, Var output, const BackwardPolicy& policy) {
  if (!output.valid() || static_cast<std::size_t>(output.id) >= tape.size()) {
    throw InvalidArgument("backward: output node is not on this tape");
  }
  if (policy.mode == BackwardMode::kGim && !(policy.gim_temperature > 0.0)) {
    throw InvalidArgument("backward: gim temperature must be positive");
  }
  if (!(policy.near_zero_delta > 0.0)) throw InvalidArgument("backward: near-zero-delta threshold must be positive");
  if (policy.mode == BackwardMode::kDeepLiftRescale) {
    if (policy.reference == nullptr) throw InvalidArgument("backward: deeplift-rescale requires reference activations");
    const auto structure = tape.structure();
    const auto& ref = policy.reference->structure;
    if (ref.size() < static_cast<std::size_t>(output.id) + 1) {
      throw InvalidArgument("backward: reference pass is shorter than the target tape");
    }
    for (int i = 0; i <= output.id; ++i) {
      if (!(structure[i] == ref[i])) {
        std::ostringstream os;
        os << "backward: tape-structure mismatch at node " << i << " (" << op_name(structure[i].kind) << " "
           << structure[i].rows << "x" << structure[i].cols << " vs " << op_name(ref[i].kind) << " " << ref[i].rows
           << "x" << ref[i].cols << ")";
        throw InvalidArgument(os.str());
      }
      if (needs_reference(structure[i].kind) && !policy.reference->entries.contains(i)) {
        throw InvalidArgument("backward: missing reference activation for node " + std::to_string(i));
      }
    }
  }
}

}  // namespace

Gradients backward(const Tape& tape, Var output, const BackwardPolicy& policy) {
  validate(tape, output, policy);
  const Tensor& out = tape.value(output);
  if (out.rows() != 1 || out.cols() != 1) {
    throw ShapeError("backward: output node must be scalar, got " + dims(out));
  }
  return BackwardPass(tape, policy).run(output, Tensor::Ones(1, 1));
}

Gradients backward_seeded(const Tape& tape, Var output, const Tensor& seed, const BackwardPolicy& policy) {
  validate(tape, output, policy);
  const Tensor& out = tape.value(output);
  if (seed.rows() != out.rows() || seed.cols() != out.cols()) {
    throw ShapeError("backward: seed " + dims(seed) + " does not match output " + dims(out));
  }
  return BackwardPass(tape, policy).run(output, seed);
}

}  // namespace tsattr::ad
