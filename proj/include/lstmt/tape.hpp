#pragma once

// Reverse-mode differentiation over a flat, append-only tape.
//
// Every op appends one node whose inputs are earlier nodes, so node order is
// a topological order. backward() walks it once in reverse. Values are
// checked for NaN/Inf as they are produced; the first offender throws a
// NumericError naming the op.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lstmt/tensor.hpp"

namespace lstmt {

class Tape;

enum class Op : std::uint8_t {
  leaf,
  matmul,
  add,
  mul,
  scale,
  add_cols,
  tanh,
  sigmoid,
  log,
  softmax,
  log_softmax,
  concat,
  slice,
  gather,
  reshape,
  sum,
  mean,
  mean_rows,
};

const char* op_name(Op op);

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives
/// and has not been cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Per-node constants of an op.
struct TapeAux {
  std::size_t offset = 0;
  double factor = 0.0;
  std::vector<std::size_t> indices;
  Shape shape;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that takes no gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient in backward().
  Var variable(Tensor value);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every node that depends on
  /// a variable. Gradients from earlier backward() calls are discarded.
  void backward(Var loss);

  /// Recomputes every non-leaf value from the leaves in recorded order.
  /// Returns the recomputed values, index-aligned with the tape.
  std::vector<Tensor> replay() const;

  void clear();
  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::uint32_t id) const;
  Op op(std::uint32_t id) const { return nodes_[id].op; }

  // Node construction; use the free functions below.
  using Aux = TapeAux;
  Var record(Op op, std::vector<std::uint32_t> inputs, Aux aux = {});

 private:
  struct Node {
    Op op = Op::leaf;
    bool needs_grad = false;
    std::vector<std::uint32_t> inputs;
    Aux aux;
    Tensor value;
    Tensor grad;
  };

  Tensor forward(const Node& node, std::span<const Tensor* const> in) const;
  void backprop(std::uint32_t id);
  Tensor& grad_slot(std::uint32_t id);

  std::vector<Node> nodes_;
};

/// a (m×k) · b (k×n), or a (m×k) · b [k] → [m].
Var matmul(Var a, Var b);
/// Equal shapes, or either side a single element.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// m (r×c) + v [r], v added to every column.
Var add_cols(Var m, Var v);
Var tanh(Var a);
Var sigmoid(Var a);
Var log(Var a);
/// Over all elements of a, shape preserved.
Var softmax(Var a);
Var log_softmax(Var a);
/// Rank-1 parts joined in order.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
/// Elements [offset, offset+len) of the flattened input, as a vector.
Var slice(Var a, std::size_t offset, std::size_t len);
/// Flat-index gather into a vector.
Var gather(Var a, std::vector<std::size_t> indices);
/// Column `col` of a matrix, as a vector.
Var column(Var m, std::size_t col);
/// Element i of the flattened input, as a single-element tensor.
Var pick(Var a, std::size_t i);
Var reshape(Var a, Shape shape);
Var sum(Var a);
/// Mean over all elements. Exact when all elements are equal.
Var mean(Var a);
/// Mean of the rows of a matrix, as a vector.
Var mean_rows(Var m);

}  // namespace lstmt
