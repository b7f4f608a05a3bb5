#include "lstmt/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lstmt/errors.hpp"
#include "lstmt/kernels.hpp"

namespace lstmt {
namespace {

using Inputs = std::span<const Tensor* const>;

[[noreturn]] void dim_error(Op op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op_name(op)) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                       shape_string(b.shape()));
}

// Equal shapes, or one side a single element.
enum class Broadcast { same, left_scalar, right_scalar };

Broadcast broadcast_kind(Op op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (a.size() == 1) return Broadcast::left_scalar;
  if (b.size() == 1) return Broadcast::right_scalar;
  dim_error(op, a, b);
}

Tensor matmul_forward(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2) || a.cols() != b.rows()) dim_error(Op::matmul, a, b);
  const std::size_t m = a.rows(), k = a.cols();
  if (b.rank() == 1) {
    Tensor out({m});
    gemm_nt(m, 1, k, a.data().data(), b.data().data(), out.data().data());
    return out;
  }
  const std::size_t n = b.cols();
  Tensor out({m, n});
  if (n == 1) {
    gemm_nt(m, 1, k, a.data().data(), b.data().data(), out.data().data());
  } else {
    gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data().data());
  }
  return out;
}

Tensor elementwise_binary(Op op, const Tensor& a, const Tensor& b) {
  const auto kind = broadcast_kind(op, a, b);
  if (kind == Broadcast::same) {
    Tensor out(a.shape());
    if (op == Op::add) {
      kernels::add(a.data(), b.data(), out.data());
    } else {
      kernels::mul(a.data(), b.data(), out.data());
    }
    return out;
  }
  const Tensor& big = kind == Broadcast::left_scalar ? b : a;
  const double s = kind == Broadcast::left_scalar ? a[0] : b[0];
  Tensor out(big.shape());
  for (std::size_t i = 0; i < big.size(); ++i) out[i] = op == Op::add ? big[i] + s : big[i] * s;
  return out;
}

Tensor softmax_values(const Tensor& x) {
  Tensor out(x.shape());
  const double mx = *std::max_element(x.values().begin(), x.values().end());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    total += out[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] /= total;
  return out;
}

Tensor log_softmax_values(const Tensor& x) {
  Tensor out(x.shape());
  const double mx = *std::max_element(x.values().begin(), x.values().end());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += std::exp(x[i] - mx);
  const double lse = std::log(total);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mx) - lse;
  return out;
}

void accumulate(Tensor& dst, const Tensor& src) { kernels::axpy(1.0, src.data(), dst.data()); }

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::add_cols: return "add_cols";
    case Op::tanh: return "tanh";
    case Op::sigmoid: return "sigmoid";
    case Op::log: return "log";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::concat: return "concat";
    case Op::slice: return "slice";
    case Op::gather: return "gather";
    case Op::reshape: return "reshape";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::mean_rows: return "mean_rows";
  }
  return "?";
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf: non-finite value");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::variable(Tensor value) {
  Var v = constant(std::move(value));
  nodes_.back().needs_grad = true;
  return v;
}

Var Tape::record(Op op, std::vector<std::uint32_t> inputs, Aux aux) {
  Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  n.aux = std::move(aux);
  for (auto i : n.inputs) n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
  std::vector<const Tensor*> in;
  in.reserve(n.inputs.size());
  for (auto i : n.inputs) in.push_back(&nodes_[i].value);
  n.value = forward(n, in);
  if (!n.value.all_finite()) throw NumericError(std::string(op_name(op)) + ": non-finite value in forward pass");
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor Tape::forward(const Node& node, Inputs in) const {
  const Aux& aux = node.aux;
  switch (node.op) {
    case Op::leaf:
      return node.value;
    case Op::matmul:
      return matmul_forward(*in[0], *in[1]);
    case Op::add:
    case Op::mul:
      return elementwise_binary(node.op, *in[0], *in[1]);
    case Op::scale: {
      Tensor out(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * aux.factor;
      return out;
    }
    case Op::add_cols: {
      const Tensor& m = *in[0];
      const Tensor& v = *in[1];
      if (m.rank() != 2 || v.rank() != 1 || v.size() != m.rows()) dim_error(node.op, m, v);
      Tensor out(m.shape());
      for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) out.at(r, c) = m.at(r, c) + v[r];
      }
      return out;
    }
    case Op::tanh: {
      Tensor out(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh((*in[0])[i]);
      return out;
    }
    case Op::sigmoid: {
      Tensor out(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-(*in[0])[i]));
      return out;
    }
    case Op::log: {
      Tensor out(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log((*in[0])[i]);
      return out;
    }
    case Op::softmax:
      return softmax_values(*in[0]);
    case Op::log_softmax:
      return log_softmax_values(*in[0]);
    case Op::concat: {
      std::vector<double> data;
      for (const Tensor* p : in) {
        if (p->rank() != 1) throw DimensionError("concat: part of shape " + shape_string(p->shape()) + " is not a vector");
        data.insert(data.end(), p->values().begin(), p->values().end());
      }
      return Tensor::vector(std::move(data));
    }
    case Op::slice: {
      const std::size_t len = aux.shape.at(0);
      if (len == 0 || aux.offset + len > in[0]->size()) {
        throw DimensionError("slice: range out of bounds for shape " + shape_string(in[0]->shape()));
      }
      auto src = in[0]->data().subspan(aux.offset, len);
      return Tensor::vector({src.begin(), src.end()});
    }
    case Op::gather: {
      std::vector<double> data;
      data.reserve(aux.indices.size());
      for (auto i : aux.indices) {
        if (i >= in[0]->size()) throw DimensionError("gather: index " + std::to_string(i) + " out of range");
        data.push_back((*in[0])[i]);
      }
      return Tensor::vector(std::move(data));
    }
    case Op::reshape:
      return in[0]->reshaped(aux.shape);
    case Op::sum: {
      double s = 0.0;
      for (double v : in[0]->values()) s += v;
      return Tensor::scalar(s);
    }
    case Op::mean: {
      // Shifted by the first element so that equal inputs give that value exactly.
      const Tensor& a = *in[0];
      const double base = a[0];
      double dev = 0.0;
      for (double v : a.values()) dev += v - base;
      return Tensor::scalar(base + dev / static_cast<double>(a.size()));
    }
    case Op::mean_rows: {
      const Tensor& m = *in[0];
      if (m.rank() != 2) throw DimensionError("mean_rows: expected a matrix, got " + shape_string(m.shape()));
      Tensor out({m.cols()});
      for (std::size_t r = 0; r < m.rows(); ++r) kernels::axpy(1.0, m.row(r), out.data());
      for (auto& v : out.data()) v /= static_cast<double>(m.rows());
      return out;
    }
  }
  throw ContractError("unknown op");
}

const Tensor& Tape::grad(std::uint32_t id) const {
  return nodes_[id].grad;
}

Tensor& Tape::grad_slot(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (nodes_[loss.id()].value.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(nodes_[loss.id()].value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_slot(loss.id())[0] = 1.0;
  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (!n.grad.all_finite()) throw NumericError(std::string(op_name(n.op)) + ": non-finite gradient");
    if (n.op != Op::leaf) backprop(id);
  }
}

void Tape::backprop(std::uint32_t id) {
  // Copies: grad_slot() may allocate other nodes' grads but never reallocates nodes_.
  const Node& n = nodes_[id];
  const Tensor& g = n.grad;
  const Tensor& y = n.value;
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].needs_grad; };
  auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };

  switch (n.op) {
    case Op::leaf:
      break;
    case Op::matmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const std::size_t m = a.rows(), k = a.cols();
      const std::size_t cols = b.rank() == 1 ? 1 : b.cols();
      if (wants(0)) {
        // dA += g · bᵀ
        Tensor& da = grad_slot(n.inputs[0]);
        if (cols == 1) {
          for (std::size_t i = 0; i < m; ++i) kernels::axpy(g[i], b.data(), da.row(i));
        } else {
          gemm_nt(m, k, cols, g.data().data(), b.data().data(), da.data().data());
        }
      }
      if (wants(1)) {
        // dB += aᵀ · g
        Tensor& db = grad_slot(n.inputs[1]);
        if (cols == 1) {
          for (std::size_t p = 0; p < m; ++p) kernels::axpy(g[p], a.row(p), db.data());
        } else {
          gemm_tn(k, cols, m, a.data().data(), g.data().data(), db.data().data());
        }
      }
      break;
    }
    case Op::add:
    case Op::mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const auto kind = broadcast_kind(n.op, a, b);
      for (std::size_t side = 0; side < 2; ++side) {
        if (!wants(side)) continue;
        const Tensor& self = side == 0 ? a : b;
        const Tensor& other = side == 0 ? b : a;
        Tensor& d = grad_slot(n.inputs[side]);
        const bool self_is_scalar = (kind == Broadcast::left_scalar && side == 0) ||
                                    (kind == Broadcast::right_scalar && side == 1);
        if (kind == Broadcast::same) {
          if (n.op == Op::add) {
            accumulate(d, g);
          } else {
            kernels::mul_acc(g.data(), other.data(), d.data());
          }
        } else if (self_is_scalar) {
          double s = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) s += n.op == Op::add ? g[i] : g[i] * other[i];
          d[0] += s;
        } else {
          const double o = other[0];
          kernels::axpy(n.op == Op::add ? 1.0 : o, g.data(), d.data());
        }
        (void)self;
      }
      break;
    }
    case Op::scale:
      if (wants(0)) kernels::axpy(n.aux.factor, g.data(), grad_slot(n.inputs[0]).data());
      break;
    case Op::add_cols: {
      if (wants(0)) accumulate(grad_slot(n.inputs[0]), g);
      if (wants(1)) {
        Tensor& dv = grad_slot(n.inputs[1]);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double s = 0.0;
          for (double v : g.row(r)) s += v;
          dv[r] += s;
        }
      }
      break;
    }
    case Op::tanh:
      if (wants(0)) {
        Tensor& d = grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
      }
      break;
    case Op::sigmoid:
      if (wants(0)) {
        Tensor& d = grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
      }
      break;
    case Op::log:
      if (wants(0)) {
        Tensor& d = grad_slot(n.inputs[0]);
        const Tensor& x = in(0);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] / x[i];
      }
      break;
    case Op::softmax:
      if (wants(0)) {
        Tensor& d = grad_slot(n.inputs[0]);
        const double gy = kernels::dot(g.data(), y.data());
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += y[i] * (g[i] - gy);
      }
      break;
    case Op::log_softmax:
      if (wants(0)) {
        Tensor& d = grad_slot(n.inputs[0]);
        double gsum = 0.0;
        for (double v : g.values()) gsum += v;
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] - std::exp(y[i]) * gsum;
      }
      break;
    case Op::concat: {
      std::size_t off = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const std::size_t len = in(k).size();
        if (wants(k)) kernels::axpy(1.0, g.data().subspan(off, len), grad_slot(n.inputs[k]).data());
        off += len;
      }
      break;
    }
    case Op::slice:
      if (wants(0)) {
        kernels::axpy(1.0, g.data(), grad_slot(n.inputs[0]).data().subspan(n.aux.offset, g.size()));
      }
      break;
    case Op::gather:
      if (wants(0)) {
        Tensor& d = grad_slot(n.inputs[0]);
        for (std::size_t i = 0; i < n.aux.indices.size(); ++i) d[n.aux.indices[i]] += g[i];
      }
      break;
    case Op::reshape:
      if (wants(0)) accumulate(grad_slot(n.inputs[0]), g.reshaped(in(0).shape()));
      break;
    case Op::sum:
      if (wants(0)) {
        Tensor& d = grad_slot(n.inputs[0]);
        for (auto& v : d.data()) v += g[0];
      }
      break;
    case Op::mean:
      if (wants(0)) {
        Tensor& d = grad_slot(n.inputs[0]);
        const double share = g[0] / static_cast<double>(d.size());
        for (auto& v : d.data()) v += share;
      }
      break;
    case Op::mean_rows:
      if (wants(0)) {
        Tensor& d = grad_slot(n.inputs[0]);
        const double inv = 1.0 / static_cast<double>(d.rows());
        for (std::size_t r = 0; r < d.rows(); ++r) kernels::axpy(inv, g.data(), d.row(r));
      }
      break;
  }
}

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> values;
  values.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    if (n.op == Op::leaf) {
      values.push_back(n.value);
      continue;
    }
    std::vector<const Tensor*> in;
    for (auto i : n.inputs) in.push_back(&values[i]);
    values.push_back(forward(n, in));
  }
  return values;
}

void Tape::clear() { nodes_.clear(); }

namespace {

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
  return a.tape();
}

}  // namespace

Var matmul(Var a, Var b) { return same_tape(a, b).record(Op::matmul, {a.id(), b.id()}); }
Var add(Var a, Var b) { return same_tape(a, b).record(Op::add, {a.id(), b.id()}); }
Var mul(Var a, Var b) { return same_tape(a, b).record(Op::mul, {a.id(), b.id()}); }

Var scale(Var a, double factor) {
  Tape::Aux aux;
  aux.factor = factor;
  return a.tape().record(Op::scale, {a.id()}, std::move(aux));
}

Var add_cols(Var m, Var v) { return same_tape(m, v).record(Op::add_cols, {m.id(), v.id()}); }
Var tanh(Var a) { return a.tape().record(Op::tanh, {a.id()}); }
Var sigmoid(Var a) { return a.tape().record(Op::sigmoid, {a.id()}); }
Var log(Var a) { return a.tape().record(Op::log, {a.id()}); }

Var softmax(Var a) {
  if (a.size() == 0) throw DimensionError("softmax: empty input");
  return a.tape().record(Op::softmax, {a.id()});
}

Var log_softmax(Var a) {
  if (a.size() == 0) throw DimensionError("log_softmax: empty input");
  return a.tape().record(Op::log_softmax, {a.id()});
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    ids.push_back(p.id());
  }
  return parts.front().tape().record(Op::concat, std::move(ids));
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var slice(Var a, std::size_t offset, std::size_t len) {
  Tape::Aux aux;
  aux.offset = offset;
  aux.shape = {len};
  return a.tape().record(Op::slice, {a.id()}, std::move(aux));
}

Var gather(Var a, std::vector<std::size_t> indices) {
  if (indices.empty()) throw DimensionError("gather: no indices");
  Tape::Aux aux;
  aux.indices = std::move(indices);
  return a.tape().record(Op::gather, {a.id()}, std::move(aux));
}

Var column(Var m, std::size_t col) {
  const Tensor& v = m.value();
  if (v.rank() != 2 || col >= v.cols()) {
    throw DimensionError("column " + std::to_string(col) + " out of range for shape " + shape_string(v.shape()));
  }
  std::vector<std::size_t> idx(v.rows());
  for (std::size_t r = 0; r < v.rows(); ++r) idx[r] = r * v.cols() + col;
  return gather(m, std::move(idx));
}

Var pick(Var a, std::size_t i) { return gather(a, {i}); }

Var reshape(Var a, Shape shape) {
  Tape::Aux aux;
  aux.shape = std::move(shape);
  return a.tape().record(Op::reshape, {a.id()}, std::move(aux));
}

Var sum(Var a) { return a.tape().record(Op::sum, {a.id()}); }

Var mean(Var a) {
  if (a.size() == 0) throw DimensionError("mean: empty input");
  return a.tape().record(Op::mean, {a.id()});
}

Var mean_rows(Var m) { return m.tape().record(Op::mean_rows, {m.id()}); }

}  // namespace lstmt
