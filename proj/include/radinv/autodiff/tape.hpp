#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "radinv/core.hpp"

namespace radinv::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  [[nodiscard]] bool valid() const { return tape != nullptr && id >= 0; }
  [[nodiscard]] const Mat& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] double scalar() const { return value()(0, 0); }
};

/// Reverse-mode tape over dense row-major tensors.
///
/// Nodes are appended in creation order and may only reference earlier
/// nodes, so creation order is a topological order and a single reverse
/// sweep visits every reachable node exactly once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<int> parents;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Mat value, bool requires_grad = true) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(Mat value) { return leaf(std::move(value), false); }
  Var scalar_constant(double v) { return constant(Mat::Constant(1, 1, v)); }

  /// Appends an op result. The node only records its backward closure when
  /// at least one parent requires a gradient.
  Var push(Mat value, std::initializer_list<Var> parents, BackwardFn fn) {
    return push(std::move(value), std::vector<Var>(parents), std::move(fn));
  }

  Var push(Mat value, const std::vector<Var>& parents, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    const int next_id = static_cast<int>(nodes_.size());
    for (const Var& p : parents) {
      if (p.tape != this || p.id < 0 || p.id >= next_id)
        throw StructuralError("tape: op input is not an earlier node of this tape (cycle or foreign node)");
      n.parents.push_back(p.id);
      n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, next_id};
  }

  [[nodiscard]] const Mat& value(int id) const { return nodes_[id].value; }
  [[nodiscard]] const Mat& value(Var v) const { return nodes_[v.id].value; }
  [[nodiscard]] bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Adjoint of a node; zeros when the node was never reached.
  [[nodiscard]] Mat grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  [[nodiscard]] double grad_scalar(Var v) const {
    const Node& n = nodes_[v.id];
    return n.has_grad ? n.grad(0, 0) : 0.0;
  }

  /// Mutable adjoint buffer for backward closures; allocated lazily.
  Mat& grad_ref(int id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Mat::Zero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Adjoint of a node as seen by its own backward closure.
  [[nodiscard]] const Mat& self_grad(int id) const { return nodes_[id].grad; }
  [[nodiscard]] int parent(int id, int k) const { return nodes_[id].parents[static_cast<std::size_t>(k)]; }

  template <class Expr>
  void accumulate(int id, const Expr& g) {
    if (!nodes_[id].requires_grad) return;
    grad_ref(id) += g;
  }

  /// Backward pass from a scalar root seeded with 1.
  void backward(Var root) {
    if (root.tape != this) throw StructuralError("tape: root belongs to another tape");
    const Mat& v = nodes_[root.id].value;
    if (v.rows() != 1 || v.cols() != 1) throw StructuralError("tape: backward root must be a scalar");
    std::pair<Var, Mat> seed{root, Mat::Ones(1, 1)};
    backward(std::span<const std::pair<Var, Mat>>(&seed, 1));
  }

  /// Backward pass with explicit adjoint seeds (vector-Jacobian product).
  void backward(std::span<const std::pair<Var, Mat>> seeds) {
    int top = -1;
    for (const auto& [var, g] : seeds) {
      if (var.tape != this) throw StructuralError("tape: seed belongs to another tape");
      const Mat& v = nodes_[var.id].value;
      if (g.rows() != v.rows() || g.cols() != v.cols()) throw StructuralError("tape: seed shape mismatch");
      if (!nodes_[var.id].requires_grad) continue;
      grad_ref(var.id) += g;
      top = std::max(top, var.id);
    }
    for (int id = top; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad.resize(0, 0);
    }
  }

 private:
  std::vector<Node> nodes_;
};

inline const Mat& Var::value() const { return tape->value(id); }

}  // namespace radinv::ad
