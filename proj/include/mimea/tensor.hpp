#pragma once

#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace mimea {

class Tape;

// Dense row-major matrix of 64-bit reals, optionally tied to a node on a
// reverse-mode tape. A tensor without a tape handle is a plain immutable
// value and may be shared across threads; a tensor with a handle belongs to
// exactly one Tape and one training step.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int rows, int cols);
  Tensor(int rows, int cols, std::vector<double> values);

  static Tensor zeros(int rows, int cols);
  static Tensor full(int rows, int cols, double value);
  static Tensor identity(int n);
  static Tensor scalar(double value);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }
  std::string shape_str() const;

  double& at(int i, int j) { return v_[static_cast<std::size_t>(i) * cols_ + j]; }
  double at(int i, int j) const { return v_[static_cast<std::size_t>(i) * cols_ + j]; }
  double item() const;  // value of a 1x1 tensor

  const std::vector<double>& values() const { return v_; }
  std::vector<double>& values() { return v_; }

  bool on_tape() const { return tape_ != nullptr && node_ >= 0; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  // Copy of the values with no tape handle; never receives gradient.
  Tensor detached() const;
  void detach() { tape_ = nullptr; node_ = -1; }

  bool all_finite() const;

  void bind(Tape* tape, int node) { tape_ = tape; node_ = node; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> v_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// One recorded operation: the node's shape, its parents (tape handles), and a
// pull-back that routes the node's output gradient into the parents' buffers.
using BackwardFn = std::function<void(const std::vector<double>& out_grad, Tape& tape)>;

// Reverse-mode tape. Nodes are recorded in execution order, so parents always
// precede children; backward() walks the list once in reverse. Single
// threaded by design: one training step owns one tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a parameter tensor as a leaf node so it can receive gradient.
  void attach_leaf(Tensor& t);

  // Records an operation node. Parents with handle -1 (constants) are ignored.
  int record(int rows, int cols, std::vector<int> parents, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and pulls gradients back through every node
  // reachable from `loss`, each visited exactly once. Unreachable nodes keep a
  // zero gradient.
  void backward(const Tensor& loss);

  // Gradient of a tensor on this tape, as a plain tensor. Zero if the node was
  // not reached by the last backward().
  Tensor grad(const Tensor& t) const;

  std::vector<double>& grad_buffer(int node);
  void accumulate(int node, const std::vector<double>& g);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<int> parents;
    BackwardFn fn;  // empty for leaves
  };

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

// Tape bookkeeping shared by the op implementations: returns the common tape
// of the on-tape arguments (nullptr if all are detached) and rejects inputs
// that live on two different tapes.
Tape* common_tape(std::initializer_list<const Tensor*> args);

}  // namespace mimea
