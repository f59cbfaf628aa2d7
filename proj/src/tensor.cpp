#include "mimea/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mimea {

namespace {

void check_dims(int rows, int cols) {
  if (rows <= 0 || cols <= 0) {
    std::ostringstream os;
    os << "tensor dimensions must be positive, got " << rows << "x" << cols;
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

Tensor::Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
  check_dims(rows, cols);
  v_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
}

Tensor::Tensor(int rows, int cols, std::vector<double> values)
    : rows_(rows), cols_(cols), v_(std::move(values)) {
  check_dims(rows, cols);
  if (v_.size() != static_cast<std::size_t>(rows) * cols) {
    std::ostringstream os;
    os << "tensor " << rows << "x" << cols << " needs " << static_cast<std::size_t>(rows) * cols
       << " values, got " << v_.size();
    throw std::invalid_argument(os.str());
  }
}

Tensor Tensor::zeros(int rows, int cols) { return Tensor(rows, cols); }

Tensor Tensor::full(int rows, int cols, double value) {
  Tensor t(rows, cols);
  for (double& x : t.v_) x = value;
  return t;
}

Tensor Tensor::identity(int n) {
  Tensor t(n, n);
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t(1, 1);
  t.v_[0] = value;
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  int r = static_cast<int>(rows.size());
  if (r == 0) throw std::invalid_argument("from_rows needs at least one row");
  int c = static_cast<int>(rows.begin()->size());
  Tensor t(r, c);
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c) {
      throw std::invalid_argument("from_rows rows have inconsistent lengths");
    }
    int j = 0;
    for (double x : row) t.at(i, j++) = x;
    ++i;
  }
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) {
    throw std::invalid_argument("item() requires a 1x1 tensor, got " + shape_str());
  }
  return v_[0];
}

Tensor Tensor::detached() const {
  Tensor t;
  t.rows_ = rows_;
  t.cols_ = cols_;
  t.v_ = v_;
  return t;
}

bool Tensor::all_finite() const {
  for (double x : v_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void Tape::attach_leaf(Tensor& t) {
  if (t.on_tape()) {
    if (t.tape() != this) throw std::logic_error("tensor is already attached to another tape");
    return;
  }
  int id = static_cast<int>(nodes_.size());
  Node n;
  n.rows = t.rows();
  n.cols = t.cols();
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  t.bind(this, id);
}

int Tape::record(int rows, int cols, std::vector<int> parents, BackwardFn fn) {
  int id = static_cast<int>(nodes_.size());
  for (int p : parents) {
    if (p < 0 || p >= id) {
      throw std::logic_error("tape parents must be previously recorded nodes");
    }
  }
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.parents = std::move(parents);
  n.fn = std::move(fn);
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  return id;
}

void Tape::backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("backward() expects a 1x1 loss, got " + loss.shape_str());
  }
  if (!loss.on_tape() || loss.tape() != this) {
    throw std::logic_error("backward() loss does not live on this tape");
  }

  const int n = static_cast<int>(nodes_.size());
  std::vector<char> reach(n, 0);
  reach[loss.node()] = 1;
  for (int i = loss.node(); i >= 0; --i) {
    if (!reach[i]) continue;
    for (int p : nodes_[i].parents) reach[p] = 1;
  }

  for (int i = 0; i < n; ++i) {
    if (reach[i]) {
      grads_[i].assign(static_cast<std::size_t>(nodes_[i].rows) * nodes_[i].cols, 0.0);
    } else {
      grads_[i].clear();
    }
  }
  grads_[loss.node()][0] = 1.0;

  for (int i = loss.node(); i >= 0; --i) {
    if (!reach[i] || !nodes_[i].fn) continue;
    nodes_[i].fn(grads_[i], *this);
  }
}

Tensor Tape::grad(const Tensor& t) const {
  if (!t.on_tape() || t.tape() != this) {
    throw std::logic_error("grad() tensor does not live on this tape");
  }
  const auto& g = grads_[t.node()];
  if (g.empty()) return Tensor::zeros(t.rows(), t.cols());
  return Tensor(t.rows(), t.cols(), g);
}

std::vector<double>& Tape::grad_buffer(int node) { return grads_[node]; }

void Tape::accumulate(int node, const std::vector<double>& g) {
  auto& buf = grads_[node];
  if (buf.empty()) return;  // node not reachable from the loss
  for (std::size_t k = 0; k < g.size(); ++k) buf[k] += g[k];
}

Tape* common_tape(std::initializer_list<const Tensor*> args) {
  Tape* tape = nullptr;
  for (const Tensor* t : args) {
    if (!t->on_tape()) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else if (tape != t->tape()) {
      throw std::logic_error("operation mixes tensors from two different tapes");
    }
  }
  return tape;
}

}  // namespace mimea
