#pragma once

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// A Graph records every operation in construction order; backward() walks the
// record in exact reverse order and accumulates adjoints additively.  Tensors
// are lightweight handles (graph pointer + node index) and stay valid for the
// lifetime of their Graph.  All tensors are rank 2; vectors are 1xN rows.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace daml {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Shape {
  Index rows = 0;
  Index cols = 0;

  Index size() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
  }
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int node) : std::runtime_error(what), node_(node) {}
  int node() const { return node_; }

 private:
  int node_;
};

enum class Op : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Div,
  Sigmoid,
  Tanh,
  Exp,
  Log,
  Softmax,
  ConcatCols,
  ConcatRows,
  SliceRows,
  SliceCols,
  GatherRows,
  Dropout,
  Transpose,
  Sum,
  RowSum,
  Affine,
  GatherCols,
  ScatterCols,
  GruCell,
  AdditiveScores,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Softmax: return "softmax";
    case Op::ConcatCols: return "concat_cols";
    case Op::ConcatRows: return "concat_rows";
    case Op::SliceRows: return "slice_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::GatherRows: return "gather_rows";
    case Op::Dropout: return "dropout";
    case Op::Transpose: return "transpose";
    case Op::Sum: return "sum";
    case Op::RowSum: return "row_sum";
    case Op::Affine: return "affine";
    case Op::GatherCols: return "gather_cols";
    case Op::ScatterCols: return "scatter_cols";
    case Op::GruCell: return "gru_cell";
    case Op::AdditiveScores: return "additive_scores";
  }
  return "?";
}

template <typename Scalar>
class Graph;

template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph<Scalar>* graph, int id) : graph_(graph), id_(id) {}

  Graph<Scalar>* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr && id_ >= 0; }

  const Matrix<Scalar>& value() const { return graph_->value(id_); }
  Shape shape() const { return {value().rows(), value().cols()}; }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const { return graph_->requires_grad(id_); }

  // Gradient of a variable created with Graph::variable().
  const Matrix<Scalar>& grad() const { return graph_->grad(id_); }

  Scalar item() const {
    if (rows() != 1 || cols() != 1) throw ContractError("item() on non-scalar tensor " + shape().str());
    return value()(0, 0);
  }

 private:
  Graph<Scalar>* graph_ = nullptr;
  int id_ = -1;
};

// Broadcast mode of the second operand of a binary elementwise op.
enum class Broadcast : std::uint8_t { None, Row, Col, Scalar };

template <typename Scalar>
class Graph {
 public:
  using Mat = Matrix<Scalar>;

  struct Node {
    Op op = Op::Leaf;
    std::vector<int> in;
    Mat value;
    const Mat* external = nullptr;
    Mat* sink = nullptr;
    Mat grad;
    Mat cache;
    std::vector<Index> ids;
    Scalar s0 = 0;
    Scalar s1 = 0;
    Index i0 = 0;
    Index i1 = 0;
    bool requires_grad = false;
  };

  explicit Graph(bool training = true) : training_(training) { nodes_.reserve(256); }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const { return training_; }
  void set_training(bool training) { training_ = training; }
  void set_check_finite(bool check) { check_finite_ = check; }
  std::size_t size() const { return nodes_.size(); }

  Tensor<Scalar> constant(Mat value) { return add_leaf(std::move(value), false); }

  // Owned leaf that accumulates d(loss)/d(leaf) into grad() on every backward().
  Tensor<Scalar> variable(Mat value) {
    auto t = add_leaf(std::move(value), true);
    nodes_.back().grad = Mat::Zero(nodes_.back().value.rows(), nodes_.back().value.cols());
    return t;
  }

  // Leaf referencing external storage. When `sink` is given, backward() adds
  // this leaf's gradient into *sink; otherwise the leaf is treated as constant.
  Tensor<Scalar> parameter(const Mat& value, Mat* sink = nullptr) {
    if (sink != nullptr && (sink->rows() != value.rows() || sink->cols() != value.cols())) {
      throw DimensionError("gradient sink shape does not match parameter");
    }
    Node n;
    n.op = Op::Leaf;
    n.external = &value;
    n.sink = sink;
    n.requires_grad = sink != nullptr;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external != nullptr ? *n.external : n.value;
  }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const Mat& grad(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op != Op::Leaf || n.external != nullptr) {
      throw ContractError("grad() is only stored for variables");
    }
    return n.grad;
  }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  // Appends an op node. `value` is the forward result computed by the caller.
  Tensor<Scalar> record(Node n) {
    bool rg = false;
    for (int i : n.in) rg = rg || nodes_[static_cast<std::size_t>(i)].requires_grad;
    n.requires_grad = rg;
    const int id = static_cast<int>(nodes_.size());
    if (check_finite_ && !n.value.allFinite()) {
      std::ostringstream os;
      os << "non-finite value produced by " << op_name(n.op) << " at node " << id;
      throw NumericError(os.str(), id);
    }
    nodes_.push_back(std::move(n));
    return {this, id};
  }

  // Reverse sweep from a 1x1 loss. Leaf gradients accumulate across calls;
  // intermediate adjoints are rebuilt on each call.
  void backward(const Tensor<Scalar>& loss) {
    if (loss.graph() != this) throw ContractError("loss belongs to another graph");
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw ContractError("backward() needs a scalar loss, got " + loss.shape().str());
    }
    std::vector<Mat> adj(nodes_.size());
    adj[static_cast<std::size_t>(loss.id())] = Mat::Ones(1, 1);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      Mat& g = adj[static_cast<std::size_t>(id)];
      if (!n.requires_grad || g.size() == 0) continue;
      if (n.op == Op::Leaf) {
        if (n.sink != nullptr) {
          *n.sink += g;
        } else {
          n.grad += g;
        }
        continue;
      }
      propagate(n, g, adj);
      Mat().swap(g);
    }
  }

 private:
  Tensor<Scalar> add_leaf(Mat value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    const int id = static_cast<int>(nodes_.size());
    if (check_finite_ && !n.value.allFinite()) {
      throw NumericError("non-finite leaf value at node " + std::to_string(id), id);
    }
    nodes_.push_back(std::move(n));
    return {this, id};
  }

  bool wants(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  Mat& slot(std::vector<Mat>& adj, int id) {
    Mat& a = adj[static_cast<std::size_t>(id)];
    if (a.size() == 0) {
      const Mat& v = value(id);
      a = Mat::Zero(v.rows(), v.cols());
    }
    return a;
  }

  template <typename Expr>
  void accumulate(std::vector<Mat>& adj, int id, const Expr& e) {
    Mat& a = adj[static_cast<std::size_t>(id)];
    if (a.size() == 0) {
      a = e;
    } else {
      a += e;
    }
  }

  // Reduces a full-shape gradient onto a broadcast operand.
  template <typename Expr>
  void accumulate_broadcast(std::vector<Mat>& adj, int id, Broadcast mode, const Expr& e) {
    switch (mode) {
      case Broadcast::None: accumulate(adj, id, e); break;
      case Broadcast::Row: accumulate(adj, id, Mat(e).colwise().sum()); break;
      case Broadcast::Col: accumulate(adj, id, Mat(e).rowwise().sum()); break;
      case Broadcast::Scalar: accumulate(adj, id, Mat::Constant(1, 1, Mat(e).sum())); break;
    }
  }

  // Expands operand b to the shape of the result for elementwise products.
  static Mat expand(const Mat& b, Broadcast mode, Index rows, Index cols) {
    switch (mode) {
      case Broadcast::None: return b;
      case Broadcast::Row: return b.replicate(rows, 1);
      case Broadcast::Col: return b.replicate(1, cols);
      case Broadcast::Scalar: return Mat::Constant(rows, cols, b(0, 0));
    }
    return b;
  }

  void propagate(const Node& n, const Mat& g, std::vector<Mat>& adj);

  std::vector<Node> nodes_;
  bool training_ = true;
  bool check_finite_ = true;
};

template <typename Scalar>
void Graph<Scalar>::propagate(const Node& n, const Mat& g, std::vector<Mat>& adj) {
  const auto in = [&](std::size_t k) { return n.in[k]; };
  const auto bmode = static_cast<Broadcast>(n.i0);
  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::MatMul: {
      const Mat& a = value(in(0));
      const Mat& b = value(in(1));
      if (wants(in(0))) accumulate(adj, in(0), g * b.transpose());
      if (wants(in(1))) accumulate(adj, in(1), a.transpose() * g);
      break;
    }
    case Op::Add:
      if (wants(in(0))) accumulate(adj, in(0), g);
      if (wants(in(1))) accumulate_broadcast(adj, in(1), bmode, g);
      break;
    case Op::Sub:
      if (wants(in(0))) accumulate(adj, in(0), g);
      if (wants(in(1))) accumulate_broadcast(adj, in(1), bmode, -g);
      break;
    case Op::Mul: {
      const Mat& a = value(in(0));
      const Mat b = expand(value(in(1)), bmode, a.rows(), a.cols());
      if (wants(in(0))) accumulate(adj, in(0), g.cwiseProduct(b));
      if (wants(in(1))) accumulate_broadcast(adj, in(1), bmode, g.cwiseProduct(a));
      break;
    }
    case Op::Div: {
      const Mat& a = value(in(0));
      const Mat b = expand(value(in(1)), bmode, a.rows(), a.cols());
      if (wants(in(0))) accumulate(adj, in(0), g.cwiseQuotient(b));
      if (wants(in(1))) {
        accumulate_broadcast(adj, in(1), bmode,
                             (-g.cwiseProduct(a).cwiseQuotient(b.cwiseProduct(b))).eval());
      }
      break;
    }
    case Op::Sigmoid:
      accumulate(adj, in(0), g.cwiseProduct(n.value.cwiseProduct((Scalar(1) - n.value.array()).matrix())));
      break;
    case Op::Tanh:
      accumulate(adj, in(0), g.cwiseProduct((Scalar(1) - n.value.array().square()).matrix()));
      break;
    case Op::Exp:
      accumulate(adj, in(0), g.cwiseProduct(n.value));
      break;
    case Op::Log: {
      const Mat& x = value(in(0));
      const Scalar floor = n.s0;
      accumulate(adj, in(0), (x.array() > floor).select(g.array() / x.array(), Scalar(0)).matrix());
      break;
    }
    case Op::Softmax: {
      const Mat& y = n.value;
      const Mat dot = g.cwiseProduct(y).rowwise().sum();
      accumulate(adj, in(0), (y.array() * (g.colwise() - dot.col(0)).array()).matrix());
      break;
    }
    case Op::ConcatCols: {
      Index offset = 0;
      for (int id : n.in) {
        const Index w = value(id).cols();
        if (wants(id)) accumulate(adj, id, g.middleCols(offset, w));
        offset += w;
      }
      break;
    }
    case Op::ConcatRows: {
      Index offset = 0;
      for (int id : n.in) {
        const Index h = value(id).rows();
        if (wants(id)) accumulate(adj, id, g.middleRows(offset, h));
        offset += h;
      }
      break;
    }
    case Op::SliceRows:
      slot(adj, in(0)).middleRows(n.i0, n.i1) += g;
      break;
    case Op::SliceCols:
      slot(adj, in(0)).middleCols(n.i0, n.i1) += g;
      break;
    case Op::GatherRows: {
      Mat& a = slot(adj, in(0));
      for (std::size_t r = 0; r < n.ids.size(); ++r) a.row(n.ids[r]) += g.row(static_cast<Index>(r));
      break;
    }
    case Op::Dropout:
      accumulate(adj, in(0), g.cwiseProduct(n.cache));
      break;
    case Op::Transpose:
      accumulate(adj, in(0), g.transpose());
      break;
    case Op::Sum: {
      const Mat& x = value(in(0));
      accumulate(adj, in(0), Mat::Constant(x.rows(), x.cols(), g(0, 0)));
      break;
    }
    case Op::RowSum: {
      const Mat& x = value(in(0));
      accumulate(adj, in(0), g.replicate(1, x.cols()));
      break;
    }
    case Op::Affine:
      accumulate(adj, in(0), g * n.s0);
      break;
    case Op::GatherCols: {
      Mat& a = slot(adj, in(0));
      for (std::size_t r = 0; r < n.ids.size(); ++r) a(static_cast<Index>(r), n.ids[r]) += g(static_cast<Index>(r), 0);
      break;
    }
    case Op::ScatterCols: {
      Mat& a = slot(adj, in(0));
      for (std::size_t j = 0; j < n.ids.size(); ++j) a.col(static_cast<Index>(j)) += g.col(n.ids[j]);
      break;
    }
    case Op::GruCell: {
      // cache = [r | z | n | hidden-side candidate pre-activation]
      const Index h = n.value.cols();
      const Mat& prev = value(in(1));
      const Mat& w_hidden = value(in(2));
      const auto r = n.cache.leftCols(h).array();
      const auto z = n.cache.middleCols(h, h).array();
      const auto cand = n.cache.middleCols(2 * h, h).array();
      const auto gh_n = n.cache.rightCols(h).array();
      const auto ga = g.array();

      Mat d_pre(g.rows(), 3 * h);
      const auto d_cand = (ga * (Scalar(1) - z) * (Scalar(1) - cand.square())).eval();
      d_pre.leftCols(h) = (d_cand * gh_n * r * (Scalar(1) - r)).matrix();
      d_pre.middleCols(h, h) = (ga * (prev.array() - cand) * z * (Scalar(1) - z)).matrix();
      d_pre.rightCols(h) = d_cand.matrix();

      Mat d_hidden = d_pre;
      d_hidden.rightCols(h) = (d_cand * r).matrix();

      if (wants(in(0))) accumulate(adj, in(0), d_pre);
      if (wants(in(1))) accumulate(adj, in(1), (ga * z).matrix() + d_hidden * w_hidden.transpose());
      if (wants(in(2))) accumulate(adj, in(2), prev.transpose() * d_hidden);
      if (wants(in(3))) accumulate(adj, in(3), d_hidden.colwise().sum());
      break;
    }
    case Op::AdditiveScores: {
      // cache row (i * L + j) holds tanh(keys_j + queries_i).
      const Mat& v = value(in(2));
      const Index t = g.rows();
      const Index l = g.cols();
      const Index width = v.rows();
      const bool dk = wants(in(0));
      const bool dq = wants(in(1));
      const bool dv = wants(in(2));
      Mat d_keys = Mat::Zero(l, width);
      Mat d_queries = Mat::Zero(t, width);
      Mat d_v = Mat::Zero(width, 1);
      const auto v_row = v.col(0).transpose();
      for (Index i = 0; i < t; ++i) {
        const auto block = n.cache.middleRows(i * l, l);
        if (dv) d_v.noalias() += block.transpose() * g.row(i).transpose();
        if (dk || dq) {
          Mat d_e = (Scalar(1) - block.array().square()).matrix();
          d_e.array().colwise() *= g.row(i).transpose().array();
          d_e.array().rowwise() *= v_row.array();
          if (dk) d_keys += d_e;
          if (dq) d_queries.row(i) += d_e.colwise().sum();
        }
      }
      if (dk) accumulate(adj, in(0), d_keys);
      if (dq) accumulate(adj, in(1), d_queries);
      if (dv) accumulate(adj, in(2), d_v);
      break;
    }
  }
}

namespace detail {

template <typename Scalar>
Graph<Scalar>& same_graph(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!a.valid() || !b.valid() || a.graph() != b.graph()) {
    throw ContractError("tensors belong to different graphs");
  }
  return *a.graph();
}

template <typename Scalar>
typename Graph<Scalar>::Node make_node(Op op, std::vector<int> in) {
  typename Graph<Scalar>::Node n;
  n.op = op;
  n.in = std::move(in);
  return n;
}

inline Broadcast broadcast_mode(const char* op, Shape a, Shape b) {
  if (a == b) return Broadcast::None;
  if (b.rows == 1 && b.cols == a.cols) return Broadcast::Row;
  if (b.cols == 1 && b.rows == a.rows) return Broadcast::Col;
  if (b.rows == 1 && b.cols == 1) return Broadcast::Scalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

template <typename Scalar, typename F>
Tensor<Scalar> elementwise(Op op, const char* name, const Tensor<Scalar>& a, const Tensor<Scalar>& b, F f) {
  Graph<Scalar>& g = same_graph(a, b);
  const Broadcast mode = broadcast_mode(name, a.shape(), b.shape());
  auto n = make_node<Scalar>(op, {a.id(), b.id()});
  n.i0 = static_cast<Index>(mode);
  const auto& x = a.value();
  const auto& y = b.value();
  switch (mode) {
    case Broadcast::None: n.value = f(x.array(), y.array()).matrix(); break;
    case Broadcast::Row: n.value = f(x.array(), y.replicate(x.rows(), 1).array()).matrix(); break;
    case Broadcast::Col: n.value = f(x.array(), y.replicate(1, x.cols()).array()).matrix(); break;
    case Broadcast::Scalar:
      n.value = f(x.array(), Matrix<Scalar>::Constant(x.rows(), x.cols(), y(0, 0)).array()).matrix();
      break;
  }
  return g.record(std::move(n));
}

template <typename Scalar>
Tensor<Scalar> unary(Op op, const Tensor<Scalar>& a, Matrix<Scalar> value) {
  auto n = make_node<Scalar>(op, {a.id()});
  n.value = std::move(value);
  return a.graph()->record(std::move(n));
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Graph<Scalar>& g = detail::same_graph(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + a.shape().str() + " and " + b.shape().str());
  }
  auto n = detail::make_node<Scalar>(Op::MatMul, {a.id(), b.id()});
  n.value.noalias() = a.value() * b.value();
  return g.record(std::move(n));
}

// Elementwise ops broadcast the second operand when it is 1xN, Mx1 or 1x1.
template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::elementwise(Op::Add, "add", a, b, [](const auto& x, const auto& y) { return x + y; });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::elementwise(Op::Sub, "sub", a, b, [](const auto& x, const auto& y) { return x - y; });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::elementwise(Op::Mul, "mul", a, b, [](const auto& x, const auto& y) { return x * y; });
}

template <typename Scalar>
Tensor<Scalar> div(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::elementwise(Op::Div, "div", a, b, [](const auto& x, const auto& y) { return x / y; });
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  const auto& x = a.value().array();
  return detail::unary(Op::Sigmoid, a, Matrix<Scalar>((Scalar(1) / (Scalar(1) + (-x).exp())).matrix()));
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& a) {
  return detail::unary(Op::Tanh, a, Matrix<Scalar>(a.value().array().tanh().matrix()));
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a) {
  return detail::unary(Op::Exp, a, Matrix<Scalar>(a.value().array().exp().matrix()));
}

// log(max(x, floor)); the gradient is zero where the floor is active.
template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& a, Scalar floor = Scalar(0)) {
  auto n = detail::make_node<Scalar>(Op::Log, {a.id()});
  n.s0 = floor;
  n.value = a.value().array().max(floor).log().matrix();
  return a.graph()->record(std::move(n));
}

// Softmax along the last axis (each row).
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& a) {
  const auto& x = a.value();
  Matrix<Scalar> y = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
  y.array().colwise() /= y.rowwise().sum().array();
  return detail::unary(Op::Softmax, a, std::move(y));
}

template <typename Scalar>
Tensor<Scalar> concat_cols(std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Graph<Scalar>& g = *parts.front().graph();
  std::vector<int> ids;
  Index cols = 0;
  const Index rows = parts.front().rows();
  for (const auto& p : parts) {
    if (p.graph() != &g) throw ContractError("tensors belong to different graphs");
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch " + parts.front().shape().str() + " and " + p.shape().str());
    }
    ids.push_back(p.id());
    cols += p.cols();
  }
  auto n = detail::make_node<Scalar>(Op::ConcatCols, std::move(ids));
  n.value.resize(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    n.value.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return g.record(std::move(n));
}

template <typename Scalar>
Tensor<Scalar> concat_cols(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Tensor<Scalar> parts[] = {a, b};
  return concat_cols<Scalar>(std::span<const Tensor<Scalar>>(parts));
}

template <typename Scalar>
Tensor<Scalar> concat_rows(std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Graph<Scalar>& g = *parts.front().graph();
  std::vector<int> ids;
  Index rows = 0;
  const Index cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.graph() != &g) throw ContractError("tensors belong to different graphs");
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + parts.front().shape().str() + " and " + p.shape().str());
    }
    ids.push_back(p.id());
    rows += p.rows();
  }
  auto n = detail::make_node<Scalar>(Op::ConcatRows, std::move(ids));
  n.value.resize(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    n.value.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return g.record(std::move(n));
}

template <typename Scalar>
Tensor<Scalar> concat_rows(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Tensor<Scalar> parts[] = {a, b};
  return concat_rows<Scalar>(std::span<const Tensor<Scalar>>(parts));
}

template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of " +
                         a.shape().str());
  }
  auto n = detail::make_node<Scalar>(Op::SliceRows, {a.id()});
  n.i0 = begin;
  n.i1 = count;
  n.value = a.value().middleRows(begin, count);
  return a.graph()->record(std::move(n));
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") out of " +
                         a.shape().str());
  }
  auto n = detail::make_node<Scalar>(Op::SliceCols, {a.id()});
  n.i0 = begin;
  n.i1 = count;
  n.value = a.value().middleCols(begin, count);
  return a.graph()->record(std::move(n));
}

// Row gather; with an embedding table this is the embedding lookup.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& table, std::span<const int> ids) {
  auto n = detail::make_node<Scalar>(Op::GatherRows, {table.id()});
  const auto& t = table.value();
  n.value.resize(static_cast<Index>(ids.size()), t.cols());
  n.ids.reserve(ids.size());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= t.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[r]) + " out of " + table.shape().str());
    }
    n.ids.push_back(ids[r]);
    n.value.row(static_cast<Index>(r)) = t.row(ids[r]);
  }
  return table.graph()->record(std::move(n));
}

template <typename Scalar>
Tensor<Scalar> embedding(const Tensor<Scalar>& table, std::span<const int> ids) {
  return gather_rows(table, ids);
}

// Samples an inverted-dropout mask: entries are 0 with probability `rate`,
// otherwise 1/(1-rate).
template <typename Scalar, typename Rng>
Matrix<Scalar> sample_dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must be in [0, 1)");
  Matrix<Scalar> mask(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const Scalar scale = Scalar(1.0 / (1.0 - rate));
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : Scalar(0);
  return mask;
}

// Applies a pre-sampled mask. Identity in evaluation mode or with an empty mask.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& a, const Matrix<Scalar>& mask) {
  if (!a.graph()->training() || mask.size() == 0) return a;
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) {
    throw DimensionError("dropout: mask " + Shape{mask.rows(), mask.cols()}.str() + " vs input " + a.shape().str());
  }
  auto n = detail::make_node<Scalar>(Op::Dropout, {a.id()});
  n.cache = mask;
  n.value = a.value().cwiseProduct(mask);
  return a.graph()->record(std::move(n));
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  return detail::unary(Op::Transpose, a, Matrix<Scalar>(a.value().transpose()));
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  return detail::unary(Op::Sum, a, Matrix<Scalar>(Matrix<Scalar>::Constant(1, 1, a.value().sum())));
}

template <typename Scalar>
Tensor<Scalar> row_sum(const Tensor<Scalar>& a) {
  return detail::unary(Op::RowSum, a, Matrix<Scalar>(a.value().rowwise().sum()));
}

// scale * a + shift
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& a, Scalar scale, Scalar shift) {
  auto n = detail::make_node<Scalar>(Op::Affine, {a.id()});
  n.s0 = scale;
  n.s1 = shift;
  n.value = (a.value().array() * scale + shift).matrix();
  return a.graph()->record(std::move(n));
}

// Picks column ids[r] from each row r; result is Mx1.
template <typename Scalar>
Tensor<Scalar> gather_cols(const Tensor<Scalar>& a, std::span<const int> ids) {
  if (static_cast<Index>(ids.size()) != a.rows()) {
    throw DimensionError("gather_cols: " + std::to_string(ids.size()) + " ids for " + a.shape().str());
  }
  auto n = detail::make_node<Scalar>(Op::GatherCols, {a.id()});
  n.value.resize(a.rows(), 1);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= a.cols()) throw DimensionError("gather_cols: id out of range");
    n.ids.push_back(ids[r]);
    n.value(static_cast<Index>(r), 0) = a.value()(static_cast<Index>(r), ids[r]);
  }
  return a.graph()->record(std::move(n));
}

// Adds column j of `a` (MxL) into column ids[j] of an MxWidth zero matrix.
template <typename Scalar>
Tensor<Scalar> scatter_cols(const Tensor<Scalar>& a, std::span<const int> ids, Index width) {
  if (static_cast<Index>(ids.size()) != a.cols()) {
    throw DimensionError("scatter_cols: " + std::to_string(ids.size()) + " ids for " + a.shape().str());
  }
  auto n = detail::make_node<Scalar>(Op::ScatterCols, {a.id()});
  n.value = Matrix<Scalar>::Zero(a.rows(), width);
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] < 0 || ids[j] >= width) throw DimensionError("scatter_cols: id out of range");
    n.ids.push_back(ids[j]);
    n.value.col(ids[j]) += a.value().col(static_cast<Index>(j));
  }
  return a.graph()->record(std::move(n));
}

// One GRU step. `input_proj` is x*W_in + b_in (Mx3H, gate order r|z|n),
// `prev` the previous state (MxH), `w_hidden` Hx3H, `b_hidden` 1x3H.
//   r = sigmoid(xr + hr), z = sigmoid(xz + hz), n = tanh(xn + r*hn)
//   h' = (1 - z) * n + z * h
template <typename Scalar>
Tensor<Scalar> gru_cell(const Tensor<Scalar>& input_proj, const Tensor<Scalar>& prev, const Tensor<Scalar>& w_hidden,
                        const Tensor<Scalar>& b_hidden) {
  Graph<Scalar>& g = detail::same_graph(input_proj, prev);
  detail::same_graph(w_hidden, b_hidden);
  const Index h = prev.cols();
  if (input_proj.cols() != 3 * h || input_proj.rows() != prev.rows() || w_hidden.rows() != h ||
      w_hidden.cols() != 3 * h || b_hidden.rows() != 1 || b_hidden.cols() != 3 * h) {
    throw DimensionError("gru_cell: shapes input " + input_proj.shape().str() + ", state " + prev.shape().str() +
                         ", w_hidden " + w_hidden.shape().str() + ", b_hidden " + b_hidden.shape().str());
  }
  auto n = detail::make_node<Scalar>(Op::GruCell, {input_proj.id(), prev.id(), w_hidden.id(), b_hidden.id()});
  Matrix<Scalar> gh = prev.value() * w_hidden.value();
  gh.rowwise() += b_hidden.value().row(0);
  const auto& xp = input_proj.value();
  const auto sig = [](const auto& v) { return (Scalar(1) / (Scalar(1) + (-v).exp())).eval(); };
  const auto r = sig(xp.leftCols(h).array() + gh.leftCols(h).array());
  const auto z = sig(xp.middleCols(h, h).array() + gh.middleCols(h, h).array());
  const auto cand = (xp.rightCols(h).array() + r * gh.rightCols(h).array()).tanh().eval();
  n.cache.resize(prev.rows(), 4 * h);
  n.cache << r.matrix(), z.matrix(), cand.matrix(), gh.rightCols(h);
  n.value = ((Scalar(1) - z) * cand + z * prev.value().array()).matrix();
  return g.record(std::move(n));
}

// Additive attention energies: out(i, j) = sum_a v_a * tanh(keys(j, a) + queries(i, a)).
// keys: LxA, queries: TxA, v: Ax1 -> TxL.
template <typename Scalar>
Tensor<Scalar> additive_scores(const Tensor<Scalar>& keys, const Tensor<Scalar>& queries, const Tensor<Scalar>& v) {
  Graph<Scalar>& g = detail::same_graph(keys, queries);
  detail::same_graph(keys, v);
  const Index width = keys.cols();
  if (queries.cols() != width || v.rows() != width || v.cols() != 1) {
    throw DimensionError("additive_scores: shapes keys " + keys.shape().str() + ", queries " + queries.shape().str() +
                         ", v " + v.shape().str());
  }
  const Index t = queries.rows();
  const Index l = keys.rows();
  auto n = detail::make_node<Scalar>(Op::AdditiveScores, {keys.id(), queries.id(), v.id()});
  n.cache.resize(t * l, width);
  n.value.resize(t, l);
  for (Index i = 0; i < t; ++i) {
    auto block = n.cache.middleRows(i * l, l);
    block = (keys.value().rowwise() + queries.value().row(i)).array().tanh().matrix();
    n.value.row(i).noalias() = (block * v.value()).transpose();
  }
  return g.record(std::move(n));
}

}  // namespace daml
