#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace conper::ad {

using Matrix = Eigen::MatrixXd;

/// A named trainable tensor. Gradients live on the tape, not here.
struct Parameter {
  std::string name;
  Matrix value;
};

using Gradients = std::unordered_map<const Parameter*, Matrix>;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so backward
/// is a single reverse sweep.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Var constant(Matrix value);
  /// Leaf bound to a parameter; repeated calls return the same node.
  Var param(const Parameter& p);
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient buffer of a node, zero-initialized on first access.
  Matrix& grad(int id);
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].has_grad; }

  /// Seeds d(loss)/d(loss) = 1; `loss` must be 1x1.
  void backward(const Var& loss);
  /// Adds scale * d(loss)/d(p) for every parameter leaf into `into`.
  void accumulate(Gradients& into, double scale = 1.0) const;
  Gradients gradients() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    const Parameter* param = nullptr;
    Backward backward;
  };
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_ids_;
};

// --- linear algebra ---
Var matmul(Var a, Var b);     // a * b
Var matmul_nt(Var a, Var b);  // a * b^T
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var add_rowwise(Var a, Var row);  // broadcast a 1 x m row over every row of a
Var add_n(std::span<const Var> terms);

// --- elementwise nonlinearities ---
Var tanh(Var a);
Var sigmoid(Var a);
Var gelu(Var a);  // tanh approximation
Var log(Var a);

// --- row-wise normalizations ---
Var softmax_rows(Var a);
/// Row i only attends to columns <= i + offset.
Var causal_softmax_rows(Var a, Eigen::Index offset = 0);
Var log_softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);

// --- shape manipulation ---
Var gather_rows(Var table, std::span<const int> ids);
/// Row g of the result is the sum of table rows groups[g].
Var sum_gather_rows(Var table, const std::vector<std::vector<int>>& groups);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
Var mean_rows(Var a);  // 1 x cols
Var sum_all(Var a);    // 1 x 1
Var pick(Var a, Eigen::Index r, Eigen::Index c);  // 1 x 1

// --- losses ---
/// Mean over rows of -log softmax(logits)[row, targets[row]].
Var cross_entropy_rows(Var logits, std::span<const int> targets);
/// -(y log sigmoid(z) + (1-y) log(1-sigmoid(z))) for a 1x1 logit.
Var bce_with_logits(Var logit, double label);

// --- plain helpers shared with non-tape code paths ---
Matrix softmax_rows(const Matrix& a);
double sigmoid(double x);
double gelu(double x);

}  // namespace conper::ad
