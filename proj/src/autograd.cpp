#include "conper/autograd.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace conper::ad {
namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Matrix log_softmax_rows(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    const double lse = m + std::log((a.row(r).array() - m).exp().sum());
    out.row(r) = a.row(r).array() - lse;
  }
  return out;
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, nullptr, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(const Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, {}, false, true, &p, {}});
  const int id = static_cast<int>(nodes_.size() - 1);
  param_ids_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) needs = needs || requires_grad(v.id());
  nodes_.push_back(Node{std::move(value), {}, false, needs, nullptr, needs ? std::move(backward) : Backward{}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("backward: loss must be 1x1");
  grad(loss.id())(0, 0) += 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

void Tape::accumulate(Gradients& into, double scale) const {
  for (const auto& [param, id] : param_ids_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) continue;
    auto it = into.find(param);
    if (it == into.end())
      into.emplace(param, scale * n.grad);
    else
      it->second += scale * n.grad;
  }
}

Gradients Tape::gradients() const {
  Gradients g;
  accumulate(g);
  return g;
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Tape* t = a.tape();
  return t->record(a.value() * b.value(), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) t.grad(a.id()).noalias() += g * t.value(b.id()).transpose();
    if (t.requires_grad(b.id())) t.grad(b.id()).noalias() += t.value(a.id()).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimensions differ");
  Tape* t = a.tape();
  return t->record(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) t.grad(a.id()).noalias() += g * t.value(b.id());
    if (t.requires_grad(b.id())) t.grad(b.id()).noalias() += g.transpose() * t.value(a.id());
  });
}

Var transpose(Var a) {
  return a.tape()->record(a.value().transpose(), {a}, [a](Tape& t, int self) {
    t.grad(a.id()) += t.grad(self).transpose();
  });
}

Var add(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, int self) {
    if (t.requires_grad(a.id())) t.grad(a.id()) += t.grad(self);
    if (t.requires_grad(b.id())) t.grad(b.id()) += t.grad(self);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, int self) {
    if (t.requires_grad(a.id())) t.grad(a.id()) += t.grad(self);
    if (t.requires_grad(b.id())) t.grad(b.id()) -= t.grad(self);
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "mul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) t.grad(a.id()) += g.cwiseProduct(t.value(b.id()));
    if (t.requires_grad(b.id())) t.grad(b.id()) += g.cwiseProduct(t.value(a.id()));
  });
}

Var scale(Var a, double s) {
  return a.tape()->record(a.value() * s, {a}, [a, s](Tape& t, int self) { t.grad(a.id()) += s * t.grad(self); });
}

Var add_rowwise(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_rowwise: bad row shape");
  Matrix v = a.value();
  v.rowwise() += row.value().row(0);
  return a.tape()->record(std::move(v), {a, row}, [a, row](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(a.id())) t.grad(a.id()) += g;
    if (t.requires_grad(row.id())) t.grad(row.id()) += g.colwise().sum();
  });
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw std::invalid_argument("add_n: no terms");
  Matrix v = terms[0].value();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    check_same_shape(v, terms[i].value(), "add_n");
    v += terms[i].value();
  }
  std::vector<Var> copy(terms.begin(), terms.end());
  return terms[0].tape()->record(std::move(v), terms, [copy](Tape& t, int self) {
    for (const Var& x : copy)
      if (t.requires_grad(x.id())) t.grad(x.id()) += t.grad(self);
  });
}

Var tanh(Var a) {
  Matrix y = a.value().array().tanh().matrix();
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(a.id()).array() += t.grad(self).array() * (1.0 - y.array().square());
  });
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var sigmoid(Var a) {
  Matrix y = a.value().unaryExpr([](double x) { return sigmoid(x); });
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(a.id()).array() += t.grad(self).array() * y.array() * (1.0 - y.array());
  });
}

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

Var gelu(Var a) {
  Matrix y = a.value().unaryExpr([](double x) { return gelu(x); });
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, int self) {
    const Matrix& x = t.value(a.id());
    const Matrix d = x.unaryExpr([](double v) {
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    });
    t.grad(a.id()).array() += t.grad(self).array() * d.array();
  });
}

Var log(Var a) {
  Matrix y = a.value().array().log().matrix();
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, int self) {
    t.grad(a.id()).array() += t.grad(self).array() / t.value(a.id()).array();
  });
}

Matrix softmax_rows(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    out.row(r) = (a.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

namespace {
void softmax_backward(Tape& t, int self, int input) {
  const Matrix& y = t.value(self);
  const Matrix& g = t.grad(self);
  const Eigen::VectorXd dot = (g.cwiseProduct(y)).rowwise().sum();
  Matrix d = y.cwiseProduct(g);
  d -= y.cwiseProduct(dot.replicate(1, y.cols()));
  t.grad(input) += d;
}
}  // namespace

Var softmax_rows(Var a) {
  return a.tape()->record(softmax_rows(a.value()), {a},
                          [a](Tape& t, int self) { softmax_backward(t, self, a.id()); });
}

Var causal_softmax_rows(Var a, Eigen::Index offset) {
  const Matrix& x = a.value();
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::Index n = std::min<Eigen::Index>(x.cols(), r + offset + 1);
    if (n <= 0) continue;
    const double m = x.row(r).head(n).maxCoeff();
    y.row(r).head(n) = (x.row(r).head(n).array() - m).exp();
    y.row(r).head(n) /= y.row(r).head(n).sum();
  }
  // masked entries have y = 0, so the generic softmax backward leaves them untouched
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, int self) { softmax_backward(t, self, a.id()); });
}

Var log_softmax_rows(Var a) {
  return a.tape()->record(log_softmax_rows(a.value()), {a}, [a](Tape& t, int self) {
    const Matrix p = t.value(self).array().exp().matrix();
    const Matrix& g = t.grad(self);
    const Eigen::VectorXd gs = g.rowwise().sum();
    t.grad(a.id()) += g - p.cwiseProduct(gs.replicate(1, p.cols()));
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.cols();
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv[r];
  }
  Matrix y = xhat.array().rowwise() * gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  return x.tape()->record(std::move(y), {x, gain, bias}, [x, gain, bias, xhat, inv](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(gain.id())) t.grad(gain.id()) += (g.cwiseProduct(xhat)).colwise().sum();
    if (t.requires_grad(bias.id())) t.grad(bias.id()) += g.colwise().sum();
    if (t.requires_grad(x.id())) {
      const Matrix dxhat = g.array().rowwise() * t.value(gain.id()).row(0).array();
      const double n = static_cast<double>(xhat.cols());
      Matrix& dx = t.grad(x.id());
      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        const double s1 = dxhat.row(r).sum();
        const double s2 = dxhat.row(r).dot(xhat.row(r));
        dx.row(r).array() += inv[r] / n * (n * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2);
      }
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw std::out_of_range("gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> copy(ids.begin(), ids.end());
  return table.tape()->record(std::move(out), {table}, [table, copy](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& d = t.grad(table.id());
    for (std::size_t i = 0; i < copy.size(); ++i) d.row(copy[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var sum_gather_rows(Var table, const std::vector<std::vector<int>>& groups) {
  const Matrix& tv = table.value();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(groups.size()), tv.cols());
  for (std::size_t gidx = 0; gidx < groups.size(); ++gidx)
    for (int id : groups[gidx]) {
      if (id < 0 || id >= tv.rows()) throw std::out_of_range("sum_gather_rows: id out of range");
      out.row(static_cast<Eigen::Index>(gidx)) += tv.row(id);
    }
  return table.tape()->record(std::move(out), {table}, [table, groups](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& d = t.grad(table.id());
    for (std::size_t gidx = 0; gidx < groups.size(); ++gidx)
      for (int id : groups[gidx]) d.row(id) += g.row(static_cast<Eigen::Index>(gidx));
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Var> copy(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts, [copy](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index at = 0;
    for (const Var& p : copy) {
      if (t.requires_grad(p.id())) t.grad(p.id()) += g.middleCols(at, p.cols());
      at += p.cols();
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> copy(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts, [copy](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index at = 0;
    for (const Var& p : copy) {
      if (t.requires_grad(p.id())) t.grad(p.id()) += g.middleRows(at, p.rows());
      at += p.rows();
    }
  });
}

Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw std::out_of_range("slice_rows");
  return a.tape()->record(a.value().middleRows(begin, count), {a}, [a, begin, count](Tape& t, int self) {
    t.grad(a.id()).middleRows(begin, count) += t.grad(self);
  });
}

Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw std::out_of_range("slice_cols");
  return a.tape()->record(a.value().middleCols(begin, count), {a}, [a, begin, count](Tape& t, int self) {
    t.grad(a.id()).middleCols(begin, count) += t.grad(self);
  });
}

Var mean_rows(Var a) {
  const double n = static_cast<double>(a.rows());
  return a.tape()->record(a.value().colwise().mean(), {a}, [a, n](Tape& t, int self) {
    t.grad(a.id()).rowwise() += t.grad(self).row(0) / n;
  });
}

Var sum_all(Var a) {
  Matrix s(1, 1);
  s(0, 0) = a.value().sum();
  return a.tape()->record(std::move(s), {a}, [a](Tape& t, int self) {
    t.grad(a.id()).array() += t.grad(self)(0, 0);
  });
}

Var pick(Var a, Eigen::Index r, Eigen::Index c) {
  Matrix s(1, 1);
  s(0, 0) = a.value()(r, c);
  return a.tape()->record(std::move(s), {a}, [a, r, c](Tape& t, int self) {
    t.grad(a.id())(r, c) += t.grad(self)(0, 0);
  });
}

Var cross_entropy_rows(Var logits, std::span<const int> targets) {
  const Matrix& x = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != x.rows())
    throw std::invalid_argument("cross_entropy_rows: one target per row required");
  const Matrix ls = log_softmax_rows(x);
  double loss = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0 || tgt >= x.cols()) throw std::out_of_range("cross_entropy_rows: target out of range");
    loss -= ls(r, tgt);
  }
  const double n = static_cast<double>(x.rows());
  Matrix out(1, 1);
  out(0, 0) = loss / n;
  std::vector<int> copy(targets.begin(), targets.end());
  return logits.tape()->record(std::move(out), {logits}, [logits, copy, ls, n](Tape& t, int self) {
    const double g = t.grad(self)(0, 0) / n;
    Matrix d = ls.array().exp().matrix();
    for (std::size_t r = 0; r < copy.size(); ++r) d(static_cast<Eigen::Index>(r), copy[r]) -= 1.0;
    t.grad(logits.id()) += g * d;
  });
}

Var bce_with_logits(Var logit, double label) {
  if (logit.rows() != 1 || logit.cols() != 1) throw std::invalid_argument("bce_with_logits: 1x1 logit required");
  const double z = logit.scalar();
  // log(1 + exp(-|z|)) + max(z, 0) - y z
  const double loss = std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - label * z;
  Matrix out(1, 1);
  out(0, 0) = loss;
  return logit.tape()->record(std::move(out), {logit}, [logit, label, z](Tape& t, int self) {
    t.grad(logit.id())(0, 0) += t.grad(self)(0, 0) * (sigmoid(z) - label);
  });
}

}  // namespace conper::ad
