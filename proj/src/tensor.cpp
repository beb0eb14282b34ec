#include "copo/tensor.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace copo {

namespace autograd {

namespace {
thread_local bool g_no_grad = false;
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

}  // namespace autograd

using autograd::Node;

std::string shape_str(const Tensor& t) {
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}

static std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

Tensor Tensor::constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return from_node(std::move(n));
}

Tensor Tensor::param(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return from_node(std::move(n));
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  Matrix m = Matrix::Zero(rows, cols);
  return requires_grad ? param(std::move(m)) : constant(std::move(m));
}

Tensor Tensor::row(std::initializer_list<double> values) {
  Matrix m(1, static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) m(0, i++) = v;
  return constant(std::move(m));
}

Tensor Tensor::row(const Eigen::VectorXd& values) {
  Matrix m(1, values.size());
  for (Index i = 0; i < values.size(); ++i) m(0, i) = values[i];
  return constant(std::move(m));
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor is not scalar, shape " + shape_str(*this));
  return node_->value(0, 0);
}

const Matrix& Tensor::grad() const {
  if (!has_grad()) throw std::runtime_error("grad: no gradient populated");
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad = Matrix::Zero(rows(), cols());
}

Tensor Tensor::detach() const {
  return Tensor::constant(node_->value);
}

// ---- op construction helpers ----

namespace {

Tensor make_op(Matrix value, std::vector<Tensor> inputs, autograd::BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool rec = !autograd::NoGradGuard::active();
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  if (rec && any) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node());
    n->backward_fn = std::move(fn);
  }
  return Tensor::from_node(std::move(n));
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Broadcast b to the shape of `like` when b is 1x1, 1xN or Mx1.
Matrix broadcast_like(const char* op, const Matrix& b, Index rows, Index cols) {
  if (b.rows() == rows && b.cols() == cols) return b;
  if (b.rows() == 1 && b.cols() == 1) return Matrix::Constant(rows, cols, b(0, 0));
  if (b.rows() == 1 && b.cols() == cols) return b.replicate(rows, 1);
  if (b.cols() == 1 && b.rows() == rows) return b.replicate(1, cols);
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(b) + " vs (" +
                              std::to_string(rows) + "x" + std::to_string(cols) + ")");
}

// Sum a full-shape gradient back down to the operand's (possibly broadcast) shape.
Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) {
    Matrix r(1, 1);
    r(0, 0) = g.sum();
    return r;
  }
  if (rows == 1) return g.colwise().sum();
  if (cols == 1) return g.rowwise().sum();
  throw std::logic_error("reduce_to: incompatible broadcast reduction");
}

struct BinOpShapes {
  Index rows, cols;
};

BinOpShapes binary_shape(const char* op, const Tensor& a, const Tensor& b) {
  Index rows = std::max(a.rows(), b.rows());
  Index cols = std::max(a.cols(), b.cols());
  auto fits = [&](const Tensor& t) {
    return (t.rows() == rows || t.rows() == 1) && (t.cols() == cols || t.cols() == 1);
  };
  if (!fits(a) || !fits(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  return {rows, cols};
}

}  // namespace

// ---- binary elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  auto [rows, cols] = binary_shape("add", a, b);
  Matrix av = broadcast_like("add", a.value(), rows, cols);
  Matrix bv = broadcast_like("add", b.value(), rows, cols);
  return make_op(av + bv, {a, b}, [](Node& self, const Matrix& up, const autograd::Push& push) {
    push(0, reduce_to(up, self.parents[0]->value.rows(), self.parents[0]->value.cols()));
    push(1, reduce_to(up, self.parents[1]->value.rows(), self.parents[1]->value.cols()));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  auto [rows, cols] = binary_shape("sub", a, b);
  Matrix av = broadcast_like("sub", a.value(), rows, cols);
  Matrix bv = broadcast_like("sub", b.value(), rows, cols);
  return make_op(av - bv, {a, b}, [](Node& self, const Matrix& up, const autograd::Push& push) {
    push(0, reduce_to(up, self.parents[0]->value.rows(), self.parents[0]->value.cols()));
    push(1, reduce_to(-up, self.parents[1]->value.rows(), self.parents[1]->value.cols()));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  auto [rows, cols] = binary_shape("mul", a, b);
  Matrix av = broadcast_like("mul", a.value(), rows, cols);
  Matrix bv = broadcast_like("mul", b.value(), rows, cols);
  return make_op((av.array() * bv.array()).matrix(), {a, b},
                 [rows = rows, cols = cols](Node& self, const Matrix& up, const autograd::Push& push) {
                   const Matrix& pa = self.parents[0]->value;
                   const Matrix& pb = self.parents[1]->value;
                   Matrix av = broadcast_like("mul", pa, rows, cols);
                   Matrix bv = broadcast_like("mul", pb, rows, cols);
                   push(0, reduce_to((up.array() * bv.array()).matrix(), pa.rows(), pa.cols()));
                   push(1, reduce_to((up.array() * av.array()).matrix(), pb.rows(), pb.cols()));
                 });
}

Tensor div(const Tensor& a, const Tensor& b) {
  auto [rows, cols] = binary_shape("div", a, b);
  Matrix av = broadcast_like("div", a.value(), rows, cols);
  Matrix bv = broadcast_like("div", b.value(), rows, cols);
  return make_op((av.array() / bv.array()).matrix(), {a, b},
                 [rows = rows, cols = cols](Node& self, const Matrix& up, const autograd::Push& push) {
                   const Matrix& pa = self.parents[0]->value;
                   const Matrix& pb = self.parents[1]->value;
                   Matrix av = broadcast_like("div", pa, rows, cols);
                   Matrix bv = broadcast_like("div", pb, rows, cols);
                   push(0, reduce_to((up.array() / bv.array()).matrix(), pa.rows(), pa.cols()));
                   push(1, reduce_to((-up.array() * av.array() / (bv.array() * bv.array())).matrix(),
                                     pb.rows(), pb.cols()));
                 });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  check_same_shape("minimum", a, b);
  return make_op(a.value().cwiseMin(b.value()), {a, b},
                 [](Node& self, const Matrix& up, const autograd::Push& push) {
                   const Matrix& av = self.parents[0]->value;
                   const Matrix& bv = self.parents[1]->value;
                   Matrix mask = (av.array() <= bv.array()).cast<double>().matrix();
                   push(0, (up.array() * mask.array()).matrix());
                   push(1, (up.array() * (1.0 - mask.array())).matrix());
                 });
}

// ---- matmul / structure ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  return make_op(a.value() * b.value(), {a, b},
                 [](Node& self, const Matrix& up, const autograd::Push& push) {
                   push(0, up * self.parents[1]->value.transpose());
                   push(1, self.parents[0]->value.transpose() * up);
                 });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  Index rows = parts[0].rows();
  Index cols = 0;
  for (const Tensor& t : parts) {
    if (t.rows() != rows)
      throw std::invalid_argument("concat_cols: shape mismatch " + shape_str(parts[0]) + " vs " + shape_str(t));
    cols += t.cols();
  }
  Matrix out(rows, cols);
  Index c = 0;
  std::vector<Tensor> inputs;
  std::vector<Index> widths;
  for (const Tensor& t : parts) {
    out.block(0, c, rows, t.cols()) = t.value();
    c += t.cols();
    inputs.push_back(t);
    widths.push_back(t.cols());
  }
  return make_op(std::move(out), std::move(inputs),
                 [widths](Node&, const Matrix& up, const autograd::Push& push) {
                   Index c = 0;
                   for (std::size_t i = 0; i < widths.size(); ++i) {
                     push(i, up.block(0, c, up.rows(), widths[i]));
                     c += widths[i];
                   }
                 });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  Index cols = parts[0].cols();
  Index rows = 0;
  for (const Tensor& t : parts) {
    if (t.cols() != cols)
      throw std::invalid_argument("concat_rows: shape mismatch " + shape_str(parts[0]) + " vs " + shape_str(t));
    rows += t.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  std::vector<Tensor> inputs;
  std::vector<Index> heights;
  for (const Tensor& t : parts) {
    out.block(r, 0, t.rows(), cols) = t.value();
    r += t.rows();
    inputs.push_back(t);
    heights.push_back(t.rows());
  }
  return make_op(std::move(out), std::move(inputs),
                 [heights](Node&, const Matrix& up, const autograd::Push& push) {
                   Index r = 0;
                   for (std::size_t i = 0; i < heights.size(); ++i) {
                     push(i, up.block(r, 0, heights[i], up.cols()));
                     r += heights[i];
                   }
                 });
}

Tensor slice(const Tensor& x, Index row0, Index nrows, Index col0, Index ncols) {
  if (row0 < 0 || col0 < 0 || row0 + nrows > x.rows() || col0 + ncols > x.cols())
    throw std::invalid_argument("slice: block out of range for " + shape_str(x));
  return make_op(x.value().block(row0, col0, nrows, ncols), {x},
                 [row0, nrows, col0, ncols](Node& self, const Matrix& up, const autograd::Push& push) {
                   Matrix g = Matrix::Zero(self.parents[0]->value.rows(), self.parents[0]->value.cols());
                   g.block(row0, col0, nrows, ncols) = up;
                   push(0, g);
                 });
}

Tensor slice_cols(const Tensor& x, Index col0, Index ncols) {
  return slice(x, 0, x.rows(), col0, ncols);
}

Tensor sum_all(const Tensor& x) {
  Matrix v(1, 1);
  v(0, 0) = x.value().sum();
  return make_op(std::move(v), {x}, [](Node& self, const Matrix& up, const autograd::Push& push) {
    const Matrix& p = self.parents[0]->value;
    push(0, Matrix::Constant(p.rows(), p.cols(), up(0, 0)));
  });
}

Tensor mean_all(const Tensor& x) {
  Matrix v(1, 1);
  v(0, 0) = x.value().mean();
  return make_op(std::move(v), {x}, [](Node& self, const Matrix& up, const autograd::Push& push) {
    const Matrix& p = self.parents[0]->value;
    push(0, Matrix::Constant(p.rows(), p.cols(), up(0, 0) / static_cast<double>(p.size())));
  });
}

Tensor sum_axis(const Tensor& x, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("sum_axis: axis must be 0 or 1");
  Matrix v = axis == 0 ? Matrix(x.value().colwise().sum()) : Matrix(x.value().rowwise().sum());
  return make_op(std::move(v), {x}, [axis](Node& self, const Matrix& up, const autograd::Push& push) {
    const Matrix& p = self.parents[0]->value;
    push(0, axis == 0 ? Matrix(up.replicate(p.rows(), 1)) : Matrix(up.replicate(1, p.cols())));
  });
}

Tensor mean_axis(const Tensor& x, int axis) {
  double n = axis == 0 ? static_cast<double>(x.rows()) : static_cast<double>(x.cols());
  return scale(sum_axis(x, axis), 1.0 / n);
}

Tensor broadcast_to(const Tensor& x, Index rows, Index cols) {
  Matrix v = broadcast_like("broadcast_to", x.value(), rows, cols);
  return make_op(std::move(v), {x}, [](Node& self, const Matrix& up, const autograd::Push& push) {
    const Matrix& p = self.parents[0]->value;
    push(0, reduce_to(up, p.rows(), p.cols()));
  });
}

// ---- elementwise unary ----

Tensor tanh(const Tensor& x) {
  return make_op(x.value().array().tanh().matrix(), {x},
                 [](Node& self, const Matrix& up, const autograd::Push& push) {
                   push(0, (up.array() * (1.0 - self.value.array() * self.value.array())).matrix());
                 });
}

Tensor sigmoid(const Tensor& x) {
  Matrix v = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  return make_op(std::move(v), {x}, [](Node& self, const Matrix& up, const autograd::Push& push) {
    push(0, (up.array() * self.value.array() * (1.0 - self.value.array())).matrix());
  });
}

Tensor relu(const Tensor& x) {
  return make_op(x.value().cwiseMax(0.0), {x},
                 [](Node& self, const Matrix& up, const autograd::Push& push) {
                   push(0, (up.array() * (self.parents[0]->value.array() > 0.0).cast<double>()).matrix());
                 });
}

Tensor exp(const Tensor& x) {
  return make_op(x.value().array().exp().matrix(), {x},
                 [](Node& self, const Matrix& up, const autograd::Push& push) {
                   push(0, (up.array() * self.value.array()).matrix());
                 });
}

Tensor log(const Tensor& x) {
  if ((x.value().array() <= 0.0).any())
    throw std::domain_error("log: non-positive input, min = " + std::to_string(x.value().minCoeff()));
  return make_op(x.value().array().log().matrix(), {x},
                 [](Node& self, const Matrix& up, const autograd::Push& push) {
                   push(0, (up.array() / self.parents[0]->value.array()).matrix());
                 });
}

Tensor sqrt(const Tensor& x) {
  if ((x.value().array() <= 0.0).any())
    throw std::domain_error("sqrt: non-positive input, min = " + std::to_string(x.value().minCoeff()));
  return make_op(x.value().array().sqrt().matrix(), {x},
                 [](Node& self, const Matrix& up, const autograd::Push& push) {
                   push(0, (up.array() * 0.5 / self.value.array()).matrix());
                 });
}

Tensor square(const Tensor& x) {
  return make_op((x.value().array() * x.value().array()).matrix(), {x},
                 [](Node& self, const Matrix& up, const autograd::Push& push) {
                   push(0, (up.array() * 2.0 * self.parents[0]->value.array()).matrix());
                 });
}

Tensor clip(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clip: lo > hi");
  return make_op(x.value().cwiseMax(lo).cwiseMin(hi), {x},
                 [lo, hi](Node& self, const Matrix& up, const autograd::Push& push) {
                   const auto& v = self.parents[0]->value.array();
                   Matrix mask = ((v >= lo) && (v <= hi)).cast<double>().matrix();
                   push(0, (up.array() * mask.array()).matrix());
                 });
}

Tensor scale(const Tensor& x, double s) {
  return make_op(x.value() * s, {x}, [s](Node&, const Matrix& up, const autograd::Push& push) {
    push(0, up * s);
  });
}

Tensor add_scalar(const Tensor& x, double s) {
  return make_op((x.value().array() + s).matrix(), {x},
                 [](Node&, const Matrix& up, const autograd::Push& push) { push(0, up); });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor softmax_rows(const Tensor& x) {
  Matrix v(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double m = x.value().row(r).maxCoeff();
    Eigen::ArrayXd e = (x.value().row(r).array() - m).exp();
    v.row(r) = (e / e.sum()).matrix();
  }
  return make_op(std::move(v), {x}, [](Node& self, const Matrix& up, const autograd::Push& push) {
    Matrix g(up.rows(), up.cols());
    for (Index r = 0; r < up.rows(); ++r) {
      double dot = (up.row(r).array() * self.value.row(r).array()).sum();
      g.row(r) = (self.value.row(r).array() * (up.row(r).array() - dot)).matrix();
    }
    push(0, g);
  });
}

Tensor logsumexp_rows(const Tensor& x) {
  Matrix v(x.rows(), 1);
  for (Index r = 0; r < x.rows(); ++r) {
    double m = x.value().row(r).maxCoeff();
    v(r, 0) = m + std::log((x.value().row(r).array() - m).exp().sum());
  }
  return make_op(std::move(v), {x}, [](Node& self, const Matrix& up, const autograd::Push& push) {
    const Matrix& p = self.parents[0]->value;
    Matrix g(p.rows(), p.cols());
    for (Index r = 0; r < p.rows(); ++r)
      g.row(r) = up(r, 0) * (p.row(r).array() - self.value(r, 0)).exp().matrix();
    push(0, g);
  });
}

// ---- backward ----

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined tensor");
  if (loss.rows() != 1 || loss.cols() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss));
  Node* root = loss.node().get();
  if (!root->requires_grad) return;  // constant loss: nothing reachable, all grads stay zero

  // iterative post-order over grad-requiring ancestry
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  seen.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  // Upstream gradients for interior nodes live in a scratch map; only leaves
  // accumulate into their persistent grad buffers (so repeated backward sums).
  std::unordered_map<Node*, Matrix> upstream;
  upstream[root] = Matrix::Constant(1, 1, 1.0);

  auto deposit = [&upstream](Node* n, const Matrix& contribution) {
    if (!n->requires_grad) return;
    if (n->is_leaf()) {
      if (n->grad.size() == 0) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
      n->grad += contribution;
    } else {
      auto it = upstream.find(n);
      if (it == upstream.end())
        upstream.emplace(n, contribution);
      else
        it->second += contribution;
    }
  };

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf()) continue;
    auto up_it = upstream.find(n);
    if (up_it == upstream.end()) continue;
    if (n == root && root->is_leaf()) continue;
    autograd::Push push = [&](std::size_t slot, const Matrix& contribution) {
      deposit(n->parents[slot].get(), contribution);
    };
    n->backward_fn(*n, up_it->second, push);
    upstream.erase(up_it);
  }

  if (root->is_leaf()) {
    // loss is itself a parameter leaf
    deposit(root, Matrix::Constant(1, 1, 1.0));
  }
}

// ---- Adam ----

void AdamState::apply(std::span<Tensor> params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = Matrix::Zero(params[i].rows(), params[i].cols());
      v_[i] = Matrix::Zero(params[i].rows(), params[i].cols());
    }
  }
  if (m_.size() != params.size())
    throw std::invalid_argument("adam: param count changed between steps");
  ++step_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.requires_grad()) continue;  // frozen param: untouched
    if (!p.has_grad()) throw std::runtime_error("adam: missing grad for parameter " + std::to_string(i));
    const Matrix& g = p.node()->grad;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = (cfg_.beta2 * v_[i].array() + (1.0 - cfg_.beta2) * g.array().square()).matrix();
    Eigen::ArrayXXd mhat = m_[i].array() / bc1;
    Eigen::ArrayXXd vhat = v_[i].array() / bc2;
    p.value().array() -= cfg_.learning_rate * mhat / (vhat.sqrt() + cfg_.epsilon);
    p.clear_grad();
  }
}

// ---- finite differences ----

FdReport finite_difference_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                                 double tol, double step, std::span<const std::string> names) {
  Tensor first = f();
  double v1 = first.item();
  double v2 = f().item();
  if (v1 != v2)
    throw std::runtime_error("finite_difference_check: f is non-deterministic (" +
                             std::to_string(v1) + " vs " + std::to_string(v2) + ")");

  for (Tensor& p : params) p.clear_grad();
  Tensor loss = f();
  backward(loss);

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params)
    analytic.push_back(p.has_grad() ? p.node()->grad : Matrix::Zero(p.rows(), p.cols()));

  auto eval = [&]() {
    autograd::NoGradGuard guard;
    return f().item();
  };

  FdReport report;
  report.max_rel_error = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& val = params[pi].value();
    for (Index i = 0; i < val.rows(); ++i) {
      for (Index j = 0; j < val.cols(); ++j) {
        double orig = val(i, j);
        val(i, j) = orig + step;
        double fp = eval();
        val(i, j) = orig - step;
        double fm = eval();
        val(i, j) = orig;
        double fd = (fp - fm) / (2.0 * step);
        double ad = analytic[pi](i, j);
        double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1.0});
        if (rel > report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_param = (pi < names.size() ? names[pi] : "param" + std::to_string(pi)) + "[" +
                               std::to_string(i) + "," + std::to_string(j) + "]";
        }
      }
    }
  }
  for (Tensor& p : params) p.clear_grad();
  report.pass = report.max_rel_error <= tol;
  return report;
}

}  // namespace copo
