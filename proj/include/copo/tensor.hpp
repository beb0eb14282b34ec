#pragma once

#include <Eigen/Dense>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace copo {

// Row-major dense storage; serialized buffers are the raw data in row order.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Tensor;

namespace autograd {

struct Node;

// Deposits a gradient contribution into parents[slot] during backward().
using Push = std::function<void(std::size_t slot, const Matrix& contribution)>;
using BackwardFn = std::function<void(Node& self, const Matrix& upstream, const Push& push)>;

struct Node {
  Matrix value;
  Matrix grad;  // persistent accumulator, leaves only
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward_fn;  // empty for leaves and constants

  bool is_leaf() const { return !backward_fn; }
};

// Scoped switch that stops ops from recording onto the tape. Used for
// rollouts and target computation, where gradients must not flow.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active();

 private:
  bool previous_;
};

}  // namespace autograd

// Shared handle to a node in the computation graph. Graphs are rebuilt on
// every forward pass and freed when the last handle goes out of scope.
// A graph and its tensors belong to one logical thread.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Matrix value);
  static Tensor param(Matrix value);  // leaf with requires_grad
  static Tensor scalar(double v);
  static Tensor zeros(Index rows, Index cols, bool requires_grad = false);
  static Tensor row(std::initializer_list<double> values);
  static Tensor row(const Eigen::VectorXd& values);

  bool defined() const { return node_ != nullptr; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }

  const Matrix& value() const { return node_->value; }
  Matrix& value() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() > 0; }
  const Matrix& grad() const;
  void zero_grad();
  void clear_grad() { node_->grad.resize(0, 0); }

  // New constant leaf with a copy of the current value.
  Tensor detach() const;

  std::shared_ptr<autograd::Node> node() const { return node_; }

  static Tensor from_node(std::shared_ptr<autograd::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<autograd::Node> node_;
};

std::string shape_str(const Tensor& t);

// ---- elementwise / structural ops (graph-recording free functions) ----

Tensor add(const Tensor& a, const Tensor& b);  // broadcasts 1x1, 1xN, Mx1 operands
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice(const Tensor& x, Index row0, Index nrows, Index col0, Index ncols);
Tensor slice_cols(const Tensor& x, Index col0, Index ncols);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis);   // axis 0 -> 1xN, axis 1 -> Mx1
Tensor mean_axis(const Tensor& x, int axis);
Tensor broadcast_to(const Tensor& x, Index rows, Index cols);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);     // domain error on input <= 0
Tensor sqrt(const Tensor& x);    // domain error on input <= 0
Tensor square(const Tensor& x);
Tensor clip(const Tensor& x, double lo, double hi);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);
Tensor softmax_rows(const Tensor& x);     // softmax over the last axis
Tensor logsumexp_rows(const Tensor& x);   // Mx1, max-shifted

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }

// Reverse-mode sweep from a scalar loss. Leaf grads accumulate across calls;
// call zero_grad (or let the optimizer clear them) between steps.
void backward(const Tensor& loss);

// ---- optimizer ----

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one Adam update to every param with a populated grad, then clears
  // grads. Params with requires_grad unset are skipped; a requires_grad param
  // with no grad is an error.
  void apply(std::span<Tensor> params);

  std::int64_t step_count() const { return step_; }
  AdamConfig& config() { return cfg_; }
  const std::vector<Matrix>& first_moment() const { return m_; }
  const std::vector<Matrix>& second_moment() const { return v_; }
  std::vector<Matrix>& first_moment() { return m_; }
  std::vector<Matrix>& second_moment() { return v_; }
  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<Matrix> m_, v_;
};

// ---- gradient verification ----

struct FdReport {
  double max_rel_error = 0.0;
  bool pass = false;
  std::string worst_param;
};

// Compares reverse-mode gradients of f against central finite differences,
// perturbing every coordinate of every param. f must be deterministic; two
// evaluations that disagree raise an error.
FdReport finite_difference_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                                 double tol, double step = 1e-6,
                                 std::span<const std::string> names = {});

}  // namespace copo
