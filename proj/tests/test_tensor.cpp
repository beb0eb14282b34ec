#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "copo/rng.hpp"
#include "copo/tensor.hpp"
#include "doctest.h"

using namespace copo;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = uniform(rng, lo, hi);
  return m;
}

}  // namespace

TEST_CASE("matmul identity returns the input") {
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  Tensor x = Tensor::constant(a);
  Tensor i = Tensor::constant(Matrix::Identity(2, 2));
  Tensor y = matmul(x, i);
  CHECK(y.value() == a);
}

TEST_CASE("softmax of a constant row is uniform") {
  Tensor x = Tensor::row({0, 0, 0, 0});
  Tensor y = softmax_rows(x);
  for (Index j = 0; j < 4; ++j) CHECK(y.value()(0, j) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("tanh at zero has value 0 and gradient 1") {
  Tensor x = Tensor::param(Matrix::Zero(1, 1));
  Tensor y = tanh(x);
  CHECK(y.item() == 0.0);
  backward(sum_all(y));
  CHECK(x.grad()(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("shape mismatch errors name both shapes") {
  Tensor a = Tensor::zeros(2, 3);
  Tensor b = Tensor::zeros(4, 3);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("(2x3)"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("(4x3)"), std::invalid_argument);
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("log and sqrt reject non-positive input") {
  Tensor x = Tensor::row({1.0, 0.0});
  CHECK_THROWS_AS(log(x), std::domain_error);
  CHECK_THROWS_AS(sqrt(x), std::domain_error);
  Tensor neg = Tensor::row({-1.0});
  CHECK_THROWS_AS(log(neg), std::domain_error);
  CHECK_THROWS_AS(sqrt(neg), std::domain_error);
}

TEST_CASE("backward of sum(x*x) gives 2x") {
  Matrix v(1, 3);
  v << 1, 2, 3;
  Tensor x = Tensor::param(v);
  backward(sum_all(mul(x, x)));
  Matrix expect(1, 3);
  expect << 2, 4, 6;
  CHECK(x.grad() == expect);
}

TEST_CASE("constant loss leaves all grads zero") {
  Tensor x = Tensor::param(Matrix::Ones(1, 3));
  Tensor loss = Tensor::scalar(5.0);
  backward(loss);
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("repeated backward accumulates into leaf grads") {
  Tensor x = Tensor::param(Matrix::Ones(1, 2) * 3.0);
  Tensor loss = sum_all(mul(x, x));
  backward(loss);
  backward(loss);
  CHECK(x.grad()(0, 0) == doctest::Approx(12.0));  // 2 * (2x)
  x.zero_grad();
  backward(loss);
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::param(Matrix::Ones(2, 2));
  CHECK_THROWS_AS(backward(mul(x, x)), std::invalid_argument);
}

TEST_CASE("softmax cross-entropy gradient matches finite differences") {
  Rng rng = make_stream(7, "ce");
  Tensor x = Tensor::param(random_matrix(1, 3, rng));
  Matrix onehot = Matrix::Zero(1, 3);
  onehot(0, 1) = 1.0;
  auto f = [&] { return neg(sum_all(mul(Tensor::constant(onehot), log(softmax_rows(x))))); };
  std::vector<Tensor> params{x};
  FdReport rep = finite_difference_check(f, params, 1e-5);
  CHECK(rep.pass);
  CHECK(rep.max_rel_error < 1e-5);
}

TEST_CASE("adam first step moves a unit-gradient param by about -lr") {
  Tensor p = Tensor::param(Matrix::Ones(1, 1));
  Tensor q = Tensor::param(Matrix::Ones(1, 1) * 2.0);  // frozen: never touched by a loss
  q.node()->requires_grad = false;
  backward(sum_all(p));  // gradient exactly 1
  AdamState adam({3e-4});
  std::vector<Tensor> params{p, q};
  adam.apply(params);
  CHECK(p.value()(0, 0) == doctest::Approx(1.0 - 3e-4).epsilon(1e-9));
  CHECK(q.value()(0, 0) == 2.0);
  CHECK(adam.step_count() == 1);
  CHECK_FALSE(p.has_grad());  // grads cleared after the step
}

TEST_CASE("adam leaves a zero-gradient param unchanged") {
  Tensor p = Tensor::param(Matrix::Ones(1, 2) * 5.0);
  p.zero_grad();
  AdamState adam({1e-3});
  std::vector<Tensor> params{p};
  adam.apply(params);
  CHECK(p.value()(0, 0) == 5.0);
  CHECK(p.value()(0, 1) == 5.0);
}

TEST_CASE("adam errors on a missing grad") {
  Tensor p = Tensor::param(Matrix::Ones(1, 1));
  AdamState adam;
  std::vector<Tensor> params{p};
  CHECK_THROWS_AS(adam.apply(params), std::runtime_error);
}

TEST_CASE("finite_difference_check on a quadratic form is exact to 1e-7") {
  Rng rng = make_stream(11, "quad");
  Matrix a = random_matrix(3, 3, rng);
  Matrix sym = a + a.transpose();
  Tensor x = Tensor::param(random_matrix(1, 3, rng));
  Tensor q = Tensor::constant(sym);
  auto f = [&] { return sum_all(mul(matmul(x, q), x)); };  // x Q . x elementwise sum = x Q x^T
  std::vector<Tensor> params{x};
  FdReport rep = finite_difference_check(f, params, 1e-7);
  CHECK(rep.pass);
  // analytic oracle: grad = x (Q + Q^T)
  backward(f());
  Matrix expect = x.value() * (sym + sym.transpose());
  for (Index j = 0; j < 3; ++j) CHECK(x.grad()(0, j) == doctest::Approx(expect(0, j)).epsilon(1e-10));
}

TEST_CASE("finite_difference_check through a tanh/softmax chain passes at 1e-5") {
  Rng rng = make_stream(13, "chain");
  Tensor w = Tensor::param(random_matrix(4, 3, rng));
  Tensor x = Tensor::constant(random_matrix(2, 4, rng));
  auto f = [&] { return mean_all(softmax_rows(tanh(matmul(x, w)))); };
  std::vector<Tensor> params{w};
  FdReport rep = finite_difference_check(f, params, 1e-5);
  CHECK(rep.pass);
}

TEST_CASE("finite_difference_check accepts a constant function") {
  Tensor p = Tensor::param(Matrix::Ones(1, 2));
  auto f = [&] { return Tensor::scalar(3.0); };
  std::vector<Tensor> params{p};
  FdReport rep = finite_difference_check(f, params, 1e-7);
  CHECK(rep.pass);
  CHECK(rep.max_rel_error == 0.0);
}

TEST_CASE("finite_difference_check rejects a non-deterministic function") {
  Rng rng = make_stream(17, "nondet");
  Tensor p = Tensor::param(Matrix::Ones(1, 1));
  auto f = [&] { return scale(sum_all(p), uniform01(rng)); };
  std::vector<Tensor> params{p};
  CHECK_THROWS_AS(finite_difference_check(f, params, 1e-5), std::runtime_error);
}

TEST_CASE("every op's gradient matches central finite differences on random inputs") {
  Rng rng = make_stream(23, "fuzz");
  int cases = 0;
  auto fd = [&](const std::function<Tensor()>& f, std::vector<Tensor> params) {
    FdReport rep = finite_difference_check(f, params, 1e-5);
    INFO("worst param ", rep.worst_param, " rel err ", rep.max_rel_error);
    CHECK(rep.pass);
    ++cases;
  };

  for (int rep = 0; rep < 8; ++rep) {
    Tensor a = Tensor::param(random_matrix(2, 3, rng));
    Tensor b = Tensor::param(random_matrix(2, 3, rng));
    Tensor brow = Tensor::param(random_matrix(1, 3, rng));
    Tensor bcol = Tensor::param(random_matrix(2, 1, rng));
    Tensor pos = Tensor::param(random_matrix(2, 3, rng, 0.5, 2.0));
    Tensor den = Tensor::param(random_matrix(2, 3, rng, 1.0, 2.0));
    Tensor m1 = Tensor::param(random_matrix(2, 4, rng));
    Tensor m2 = Tensor::param(random_matrix(4, 3, rng));

    fd([&] { return mean_all(add(a, b)); }, {a, b});
    fd([&] { return mean_all(add(a, brow)); }, {a, brow});  // row broadcast
    fd([&] { return mean_all(sub(a, bcol)); }, {a, bcol});  // col broadcast
    fd([&] { return mean_all(mul(a, b)); }, {a, b});
    fd([&] { return mean_all(div(a, den)); }, {a, den});
    fd([&] { return mean_all(matmul(m1, m2)); }, {m1, m2});
    fd([&] { return mean_all(concat_cols(std::vector<Tensor>{a, b})); }, {a, b});
    fd([&] { return mean_all(concat_rows(std::vector<Tensor>{a, b})); }, {a, b});
    fd([&] { return mean_all(slice(a, 0, 1, 1, 2)); }, {a});
    fd([&] { return sum_all(a); }, {a});
    fd([&] { return mean_all(sum_axis(a, 0)); }, {a});
    fd([&] { return mean_all(sum_axis(a, 1)); }, {a});
    fd([&] { return mean_all(mean_axis(a, 0)); }, {a});
    fd([&] { return mean_all(broadcast_to(brow, 4, 3)); }, {brow});
    fd([&] { return mean_all(tanh(a)); }, {a});
    fd([&] { return mean_all(sigmoid(a)); }, {a});
    fd([&] { return mean_all(exp(a)); }, {a});
    fd([&] { return mean_all(log(pos)); }, {pos});
    fd([&] { return mean_all(sqrt(pos)); }, {pos});
    fd([&] { return mean_all(square(a)); }, {a});
    fd([&] { return mean_all(clip(a, -0.45, 0.45)); }, {a});
    fd([&] { return mean_all(scale(a, 1.7)); }, {a});
    fd([&] { return mean_all(softmax_rows(a)); }, {a});
    fd([&] { return mean_all(logsumexp_rows(a)); }, {a});
    fd([&] { return mean_all(minimum(a, b)); }, {a, b});
    // relu away from the kink
    Tensor off = Tensor::param((random_matrix(2, 3, rng).array() + 2.0).matrix());
    fd([&] { return mean_all(relu(off)); }, {off});
  }
  CHECK(cases >= 100);
}

TEST_CASE("softmax output is a simplex") {
  Rng rng = make_stream(29, "simplex");
  for (int i = 0; i < 200; ++i) {
    Tensor x = Tensor::constant(random_matrix(3, 5, rng, -30.0, 30.0));
    Matrix y = softmax_rows(x).value();
    CHECK((y.array() >= 0.0).all());
    for (Index r = 0; r < 3; ++r) CHECK(std::abs(y.row(r).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("ops are deterministic for identical inputs") {
  Rng rng = make_stream(31, "det");
  Matrix v = random_matrix(3, 3, rng);
  Tensor x1 = Tensor::constant(v);
  Tensor x2 = Tensor::constant(v);
  CHECK(softmax_rows(tanh(x1)).value() == softmax_rows(tanh(x2)).value());
}

TEST_CASE("no-grad guard stops tape recording") {
  Tensor x = Tensor::param(Matrix::Ones(1, 2));
  {
    autograd::NoGradGuard guard;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor y = mul(x, x);
  CHECK(y.requires_grad());
}

TEST_CASE("detach produces a constant leaf sharing the value") {
  Tensor x = Tensor::param(Matrix::Ones(2, 2) * 3.0);
  Tensor d = x.detach();
  CHECK_FALSE(d.requires_grad());
  CHECK(d.value() == x.value());
  backward(sum_all(mul(d, d)));  // nothing reachable
  CHECK_FALSE(x.has_grad());
}
