#include "doctest.h"

#include <cmath>
#include <random>

#include "daml/autodiff.hpp"
#include "daml/grad_check.hpp"
#include "daml/parameters.hpp"

using namespace daml;
using Mat = Matrix<double>;
using T = Tensor<double>;

namespace {

Mat random_mat(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Mat m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

ParameterSet<double> params_of(std::initializer_list<std::pair<const char*, Mat>> items) {
  ParameterSet<double> p;
  for (const auto& [n, m] : items) p.add(n, m);
  return p;
}

}  // namespace

TEST_CASE("softmax of zeros is uniform") {
  Graph<double> g;
  auto y = softmax(g.constant(Mat::Zero(1, 4)));
  for (Index j = 0; j < 4; ++j) CHECK(y.value()(0, j) == doctest::Approx(0.25));
}

TEST_CASE("sigmoid at zero") {
  Graph<double> g;
  CHECK(sigmoid(g.constant(Mat::Zero(1, 1))).item() == doctest::Approx(0.5));
}

TEST_CASE("matmul shape error names both shapes") {
  Graph<double> g;
  auto a = g.constant(Mat::Zero(2, 3));
  auto b = g.constant(Mat::Zero(4, 2));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("x*x at 3 has gradient 6") {
  Graph<double> g;
  auto x = g.variable(Mat::Constant(1, 1, 3.0));
  g.backward(mul(x, x));
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("sum of softmax has zero gradient") {
  std::mt19937_64 rng(1);
  Graph<double> g;
  auto x = g.variable(random_mat(3, 5, rng));
  g.backward(sum(softmax(x)));
  CHECK(x.grad().cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backward requires a scalar loss") {
  Graph<double> g;
  auto x = g.variable(Mat::Ones(2, 2));
  CHECK_THROWS_AS(g.backward(x), ContractError);
}

TEST_CASE("non-finite forward value is reported with node id") {
  Graph<double> g;
  auto x = g.constant(Mat::Constant(1, 1, 1000.0));
  CHECK_THROWS_AS(exp(x), NumericError);
}

TEST_CASE("dropout is identity in evaluation mode") {
  std::mt19937_64 rng(3);
  Graph<double> g(false);
  auto x = g.constant(random_mat(2, 3, rng));
  const Mat mask = sample_dropout_mask<double>(2, 3, 0.5, rng);
  auto y = dropout(x, mask);
  CHECK(y.value() == x.value());
}

TEST_CASE("dropout applies the sampled mask in training mode") {
  std::mt19937_64 rng(4);
  Graph<double> g(true);
  auto x = g.variable(Mat::Ones(4, 8));
  const Mat mask = sample_dropout_mask<double>(4, 8, 0.25, rng);
  auto y = dropout(x, mask);
  CHECK(y.value() == mask);
  g.backward(sum(y));
  CHECK(x.grad() == mask);
}

TEST_CASE("gradient accumulates additively across uses") {
  Graph<double> g;
  auto x = g.variable(Mat::Constant(1, 1, 2.0));
  auto y = add(mul(x, x), affine(x, 3.0, 1.0));  // x^2 + 3x + 1
  g.backward(y);
  CHECK(x.grad()(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("parameter leaves accumulate into external sinks") {
  Mat w = Mat::Constant(1, 1, 2.0);
  Mat sink = Mat::Zero(1, 1);
  Graph<double> g;
  auto p = g.parameter(w, &sink);
  g.backward(mul(p, p));
  g.backward(mul(p, p));
  CHECK(sink(0, 0) == doctest::Approx(8.0));
}

TEST_CASE("GRU cell matches central differences") {
  std::mt19937_64 rng(11);
  const Index m = 3, e = 4, h = 5;
  auto params = params_of({{"x", random_mat(m, e, rng)},
                           {"h", random_mat(m, h, rng)},
                           {"w_in", random_mat(e, 3 * h, rng, 0.5)},
                           {"w_h", random_mat(h, 3 * h, rng, 0.5)},
                           {"b_in", random_mat(1, 3 * h, rng, 0.1)},
                           {"b_h", random_mat(1, 3 * h, rng, 0.1)},
                           {"probe", random_mat(m, h, rng)}});
  const double err = grad_check(
      [](Graph<double>&, std::vector<T>& p) {
        auto proj = add(matmul(p[0], p[2]), p[4]);
        auto h1 = gru_cell(proj, p[1], p[3], p[5]);
        auto h2 = gru_cell(proj, h1, p[3], p[5]);
        return sum(mul(h2, p[6]));
      },
      params, 1e-4);
  CHECK(err < 1e-3);
}

TEST_CASE("GRU cell reference formula") {
  std::mt19937_64 rng(12);
  const Index h = 3;
  const Mat x = random_mat(1, 3 * h, rng);
  const Mat prev = random_mat(1, h, rng);
  const Mat wh = random_mat(h, 3 * h, rng);
  const Mat bh = random_mat(1, 3 * h, rng);
  Graph<double> g;
  auto out = gru_cell(g.constant(x), g.constant(prev), g.constant(wh), g.constant(bh));
  const Mat gh = prev * wh + bh;
  for (Index j = 0; j < h; ++j) {
    const double r = 1.0 / (1.0 + std::exp(-(x(0, j) + gh(0, j))));
    const double z = 1.0 / (1.0 + std::exp(-(x(0, h + j) + gh(0, h + j))));
    const double n = std::tanh(x(0, 2 * h + j) + r * gh(0, 2 * h + j));
    CHECK(out.value()(0, j) == doctest::Approx((1 - z) * n + z * prev(0, j)).epsilon(1e-12));
  }
}

TEST_CASE("additive attention scores match central differences and the reference") {
  std::mt19937_64 rng(13);
  auto params = params_of({{"keys", random_mat(4, 3, rng)},
                           {"queries", random_mat(2, 3, rng)},
                           {"v", random_mat(3, 1, rng)},
                           {"probe", random_mat(2, 4, rng)}});
  Graph<double> g;
  auto s = additive_scores(g.constant(params[0]), g.constant(params[1]), g.constant(params[2]));
  for (Index i = 0; i < 2; ++i) {
    for (Index j = 0; j < 4; ++j) {
      double ref = 0;
      for (Index a = 0; a < 3; ++a) ref += params[2](a, 0) * std::tanh(params[0](j, a) + params[1](i, a));
      CHECK(s.value()(i, j) == doctest::Approx(ref).epsilon(1e-12));
    }
  }
  const double err = grad_check(
      [](Graph<double>&, std::vector<T>& p) { return sum(mul(softmax(additive_scores(p[0], p[1], p[2])), p[3])); },
      params, 1e-4);
  CHECK(err < 1e-3);
}

TEST_CASE("composite op chain matches central differences") {
  std::mt19937_64 rng(14);
  auto params = params_of({{"a", random_mat(3, 4, rng)},
                           {"b", random_mat(4, 2, rng)},
                           {"row", random_mat(1, 2, rng)},
                           {"col", random_mat(3, 1, rng)},
                           {"s", random_mat(1, 1, rng)},
                           {"table", random_mat(5, 2, rng)}});
  const double err = grad_check(
      [](Graph<double>&, std::vector<T>& p) {
        const int ids[] = {4, 0, 4};
        auto x = matmul(p[0], p[1]);                     // 3x2
        auto y = add(tanh(x), p[2]);                     // row broadcast
        auto z = mul(sigmoid(y), p[3]);                  // col broadcast
        auto w = div(z, add(exp(p[4]), p[4]));           // scalar broadcast
        auto e = gather_rows(p[5], ids);                 // 3x2
        auto c = concat_cols(w, e);                      // 3x4
        auto r = concat_rows(slice_rows(c, 0, 2), transpose(slice_cols(transpose(c), 1, 2)));  // 4x4
        auto q = softmax(r);
        auto lp = log(row_sum(affine(q, 2.0, 0.5)), 1e-12);
        const int pick[] = {1, 0, 2, 3};
        auto gc = gather_cols(q, pick);
        const int dest[] = {3, 0, 5, 1};
        auto sc = scatter_cols(q, dest, 6);
        return add(sum(lp), add(sum(log(gc, 1e-12)), sum(mul(sc, sc))));
      },
      params, 1e-5);
  CHECK(err < 1e-3);
}

TEST_CASE("log floor blocks the gradient below the floor") {
  Graph<double> g;
  auto x = g.variable(Mat::Constant(1, 1, 1e-20));
  auto y = log(x, 1e-12);
  CHECK(y.item() == doctest::Approx(std::log(1e-12)));
  g.backward(y);
  CHECK(x.grad()(0, 0) == 0.0);
}

TEST_CASE("grad_check rejects eps outside (0, 1e-2]") {
  auto p = params_of({{"w", Mat::Ones(1, 1)}});
  auto f = [](Graph<double>&, std::vector<T>& v) { return sum(v[0]); };
  CHECK_THROWS_AS(grad_check(f, p, 0.0), ContractError);
  CHECK_THROWS_AS(grad_check(f, p, 0.1), ContractError);
}

TEST_CASE("sgd_step is functional") {
  auto p = params_of({{"w", Mat::Constant(1, 1, 2.0)}, {"v", Mat::Ones(2, 2)}});
  auto g = p.zeros_like();
  g["w"](0, 0) = 1.0;
  auto q = sgd_step(p, g, 0.1);
  CHECK(q["w"](0, 0) == doctest::Approx(1.9));
  CHECK(p["w"](0, 0) == 2.0);
  CHECK(q.names() == p.names());
  CHECK(sgd_step(p, g, 0.0) == p);
}

TEST_CASE("sgd_step and adam_step reject missing gradients") {
  auto p = params_of({{"w", Mat::Ones(1, 1)}, {"v", Mat::Ones(1, 1)}});
  auto g = params_of({{"w", Mat::Ones(1, 1)}});
  CHECK_THROWS_AS(sgd_step(p, g, 0.1), ContractError);
  auto state = AdamState<double>::init(p, 0.003);
  CHECK_THROWS_AS(adam_step(state, p, g), ContractError);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  auto p = params_of({{"w", Mat::Constant(2, 2, 0.7)}});
  auto g = p.zeros_like();
  auto state = AdamState<double>::init(p, 0.003);
  const auto before = p;
  adam_step(state, p, g);
  CHECK(p == before);
}

TEST_CASE("adam descends on w^2 and clears gradients") {
  auto p = params_of({{"w", Mat::Ones(1, 1)}});
  auto g = p.zeros_like();
  g["w"](0, 0) = 2.0;
  auto state = AdamState<double>::init(p, 0.003);
  adam_step(state, p, g);
  CHECK(p["w"](0, 0) < 1.0);
  CHECK(g["w"](0, 0) == 0.0);
  CHECK(state.step == 1);
}

TEST_CASE("adam matches a scalar hand simulation over ten steps") {
  // f(w) = 0.5 * a * (w - c)^2
  const double a = 3.0, c = 0.5, lr = 0.05;
  auto p = params_of({{"w", Mat::Constant(1, 1, 2.0)}});
  auto g = p.zeros_like();
  auto state = AdamState<double>::init(p, lr);

  double w = 2.0, m = 0.0, v = 0.0;
  std::vector<double> losses;
  for (int t = 1; t <= 10; ++t) {
    const double grad = a * (w - c);
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    w -= lr * mh / (std::sqrt(vh) + 1e-8);

    g["w"](0, 0) = a * (p["w"](0, 0) - c);
    adam_step(state, p, g);
    CHECK(p["w"](0, 0) == doctest::Approx(w).epsilon(1e-12));
    losses.push_back(0.5 * a * (w - c) * (w - c));
  }
  for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] < losses[i - 1]);
}
