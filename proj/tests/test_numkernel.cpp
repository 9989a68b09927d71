#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "scafds/optim.hpp"
#include "scafds/rng.hpp"
#include "scafds/tensor.hpp"

using scafds::Rng;
using scafds::num::finite_diff_check;
using scafds::num::Shape;
using scafds::num::Tape;
using scafds::num::Var;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// FD-checks the gradient of sum(build(tape, leaves)) w.r.t. every leaf.
void check_op(const char* name,
              const std::vector<Shape>& shapes,
              const std::function<Var(Tape&, std::vector<Var>&)>& build,
              double lo = -1.0, double hi = 1.0) {
  CAPTURE(name);
  Rng rng(0x5eed + std::hash<std::string>{}(name));
  Tape tape;
  std::vector<Var> leaves;
  for (Shape s : shapes)
    leaves.push_back(tape.leaf(s, random_values(static_cast<std::size_t>(s.count()), rng, lo, hi), true));
  Var out = build(tape, leaves);
  Var loss = tape.at(out).shape == Shape{1, 1} ? out : tape.sum(out);
  auto report = finite_diff_check(tape, loss, leaves, 1e-5, 1e-6);
  CHECK(report.passed);
  CHECK(report.max_rel_err < 1e-6);
}

}  // namespace

TEST_CASE("matmul hand-computed values") {
  Tape t;
  Var a = t.constant({2, 2}, {1, 2, 3, 4});
  Var b = t.constant({2, 1}, {5, 6});
  Var c = t.matmul(a, b);
  CHECK(t.at(c).values[0] == doctest::Approx(17).epsilon(1e-15));
  CHECK(t.at(c).values[1] == doctest::Approx(39).epsilon(1e-15));

  Var eye = t.constant({2, 2}, {1, 0, 0, 1});
  Var d = t.matmul(eye, a);
  for (int i = 0; i < 4; ++i) CHECK(t.at(d).values[i] == t.at(a).values[i]);

  Var bad = t.constant({3, 1}, {1, 2, 3});
  CHECK_THROWS_AS((void)t.matmul(a, bad), scafds::ShapeError);
}

TEST_CASE("softmax values and stability") {
  Tape t;
  Var x = t.constant({1, 3}, {1, 2, 3});
  Var y = t.softmax_rows(x);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(t.at(y).values[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
  CHECK(t.at(y).values[1] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
  CHECK(t.at(y).values[2] == doctest::Approx(std::exp(3.0) / z).epsilon(1e-12));

  Var single = t.constant({1, 1}, {42.0});
  CHECK(t.at(t.softmax_rows(single)).values[0] == doctest::Approx(1.0).epsilon(1e-15));

  // Large magnitudes must not overflow; output stays a simplex.
  Var big = t.constant({1, 3}, {1000.0, 1001.0, 999.0});
  Var yb = t.softmax_rows(big);
  double s = 0.0;
  for (double v : t.at(yb).values) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
    s += v;
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("leaky_relu values") {
  Tape t;
  Var x = t.constant({1, 2}, {-1.0, 2.0});
  Var y = t.leaky_relu(x, 0.2);
  CHECK(t.at(y).values[0] == doctest::Approx(-0.2).epsilon(1e-15));
  CHECK(t.at(y).values[1] == doctest::Approx(2.0).epsilon(1e-15));
  Var r = t.leaky_relu(x, 0.0);
  CHECK(t.at(r).values[0] == 0.0);
  CHECK(t.at(r).values[1] == 2.0);
}

TEST_CASE("sigmoid values") {
  Tape t;
  Var x = t.constant({3, 1}, {0.0, 1.0, 50.0});
  Var y = t.sigmoid(x);
  CHECK(t.at(y).values[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(t.at(y).values[1] == doctest::Approx(0.7310585786).epsilon(1e-9));
  CHECK(std::abs(t.at(y).values[2] - 1.0) < 1e-12);
}

TEST_CASE("finite differences on x^2 and on a constant") {
  Tape t;
  Var x = t.leaf({1, 1}, {3.0}, true);
  Var y = t.mul(x, x);
  auto report = finite_diff_check(t, y, std::vector<Var>{x}, 1e-5, 1e-6);
  CHECK(report.passed);
  t.zero_grad();
  t.backward(y);
  CHECK(t.at(x).grad[0] == doctest::Approx(6.0).epsilon(1e-12));

  Tape t2;
  Var x2 = t2.leaf({1, 1}, {3.0}, true);
  Var c = t2.mul(x2, t2.constant_scalar(0.0));
  auto r2 = finite_diff_check(t2, c, std::vector<Var>{x2}, 1e-5, 1e-6);
  CHECK(r2.passed);
  t2.zero_grad();
  t2.backward(c);
  CHECK(t2.at(x2).grad[0] == 0.0);
}

TEST_CASE("finite-difference battery across every operation") {
  check_op("add", {{3, 2}, {3, 2}},
           [](Tape& t, std::vector<Var>& l) { return t.add(l[0], l[1]); });
  check_op("sub", {{3, 2}, {3, 2}},
           [](Tape& t, std::vector<Var>& l) { return t.sub(l[0], l[1]); });
  check_op("mul", {{3, 2}, {3, 2}},
           [](Tape& t, std::vector<Var>& l) { return t.mul(l[0], l[1]); });
  check_op("neg", {{3, 2}}, [](Tape& t, std::vector<Var>& l) { return t.neg(l[0]); });
  check_op("scale", {{3, 2}},
           [](Tape& t, std::vector<Var>& l) { return t.scale(l[0], -1.7); });
  check_op("add_const", {{3, 2}},
           [](Tape& t, std::vector<Var>& l) { return t.add_const(l[0], 0.3); });
  check_op("matmul", {{3, 4}, {4, 2}},
           [](Tape& t, std::vector<Var>& l) { return t.matmul(l[0], l[1]); });
  check_op("transpose", {{3, 4}},
           [](Tape& t, std::vector<Var>& l) { return t.transpose(l[0]); });
  check_op("sigmoid", {{3, 2}}, [](Tape& t, std::vector<Var>& l) { return t.sigmoid(l[0]); });
  check_op("tanh", {{3, 2}}, [](Tape& t, std::vector<Var>& l) { return t.tanh(l[0]); });
  check_op("elu", {{3, 2}}, [](Tape& t, std::vector<Var>& l) { return t.elu(l[0]); });
  check_op("leaky_relu", {{3, 2}},
           [](Tape& t, std::vector<Var>& l) { return t.leaky_relu(l[0], 0.2); });
  check_op("exp", {{3, 2}}, [](Tape& t, std::vector<Var>& l) { return t.exp(l[0]); });
  check_op("log", {{3, 2}}, [](Tape& t, std::vector<Var>& l) { return t.log(l[0]); }, 0.5, 2.0);
  check_op("pow_const", {{3, 2}},
           [](Tape& t, std::vector<Var>& l) { return t.pow_const(l[0], 2.0); }, 0.5, 2.0);
  check_op("sum", {{3, 2}}, [](Tape& t, std::vector<Var>& l) { return t.sum(l[0]); });
  check_op("mean", {{3, 2}}, [](Tape& t, std::vector<Var>& l) { return t.mean(l[0]); });
  check_op("softmax_rows", {{3, 4}}, [](Tape& t, std::vector<Var>& l) {
    return t.mul(t.softmax_rows(l[0]), t.constant({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}));
  });
  check_op("softmax_cols", {{4, 2}}, [](Tape& t, std::vector<Var>& l) {
    return t.mul(t.softmax_cols(l[0]), t.constant({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
  });
  check_op("gather_rows", {{5, 3}}, [](Tape& t, std::vector<Var>& l) {
    return t.gather_rows(l[0], {4, 0, 2, 2});
  });
  check_op("segment_sum", {{5, 3}}, [](Tape& t, std::vector<Var>& l) {
    return t.segment_sum(l[0], {0, 1, 0, 2, 1}, 3);
  });
  check_op("segment_softmax", {{6, 1}}, [](Tape& t, std::vector<Var>& l) {
    Var sm = t.segment_softmax(l[0], {0, 0, 1, 1, 1, 2}, 3);
    return t.mul(sm, t.constant({6, 1}, {1, 2, 3, 4, 5, 6}));
  });
  check_op("segment_mix", {{4, 3}, {5, 1}}, [](Tape& t, std::vector<Var>& l) {
    return t.segment_mix(l[0], l[1], {0, 1, 2, 3, 1}, {0, 0, 1, 2, 2}, 3);
  });
  check_op("scale_rows", {{4, 3}, {4, 1}},
           [](Tape& t, std::vector<Var>& l) { return t.scale_rows(l[0], l[1]); });
  check_op("add_row_vec", {{4, 3}, {1, 3}},
           [](Tape& t, std::vector<Var>& l) { return t.add_row_vec(l[0], l[1]); });
  check_op("concat_cols", {{3, 2}, {3, 1}, {3, 3}}, [](Tape& t, std::vector<Var>& l) {
    return t.concat_cols(std::vector<Var>{l[0], l[1], l[2]});
  });
  check_op("slice_rows", {{5, 3}},
           [](Tape& t, std::vector<Var>& l) { return t.slice_rows(l[0], 1, 4); });
  check_op("slice_cols", {{3, 5}},
           [](Tape& t, std::vector<Var>& l) { return t.slice_cols(l[0], 2, 5); });
  check_op("row_dot", {{4, 3}, {4, 3}},
           [](Tape& t, std::vector<Var>& l) { return t.row_dot(l[0], l[1]); });
  check_op("clamp_min_inactive", {{3, 2}},
           [](Tape& t, std::vector<Var>& l) { return t.clamp_min(l[0], -5.0); });
}

TEST_CASE("replay reproduces forward values bit-exactly") {
  Rng rng(11);
  Tape t;
  Var x = t.leaf({4, 3}, random_values(12, rng), true);
  Var w = t.leaf({3, 2}, random_values(6, rng), true);
  Var y = t.sigmoid(t.matmul(t.tanh(x), w));
  Var loss = t.mean(y);
  const std::vector<double> y0 = t.at(y).values;
  const double l0 = t.scalar(loss);
  t.replay();
  CHECK(t.at(y).values == y0);
  CHECK(t.scalar(loss) == l0);

  // Mutating a leaf and replaying recomputes downstream values from leaves alone.
  auto vals = t.at(x).values;
  vals[0] += 0.5;
  t.fill(x, vals);
  t.replay();
  CHECK(t.scalar(loss) != l0);
  vals[0] -= 0.5;
  t.fill(x, vals);
  t.replay();
  CHECK(t.scalar(loss) == l0);
  CHECK(t.at(y).values == y0);
}

TEST_CASE("leaf gradients accumulate until zeroed") {
  Tape t;
  Var x = t.leaf({1, 1}, {2.0}, true);
  Var y = t.mul(x, x);
  t.backward(y);
  CHECK(t.at(x).grad[0] == doctest::Approx(4.0));
  t.backward(y);
  CHECK(t.at(x).grad[0] == doctest::Approx(8.0));
  t.zero_grad();
  t.backward(y);
  CHECK(t.at(x).grad[0] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar and non-differentiable losses") {
  Tape t;
  Var x = t.leaf({2, 1}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(t.backward(x), scafds::ShapeError);
  Var c = t.constant_scalar(1.0);
  CHECK_THROWS_AS(t.backward(c), scafds::DomainError);
}

TEST_CASE("clamp_min counts activations") {
  Tape t;
  Var x = t.constant({3, 1}, {-1.0, 0.5, -2.0});
  t.reset_clamp_events();
  (void)t.clamp_min(x, 0.0);
  CHECK(t.clamp_events() == 2);
}

TEST_CASE("adamw minimizes a quadratic; cosine schedule hits its endpoints") {
  Tape t;
  Var x = t.leaf({3, 1}, {1.0, -2.0, 0.5}, true);
  Var loss = t.sum(t.mul(x, x));
  scafds::num::OptimConfig oc;
  oc.lr = 0.1;
  oc.weight_decay = 0.0;
  oc.cosine = true;
  oc.total_steps = 200;
  scafds::num::AdamW opt(oc, {x});
  CHECK(opt.current_lr() == doctest::Approx(0.1));
  double prev = t.scalar(loss);
  for (int i = 0; i < 200; ++i) {
    t.zero_grad();
    t.backward(loss);
    opt.step(t);
    t.replay();
  }
  CHECK(t.scalar(loss) < 1e-4);
  CHECK(t.scalar(loss) < prev);
  CHECK(opt.current_lr() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross-tape handles are rejected") {
  Tape a, b;
  Var x = a.leaf({1, 1}, {1.0}, true);
  Var y = b.leaf({1, 1}, {1.0}, true);
  CHECK_THROWS_AS((void)a.add(x, y), scafds::ShapeError);
}
