#include <cmath>
#include <vector>

#include <doctest.h>

#include "dyra/autodiff.hpp"
#include "dyra/core.hpp"
#include "dyra/losses.hpp"
#include "dyra/rng.hpp"

using namespace dyra;

TEST_CASE("forward values of the recorded primitives") {
  Tape tape;
  CHECK((tape.leaf(3.0) * tape.leaf(4.0)).value() == 12.0);
  CHECK(tape.log(tape.leaf(1.0)).value() == 0.0);
  CHECK(tape.sigmoid(tape.leaf(0.0)).value() == 0.5);
  CHECK(tape.exp(tape.leaf(0.0)).value() == 1.0);
  CHECK(tape.tanh(tape.leaf(0.0)).value() == 0.0);
  CHECK(tape.cos(tape.leaf(0.0)).value() == 1.0);
  CHECK(tape.pow_const(tape.leaf(3.0), 2.0).value() == 9.0);
  CHECK(tape.max_const(tape.leaf(0.1), 0.2).value() == 0.2);
  CHECK(tape.min_const(tape.leaf(0.9), 0.2).value() == 0.2);
  const std::vector<Var> xs = {tape.leaf(1.0), tape.leaf(2.0), tape.leaf(6.0)};
  CHECK(tape.sum(xs).value() == 9.0);
  CHECK(tape.mean(xs).value() == 3.0);
  const std::vector<Var> ys = {tape.leaf(2.0), tape.leaf(0.5), tape.leaf(1.0)};
  CHECK(tape.dot(xs, ys).value() == 2.0 + 1.0 + 6.0);
}

TEST_CASE("backward: product rule and sigmoid derivative") {
  Tape tape;
  Var x = tape.leaf(3.0);
  Var y = tape.leaf(4.0);
  Var root = x * y;
  tape.backward(root);
  CHECK(tape.adjoint(x) == 4.0);
  CHECK(tape.adjoint(y) == 3.0);
  CHECK(tape.adjoint(root) == 1.0);

  Tape tape2;
  Var z = tape2.leaf(0.0);
  Var s = tape2.sigmoid(z);
  tape2.backward(s);
  CHECK(tape2.adjoint(z) == 0.25);
}

TEST_CASE("backward: active clamp kills the gradient") {
  // max(sigmoid(x), c) * tau with sigmoid(x) < c mirrors the scale-factor
  // lower bound
  Tape tape;
  Var x = tape.leaf(-5.0);  // sigmoid ~ 0.0067 < 0.2
  Var phi = tape.max_const(tape.sigmoid(x), 0.2) * 2.0;
  CHECK(phi.value() == doctest::Approx(0.4));
  tape.backward(phi);
  CHECK(tape.adjoint(x) == 0.0);
}

TEST_CASE("domain errors carry the offending node index") {
  Tape tape;
  Var x = tape.leaf(-1.0);
  try {
    tape.log(x);
    FAIL("expected TapeDomainError");
  } catch (const TapeDomainError& e) {
    CHECK(e.node_index() == 1);
  }
  Var zero = tape.leaf(0.0);
  CHECK_THROWS_AS(tape.div(x, zero), TapeDomainError);
}

TEST_CASE("backward is deterministic: identical tapes give bit-identical adjoints") {
  auto build_and_run = [] {
    Tape tape;
    Var a = tape.leaf(0.3);
    Var b = tape.leaf(1.7);
    Var c = tape.exp(a * b) / (1.0 + tape.tanh(b - a));
    Var root = tape.log(c + 2.0) * tape.cos(a);
    tape.backward(root);
    return std::make_pair(tape.adjoint(a), tape.adjoint(b));
  };
  const auto first = build_and_run();
  const auto second = build_and_run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}

TEST_CASE("gradcheck: quadratic") {
  const GradFn f = [](const std::vector<double>& x) {
    return std::make_pair(x[0] * x[0], std::vector<double>{2.0 * x[0]});
  };
  const GradReport report = gradcheck(f, {3.0});
  CHECK(report.passed);
  CHECK(report.entries[0].numeric == doctest::Approx(6.0).epsilon(1e-9));
}

TEST_CASE("gradcheck: scale loss through the bounding transform") {
  // phi = max(sigmoid(raw), tau/10) * tau; away from the clamp the analytic
  // derivative is -(r'/phi - (1-r')/(tau-phi)) * dphi/draw.
  const double tau = 2.0;
  const double r_prime = 0.7;
  const GradFn f = [&](const std::vector<double>& x) {
    Tape tape;
    Var raw = tape.leaf(x[0]);
    Var phi = tape.max_const(tape.sigmoid(raw), tau / 10.0) * tau;
    Var loss = scale_loss(tape, tape.constant(r_prime), phi, tau);
    tape.backward(loss);
    return std::make_pair(loss.value(), std::vector<double>{tape.adjoint(raw)});
  };
  const GradReport report = gradcheck(f, {0.6});
  CHECK(report.passed);

  // cross-check against the closed form
  const double s = 1.0 / (1.0 + std::exp(-0.6));
  const double phi = s * tau;
  const double dphi_draw = s * (1.0 - s) * tau;
  const double dloss_dphi = -(r_prime / phi - (1.0 - r_prime) / (tau - phi));
  const auto [value, grad] = f({0.6});
  CHECK(grad[0] == doctest::Approx(dloss_dphi * dphi_draw).epsilon(1e-12));
  (void)value;
}

TEST_CASE("gradcheck: balance loss in gamma is exactly +-1 away from the kink") {
  const BalanceState state;
  GroupSplit split;
  split.loc_down = 0.8;
  split.loc_up = 0.4;
  split.n_down = 2;
  split.n_up = 1;
  for (double gamma : {4.0, 6.0, 9.5, 12.0}) {
    Tape tape;
    Var g = tape.leaf(gamma);
    Var loss = balance_loss_after_avg(tape, g, split, state);
    tape.backward(loss);
    CHECK(std::abs(tape.adjoint(g)) == 1.0);
  }
}

TEST_CASE("gradcheck rejects non-finite probes") {
  const GradFn f = [](const std::vector<double>& x) {
    return std::make_pair(std::log(x[0]), std::vector<double>{1.0 / x[0]});
  };
  CHECK_THROWS_AS(gradcheck(f, {1e-7}), std::domain_error);  // probe crosses zero
}

TEST_CASE("abs_branch takes the positive branch at zero") {
  Tape tape;
  Var x = tape.leaf(0.0);
  Var a = tape.abs_branch(x);
  tape.backward(a);
  CHECK(tape.adjoint(x) == 1.0);

  Tape tape2;
  Var y = tape2.leaf(-2.5);
  Var b = tape2.abs_branch(y);
  CHECK(b.value() == 2.5);
  tape2.backward(b);
  CHECK(tape2.adjoint(y) == -1.0);
}

TEST_CASE("dot gradients flow to both operand vectors") {
  Rng rng(5);
  const GradFn f = [](const std::vector<double>& x) {
    Tape tape;
    std::vector<Var> a = {tape.leaf(x[0]), tape.leaf(x[1])};
    std::vector<Var> b = {tape.leaf(x[2]), tape.leaf(x[3])};
    Var bias = tape.leaf(x[4]);
    Var root = tape.dot(a, b, bias);
    tape.backward(root);
    std::vector<double> grad = {tape.adjoint(a[0]), tape.adjoint(a[1]),
                                tape.adjoint(b[0]), tape.adjoint(b[1]),
                                tape.adjoint(bias)};
    return std::make_pair(root.value(), grad);
  };
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> point;
    for (int i = 0; i < 5; ++i) point.push_back(rng.uniform(-2.0, 2.0));
    CHECK(gradcheck(f, point).passed);
  }
}
