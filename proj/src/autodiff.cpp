#include "dyra/autodiff.hpp"

#include <cmath>
#include <cstdio>

namespace dyra {

std::int32_t Tape::check(Var v) const {
  if (v.tape != this || v.index < 0 || v.index >= static_cast<std::int32_t>(nodes_.size())) {
    throw std::invalid_argument("Var does not belong to this tape");
  }
  return v.index;
}

void Tape::clear() {
  nodes_.clear();
  args_.clear();
  partials_.clear();
  adjoints_.clear();
  adjoints_valid_ = false;
}

double Tape::adjoint(Var v) const {
  const auto i = check(v);
  if (!adjoints_valid_) throw std::logic_error("Tape::adjoint called before backward");
  return adjoints_[static_cast<std::size_t>(i)];
}

Var Tape::push(Op op, double value, std::initializer_list<std::int32_t> parents,
               std::initializer_list<double> partials) {
  Node n;
  n.value = value;
  n.op = op;
  n.first_arg = static_cast<std::uint32_t>(args_.size());
  n.n_args = static_cast<std::uint32_t>(parents.size());
  args_.insert(args_.end(), parents.begin(), parents.end());
  partials_.insert(partials_.end(), partials.begin(), partials.end());
  nodes_.push_back(n);
  adjoints_valid_ = false;
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(double value) { return push(Op::Leaf, value, {}, {}); }

Var Tape::add(Var a, Var b) {
  const auto ia = check(a), ib = check(b);
  return push(Op::Add, nodes_[ia].value + nodes_[ib].value, {ia, ib}, {1.0, 1.0});
}

Var Tape::sub(Var a, Var b) {
  const auto ia = check(a), ib = check(b);
  return push(Op::Sub, nodes_[ia].value - nodes_[ib].value, {ia, ib}, {1.0, -1.0});
}

Var Tape::mul(Var a, Var b) {
  const auto ia = check(a), ib = check(b);
  const double va = nodes_[ia].value, vb = nodes_[ib].value;
  return push(Op::Mul, va * vb, {ia, ib}, {vb, va});
}

Var Tape::div(Var a, Var b) {
  const auto ia = check(a), ib = check(b);
  const double va = nodes_[ia].value, vb = nodes_[ib].value;
  if (vb == 0.0) throw TapeDomainError("division by zero", nodes_.size());
  return push(Op::Div, va / vb, {ia, ib}, {1.0 / vb, -va / (vb * vb)});
}

Var Tape::exp(Var a) {
  const auto ia = check(a);
  const double v = std::exp(nodes_[ia].value);
  return push(Op::Exp, v, {ia}, {v});
}

Var Tape::log(Var a) {
  const auto ia = check(a);
  const double va = nodes_[ia].value;
  if (!(va > 0.0)) throw TapeDomainError("log of non-positive value", nodes_.size());
  return push(Op::Log, std::log(va), {ia}, {1.0 / va});
}

Var Tape::pow_const(Var a, double exponent) {
  const auto ia = check(a);
  const double va = nodes_[ia].value;
  const double v = std::pow(va, exponent);
  const double partial = exponent * std::pow(va, exponent - 1.0);
  if (!std::isfinite(v) || !std::isfinite(partial)) {
    throw TapeDomainError("pow_const outside differentiable domain", nodes_.size());
  }
  return push(Op::PowConst, v, {ia}, {partial});
}

Var Tape::sigmoid(Var a) {
  const auto ia = check(a);
  double x = nodes_[ia].value;
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  return push(Op::Sigmoid, s, {ia}, {s * (1.0 - s)});
}

Var Tape::tanh(Var a) {
  const auto ia = check(a);
  const double t = std::tanh(nodes_[ia].value);
  return push(Op::Tanh, t, {ia}, {1.0 - t * t});
}

Var Tape::cos(Var a) {
  const auto ia = check(a);
  const double x = nodes_[ia].value;
  return push(Op::Cos, std::cos(x), {ia}, {-std::sin(x)});
}

Var Tape::max_const(Var a, double c) {
  const auto ia = check(a);
  const double va = nodes_[ia].value;
  const bool take_a = va >= c;
  return push(Op::MaxConst, take_a ? va : c, {ia}, {take_a ? 1.0 : 0.0});
}

Var Tape::min_const(Var a, double c) {
  const auto ia = check(a);
  const double va = nodes_[ia].value;
  const bool take_a = va <= c;
  return push(Op::MinConst, take_a ? va : c, {ia}, {take_a ? 1.0 : 0.0});
}

Var Tape::sum(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("Tape::sum of empty span");
  Node n;
  n.op = Op::Sum;
  n.first_arg = static_cast<std::uint32_t>(args_.size());
  n.n_args = static_cast<std::uint32_t>(xs.size());
  double total = 0.0;
  for (Var v : xs) {
    const auto i = check(v);
    total += nodes_[i].value;
    args_.push_back(i);
    partials_.push_back(1.0);
  }
  n.value = total;
  nodes_.push_back(n);
  adjoints_valid_ = false;
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::mean(std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("Tape::mean of empty span");
  Node n;
  n.op = Op::Mean;
  n.first_arg = static_cast<std::uint32_t>(args_.size());
  n.n_args = static_cast<std::uint32_t>(xs.size());
  const double w = 1.0 / static_cast<double>(xs.size());
  double total = 0.0;
  for (Var v : xs) {
    const auto i = check(v);
    total += nodes_[i].value;
    args_.push_back(i);
    partials_.push_back(w);
  }
  n.value = total * w;
  nodes_.push_back(n);
  adjoints_valid_ = false;
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::dot(std::span<const Var> a, std::span<const Var> b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("Tape::dot: size mismatch or empty operands");
  }
  Node n;
  n.op = Op::Dot;
  n.first_arg = static_cast<std::uint32_t>(args_.size());
  n.n_args = static_cast<std::uint32_t>(2 * a.size());
  double total = 0.0;
  // args = [a..., b...]; partial of a_i is b_i's value and vice versa
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto ia = check(a[i]);
    args_.push_back(ia);
    partials_.push_back(nodes_[static_cast<std::size_t>(check(b[i]))].value);
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto ib = check(b[i]);
    args_.push_back(ib);
    const double va = nodes_[static_cast<std::size_t>(check(a[i]))].value;
    partials_.push_back(va);
    total += va * nodes_[static_cast<std::size_t>(ib)].value;
  }
  n.value = total;
  nodes_.push_back(n);
  adjoints_valid_ = false;
  return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::dot(std::span<const Var> a, std::span<const Var> b, Var bias) {
  return add(dot(a, b), bias);
}

Var Tape::abs_branch(Var a) {
  const auto ia = check(a);
  if (nodes_[ia].value >= 0.0) return a;
  return sub(0.0, a);
}

void Tape::backward(Var root) {
  const auto r = check(root);
  adjoints_.assign(nodes_.size(), 0.0);
  adjoints_[static_cast<std::size_t>(r)] = 1.0;
  for (std::int32_t i = r; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    const double a = adjoints_[static_cast<std::size_t>(i)];
    if (a == 0.0 || n.op == Op::Leaf) continue;
    for (std::uint32_t k = 0; k < n.n_args; ++k) {
      adjoints_[static_cast<std::size_t>(args_[n.first_arg + k])] +=
          a * partials_[n.first_arg + k];
    }
  }
  for (double a : adjoints_) {
    if (!std::isfinite(a)) throw std::runtime_error("Tape::backward produced non-finite adjoint");
  }
  adjoints_valid_ = true;
}

GradReport gradcheck(const GradFn& f, const std::vector<double>& point, double h,
                     double tol) {
  GradReport report;
  report.tolerance = tol;

  const auto [value, analytic] = f(point);
  if (!std::isfinite(value)) throw std::domain_error("gradcheck: non-finite f at point");
  if (analytic.size() != point.size()) {
    throw std::invalid_argument("gradcheck: gradient size does not match point size");
  }

  report.entries.resize(point.size());
  std::vector<double> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + h;
    const double f_plus = f(probe).first;
    probe[i] = point[i] - h;
    const double f_minus = f(probe).first;
    probe[i] = point[i];
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
      throw std::domain_error("gradcheck: non-finite f at probe point");
    }
    GradCheckEntry& e = report.entries[i];
    e.analytic = analytic[i];
    e.numeric = (f_plus - f_minus) / (2.0 * h);
    const double denom = std::abs(e.analytic) + std::abs(e.numeric);
    e.rel_error = std::abs(e.analytic - e.numeric) / (denom > 1e-12 ? denom : 1e-12);
    e.ok = e.rel_error <= tol;
    if (e.rel_error > report.max_rel_error) report.max_rel_error = e.rel_error;
    if (!e.ok) report.passed = false;
  }
  return report;
}

std::string format_grad_report(const GradReport& report) {
  std::string out = "  idx        analytic         numeric      rel_error\n";
  char line[160];
  for (std::size_t i = 0; i < report.entries.size(); ++i) {
    const auto& e = report.entries[i];
    std::snprintf(line, sizeof(line), "%5zu %15.8e %15.8e %14.6e %s\n", i, e.analytic,
                  e.numeric, e.rel_error, e.ok ? "" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof(line), "max rel error %.6e (tolerance %.1e): %s\n",
                report.max_rel_error, report.tolerance,
                report.passed ? "pass" : "FAIL");
  out += line;
  return out;
}

}  // namespace dyra
