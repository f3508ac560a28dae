#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dyra {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::int32_t index = -1;

  double value() const;
};

/// Domain failure while recording (log of non-positive value, division by
/// zero). Carries the index the offending node would have occupied.
class TapeDomainError : public std::domain_error {
 public:
  TapeDomainError(const std::string& what, std::size_t node_index)
      : std::domain_error(what + " (node " + std::to_string(node_index) + ")"),
        node_index_(node_index) {}
  std::size_t node_index() const { return node_index_; }

 private:
  std::size_t node_index_;
};

/// Append-only scalar expression graph with reverse-mode backward.
/// Single-writer: use one tape per worker.
class Tape {
 public:
  enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Log,
    PowConst,
    Sigmoid,
    Tanh,
    Cos,
    MaxConst,
    MinConst,
    Sum,
    Mean,
    Dot,
  };

  Tape() = default;

  void reserve(std::size_t nodes) {
    nodes_.reserve(nodes);
    args_.reserve(2 * nodes);
  }
  void clear();

  std::size_t size() const { return nodes_.size(); }
  double value(Var v) const { return nodes_[check(v)].value; }
  double adjoint(Var v) const;

  Var leaf(double value);
  /// Alias of leaf(); named for call sites where the value is a detached constant.
  Var constant(double value) { return leaf(value); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var exp(Var a);
  Var log(Var a);
  Var pow_const(Var a, double exponent);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var cos(Var a);
  /// max(a, c). At a tie the gradient goes to the first operand (a).
  Var max_const(Var a, double c);
  /// min(a, c). At a tie the gradient goes to the first operand (a).
  Var min_const(Var a, double c);
  Var sum(std::span<const Var> xs);
  Var mean(std::span<const Var> xs);
  /// Fused inner product sum_i a_i * b_i (+ bias); one node instead of a
  /// mul/sum cascade, which keeps network forward passes compact.
  Var dot(std::span<const Var> a, std::span<const Var> b);
  Var dot(std::span<const Var> a, std::span<const Var> b, Var bias);

  // double-convenience wrappers
  Var add(Var a, double b) { return add(a, leaf(b)); }
  Var add(double a, Var b) { return add(leaf(a), b); }
  Var sub(Var a, double b) { return sub(a, leaf(b)); }
  Var sub(double a, Var b) { return sub(leaf(a), b); }
  Var mul(Var a, double b) { return mul(a, leaf(b)); }
  Var mul(double a, Var b) { return mul(leaf(a), b); }
  Var div(Var a, double b) { return div(a, leaf(b)); }
  Var div(double a, Var b) { return div(leaf(a), b); }

  /// |a| recorded as a or -a depending on the current sign (subgradient +1 at 0).
  Var abs_branch(Var a);

  /// Reverse sweep from root. Adjoints are replaced, root's adjoint is 1,
  /// and every adjoint is checked finite.
  void backward(Var root);

 private:
  struct Node {
    double value = 0.0;
    Op op = Op::Leaf;
    std::uint32_t first_arg = 0;  // offset into args_/partials_
    std::uint32_t n_args = 0;
  };

  std::int32_t check(Var v) const;
  Var push(Op op, double value, std::initializer_list<std::int32_t> parents,
           std::initializer_list<double> partials);

  std::vector<Node> nodes_;
  std::vector<std::int32_t> args_;
  std::vector<double> partials_;
  std::vector<double> adjoints_;
  bool adjoints_valid_ = false;
};

inline double Var::value() const { return tape->value(*this); }

// Operator sugar so loss formulas read like the math.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator+(Var a, double b) { return a.tape->add(a, b); }
inline Var operator+(double a, Var b) { return b.tape->add(a, b); }
inline Var operator-(Var a, double b) { return a.tape->sub(a, b); }
inline Var operator-(double a, Var b) { return b.tape->sub(a, b); }
inline Var operator*(Var a, double b) { return a.tape->mul(a, b); }
inline Var operator*(double a, Var b) { return b.tape->mul(a, b); }
inline Var operator/(Var a, double b) { return a.tape->div(a, b); }
inline Var operator/(double a, Var b) { return b.tape->div(a, b); }
inline Var operator-(Var a) { return a.tape->sub(0.0, a); }

/// A differentiable scalar function: returns value and gradient at a point.
using GradFn =
    std::function<std::pair<double, std::vector<double>>(const std::vector<double>&)>;

struct GradCheckEntry {
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool ok = true;
};

struct GradReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  bool passed = true;
};

/// Central-difference check of f's gradient at `point`.
/// rel_error = |a - n| / max(1e-12, |a| + |n|); coordinates above `tol` fail.
GradReport gradcheck(const GradFn& f, const std::vector<double>& point,
                     double h = 1e-5, double tol = 1e-4);

std::string format_grad_report(const GradReport& report);

}  // namespace dyra
