#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace riskpia {

/// Scalar arithmetic expression over state variables x1..xd and control
/// variables u1..um.
///
/// Grammar (lowest to highest precedence):
///   sum     := product (('+' | '-') product)*
///   product := unary (('*' | '/') unary)*
///   unary   := '-' unary | power
///   power   := primary ('^' unary)?          right associative
///   primary := number | variable | func '(' sum (',' sum)? ')' | '(' sum ')'
///
/// Functions: abs exp log sqrt sin cos tanh (one argument), min max (two).
///
/// An Expr is immutable after parsing. Evaluation runs a flattened postfix
/// program and is safe to call concurrently.
class Expr {
 public:
  enum class Op : std::uint8_t {
    Const,
    StateVar,
    ControlVar,
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Abs,
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tanh,
    Min,
    Max,
  };

  struct Node {
    Op op;
    double value = 0.0;  // Const
    int index = 0;       // StateVar / ControlVar, zero based
    int lhs = -1;
    int rhs = -1;
  };

  Expr() = default;

  static Expr parse(std::string_view src, int state_dim, int control_dim);
  static Expr constant(double value, int state_dim = 0, int control_dim = 0);

  double eval(std::span<const double> x, std::span<const double> u) const;

  /// Fully parenthesized rendering; reparses to a structurally identical tree.
  std::string to_string() const;

  bool structurally_equal(const Expr& other) const;
  bool depends_on_state() const noexcept { return uses_state_; }
  bool depends_on_controls() const noexcept { return uses_control_; }
  bool is_constant() const noexcept { return !uses_state_ && !uses_control_; }

  int state_dim() const noexcept { return state_dim_; }
  int control_dim() const noexcept { return control_dim_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  int root() const noexcept { return root_; }
  const std::string& source() const noexcept { return source_; }

 private:
  struct Instr {
    Op op;
    double value;
    int index;
    int node;  // AST node that produced this instruction, for error context
    bool int_pow;
  };

  void compile();
  std::string render(int node) const;
  [[noreturn]] void domain_failure(int node, const char* what, double arg) const;
  double apply_unary(Op op, double a, int node) const;
  double apply_binary(Op op, double lhs, double rhs, int node) const;
  double apply_int_pow(double base, double exponent, int node) const;
  double eval_tree(int node, std::span<const double> x, std::span<const double> u) const;

  std::vector<Node> nodes_;
  int root_ = -1;
  std::vector<Instr> program_;
  std::size_t max_depth_ = 0;
  int state_dim_ = 0;
  int control_dim_ = 0;
  bool uses_state_ = false;
  bool uses_control_ = false;
  std::string source_;

  friend class ExprParser;
};

}  // namespace riskpia
