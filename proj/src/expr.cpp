#include "riskpia/expr.hpp"

#include <array>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "riskpia/error.hpp"

namespace riskpia {

namespace {

struct FuncInfo {
  const char* name;
  Expr::Op op;
  int arity;
};

constexpr std::array<FuncInfo, 9> kFunctions{{
    {"abs", Expr::Op::Abs, 1},
    {"exp", Expr::Op::Exp, 1},
    {"log", Expr::Op::Log, 1},
    {"sqrt", Expr::Op::Sqrt, 1},
    {"sin", Expr::Op::Sin, 1},
    {"cos", Expr::Op::Cos, 1},
    {"tanh", Expr::Op::Tanh, 1},
    {"min", Expr::Op::Min, 2},
    {"max", Expr::Op::Max, 2},
}};

const FuncInfo* find_function(std::string_view name) {
  for (const auto& f : kFunctions) {
    if (name == f.name) return &f;
  }
  return nullptr;
}

const char* function_name(Expr::Op op) {
  for (const auto& f : kFunctions) {
    if (f.op == op) return f.name;
  }
  return "?";
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool is_binary(Expr::Op op) {
  switch (op) {
    case Expr::Op::Add:
    case Expr::Op::Sub:
    case Expr::Op::Mul:
    case Expr::Op::Div:
    case Expr::Op::Pow:
    case Expr::Op::Min:
    case Expr::Op::Max:
      return true;
    default:
      return false;
  }
}

}  // namespace

class ExprParser {
 public:
  ExprParser(std::string_view src, int d, int m) : src_(src), d_(d), m_(m) {}

  Expr run() {
    Expr e;
    e.state_dim_ = d_;
    e.control_dim_ = m_;
    e.source_ = std::string(src_);
    out_ = &e;
    skip_ws();
    e.root_ = parse_sum();
    skip_ws();
    if (pos_ != src_.size()) fail("operator or end of input");
    e.compile();
    return e;
  }

 private:
  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  [[noreturn]] void fail(const std::string& expected) const {
    std::string found = pos_ >= src_.size() ? std::string("end of input")
                                            : "'" + std::string(1, src_[pos_]) + "'";
    throw SyntaxError(pos_, expected, found);
  }

  bool accept(char ch) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == ch) {
      ++pos_;
      skip_ws();
      return true;
    }
    return false;
  }

  int add(Expr::Node n) {
    out_->nodes_.push_back(n);
    return static_cast<int>(out_->nodes_.size()) - 1;
  }

  int parse_sum() {
    int lhs = parse_product();
    for (;;) {
      if (accept('+')) {
        lhs = add({Expr::Op::Add, 0.0, 0, lhs, parse_product()});
      } else if (accept('-')) {
        lhs = add({Expr::Op::Sub, 0.0, 0, lhs, parse_product()});
      } else {
        return lhs;
      }
    }
  }

  int parse_product() {
    int lhs = parse_unary();
    for (;;) {
      if (accept('*')) {
        lhs = add({Expr::Op::Mul, 0.0, 0, lhs, parse_unary()});
      } else if (accept('/')) {
        lhs = add({Expr::Op::Div, 0.0, 0, lhs, parse_unary()});
      } else {
        return lhs;
      }
    }
  }

  int parse_unary() {
    if (accept('-')) return add({Expr::Op::Neg, 0.0, 0, parse_unary(), -1});
    return parse_power();
  }

  int parse_power() {
    int base = parse_primary();
    if (accept('^')) return add({Expr::Op::Pow, 0.0, 0, base, parse_unary()});
    return base;
  }

  int parse_primary() {
    skip_ws();
    if (pos_ >= src_.size()) fail("number, variable, function or '('");
    const char ch = src_[pos_];
    if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') return parse_identifier();
    if (accept('(')) {
      int inner = parse_sum();
      if (!accept(')')) fail("')'");
      return inner;
    }
    fail("number, variable, function or '('");
  }

  int parse_number() {
    const std::size_t start = pos_;
    auto digits = [&] {
      std::size_t n = 0;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        ++pos_;
        ++n;
      }
      return n;
    };
    std::size_t n = digits();
    if (pos_ < src_.size() && src_[pos_] == '.') {
      ++pos_;
      n += digits();
    }
    if (n == 0) {
      pos_ = start;
      fail("digit");
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      ++pos_;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      if (digits() == 0) fail("exponent digits");
    }
    const std::string text(src_.substr(start, pos_ - start));
    errno = 0;
    const double v = std::strtod(text.c_str(), nullptr);
    if (errno == ERANGE && !std::isfinite(v)) {
      pos_ = start;
      fail("finite numeric literal");
    }
    skip_ws();
    return add({Expr::Op::Const, v, 0, -1, -1});
  }

  int parse_identifier() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
      ++pos_;
    }
    const std::string_view name = src_.substr(start, pos_ - start);
    if (const FuncInfo* f = find_function(name)) {
      if (!accept('(')) fail("'(' after " + std::string(name));
      const int a = parse_sum();
      int b = -1;
      if (f->arity == 2) {
        if (!accept(',')) fail("','");
        b = parse_sum();
      }
      if (!accept(')')) fail("')'");
      return add({f->op, 0.0, 0, a, b});
    }
    return parse_variable(name);
  }

  int parse_variable(std::string_view name) {
    const char kind = name.empty() ? '\0' : name[0];
    bool numeric = name.size() >= 2 && name[1] != '0';
    for (std::size_t i = 1; i < name.size(); ++i) {
      numeric = numeric && std::isdigit(static_cast<unsigned char>(name[i]));
    }
    if ((kind != 'x' && kind != 'u') || !numeric || name.size() > 9) {
      throw UnknownVariable(std::string(name));
    }
    const int idx = std::stoi(std::string(name.substr(1)));
    const int limit = kind == 'x' ? d_ : m_;
    if (idx > limit) {
      throw DimensionError("variable " + std::string(name) + " exceeds declared " +
                           (kind == 'x' ? "state" : "control") + " dimension " +
                           std::to_string(limit));
    }
    skip_ws();
    return add({kind == 'x' ? Expr::Op::StateVar : Expr::Op::ControlVar, 0.0, idx - 1, -1, -1});
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int d_;
  int m_;
  Expr* out_ = nullptr;
};

Expr Expr::parse(std::string_view src, int state_dim, int control_dim) {
  return ExprParser(src, state_dim, control_dim).run();
}

Expr Expr::constant(double value, int state_dim, int control_dim) {
  Expr e;
  e.state_dim_ = state_dim;
  e.control_dim_ = control_dim;
  e.nodes_.push_back({Op::Const, value, 0, -1, -1});
  e.root_ = 0;
  e.source_ = format_number(value);
  e.compile();
  return e;
}

void Expr::compile() {
  program_.clear();
  uses_state_ = false;
  uses_control_ = false;

  // Nodes are appended children-first, so one forward pass sees children
  // before parents.
  std::vector<char> has_var(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    has_var[i] = n.op == Op::StateVar || n.op == Op::ControlVar;
    if (n.lhs >= 0) has_var[i] |= has_var[static_cast<std::size_t>(n.lhs)];
    if (n.rhs >= 0) has_var[i] |= has_var[static_cast<std::size_t>(n.rhs)];
    if (n.op == Op::StateVar) uses_state_ = true;
    if (n.op == Op::ControlVar) uses_control_ = true;
  }

  std::size_t depth = 0;
  std::size_t max_depth = 0;
  auto push = [&](Instr ins) {
    program_.push_back(ins);
    if (ins.op == Op::Const || ins.op == Op::StateVar || ins.op == Op::ControlVar) {
      ++depth;
    } else if (is_binary(ins.op) && !ins.int_pow) {
      --depth;
    }
    max_depth = std::max(max_depth, depth);
  };

  auto emit = [&](auto&& self, int idx) -> void {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!has_var[static_cast<std::size_t>(idx)] && n.op != Op::Const) {
      // Constant subtrees are folded unless folding would hide a domain error.
      try {
        push({Op::Const, eval_tree(idx, {}, {}), 0, idx, false});
        return;
      } catch (const DomainError&) {
      }
    }
    switch (n.op) {
      case Op::Const:
        push({Op::Const, n.value, 0, idx, false});
        return;
      case Op::StateVar:
      case Op::ControlVar:
        push({n.op, 0.0, n.index, idx, false});
        return;
      case Op::Pow:
        self(self, n.lhs);
        if (!has_var[static_cast<std::size_t>(n.rhs)]) {
          try {
            const double p = eval_tree(n.rhs, {}, {});
            if (p == std::floor(p) && std::abs(p) <= 64.0) {
              push({Op::Pow, p, 0, idx, true});
              return;
            }
          } catch (const DomainError&) {
          }
        }
        self(self, n.rhs);
        push({Op::Pow, 0.0, 0, idx, false});
        return;
      default:
        self(self, n.lhs);
        if (n.rhs >= 0) self(self, n.rhs);
        push({n.op, 0.0, 0, idx, false});
        return;
    }
  };
  emit(emit, root_);
  max_depth_ = max_depth;
}

void Expr::domain_failure(int node, const char* what, double arg) const {
  throw DomainError(std::string(what) + " in '" + render(node) + "' (argument " +
                    format_number(arg) + ")");
}

double Expr::apply_unary(Op op, double a, int node) const {
  double r = 0.0;
  switch (op) {
    case Op::Neg: r = -a; break;
    case Op::Abs: r = std::abs(a); break;
    case Op::Exp: r = std::exp(a); break;
    case Op::Log:
      if (!(a > 0.0)) domain_failure(node, "log of non-positive value", a);
      r = std::log(a);
      break;
    case Op::Sqrt:
      if (a < 0.0) domain_failure(node, "sqrt of negative value", a);
      r = std::sqrt(a);
      break;
    case Op::Sin: r = std::sin(a); break;
    case Op::Cos: r = std::cos(a); break;
    case Op::Tanh: r = std::tanh(a); break;
    default: break;
  }
  if (!std::isfinite(r)) domain_failure(node, "non-finite result", a);
  return r;
}

double Expr::apply_binary(Op op, double lhs, double rhs, int node) const {
  double r = 0.0;
  switch (op) {
    case Op::Add: r = lhs + rhs; break;
    case Op::Sub: r = lhs - rhs; break;
    case Op::Mul: r = lhs * rhs; break;
    case Op::Div:
      if (rhs == 0.0) domain_failure(node, "division by zero", rhs);
      r = lhs / rhs;
      break;
    case Op::Pow:
      if (lhs == 0.0 && rhs < 0.0) domain_failure(node, "division by zero", lhs);
      r = std::pow(lhs, rhs);
      if (std::isnan(r)) domain_failure(node, "negative base with non-integer exponent", lhs);
      break;
    case Op::Min: r = std::min(lhs, rhs); break;
    case Op::Max: r = std::max(lhs, rhs); break;
    default: break;
  }
  if (!std::isfinite(r)) domain_failure(node, "non-finite result", lhs);
  return r;
}

double Expr::apply_int_pow(double base, double exponent, int node) const {
  long n = static_cast<long>(exponent);
  const bool invert = n < 0;
  if (invert) n = -n;
  const double a = base;
  double acc = 1.0;
  while (n > 0) {
    if (n & 1) acc *= base;
    base *= base;
    n >>= 1;
  }
  if (invert) {
    if (acc == 0.0) domain_failure(node, "division by zero", a);
    acc = 1.0 / acc;
  }
  if (!std::isfinite(acc)) domain_failure(node, "non-finite result", a);
  return acc;
}

double Expr::eval_tree(int idx, std::span<const double> x, std::span<const double> u) const {
  const Node& n = nodes_[static_cast<std::size_t>(idx)];
  switch (n.op) {
    case Op::Const: return n.value;
    case Op::StateVar: return x[static_cast<std::size_t>(n.index)];
    case Op::ControlVar: return u[static_cast<std::size_t>(n.index)];
    default: break;
  }
  if (is_binary(n.op)) {
    const double lhs = eval_tree(n.lhs, x, u);
    return apply_binary(n.op, lhs, eval_tree(n.rhs, x, u), idx);
  }
  return apply_unary(n.op, eval_tree(n.lhs, x, u), idx);
}

double Expr::eval(std::span<const double> x, std::span<const double> u) const {
  constexpr std::size_t kInline = 32;
  std::array<double, kInline> inline_stack{};
  std::vector<double> heap_stack;
  double* stack = inline_stack.data();
  if (max_depth_ > kInline) {
    heap_stack.resize(max_depth_);
    stack = heap_stack.data();
  }
  std::size_t sp = 0;

  for (const Instr& ins : program_) {
    switch (ins.op) {
      case Op::Const:
        stack[sp++] = ins.value;
        break;
      case Op::StateVar:
        stack[sp++] = x[static_cast<std::size_t>(ins.index)];
        break;
      case Op::ControlVar:
        stack[sp++] = u[static_cast<std::size_t>(ins.index)];
        break;
      case Op::Add:
        --sp;
        stack[sp - 1] += stack[sp];
        if (!std::isfinite(stack[sp - 1])) domain_failure(ins.node, "non-finite result", stack[sp]);
        break;
      case Op::Sub:
        --sp;
        stack[sp - 1] -= stack[sp];
        if (!std::isfinite(stack[sp - 1])) domain_failure(ins.node, "non-finite result", stack[sp]);
        break;
      case Op::Mul:
        --sp;
        stack[sp - 1] *= stack[sp];
        if (!std::isfinite(stack[sp - 1])) domain_failure(ins.node, "non-finite result", stack[sp]);
        break;
      case Op::Pow:
        if (ins.int_pow) {
          stack[sp - 1] = apply_int_pow(stack[sp - 1], ins.value, ins.node);
        } else {
          --sp;
          stack[sp - 1] = apply_binary(ins.op, stack[sp - 1], stack[sp], ins.node);
        }
        break;
      case Op::Div:
      case Op::Min:
      case Op::Max:
        --sp;
        stack[sp - 1] = apply_binary(ins.op, stack[sp - 1], stack[sp], ins.node);
        break;
      case Op::Neg:
        stack[sp - 1] = -stack[sp - 1];
        break;
      default:
        stack[sp - 1] = apply_unary(ins.op, stack[sp - 1], ins.node);
        break;
    }
  }
  return stack[0];
}

std::string Expr::render(int idx) const {
  const Node& n = nodes_[static_cast<std::size_t>(idx)];
  switch (n.op) {
    case Op::Const: return format_number(n.value);
    case Op::StateVar: return "x" + std::to_string(n.index + 1);
    case Op::ControlVar: return "u" + std::to_string(n.index + 1);
    case Op::Neg: return "(-" + render(n.lhs) + ")";
    case Op::Add: return "(" + render(n.lhs) + " + " + render(n.rhs) + ")";
    case Op::Sub: return "(" + render(n.lhs) + " - " + render(n.rhs) + ")";
    case Op::Mul: return "(" + render(n.lhs) + " * " + render(n.rhs) + ")";
    case Op::Div: return "(" + render(n.lhs) + " / " + render(n.rhs) + ")";
    case Op::Pow: return "(" + render(n.lhs) + " ^ " + render(n.rhs) + ")";
    case Op::Min:
    case Op::Max:
      return std::string(function_name(n.op)) + "(" + render(n.lhs) + ", " + render(n.rhs) + ")";
    default:
      return std::string(function_name(n.op)) + "(" + render(n.lhs) + ")";
  }
}

std::string Expr::to_string() const { return root_ < 0 ? std::string() : render(root_); }

bool Expr::structurally_equal(const Expr& other) const {
  auto same = [&](auto&& self, int a, int b) -> bool {
    if (a < 0 || b < 0) return a == b;
    const Node& na = nodes_[static_cast<std::size_t>(a)];
    const Node& nb = other.nodes_[static_cast<std::size_t>(b)];
    if (na.op != nb.op) return false;
    if (na.op == Op::Const) return na.value == nb.value;
    if (na.op == Op::StateVar || na.op == Op::ControlVar) return na.index == nb.index;
    return self(self, na.lhs, nb.lhs) && self(self, na.rhs, nb.rhs);
  };
  return same(same, root_, other.root_);
}

}  // namespace riskpia
