#pragma once

// Small scalar-function DSL used everywhere a model ingredient is "a function
// of the trait x": trait-dependent rates, offspring probabilities, weight
// functions and test functions. Grammar (infix, usual precedence):
//
//   expr     := term (('+'|'-') term)*
//   term     := factor (('*'|'/') factor)*
//   factor   := '-' factor | power
//   power    := primary ('^' factor)            // right-associative
//   primary  := NUMBER | 'x' | CALL | '(' expr ')'
//   CALL     := ('exp'|'sin'|'cos') '(' expr ')'
//             | ('min'|'max') '(' expr (',' expr)+ ')'
//             | 'piecewise' '(' e1 ',' b1 ',' e2 ',' b2 ',' ... ',' ek ')'
//
// piecewise evaluates to e1 when x < b1, e2 when x < b2, ..., ek otherwise.
// Breakpoints must be constant subexpressions and strictly increasing.
// Parsed programs are immutable, cheap to copy, and keep their source text
// so configs and reports can round-trip them.

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace branchsim {

class ExprError : public std::runtime_error {
 public:
  ExprError(const std::string& message, std::size_t position)
      : std::runtime_error(message + " (at offset " + std::to_string(position) + ")"),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class Expr {
 public:
  Expr();  // constant 0; parse() is the real entry point
  static Expr parse(const std::string& source);
  static Expr constant(double value);

  double operator()(double x) const;
  // True when no 'x' occurs anywhere in the program.
  bool is_constant() const { return constant_; }
  const std::string& source() const { return source_; }

 private:
  enum class Op : std::uint8_t {
    push_literal,
    push_x,
    add,
    sub,
    mul,
    div,
    pow,
    neg,
    exp,
    sin,
    cos,
    min,        // arg = operand count
    max,        // arg = operand count
    piecewise,  // arg = total operand count (2k-1)
  };
  struct Instruction {
    Op op;
    std::uint32_t arg = 0;
    double literal = 0.0;
  };

  std::shared_ptr<const std::vector<Instruction>> program_;
  std::string source_;
  bool constant_ = true;
  int stack_need_ = 1;

  friend class ExprParser;
};

}  // namespace branchsim
