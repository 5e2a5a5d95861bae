#include "branchsim/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>

namespace branchsim {

namespace {
constexpr int kMaxStack = 128;
}

// Recursive-descent parser emitting a postfix program. Kept in one
// translation unit; the header only exposes the compiled form.
class ExprParser {
 public:
  explicit ExprParser(const std::string& src) : src_(src) {}

  Expr run() {
    Expr out;
    auto program = std::make_shared<std::vector<Expr::Instruction>>();
    program_ = program.get();
    skip_space();
    if (eof()) throw ExprError("empty expression", 0);
    parse_expr();
    skip_space();
    if (!eof()) throw ExprError("unexpected trailing input", pos_);
    out.program_ = std::move(program);
    out.source_ = src_;
    out.constant_ = !uses_x_;
    out.stack_need_ = max_depth_;
    return out;
  }

 private:
  const std::string& src_;
  std::size_t pos_ = 0;
  std::vector<Expr::Instruction>* program_ = nullptr;
  bool uses_x_ = false;
  int depth_ = 0;
  int max_depth_ = 0;

  bool eof() const { return pos_ >= src_.size(); }
  char peek() const { return eof() ? '\0' : src_[pos_]; }
  void skip_space() {
    while (!eof() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }
  bool consume(char c) {
    skip_space();
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void emit(Expr::Op op, std::uint32_t arg = 0, double literal = 0.0) {
    program_->push_back({op, arg, literal});
    switch (op) {
      case Expr::Op::push_literal:
      case Expr::Op::push_x:
        ++depth_;
        break;
      case Expr::Op::add:
      case Expr::Op::sub:
      case Expr::Op::mul:
      case Expr::Op::div:
      case Expr::Op::pow:
        --depth_;
        break;
      case Expr::Op::neg:
      case Expr::Op::exp:
      case Expr::Op::sin:
      case Expr::Op::cos:
        break;
      case Expr::Op::min:
      case Expr::Op::max:
      case Expr::Op::piecewise:
        depth_ -= static_cast<int>(arg) - 1;
        break;
    }
    if (depth_ > max_depth_) max_depth_ = depth_;
    if (max_depth_ > kMaxStack) throw ExprError("expression too deep", pos_);
  }

  void parse_expr() {
    parse_term();
    for (;;) {
      skip_space();
      if (consume('+')) {
        parse_term();
        emit(Expr::Op::add);
      } else if (consume('-')) {
        parse_term();
        emit(Expr::Op::sub);
      } else {
        return;
      }
    }
  }

  void parse_term() {
    parse_factor();
    for (;;) {
      skip_space();
      if (consume('*')) {
        parse_factor();
        emit(Expr::Op::mul);
      } else if (consume('/')) {
        parse_factor();
        emit(Expr::Op::div);
      } else {
        return;
      }
    }
  }

  void parse_factor() {
    skip_space();
    if (consume('-')) {
      parse_factor();
      emit(Expr::Op::neg);
      return;
    }
    parse_primary();
    skip_space();
    if (consume('^')) {
      parse_factor();  // right-associative
      emit(Expr::Op::pow);
    }
  }

  void parse_primary() {
    skip_space();
    if (eof()) throw ExprError("unexpected end of expression", pos_);
    char c = peek();
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      parse_number();
      return;
    }
    if (c == '(') {
      ++pos_;
      parse_expr();
      if (!consume(')')) throw ExprError("missing ')'", pos_);
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      parse_identifier();
      return;
    }
    throw ExprError(std::string("unexpected character '") + c + "'", pos_);
  }

  void parse_number() {
    const char* begin = src_.c_str() + pos_;
    char* end = nullptr;
    double value = std::strtod(begin, &end);
    if (end == begin) throw ExprError("malformed number", pos_);
    pos_ += static_cast<std::size_t>(end - begin);
    emit(Expr::Op::push_literal, 0, value);
  }

  void parse_identifier() {
    std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_')) ++pos_;
    std::string name = src_.substr(start, pos_ - start);
    if (name == "x") {
      uses_x_ = true;
      emit(Expr::Op::push_x);
      return;
    }
    if (name == "exp" || name == "sin" || name == "cos") {
      expect_open(name);
      parse_expr();
      expect_close(name);
      emit(name == "exp" ? Expr::Op::exp : name == "sin" ? Expr::Op::sin : Expr::Op::cos);
      return;
    }
    if (name == "min" || name == "max") {
      expect_open(name);
      std::uint32_t count = parse_args(2);
      expect_close(name);
      emit(name == "min" ? Expr::Op::min : Expr::Op::max, count);
      return;
    }
    if (name == "piecewise") {
      parse_piecewise();
      return;
    }
    throw ExprError("unknown identifier '" + name + "'", start);
  }

  void expect_open(const std::string& name) {
    if (!consume('(')) throw ExprError("expected '(' after '" + name + "'", pos_);
  }
  void expect_close(const std::string& name) {
    if (!consume(')')) throw ExprError("missing ')' in call to '" + name + "'", pos_);
  }

  std::uint32_t parse_args(std::uint32_t min_count) {
    std::uint32_t count = 0;
    do {
      parse_expr();
      ++count;
    } while (consume(','));
    if (count < min_count) throw ExprError("too few arguments", pos_);
    return count;
  }

  void parse_piecewise() {
    std::size_t call_pos = pos_;
    expect_open("piecewise");
    // Arguments alternate branch expressions and constant breakpoints; the
    // breakpoints must not reference x and must be strictly increasing, which
    // is checked here by evaluating the constant subprograms.
    std::uint32_t count = 0;
    double prev_break = 0.0;
    bool have_prev = false;
    for (;;) {
      parse_expr();
      ++count;
      if (!consume(',')) break;
      // breakpoint position
      std::size_t break_start = program_->size();
      bool outer_uses_x = uses_x_;
      uses_x_ = false;
      parse_expr();
      ++count;
      if (uses_x_) throw ExprError("piecewise breakpoint must be constant", break_start);
      double value = eval_range(*program_, break_start, program_->size(), 0.0);
      if (have_prev && !(value > prev_break)) {
        throw ExprError("piecewise breakpoints must be strictly increasing", break_start);
      }
      prev_break = value;
      have_prev = true;
      uses_x_ = outer_uses_x;
      if (!consume(',')) throw ExprError("piecewise needs a branch after each breakpoint", pos_);
    }
    expect_close("piecewise");
    if (count % 2 == 0 || count < 3) {
      throw ExprError("piecewise needs e1, b1, e2, ..., ek (odd argument count >= 3)", call_pos);
    }
    emit(Expr::Op::piecewise, count);
  }

  static double eval_range(const std::vector<Expr::Instruction>& prog, std::size_t begin,
                           std::size_t end, double x);

  friend class Expr;
};

double ExprParser::eval_range(const std::vector<Expr::Instruction>& prog, std::size_t begin,
                              std::size_t end, double x) {
  double stack[kMaxStack];
  int top = -1;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& ins = prog[i];
    switch (ins.op) {
      case Expr::Op::push_literal:
        stack[++top] = ins.literal;
        break;
      case Expr::Op::push_x:
        stack[++top] = x;
        break;
      case Expr::Op::add:
        stack[top - 1] += stack[top];
        --top;
        break;
      case Expr::Op::sub:
        stack[top - 1] -= stack[top];
        --top;
        break;
      case Expr::Op::mul:
        stack[top - 1] *= stack[top];
        --top;
        break;
      case Expr::Op::div:
        stack[top - 1] /= stack[top];
        --top;
        break;
      case Expr::Op::pow:
        stack[top - 1] = std::pow(stack[top - 1], stack[top]);
        --top;
        break;
      case Expr::Op::neg:
        stack[top] = -stack[top];
        break;
      case Expr::Op::exp:
        stack[top] = std::exp(stack[top]);
        break;
      case Expr::Op::sin:
        stack[top] = std::sin(stack[top]);
        break;
      case Expr::Op::cos:
        stack[top] = std::cos(stack[top]);
        break;
      case Expr::Op::min: {
        int n = static_cast<int>(ins.arg);
        double v = stack[top - n + 1];
        for (int k = 1; k < n; ++k) v = std::min(v, stack[top - n + 1 + k]);
        top -= n - 1;
        stack[top] = v;
        break;
      }
      case Expr::Op::max: {
        int n = static_cast<int>(ins.arg);
        double v = stack[top - n + 1];
        for (int k = 1; k < n; ++k) v = std::max(v, stack[top - n + 1 + k]);
        top -= n - 1;
        stack[top] = v;
        break;
      }
      case Expr::Op::piecewise: {
        int n = static_cast<int>(ins.arg);  // e1 b1 e2 b2 ... ek
        int base = top - n + 1;
        int branches = (n + 1) / 2;
        double v = stack[base + n - 1];  // default: last branch
        for (int k = 0; k < branches - 1; ++k) {
          if (x < stack[base + 2 * k + 1]) {
            v = stack[base + 2 * k];
            break;
          }
        }
        top = base;
        stack[top] = v;
        break;
      }
    }
  }
  return stack[top];
}

Expr::Expr() {
  auto program = std::make_shared<std::vector<Instruction>>();
  program->push_back({Op::push_literal, 0, 0.0});
  program_ = std::move(program);
  source_ = "0";
}

Expr Expr::parse(const std::string& source) { return ExprParser(source).run(); }

Expr Expr::constant(double value) {
  Expr e;
  auto program = std::make_shared<std::vector<Instruction>>();
  program->push_back({Op::push_literal, 0, value});
  e.program_ = std::move(program);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  e.source_ = buf;
  return e;
}

double Expr::operator()(double x) const {
  return ExprParser::eval_range(*program_, 0, program_->size(), x);
}

}  // namespace branchsim
