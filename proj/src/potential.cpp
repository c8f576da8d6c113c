#include "entropic/potential.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <sstream>
#include <utility>

#include "entropic/errors.hpp"

namespace entropic {

SyntaxError::SyntaxError(std::size_t position, std::vector<std::string> expected,
                         const std::string& found)
    : ValidationError([&] {
        std::ostringstream os;
        os << "syntax error at position " << position << ": found " << found << ", expected ";
        for (std::size_t i = 0; i < expected.size(); ++i) {
          os << (i ? ", " : "") << expected[i];
        }
        return os.str();
      }()),
      position_(position),
      expected_(std::move(expected)) {}

ConfigError::ConfigError(std::string path, const std::string& message)
    : ValidationError(path + ": " + message), path_(std::move(path)) {}

namespace {

// ---------------------------------------------------------------- lexing

enum class Tok { kNumber, kIdent, kPlus, kMinus, kStar, kSlash, kCaret, kLParen, kRParen, kComma, kEnd };

struct Token {
  Tok kind;
  std::size_t pos;
  std::string text;
  double number = 0.0;
};

std::string describe(const Token& t) {
  switch (t.kind) {
    case Tok::kEnd: return "end of input";
    case Tok::kNumber: return "number '" + t.text + "'";
    case Tok::kIdent: return "identifier '" + t.text + "'";
    default: return "'" + t.text + "'";
  }
}

std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      while (i < src.size() && (std::isdigit(static_cast<unsigned char>(src[i])) || src[i] == '.')) ++i;
      if (i < src.size() && (src[i] == 'e' || src[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < src.size() && (src[j] == '+' || src[j] == '-')) ++j;
        if (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) {
          i = j;
          while (i < src.size() && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
        }
      }
      Token t{Tok::kNumber, start, std::string(src.substr(start, i - start))};
      const auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
      if (ec != std::errc() || ptr != t.text.data() + t.text.size() || !std::isfinite(t.number)) {
        throw SyntaxError(start, {"finite number"}, "'" + t.text + "'");
      }
      out.push_back(std::move(t));
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (i < src.size() && (std::isalnum(static_cast<unsigned char>(src[i])) || src[i] == '_')) ++i;
      out.push_back({Tok::kIdent, start, std::string(src.substr(start, i - start))});
      continue;
    }
    Tok kind;
    switch (c) {
      case '+': kind = Tok::kPlus; break;
      case '-': kind = Tok::kMinus; break;
      case '*': kind = Tok::kStar; break;
      case '/': kind = Tok::kSlash; break;
      case '^': kind = Tok::kCaret; break;
      case '(': kind = Tok::kLParen; break;
      case ')': kind = Tok::kRParen; break;
      case ',': kind = Tok::kComma; break;
      default:
        throw SyntaxError(start, {"operator", "operand"}, std::string("character '") + c + "'");
    }
    out.push_back({kind, start, std::string(1, c)});
    ++i;
  }
  out.push_back({Tok::kEnd, src.size(), ""});
  return out;
}

// ---------------------------------------------------------------- parsing

const std::vector<std::string> kOperandStart = {"number", "x", "parameter a1..aT", "ln", "exp", "abs", "(", "-"};

class Parser {
 public:
  Parser(std::vector<Token> tokens, int num_params) : toks_(std::move(tokens)), num_params_(num_params) {}

  Node parse() {
    Node n = expr();
    if (peek().kind != Tok::kEnd) {
      throw SyntaxError(peek().pos, {"+", "-", "*", "/", "^", "end of input"}, describe(peek()));
    }
    return n;
  }

 private:
  const Token& peek() const { return toks_[i_]; }
  const Token& next() { return toks_[i_++]; }
  bool accept(Tok k) {
    if (peek().kind != k) return false;
    ++i_;
    return true;
  }
  void expect(Tok k, const char* what) {
    if (!accept(k)) throw SyntaxError(peek().pos, {what}, describe(peek()));
  }

  static Node binary(NodeKind k, Node a, Node b) {
    Node n{k};
    n.children.push_back(std::move(a));
    n.children.push_back(std::move(b));
    return n;
  }

  Node expr() {
    Node lhs = term();
    for (;;) {
      if (accept(Tok::kPlus)) {
        lhs = binary(NodeKind::kAdd, std::move(lhs), term());
      } else if (accept(Tok::kMinus)) {
        lhs = binary(NodeKind::kSub, std::move(lhs), term());
      } else {
        return lhs;
      }
    }
  }

  Node term() {
    Node lhs = unary();
    for (;;) {
      if (accept(Tok::kStar)) {
        lhs = binary(NodeKind::kMul, std::move(lhs), unary());
      } else if (accept(Tok::kSlash)) {
        lhs = binary(NodeKind::kDiv, std::move(lhs), unary());
      } else {
        return lhs;
      }
    }
  }

  Node unary() {
    if (accept(Tok::kMinus)) {
      Node n{NodeKind::kNeg};
      n.children.push_back(unary());
      return n;
    }
    return power();
  }

  Node power() {
    Node base = primary();
    if (!accept(Tok::kCaret)) return base;
    const bool negative = accept(Tok::kMinus);
    if (peek().kind != Tok::kNumber) {
      throw SyntaxError(peek().pos, {"numeric exponent"}, describe(peek()));
    }
    Node n{NodeKind::kPow};
    n.number = negative ? -next().number : next().number;
    n.children.push_back(std::move(base));
    if (peek().kind == Tok::kCaret) {
      throw SyntaxError(peek().pos, {"+", "-", "*", "/", ")", "end of input"}, describe(peek()));
    }
    return n;
  }

  Node primary() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::kNumber: {
        Node n{NodeKind::kNumber};
        n.number = next().number;
        return n;
      }
      case Tok::kLParen: {
        next();
        Node n = expr();
        expect(Tok::kRParen, ")");
        return n;
      }
      case Tok::kIdent:
        return identifier();
      default:
        throw SyntaxError(t.pos, kOperandStart, describe(t));
    }
  }

  Node identifier() {
    const Token t = next();
    if (t.text == "x") return Node{NodeKind::kVariable};
    if (t.text == "ln" || t.text == "exp" || t.text == "abs") {
      const NodeKind k = t.text == "ln" ? NodeKind::kLn : t.text == "exp" ? NodeKind::kExp : NodeKind::kAbs;
      expect(Tok::kLParen, "(");
      std::vector<Node> args;
      if (peek().kind != Tok::kRParen) {
        args.push_back(expr());
        while (accept(Tok::kComma)) args.push_back(expr());
      }
      expect(Tok::kRParen, ")");
      if (args.size() != 1) {
        throw ArityError(t.text + " takes 1 argument, got " + std::to_string(args.size()) +
                         " (position " + std::to_string(t.pos) + ")");
      }
      Node n{k};
      n.children = std::move(args);
      return n;
    }
    if (t.text.size() > 1 && t.text[0] == 'a' &&
        std::all_of(t.text.begin() + 1, t.text.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      int index = 0;
      const auto [ptr, ec] = std::from_chars(t.text.data() + 1, t.text.data() + t.text.size(), index);
      if (ec == std::errc() && index >= 1 && index <= num_params_) {
        Node n{NodeKind::kParameter};
        n.param = index - 1;
        return n;
      }
      throw UnknownSymbol("parameter '" + t.text + "' at position " + std::to_string(t.pos) +
                          " is outside a1..a" + std::to_string(num_params_));
    }
    throw UnknownSymbol("unknown symbol '" + t.text + "' at position " + std::to_string(t.pos));
  }

  std::vector<Token> toks_;
  std::size_t i_ = 0;
  int num_params_;
};

int max_param(const Node& n) {
  int m = n.kind == NodeKind::kParameter ? n.param + 1 : 0;
  for (const Node& c : n.children) m = std::max(m, max_param(c));
  return m;
}

void check_tree(const Node& n, int num_params) {
  switch (n.kind) {
    case NodeKind::kNumber:
      if (!(n.number >= 0.0) || !std::isfinite(n.number)) {
        throw ValidationError("number literals must be finite and non-negative");
      }
      break;
    case NodeKind::kParameter:
      if (n.param < 0 || n.param >= num_params) {
        throw UnknownSymbol("parameter a" + std::to_string(n.param + 1) + " is outside a1..a" +
                            std::to_string(num_params));
      }
      break;
    default:
      break;
  }
  std::size_t arity = 0;
  switch (n.kind) {
    case NodeKind::kAdd: case NodeKind::kSub: case NodeKind::kMul: case NodeKind::kDiv: arity = 2; break;
    case NodeKind::kNeg: case NodeKind::kPow: case NodeKind::kLn: case NodeKind::kExp: case NodeKind::kAbs: arity = 1; break;
    default: arity = 0;
  }
  if (n.children.size() != arity) throw ArityError("malformed expression node");
  for (const Node& c : n.children) check_tree(c, num_params);
}

// ---------------------------------------------------------------- printing

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

bool is_atom(const Node& n) {
  switch (n.kind) {
    case NodeKind::kNumber: case NodeKind::kVariable: case NodeKind::kParameter:
    case NodeKind::kLn: case NodeKind::kExp: case NodeKind::kAbs:
      return true;
    default:
      return false;
  }
}

void print(const Node& n, std::string& out);

void print_wrapped(const Node& n, std::string& out) {
  if (is_atom(n)) {
    print(n, out);
  } else {
    out += '(';
    print(n, out);
    out += ')';
  }
}

void print(const Node& n, std::string& out) {
  auto bin = [&](const char* op) {
    print_wrapped(n.children[0], out);
    out += op;
    print_wrapped(n.children[1], out);
  };
  auto fn = [&](const char* name) {
    out += name;
    out += '(';
    print(n.children[0], out);
    out += ')';
  };
  switch (n.kind) {
    case NodeKind::kNumber: out += format_number(n.number); break;
    case NodeKind::kVariable: out += 'x'; break;
    case NodeKind::kParameter: out += 'a' + std::to_string(n.param + 1); break;
    case NodeKind::kAdd: bin(" + "); break;
    case NodeKind::kSub: bin(" - "); break;
    case NodeKind::kMul: bin(" * "); break;
    case NodeKind::kDiv: bin(" / "); break;
    case NodeKind::kNeg:
      out += '-';
      print_wrapped(n.children[0], out);
      break;
    case NodeKind::kPow:
      print_wrapped(n.children[0], out);
      out += '^';
      out += format_number(n.number);
      break;
    case NodeKind::kLn: fn("ln"); break;
    case NodeKind::kExp: fn("exp"); break;
    case NodeKind::kAbs: fn("abs"); break;
  }
}

// ---------------------------------------------------------------- evaluation

[[noreturn]] void domain_fail(const Node& n, const std::string& why) {
  throw DomainError(why + " in '" + to_string(n) + "'");
}

double checked(const Node& n, double v) {
  if (!std::isfinite(v)) domain_fail(n, "non-finite result");
  return v;
}

void check_pow(const Node& n, double base) {
  const double e = n.number;
  if (base < 0.0 && e != std::floor(e)) domain_fail(n, "negative base with non-integer exponent");
  if (base == 0.0 && e < 0.0) domain_fail(n, "zero base with negative exponent");
}

double eval_node(const Node& n, double x, std::span<const double> a) {
  switch (n.kind) {
    case NodeKind::kNumber: return n.number;
    case NodeKind::kVariable: return x;
    case NodeKind::kParameter: return a[static_cast<std::size_t>(n.param)];
    case NodeKind::kAdd: return checked(n, eval_node(n.children[0], x, a) + eval_node(n.children[1], x, a));
    case NodeKind::kSub: return checked(n, eval_node(n.children[0], x, a) - eval_node(n.children[1], x, a));
    case NodeKind::kMul: return checked(n, eval_node(n.children[0], x, a) * eval_node(n.children[1], x, a));
    case NodeKind::kDiv: {
      const double num = eval_node(n.children[0], x, a);
      const double den = eval_node(n.children[1], x, a);
      if (den == 0.0) domain_fail(n, "division by zero");
      return checked(n, num / den);
    }
    case NodeKind::kNeg: return -eval_node(n.children[0], x, a);
    case NodeKind::kPow: {
      const double b = eval_node(n.children[0], x, a);
      check_pow(n, b);
      return checked(n, std::pow(b, n.number));
    }
    case NodeKind::kLn: {
      const double v = eval_node(n.children[0], x, a);
      if (!(v > 0.0)) domain_fail(n, "logarithm of non-positive value");
      return std::log(v);
    }
    case NodeKind::kExp: return checked(n, std::exp(eval_node(n.children[0], x, a)));
    case NodeKind::kAbs: return std::abs(eval_node(n.children[0], x, a));
  }
  return 0.0;
}

// Forward-mode value with gradient and Hessian; `constant` marks subtrees
// free of parameters so their derivative arithmetic is skipped.
struct Dual {
  double v = 0.0;
  Eigen::VectorXd g;
  Eigen::MatrixXd h;
  bool constant = true;
};

class DualEvaluator {
 public:
  DualEvaluator(double x, std::span<const double> a) : x_(x), a_(a), dim_(static_cast<Eigen::Index>(a.size())) {}

  Dual run(const Node& n) {
    Dual d = eval(n);
    if (d.constant) {
      d.g = Eigen::VectorXd::Zero(dim_);
      d.h = Eigen::MatrixXd::Zero(dim_, dim_);
    }
    return d;
  }

 private:
  Dual constant(double v) const { return Dual{v, {}, {}, true}; }

  void ensure(Dual& d) const {
    if (d.constant) {
      d.g = Eigen::VectorXd::Zero(dim_);
      d.h = Eigen::MatrixXd::Zero(dim_, dim_);
    }
  }

  // Chain rule for a scalar function with derivatives f1, f2 at the argument.
  Dual chain(Dual u, double value, double f1, double f2) const {
    if (u.constant) return constant(value);
    Dual r;
    r.v = value;
    r.constant = false;
    r.h = f1 * u.h;
    if (f2 != 0.0) r.h.noalias() += f2 * (u.g * u.g.transpose());
    r.g = f1 * u.g;
    return r;
  }

  Dual eval(const Node& n) {
    switch (n.kind) {
      case NodeKind::kNumber: return constant(n.number);
      case NodeKind::kVariable: return constant(x_);
      case NodeKind::kParameter: {
        Dual d;
        d.v = a_[static_cast<std::size_t>(n.param)];
        d.constant = false;
        d.g = Eigen::VectorXd::Unit(dim_, n.param);
        d.h = Eigen::MatrixXd::Zero(dim_, dim_);
        return d;
      }
      case NodeKind::kAdd:
      case NodeKind::kSub: {
        Dual l = eval(n.children[0]);
        Dual r = eval(n.children[1]);
        const bool add = n.kind == NodeKind::kAdd;
        const double v = checked(n, add ? l.v + r.v : l.v - r.v);
        if (l.constant && r.constant) return constant(v);
        ensure(l);
        ensure(r);
        Dual o;
        o.v = v;
        o.constant = false;
        o.g = add ? Eigen::VectorXd(l.g + r.g) : Eigen::VectorXd(l.g - r.g);
        o.h = add ? Eigen::MatrixXd(l.h + r.h) : Eigen::MatrixXd(l.h - r.h);
        return o;
      }
      case NodeKind::kMul: {
        Dual l = eval(n.children[0]);
        Dual r = eval(n.children[1]);
        const double v = checked(n, l.v * r.v);
        if (l.constant && r.constant) return constant(v);
        if (l.constant) return scale(r, l.v, v);
        if (r.constant) return scale(l, r.v, v);
        Dual o;
        o.v = v;
        o.constant = false;
        o.g = r.v * l.g + l.v * r.g;
        o.h = r.v * l.h + l.v * r.h;
        o.h.noalias() += l.g * r.g.transpose();
        o.h.noalias() += r.g * l.g.transpose();
        return o;
      }
      case NodeKind::kDiv: {
        Dual l = eval(n.children[0]);
        Dual r = eval(n.children[1]);
        if (r.v == 0.0) domain_fail(n, "division by zero");
        const double v = checked(n, l.v / r.v);
        if (l.constant && r.constant) return constant(v);
        if (r.constant) return scale(l, 1.0 / r.v, v);
        // l * (1/r), with 1/r carried by the chain rule.
        const double inv = 1.0 / r.v;
        Dual rec = chain(r, inv, -inv * inv, 2.0 * inv * inv * inv);
        if (l.constant) return scale(rec, l.v, v);
        Dual o;
        o.v = v;
        o.constant = false;
        o.g = rec.v * l.g + l.v * rec.g;
        o.h = rec.v * l.h + l.v * rec.h;
        o.h.noalias() += l.g * rec.g.transpose();
        o.h.noalias() += rec.g * l.g.transpose();
        return o;
      }
      case NodeKind::kNeg: {
        Dual u = eval(n.children[0]);
        u.v = -u.v;
        if (!u.constant) {
          u.g = -u.g;
          u.h = -u.h;
        }
        return u;
      }
      case NodeKind::kPow: {
        Dual u = eval(n.children[0]);
        check_pow(n, u.v);
        const double e = n.number;
        const double v = checked(n, std::pow(u.v, e));
        if (u.constant) return constant(v);
        const double f1 = e == 0.0 ? 0.0 : e * std::pow(u.v, e - 1.0);
        const double f2 = (e == 0.0 || e == 1.0) ? 0.0 : e * (e - 1.0) * std::pow(u.v, e - 2.0);
        if (!std::isfinite(f1) || !std::isfinite(f2)) domain_fail(n, "non-differentiable power");
        return chain(std::move(u), v, f1, f2);
      }
      case NodeKind::kLn: {
        Dual u = eval(n.children[0]);
        if (!(u.v > 0.0)) domain_fail(n, "logarithm of non-positive value");
        const double inv = 1.0 / u.v;
        return chain(std::move(u), std::log(u.v), inv, -inv * inv);
      }
      case NodeKind::kExp: {
        Dual u = eval(n.children[0]);
        const double v = checked(n, std::exp(u.v));
        return chain(std::move(u), v, v, v);
      }
      case NodeKind::kAbs: {
        Dual u = eval(n.children[0]);
        // Subgradient 0 at the kink.
        const double s = u.v > 0.0 ? 1.0 : (u.v < 0.0 ? -1.0 : 0.0);
        return chain(std::move(u), std::abs(u.v), s, 0.0);
      }
    }
    return constant(0.0);
  }

  Dual scale(Dual u, double factor, double value) const {
    u.v = value;
    u.g *= factor;
    u.h *= factor;
    return u;
  }

  double x_;
  std::span<const double> a_;
  Eigen::Index dim_;
};

void check_alpha(const PotentialExpr& e, std::size_t size) {
  if (size != static_cast<std::size_t>(e.num_params())) {
    throw DimensionError("parameter vector has " + std::to_string(size) + " entries, expression declares " +
                         std::to_string(e.num_params()));
  }
}

}  // namespace

std::string to_string(const Node& node) {
  std::string out;
  print(node, out);
  return out;
}

PotentialExpr parse_potential(std::string_view source, int num_params) {
  if (num_params < 0) throw ValidationError("num_params must be non-negative");
  Parser parser(tokenize(source), num_params);
  return PotentialExpr::from_node(parser.parse(), num_params);
}

PotentialExpr PotentialExpr::from_node(Node root, int num_params) {
  if (num_params < 0) throw ValidationError("num_params must be non-negative");
  check_tree(root, num_params);
  PotentialExpr e;
  e.max_param_used_ = max_param(root);
  e.root_ = std::make_shared<const Node>(std::move(root));
  e.num_params_ = num_params;
  return e;
}

double PotentialExpr::eval(double x, std::span<const double> alpha) const {
  check_alpha(*this, alpha.size());
  return eval_node(*root_, x, alpha);
}

double PotentialExpr::eval(double x, const Eigen::VectorXd& alpha) const {
  return eval(x, std::span<const double>(alpha.data(), static_cast<std::size_t>(alpha.size())));
}

DualValue PotentialExpr::eval_dual(double x, std::span<const double> alpha) const {
  check_alpha(*this, alpha.size());
  Dual d = DualEvaluator(x, alpha).run(*root_);
  return DualValue{d.v, std::move(d.g), std::move(d.h)};
}

DualValue PotentialExpr::eval_dual(double x, const Eigen::VectorXd& alpha) const {
  return eval_dual(x, std::span<const double>(alpha.data(), static_cast<std::size_t>(alpha.size())));
}

std::string PotentialExpr::to_string() const { return entropic::to_string(*root_); }

}  // namespace entropic
