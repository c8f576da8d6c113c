#pragma once

// Potential-function expression language.
//
// Grammar (whitespace-insensitive):
//
//   expr    := term { ("+" | "-") term }
//   term    := unary { ("*" | "/") unary }
//   unary   := "-" unary | power
//   power   := primary [ "^" [ "-" ] number ]
//   primary := number | "x" | "a" digits | func "(" args ")" | "(" expr ")"
//   func    := "ln" | "exp" | "abs"
//   args    := expr { "," expr }
//
// Precedence, loosest to tightest: + -, * /, unary -, ^. So `-x^2` is
// `-(x^2)`. Exponents are numeric literals only. Parameters are a1..aT.

#include <Eigen/Core>

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace entropic {

enum class NodeKind { kNumber, kVariable, kParameter, kAdd, kSub, kMul, kDiv, kNeg, kPow, kLn, kExp, kAbs };

struct Node {
  NodeKind kind = NodeKind::kNumber;
  double number = 0.0;   // literal value, or the exponent for kPow
  int param = 0;         // zero-based parameter index for kParameter
  std::vector<Node> children;

  Node() = default;
  explicit Node(NodeKind k) : kind(k) {}

  friend bool operator==(const Node&, const Node&) = default;
};

// Value with first and second partials with respect to the parameter vector.
struct DualValue {
  double value = 0.0;
  Eigen::VectorXd first;
  Eigen::MatrixXd second;
};

class PotentialExpr {
 public:
  PotentialExpr() = default;

  const Node& root() const { return *root_; }
  int num_params() const noexcept { return num_params_; }
  // Highest parameter index referenced plus one.
  int max_param_used() const noexcept { return max_param_used_; }
  bool depends_on_params() const noexcept { return max_param_used_ > 0; }

  double eval(double x, std::span<const double> alpha) const;
  double eval(double x, const Eigen::VectorXd& alpha) const;
  DualValue eval_dual(double x, std::span<const double> alpha) const;
  DualValue eval_dual(double x, const Eigen::VectorXd& alpha) const;

  // Canonical text. parse_potential(to_string()) yields an identical tree.
  std::string to_string() const;

  friend bool operator==(const PotentialExpr& a, const PotentialExpr& b) {
    return a.num_params_ == b.num_params_ && *a.root_ == *b.root_;
  }

  friend PotentialExpr parse_potential(std::string_view source, int num_params);
  static PotentialExpr from_node(Node root, int num_params);

 private:
  std::shared_ptr<const Node> root_ = std::make_shared<const Node>();
  int num_params_ = 0;
  int max_param_used_ = 0;
};

PotentialExpr parse_potential(std::string_view source, int num_params);

std::string to_string(const Node& node);

}  // namespace entropic
