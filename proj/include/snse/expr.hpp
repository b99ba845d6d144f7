/// @file expr.hpp
/// Closed expression set for cylindrical Wiener functionals: polynomials,
/// quotients by constants, sin/cos/exp of subexpressions in the variables
/// w1..wm.  Symbolic partial derivatives keep the Malliavin derivative of
/// an initial field exact; everything outside this set is rejected at
/// parse time.

#pragma once

#include <cctype>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace snse {

class Expr {
  public:
    /// Parse against m variables w1..wm.  Grammar: + - * / ^ (integer
    /// powers), sin, cos, exp, parentheses, decimal literals.
    static Expr parse(const std::string& source, std::size_t m);

    static Expr constant(double c) { return Expr(std::make_shared<Node>(Node{Tag::constant, c, 0, {}, {}})); }

    double eval(const std::vector<double>& w) const { return node_->eval(w); }

    /// Partial derivative with respect to w_{l+1} (0-based l).
    Expr diff(std::size_t l) const { return Expr(node_->diff(l)); }

    bool is_zero() const { return node_->tag == Tag::constant && node_->value == 0.0; }

  private:
    enum class Tag { constant, var, add, sub, mul, pow, sin, cos, exp };

    struct Node {
        Tag tag;
        double value = 0;     // constant
        std::size_t index = 0; // var (0-based), or integer exponent for pow
        std::shared_ptr<const Node> a, b;

        double eval(const std::vector<double>& w) const {
            switch (tag) {
                case Tag::constant: return value;
                case Tag::var: return w.at(index);
                case Tag::add: return a->eval(w) + b->eval(w);
                case Tag::sub: return a->eval(w) - b->eval(w);
                case Tag::mul: return a->eval(w) * b->eval(w);
                case Tag::pow: {
                    double base = a->eval(w), r = 1;
                    for (std::size_t k = 0; k < index; ++k) r *= base;
                    return r;
                }
                case Tag::sin: return std::sin(a->eval(w));
                case Tag::cos: return std::cos(a->eval(w));
                case Tag::exp: return std::exp(a->eval(w));
            }
            return 0;
        }

        using P = std::shared_ptr<const Node>;

        static P mk(Tag t, P a, P b) {
            // Light constant folding keeps derivative trees small.
            const bool ac = a && a->tag == Tag::constant, bc = b && b->tag == Tag::constant;
            if (t == Tag::add) {
                if (ac && a->value == 0) return b;
                if (bc && b->value == 0) return a;
                if (ac && bc) return con(a->value + b->value);
            }
            if (t == Tag::sub) {
                if (bc && b->value == 0) return a;
                if (ac && bc) return con(a->value - b->value);
            }
            if (t == Tag::mul) {
                if ((ac && a->value == 0) || (bc && b->value == 0)) return con(0);
                if (ac && a->value == 1) return b;
                if (bc && b->value == 1) return a;
                if (ac && bc) return con(a->value * b->value);
            }
            return std::make_shared<Node>(Node{t, 0, 0, std::move(a), std::move(b)});
        }

        static P con(double c) { return std::make_shared<Node>(Node{Tag::constant, c, 0, {}, {}}); }

        P diff(std::size_t l) const {
            switch (tag) {
                case Tag::constant: return con(0);
                case Tag::var: return con(index == l ? 1.0 : 0.0);
                case Tag::add: return mk(Tag::add, a->diff(l), b->diff(l));
                case Tag::sub: return mk(Tag::sub, a->diff(l), b->diff(l));
                case Tag::mul:
                    return mk(Tag::add, mk(Tag::mul, a->diff(l), b), mk(Tag::mul, a, b->diff(l)));
                case Tag::pow: {
                    if (index == 0) return con(0);
                    auto reduced = std::make_shared<Node>(Node{Tag::pow, 0, index - 1, a, {}});
                    return mk(Tag::mul, mk(Tag::mul, con(double(index)), reduced), a->diff(l));
                }
                case Tag::sin: return mk(Tag::mul, mk(Tag::cos, a, {}), a->diff(l));
                case Tag::cos:
                    return mk(Tag::mul, mk(Tag::mul, con(-1), mk(Tag::sin, a, {})), a->diff(l));
                case Tag::exp: return mk(Tag::mul, mk(Tag::exp, a, {}), a->diff(l));
            }
            return con(0);
        }
    };

    explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

    struct Parser {
        const std::string& s;
        std::size_t pos = 0;
        std::size_t m;

        void skip() {
            while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        }
        bool eat(char c) {
            skip();
            if (pos < s.size() && s[pos] == c) {
                ++pos;
                return true;
            }
            return false;
        }
        [[noreturn]] void fail(const std::string& why) const {
            throw std::invalid_argument("expression '" + s + "': " + why + " at position " +
                                        std::to_string(pos));
        }

        Node::P expr() {
            Node::P acc = term();
            for (;;) {
                if (eat('+')) acc = Node::mk(Tag::add, acc, term());
                else if (eat('-')) acc = Node::mk(Tag::sub, acc, term());
                else return acc;
            }
        }

        Node::P term() {
            Node::P acc = unary();
            for (;;) {
                if (eat('*')) {
                    acc = Node::mk(Tag::mul, acc, unary());
                } else if (eat('/')) {
                    Node::P d = unary();
                    if (d->tag != Tag::constant || d->value == 0)
                        fail("division is only supported by nonzero constants");
                    acc = Node::mk(Tag::mul, acc, Node::con(1.0 / d->value));
                } else {
                    return acc;
                }
            }
        }

        Node::P unary() {
            if (eat('-')) return Node::mk(Tag::mul, Node::con(-1), unary());
            return power();
        }

        Node::P power() {
            Node::P base = atom();
            skip();
            if (!eat('^')) return base;
            skip();
            std::size_t start = pos;
            while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
            if (pos == start) fail("exponent must be a nonnegative integer");
            const auto k = std::size_t(std::stoul(s.substr(start, pos - start)));
            if (k == 0) return Node::con(1);
            return std::make_shared<Node>(Node{Tag::pow, 0, k, base, {}});
        }

        Node::P atom() {
            skip();
            if (pos >= s.size()) fail("unexpected end of input");
            const char c = s[pos];
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
                std::size_t used = 0;
                double v;
                try {
                    v = std::stod(s.substr(pos), &used);
                } catch (const std::exception&) {
                    fail("bad numeric literal");
                }
                pos += used;
                return Node::con(v);
            }
            if (c == '(') {
                ++pos;
                Node::P inner = expr();
                if (!eat(')')) fail("expected ')'");
                return inner;
            }
            if (std::isalpha(static_cast<unsigned char>(c))) {
                std::size_t start = pos;
                while (pos < s.size() && std::isalnum(static_cast<unsigned char>(s[pos]))) ++pos;
                const std::string name = s.substr(start, pos - start);
                if (name.size() >= 2 && name[0] == 'w') {
                    for (std::size_t i = 1; i < name.size(); ++i)
                        if (!std::isdigit(static_cast<unsigned char>(name[i]))) fail("unknown identifier '" + name + "'");
                    const auto idx = std::size_t(std::stoul(name.substr(1)));
                    if (idx < 1 || idx > m)
                        fail("variable '" + name + "' outside w1..w" + std::to_string(m));
                    return std::make_shared<Node>(Node{Tag::var, 0, idx - 1, {}, {}});
                }
                Tag t;
                if (name == "sin") t = Tag::sin;
                else if (name == "cos") t = Tag::cos;
                else if (name == "exp") t = Tag::exp;
                else fail("'" + name + "' is not in the supported expression set");
                if (!eat('(')) fail("expected '(' after " + name);
                Node::P inner = expr();
                if (!eat(')')) fail("expected ')'");
                return Node::mk(t, inner, {});
            }
            fail(std::string("unexpected character '") + c + "'");
        }
    };

    std::shared_ptr<const Node> node_;
};

inline Expr Expr::parse(const std::string& source, std::size_t m) {
    Parser p{source, 0, m};
    Node::P root = p.expr();
    p.skip();
    if (p.pos != source.size()) p.fail("trailing input");
    return Expr(std::move(root));
}

} // namespace snse
