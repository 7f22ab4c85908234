#pragma once
// Closed-form scalar fields over chart coordinates x1..xm.
//
// Grammar (whitespace insignificant):
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?            right associative
//   primary := number | 'pi' | xK | func '(' args ')' | '(' expr ')'
//   func    := exp log sin cos tan tanh sqrt abs sgn   (one argument)
//            | pow(a, b) | atan2(y, x)
//            | lez(c, a, b)      a where c <= 0, b elsewhere (lazy)
// Variables are 1-based in text (x1..xm) and 0-based in the API.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "error.hpp"

namespace rext {

enum class Op : std::uint8_t {
    Const, Var, Neg, Add, Sub, Mul, Div, Pow, Atan2,
    Exp, Log, Sin, Cos, Tan, Tanh, Sqrt, Abs, Sign, Select
};

struct ExprNode;
using NodePtr = std::shared_ptr<const ExprNode>;

struct ExprNode {
    Op op = Op::Const;
    double value = 0.0;  // Const
    int var = -1;        // Var
    NodePtr a, b, c;
};

/// Immutable expression tree handle. Subtrees are shared, so a tree is really a DAG.
class Expr {
public:
    Expr() : Expr(0.0) {}
    Expr(double v) : node_(make_leaf(v)) {}  // NOLINT(google-explicit-constructor)
    explicit Expr(NodePtr n) : node_(std::move(n)) {}

    static Expr var(int index) {
        auto n = std::make_shared<ExprNode>();
        n->op = Op::Var;
        n->var = index;
        return Expr(NodePtr(std::move(n)));
    }

    const ExprNode& node() const { return *node_; }
    const NodePtr& ptr() const { return node_; }
    Op op() const { return node_->op; }
    bool is_const() const { return node_->op == Op::Const; }
    bool is_const(double v) const { return is_const() && node_->value == v; }
    double const_value() const { return node_->value; }

    /// One past the largest variable index referenced (0 for closed constants).
    int arity() const;

private:
    static NodePtr make_leaf(double v) {
        auto n = std::make_shared<ExprNode>();
        n->op = Op::Const;
        n->value = v;
        return n;
    }
    NodePtr node_;
};

namespace detail {

inline Expr make(Op op, const Expr& a, const Expr& b = Expr(), const Expr& c = Expr()) {
    auto n = std::make_shared<ExprNode>();
    n->op = op;
    n->a = a.ptr();
    if (op == Op::Add || op == Op::Sub || op == Op::Mul || op == Op::Div || op == Op::Pow ||
        op == Op::Atan2 || op == Op::Select)
        n->b = b.ptr();
    if (op == Op::Select) n->c = c.ptr();
    return Expr(NodePtr(std::move(n)));
}

inline const char* unary_name(Op op) {
    switch (op) {
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sin: return "sin";
        case Op::Cos: return "cos";
        case Op::Tan: return "tan";
        case Op::Tanh: return "tanh";
        case Op::Sqrt: return "sqrt";
        case Op::Abs: return "abs";
        case Op::Sign: return "sgn";
        default: return "?";
    }
}

inline bool finite_unary(Op op, double x, double& out) {
    switch (op) {
        case Op::Neg: out = -x; return true;
        case Op::Exp: out = std::exp(x); break;
        case Op::Log: if (!(x > 0)) return false; out = std::log(x); break;
        case Op::Sin: out = std::sin(x); break;
        case Op::Cos: out = std::cos(x); break;
        case Op::Tan: out = std::tan(x); break;
        case Op::Tanh: out = std::tanh(x); break;
        case Op::Sqrt: if (x < 0) return false; out = std::sqrt(x); break;
        case Op::Abs: out = std::fabs(x); break;
        case Op::Sign: if (x == 0) return false; out = x > 0 ? 1.0 : -1.0; break;
        default: return false;
    }
    return std::isfinite(out);
}

inline bool finite_binary(Op op, double x, double y, double& out) {
    switch (op) {
        case Op::Add: out = x + y; break;
        case Op::Sub: out = x - y; break;
        case Op::Mul: out = x * y; break;
        case Op::Div: if (y == 0) return false; out = x / y; break;
        case Op::Pow: out = std::pow(x, y); break;
        case Op::Atan2: if (x == 0 && y == 0) return false; out = std::atan2(x, y); break;
        default: return false;
    }
    return std::isfinite(out);
}

}  // namespace detail

// ---- smart constructors with light constant folding -------------------------

inline Expr operator-(const Expr& a) {
    if (a.is_const()) return Expr(-a.const_value());
    if (a.op() == Op::Neg) return Expr(a.node().a);
    return detail::make(Op::Neg, a);
}

inline Expr operator+(const Expr& a, const Expr& b) {
    if (a.is_const() && b.is_const()) return Expr(a.const_value() + b.const_value());
    if (a.is_const(0.0)) return b;
    if (b.is_const(0.0)) return a;
    return detail::make(Op::Add, a, b);
}

inline Expr operator-(const Expr& a, const Expr& b) {
    if (a.is_const() && b.is_const()) return Expr(a.const_value() - b.const_value());
    if (b.is_const(0.0)) return a;
    if (a.is_const(0.0)) return -b;
    return detail::make(Op::Sub, a, b);
}

inline Expr operator*(const Expr& a, const Expr& b) {
    if (a.is_const() && b.is_const()) return Expr(a.const_value() * b.const_value());
    if (a.is_const(0.0) || b.is_const(0.0)) return Expr(0.0);
    if (a.is_const(1.0)) return b;
    if (b.is_const(1.0)) return a;
    if (a.is_const(-1.0)) return -b;
    if (b.is_const(-1.0)) return -a;
    return detail::make(Op::Mul, a, b);
}

inline Expr operator/(const Expr& a, const Expr& b) {
    if (a.is_const() && b.is_const() && b.const_value() != 0.0)
        return Expr(a.const_value() / b.const_value());
    if (a.is_const(0.0) && !(b.is_const(0.0))) return Expr(0.0);
    if (b.is_const(1.0)) return a;
    return detail::make(Op::Div, a, b);
}

inline Expr pow(const Expr& a, const Expr& b) {
    if (b.is_const(0.0)) return Expr(1.0);
    if (b.is_const(1.0)) return a;
    double v = 0;
    if (a.is_const() && b.is_const() &&
        detail::finite_binary(Op::Pow, a.const_value(), b.const_value(), v))
        return Expr(v);
    return detail::make(Op::Pow, a, b);
}

inline Expr atan2(const Expr& y, const Expr& x) {
    double v = 0;
    if (y.is_const() && x.is_const() && detail::finite_binary(Op::Atan2, y.const_value(), x.const_value(), v))
        return Expr(v);
    return detail::make(Op::Atan2, y, x);
}

inline Expr unary(Op op, const Expr& a) {
    double v = 0;
    if (a.is_const() && detail::finite_unary(op, a.const_value(), v)) return Expr(v);
    return detail::make(op, a);
}

inline Expr exp(const Expr& a) { return unary(Op::Exp, a); }
inline Expr log(const Expr& a) { return unary(Op::Log, a); }
inline Expr sin(const Expr& a) { return unary(Op::Sin, a); }
inline Expr cos(const Expr& a) { return unary(Op::Cos, a); }
inline Expr tan(const Expr& a) { return unary(Op::Tan, a); }
inline Expr tanh(const Expr& a) { return unary(Op::Tanh, a); }
inline Expr sqrt(const Expr& a) { return unary(Op::Sqrt, a); }
inline Expr abs(const Expr& a) { return unary(Op::Abs, a); }
inline Expr sgn(const Expr& a) { return unary(Op::Sign, a); }

/// `when_le` where `cond <= 0`, `otherwise` elsewhere. Only the taken branch is evaluated.
inline Expr select_le0(const Expr& cond, const Expr& when_le, const Expr& otherwise) {
    if (cond.is_const()) return cond.const_value() <= 0 ? when_le : otherwise;
    if (when_le.ptr() == otherwise.ptr()) return when_le;
    return detail::make(Op::Select, cond, when_le, otherwise);
}

// ---- printing ----------------------------------------------------------------

namespace detail {

inline void print_rec(const ExprNode& n, std::ostringstream& os) {
    switch (n.op) {
        case Op::Const: {
            char buf[32];
            auto [end, ec] = std::to_chars(buf, buf + sizeof buf, n.value);
            (void)ec;
            std::string s(buf, end);
            if (n.value < 0) os << '(' << s << ')';
            else os << s;
            return;
        }
        case Op::Var: os << 'x' << (n.var + 1); return;
        case Op::Neg: os << "(-"; print_rec(*n.a, os); os << ')'; return;
        case Op::Add: case Op::Sub: case Op::Mul: case Op::Div: case Op::Pow: {
            const char sym = n.op == Op::Add ? '+' : n.op == Op::Sub ? '-'
                           : n.op == Op::Mul ? '*' : n.op == Op::Div ? '/' : '^';
            os << '(';
            print_rec(*n.a, os);
            os << sym;
            print_rec(*n.b, os);
            os << ')';
            return;
        }
        case Op::Atan2:
            os << "atan2(";
            print_rec(*n.a, os);
            os << ',';
            print_rec(*n.b, os);
            os << ')';
            return;
        case Op::Select:
            os << "lez(";
            print_rec(*n.a, os);
            os << ',';
            print_rec(*n.b, os);
            os << ',';
            print_rec(*n.c, os);
            os << ')';
            return;
        default:
            os << unary_name(n.op) << '(';
            print_rec(*n.a, os);
            os << ')';
            return;
    }
}

}  // namespace detail

/// Text that parses back to an expression with identical values.
inline std::string to_string(const Expr& e) {
    std::ostringstream os;
    detail::print_rec(e.node(), os);
    return os.str();
}

inline int Expr::arity() const {
    std::unordered_map<const ExprNode*, int> seen;
    std::function<int(const ExprNode*)> rec = [&](const ExprNode* n) -> int {
        if (!n) return 0;
        if (auto it = seen.find(n); it != seen.end()) return it->second;
        int r = n->op == Op::Var ? n->var + 1 : 0;
        r = std::max({r, rec(n->a.get()), rec(n->b.get()), rec(n->c.get())});
        seen.emplace(n, r);
        return r;
    };
    return rec(node_.get());
}

// ---- evaluation --------------------------------------------------------------

namespace detail {

inline double eval_rec(const ExprNode& n, std::span<const double> p) {
    switch (n.op) {
        case Op::Const: return n.value;
        case Op::Var: return p[static_cast<std::size_t>(n.var)];
        case Op::Select:
            return eval_rec(*n.a, p) <= 0 ? eval_rec(*n.b, p) : eval_rec(*n.c, p);
        case Op::Add: case Op::Sub: case Op::Mul: case Op::Div: case Op::Pow: case Op::Atan2: {
            const double x = eval_rec(*n.a, p);
            const double y = eval_rec(*n.b, p);
            double out = 0;
            if (!finite_binary(n.op, x, y, out)) {
                std::ostringstream os;
                print_rec(n, os);
                throw DomainError("domain error in " + os.str());
            }
            return out;
        }
        default: {
            const double x = eval_rec(*n.a, p);
            double out = 0;
            if (!finite_unary(n.op, x, out)) {
                std::ostringstream os;
                print_rec(n, os);
                throw DomainError((n.op == Op::Sign ? "non-differentiable point in "
                                                    : "domain error in ") + os.str());
            }
            return out;
        }
    }
}

}  // namespace detail

/// Evaluates at `p`; throws DomainError naming the offending node.
inline double eval(const Expr& e, std::span<const double> p) {
    return detail::eval_rec(e.node(), p);
}

inline double eval(const Expr& e, std::initializer_list<double> p) {
    return eval(e, std::span<const double>(p.begin(), p.size()));
}

// ---- substitution and differentiation ------------------------------------------

/// Replaces each variable x_i by `images[i]`. Sharing is preserved.
inline Expr substitute(const Expr& e, std::span<const Expr> images) {
    std::unordered_map<const ExprNode*, Expr> memo;
    std::function<Expr(const NodePtr&)> rec = [&](const NodePtr& np) -> Expr {
        const ExprNode& n = *np;
        if (auto it = memo.find(&n); it != memo.end()) return it->second;
        Expr r;
        switch (n.op) {
            case Op::Const: r = Expr(np); break;
            case Op::Var:
                if (static_cast<std::size_t>(n.var) >= images.size())
                    throw Error("substitute: variable x" + std::to_string(n.var + 1) +
                                " has no image");
                r = images[static_cast<std::size_t>(n.var)];
                break;
            case Op::Neg: r = -rec(n.a); break;
            case Op::Add: r = rec(n.a) + rec(n.b); break;
            case Op::Sub: r = rec(n.a) - rec(n.b); break;
            case Op::Mul: r = rec(n.a) * rec(n.b); break;
            case Op::Div: r = rec(n.a) / rec(n.b); break;
            case Op::Pow: r = pow(rec(n.a), rec(n.b)); break;
            case Op::Atan2: r = atan2(rec(n.a), rec(n.b)); break;
            case Op::Select: r = select_le0(rec(n.a), rec(n.b), rec(n.c)); break;
            default: r = unary(n.op, rec(n.a)); break;
        }
        memo.emplace(&n, r);
        return r;
    };
    return rec(e.ptr());
}

/// Symbolic partial derivative with respect to x_var (0-based).
/// abs differentiates to sgn, which raises DomainError when evaluated at 0.
inline Expr diff(const Expr& e, int var) {
    std::unordered_map<const ExprNode*, Expr> memo;
    std::function<Expr(const NodePtr&)> rec = [&](const NodePtr& np) -> Expr {
        const ExprNode& n = *np;
        if (auto it = memo.find(&n); it != memo.end()) return it->second;
        const Expr a = n.a ? Expr(n.a) : Expr();
        const Expr b = n.b ? Expr(n.b) : Expr();
        Expr r;
        switch (n.op) {
            case Op::Const: r = Expr(0.0); break;
            case Op::Var: r = Expr(n.var == var ? 1.0 : 0.0); break;
            case Op::Neg: r = -rec(n.a); break;
            case Op::Add: r = rec(n.a) + rec(n.b); break;
            case Op::Sub: r = rec(n.a) - rec(n.b); break;
            case Op::Mul: r = rec(n.a) * b + a * rec(n.b); break;
            case Op::Div: r = (rec(n.a) * b - a * rec(n.b)) / (b * b); break;
            case Op::Pow: {
                const Expr db = rec(n.b);
                if (db.is_const(0.0)) {
                    r = b * pow(a, b - Expr(1.0)) * rec(n.a);
                } else {
                    r = Expr(np) * (db * log(a) + b * rec(n.a) / a);
                }
                break;
            }
            case Op::Atan2: r = (b * rec(n.a) - a * rec(n.b)) / (a * a + b * b); break;
            case Op::Exp: r = Expr(np) * rec(n.a); break;
            case Op::Log: r = rec(n.a) / a; break;
            case Op::Sin: r = cos(a) * rec(n.a); break;
            case Op::Cos: r = -(sin(a) * rec(n.a)); break;
            case Op::Tan: r = (Expr(1.0) + Expr(np) * Expr(np)) * rec(n.a); break;
            case Op::Tanh: r = (Expr(1.0) - Expr(np) * Expr(np)) * rec(n.a); break;
            case Op::Sqrt: r = rec(n.a) / (Expr(2.0) * Expr(np)); break;
            case Op::Abs: r = sgn(a) * rec(n.a); break;
            case Op::Sign: {
                // zero away from the jump; the jump itself raises through sgn
                r = detail::make(Op::Mul, Expr(0.0), sgn(a));
                break;
            }
            case Op::Select:
                r = select_le0(a, rec(n.b), rec(n.c));
                break;
        }
        memo.emplace(&n, r);
        return r;
    };
    return rec(e.ptr());
}

// ---- parsing -----------------------------------------------------------------

namespace detail {

class Parser {
public:
    Parser(std::string_view text, int dim) : s_(text), dim_(dim) {}

    Expr parse() {
        if (s_.find_first_not_of(" \t\r\n") == std::string_view::npos)
            throw SyntaxError("empty expression", 0);
        Expr e = expr();
        skip();
        if (pos_ != s_.size()) throw SyntaxError("unexpected character", pos_);
        return e;
    }

private:
    void skip() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' ||
                                    s_[pos_] == '\r'))
            ++pos_;
    }
    bool eat(char c) {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (!eat(c)) throw SyntaxError(std::string("expected '") + c + "'", pos_);
    }

    Expr expr() {
        Expr lhs = term();
        for (;;) {
            if (eat('+')) lhs = lhs + term();
            else if (eat('-')) lhs = lhs - term();
            else return lhs;
        }
    }
    Expr term() {
        Expr lhs = unary_();
        for (;;) {
            if (eat('*')) lhs = lhs * unary_();
            else if (eat('/')) lhs = lhs / unary_();
            else return lhs;
        }
    }
    Expr unary_() {
        if (eat('-')) return -unary_();
        if (eat('+')) return unary_();
        return power();
    }
    Expr power() {
        Expr base = primary();
        if (eat('^')) return rext::pow(base, unary_());
        return base;
    }
    Expr primary() {
        skip();
        if (pos_ >= s_.size()) throw SyntaxError("unexpected end of input", pos_);
        const char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = expr();
            expect(')');
            return e;
        }
        if ((c >= '0' && c <= '9') || c == '.') {
            double v = 0;
            auto [ptr, ec] = std::from_chars(s_.data() + pos_, s_.data() + s_.size(), v);
            if (ec != std::errc()) throw SyntaxError("bad number", pos_);
            pos_ = static_cast<std::size_t>(ptr - s_.data());
            return Expr(v);
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            const std::size_t start = pos_;
            while (pos_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            const std::string_view id = s_.substr(start, pos_ - start);
            if (id == "pi") return Expr(M_PI);
            if (id.size() >= 2 && id[0] == 'x' &&
                id.find_first_not_of("0123456789", 1) == std::string_view::npos) {
                int k = 0;
                std::from_chars(id.data() + 1, id.data() + id.size(), k);
                if (k < 1 || k > dim_)
                    throw SyntaxError("variable index out of range: " + std::string(id), start);
                return Expr::var(k - 1);
            }
            static const std::unordered_map<std::string_view, Op> unaries = {
                {"exp", Op::Exp}, {"log", Op::Log}, {"sin", Op::Sin}, {"cos", Op::Cos},
                {"tan", Op::Tan}, {"tanh", Op::Tanh}, {"sqrt", Op::Sqrt}, {"abs", Op::Abs},
                {"sgn", Op::Sign}};
            if (auto it = unaries.find(id); it != unaries.end()) {
                expect('(');
                Expr a = expr();
                expect(')');
                return unary(it->second, a);
            }
            if (id == "pow") {
                expect('(');
                Expr a = expr();
                expect(',');
                Expr b = expr();
                expect(')');
                return rext::pow(a, b);
            }
            if (id == "atan2") {
                expect('(');
                Expr a = expr();
                expect(',');
                Expr b = expr();
                expect(')');
                return rext::atan2(a, b);
            }
            if (id == "lez") {
                expect('(');
                Expr cnd = expr();
                expect(',');
                Expr a = expr();
                expect(',');
                Expr b = expr();
                expect(')');
                return select_le0(cnd, a, b);
            }
            throw SyntaxError("unknown identifier '" + std::string(id) + "'", start);
        }
        throw SyntaxError("unexpected character", pos_);
    }

    std::string_view s_;
    int dim_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses `text` over variables x1..x`dim`.
inline Expr parse_expr(std::string_view text, int dim) {
    return detail::Parser(text, dim).parse();
}

}  // namespace rext
