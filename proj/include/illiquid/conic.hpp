#pragma once

#include <cmath>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "illiquid/errors.hpp"
#include "illiquid/linalg.hpp"

namespace illiquid {

/// sum_k coef_k * x[var_k] + constant
struct AffineExpr {
    std::vector<std::pair<int, double>> terms;
    double constant = 0.0;

    AffineExpr() = default;
    explicit AffineExpr(double c) : constant(c) {}

    static AffineExpr variable(int index, double coef = 1.0) {
        AffineExpr e;
        e.terms.emplace_back(index, coef);
        return e;
    }

    AffineExpr& add(int index, double coef) {
        if (coef != 0.0) terms.emplace_back(index, coef);
        return *this;
    }

    AffineExpr& add(const AffineExpr& other, double scale = 1.0) {
        for (const auto& [i, c] : other.terms) add(i, scale * c);
        constant += scale * other.constant;
        return *this;
    }

    double evaluate(const Vector& x) const {
        double v = constant;
        for (const auto& [i, c] : terms) v += c * x[i];
        return v;
    }
};

/// || v ||_2 <= t
struct SocConstraint {
    AffineExpr t;
    std::vector<AffineExpr> v;
    std::string label;
};

/// weight * sum_k rows_k(x)^2; convex by construction since weight >= 0.
struct QuadraticTerm {
    double weight = 0.0;
    std::vector<AffineExpr> rows;
    std::string label;
};

enum class ObjectiveSense { minimize, maximize };

/// Solver-independent description of a second-order cone program with optional
/// quadratic objective terms kept in factor form.
class ConicProgram {
public:
    int add_variable(const std::string& name) {
        if (index_.count(name) != 0) throw ArgumentError("duplicate variable name '" + name + "'");
        const int idx = static_cast<int>(names_.size());
        names_.push_back(name);
        index_.emplace(name, idx);
        objective_.push_back(0.0);
        return idx;
    }

    int num_variables() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }
    const std::string& name(int i) const { return names_.at(static_cast<std::size_t>(i)); }

    std::optional<int> find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    int index(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ArgumentError("unknown variable '" + name + "'");
        return it->second;
    }

    ObjectiveSense sense() const { return sense_; }
    void set_sense(ObjectiveSense s) { sense_ = s; }

    void add_objective(int var, double coef) { objective_.at(static_cast<std::size_t>(var)) += coef; }
    void add_objective(const AffineExpr& e, double scale = 1.0) {
        for (const auto& [i, c] : e.terms) add_objective(i, scale * c);
        objective_constant_ += scale * e.constant;
    }
    void add_objective_constant(double c) { objective_constant_ += c; }

    /// Adds weight * ||rows||^2 to a minimization objective (or subtracts it from a
    /// maximization objective), keeping the program convex.
    void add_quadratic(QuadraticTerm q) {
        if (!(q.weight >= 0.0)) throw NonconvexityError("quadratic term '" + q.label + "' has negative weight");
        quadratics_.push_back(std::move(q));
    }

    void add_equality(AffineExpr e, std::string label = {}) { equalities_.push_back({std::move(e), std::move(label)}); }
    void add_nonnegative(AffineExpr e, std::string label = {}) { nonnegatives_.push_back({std::move(e), std::move(label)}); }
    void add_soc(AffineExpr t, std::vector<AffineExpr> v, std::string label = {}) {
        socs_.push_back({std::move(t), std::move(v), std::move(label)});
    }

    struct Labeled {
        AffineExpr expr;
        std::string label;
    };

    const std::vector<double>& objective() const { return objective_; }
    double objective_constant() const { return objective_constant_; }
    const std::vector<QuadraticTerm>& quadratics() const { return quadratics_; }
    const std::vector<Labeled>& equalities() const { return equalities_; }
    const std::vector<Labeled>& nonnegatives() const { return nonnegatives_; }
    const std::vector<SocConstraint>& socs() const { return socs_; }

    /// Structural convexity audit. Throws on malformed programs.
    void validate() const {
        const int n = num_variables();
        auto check = [n](const AffineExpr& e, const std::string& where) {
            if (!std::isfinite(e.constant)) throw ArgumentError(where + ": non-finite constant");
            for (const auto& [i, c] : e.terms) {
                if (i < 0 || i >= n) throw ArgumentError(where + ": variable index out of range");
                if (!std::isfinite(c)) throw ArgumentError(where + ": non-finite coefficient");
            }
        };
        for (double c : objective_) {
            if (!std::isfinite(c)) throw ArgumentError("objective: non-finite coefficient");
        }
        for (const auto& q : quadratics_) {
            if (!(q.weight >= 0.0) || !std::isfinite(q.weight)) throw NonconvexityError("quadratic '" + q.label + "' weight");
            for (const auto& r : q.rows) check(r, "quadratic '" + q.label + "'");
        }
        for (const auto& e : equalities_) check(e.expr, "equality '" + e.label + "'");
        for (const auto& e : nonnegatives_) check(e.expr, "inequality '" + e.label + "'");
        for (const auto& s : socs_) {
            check(s.t, "cone '" + s.label + "'");
            for (const auto& v : s.v) check(v, "cone '" + s.label + "'");
        }
    }

    /// Objective in the program's own sense at point x.
    double evaluate_objective(const Vector& x) const {
        double v = objective_constant_;
        for (int i = 0; i < num_variables(); ++i) v += objective_[static_cast<std::size_t>(i)] * x[i];
        double q = 0.0;
        for (const auto& term : quadratics_) {
            double acc = 0.0;
            for (const auto& r : term.rows) acc += r.evaluate(x) * r.evaluate(x);
            q += term.weight * acc;
        }
        return sense_ == ObjectiveSense::minimize ? v + q : v - q;
    }

    /// Largest constraint violation at x (equality residual, negative part, cone gap).
    double max_violation(const Vector& x) const {
        double worst = 0.0;
        for (const auto& e : equalities_) worst = std::max(worst, std::abs(e.expr.evaluate(x)));
        for (const auto& e : nonnegatives_) worst = std::max(worst, -e.expr.evaluate(x));
        for (const auto& s : socs_) {
            double nrm = 0.0;
            for (const auto& v : s.v) nrm += v.evaluate(x) * v.evaluate(x);
            worst = std::max(worst, std::sqrt(nrm) - s.t.evaluate(x));
        }
        return worst;
    }

    /// Plain-text listing of variables, objective and constraints.
    std::string to_text() const {
        std::ostringstream os;
        os << std::setprecision(17);
        auto expr = [&](const AffineExpr& e) {
            std::ostringstream s;
            s << std::setprecision(17);
            bool first = true;
            for (const auto& [i, c] : e.terms) {
                s << (first ? "" : " + ") << c << "*" << names_[static_cast<std::size_t>(i)];
                first = false;
            }
            if (e.constant != 0.0 || first) s << (first ? "" : " + ") << e.constant;
            return s.str();
        };
        os << "variables " << names_.size() << "\n";
        for (const auto& n : names_) os << "  " << n << "\n";
        os << (sense_ == ObjectiveSense::minimize ? "minimize" : "maximize") << "\n  ";
        bool any = false;
        for (int i = 0; i < num_variables(); ++i) {
            if (objective_[static_cast<std::size_t>(i)] != 0.0) {
                os << (any ? " + " : "") << objective_[static_cast<std::size_t>(i)] << "*" << names_[static_cast<std::size_t>(i)];
                any = true;
            }
        }
        os << (any ? " + " : "") << objective_constant_ << "\n";
        for (const auto& q : quadratics_) {
            os << "  " << (sense_ == ObjectiveSense::minimize ? "+ " : "- ") << q.weight << " * sumsq[" << q.label << "](\n";
            for (const auto& r : q.rows) os << "      " << expr(r) << "\n";
            os << "    )\n";
        }
        os << "equalities " << equalities_.size() << "\n";
        for (const auto& e : equalities_) os << "  [" << e.label << "] " << expr(e.expr) << " == 0\n";
        os << "nonnegative " << nonnegatives_.size() << "\n";
        for (const auto& e : nonnegatives_) os << "  [" << e.label << "] " << expr(e.expr) << " >= 0\n";
        os << "second-order cones " << socs_.size() << "\n";
        for (const auto& s : socs_) {
            os << "  [" << s.label << "] norm(\n";
            for (const auto& v : s.v) os << "      " << expr(v) << "\n";
            os << "    ) <= " << expr(s.t) << "\n";
        }
        return os.str();
    }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int> index_;
    std::vector<double> objective_;
    double objective_constant_ = 0.0;
    ObjectiveSense sense_ = ObjectiveSense::minimize;
    std::vector<QuadraticTerm> quadratics_;
    std::vector<Labeled> equalities_;
    std::vector<Labeled> nonnegatives_;
    std::vector<SocConstraint> socs_;
};

enum class SolveStatus { optimal, infeasible, unbounded, numerical_limit };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::optimal: return "optimal";
        case SolveStatus::infeasible: return "infeasible";
        case SolveStatus::unbounded: return "unbounded";
        case SolveStatus::numerical_limit: return "numerical-limit";
    }
    return "unknown";
}

struct SolveResult {
    SolveStatus status = SolveStatus::numerical_limit;
    Vector x;                ///< primal values, indexed like the program's variables
    double objective = 0.0;  ///< in the program's sense, constant included
    int iterations = 0;
    double primal_residual = 0.0;  ///< relative
    double dual_residual = 0.0;    ///< relative
    double gap = 0.0;              ///< relative duality gap
    std::shared_ptr<const std::unordered_map<std::string, int>> names;

    bool ok() const { return status == SolveStatus::optimal; }

    double value(const std::string& name) const {
        if (!names) throw ArgumentError("solve result carries no variable names");
        auto it = names->find(name);
        if (it == names->end()) throw ArgumentError("unknown variable '" + name + "'");
        return x[it->second];
    }
};

}  // namespace illiquid
