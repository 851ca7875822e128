#pragma once

// Primal-dual interior-point method for second-order cone programs
//
//   minimize c'x  subject to  Ax = b,  Gx + s = h,  s in K,
//
// with K a product of a nonnegative orthant and second-order cones. The method
// runs on the homogeneous self-dual embedding (so infeasibility and
// unboundedness come with certificates), uses Nesterov-Todd scaling and a
// Mehrotra predictor-corrector step. Each iteration factors the regularized
// quasi-definite KKT matrix
//
//   [ 0  A'  G'  ]
//   [ A  0   0   ]
//   [ G  0  -W^2 ]
//
// once with a sparse LDL' and reuses it for three right-hand sides, each
// polished by iterative refinement against the unregularized matrix.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "illiquid/conic.hpp"

namespace illiquid {

struct SolverSettings {
    double feastol = 1e-8;
    double abstol = 1e-8;
    double reltol = 1e-8;
    /// Iterates that stall short of the targets above are still reported optimal
    /// when they meet this looser bound.
    double acceptable = 1e-6;
    int max_iter = 200;
    double static_reg = 1e-9;
    int refine_steps = 10;
    double step_fraction = 0.99;
};

namespace detail {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

struct StandardForm {
    int n = 0;
    SparseMatrix A;  // p x n
    SparseMatrix G;  // m x n
    Vector c, b, h;
    int nonneg = 0;
    std::vector<int> soc;
    int user_vars = 0;
};

inline StandardForm to_standard_form(const ConicProgram& prog) {
    prog.validate();
    StandardForm sf;
    sf.user_vars = prog.num_variables();
    sf.n = sf.user_vars + static_cast<int>(prog.quadratics().size());
    const double sign = prog.sense() == ObjectiveSense::minimize ? 1.0 : -1.0;
    sf.c = Vector::Zero(sf.n);
    for (int i = 0; i < sf.user_vars; ++i) sf.c[i] = sign * prog.objective()[static_cast<std::size_t>(i)];

    std::vector<Eigen::Triplet<double>> at;
    std::vector<double> b;
    for (const auto& e : prog.equalities()) {
        const int row = static_cast<int>(b.size());
        for (const auto& [j, v] : e.expr.terms) at.emplace_back(row, j, v);
        b.push_back(-e.expr.constant);
    }

    // s = h - Gx; a cone row holding affine expression a'x + k becomes G = -a, h = k.
    std::vector<Eigen::Triplet<double>> gt;
    std::vector<double> h;
    auto push = [&](const AffineExpr& e, double scale = 1.0) {
        const int row = static_cast<int>(h.size());
        for (const auto& [j, v] : e.terms) gt.emplace_back(row, j, -scale * v);
        h.push_back(scale * e.constant);
    };
    for (const auto& e : prog.nonnegatives()) push(e.expr);
    sf.nonneg = static_cast<int>(h.size());
    for (const auto& s : prog.socs()) {
        push(s.t);
        for (const auto& v : s.v) push(v);
        sf.soc.push_back(1 + static_cast<int>(s.v.size()));
    }
    // weight * ||r||^2 <= weight * u  via  ||(2r, u - 1)|| <= u + 1
    for (std::size_t q = 0; q < prog.quadratics().size(); ++q) {
        const auto& term = prog.quadratics()[q];
        const int u = sf.user_vars + static_cast<int>(q);
        sf.c[u] = term.weight;
        AffineExpr top = AffineExpr::variable(u);
        top.constant = 1.0;
        AffineExpr second = AffineExpr::variable(u);
        second.constant = -1.0;
        push(top);
        push(second);
        for (const auto& r : term.rows) push(r, 2.0);
        sf.soc.push_back(2 + static_cast<int>(term.rows.size()));
    }

    sf.A.resize(static_cast<int>(b.size()), sf.n);
    sf.A.setFromTriplets(at.begin(), at.end());
    sf.G.resize(static_cast<int>(h.size()), sf.n);
    sf.G.setFromTriplets(gt.begin(), gt.end());
    sf.b = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    sf.h = Eigen::Map<const Vector>(h.data(), static_cast<Eigen::Index>(h.size()));
    return sf;
}

/// Product cone R+^l x Q^{q1} x ... with Jordan algebra helpers.
class Cones {
public:
    Cones(int nonneg, std::vector<int> soc) : l_(nonneg), q_(std::move(soc)) {
        int off = l_;
        for (int d : q_) {
            off_.push_back(off);
            off += d;
        }
        m_ = off;
    }

    int dim() const { return m_; }
    int degree() const { return l_ + static_cast<int>(q_.size()); }

    Vector identity() const {
        Vector e = Vector::Zero(m_);
        e.head(l_).setOnes();
        for (int k : off_) e[k] = 1.0;
        return e;
    }

    /// Smallest alpha with v + alpha e in the cone (negative when v is interior).
    double interior_gap(const Vector& v) const {
        double a = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < l_; ++i) a = std::max(a, -v[i]);
        for (std::size_t k = 0; k < q_.size(); ++k) {
            const int o = off_[k];
            const int d = q_[k];
            a = std::max(a, v.segment(o + 1, d - 1).norm() - v[o]);
        }
        return a;
    }

    Vector jordan(const Vector& u, const Vector& v) const {
        Vector w(m_);
        w.head(l_) = u.head(l_).cwiseProduct(v.head(l_));
        for (std::size_t k = 0; k < q_.size(); ++k) {
            const int o = off_[k];
            const int d = q_[k];
            w[o] = u.segment(o, d).dot(v.segment(o, d));
            w.segment(o + 1, d - 1) = u[o] * v.segment(o + 1, d - 1) + v[o] * u.segment(o + 1, d - 1);
        }
        return w;
    }

    /// Solves lambda o x = d for x.
    Vector jordan_div(const Vector& lambda, const Vector& d) const {
        Vector x(m_);
        x.head(l_) = d.head(l_).cwiseQuotient(lambda.head(l_));
        for (std::size_t k = 0; k < q_.size(); ++k) {
            const int o = off_[k];
            const int dim = q_[k];
            const double l0 = lambda[o];
            const auto l1 = lambda.segment(o + 1, dim - 1);
            const double rho = l0 * l0 - l1.squaredNorm();
            const double x0 = (l0 * d[o] - l1.dot(d.segment(o + 1, dim - 1))) / rho;
            x[o] = x0;
            x.segment(o + 1, dim - 1) = (d.segment(o + 1, dim - 1) - x0 * l1) / l0;
        }
        return x;
    }

    /// Largest alpha in (0, inf] with v + alpha dv in the cone.
    double max_step(const Vector& v, const Vector& dv) const {
        double alpha = std::numeric_limits<double>::infinity();
        for (int i = 0; i < l_; ++i) {
            if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
        }
        for (std::size_t k = 0; k < q_.size(); ++k) {
            const int o = off_[k];
            const int d = q_[k];
            const double x0 = v[o];
            const double d0 = dv[o];
            const auto x1 = v.segment(o + 1, d - 1);
            const auto d1 = dv.segment(o + 1, d - 1);
            // (x0 + a d0)^2 - ||x1 + a d1||^2 = qa a^2 + 2 qb a + qc
            const double qa = d0 * d0 - d1.squaredNorm();
            const double qb = x0 * d0 - x1.dot(d1);
            const double qc = std::max(0.0, x0 * x0 - x1.squaredNorm());
            const double disc = qb * qb - qa * qc;
            if ((qa < 0.0 || qb < 0.0) && disc >= 0.0) {
                const double denom = -qb + std::sqrt(disc);
                if (denom > 0.0) alpha = std::min(alpha, qc / denom);
            }
            if (d0 < 0.0) alpha = std::min(alpha, -x0 / d0);
        }
        return alpha;
    }

    int nonneg() const { return l_; }
    const std::vector<int>& soc() const { return q_; }
    const std::vector<int>& soc_offsets() const { return off_; }

private:
    int l_;
    std::vector<int> q_;
    std::vector<int> off_;
    int m_ = 0;
};

/// Nesterov-Todd scaling W (symmetric) with W z = W^{-1} s = lambda.
class NtScaling {
public:
    explicit NtScaling(const Cones& cones) : cones_(&cones) {
        wl_ = Vector::Ones(cones.nonneg());
        for (int d : cones.soc()) {
            beta_.push_back(1.0);
            Vector w = Vector::Zero(d);
            w[0] = 1.0;
            wbar_.push_back(w);
        }
    }

    /// Returns false when s or z left the cone interior.
    bool update(const Vector& s, const Vector& z) {
        const int l = cones_->nonneg();
        for (int i = 0; i < l; ++i) {
            if (!(s[i] > 0.0) || !(z[i] > 0.0)) return false;
            wl_[i] = std::sqrt(s[i] / z[i]);
        }
        for (std::size_t k = 0; k < cones_->soc().size(); ++k) {
            const int o = cones_->soc_offsets()[k];
            const int d = cones_->soc()[k];
            const auto sk = s.segment(o, d);
            const auto zk = z.segment(o, d);
            const double sres = sk[0] * sk[0] - sk.tail(d - 1).squaredNorm();
            const double zres = zk[0] * zk[0] - zk.tail(d - 1).squaredNorm();
            if (!(sres > 0.0) || !(zres > 0.0) || sk[0] <= 0.0 || zk[0] <= 0.0) return false;
            const double sn = std::sqrt(sres);
            const double zn = std::sqrt(zres);
            const Vector sb = sk / sn;
            Vector jzb = zk / zn;
            const double gamma = std::sqrt(0.5 * (1.0 + sb.dot(jzb)));
            jzb.tail(d - 1) *= -1.0;
            wbar_[k] = (sb + jzb) / (2.0 * gamma);
            beta_[k] = std::sqrt(sn / zn);
        }
        return true;
    }

    Vector apply(const Vector& v) const { return apply_impl(v, false); }
    Vector apply_inverse(const Vector& v) const { return apply_impl(v, true); }

    /// Appends the lower triangle of -(W^2) - reg*I, placed at row/col offset `base`.
    void append_neg_w2(std::vector<Eigen::Triplet<double>>& trips, int base, double reg) const {
        const int l = cones_->nonneg();
        for (int i = 0; i < l; ++i) trips.emplace_back(base + i, base + i, -wl_[i] * wl_[i] - reg);
        for (std::size_t k = 0; k < cones_->soc().size(); ++k) {
            const int o = base + cones_->soc_offsets()[k];
            const int d = cones_->soc()[k];
            const Matrix wb = wbar_matrix(k);
            const Matrix w2 = (beta_[k] * beta_[k]) * (wb * wb);
            for (int j = 0; j < d; ++j) {
                for (int i = j; i < d; ++i) trips.emplace_back(o + i, o + j, -w2(i, j) - (i == j ? reg : 0.0));
            }
        }
    }

private:
    Matrix wbar_matrix(std::size_t k) const {
        const Vector& w = wbar_[k];
        const Eigen::Index d = w.size();
        Matrix m(d, d);
        m(0, 0) = w[0];
        m.block(0, 1, 1, d - 1) = w.tail(d - 1).transpose();
        m.block(1, 0, d - 1, 1) = w.tail(d - 1);
        m.block(1, 1, d - 1, d - 1) =
            Matrix::Identity(d - 1, d - 1) + w.tail(d - 1) * w.tail(d - 1).transpose() / (1.0 + w[0]);
        return m;
    }

    Vector apply_impl(const Vector& v, bool inverse) const {
        Vector out(v.size());
        const int l = cones_->nonneg();
        out.head(l) = inverse ? Vector(v.head(l).cwiseQuotient(wl_)) : Vector(v.head(l).cwiseProduct(wl_));
        for (std::size_t k = 0; k < cones_->soc().size(); ++k) {
            const int o = cones_->soc_offsets()[k];
            const int d = cones_->soc()[k];
            const Vector& w = wbar_[k];
            const double w0 = w[0];
            const auto w1 = w.tail(d - 1);
            const double v0 = v[o];
            const auto v1 = v.segment(o + 1, d - 1);
            const double w1v1 = w1.dot(v1);
            const double sgn = inverse ? -1.0 : 1.0;
            const double scale = inverse ? 1.0 / beta_[k] : beta_[k];
            out[o] = scale * (w0 * v0 + sgn * w1v1);
            out.segment(o + 1, d - 1) = scale * (sgn * v0 * w1 + v1 + (w1v1 / (1.0 + w0)) * w1);
        }
        return out;
    }

    const Cones* cones_;
    Vector wl_;
    std::vector<double> beta_;
    std::vector<Vector> wbar_;
};

}  // namespace detail

/// Interior-point SOCP solver. One instance per solve; not shared across threads.
class SocpSolver {
public:
    explicit SocpSolver(SolverSettings settings = {}) : set_(settings) {}

    SolveResult solve(const ConicProgram& prog) {
        const detail::StandardForm sf = detail::to_standard_form(prog);
        SolveResult res = solve_standard(sf);
        auto names = std::make_shared<std::unordered_map<std::string, int>>();
        for (int i = 0; i < prog.num_variables(); ++i) names->emplace(prog.name(i), i);
        res.names = names;
        res.x.conservativeResize(prog.num_variables());
        if (res.status == SolveStatus::optimal) res.objective = prog.evaluate_objective(res.x);
        return res;
    }

    SolveResult solve_standard(const detail::StandardForm& sf) {
        using detail::SparseMatrix;
        const int n = sf.n;
        const int p = static_cast<int>(sf.A.rows());
        const int m = static_cast<int>(sf.G.rows());
        const detail::Cones cones(sf.nonneg, sf.soc);
        detail::NtScaling scaling(cones);
        const SparseMatrix At = sf.A.transpose();
        const SparseMatrix Gt = sf.G.transpose();
        const Vector& c = sf.c;
        const Vector& b = sf.b;
        const Vector& h = sf.h;

        SolveResult res;
        res.x = Vector::Zero(n);

        const int N = n + p + m;
        Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
        bool analyzed = false;

        auto factor = [&]() -> bool {
            std::vector<Eigen::Triplet<double>> trips;
            trips.reserve(static_cast<std::size_t>(N + sf.A.nonZeros() + sf.G.nonZeros() + 4 * m));
            for (int i = 0; i < n; ++i) trips.emplace_back(i, i, set_.static_reg);
            for (int j = 0; j < sf.A.outerSize(); ++j) {
                for (SparseMatrix::InnerIterator it(sf.A, j); it; ++it) trips.emplace_back(n + it.row(), j, it.value());
            }
            for (int i = 0; i < p; ++i) trips.emplace_back(n + i, n + i, -set_.static_reg);
            for (int j = 0; j < sf.G.outerSize(); ++j) {
                for (SparseMatrix::InnerIterator it(sf.G, j); it; ++it) trips.emplace_back(n + p + it.row(), j, it.value());
            }
            scaling.append_neg_w2(trips, n + p, set_.static_reg);
            SparseMatrix K(N, N);
            K.setFromTriplets(trips.begin(), trips.end());
            if (!analyzed) {
                ldlt.analyzePattern(K);
                analyzed = true;
            }
            ldlt.factorize(K);
            return ldlt.info() == Eigen::Success;
        };

        // Unregularized KKT product, used by iterative refinement.
        auto kkt_multiply = [&](const Vector& d) {
            Vector out(N);
            const auto dx = d.head(n);
            const auto dy = d.segment(n, p);
            const Vector dz = d.tail(m);
            out.head(n) = At * dy + Gt * dz;
            out.segment(n, p) = sf.A * dx;
            out.tail(m) = sf.G * dx - scaling.apply(scaling.apply(dz));
            return out;
        };

        auto kkt_solve = [&](const Vector& rhs) {
            Vector d = ldlt.solve(rhs);
            const double scale = 1.0 + rhs.lpNorm<Eigen::Infinity>();
            for (int k = 0; k < set_.refine_steps; ++k) {
                const Vector r = rhs - kkt_multiply(d);
                if (r.lpNorm<Eigen::Infinity>() <= 1e-14 * scale) break;
                d += ldlt.solve(r);
            }
            return d;
        };

        // Initial point: least-squares primal and dual with W = I.
        if (!factor()) return fail(res);
        Vector rhs = Vector::Zero(N);
        rhs.segment(n, p) = b;
        rhs.tail(m) = h;
        Vector sol = kkt_solve(rhs);
        Vector x = sol.head(n);
        Vector s = -sol.tail(m);
        rhs.setZero();
        rhs.head(n) = -c;
        sol = kkt_solve(rhs);
        Vector y = sol.segment(n, p);
        Vector z = sol.tail(m);
        const Vector e = cones.identity();
        if (m > 0) {
            const double as = cones.interior_gap(s);
            if (as >= -1e-8) s += (1.0 + std::max(as, 0.0)) * e;
            const double az = cones.interior_gap(z);
            if (az >= -1e-8) z += (1.0 + std::max(az, 0.0)) * e;
        }
        double tau = 1.0;
        double kappa = 1.0;

        const double resx0 = std::max(1.0, c.norm());
        const double resy0 = std::max(1.0, b.norm());
        const double resz0 = std::max(1.0, h.norm());
        const int degree = cones.degree();

        struct Snapshot {
            Vector x;
            double pres = std::numeric_limits<double>::infinity();
            double dres = std::numeric_limits<double>::infinity();
            double gap = std::numeric_limits<double>::infinity();
            double score = std::numeric_limits<double>::infinity();
        } best;

        for (int iter = 0; iter <= set_.max_iter; ++iter) {
            res.iterations = iter;
            const Vector aty_gtz = At * y + Gt * z;
            const Vector rx = -aty_gtz - c * tau;
            const Vector ry = sf.A * x - b * tau;
            const Vector rz = s + sf.G * x - h * tau;
            const double cx = c.dot(x);
            const double byhz = b.dot(y) + h.dot(z);
            const double rt = kappa + cx + byhz;

            const double pres = std::max(ry.norm() / resy0, rz.norm() / resz0) / tau;
            const double dres = rx.norm() / resx0 / tau;
            const double pcost = cx / tau;
            const double dcost = -byhz / tau;
            const double gap = s.dot(z) / (tau * tau);
            const double relgap = gap / std::max(1e-300, std::max(std::abs(pcost), std::abs(dcost)));
            const double gap_measure = std::min(gap, relgap);
            if (!std::isfinite(pres) || !std::isfinite(dres) || !std::isfinite(gap)) break;

            const double score = std::max({pres, dres, gap_measure});
            if (score < best.score) best = {x / tau, pres, dres, gap_measure, score};

            if (pres <= set_.feastol && dres <= set_.feastol && (gap <= set_.abstol || relgap <= set_.reltol)) {
                res.status = SolveStatus::optimal;
                res.x = x / tau;
                res.primal_residual = pres;
                res.dual_residual = dres;
                res.gap = gap_measure;
                return res;
            }
            // Certificates of infeasibility (dual ray) or unboundedness (primal ray).
            if (byhz < 0.0 && aty_gtz.norm() <= set_.feastol * -byhz) {
                res.status = SolveStatus::infeasible;
                return res;
            }
            if (cx < 0.0 && std::max((sf.A * x).norm(), (sf.G * x + s).norm()) <= set_.feastol * -cx) {
                res.status = SolveStatus::unbounded;
                return res;
            }
            if (iter == set_.max_iter) break;

            if (!scaling.update(s, z)) break;
            if (!factor()) break;
            const Vector lambda = scaling.apply(z);
            const double mu = (s.dot(z) + tau * kappa) / (degree + 1);

            rhs.head(n) = -c;
            rhs.segment(n, p) = b;
            rhs.tail(m) = h;
            const Vector d1 = kkt_solve(rhs);
            const double denom_base = c.dot(d1.head(n)) + b.dot(d1.segment(n, p)) + h.dot(d1.tail(m));

            struct Direction {
                Vector dx, dy, dz, ds;
                double dtau = 0.0, dkappa = 0.0;
            };
            auto direction = [&](double sigma, const Vector& ds_target, double dk_target) {
                const double keep = 1.0 - sigma;
                const Vector lds = cones.jordan_div(lambda, ds_target);
                rhs.head(n) = keep * rx;
                rhs.segment(n, p) = -keep * ry;
                rhs.tail(m) = -keep * rz - scaling.apply(lds);
                const Vector d2 = kkt_solve(rhs);
                Direction dir;
                dir.dtau = (-keep * rt - dk_target / tau - c.dot(d2.head(n)) - b.dot(d2.segment(n, p)) -
                            h.dot(d2.tail(m))) /
                           (denom_base - kappa / tau);
                dir.dx = d2.head(n) + dir.dtau * d1.head(n);
                dir.dy = d2.segment(n, p) + dir.dtau * d1.segment(n, p);
                dir.dz = d2.tail(m) + dir.dtau * d1.tail(m);
                dir.ds = scaling.apply(lds - scaling.apply(dir.dz));
                dir.dkappa = (dk_target - kappa * dir.dtau) / tau;
                return dir;
            };
            auto step_to_boundary = [&](const Direction& d) {
                double a = std::min(cones.max_step(s, d.ds), cones.max_step(z, d.dz));
                if (d.dtau < 0.0) a = std::min(a, -tau / d.dtau);
                if (d.dkappa < 0.0) a = std::min(a, -kappa / d.dkappa);
                return a;
            };

            // predictor
            const Direction aff = direction(0.0, -cones.jordan(lambda, lambda), -kappa * tau);
            const double alpha_aff = std::min(1.0, step_to_boundary(aff));
            const double sigma = std::clamp(std::pow(1.0 - alpha_aff, 3.0), 0.0, 1.0);

            // corrector
            const Vector ds_corr = -cones.jordan(lambda, lambda) -
                                   cones.jordan(scaling.apply_inverse(aff.ds), scaling.apply(aff.dz)) +
                                   sigma * mu * e;
            const double dk_corr = -kappa * tau - aff.dkappa * aff.dtau + sigma * mu;
            const Direction dir = direction(sigma, ds_corr, dk_corr);
            const double alpha = std::min(1.0, set_.step_fraction * step_to_boundary(dir));
            if (!(alpha > 1e-12)) break;

            x += alpha * dir.dx;
            y += alpha * dir.dy;
            z += alpha * dir.dz;
            s += alpha * dir.ds;
            tau += alpha * dir.dtau;
            kappa += alpha * dir.dkappa;
        }

        // Stalled: accept the best iterate if it meets the looser contract bound.
        if (best.score <= set_.acceptable) {
            res.status = SolveStatus::optimal;
            res.x = best.x;
            res.primal_residual = best.pres;
            res.dual_residual = best.dres;
            res.gap = best.gap;
            return res;
        }
        return fail(res);
    }

private:
    static SolveResult& fail(SolveResult& r) {
        r.status = SolveStatus::numerical_limit;
        return r;
    }

    SolverSettings set_;
};

/// Solves `prog` with all tolerances set to `tol`.
inline SolveResult solve(const ConicProgram& prog, double tol = 1e-8) {
    SolverSettings s;
    s.feastol = s.abstol = s.reltol = tol;
    s.acceptable = std::max(tol, 1e-6);
    return SocpSolver(s).solve(prog);
}

}  // namespace illiquid
