#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "illiquid/conic.hpp"
#include "illiquid/dynamics.hpp"
#include "illiquid/normal_quantile.hpp"

namespace illiquid {

namespace detail {
inline std::string idx(const char* base, int k) { return std::string(base) + "[" + std::to_string(k) + "]"; }
inline std::string idx(const char* base, int k, int i) {
    return std::string(base) + "[" + std::to_string(k) + "," + std::to_string(i) + "]";
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Commitment planning (illiquid-only mean dynamics)

struct CommitmentPlanConfig {
    int T = 20;                  ///< horizon: commitments n_1..n_T, states x_1..x_{T+1}
    Vector I_targ;               ///< target illiquid wealth per asset
    double gamma_smooth = 1.0;   ///< smoothing weight
    double n_lim = std::numeric_limits<double>::infinity();  ///< per-period cap per asset
};

/// Extra knobs of the receding-horizon problem, used to make a tail of the
/// open-loop problem reproduce it exactly.
struct CommitmentMpcOptions {
    std::optional<Vector> n_prev;      ///< last executed commitment, smoothed against n̂_t
    std::optional<int> weight_horizon;  ///< use 1/(W+1), gamma/(W-1) instead of the H weights
};

namespace detail {

/// Shared body of the open-loop and MPC commitment problems: commitments
/// n[0..H-1], states x[0..H], x[0] = x0.
inline ConicProgram commitment_program(const MeanMatrices& mm_any, const IlliquidState& x0, int H,
                                       const Vector& I_targ, double gamma_smooth, double n_lim,
                                       const CommitmentMpcOptions& opt) {
    const MeanMatrices mm = illiquid_subsystem(mm_any);
    const int n = mm.n_ill();
    if (H < 1) throw ArgumentError("commitment horizon must be >= 1");
    if (I_targ.size() != n) throw ArgumentError("target dimension does not match illiquid asset count");
    if (x0.I.size() != n || x0.K.size() != n) throw ArgumentError("state dimension mismatch");
    if (gamma_smooth < 0.0) throw NonconvexityError("negative smoothing weight");
    if (!(n_lim >= 0.0)) throw ArgumentError("commitment cap must be nonnegative");
    const int W = opt.weight_horizon.value_or(H);
    const double w_track = 1.0 / (W + 1.0);
    const double w_smooth = W > 1 ? gamma_smooth / (W - 1.0) : 0.0;

    ConicProgram p;
    std::vector<std::vector<int>> nv(static_cast<std::size_t>(H)), Iv(static_cast<std::size_t>(H + 1)),
        Kv(static_cast<std::size_t>(H + 1));
    for (int k = 0; k <= H; ++k) {
        for (int i = 0; i < n; ++i) {
            Iv[static_cast<std::size_t>(k)].push_back(p.add_variable(idx("I", k, i)));
            Kv[static_cast<std::size_t>(k)].push_back(p.add_variable(idx("K", k, i)));
        }
    }
    for (int k = 0; k < H; ++k) {
        for (int i = 0; i < n; ++i) nv[static_cast<std::size_t>(k)].push_back(p.add_variable(idx("n", k, i)));
    }
    auto I = [&](int k, int i) { return Iv[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]; };
    auto K = [&](int k, int i) { return Kv[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]; };
    auto N = [&](int k, int i) { return nv[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)]; };

    for (int i = 0; i < n; ++i) {
        AffineExpr e0 = AffineExpr::variable(I(0, i));
        e0.constant = -x0.I[i];
        p.add_equality(e0, idx("init_I", i));
        AffineExpr e1 = AffineExpr::variable(K(0, i));
        e1.constant = -x0.K[i];
        p.add_equality(e1, idx("init_K", i));
    }
    // x[k+1] = A x[k] + B n[k], state ordered (I, K)
    for (int k = 0; k < H; ++k) {
        for (int r = 0; r < 2 * n; ++r) {
            const int lhs = r < n ? I(k + 1, r) : K(k + 1, r - n);
            AffineExpr e = AffineExpr::variable(lhs, -1.0);
            for (int c = 0; c < 2 * n; ++c) e.add(c < n ? I(k, c) : K(k, c - n), mm.A()(r, c));
            for (int c = 0; c < n; ++c) e.add(N(k, c), mm.B()(r, c));
            p.add_equality(e, idx("dyn", k, r));
        }
    }
    for (int k = 0; k < H; ++k) {
        for (int i = 0; i < n; ++i) {
            p.add_nonnegative(AffineExpr::variable(N(k, i)), idx("n_min", k, i));
            if (std::isfinite(n_lim)) {
                AffineExpr e = AffineExpr::variable(N(k, i), -1.0);
                e.constant = n_lim;
                p.add_nonnegative(e, idx("n_max", k, i));
            }
        }
    }
    QuadraticTerm track{w_track, {}, "tracking"};
    for (int k = 0; k <= H; ++k) {
        for (int i = 0; i < n; ++i) {
            AffineExpr e = AffineExpr::variable(I(k, i));
            e.constant = -I_targ[i];
            track.rows.push_back(e);
        }
    }
    p.add_quadratic(track);
    if (w_smooth > 0.0) {
        QuadraticTerm smooth{w_smooth, {}, "smoothing"};
        for (int i = 0; i < n; ++i) {
            if (opt.n_prev) {
                AffineExpr e = AffineExpr::variable(N(0, i));
                e.constant = -(*opt.n_prev)[i];
                smooth.rows.push_back(e);
            }
            for (int k = 1; k < H; ++k) smooth.rows.push_back(AffineExpr::variable(N(k, i)).add(N(k - 1, i), -1.0));
        }
        if (!smooth.rows.empty()) p.add_quadratic(smooth);
    }
    return p;
}

}  // namespace detail

/// Open-loop commitment plan from zero state over the whole horizon.
inline ConicProgram build_open_loop_qp(const MeanMatrices& mm, const CommitmentPlanConfig& cfg) {
    if (cfg.T < 2) throw ArgumentError("open-loop horizon must be >= 2");
    return detail::commitment_program(mm, IlliquidState::zero(illiquid_subsystem(mm).n_ill()), cfg.T, cfg.I_targ,
                                      cfg.gamma_smooth, cfg.n_lim, {});
}

/// Commitment plan re-solved from the observed state over horizon H.
inline ConicProgram build_commitment_mpc_qp(const MeanMatrices& mm, const IlliquidState& x_now, int H,
                                            const Vector& I_targ, double gamma_smooth, double n_lim,
                                            const CommitmentMpcOptions& opt = {}) {
    return detail::commitment_program(mm, x_now, H, I_targ, gamma_smooth, n_lim, opt);
}

/// Planned sequences read back from a solved commitment program.
struct CommitmentPlan {
    std::vector<Vector> n;  ///< n̂ for each planned period
    std::vector<Vector> I;  ///< Î, one more entry than n
    std::vector<Vector> K;
};

inline CommitmentPlan extract_commitment_plan(const SolveResult& r, int n_ill, int H) {
    CommitmentPlan plan;
    for (int k = 0; k <= H; ++k) {
        Vector I(n_ill), K(n_ill);
        for (int i = 0; i < n_ill; ++i) {
            I[i] = r.value(detail::idx("I", k, i));
            K[i] = r.value(detail::idx("K", k, i));
        }
        plan.I.push_back(I);
        plan.K.push_back(K);
        if (k < H) {
            Vector nk(n_ill);
            for (int i = 0; i < n_ill; ++i) nk[i] = std::max(0.0, r.value(detail::idx("n", k, i)));
            plan.n.push_back(nk);
        }
    }
    return plan;
}

/// sqrt(mean((I_t - I_targ)^2)) over periods start..end (1-based, inclusive).
inline double delayed_rms(const std::vector<double>& I, double I_targ, int start) {
    if (start < 1 || start > static_cast<int>(I.size())) throw ArgumentError("delayed_rms: empty range");
    double acc = 0.0;
    for (std::size_t t = static_cast<std::size_t>(start - 1); t < I.size(); ++t) acc += (I[t] - I_targ) * (I[t] - I_targ);
    return std::sqrt(acc / static_cast<double>(I.size() - static_cast<std::size_t>(start - 1)));
}

/// mean((I_t - I_targ)^2) over the whole sequence.
inline double tracking_mse(const std::vector<double>& I, double I_targ) {
    if (I.empty()) throw ArgumentError("tracking_mse: empty sequence");
    double acc = 0.0;
    for (double v : I) acc += (v - I_targ) * (v - I_targ);
    return acc / static_cast<double>(I.size());
}

// ---------------------------------------------------------------------------
// One-period Markowitz

/// maximize mu'w  s.t.  1'w = 1, w >= 0, ||Sigma^(1/2) w|| <= sigma.
inline ConicProgram build_markowitz(const Vector& mu, const Matrix& Sigma, double sigma) {
    const auto m = static_cast<int>(mu.size());
    if (m == 0) throw ArgumentError("markowitz: no assets");
    if (Sigma.rows() != m || Sigma.cols() != m) throw ArgumentError("markowitz: covariance dimension mismatch");
    if (!(sigma >= 0.0)) throw ArgumentError("markowitz: risk bound must be nonnegative");
    const Matrix M = psd_sqrt_rows(Sigma);
    ConicProgram p;
    p.set_sense(ObjectiveSense::maximize);
    AffineExpr budget(-1.0);
    for (int i = 0; i < m; ++i) {
        const int w = p.add_variable(detail::idx("w", i));
        p.add_objective(w, mu[i]);
        p.add_nonnegative(AffineExpr::variable(w), detail::idx("w_min", i));
        budget.add(w, 1.0);
    }
    p.add_equality(budget, "budget");
    std::vector<AffineExpr> rows;
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        AffineExpr e;
        for (int i = 0; i < m; ++i) e.add(i, M(r, i));
        rows.push_back(e);
    }
    if (rows.empty()) return p;
    if (sigma == 0.0) {
        // a zero-radius cone has no interior; state it as equalities
        for (std::size_t r = 0; r < rows.size(); ++r) p.add_equality(rows[r], detail::idx("risk", static_cast<int>(r)));
    } else {
        p.add_soc(AffineExpr(sigma), rows, "risk");
    }
    return p;
}

inline Vector extract_weights(const SolveResult& r, int m) {
    Vector w(m);
    for (int i = 0; i < m; ++i) w[i] = std::max(0.0, r.value(detail::idx("w", i)));
    const double s = w.sum();
    if (s > 0.0) w /= s;
    return w;
}

// ---------------------------------------------------------------------------
// Full joint MPC

enum class RiskMode { hard, penalized };

struct MpcConfig {
    int H = 10;
    double gamma = 0.97;
    double sigma = 0.1;
    double epsilon_ins = 0.02;
    double lambda_risk = 10.0;
    double lambda_smooth = 0.1;
    double lambda_cash = 1000.0;
    std::optional<double> n_lim;
    RiskMode risk_mode = RiskMode::penalized;

    void validate() const {
        if (H < 1) throw ArgumentError("MPC horizon must be >= 1");
        if (!(gamma > 0.0 && gamma <= 1.0)) throw ArgumentError("MPC discount must lie in (0, 1]");
        if (!(sigma >= 0.0)) throw ArgumentError("risk tolerance must be nonnegative");
        if (!(epsilon_ins > 0.0)) throw ArgumentError("insolvency probability must be positive");
        if (epsilon_ins > 0.5) throw NonconvexityError("insolvency probability above 1/2 makes the constraint nonconvex");
        if (lambda_risk < 0.0 || lambda_smooth < 0.0 || lambda_cash < 0.0) {
            throw NonconvexityError("penalty weights must be nonnegative");
        }
        if (n_lim && !(*n_lim >= 0.0)) throw ArgumentError("commitment cap must be nonnegative");
    }
};

/// Return moments used by the joint policies.
struct ReturnModel {
    Vector mu_liq;     ///< mean gross liquid return
    Matrix sigma_liq;  ///< covariance of gross liquid returns
    Matrix sigma_ret;  ///< log-return covariance, (illiquid..., liquid...) order
    Vector expected;   ///< expected gross returns, (illiquid..., liquid...) order
};

inline ReturnModel make_return_model(const LatentDistribution& dist) {
    return {dist.liquid_return_mean(), dist.liquid_return_covariance(), dist.return_log_covariance(),
            dist.expected_gross_returns()};
}

/// Builds the joint MPC problem at x_now. Stages k = 0..H carry controls and
/// constraints; the state after stage H only enters the dynamics and L >= 0.
/// The smoothing penalty is divided by the current total exposure
/// L + 1'I + 1'K so the whole program is positively homogeneous in x_now.
inline ConicProgram build_full_mpc(const MeanMatrices& mm, const JointState& x_now, const MpcConfig& cfg,
                                   const ReturnModel& rm) {
    cfg.validate();
    if (mm.layout() != SystemLayout::joint) throw ArgumentError("build_full_mpc: expects joint mean matrices");
    const int n = mm.n_ill();
    const int nl = mm.n_liq();
    if (x_now.illiquid.I.size() != n || x_now.illiquid.K.size() != n) throw ArgumentError("state dimension mismatch");
    if (rm.mu_liq.size() != nl || rm.sigma_liq.rows() != nl || rm.sigma_ret.rows() != n + nl) {
        throw ArgumentError("return model dimension mismatch");
    }
    const int H = cfg.H;
    const double q = -normal_quantile(cfg.epsilon_ins);  // >= 0
    const Matrix S_ret = psd_sqrt_rows(rm.sigma_ret);
    const Matrix S_liq = psd_sqrt_rows(rm.sigma_liq);
    const Vector l1 = mm.mean_lambda1();
    const Vector l0 = mm.mean_lambda0();
    double w_ref = x_now.L + x_now.illiquid.I.sum() + x_now.illiquid.K.sum();
    if (!(w_ref > 0.0)) w_ref = 1.0;

    ConicProgram p;
    p.set_sense(ObjectiveSense::maximize);
    using detail::idx;
    // state index: 0 = L, 1..n = I, n+1..2n = K; control: h (nl), n (n), s
    std::vector<std::vector<int>> X(static_cast<std::size_t>(H + 2)), U(static_cast<std::size_t>(H + 1));
    for (int k = 0; k <= H + 1; ++k) {
        auto& x = X[static_cast<std::size_t>(k)];
        x.push_back(p.add_variable(idx("L", k)));
        for (int i = 0; i < n; ++i) x.push_back(p.add_variable(idx("I", k, i)));
        for (int i = 0; i < n; ++i) x.push_back(p.add_variable(idx("K", k, i)));
    }
    for (int k = 0; k <= H; ++k) {
        auto& u = U[static_cast<std::size_t>(k)];
        for (int j = 0; j < nl; ++j) u.push_back(p.add_variable(idx("h", k, j)));
        for (int i = 0; i < n; ++i) u.push_back(p.add_variable(idx("n", k, i)));
        u.push_back(p.add_variable(idx("s", k)));
    }
    auto xv = [&](int k, int r) { return X[static_cast<std::size_t>(k)][static_cast<std::size_t>(r)]; };
    auto uv = [&](int k, int c) { return U[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)]; };
    auto Lv = [&](int k) { return xv(k, 0); };
    auto Iv = [&](int k, int i) { return xv(k, 1 + i); };
    auto Kv = [&](int k, int i) { return xv(k, 1 + n + i); };
    auto hv = [&](int k, int j) { return uv(k, j); };
    auto nv = [&](int k, int i) { return uv(k, nl + i); };
    auto sv = [&](int k) { return uv(k, nl + n); };

    Vector x0(1 + 2 * n);
    x0 << x_now.L, x_now.illiquid.I, x_now.illiquid.K;
    for (int r = 0; r < 1 + 2 * n; ++r) {
        AffineExpr e = AffineExpr::variable(xv(0, r));
        e.constant = -x0[r];
        p.add_equality(e, idx("init", r));
    }
    const int nx = 1 + 2 * n;
    const int nu = nl + n + 1;
    for (int k = 0; k <= H; ++k) {
        for (int r = 0; r < nx; ++r) {
            AffineExpr e = AffineExpr::variable(xv(k + 1, r), -1.0);
            for (int c = 0; c < nx; ++c) e.add(xv(k, c), mm.A()(r, c));
            for (int c = 0; c < nu; ++c) e.add(uv(k, c), mm.B()(r, c));
            p.add_equality(e, idx("dyn", k, r));
        }
    }
    for (int k = 1; k <= H + 1; ++k) p.add_nonnegative(AffineExpr::variable(Lv(k)), idx("L_min", k));

    QuadraticTerm smooth{cfg.lambda_smooth / w_ref, {}, "smoothing"};
    double disc = 1.0;
    for (int k = 0; k <= H; ++k, disc *= cfg.gamma) {
        p.add_objective(Lv(k), disc);
        for (int i = 0; i < n; ++i) p.add_objective(Iv(k, i), disc);
        p.add_objective(sv(k), -disc * cfg.lambda_cash);

        for (int c = 0; c < nu; ++c) p.add_nonnegative(AffineExpr::variable(uv(k, c)), idx("u_min", k, c));
        if (cfg.n_lim) {
            for (int i = 0; i < n; ++i) {
                AffineExpr e = AffineExpr::variable(nv(k, i), -1.0);
                e.constant = *cfg.n_lim;
                p.add_nonnegative(e, idx("n_max", k, i));
            }
        }
        AffineExpr budget = AffineExpr::variable(Lv(k), -1.0);
        for (int j = 0; j < nl; ++j) budget.add(hv(k, j), 1.0);
        p.add_equality(budget, idx("budget", k));

        // risk: y = (I, h) in return order
        auto y_index = [&](int r) { return r < n ? Iv(k, r) : hv(k, r - n); };
        std::vector<AffineExpr> risk_rows;
        for (Eigen::Index r = 0; r < S_ret.rows(); ++r) {
            AffineExpr e;
            for (int c = 0; c < n + nl; ++c) e.add(y_index(c), S_ret(r, c));
            risk_rows.push_back(e);
        }
        AffineExpr risk_t;
        for (int c = 0; c < n + nl; ++c) risk_t.add(y_index(c), cfg.sigma);
        if (cfg.risk_mode == RiskMode::penalized) {
            const int slack = p.add_variable(idx("risk_slack", k));
            p.add_nonnegative(AffineExpr::variable(slack), idx("risk_slack_min", k));
            p.add_objective(slack, -disc * cfg.lambda_risk);
            risk_t.add(slack, 1.0);
        }
        if (!risk_rows.empty()) p.add_soc(risk_t, risk_rows, idx("risk", k));

        // insolvency: expected calls <= h'mu + s - q ||S_liq h||
        AffineExpr margin;
        for (int j = 0; j < nl; ++j) margin.add(hv(k, j), rm.mu_liq[j]);
        margin.add(sv(k), 1.0);
        for (int i = 0; i < n; ++i) {
            margin.add(Kv(k, i), -l1[i]);
            margin.add(nv(k, i), -l0[i]);
        }
        if (q == 0.0 || S_liq.rows() == 0) {
            p.add_nonnegative(margin, idx("insolvency", k));
        } else {
            std::vector<AffineExpr> rows;
            for (Eigen::Index r = 0; r < S_liq.rows(); ++r) {
                AffineExpr e;
                for (int j = 0; j < nl; ++j) e.add(hv(k, j), q * S_liq(r, j));
                rows.push_back(e);
            }
            p.add_soc(margin, rows, idx("insolvency", k));
        }

        if (k < H) {
            const double w = std::sqrt(disc);
            for (int i = 0; i < n; ++i) smooth.rows.push_back(AffineExpr::variable(nv(k + 1, i), w).add(nv(k, i), -w));
        }
    }
    if (cfg.lambda_smooth > 0.0 && !smooth.rows.empty()) p.add_quadratic(smooth);
    return p;
}

/// First-stage control (ĥ_0, n̂_0, ŝ_0) of a solved full MPC program, clipped at zero.
inline ControlDecision extract_first_control(const SolveResult& r, int n_ill, int n_liq) {
    ControlDecision u;
    u.h.resize(n_liq);
    u.n.resize(n_ill);
    for (int j = 0; j < n_liq; ++j) u.h[j] = std::max(0.0, r.value(detail::idx("h", 0, j)));
    for (int i = 0; i < n_ill; ++i) u.n[i] = std::max(0.0, r.value(detail::idx("n", 0, i)));
    u.s = std::max(0.0, r.value(detail::idx("s", 0)));
    return u;
}

}  // namespace illiquid
