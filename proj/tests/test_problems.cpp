#include <gtest/gtest.h>

#include <random>

#include "illiquid/problems.hpp"
#include "illiquid/socp_solver.hpp"
#include "test_support.hpp"

using namespace illiquid;
using illiquid::testing::section35;

namespace {

const MeanMatrices& means(IntensityLink link) {
    static const MeanMatrices as_written = mean_matrices(section35(), SystemLayout::illiquid_only);
    static const MeanMatrices logistic = mean_matrices(section35(IntensityLink::logistic), SystemLayout::illiquid_only);
    return link == IntensityLink::as_written ? as_written : logistic;
}

const MeanMatrices& joint_means() {
    static const MeanMatrices mm = mean_matrices(illiquid::testing::joint(), SystemLayout::joint, 200000);
    return mm;
}

CommitmentPlanConfig published_plan() {
    CommitmentPlanConfig c;
    c.T = 20;
    c.I_targ = Vector::Constant(1, 1.0);
    c.gamma_smooth = 1.0;
    c.n_lim = 0.5;
    return c;
}

CommitmentPlan solve_plan(const MeanMatrices& mm, const CommitmentPlanConfig& c) {
    const SolveResult r = solve(build_open_loop_qp(mm, c));
    EXPECT_EQ(r.status, SolveStatus::optimal);
    return extract_commitment_plan(r, 1, c.T);
}

// Independent oracle: eliminate the states and run accelerated projected
// gradient on the box-constrained quadratic in the commitments.
Vector projected_gradient_plan(const MeanMatrices& mm, const CommitmentPlanConfig& c) {
    const int T = c.T;
    Matrix M = Matrix::Zero(T + 1, T);  // I_k = (M n)_k, k = 0..T
    for (int j = 0; j < T; ++j) {
        Vector x = Vector::Zero(2);
        for (int k = 0; k < T; ++k) {
            x = mm.A() * x + mm.B() * (k == j ? 1.0 : 0.0);
            M(k + 1, j) = x[0];
        }
    }
    Matrix D = Matrix::Zero(T - 1, T);
    for (int k = 0; k + 1 < T; ++k) {
        D(k, k) = -1.0;
        D(k, k + 1) = 1.0;
    }
    const double wt = 1.0 / (T + 1.0), ws = c.gamma_smooth / (T - 1.0);
    const Matrix Q = 2.0 * (wt * M.transpose() * M + ws * D.transpose() * D);
    const Vector g0 = -2.0 * wt * M.transpose() * Vector::Constant(T + 1, c.I_targ[0]);
    const double Lip = Eigen::SelfAdjointEigenSolver<Matrix>(Q).eigenvalues().maxCoeff();
    Vector n = Vector::Zero(T), y = n;
    double tk = 1.0;
    for (int it = 0; it < 200000; ++it) {
        const Vector nn = (y - (Q * y + g0) / Lip).cwiseMax(0.0).cwiseMin(c.n_lim);
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
        y = nn + ((tk - 1.0) / tn) * (nn - n);
        n = nn;
        tk = tn;
    }
    return n;
}

std::vector<double> first_asset(const std::vector<Vector>& v) {
    std::vector<double> out;
    for (const auto& x : v) out.push_back(x[0]);
    return out;
}

ConicProgram without_cones(const ConicProgram& p) {
    ConicProgram q;
    q.set_sense(p.sense());
    for (const auto& name : p.names()) q.add_variable(name);
    for (int i = 0; i < p.num_variables(); ++i) q.add_objective(i, p.objective()[static_cast<std::size_t>(i)]);
    q.add_objective_constant(p.objective_constant());
    for (const auto& qt : p.quadratics()) q.add_quadratic(qt);
    for (const auto& e : p.equalities()) q.add_equality(e.expr, e.label);
    for (const auto& e : p.nonnegatives()) q.add_nonnegative(e.expr, e.label);
    return q;
}

JointState random_state(std::mt19937_64& gen) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    JointState x = JointState::cash(0.2 + u(gen), 1);
    x.illiquid.I[0] = u(gen) * 0.5;
    x.illiquid.K[0] = u(gen) * 0.3;
    return x;
}

MpcConfig hard_config(double sigma) {
    MpcConfig c;
    c.risk_mode = RiskMode::hard;
    c.sigma = sigma;
    return c;
}

}  // namespace

TEST(OpenLoopPlan, ZeroTargetGivesZeroPlan) {
    CommitmentPlanConfig c = published_plan();
    c.I_targ = Vector::Zero(1);
    const SolveResult r = solve(build_open_loop_qp(means(IntensityLink::as_written), c));
    ASSERT_EQ(r.status, SolveStatus::optimal);
    EXPECT_NEAR(r.objective, 0.0, 1e-7);
    for (const auto& n : extract_commitment_plan(r, 1, c.T).n) EXPECT_NEAR(n[0], 0.0, 1e-4);
}

TEST(OpenLoopPlan, RejectsShortHorizon) {
    CommitmentPlanConfig c = published_plan();
    c.T = 1;
    EXPECT_THROW(build_open_loop_qp(means(IntensityLink::as_written), c), ArgumentError);
}

TEST(OpenLoopPlan, MatchesProjectedGradientOracle) {
    for (IntensityLink link : {IntensityLink::as_written, IntensityLink::logistic}) {
        const CommitmentPlanConfig c = published_plan();
        const CommitmentPlan plan = solve_plan(means(link), c);
        const Vector oracle = projected_gradient_plan(means(link), c);
        for (int t = 0; t < c.T; ++t) EXPECT_NEAR(plan.n[static_cast<std::size_t>(t)][0], oracle[t], 1e-4) << t;
    }
}

TEST(OpenLoopPlan, PublishedInstanceShape) {
    const CommitmentPlanConfig c = published_plan();
    const MeanMatrices& mm = means(IntensityLink::as_written);
    const CommitmentPlan plan = solve_plan(mm, c);
    EXPECT_NEAR(plan.n[0][0], 0.5, 1e-6);
    EXPECT_NEAR(plan.n[1][0], 0.5, 1e-6);
    const double target = 1.0 / steady_state_gains(mm).alpha_I[0];
    EXPECT_NEAR(plan.n.back()[0], target, 0.03);
}

// With the logistic link the plan reproduces the published tracking figures.
TEST(OpenLoopPlan, LogisticLinkReproducesPublishedTracking) {
    const CommitmentPlanConfig c = published_plan();
    const MeanMatrices& mm = means(IntensityLink::logistic);
    const CommitmentPlan plan = solve_plan(mm, c);
    EXPECT_NEAR(plan.n[0][0], 0.5, 1e-6);
    EXPECT_NEAR(plan.n[1][0], 0.5, 1e-6);
    EXPECT_NEAR(plan.n.back()[0], 1.0 / steady_state_gains(mm).alpha_I[0], 0.03);
    EXPECT_NEAR(plan.n.back()[0], 0.27, 0.02);
    const std::vector<double> I = first_asset(plan.I);
    EXPECT_NEAR(delayed_rms(std::vector<double>(I.begin(), I.end() - 1), 1.0, 5), 0.071, 0.003);
    EXPECT_NEAR(tracking_mse(I, 1.0), 0.133, 0.01);
}

TEST(DelayedRms, Examples) {
    EXPECT_EQ(delayed_rms({1.0, 1.0, 1.0}, 1.0, 1), 0.0);
    EXPECT_DOUBLE_EQ(delayed_rms({1.0, 1.0, 3.0}, 1.0, 3), 2.0);
    EXPECT_THROW(delayed_rms({1.0, 2.0}, 1.0, 3), ArgumentError);
    EXPECT_THROW(delayed_rms({}, 1.0, 1), ArgumentError);
    EXPECT_NEAR(tracking_mse({0.0, 2.0}, 1.0), 1.0, 1e-15);
}

TEST(CommitmentMpc, ZeroStateFullHorizonReproducesOpenLoop) {
    const CommitmentPlanConfig c = published_plan();
    const MeanMatrices& mm = means(IntensityLink::logistic);
    const CommitmentPlan open = solve_plan(mm, c);
    const SolveResult r = solve(build_commitment_mpc_qp(mm, IlliquidState::zero(1), c.T, c.I_targ, c.gamma_smooth, c.n_lim));
    ASSERT_EQ(r.status, SolveStatus::optimal);
    const CommitmentPlan mpc = extract_commitment_plan(r, 1, c.T);
    for (int t = 0; t < c.T; ++t) EXPECT_NEAR(mpc.n[static_cast<std::size_t>(t)][0], open.n[static_cast<std::size_t>(t)][0], 1e-5);
}

TEST(CommitmentMpc, NominalStateReproducesOpenLoopCommitment) {
    const CommitmentPlanConfig c = published_plan();
    const MeanMatrices& mm = means(IntensityLink::logistic);
    const CommitmentPlan open = solve_plan(mm, c);
    for (int t : {2, 5, 10, 17}) {
        const auto k = static_cast<std::size_t>(t);
        const IlliquidState x{open.I[k], open.K[k]};
        CommitmentMpcOptions opt;
        opt.n_prev = open.n[k - 1];
        opt.weight_horizon = c.T;
        const SolveResult r = solve(build_commitment_mpc_qp(mm, x, c.T - t, c.I_targ, c.gamma_smooth, c.n_lim, opt));
        ASSERT_EQ(r.status, SolveStatus::optimal);
        EXPECT_NEAR(extract_commitment_plan(r, 1, c.T - t).n[0][0], open.n[k][0], 1e-4) << "t=" << t;
    }
}

TEST(CommitmentMpc, OverexposedStateCommitsLess) {
    const CommitmentPlanConfig c = published_plan();
    const MeanMatrices& mm = means(IntensityLink::logistic);
    const CommitmentPlan open = solve_plan(mm, c);
    const int t = 8;
    const IlliquidState x{Vector::Constant(1, 1.5), Vector::Constant(1, 2.0)};
    const SolveResult r = solve(build_commitment_mpc_qp(mm, x, 20, c.I_targ, c.gamma_smooth, c.n_lim));
    ASSERT_EQ(r.status, SolveStatus::optimal);
    EXPECT_LT(extract_commitment_plan(r, 1, 20).n[0][0], open.n[t][0] - 1e-3);
}

TEST(Markowitz, SlackRiskPicksBestAsset) {
    Vector mu(4);
    mu << 1.02, 1.08, 1.05, 1.0;
    const Matrix S = illiquid::testing::return_cov().block(2, 2, 4, 4);
    for (double scale : {1.0, 3.0}) {
        const SolveResult r = solve(build_markowitz(scale * mu, S, 10.0));
        ASSERT_EQ(r.status, SolveStatus::optimal);
        const Vector w = extract_weights(r, 4);
        EXPECT_NEAR(w[1], 1.0, 1e-6);
        EXPECT_NEAR(r.objective, scale * 1.08, 1e-6);
    }
}

TEST(Markowitz, ZeroRiskHoldsCash) {
    const Vector mu = illiquid::testing::joint().expected_gross_returns();
    const SolveResult r = solve(build_markowitz(mu, illiquid::testing::return_cov(), 0.0));
    ASSERT_EQ(r.status, SolveStatus::optimal);
    EXPECT_NEAR(extract_weights(r, 6)[1], 1.0, 1e-6);
    EXPECT_NEAR(r.objective, 1.0, 1e-6);
}

TEST(Markowitz, InfeasibleBelowMinimumRisk) {
    Vector mu(2);
    mu << 1.1, 1.05;
    Matrix S(2, 2);
    S << 0.04, 0.0, 0.0, 0.01;
    // minimum variance portfolio has standard deviation sqrt(0.008)
    EXPECT_EQ(solve(build_markowitz(mu, S, 0.05)).status, SolveStatus::infeasible);
    EXPECT_EQ(solve(build_markowitz(mu, S, 0.1)).status, SolveStatus::optimal);
}

TEST(Markowitz, AgreesWithSimplexGrid) {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 20; ++trial) {
        Vector mu(3);
        for (int i = 0; i < 3; ++i) mu[i] = 1.0 + 0.15 * u(gen);
        Matrix F(3, 3);
        for (int i = 0; i < 9; ++i) F.data()[i] = 0.15 * nd(gen);
        const Matrix S = F * F.transpose();
        double min_var = INFINITY;
        double best = -INFINITY;
        const Vector d = S.diagonal().cwiseSqrt();
        const double sigma = 0.5 * (d.minCoeff() + d.maxCoeff()) * (0.5 + u(gen));
        for (int a = 0; a <= 200; ++a) {
            for (int b = 0; a + b <= 200; ++b) {
                Vector w(3);
                w << a * 0.005, b * 0.005, 1.0 - (a + b) * 0.005;
                const double var = w.dot(S * w);
                min_var = std::min(min_var, var);
                if (std::sqrt(var) <= sigma) best = std::max(best, mu.dot(w));
            }
        }
        const SolveResult r = solve(build_markowitz(mu, S, sigma));
        if (!std::isfinite(best)) {
            EXPECT_NE(r.status, SolveStatus::optimal);
            continue;
        }
        ASSERT_EQ(r.status, SolveStatus::optimal) << trial;
        EXPECT_NEAR(r.objective, best, 1e-3) << trial;
        EXPECT_GE(r.objective, best - 1e-7) << trial;
    }
}

TEST(Markowitz, FrontierIsNondecreasingAndConcave) {
    const Vector mu = illiquid::testing::joint().expected_gross_returns();
    const Matrix S = illiquid::testing::return_cov();
    std::vector<double> ret;
    for (int k = 0; k < 30; ++k) {
        const SolveResult r = solve(build_markowitz(mu, S, 0.3 * k / 29.0));
        ASSERT_EQ(r.status, SolveStatus::optimal);
        ret.push_back(r.objective);
    }
    for (std::size_t k = 1; k < ret.size(); ++k) EXPECT_GE(ret[k], ret[k - 1] - 1e-7);
    for (std::size_t k = 1; k + 1 < ret.size(); ++k) EXPECT_GE(ret[k] - ret[k - 1], ret[k + 1] - ret[k] - 1e-6);
}

TEST(FullMpc, MedianInsolvencyIsLinear) {
    MpcConfig c;
    c.epsilon_ins = 0.5;
    const ReturnModel rm = make_return_model(illiquid::testing::joint());
    const ConicProgram p = build_full_mpc(joint_means(), JointState::cash(1.0, 1), c, rm);
    int linear = 0;
    for (const auto& e : p.nonnegatives()) linear += e.label.rfind("insolvency", 0) == 0 ? 1 : 0;
    for (const auto& s : p.socs()) EXPECT_NE(s.label.rfind("insolvency", 0), 0u);
    EXPECT_EQ(linear, c.H + 1);
    c.epsilon_ins = 0.02;
    int cones = 0;
    for (const auto& s : build_full_mpc(joint_means(), JointState::cash(1.0, 1), c, rm).socs()) {
        cones += s.label.rfind("insolvency", 0) == 0 ? 1 : 0;
    }
    EXPECT_EQ(cones, c.H + 1);
}

TEST(FullMpc, RefusesNonconvexInsolvency) {
    MpcConfig c;
    c.epsilon_ins = 0.6;
    const ReturnModel rm = make_return_model(illiquid::testing::joint());
    EXPECT_THROW(build_full_mpc(joint_means(), JointState::cash(1.0, 1), c, rm), NonconvexityError);
    c.epsilon_ins = 0.02;
    c.lambda_smooth = -1.0;
    EXPECT_THROW(build_full_mpc(joint_means(), JointState::cash(1.0, 1), c, rm), NonconvexityError);
}

TEST(FullMpc, PenalizedProgramIsAlwaysFeasible) {
    std::mt19937_64 gen(3);
    const ReturnModel rm = make_return_model(illiquid::testing::joint());
    MpcConfig c;
    for (int trial = 0; trial < 10; ++trial) {
        JointState x = random_state(gen);
        if (trial % 3 == 0) x.L = 0.0;  // nothing liquid to cover calls
        if (trial % 3 == 1) x.illiquid.K[0] *= 20.0;
        c.sigma = 0.03 * trial;
        const SolveResult r = solve(build_full_mpc(joint_means(), x, c, rm));
        ASSERT_EQ(r.status, SolveStatus::optimal) << trial;
        const ControlDecision u = extract_first_control(r, 1, 5);
        EXPECT_NEAR(u.h.sum(), x.L, 1e-6 * (1.0 + x.L));
    }
}

TEST(FullMpc, HardRiskProgramIsHomogeneous) {
    std::mt19937_64 gen(11);
    const ReturnModel rm = make_return_model(illiquid::testing::joint());
    const MpcConfig c = hard_config(0.2);
    for (int trial = 0; trial < 5; ++trial) {
        const JointState x = random_state(gen);
        const SolveResult base = solve(build_full_mpc(joint_means(), x, c, rm));
        ASSERT_EQ(base.status, SolveStatus::optimal) << trial;
        const ControlDecision u = extract_first_control(base, 1, 5);
        for (double s : {0.5, 2.0, 10.0}) {
            JointState xs = x;
            xs.L *= s;
            xs.illiquid.I *= s;
            xs.illiquid.K *= s;
            const SolveResult r = solve(build_full_mpc(joint_means(), xs, c, rm));
            ASSERT_EQ(r.status, SolveStatus::optimal);
            const ControlDecision us = extract_first_control(r, 1, 5);
            const double scale = s * (u.h.norm() + u.n.norm() + u.s) + 1e-12;
            EXPECT_LE((us.h - s * u.h).norm() / scale, 1e-5) << trial << " c=" << s;
            EXPECT_LE((us.n - s * u.n).norm() / scale, 1e-5) << trial << " c=" << s;
            EXPECT_LE(std::abs(us.s - s * u.s) / scale, 1e-5) << trial << " c=" << s;
        }
    }
}

TEST(FullMpc, RiskConstraintIsScaleInvariant) {
    const Matrix S = illiquid::testing::return_cov();
    const Matrix M = psd_sqrt_rows(S);
    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        Vector y(6);
        for (int i = 0; i < 6; ++i) y[i] = u(gen);
        const double sigma = 0.3 * u(gen);
        const bool inside = (M * y).norm() <= sigma * y.sum();
        for (double c : {0.01, 3.0, 1000.0}) EXPECT_EQ((M * (c * y)).norm() <= sigma * (c * y).sum(), inside);
        EXPECT_NEAR((M * y).norm(), std::sqrt(y.dot(S * y)), 1e-12);
    }
}

TEST(FullMpc, InsolvencyFeasibleSetShrinksWithEpsilon) {
    const ReturnModel rm = make_return_model(illiquid::testing::joint());
    const Matrix Sl = psd_sqrt_rows(rm.sigma_liq);
    std::mt19937_64 gen(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double eps[] = {0.5, 0.2, 0.05, 0.02, 0.001};
    for (int trial = 0; trial < 200; ++trial) {
        Vector h(5);
        for (int j = 0; j < 5; ++j) h[j] = u(gen);
        const double calls = 1.3 * u(gen) * h.sum();
        bool prev = true;
        for (double e : eps) {
            const bool ok = calls - h.dot(rm.mu_liq) <= normal_quantile(e) * (Sl * h).norm();
            EXPECT_TRUE(prev || !ok);
            prev = ok;
        }
    }
}

TEST(FullMpc, SlackConesReduceToLinearProgram) {
    MpcConfig c;
    c.epsilon_ins = 0.5;
    c.sigma = 100.0;
    c.lambda_smooth = 0.0;
    c.risk_mode = RiskMode::hard;
    const ReturnModel rm = make_return_model(illiquid::testing::joint());
    const JointState x{1.0, {Vector::Constant(1, 0.3), Vector::Constant(1, 0.2)}};
    const ConicProgram p = build_full_mpc(joint_means(), x, c, rm);
    const SolveResult full = solve(p);
    const SolveResult lp = solve(without_cones(p));
    ASSERT_EQ(full.status, SolveStatus::optimal);
    ASSERT_EQ(lp.status, SolveStatus::optimal);
    EXPECT_NEAR(full.objective, lp.objective, 1e-6 * std::abs(lp.objective));
    // all liquid wealth goes to the best liquid asset
    const ControlDecision u = extract_first_control(full, 1, 5);
    Eigen::Index best;
    rm.mu_liq.maxCoeff(&best);
    EXPECT_NEAR(u.h[best], x.L, 1e-5);
}

TEST(FullMpc, ZeroWealthGivesZeroControl) {
    const ReturnModel rm = make_return_model(illiquid::testing::joint());
    const SolveResult r = solve(build_full_mpc(joint_means(), JointState::cash(0.0, 1), hard_config(0.1), rm));
    ASSERT_EQ(r.status, SolveStatus::optimal);
    const ControlDecision u = extract_first_control(r, 1, 5);
    EXPECT_LT(u.h.norm() + u.n.norm() + u.s, 1e-6);
}

TEST(ConicProgram, BuiltProgramsPassAudit) {
    const ReturnModel rm = make_return_model(illiquid::testing::joint());
    EXPECT_NO_THROW(build_full_mpc(joint_means(), JointState::cash(1.0, 1), MpcConfig{}, rm).validate());
    EXPECT_NO_THROW(build_open_loop_qp(means(IntensityLink::as_written), published_plan()).validate());
    EXPECT_NO_THROW(build_markowitz(rm.expected, rm.sigma_ret, 0.1).validate());
}
