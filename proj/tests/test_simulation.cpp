#include <gtest/gtest.h>

#include <cstring>

#include "illiquid/simulation.hpp"
#include "test_support.hpp"

using namespace illiquid;

namespace {

const LatentDistribution& dist() {
    static const LatentDistribution d = illiquid::testing::joint();
    return d;
}

const MeanMatrices& joint_means() {
    static const MeanMatrices mm = mean_matrices(dist(), SystemLayout::joint, 200000);
    return mm;
}

Vector all_cash_weights() {
    Vector w = Vector::Zero(6);
    w[1] = 1.0;
    return w;
}

SteadyStateHeuristic cash_policy() {
    return SteadyStateHeuristic(TargetAllocation::from_return_order(all_cash_weights(), 1),
                                steady_state_gains(joint_means()), 0.1, 0);
}

SteadyStateHeuristic mixed_policy() {
    Vector w(6);
    w << 0.3, 0.2, 0.1, 0.2, 0.1, 0.1;
    return SteadyStateHeuristic(TargetAllocation::from_return_order(w, 1), steady_state_gains(joint_means()));
}

bool same_summary(const MetricsSummary& a, const MetricsSummary& b) {
    auto eq = [](const Estimate& x, const Estimate& y) {
        return std::memcmp(&x.mean, &y.mean, sizeof(double)) == 0 && std::memcmp(&x.se, &y.se, sizeof(double)) == 0;
    };
    return eq(a.realized_return, b.realized_return) && eq(a.realized_vol, b.realized_vol) &&
           eq(a.outside_cash, b.outside_cash) && a.injection_frequency == b.injection_frequency &&
           a.max_accounting_error == b.max_accounting_error;
}

}  // namespace

TEST(SimulateTrajectory, AllCashWealthIsConstant) {
    SteadyStateHeuristic p = cash_policy();
    const TrajectoryRecord r = simulate_trajectory(dist(), p, 15, 7, JointState::cash(2.5, 1));
    ASSERT_EQ(r.periods(), 15);
    ASSERT_EQ(r.states.size(), 16u);
    for (int k = 0; k <= 15; ++k) EXPECT_EQ(r.wealth(k), 2.5);
    for (double x : r.returns) EXPECT_EQ(x, 0.0);
    for (double x : r.injected) EXPECT_EQ(x, 0.0);
}

TEST(SimulateTrajectory, UnitCommitmentIsStochasticStepResponse) {
    OpenLoopPolicy p(std::vector<Vector>(10, Vector::Ones(1)), 1, 5);
    const TrajectoryRecord r = simulate_trajectory(dist(), p, 10, 3, JointState::cash(0.0, 1));
    IlliquidState x = IlliquidState::zero(1);
    for (int k = 0; k < 10; ++k) {
        x = step_illiquid(x, Vector::Ones(1), r.draws[static_cast<std::size_t>(k)]).next;
        EXPECT_EQ(x.I[0], r.states[static_cast<std::size_t>(k + 1)].illiquid.I[0]);
        EXPECT_EQ(x.K[0], r.states[static_cast<std::size_t>(k + 1)].illiquid.K[0]);
    }
    EXPECT_GT(r.states.back().illiquid.I[0], 0.0);
}

TEST(SimulateTrajectory, MatrixReplayMatchesComponentUpdate) {
    SteadyStateHeuristic p = mixed_policy();
    const TrajectoryRecord r = simulate_trajectory(dist(), p, 20, 11, JointState::cash(1.0, 1));
    for (int k = 0; k < r.periods(); ++k) {
        const auto i = static_cast<std::size_t>(k);
        const SystemMatrices m = build_matrices(r.draws[i], SystemLayout::joint);
        const JointState& s = r.states[i];
        Vector x(3), u(7);
        x << s.L, s.illiquid.I, s.illiquid.K;
        u << r.controls[i].h, r.controls[i].n, r.controls[i].s;
        const Vector next = m.A * x + m.B * u;
        const JointState& t = r.states[i + 1];
        EXPECT_NEAR(next[0] + r.injected[i], t.L, 1e-10 * (1.0 + t.L));
        EXPECT_NEAR(next[1], t.illiquid.I[0], 1e-10 * (1.0 + t.illiquid.I[0]));
        EXPECT_NEAR(next[2], t.illiquid.K[0], 1e-10 * (1.0 + t.illiquid.K[0]));
    }
}

TEST(SimulateTrajectory, ForcedInjectionKeepsLiquidWealthNonnegative) {
    // heavy uncalled commitments with no liquid wealth force injections
    OpenLoopPolicy p(std::vector<Vector>(5, Vector::Constant(1, 3.0)), 1, 5);
    const TrajectoryRecord r = simulate_trajectory(dist(), p, 5, 1, JointState::cash(0.0, 1));
    double injected = 0.0;
    for (std::size_t k = 0; k < r.injected.size(); ++k) {
        injected += r.injected[k];
        EXPECT_GE(r.states[k + 1].L, 0.0);
    }
    EXPECT_GT(injected, 0.0);
    for (int k = 0; k < r.periods(); ++k) EXPECT_LE(accounting_error(r, k), 1e-12);
}

TEST(SimulateTrajectory, RejectsEmptyHorizon) {
    SteadyStateHeuristic p = cash_policy();
    EXPECT_THROW(simulate_trajectory(dist(), p, 0, 1, JointState::cash(1.0, 1)), ArgumentError);
}

TEST(MonteCarlo, SinglePathSummaryEqualsTrajectoryMetrics) {
    SteadyStateHeuristic p = mixed_policy();
    const MonteCarloRun run = run_monte_carlo(dist(), p, 12, 1, 99, JointState::cash(1.0, 1));
    SteadyStateHeuristic q = mixed_policy();
    const TrajectoryRecord r = simulate_trajectory(dist(), q, 12, derive_seed(99, 0), JointState::cash(1.0, 1));
    EXPECT_EQ(run.summary.realized_return.mean, path_mean_return(r.returns));
    EXPECT_EQ(run.summary.realized_vol.mean, path_volatility(r.returns));
    EXPECT_EQ(run.summary.paths, 1);
}

TEST(MonteCarlo, MatchedSeedsGiveIdenticalDraws) {
    SteadyStateHeuristic a = cash_policy();
    SteadyStateHeuristic b = mixed_policy();
    const MonteCarloRun ra = run_monte_carlo(dist(), a, 6, 4, 5, JointState::cash(1.0, 1));
    const MonteCarloRun rb = run_monte_carlo(dist(), b, 6, 4, 5, JointState::cash(1.0, 1));
    for (std::size_t p = 0; p < 4; ++p) {
        for (std::size_t k = 0; k < 6; ++k) {
            EXPECT_EQ(ra.records[p].draws[k].R_liq, rb.records[p].draws[k].R_liq);
            EXPECT_EQ(ra.records[p].draws[k].R_ill, rb.records[p].draws[k].R_ill);
        }
    }
}

TEST(MonteCarlo, ThreadCountDoesNotChangeResults) {
    SteadyStateHeuristic p = mixed_policy();
    const MonteCarloRun one = run_monte_carlo(dist(), p, 10, 16, 21, JointState::cash(1.0, 1), 1);
    const MonteCarloRun four = run_monte_carlo(dist(), p, 10, 16, 21, JointState::cash(1.0, 1), 4);
    EXPECT_TRUE(same_summary(one.summary, four.summary));
    for (std::size_t i = 0; i < one.records.size(); ++i) {
        EXPECT_EQ(one.records[i].seed, four.records[i].seed);
        EXPECT_EQ(one.records[i].states.back().L, four.records[i].states.back().L);
    }
}

TEST(MonteCarlo, AccountingAndNonnegativityHold) {
    SteadyStateHeuristic p = mixed_policy();
    const MonteCarloRun run = run_monte_carlo(dist(), p, 20, 50, 8, JointState::cash(1.0, 1));
    EXPECT_LE(run.summary.max_accounting_error, 1e-9);
    EXPECT_EQ(run.summary.negativity_violations, 0);
    EXPECT_EQ(run.summary.fallbacks, 0);
}

TEST(MonteCarlo, MeanPathFollowsMeanDynamics) {
    const int T = 20, paths = 4000;
    std::vector<Vector> plan;
    for (int t = 0; t < T; ++t) plan.push_back(Vector::Constant(1, t < 5 ? 0.5 : 0.2));
    OpenLoopPolicy p(plan, 1, 5);
    const MonteCarloRun run = run_monte_carlo(dist(), p, T, paths, 17, JointState::cash(0.0, 1));
    const MeanMatrices mm = illiquid_subsystem(joint_means());
    Vector x = Vector::Zero(2);
    for (int t = 0; t < T; ++t) {
        x = mm.A() * x + mm.B() * plan[static_cast<std::size_t>(t)];
        for (int c = 0; c < 2; ++c) {
            std::vector<double> v;
            for (const auto& r : run.records) {
                const IlliquidState& s = r.states[static_cast<std::size_t>(t + 1)].illiquid;
                v.push_back(c == 0 ? s.I[0] : s.K[0]);
            }
            const Estimate e = estimate(v);
            EXPECT_LE(std::abs(e.mean - x[c]), 3.0 * e.se) << "t=" << t + 1 << " component " << c;
        }
    }
}

TEST(MonteCarlo, TrackingMetricsUseIlliquidPath) {
    OpenLoopPolicy p(std::vector<Vector>(8, Vector::Constant(1, 0.3)), 1, 5);
    const MonteCarloRun run =
        run_monte_carlo(dist(), p, 8, 3, 2, JointState::cash(0.0, 1), 1, TrackingSpec{1.0, 5});
    std::vector<double> I = run.records[0].illiquid_path();
    I.pop_back();
    const double expected = delayed_rms(I, 1.0, 5);
    std::vector<double> all;
    for (const auto& r : run.records) {
        std::vector<double> J = r.illiquid_path();
        J.pop_back();
        all.push_back(delayed_rms(J, 1.0, 5));
    }
    EXPECT_EQ(all[0], expected);
    EXPECT_DOUBLE_EQ(run.summary.delayed_rms.mean, estimate(all).mean);
}

TEST(Estimate, MeanAndStandardError) {
    const Estimate e = estimate({1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(e.mean, 2.5);
    EXPECT_NEAR(e.se, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
    EXPECT_EQ(estimate({std::nan(""), 1.0}).count, 1);
}

TEST(Relaxed, AllCashHasNoRiskOrReturn) {
    const MetricsSummary m = simulate_relaxed(dist(), all_cash_weights(), 20, 30, 4);
    EXPECT_EQ(m.realized_return.mean, 0.0);
    EXPECT_EQ(m.realized_vol.mean, 0.0);
}

TEST(Relaxed, UsesSameDrawsAsPolicySimulation) {
    Vector w = Vector::Zero(6);
    w[2] = 1.0;
    const MetricsSummary m = simulate_relaxed(dist(), w, 5, 3, 12);
    Vector cw = Vector::Zero(6);
    cw[2] = 1.0;
    SteadyStateHeuristic p(TargetAllocation::from_return_order(cw, 1), steady_state_gains(joint_means()), 0.0, 0);
    const MonteCarloRun run = run_monte_carlo(dist(), p, 5, 3, 12, JointState::cash(1.0, 1));
    EXPECT_NEAR(m.realized_return.mean, run.summary.realized_return.mean, 1e-14);
    EXPECT_NEAR(m.realized_vol.mean, run.summary.realized_vol.mean, 1e-14);
}

TEST(Relaxed, MarkowitzFrontierIsNondecreasing) {
    FrontierContext ctx;
    ctx.dist = &dist();
    ctx.joint_means = &joint_means();
    ctx.returns = make_return_model(dist());
    ctx.x0 = JointState::cash(1.0, 1);
    const std::vector<FrontierPoint> pts =
        frontier_sweep(ctx, FrontierPolicy::relaxed, {0.0, 0.05, 0.1, 0.15, 0.2}, 20, 100, 3);
    ASSERT_EQ(pts.size(), 5u);
    EXPECT_NEAR(pts[0].realized_vol, 0.0, 1e-12);
    EXPECT_NEAR(pts[0].realized_ret, 0.0, 1e-6);
    for (std::size_t k = 1; k < pts.size(); ++k) {
        EXPECT_GT(pts[k].realized_vol, pts[k - 1].realized_vol);
        EXPECT_GE(pts[k].realized_ret, pts[k - 1].realized_ret);
    }
}

TEST(Frontier, InterpolationIsPiecewiseLinear) {
    std::vector<FrontierPoint> pts(3);
    pts[0].realized_vol = 0.0;
    pts[0].realized_ret = 0.0;
    pts[1].realized_vol = 0.2;
    pts[1].realized_ret = 0.04;
    pts[2].realized_vol = 0.1;
    pts[2].realized_ret = 0.03;
    EXPECT_DOUBLE_EQ(interpolate_frontier(pts, 0.05), 0.015);
    EXPECT_DOUBLE_EQ(interpolate_frontier(pts, 0.15), 0.035);
    EXPECT_DOUBLE_EQ(interpolate_frontier(pts, 0.5), 0.04);
}

TEST(Frontier, UnsolvableSigmaIsSkipped) {
    FrontierContext ctx;
    ctx.dist = &dist();
    ctx.joint_means = &joint_means();
    ctx.returns = make_return_model(dist());
    ctx.x0 = JointState::cash(1.0, 1);
    EXPECT_TRUE(frontier_sweep(ctx, FrontierPolicy::relaxed, {-0.1}, 5, 2, 1).empty());
    EXPECT_THROW(frontier_sweep(ctx, FrontierPolicy::relaxed, {}, 5, 2, 1), ArgumentError);
}

TEST(AllocationTrace, AllCashPolicyHoldsCash) {
    SteadyStateHeuristic p = cash_policy();
    const MonteCarloRun run = run_monte_carlo(dist(), p, 5, 4, 1, JointState::cash(1.0, 1));
    const AllocationTrace tr = allocation_trace(run.records);
    ASSERT_EQ(tr.weights.size(), 6u);
    for (const Vector& w : tr.weights) {
        EXPECT_EQ(w[0], 1.0);
        EXPECT_NEAR(w.sum(), 1.0, 1e-9);
    }
}

TEST(AllocationTrace, WeightsSumToOneAndZeroWealthIsExcluded) {
    SteadyStateHeuristic p = mixed_policy();
    MonteCarloRun run = run_monte_carlo(dist(), p, 10, 6, 2, JointState::cash(1.0, 1));
    const AllocationTrace tr = allocation_trace(run.records);
    for (const Vector& w : tr.weights) EXPECT_NEAR(w.sum(), 1.0, 1e-9);
    SteadyStateHeuristic q = cash_policy();
    run.records.push_back(simulate_trajectory(dist(), q, 10, 1, JointState::cash(0.0, 1)));
    const AllocationTrace tz = allocation_trace(run.records);
    EXPECT_EQ(tz.excluded.front(), 1);
    EXPECT_THROW(allocation_trace({}), ArgumentError);
}

namespace {

class ThrowingPolicy final : public Policy {
public:
    ControlDecision decide(const PolicyObservation& obs) override {
        if (obs.t == 3) throw ModelError("boom");
        return zero_control(1, 5);
    }
    std::string name() const override { return "throwing"; }
    std::unique_ptr<Policy> clone() const override { return std::make_unique<ThrowingPolicy>(*this); }
};

}  // namespace

TEST(MonteCarlo, PolicyExceptionAbortsOnlyThatPath) {
    ThrowingPolicy p;
    const MonteCarloRun run = run_monte_carlo(dist(), p, 5, 3, 1, JointState::cash(0.0, 1));
    EXPECT_EQ(run.summary.aborted_paths, 3);
    for (const auto& r : run.records) EXPECT_EQ(r.error, "boom");
}
