#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "illiquid/dynamics.hpp"
#include "illiquid/policies.hpp"

namespace illiquid {

/// One simulated path. states has T+1 entries (x_1..x_{T+1}); the per-period
/// vectors have T entries.
struct TrajectoryRecord {
    std::string policy;
    std::uint64_t seed = 0;
    std::vector<JointState> states;  ///< post-injection
    std::vector<ControlDecision> controls;
    std::vector<JointDraw> draws;
    std::vector<Vector> calls;
    std::vector<Vector> distributions;
    std::vector<double> injected;  ///< forced outside cash
    std::vector<double> returns;   ///< realized wealth return, NaN when W_t = 0
    int fallbacks = 0;
    std::string error;  ///< set when the path was aborted

    int periods() const { return static_cast<int>(controls.size()); }
    double wealth(int k) const { return states[static_cast<std::size_t>(k)].total_wealth(); }

    /// I of illiquid asset i at periods 1..T+1.
    std::vector<double> illiquid_path(int i = 0) const {
        std::vector<double> out;
        for (const auto& s : states) out.push_back(s.illiquid.I[i]);
        return out;
    }
};

inline void check_decision(const ControlDecision& u, int n_ill, int n_liq) {
    if (u.h.size() != n_liq || u.n.size() != n_ill) throw ArgumentError("policy returned a control of the wrong shape");
    if ((n_liq > 0 && u.h.minCoeff() < 0.0) || (n_ill > 0 && u.n.minCoeff() < 0.0) || u.s < 0.0 ||
        !u.h.allFinite() || !u.n.allFinite() || !std::isfinite(u.s)) {
        throw ArgumentError("policy returned a negative or non-finite control");
    }
}

/// Per period: decide from the current state, draw, step, and inject outside
/// cash if liquid wealth went negative.
inline TrajectoryRecord simulate_trajectory(const LatentDistribution& dist, Policy& policy, int T,
                                            std::uint64_t seed, const JointState& x0) {
    if (T < 1) throw ArgumentError("simulate_trajectory: T must be >= 1");
    RandomStream rng(seed);
    TrajectoryRecord rec;
    rec.policy = policy.name();
    rec.seed = seed;
    rec.states.reserve(static_cast<std::size_t>(T + 1));
    rec.states.push_back(x0);
    JointState x = x0;
    for (int t = 1; t <= T; ++t) {
        ControlDecision u = policy.decide({t, x});
        check_decision(u, dist.n_ill(), dist.n_liq());
        if (u.fallback) ++rec.fallbacks;
        const JointDraw d = sample_draw(dist, rng);
        JointStep s = step_joint(x, u, d);
        double inject = 0.0;
        if (s.next.L < 0.0) {
            inject = -s.next.L;
            s.next.L = 0.0;
        }
        const double w0 = x.total_wealth();
        const double w1 = s.next.total_wealth();
        rec.returns.push_back(w0 > 0.0 ? (w1 - u.s - inject) / w0 - 1.0 : std::nan(""));
        rec.controls.push_back(std::move(u));
        rec.draws.push_back(d);
        rec.calls.push_back(std::move(s.calls));
        rec.distributions.push_back(std::move(s.distributions));
        rec.injected.push_back(inject);
        x = s.next;
        rec.states.push_back(x);
    }
    return rec;
}

/// Mean and standard error across independent path statistics.
struct Estimate {
    double mean = 0.0;
    double se = 0.0;
    int count = 0;
};

inline Estimate estimate(const std::vector<double>& v) {
    Estimate e;
    std::vector<double> finite;
    for (double x : v) {
        if (std::isfinite(x)) finite.push_back(x);
    }
    e.count = static_cast<int>(finite.size());
    if (finite.empty()) {
        e.mean = std::nan("");
        e.se = std::nan("");
        return e;
    }
    double s = 0.0;
    for (double x : finite) s += x;
    e.mean = s / e.count;
    if (e.count > 1) {
        double ss = 0.0;
        for (double x : finite) ss += (x - e.mean) * (x - e.mean);
        e.se = std::sqrt(ss / (e.count - 1) / e.count);
    }
    return e;
}

/// Options for the commitment-tracking metrics.
struct TrackingSpec {
    double I_targ = 1.0;
    int rms_start = 5;  ///< first period of the delayed RMS window
};

struct MetricsSummary {
    std::string policy;
    int paths = 0;
    int periods = 0;
    Estimate realized_return;  ///< per-period wealth return, averaged within each path
    Estimate realized_vol;     ///< per-path standard deviation of per-period returns
    Estimate delayed_rms;      ///< illiquid asset 0 over periods rms_start..T
    Estimate tracking_mse;     ///< illiquid asset 0 over periods 1..T
    Estimate outside_cash;     ///< total policy plus forced outside cash per path
    double injection_frequency = 0.0;  ///< forced injections per path-period
    int fallbacks = 0;
    double max_accounting_error = 0.0;  ///< liquid update identity, relative to wealth
    int negativity_violations = 0;      ///< recorded states with L, I or K below zero
    int aborted_paths = 0;              ///< excluded from every statistic above
};

/// Per-path return statistics.
inline double path_mean_return(const std::vector<double>& r) {
    double s = 0.0;
    int n = 0;
    for (double x : r) {
        if (std::isfinite(x)) {
            s += x;
            ++n;
        }
    }
    return n > 0 ? s / n : std::nan("");
}

inline double path_volatility(const std::vector<double>& r) {
    std::vector<double> f;
    for (double x : r) {
        if (std::isfinite(x)) f.push_back(x);
    }
    if (f.size() < 2) return std::nan("");
    double m = 0.0;
    for (double x : f) m += x;
    m /= static_cast<double>(f.size());
    double ss = 0.0;
    for (double x : f) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(f.size() - 1));
}

/// Liquid-update identity residual of period k, relative to max(1, W_k).
inline double accounting_error(const TrajectoryRecord& rec, int k) {
    const auto i = static_cast<std::size_t>(k);
    const ControlDecision& u = rec.controls[i];
    const double expected = u.h.dot(rec.draws[i].R_liq) - rec.calls[i].sum() + rec.distributions[i].sum() + u.s +
                            rec.injected[i];
    return std::abs(rec.states[i + 1].L - expected) / std::max(1.0, rec.wealth(k));
}

inline MetricsSummary summarize(const std::vector<TrajectoryRecord>& recs,
                                const std::optional<TrackingSpec>& tracking = std::nullopt) {
    MetricsSummary m;
    if (recs.empty()) return m;
    m.policy = recs.front().policy;
    m.paths = static_cast<int>(recs.size());
    for (const auto& r : recs) m.periods = std::max(m.periods, r.periods());
    std::vector<double> ret, vol, rms, mse, cash;
    long injections = 0, path_periods = 0;
    for (const auto& r : recs) {
        if (!r.error.empty()) {
            ++m.aborted_paths;
            continue;
        }
        ret.push_back(path_mean_return(r.returns));
        vol.push_back(path_volatility(r.returns));
        double c = 0.0;
        for (int k = 0; k < r.periods(); ++k) {
            const auto i = static_cast<std::size_t>(k);
            c += r.controls[i].s + r.injected[i];
            injections += r.injected[i] > 0.0 ? 1 : 0;
            ++path_periods;
            m.max_accounting_error = std::max(m.max_accounting_error, accounting_error(r, k));
        }
        for (const auto& s : r.states) {
            if (s.L < 0.0 || (s.illiquid.I.size() > 0 && s.illiquid.I.minCoeff() < 0.0) ||
                (s.illiquid.K.size() > 0 && s.illiquid.K.minCoeff() < 0.0)) {
                ++m.negativity_violations;
            }
        }
        cash.push_back(c);
        m.fallbacks += r.fallbacks;
        if (tracking && r.states.front().illiquid.I.size() > 0) {
            std::vector<double> I = r.illiquid_path(0);
            I.pop_back();  // periods 1..T
            const bool window = static_cast<int>(I.size()) >= tracking->rms_start;
            rms.push_back(window ? delayed_rms(I, tracking->I_targ, tracking->rms_start) : std::nan(""));
            mse.push_back(tracking_mse(I, tracking->I_targ));
        }
    }
    m.realized_return = estimate(ret);
    m.realized_vol = estimate(vol);
    m.delayed_rms = estimate(rms);
    m.tracking_mse = estimate(mse);
    m.outside_cash = estimate(cash);
    m.injection_frequency = path_periods > 0 ? static_cast<double>(injections) / static_cast<double>(path_periods) : 0.0;
    return m;
}

/// Runs `work(p)` for p = 0..n-1 on up to `threads` workers.
inline void parallel_for(int n, int threads, const std::function<void(int)>& work) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int p = 0; p < n; ++p) work(p);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (int p = next++; p < n; p = next++) work(p);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

struct MonteCarloRun {
    MetricsSummary summary;
    std::vector<TrajectoryRecord> records;  ///< in path-index order
};

/// Path p uses the child stream derive_seed(master_seed, p) and its own clone
/// of the policy, so results do not depend on the thread count. A path whose
/// policy throws is kept with its error message and counted as aborted.
inline MonteCarloRun run_monte_carlo(const LatentDistribution& dist, const Policy& policy, int T, int n_paths,
                                     std::uint64_t master_seed, const JointState& x0, int threads = 1,
                                     const std::optional<TrackingSpec>& tracking = std::nullopt) {
    if (n_paths < 1) throw ArgumentError("run_monte_carlo: need at least one path");
    MonteCarloRun run;
    run.records.resize(static_cast<std::size_t>(n_paths));
    parallel_for(n_paths, threads, [&](int p) {
        std::unique_ptr<Policy> local = policy.clone();
        TrajectoryRecord& rec = run.records[static_cast<std::size_t>(p)];
        const std::uint64_t seed = derive_seed(master_seed, static_cast<std::uint64_t>(p));
        try {
            rec = simulate_trajectory(dist, *local, T, seed, x0);
        } catch (const std::exception& e) {
            rec = TrajectoryRecord{};
            rec.policy = local->name();
            rec.seed = seed;
            rec.error = e.what();
        }
    });
    run.summary = summarize(run.records, tracking);
    return run;
}

/// Relaxed world: every asset trades freely and wealth is rebalanced to w*
/// (return order) each period, W_{t+1} = W_t w*'R_t. Uses the same draws as
/// run_monte_carlo with the same master seed.
inline MetricsSummary simulate_relaxed(const LatentDistribution& dist, const Vector& w_star, int T, int n_paths,
                                       std::uint64_t master_seed, double W0 = 1.0) {
    if (w_star.size() != dist.n_ill() + dist.n_liq()) throw ArgumentError("relaxed weights dimension mismatch");
    std::vector<TrajectoryRecord> recs(static_cast<std::size_t>(n_paths));
    for (int p = 0; p < n_paths; ++p) {
        RandomStream rng(derive_seed(master_seed, static_cast<std::uint64_t>(p)));
        TrajectoryRecord& r = recs[static_cast<std::size_t>(p)];
        r.policy = "relaxed";
        double W = W0;
        for (int t = 0; t < T; ++t) {
            const JointDraw d = sample_draw(dist, rng);
            Vector R(w_star.size());
            R << d.R_ill, d.R_liq;
            const Vector u = markowitz_rebalance(W, w_star);
            const double next = u.dot(R);
            r.returns.push_back(W > 0.0 ? next / W - 1.0 : std::nan(""));
            W = next;
        }
    }
    std::vector<double> ret, vol;
    for (const auto& r : recs) {
        ret.push_back(path_mean_return(r.returns));
        vol.push_back(path_volatility(r.returns));
    }
    MetricsSummary m;
    m.policy = "relaxed";
    m.paths = n_paths;
    m.periods = T;
    m.realized_return = estimate(ret);
    m.realized_vol = estimate(vol);
    m.delayed_rms = m.tracking_mse = m.outside_cash = estimate({});
    return m;
}

struct FrontierPoint {
    std::string policy;
    int horizon = 0;
    double sigma_config = 0.0;
    double realized_vol = 0.0;
    double realized_ret = 0.0;
    double se_vol = 0.0;
    double se_ret = 0.0;
    double injection_frequency = 0.0;
    int fallbacks = 0;
    MetricsSummary summary;
};

inline FrontierPoint frontier_point(const MetricsSummary& m, double sigma) {
    return {m.policy,
            m.periods,
            sigma,
            m.realized_vol.mean,
            m.realized_return.mean,
            m.realized_vol.se,
            m.realized_return.se,
            m.injection_frequency,
            m.fallbacks,
            m};
}

/// Everything the frontier policies need besides sigma.
struct FrontierContext {
    const LatentDistribution* dist = nullptr;
    const MeanMatrices* joint_means = nullptr;
    ReturnModel returns;
    MpcConfig mpc;
    double kappa = 0.1;
    JointState x0;
    int threads = 1;
    /// Receives the Monte Carlo records of each policy run, e.g. for audits.
    std::function<void(const std::string&, double, const MonteCarloRun&)> on_run;
    /// Receives each sigma whose target could not be built, with the reason.
    std::function<void(const std::string&, double, const std::string&)> on_failure;
};

enum class FrontierPolicy { relaxed, heuristic, mpc };

inline const char* to_string(FrontierPolicy p) {
    switch (p) {
        case FrontierPolicy::relaxed: return "relaxed";
        case FrontierPolicy::heuristic: return "heuristic";
        case FrontierPolicy::mpc: return "mpc";
    }
    return "unknown";
}

/// Sweeps sigma for one policy family under matched seeds. A sigma whose
/// Markowitz target cannot be solved is skipped.
inline std::vector<FrontierPoint> frontier_sweep(const FrontierContext& ctx, FrontierPolicy family,
                                                 const std::vector<double>& sigma_grid, int T, int n_paths,
                                                 std::uint64_t master_seed) {
    if (sigma_grid.empty()) throw ArgumentError("frontier_sweep: empty sigma grid");
    if (!ctx.dist || !ctx.joint_means) throw ArgumentError("frontier_sweep: incomplete context");
    const LatentDistribution& dist = *ctx.dist;
    const int n = dist.n_ill();
    std::vector<FrontierPoint> out;
    const SteadyStateGains gains = steady_state_gains(*ctx.joint_means);
    Eigen::Index cash = 0;
    if (ctx.returns.sigma_liq.rows() > 0) ctx.returns.sigma_liq.diagonal().minCoeff(&cash);
    for (double sigma : sigma_grid) {
        std::optional<Vector> w;
        std::string reason = "Markowitz problem not solved";
        try {
            w = markowitz_weights(ctx.returns, sigma);
        } catch (const std::exception& e) {
            reason = e.what();
        }
        if (!w) {
            if (ctx.on_failure) ctx.on_failure(to_string(family), sigma, reason);
            continue;
        }
        if (family == FrontierPolicy::relaxed) {
            out.push_back(frontier_point(simulate_relaxed(dist, *w, T, n_paths, master_seed, ctx.x0.total_wealth()), sigma));
            continue;
        }
        auto heuristic = std::make_unique<SteadyStateHeuristic>(TargetAllocation::from_return_order(*w, n), gains,
                                                                ctx.kappa, static_cast<int>(cash));
        std::unique_ptr<Policy> policy;
        if (family == FrontierPolicy::heuristic) {
            policy = std::move(heuristic);
        } else {
            MpcConfig cfg = ctx.mpc;
            cfg.sigma = sigma;
            policy = std::make_unique<FullMpcPolicy>(*ctx.joint_means, cfg, ctx.returns, std::move(heuristic));
        }
        const MonteCarloRun run = run_monte_carlo(dist, *policy, T, n_paths, master_seed, ctx.x0, ctx.threads);
        if (ctx.on_run) ctx.on_run(to_string(family), sigma, run);
        out.push_back(frontier_point(run.summary, sigma));
    }
    return out;
}

/// Relaxed-frontier return at volatility v by linear interpolation over points
/// sorted by realized volatility; clamped at the ends.
inline double interpolate_frontier(std::vector<FrontierPoint> pts, double v) {
    if (pts.empty()) throw ArgumentError("interpolate_frontier: no points");
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.realized_vol < b.realized_vol; });
    if (v <= pts.front().realized_vol) return pts.front().realized_ret;
    if (v >= pts.back().realized_vol) return pts.back().realized_ret;
    for (std::size_t k = 1; k < pts.size(); ++k) {
        if (v <= pts[k].realized_vol) {
            const double span = pts[k].realized_vol - pts[k - 1].realized_vol;
            const double a = span > 0.0 ? (v - pts[k - 1].realized_vol) / span : 1.0;
            return pts[k - 1].realized_ret + a * (pts[k].realized_ret - pts[k - 1].realized_ret);
        }
    }
    return pts.back().realized_ret;
}

/// Mean weights over (liquid..., illiquid...) assets per period, averaged over
/// paths with positive wealth.
struct AllocationTrace {
    std::vector<Vector> weights;  ///< one entry per recorded state
    std::vector<int> excluded;    ///< zero-wealth paths skipped at each period
};

inline AllocationTrace allocation_trace(const std::vector<TrajectoryRecord>& recs) {
    if (recs.empty()) throw ArgumentError("allocation_trace: no records");
    AllocationTrace out;
    const TrajectoryRecord* first = nullptr;
    for (const auto& r : recs) {
        if (r.error.empty()) {
            first = &r;
            break;
        }
    }
    if (!first) return out;
    const std::size_t periods = first->states.size();
    for (std::size_t k = 0; k < periods; ++k) {
        const JointState& s0 = first->states[k];
        const Eigen::Index nl = first->controls.empty() ? 0 : first->controls.front().h.size();
        Vector acc = Vector::Zero(nl + s0.illiquid.I.size());
        int used = 0, skipped = 0;
        for (const auto& r : recs) {
            if (!r.error.empty()) continue;
            const JointState& s = r.states[k];
            const double W = s.total_wealth();
            if (!(W > 0.0)) {
                ++skipped;
                continue;
            }
            // the state's liquid wealth is held as the control chosen in that period;
            // the terminal state has no control, so its liquid part sits in the last holdings' mix
            Vector h;
            if (k < r.controls.size()) {
                h = r.controls[k].h;
            } else {
                h = r.controls.back().h;
                const double hs = h.sum();
                h = hs > 0.0 ? Vector(h * (s.L / hs)) : Vector(Vector::Zero(nl));
                if (hs <= 0.0 && nl > 0) h[0] = s.L;
            }
            Vector y(acc.size());
            y << h, s.illiquid.I;
            acc += y / W;
            ++used;
        }
        out.weights.push_back(used > 0 ? Vector(acc / used) : acc);
        out.excluded.push_back(skipped);
    }
    return out;
}

}  // namespace illiquid
