#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "illiquid/dynamics.hpp"
#include "illiquid/problems.hpp"
#include "illiquid/socp_solver.hpp"

namespace illiquid {

struct PolicyObservation {
    int t = 1;  ///< 1-based period index
    JointState state;
};

/// State-to-control map. Instances may keep per-path memory (e.g. the last
/// executed commitment), so the harness clones one instance per path.
class Policy {
public:
    virtual ~Policy() = default;
    virtual ControlDecision decide(const PolicyObservation& obs) = 0;
    virtual std::string name() const = 0;
    virtual std::unique_ptr<Policy> clone() const = 0;
};

/// Target weights over (liquid..., illiquid...) assets.
struct TargetAllocation {
    Vector liquid;
    Vector illiquid;

    void validate() const {
        if (liquid.size() > 0 && liquid.minCoeff() < 0.0) throw ArgumentError("target weights must be nonnegative");
        if (illiquid.size() > 0 && illiquid.minCoeff() < 0.0) throw ArgumentError("target weights must be nonnegative");
        if (std::abs(liquid.sum() + illiquid.sum() - 1.0) > 1e-9) throw ArgumentError("target weights must sum to 1");
    }

    /// From weights in return order (illiquid..., liquid...).
    static TargetAllocation from_return_order(const Vector& w, int n_ill) {
        TargetAllocation t{w.tail(w.size() - n_ill), w.head(n_ill)};
        t.validate();
        return t;
    }
};

/// Zero-liquid/all-commitment decision template of the right shape.
inline ControlDecision zero_control(int n_ill, int n_liq) {
    return {Vector::Zero(n_liq), Vector::Zero(n_ill), 0.0, false};
}

/// Executes a precomputed plan; exhausted plans commit nothing.
class OpenLoopPolicy final : public Policy {
public:
    OpenLoopPolicy(std::vector<Vector> plan, int n_ill, int n_liq)
        : plan_(std::move(plan)), n_ill_(n_ill), n_liq_(n_liq) {}

    ControlDecision decide(const PolicyObservation& obs) override {
        ControlDecision u = zero_control(n_ill_, n_liq_);
        if (obs.t >= 1 && obs.t <= static_cast<int>(plan_.size())) u.n = plan_[static_cast<std::size_t>(obs.t - 1)];
        return u;
    }
    std::string name() const override { return "open-loop"; }
    std::unique_ptr<Policy> clone() const override { return std::make_unique<OpenLoopPolicy>(*this); }

private:
    std::vector<Vector> plan_;
    int n_ill_;
    int n_liq_;
};

struct CommitmentMpcConfig {
    int H = 20;  ///< commitments planned each period (receding mode)
    Vector I_targ;
    double gamma_smooth = 1.0;
    double n_lim = std::numeric_limits<double>::infinity();
    /// When set, plan to the fixed end T with the open-loop weights and smooth
    /// against the last executed commitment (shrinking horizon).
    std::optional<int> shrink_to;
};

/// Re-plans commitments from the observed illiquid state and executes the first.
class CommitmentMpcPolicy final : public Policy {
public:
    CommitmentMpcPolicy(MeanMatrices mm, CommitmentMpcConfig cfg, int n_liq = 0)
        : mm_(illiquid_subsystem(mm)), cfg_(std::move(cfg)), n_liq_(n_liq) {}

    ControlDecision decide(const PolicyObservation& obs) override {
        const int n = mm_.n_ill();
        ControlDecision u = zero_control(n, n_liq_);
        int H = cfg_.H;
        CommitmentMpcOptions opt;
        if (cfg_.shrink_to) {
            H = *cfg_.shrink_to - obs.t + 1;
            if (H < 1) return u;
            opt.weight_horizon = *cfg_.shrink_to;
            if (obs.t > 1) opt.n_prev = last_;
        }
        const SolveResult r = solve(build_commitment_mpc_qp(mm_, obs.state.illiquid, H, cfg_.I_targ,
                                                            cfg_.gamma_smooth, cfg_.n_lim, opt));
        if (r.ok()) {
            u.n = extract_commitment_plan(r, n, H).n.front();
        } else {
            u.n = last_.size() == n ? last_ : Vector::Zero(n);
            u.fallback = true;
        }
        last_ = u.n;
        return u;
    }
    std::string name() const override { return "commitment-mpc"; }
    std::unique_ptr<Policy> clone() const override {
        auto p = std::make_unique<CommitmentMpcPolicy>(*this);
        p->last_ = Vector();
        return p;
    }

private:
    MeanMatrices mm_;
    CommitmentMpcConfig cfg_;
    int n_liq_;
    Vector last_;
};

/// Constant-commitment rule sized by the steady-state illiquid gain, with
/// optional proportional feedback on the illiquid tracking error.
class SteadyStateHeuristic final : public Policy {
public:
    /// cash_index: liquid asset that absorbs wealth when the liquid target is empty.
    SteadyStateHeuristic(TargetAllocation theta, SteadyStateGains gains, double kappa = 0.1, int cash_index = 0)
        : theta_(std::move(theta)), gains_(std::move(gains)), kappa_(kappa), cash_index_(cash_index) {
        theta_.validate();
        if (gains_.alpha_I.size() != theta_.illiquid.size()) throw ArgumentError("gain dimension mismatch");
        if (theta_.liquid.size() > 0 && (cash_index_ < 0 || cash_index_ >= theta_.liquid.size())) {
            throw ArgumentError("cash index out of range");
        }
    }

    ControlDecision decide(const PolicyObservation& obs) override {
        const int n = static_cast<int>(theta_.illiquid.size());
        const int nl = static_cast<int>(theta_.liquid.size());
        ControlDecision u = zero_control(n, nl);
        const double L = obs.state.L;
        if (L < 0.0) {
            u.s = -L;
            return u;
        }
        const double liquid_total = theta_.liquid.sum();
        if (liquid_total > 0.0) {
            u.h = L * theta_.liquid / liquid_total;
        } else if (nl > 0) {
            u.h[cash_index_] = L;
        }
        const double wealth = L + obs.state.illiquid.I.sum();
        for (int i = 0; i < n; ++i) {
            const double target = theta_.illiquid[i] * wealth;
            const double gap = target - obs.state.illiquid.I[i];
            u.n[i] = std::max(0.0, (target + kappa_ * gap) / gains_.alpha_I[i]);
        }
        return u;
    }
    std::string name() const override { return "heuristic"; }
    std::unique_ptr<Policy> clone() const override { return std::make_unique<SteadyStateHeuristic>(*this); }

private:
    TargetAllocation theta_;
    SteadyStateGains gains_;
    double kappa_;
    int cash_index_;
};

/// Receding-horizon joint MPC. The observed state is normalized to unit
/// exposure before solving and the decision rescaled; any non-optimal solve
/// degrades to the fallback policy for that period.
class FullMpcPolicy final : public Policy {
public:
    FullMpcPolicy(MeanMatrices mm, MpcConfig cfg, ReturnModel rm, std::unique_ptr<Policy> fallback)
        : mm_(std::make_shared<const MeanMatrices>(std::move(mm))), cfg_(cfg),
          rm_(std::make_shared<const ReturnModel>(std::move(rm))), fallback_(std::move(fallback)) {
        cfg_.validate();
        if (mm_->layout() != SystemLayout::joint) throw ArgumentError("full MPC needs joint mean matrices");
        if (rm_->sigma_liq.rows() > 0) rm_->sigma_liq.diagonal().minCoeff(&cash_index_);
    }

    FullMpcPolicy(const FullMpcPolicy& o)
        : mm_(o.mm_), cfg_(o.cfg_), rm_(o.rm_), fallback_(o.fallback_ ? o.fallback_->clone() : nullptr),
          cash_index_(o.cash_index_) {}

    ControlDecision decide(const PolicyObservation& obs) override {
        const int n = mm_->n_ill();
        const int nl = mm_->n_liq();
        ControlDecision u = zero_control(n, nl);
        const JointState& x = obs.state;
        if (x.L < 0.0) {
            u.s = -x.L;
            return u;
        }
        const double scale = x.L + x.illiquid.I.sum() + x.illiquid.K.sum();
        if (!(scale > 0.0)) return u;
        JointState unit = x;
        unit.L /= scale;
        unit.illiquid.I /= scale;
        unit.illiquid.K /= scale;
        MpcConfig cfg = cfg_;
        if (cfg.n_lim) cfg.n_lim = *cfg.n_lim / scale;
        const SolveResult r = solve(build_full_mpc(*mm_, unit, cfg, *rm_));
        if (r.ok()) {
            u = extract_first_control(r, n, nl);
            u.h *= scale;
            u.n *= scale;
            u.s *= scale;
            // restore the budget identity exactly
            const double hs = u.h.sum();
            if (hs > 0.0) {
                u.h *= x.L / hs;
            } else if (nl > 0) {
                u.h.setZero();
                u.h[cash_index_] = x.L;
            }
            return u;
        }
        if (fallback_) {
            u = fallback_->decide(obs);
        }
        u.fallback = true;
        return u;
    }
    std::string name() const override { return "mpc"; }
    std::unique_ptr<Policy> clone() const override { return std::make_unique<FullMpcPolicy>(*this); }

private:
    std::shared_ptr<const MeanMatrices> mm_;
    MpcConfig cfg_;
    std::shared_ptr<const ReturnModel> rm_;
    std::unique_ptr<Policy> fallback_;
    Eigen::Index cash_index_ = 0;
};

/// Dollar allocation W * w*.
inline Vector markowitz_rebalance(double W, const Vector& w_star) {
    if (W < 0.0) throw ArgumentError("markowitz_rebalance: negative wealth");
    return W * w_star;
}

/// Solves the one-period Markowitz problem; weights in return order.
inline std::optional<Vector> markowitz_weights(const ReturnModel& rm, double sigma) {
    const SolveResult r = solve(build_markowitz(rm.expected, rm.sigma_ret, sigma));
    if (!r.ok()) return std::nullopt;
    return extract_weights(r, static_cast<int>(rm.expected.size()));
}

}  // namespace illiquid
