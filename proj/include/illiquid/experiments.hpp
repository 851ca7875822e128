#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "illiquid/config.hpp"
#include "illiquid/policies.hpp"
#include "illiquid/simulation.hpp"

#ifndef ILLIQUID_VERSION
#define ILLIQUID_VERSION "0.0.0"
#endif

namespace illiquid {

inline constexpr const char* kLibraryVersion = ILLIQUID_VERSION;

/// Shortest text that parses back to the same double.
inline std::string csv_number(double v) {
    if (std::isnan(v)) return "nan";
    return detail::format_double(v);
}

/// Comma-separated table, buffered in memory until written.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    class Row {
    public:
        explicit Row(std::vector<std::string>& cells) : cells_(cells) {}
        Row& operator<<(const std::string& s) {
            cells_.push_back(s);
            return *this;
        }
        Row& operator<<(const char* s) { return *this << std::string(s); }
        Row& operator<<(double v) { return *this << csv_number(v); }
        Row& operator<<(int v) { return *this << std::to_string(v); }
        Row& operator<<(long v) { return *this << std::to_string(v); }
        Row& operator<<(std::uint64_t v) { return *this << std::to_string(v); }

    private:
        std::vector<std::string>& cells_;
    };

    Row row() {
        rows_.emplace_back();
        return Row(rows_.back());
    }

    std::string str() const {
        std::string out;
        auto line = [&](const std::vector<std::string>& cells) {
            if (cells.size() != header_.size()) throw ArgumentError("CSV row width does not match header");
            for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
            out += "\n";
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return out;
    }

    void write(const std::filesystem::path& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw ArgumentError("cannot write " + path.string());
        os << str();
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Hash of the configuration, independent of the worker-thread count and
/// the output location.
inline std::string config_hash(ExperimentConfig c) {
    c.threads = 1;
    c.directory.clear();
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(write_config(c));
    return os.str();
}

struct ExperimentReport {
    std::vector<std::string> files;
    std::vector<std::string> failures;
    bool ok() const { return failures.empty(); }
};

inline const std::vector<std::string>& metrics_columns() {
    static const std::vector<std::string> cols = {
        "experiment",   "policy",         "horizon",        "sigma_config",     "paths",
        "realized_ret", "se_ret",         "realized_vol",   "se_vol",           "delayed_rms",
        "se_delayed_rms", "tracking_mse", "se_tracking_mse", "outside_cash",    "se_outside_cash",
        "injection_frequency", "fallbacks", "aborted_paths", "max_accounting_error", "negativity_violations"};
    return cols;
}

inline void metrics_row(CsvTable& t, const std::string& experiment, const MetricsSummary& m, double sigma) {
    t.row() << experiment << m.policy << m.periods << sigma << m.paths << m.realized_return.mean
            << m.realized_return.se << m.realized_vol.mean << m.realized_vol.se << m.delayed_rms.mean
            << m.delayed_rms.se << m.tracking_mse.mean << m.tracking_mse.se << m.outside_cash.mean
            << m.outside_cash.se << m.injection_frequency << m.fallbacks << m.aborted_paths
            << m.max_accounting_error << m.negativity_violations;
}

/// Asset labels in allocation order (liquid..., illiquid...).
inline std::vector<std::string> asset_labels(int n_ill, int n_liq) {
    std::vector<std::string> out;
    for (int j = 0; j < n_liq; ++j) out.push_back("liquid[" + std::to_string(j) + "]");
    for (int i = 0; i < n_ill; ++i) out.push_back("illiquid[" + std::to_string(i) + "]");
    return out;
}

inline std::vector<std::string> output_labels(int n_ill) {
    std::vector<std::string> out;
    for (const char* c : {"I", "K", "C", "D"}) {
        for (int i = 0; i < n_ill; ++i) out.push_back(std::string(c) + "[" + std::to_string(i) + "]");
    }
    return out;
}

namespace detail {

class ExperimentRun {
public:
    ExperimentRun(const ExperimentConfig& cfg, std::ostream* log)
        : cfg_(cfg), log_(log), dist_(cfg.model.distribution()), dir_(cfg.directory) {}

    ExperimentReport run() {
        std::filesystem::create_directories(dir_);
        try {
            switch (cfg_.kind) {
                case ExperimentKind::impulse:
                case ExperimentKind::step: responses(); break;
                case ExperimentKind::plan: plan(); break;
                case ExperimentKind::simulate: simulate(); break;
                case ExperimentKind::frontier: frontier(); break;
            }
        } catch (const std::exception& e) {
            fail(std::string(to_string(cfg_.kind)) + ": " + e.what());
        }
        manifest();
        return report_;
    }

private:
    std::string file(const std::string& stem) const { return cfg_.prefix + "_" + stem; }

    void save(const CsvTable& t, const std::string& stem) {
        const std::string name = file(stem);
        t.write(dir_ / name);
        report_.files.push_back(name);
        say("wrote " + (dir_ / name).string());
    }

    void say(const std::string& s) const {
        if (log_) *log_ << s << "\n";
    }

    void fail(const std::string& s) {
        report_.failures.push_back(s);
        say("FAILED: " + s);
    }

    const MeanMatrices& illiquid_means() {
        if (!illiquid_mm_) {
            illiquid_mm_ = mean_matrices(dist_, SystemLayout::illiquid_only, cfg_.model.mean_samples, cfg_.model.mean_seed);
        }
        return *illiquid_mm_;
    }

    const MeanMatrices& joint_means() {
        if (!joint_mm_) joint_mm_ = mean_matrices(dist_, SystemLayout::joint, cfg_.model.mean_samples, cfg_.model.mean_seed);
        return *joint_mm_;
    }

    void responses() {
        const bool step = cfg_.kind == ExperimentKind::step;
        const int n = dist_.n_ill();
        const MeanMatrices& mm = illiquid_means();
        const auto y = step ? step_response(mm, cfg_.T) : impulse_response(mm, cfg_.T);
        const auto labels = output_labels(n);
        CsvTable t({"period", "component", "mean"});
        for (std::size_t k = 0; k < y.size(); ++k) {
            for (std::size_t c = 0; c < labels.size(); ++c) {
                t.row() << static_cast<int>(k + 1) << labels[c] << y[k][static_cast<Eigen::Index>(c)];
            }
        }
        save(t, "responses.csv");
        if (step) {
            try {
                const SteadyStateGains g = steady_state_gains(mm);
                CsvTable gt({"asset", "alpha_I", "alpha_K", "alpha_C", "alpha_D"});
                for (int i = 0; i < n; ++i) gt.row() << i << g.alpha_I[i] << g.alpha_K[i] << g.alpha_C[i] << g.alpha_D[i];
                save(gt, "gains.csv");
            } catch (const std::exception& e) {
                fail(std::string("steady-state gains: ") + e.what());
            }
        }
        if (cfg_.response_paths > 0) {
            std::vector<Vector> plan(step ? static_cast<std::size_t>(cfg_.T) : 1u, Vector::Ones(n));
            OpenLoopPolicy p(plan, n, dist_.n_liq());
            const MonteCarloRun run = run_monte_carlo(dist_, p, cfg_.T, cfg_.response_paths, cfg_.seed,
                                                      JointState::cash(0.0, n), cfg_.threads);
            CsvTable pt({"path", "period", "component", "value"});
            for (std::size_t p_i = 0; p_i < run.records.size(); ++p_i) {
                const TrajectoryRecord& r = run.records[p_i];
                for (int k = 0; k < r.periods(); ++k) {
                    const auto s = static_cast<std::size_t>(k);
                    Vector out(4 * n);
                    out << r.states[s].illiquid.I, r.states[s].illiquid.K, r.calls[s], r.distributions[s];
                    for (std::size_t c = 0; c < labels.size(); ++c) {
                        pt.row() << static_cast<int>(p_i) << k + 1 << labels[c] << out[static_cast<Eigen::Index>(c)];
                    }
                }
            }
            save(pt, "responses_paths.csv");
        }
    }

    CommitmentPlan open_loop_plan() {
        CommitmentPlanConfig pc;
        pc.T = cfg_.T;
        pc.I_targ = cfg_.I_targ;
        pc.gamma_smooth = cfg_.gamma_smooth;
        pc.n_lim = cfg_.n_lim;
        const SolveResult r = solve(build_open_loop_qp(illiquid_means(), pc));
        if (!r.ok()) throw ModelError(std::string("open-loop commitment plan not solved: ") + to_string(r.status));
        return extract_commitment_plan(r, dist_.n_ill(), cfg_.T);
    }

    void plan() {
        const int n = dist_.n_ill();
        const CommitmentPlan p = open_loop_plan();
        CsvTable t({"period", "asset", "commitment", "I", "K"});
        for (int k = 0; k <= cfg_.T; ++k) {
            const auto s = static_cast<std::size_t>(k);
            for (int i = 0; i < n; ++i) {
                t.row() << k + 1 << i << (k < cfg_.T ? csv_number(p.n[s][i]) : std::string("")) << p.I[s][i]
                        << p.K[s][i];
            }
        }
        save(t, "plan.csv");
        CsvTable st({"asset", "statistic", "value"});
        std::vector<Vector> head(p.I.begin(), p.I.end() - 1);
        for (int i = 0; i < n; ++i) {
            std::vector<double> I;
            for (const auto& v : head) I.push_back(v[i]);
            st.row() << i << "delayed_rms" << delayed_rms(I, cfg_.I_targ[i], cfg_.rms_start);
            st.row() << i << "tracking_mse" << tracking_mse(I, cfg_.I_targ[i]);
            st.row() << i << "terminal_commitment" << p.n.back()[i];
        }
        try {
            const SteadyStateGains g = steady_state_gains(illiquid_means());
            for (int i = 0; i < n; ++i) st.row() << i << "steady_commitment" << cfg_.I_targ[i] / g.alpha_I[i];
        } catch (const std::exception& e) {
            fail(std::string("steady-state gains: ") + e.what());
        }
        save(st, "plan_summary.csv");
    }

    Eigen::Index cash_index(const ReturnModel& rm) const {
        Eigen::Index c = 0;
        if (rm.sigma_liq.rows() > 0) rm.sigma_liq.diagonal().minCoeff(&c);
        return c;
    }

    std::unique_ptr<Policy> make_policy(PolicyKind kind, const ReturnModel& rm, const Vector& w) {
        const int n = dist_.n_ill(), nl = dist_.n_liq();
        switch (kind) {
            case PolicyKind::open_loop: return std::make_unique<OpenLoopPolicy>(open_loop_plan().n, n, nl);
            case PolicyKind::commitment_mpc: {
                CommitmentMpcConfig c;
                c.H = cfg_.commitment_horizon;
                c.I_targ = cfg_.I_targ;
                c.gamma_smooth = cfg_.gamma_smooth;
                c.n_lim = cfg_.n_lim;
                if (cfg_.shrinking_horizon) c.shrink_to = cfg_.T;
                return std::make_unique<CommitmentMpcPolicy>(illiquid_means(), c, nl);
            }
            case PolicyKind::heuristic:
            case PolicyKind::mpc: {
                auto h = std::make_unique<SteadyStateHeuristic>(TargetAllocation::from_return_order(w, n),
                                                                steady_state_gains(joint_means()), cfg_.kappa,
                                                                static_cast<int>(cash_index(rm)));
                if (kind == PolicyKind::heuristic) return h;
                MpcConfig m = cfg_.mpc;
                m.sigma = cfg_.sigma;
                return std::make_unique<FullMpcPolicy>(joint_means(), m, rm, std::move(h));
            }
            case PolicyKind::relaxed: break;
        }
        throw ArgumentError("policy has no state-feedback form");
    }

    void check_run(const MetricsSummary& m, const std::string& what) {
        if (m.aborted_paths > 0) fail(what + ": " + std::to_string(m.aborted_paths) + " paths aborted");
    }

    void allocation_rows(CsvTable& t, const std::string& policy, int horizon, double sigma,
                         const std::vector<TrajectoryRecord>& recs) {
        const AllocationTrace tr = allocation_trace(recs);
        const auto labels = asset_labels(dist_.n_ill(), dist_.n_liq());
        for (std::size_t k = 0; k < tr.weights.size(); ++k) {
            for (std::size_t a = 0; a < labels.size(); ++a) {
                t.row() << policy << horizon << sigma << static_cast<int>(k + 1) << labels[a]
                        << tr.weights[k][static_cast<Eigen::Index>(a)] << tr.excluded[k];
            }
        }
    }

    static std::vector<std::string> allocation_columns() {
        return {"policy", "horizon", "sigma_config", "period", "asset", "mean_weight", "excluded_paths"};
    }

    void simulate() {
        const bool commitments_only = dist_.n_liq() == 0;
        const ReturnModel rm = commitments_only ? ReturnModel{} : make_return_model(dist_);
        std::optional<Vector> w;
        CsvTable metrics(metrics_columns());
        CsvTable alloc(allocation_columns());
        CsvTable traj(trajectory_columns());
        for (PolicyKind kind : cfg_.policies) {
            const std::string name = to_string(kind);
            const bool commitment = kind == PolicyKind::open_loop || kind == PolicyKind::commitment_mpc;
            const double sigma = commitment ? std::nan("") : cfg_.sigma;
            try {
                if (!commitment && !w) {
                    w = markowitz_weights(rm, cfg_.sigma);
                    if (!w) throw ModelError("Markowitz target not solved at sigma " + csv_number(cfg_.sigma));
                }
                say("simulating " + name);
                if (kind == PolicyKind::relaxed) {
                    metrics_row(metrics, to_string(cfg_.kind),
                                simulate_relaxed(dist_, *w, cfg_.T, cfg_.paths, cfg_.seed, cfg_.initial_state().total_wealth()),
                                sigma);
                    continue;
                }
                const auto policy = make_policy(kind, rm, w.value_or(Vector()));
                const std::optional<TrackingSpec> tracking =
                    commitment ? std::optional<TrackingSpec>(cfg_.tracking()) : std::nullopt;
                const MonteCarloRun run = run_monte_carlo(dist_, *policy, cfg_.T, cfg_.paths, cfg_.seed,
                                                          cfg_.initial_state(), cfg_.threads, tracking);
                metrics_row(metrics, to_string(cfg_.kind), run.summary, sigma);
                check_run(run.summary, name);
                if (run.summary.aborted_paths < run.summary.paths) allocation_rows(alloc, name, cfg_.T, sigma, run.records);
                if (cfg_.write_trajectories) trajectory_rows(traj, run.records);
            } catch (const std::exception& e) {
                fail(name + ": " + e.what());
            }
        }
        save(metrics, "metrics.csv");
        save(alloc, "allocations.csv");
        if (cfg_.write_trajectories) save(traj, "trajectories.csv");
    }

    std::vector<std::string> trajectory_columns() const {
        std::vector<std::string> cols = {"policy", "path", "seed", "period", "L", "W", "s", "injected", "fallback"};
        for (const char* c : {"I", "K", "n", "C", "D"}) {
            for (int i = 0; i < dist_.n_ill(); ++i) cols.push_back(std::string(c) + "[" + std::to_string(i) + "]");
        }
        for (int j = 0; j < dist_.n_liq(); ++j) cols.push_back("h[" + std::to_string(j) + "]");
        return cols;
    }

    void trajectory_rows(CsvTable& t, const std::vector<TrajectoryRecord>& recs) {
        for (std::size_t p = 0; p < recs.size(); ++p) {
            const TrajectoryRecord& r = recs[p];
            for (int k = 0; k < r.periods(); ++k) {
                const auto s = static_cast<std::size_t>(k);
                const JointState& x = r.states[s];
                const ControlDecision& u = r.controls[s];
                auto row = t.row();
                row << r.policy << static_cast<int>(p) << r.seed << k + 1 << x.L << x.total_wealth() << u.s
                    << r.injected[s] << (u.fallback ? 1 : 0);
                for (const Vector* v : {&x.illiquid.I, &x.illiquid.K, &u.n, &r.calls[s], &r.distributions[s], &u.h}) {
                    for (Eigen::Index i = 0; i < v->size(); ++i) row << (*v)[i];
                }
            }
        }
    }

    void frontier() {
        const ReturnModel rm = make_return_model(dist_);
        FrontierContext ctx;
        ctx.dist = &dist_;
        ctx.joint_means = &joint_means();
        ctx.returns = rm;
        ctx.mpc = cfg_.mpc;
        ctx.kappa = cfg_.kappa;
        ctx.x0 = cfg_.initial_state();
        ctx.threads = cfg_.threads;
        CsvTable alloc(allocation_columns());
        int horizon = 0;
        ctx.on_run = [&](const std::string& policy, double sigma, const MonteCarloRun& run) {
            allocation_rows(alloc, policy, horizon, sigma, run.records);
        };
        ctx.on_failure = [&](const std::string& policy, double sigma, const std::string& why) {
            fail(policy + " at sigma " + csv_number(sigma) + ": " + why);
        };
        CsvTable metrics(metrics_columns());
        for (int T : cfg_.horizons) {
            horizon = T;
            for (PolicyKind kind : cfg_.policies) {
                const FrontierPolicy family = kind == PolicyKind::relaxed     ? FrontierPolicy::relaxed
                                              : kind == PolicyKind::heuristic ? FrontierPolicy::heuristic
                                                                              : FrontierPolicy::mpc;
                say("frontier " + std::string(to_string(family)) + ", " + std::to_string(T) + " periods");
                for (const FrontierPoint& pt : frontier_sweep(ctx, family, cfg_.sigma_grid, T, cfg_.paths, cfg_.seed)) {
                    metrics_row(metrics, to_string(cfg_.kind), pt.summary, pt.sigma_config);
                    check_run(pt.summary, pt.policy + " at sigma " + csv_number(pt.sigma_config));
                }
            }
        }
        save(metrics, "metrics.csv");
        save(alloc, "allocations.csv");
    }

    void manifest() {
        const std::string name = file("manifest.txt");
        std::ofstream os(dir_ / name, std::ios::binary);
        os << "library_version = " << kLibraryVersion << "\n";
        os << "config_hash = " << config_hash(cfg_) << "\n";
        os << "experiment = " << to_string(cfg_.kind) << "\n";
        os << "master_seed = " << cfg_.seed << "\n";
        os << "paths = " << cfg_.paths << "\n";
        os << "intensity_link = " << to_string(cfg_.model.link) << "\n";
        os << "realized_return = (W[t+1] - s[t] - injected[t]) / W[t] - 1 with W = L + sum(I)\n";
        os << "realized_vol = per-path standard deviation of per-period returns, averaged across paths\n";
        for (const auto& f : report_.files) os << "file = " << f << "\n";
        for (const auto& f : report_.failures) os << "failure = " << f << "\n";
        os << "status = " << (report_.ok() ? "ok" : "failed") << "\n";
        report_.files.push_back(name);
    }

    const ExperimentConfig& cfg_;
    std::ostream* log_;
    LatentDistribution dist_;
    std::filesystem::path dir_;
    std::optional<MeanMatrices> illiquid_mm_;
    std::optional<MeanMatrices> joint_mm_;
    ExperimentReport report_;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace detail

/// Runs one configured experiment, writing CSVs and a manifest into
/// cfg.directory. Failures of individual items are collected, not thrown.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    return detail::ExperimentRun(cfg, log).run();
}

inline const std::vector<std::string>& plot_data_columns() {
    static const std::vector<std::string> cols = {"experiment", "policy", "horizon", "sigma_config", "statistic",
                                                  "value"};
    return cols;
}

/// Reshapes metrics CSVs into long format, one row per (experiment, policy,
/// horizon, sigma, statistic). Throws DataError naming missing columns.
inline std::string emit_plot_data(const std::vector<std::string>& metrics_files) {
    static const std::vector<std::string> required = {"policy", "horizon", "sigma_config", "realized_vol",
                                                      "realized_ret", "se_ret", "se_vol"};
    static const std::vector<std::string> keys = {"experiment", "policy", "horizon", "sigma_config"};
    CsvTable out(plot_data_columns());
    for (const auto& path : metrics_files) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open " + path);
        std::string line;
        if (!std::getline(in, line)) continue;
        const auto header = detail::split_csv_line(line);
        std::map<std::string, std::size_t> col;
        for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
        std::string missing;
        for (const auto& r : required) {
            if (!col.count(r)) missing += (missing.empty() ? "" : ", ") + r;
        }
        if (!missing.empty()) throw DataError(path + ": missing columns: " + missing);
        const std::string stem = std::filesystem::path(path).stem().string();
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto cells = detail::split_csv_line(line);
            if (cells.size() != header.size()) throw DataError(path + ": row width does not match header");
            const std::string experiment = col.count("experiment") ? cells[col["experiment"]] : stem;
            for (std::size_t i = 0; i < header.size(); ++i) {
                if (std::find(keys.begin(), keys.end(), header[i]) != keys.end()) continue;
                out.row() << experiment << cells[col["policy"]] << cells[col["horizon"]] << cells[col["sigma_config"]]
                          << header[i] << cells[i];
            }
        }
    }
    return out.str();
}

}  // namespace illiquid
