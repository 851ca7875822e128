#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "illiquid/dynamics.hpp"
#include "illiquid/problems.hpp"
#include "illiquid/simulation.hpp"

namespace illiquid {

// Config files are sectioned key = value text:
//
//   # comment
//   [model]
//   n_ill = 1
//   mean = -0.7 -0.423 0.158
//   covariance = [
//     0.068 0.072 0.006
//     ...
//   ]
//
// Sections are [model], [experiment] and [output]. Lists are whitespace
// separated; a list key may also be written `linspace a b n`. Matrices open
// with `[` after the `=` and list one row per line until a line holding `]`.

enum class ExperimentKind { impulse, step, plan, simulate, frontier };
enum class PolicyKind { open_loop, commitment_mpc, heuristic, mpc, relaxed };

inline const char* to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::impulse: return "impulse";
        case ExperimentKind::step: return "step";
        case ExperimentKind::plan: return "plan";
        case ExperimentKind::simulate: return "simulate";
        case ExperimentKind::frontier: return "frontier";
    }
    return "unknown";
}

inline const char* to_string(PolicyKind k) {
    switch (k) {
        case PolicyKind::open_loop: return "open-loop";
        case PolicyKind::commitment_mpc: return "commitment-mpc";
        case PolicyKind::heuristic: return "heuristic";
        case PolicyKind::mpc: return "mpc";
        case PolicyKind::relaxed: return "relaxed";
    }
    return "unknown";
}

inline const char* to_string(IntensityLink l) { return l == IntensityLink::as_written ? "as_written" : "logistic"; }
inline const char* to_string(RiskMode m) { return m == RiskMode::hard ? "hard" : "penalized"; }

struct ModelConfig {
    int n_ill = 0;
    int n_liq = 0;
    IntensityLink link = IntensityLink::as_written;
    std::optional<BlockLayout> layout;  ///< contiguous when empty
    Vector mean;
    Matrix covariance;
    long mean_samples = kDefaultMeanSamples;
    std::uint64_t mean_seed = kDefaultMeanSeed;

    BlockLayout block_layout() const { return layout ? *layout : BlockLayout::contiguous(n_ill); }
    LatentDistribution distribution() const {
        return LatentDistribution(n_ill, n_liq, mean, covariance, block_layout(), link);
    }
};

struct ExperimentConfig {
    ModelConfig model;

    ExperimentKind kind = ExperimentKind::impulse;
    int T = 20;
    int paths = 100;
    std::uint64_t seed = 1;
    int threads = 1;
    std::vector<PolicyKind> policies;
    Vector I_targ;
    double gamma_smooth = 1.0;
    double n_lim = std::numeric_limits<double>::infinity();
    int rms_start = 5;
    int commitment_horizon = 20;
    bool shrinking_horizon = false;
    double sigma = 0.1;
    std::vector<double> sigma_grid;
    std::vector<int> horizons;
    MpcConfig mpc;
    double kappa = 0.1;
    double initial_L = 1.0;
    Vector initial_I;
    Vector initial_K;
    int response_paths = 0;
    bool write_trajectories = false;

    std::string directory = "out";
    std::string prefix = "run";

    std::vector<std::string> warnings;  ///< load-time notices, not part of the configuration

    JointState initial_state() const { return {initial_L, {initial_I, initial_K}}; }
    TrackingSpec tracking() const { return {I_targ.size() > 0 ? I_targ[0] : 1.0, rms_start}; }
};

struct ConfigKey {
    const char* section;
    const char* key;
    const char* default_value;  ///< nullptr when required
    const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"model", "n_ill", nullptr, "number of illiquid assets"},
        {"model", "n_liq", nullptr, "number of liquid assets (cash included)"},
        {"model", "intensity_link", "as_written", "as_written: 1/(1+exp(z)); logistic: 1/(1+exp(-z))"},
        {"model", "layout", "contiguous", "contiguous, or four offsets: call distribution illiquid_return liquid_return"},
        {"model", "mean", nullptr, "latent mean, length 3 n_ill + n_liq"},
        {"model", "covariance", nullptr, "latent covariance matrix block, symmetrized on load"},
        {"model", "mean_samples", "1000000", "Monte Carlo samples for the mean system matrices"},
        {"model", "mean_seed", "12345", "seed of the mean-matrix sampler"},
        {"experiment", "kind", nullptr, "impulse | step | plan | simulate | frontier"},
        {"experiment", "T", "20", "horizon in periods"},
        {"experiment", "paths", "100", "Monte Carlo paths"},
        {"experiment", "seed", "1", "master seed"},
        {"experiment", "threads", "1", "worker threads for path simulation"},
        {"experiment", "policies", "simulate: open-loop commitment-mpc; frontier: relaxed heuristic mpc",
         "policies to run: open-loop commitment-mpc heuristic mpc relaxed"},
        {"experiment", "I_targ", "1 per illiquid asset", "illiquid wealth target of the commitment problems"},
        {"experiment", "gamma_smooth", "1", "commitment smoothing weight"},
        {"experiment", "n_lim", "inf", "per-period commitment cap of the commitment problems"},
        {"experiment", "rms_start", "5", "first period of the delayed RMS window"},
        {"experiment", "commitment_horizon", "20", "planning horizon of the commitment MPC"},
        {"experiment", "shrinking_horizon", "false", "commitment MPC plans to the fixed end T instead"},
        {"experiment", "sigma", "0.1", "risk limit for simulate runs of heuristic, mpc and relaxed"},
        {"experiment", "sigma_grid", "linspace 0 0.3 30", "risk limits swept by frontier runs"},
        {"experiment", "horizons", "T", "simulation lengths of frontier runs"},
        {"experiment", "gamma", "0.97", "MPC discount factor"},
        {"experiment", "mpc_horizon", "10", "MPC planning horizon H"},
        {"experiment", "epsilon_ins", "0.02", "insolvency probability bound, at most 0.5"},
        {"experiment", "lambda_risk", "10", "penalty on risk-limit violation"},
        {"experiment", "lambda_smooth", "0.1", "penalty on commitment changes"},
        {"experiment", "lambda_cash", "1000", "penalty on outside cash"},
        {"experiment", "risk_mode", "penalized", "penalized | hard"},
        {"experiment", "mpc_n_lim", "inf", "MPC per-period commitment cap"},
        {"experiment", "kappa", "0.1", "heuristic proportional feedback gain"},
        {"experiment", "initial_L", "1", "initial liquid wealth"},
        {"experiment", "initial_I", "0 per illiquid asset", "initial illiquid wealth"},
        {"experiment", "initial_K", "0 per illiquid asset", "initial uncalled commitments"},
        {"experiment", "response_paths", "0", "impulse/step: also write this many stochastic paths"},
        {"experiment", "write_trajectories", "false", "simulate: write every path to a trajectory CSV"},
        {"output", "directory", "out", "output directory"},
        {"output", "prefix", "run", "file name prefix"},
    };
    return keys;
}

/// Generated reference of every key with its default.
inline std::string config_reference() {
    std::ostringstream os;
    std::string section;
    for (const auto& k : config_keys()) {
        if (k.section != section) {
            section = k.section;
            os << (os.tellp() > 0 ? "\n" : "") << "[" << section << "]\n";
        }
        os << "  " << k.key << " = " << (k.default_value ? k.default_value : "(required)") << "\n      " << k.help
           << "\n";
    }
    return os.str();
}

namespace detail {

struct RawEntry {
    std::string value;
    std::vector<std::vector<double>> rows;
    bool matrix = false;
    int line = 0;
};

using RawSections = std::map<std::string, std::map<std::string, RawEntry>>;

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string w; is >> w;) out.push_back(w);
    return out;
}

inline double parse_double(const std::string& s, int line, const std::string& key) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const char* end = s.data() + s.size();
    const auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end || std::isnan(v)) throw ConfigError("'" + key + "': not a number: '" + s + "'", line);
    return v;
}

template <class Int>
Int parse_int(const std::string& s, int line, const std::string& key) {
    Int v{};
    const char* end = s.data() + s.size();
    const auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end) throw ConfigError("'" + key + "': not an integer: '" + s + "'", line);
    return v;
}

inline RawSections parse_raw(std::istream& in) {
    RawSections out;
    std::string section;
    std::string line;
    int no = 0;
    RawEntry* open_matrix = nullptr;
    std::string open_key;
    while (std::getline(in, line)) {
        ++no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (open_matrix) {
            if (line == "]") {
                open_matrix = nullptr;
                continue;
            }
            std::vector<double> row;
            for (const auto& w : split(line)) row.push_back(parse_double(w, no, open_key));
            open_matrix->rows.push_back(std::move(row));
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("malformed section header '" + line + "'", no);
            section = trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "experiment" && section != "output") {
                throw ConfigError("unknown section [" + section + "]", no);
            }
            out[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value', got '" + line + "'", no);
        if (section.empty()) throw ConfigError("key outside of any section", no);
        const std::string key = trim(line.substr(0, eq));
        bool known = false;
        for (const auto& k : config_keys()) known = known || (section == k.section && key == k.key);
        if (!known) throw ConfigError("unknown key '" + key + "' in [" + section + "]", no);
        auto& sec = out[section];
        if (sec.count(key)) throw ConfigError("duplicate key '" + key + "'", no);
        RawEntry e;
        e.value = trim(line.substr(eq + 1));
        e.line = no;
        if (e.value == "[") {
            e.matrix = true;
            e.value.clear();
        }
        auto& stored = sec[key] = std::move(e);
        if (stored.matrix) {
            open_matrix = &stored;
            open_key = key;
        }
    }
    if (open_matrix) throw ConfigError("matrix '" + open_key + "' is not closed with ']'", open_matrix->line);
    return out;
}

class SectionReader {
public:
    SectionReader(const RawSections& raw, const std::string& section) : section_(section) {
        const auto it = raw.find(section);
        if (it != raw.end()) entries_ = &it->second;
    }

    const RawEntry* find(const std::string& key) const {
        if (!entries_) return nullptr;
        const auto it = entries_->find(key);
        return it == entries_->end() ? nullptr : &it->second;
    }

    const RawEntry& require(const std::string& key) const {
        const RawEntry* e = find(key);
        if (!e) throw ConfigError("missing required field '" + key + "' in [" + section_ + "]");
        return *e;
    }

    const RawEntry& scalar(const RawEntry& e, const std::string& key) const {
        if (e.matrix) throw ConfigError("'" + key + "' must be a single value, not a matrix", e.line);
        if (split(e.value).size() != 1) throw ConfigError("'" + key + "' must be a single value", e.line);
        return e;
    }

    double number(const std::string& key, double fallback) const {
        const RawEntry* e = find(key);
        return e ? parse_double(scalar(*e, key).value, e->line, key) : fallback;
    }

    template <class Int>
    Int integer(const std::string& key, Int fallback) const {
        const RawEntry* e = find(key);
        return e ? parse_int<Int>(scalar(*e, key).value, e->line, key) : fallback;
    }

    bool boolean(const std::string& key, bool fallback) const {
        const RawEntry* e = find(key);
        if (!e) return fallback;
        const std::string& v = scalar(*e, key).value;
        if (v == "true") return true;
        if (v == "false") return false;
        throw ConfigError("'" + key + "' must be true or false", e->line);
    }

    std::string text(const std::string& key, const std::string& fallback) const {
        const RawEntry* e = find(key);
        return e ? scalar(*e, key).value : fallback;
    }

    std::vector<double> list(const RawEntry& e, const std::string& key) const {
        if (e.matrix) throw ConfigError("'" + key + "' must be a list, not a matrix", e.line);
        const auto words = split(e.value);
        if (!words.empty() && words[0] == "linspace") {
            if (words.size() != 4) throw ConfigError("'" + key + "': expected 'linspace a b n'", e.line);
            const double a = parse_double(words[1], e.line, key), b = parse_double(words[2], e.line, key);
            const int n = parse_int<int>(words[3], e.line, key);
            if (n < 1) throw ConfigError("'" + key + "': linspace needs n >= 1", e.line);
            std::vector<double> out;
            for (int i = 0; i < n; ++i) out.push_back(n == 1 ? a : a + (b - a) * i / (n - 1));
            return out;
        }
        std::vector<double> out;
        for (const auto& w : words) out.push_back(parse_double(w, e.line, key));
        return out;
    }

    std::optional<Vector> vector(const std::string& key, Eigen::Index expected) const {
        const RawEntry* e = find(key);
        if (!e) return std::nullopt;
        const auto v = list(*e, key);
        if (static_cast<Eigen::Index>(v.size()) != expected) {
            throw ConfigError("'" + key + "' has " + std::to_string(v.size()) + " entries, expected " +
                                  std::to_string(expected),
                              e->line);
        }
        return Eigen::Map<const Vector>(v.data(), expected);
    }

private:
    std::string section_;
    const std::map<std::string, RawEntry>* entries_ = nullptr;
};

inline PolicyKind parse_policy(const std::string& s, int line) {
    for (auto k : {PolicyKind::open_loop, PolicyKind::commitment_mpc, PolicyKind::heuristic, PolicyKind::mpc,
                   PolicyKind::relaxed}) {
        if (s == to_string(k)) return k;
    }
    throw ConfigError("unknown policy '" + s + "'", line);
}

inline std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace detail

/// Parses and validates a configuration, applying defaults. Throws ConfigError.
inline ExperimentConfig parse_config(std::istream& in) {
    using detail::SectionReader;
    const detail::RawSections raw = detail::parse_raw(in);
    ExperimentConfig c;

    const SectionReader m(raw, "model");
    c.model.n_ill = m.integer<int>("n_ill", -1);
    m.require("n_ill");
    c.model.n_liq = m.integer<int>("n_liq", -1);
    m.require("n_liq");
    if (c.model.n_ill < 0 || c.model.n_liq < 0 || c.model.n_ill + c.model.n_liq == 0) {
        throw ConfigError("n_ill and n_liq must be nonnegative and not both zero", m.require("n_ill").line);
    }
    const int n = c.model.n_ill;
    const Eigen::Index dim = 3 * n + c.model.n_liq;
    const std::string link = m.text("intensity_link", "as_written");
    if (link == "logistic") {
        c.model.link = IntensityLink::logistic;
    } else if (link != "as_written") {
        throw ConfigError("intensity_link must be as_written or logistic", m.find("intensity_link")->line);
    }
    if (const auto* e = m.find("layout"); e && e->value != "contiguous") {
        const auto w = detail::split(e->value);
        if (w.size() != 4) throw ConfigError("layout must be 'contiguous' or four offsets", e->line);
        BlockLayout b{detail::parse_int<int>(w[0], e->line, "layout"), detail::parse_int<int>(w[1], e->line, "layout"),
                      detail::parse_int<int>(w[2], e->line, "layout"), detail::parse_int<int>(w[3], e->line, "layout")};
        try {
            b.validate(n, c.model.n_liq);
        } catch (const ModelError& err) {
            throw ConfigError(err.what(), e->line);
        }
        c.model.layout = b;
    }
    m.require("mean");
    c.model.mean = *m.vector("mean", dim);
    const detail::RawEntry& cov = m.require("covariance");
    if (!cov.matrix) throw ConfigError("covariance must be a matrix block opened with '['", cov.line);
    if (static_cast<Eigen::Index>(cov.rows.size()) != dim) {
        throw ConfigError("covariance has " + std::to_string(cov.rows.size()) + " rows, expected " + std::to_string(dim),
                          cov.line);
    }
    c.model.covariance.resize(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
        const auto& row = cov.rows[static_cast<std::size_t>(i)];
        if (static_cast<Eigen::Index>(row.size()) != dim) {
            throw ConfigError("covariance row " + std::to_string(i + 1) + " has " + std::to_string(row.size()) +
                                  " entries, expected " + std::to_string(dim),
                              cov.line);
        }
        for (Eigen::Index j = 0; j < dim; ++j) c.model.covariance(i, j) = row[static_cast<std::size_t>(j)];
    }
    const double asym = asymmetry(c.model.covariance);
    if (asym > 1e-6) {
        c.warnings.push_back("covariance asymmetry " + detail::format_double(asym) + " symmetrized (line " +
                             std::to_string(cov.line) + ")");
    }
    c.model.covariance = 0.5 * (c.model.covariance + c.model.covariance.transpose()).eval();
    c.model.mean_samples = m.integer<long>("mean_samples", kDefaultMeanSamples);
    c.model.mean_seed = m.integer<std::uint64_t>("mean_seed", kDefaultMeanSeed);
    if (c.model.mean_samples < 2) throw ConfigError("mean_samples must be at least 2", m.find("mean_samples")->line);
    try {
        c.model.distribution();
    } catch (const ModelError& err) {
        throw ConfigError(err.what(), cov.line);
    }

    const SectionReader x(raw, "experiment");
    const detail::RawEntry& kind = x.require("kind");
    bool found = false;
    for (auto k : {ExperimentKind::impulse, ExperimentKind::step, ExperimentKind::plan, ExperimentKind::simulate,
                   ExperimentKind::frontier}) {
        if (kind.value == to_string(k)) {
            c.kind = k;
            found = true;
        }
    }
    if (!found) throw ConfigError("unknown experiment kind '" + kind.value + "'", kind.line);
    auto line_of = [&](const char* key) { return x.find(key) ? x.find(key)->line : kind.line; };
    c.T = x.integer<int>("T", 20);
    c.paths = x.integer<int>("paths", 100);
    c.seed = x.integer<std::uint64_t>("seed", 1);
    c.threads = x.integer<int>("threads", 1);
    if (c.T < 1) throw ConfigError("T must be at least 1", line_of("T"));
    if (c.kind == ExperimentKind::plan && c.T < 2) throw ConfigError("plan experiments need T >= 2", line_of("T"));
    if (c.paths < 1) throw ConfigError("paths must be at least 1", line_of("paths"));
    if (c.threads < 1) throw ConfigError("threads must be at least 1", line_of("threads"));
    if (const auto* e = x.find("policies")) {
        for (const auto& w : detail::split(e->value)) c.policies.push_back(detail::parse_policy(w, e->line));
        if (c.policies.empty()) throw ConfigError("policies is empty", e->line);
    } else if (c.kind == ExperimentKind::simulate) {
        c.policies = {PolicyKind::open_loop, PolicyKind::commitment_mpc};
    } else if (c.kind == ExperimentKind::frontier) {
        c.policies = {PolicyKind::relaxed, PolicyKind::heuristic, PolicyKind::mpc};
    }
    for (auto p : c.policies) {
        const bool commitment = p == PolicyKind::open_loop || p == PolicyKind::commitment_mpc;
        if (c.kind == ExperimentKind::frontier && commitment) {
            throw ConfigError(std::string("policy '") + to_string(p) + "' has no risk limit to sweep", line_of("policies"));
        }
        if (!commitment && c.model.n_liq == 0) {
            throw ConfigError(std::string("policy '") + to_string(p) + "' needs liquid assets", line_of("policies"));
        }
        if (commitment && n == 0) {
            throw ConfigError(std::string("policy '") + to_string(p) + "' needs illiquid assets", line_of("policies"));
        }
    }
    c.I_targ = x.vector("I_targ", n).value_or(Vector::Ones(n));
    c.gamma_smooth = x.number("gamma_smooth", 1.0);
    c.n_lim = x.number("n_lim", std::numeric_limits<double>::infinity());
    c.rms_start = x.integer<int>("rms_start", 5);
    c.commitment_horizon = x.integer<int>("commitment_horizon", 20);
    c.shrinking_horizon = x.boolean("shrinking_horizon", false);
    if (c.gamma_smooth < 0.0) throw ConfigError("gamma_smooth must be nonnegative", line_of("gamma_smooth"));
    if (!(c.n_lim >= 0.0)) throw ConfigError("n_lim must be nonnegative", line_of("n_lim"));
    if (c.rms_start < 1) throw ConfigError("rms_start must be at least 1", line_of("rms_start"));
    if (c.commitment_horizon < 1) throw ConfigError("commitment_horizon must be at least 1", line_of("commitment_horizon"));
    c.sigma = x.number("sigma", 0.1);
    if (const auto* e = x.find("sigma_grid")) {
        c.sigma_grid = x.list(*e, "sigma_grid");
        if (c.sigma_grid.empty()) throw ConfigError("sigma_grid is empty", e->line);
    } else {
        for (int i = 0; i < 30; ++i) c.sigma_grid.push_back(0.3 * i / 29.0);
    }
    if (const auto* e = x.find("horizons")) {
        for (const auto& w : detail::split(e->value)) {
            const int h = detail::parse_int<int>(w, e->line, "horizons");
            if (h < 1) throw ConfigError("horizons must be at least 1", e->line);
            c.horizons.push_back(h);
        }
        if (c.horizons.empty()) throw ConfigError("horizons is empty", e->line);
    } else {
        c.horizons = {c.T};
    }
    c.mpc.gamma = x.number("gamma", 0.97);
    c.mpc.H = x.integer<int>("mpc_horizon", 10);
    c.mpc.sigma = c.sigma;
    c.mpc.epsilon_ins = x.number("epsilon_ins", 0.02);
    c.mpc.lambda_risk = x.number("lambda_risk", 10.0);
    c.mpc.lambda_smooth = x.number("lambda_smooth", 0.1);
    c.mpc.lambda_cash = x.number("lambda_cash", 1000.0);
    const std::string mode = x.text("risk_mode", "penalized");
    if (mode == "hard") {
        c.mpc.risk_mode = RiskMode::hard;
    } else if (mode != "penalized") {
        throw ConfigError("risk_mode must be penalized or hard", line_of("risk_mode"));
    }
    const double mpc_cap = x.number("mpc_n_lim", std::numeric_limits<double>::infinity());
    if (std::isfinite(mpc_cap)) c.mpc.n_lim = mpc_cap;
    try {
        c.mpc.validate();
    } catch (const std::exception& err) {
        throw ConfigError(std::string("MPC parameters: ") + err.what(), kind.line);
    }
    c.kappa = x.number("kappa", 0.1);
    c.initial_L = x.number("initial_L", 1.0);
    c.initial_I = x.vector("initial_I", n).value_or(Vector::Zero(n));
    c.initial_K = x.vector("initial_K", n).value_or(Vector::Zero(n));
    if (c.initial_L < 0.0 || (n > 0 && (c.initial_I.minCoeff() < 0.0 || c.initial_K.minCoeff() < 0.0))) {
        throw ConfigError("initial state must be nonnegative", kind.line);
    }
    c.response_paths = x.integer<int>("response_paths", 0);
    if (c.response_paths < 0) throw ConfigError("response_paths must be nonnegative", line_of("response_paths"));
    c.write_trajectories = x.boolean("write_trajectories", false);
    if ((c.kind == ExperimentKind::impulse || c.kind == ExperimentKind::step || c.kind == ExperimentKind::plan) && n == 0) {
        throw ConfigError(std::string(to_string(c.kind)) + " experiments need illiquid assets", kind.line);
    }

    const SectionReader o(raw, "output");
    c.directory = o.text("directory", "out");
    c.prefix = o.text("prefix", "run");
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    try {
        return parse_config(in);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

/// Canonical text form; every field is written so parse_config(write_config(c)) == c.
inline std::string write_config(const ExperimentConfig& c) {
    using detail::format_double;
    std::ostringstream os;
    auto vec = [&](const Vector& v) {
        std::string s;
        for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + format_double(v[i]);
        return s;
    };
    os << "[model]\n";
    os << "n_ill = " << c.model.n_ill << "\n";
    os << "n_liq = " << c.model.n_liq << "\n";
    os << "intensity_link = " << to_string(c.model.link) << "\n";
    if (c.model.layout) {
        const BlockLayout& b = *c.model.layout;
        os << "layout = " << b.call_offset << " " << b.distribution_offset << " " << b.illiquid_return_offset << " "
           << b.liquid_return_offset << "\n";
    } else {
        os << "layout = contiguous\n";
    }
    os << "mean = " << vec(c.model.mean) << "\n";
    os << "covariance = [\n";
    for (Eigen::Index i = 0; i < c.model.covariance.rows(); ++i) {
        os << "  " << vec(c.model.covariance.row(i).transpose()) << "\n";
    }
    os << "]\n";
    os << "mean_samples = " << c.model.mean_samples << "\n";
    os << "mean_seed = " << c.model.mean_seed << "\n\n";

    os << "[experiment]\n";
    os << "kind = " << to_string(c.kind) << "\n";
    os << "T = " << c.T << "\n";
    os << "paths = " << c.paths << "\n";
    os << "seed = " << c.seed << "\n";
    os << "threads = " << c.threads << "\n";
    if (!c.policies.empty()) {
        os << "policies =";
        for (auto p : c.policies) os << " " << to_string(p);
        os << "\n";
    }
    os << "I_targ = " << vec(c.I_targ) << "\n";
    os << "gamma_smooth = " << format_double(c.gamma_smooth) << "\n";
    os << "n_lim = " << format_double(c.n_lim) << "\n";
    os << "rms_start = " << c.rms_start << "\n";
    os << "commitment_horizon = " << c.commitment_horizon << "\n";
    os << "shrinking_horizon = " << (c.shrinking_horizon ? "true" : "false") << "\n";
    os << "sigma = " << format_double(c.sigma) << "\n";
    os << "sigma_grid =";
    for (double s : c.sigma_grid) os << " " << format_double(s);
    os << "\nhorizons =";
    for (int h : c.horizons) os << " " << h;
    os << "\n";
    os << "gamma = " << format_double(c.mpc.gamma) << "\n";
    os << "mpc_horizon = " << c.mpc.H << "\n";
    os << "epsilon_ins = " << format_double(c.mpc.epsilon_ins) << "\n";
    os << "lambda_risk = " << format_double(c.mpc.lambda_risk) << "\n";
    os << "lambda_smooth = " << format_double(c.mpc.lambda_smooth) << "\n";
    os << "lambda_cash = " << format_double(c.mpc.lambda_cash) << "\n";
    os << "risk_mode = " << to_string(c.mpc.risk_mode) << "\n";
    os << "mpc_n_lim = " << format_double(c.mpc.n_lim.value_or(std::numeric_limits<double>::infinity())) << "\n";
    os << "kappa = " << format_double(c.kappa) << "\n";
    os << "initial_L = " << format_double(c.initial_L) << "\n";
    if (c.initial_I.size() > 0) os << "initial_I = " << vec(c.initial_I) << "\n";
    if (c.initial_K.size() > 0) os << "initial_K = " << vec(c.initial_K) << "\n";
    os << "response_paths = " << c.response_paths << "\n";
    os << "write_trajectories = " << (c.write_trajectories ? "true" : "false") << "\n\n";

    os << "[output]\n";
    os << "directory = " << c.directory << "\n";
    os << "prefix = " << c.prefix << "\n";
    return os.str();
}

/// Field-wise equality; load-time warnings are ignored.
inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    auto same = [](const auto& x, const auto& y) { return x.size() == y.size() && (x.size() == 0 || x == y); };
    const ModelConfig &m = a.model, &n = b.model;
    return m.n_ill == n.n_ill && m.n_liq == n.n_liq && m.link == n.link &&
           m.block_layout() == n.block_layout() && same(m.mean, n.mean) &&
           m.covariance.rows() == n.covariance.rows() && m.covariance.cols() == n.covariance.cols() &&
           m.covariance == n.covariance && m.mean_samples == n.mean_samples && m.mean_seed == n.mean_seed &&
           a.kind == b.kind && a.T == b.T && a.paths == b.paths && a.seed == b.seed && a.threads == b.threads &&
           a.policies == b.policies && same(a.I_targ, b.I_targ) && a.gamma_smooth == b.gamma_smooth &&
           a.n_lim == b.n_lim && a.rms_start == b.rms_start && a.commitment_horizon == b.commitment_horizon &&
           a.shrinking_horizon == b.shrinking_horizon && a.sigma == b.sigma && a.sigma_grid == b.sigma_grid &&
           a.horizons == b.horizons && a.mpc.H == b.mpc.H && a.mpc.gamma == b.mpc.gamma &&
           a.mpc.sigma == b.mpc.sigma && a.mpc.epsilon_ins == b.mpc.epsilon_ins &&
           a.mpc.lambda_risk == b.mpc.lambda_risk && a.mpc.lambda_smooth == b.mpc.lambda_smooth &&
           a.mpc.lambda_cash == b.mpc.lambda_cash && a.mpc.n_lim == b.mpc.n_lim &&
           a.mpc.risk_mode == b.mpc.risk_mode && a.kappa == b.kappa && a.initial_L == b.initial_L &&
           same(a.initial_I, b.initial_I) && same(a.initial_K, b.initial_K) && a.response_paths == b.response_paths &&
           a.write_trajectories == b.write_trajectories && a.directory == b.directory && a.prefix == b.prefix;
}

}  // namespace illiquid
