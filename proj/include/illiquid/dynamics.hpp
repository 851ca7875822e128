#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "illiquid/errors.hpp"
#include "illiquid/linalg.hpp"
#include "illiquid/random.hpp"

namespace illiquid {

/// How a latent coordinate z is mapped to an intensity in (0, 1).
///   as_written: 1 / (1 + exp(z))
///   logistic:   1 / (1 + exp(-z))
enum class IntensityLink { as_written, logistic };

/// Offsets of the four coordinate blocks inside the latent vector. The call and
/// distribution blocks and the illiquid-return block have n_ill entries each, the
/// liquid-return block n_liq entries.
struct BlockLayout {
    int call_offset = 0;
    int distribution_offset = 0;
    int illiquid_return_offset = 0;
    int liquid_return_offset = 0;

    static BlockLayout contiguous(int n_ill) {
        return BlockLayout{0, n_ill, 2 * n_ill, 3 * n_ill};
    }

    /// Throws ModelError unless the blocks partition [0, 3 n_ill + n_liq) exactly.
    void validate(int n_ill, int n_liq) const {
        const int dim = 3 * n_ill + n_liq;
        std::vector<int> hits(static_cast<std::size_t>(dim), 0);
        auto mark = [&](int offset, int len, const char* name) {
            if (offset < 0 || offset + len > dim) {
                throw ModelError(std::string("layout block '") + name + "' exceeds latent dimension");
            }
            for (int i = offset; i < offset + len; ++i) ++hits[static_cast<std::size_t>(i)];
        };
        mark(call_offset, n_ill, "call");
        mark(distribution_offset, n_ill, "distribution");
        mark(illiquid_return_offset, n_ill, "illiquid_return");
        mark(liquid_return_offset, n_liq, "liquid_return");
        for (int h : hits) {
            if (h != 1) throw ModelError("layout blocks overlap or leave coordinates unassigned");
        }
    }

    bool operator==(const BlockLayout&) const = default;
};

/// One period's realized returns and intensities.
struct JointDraw {
    Vector R_ill;    ///< gross illiquid returns
    Vector R_liq;    ///< gross liquid returns
    Vector lambda0;  ///< immediate call intensity on new commitments
    Vector lambda1;  ///< call intensity on existing uncalled commitments
    Vector delta;    ///< distribution intensity
};

/// Normal distribution of the latent vector driving intensities and returns.
class LatentDistribution {
public:
    LatentDistribution(int n_ill, int n_liq, Vector mean, Matrix covariance,
                       BlockLayout layout, IntensityLink link = IntensityLink::as_written)
        : n_ill_(n_ill), n_liq_(n_liq), mean_(std::move(mean)), cov_(std::move(covariance)),
          layout_(layout), link_(link) {
        if (n_ill < 0 || n_liq < 0 || n_ill + n_liq == 0) throw ModelError("asset counts must be nonnegative and not both zero");
        const Eigen::Index dim = 3 * n_ill + n_liq;
        if (mean_.size() != dim) {
            throw ModelError("latent mean has length " + std::to_string(mean_.size()) +
                             ", expected " + std::to_string(dim));
        }
        if (cov_.rows() != dim || cov_.cols() != dim) throw ModelError("covariance dimension does not match latent mean");
        if (!mean_.allFinite() || !cov_.allFinite()) throw ModelError("latent parameters must be finite");
        if (!is_symmetric(cov_, 1e-12)) throw ModelError("covariance is not symmetric");
        layout_.validate(n_ill, n_liq);
        factor_ = psd_factor(cov_);
    }

    LatentDistribution(int n_ill, int n_liq, Vector mean, Matrix covariance,
                       IntensityLink link = IntensityLink::as_written)
        : LatentDistribution(n_ill, n_liq, std::move(mean), std::move(covariance),
                             BlockLayout::contiguous(n_ill), link) {}

    int n_ill() const { return n_ill_; }
    int n_liq() const { return n_liq_; }
    int dim() const { return 3 * n_ill_ + n_liq_; }
    const Vector& mean() const { return mean_; }
    const Matrix& covariance() const { return cov_; }
    const BlockLayout& layout() const { return layout_; }
    IntensityLink link() const { return link_; }

    double intensity(double z) const {
        return link_ == IntensityLink::as_written ? 1.0 / (1.0 + std::exp(z)) : 1.0 / (1.0 + std::exp(-z));
    }

    /// Latent indices of the return block in (illiquid..., liquid...) order.
    std::vector<int> return_indices() const {
        std::vector<int> idx;
        for (int i = 0; i < n_ill_; ++i) idx.push_back(layout_.illiquid_return_offset + i);
        for (int i = 0; i < n_liq_; ++i) idx.push_back(layout_.liquid_return_offset + i);
        return idx;
    }

    /// Covariance of the log returns, (illiquid..., liquid...) order.
    Matrix return_log_covariance() const { return sub_covariance(return_indices()); }

    /// Expected gross returns E[exp(z)], (illiquid..., liquid...) order.
    Vector expected_gross_returns() const {
        const auto idx = return_indices();
        Vector out(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            out[static_cast<Eigen::Index>(i)] = std::exp(mean_[idx[i]] + 0.5 * cov_(idx[i], idx[i]));
        }
        return out;
    }

    /// Mean of the liquid gross returns (lognormal closed form).
    Vector liquid_return_mean() const {
        return expected_gross_returns().tail(n_liq_);
    }

    /// Covariance of the liquid gross returns (lognormal closed form).
    Matrix liquid_return_covariance() const {
        Matrix out(n_liq_, n_liq_);
        const Vector m = liquid_return_mean();
        const int off = layout_.liquid_return_offset;
        for (int i = 0; i < n_liq_; ++i) {
            for (int j = 0; j < n_liq_; ++j) out(i, j) = m[i] * m[j] * std::expm1(cov_(off + i, off + j));
        }
        return out;
    }

    /// Draws z ~ N(mean, covariance) and maps it to intensities and returns.
    JointDraw sample(RandomStream& rng) const {
        Vector xi(dim());
        for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = rng.standard_normal();
        return map(mean_ + factor_ * xi);
    }

    /// Deterministic map from a latent vector to a draw.
    JointDraw map(const Vector& z) const {
        JointDraw d;
        d.lambda1.resize(n_ill_);
        d.lambda0.resize(n_ill_);
        d.delta.resize(n_ill_);
        d.R_ill.resize(n_ill_);
        d.R_liq.resize(n_liq_);
        for (int i = 0; i < n_ill_; ++i) {
            d.lambda1[i] = intensity(z[layout_.call_offset + i]);
            d.lambda0[i] = 0.5 * d.lambda1[i];
            d.delta[i] = intensity(z[layout_.distribution_offset + i]);
            d.R_ill[i] = std::exp(z[layout_.illiquid_return_offset + i]);
        }
        for (int i = 0; i < n_liq_; ++i) d.R_liq[i] = std::exp(z[layout_.liquid_return_offset + i]);
        return d;
    }

    /// Stable textual key, used for caching.
    std::string fingerprint() const {
        std::ostringstream os;
        os << std::hexfloat << n_ill_ << ':' << n_liq_ << ':' << static_cast<int>(link_) << ':'
           << layout_.call_offset << ',' << layout_.distribution_offset << ','
           << layout_.illiquid_return_offset << ',' << layout_.liquid_return_offset << '|';
        for (Eigen::Index i = 0; i < mean_.size(); ++i) os << mean_[i] << ',';
        os << '|';
        for (Eigen::Index i = 0; i < cov_.size(); ++i) os << cov_.data()[i] << ',';
        return os.str();
    }

private:
    Matrix sub_covariance(const std::vector<int>& idx) const {
        const auto k = static_cast<Eigen::Index>(idx.size());
        Matrix out(k, k);
        for (Eigen::Index i = 0; i < k; ++i) {
            for (Eigen::Index j = 0; j < k; ++j) out(i, j) = cov_(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        return out;
    }

    int n_ill_;
    int n_liq_;
    Vector mean_;
    Matrix cov_;
    BlockLayout layout_;
    IntensityLink link_;
    Matrix factor_;
};

inline JointDraw sample_draw(const LatentDistribution& dist, RandomStream& rng) { return dist.sample(rng); }

struct IlliquidState {
    Vector I;  ///< illiquid wealth (NAV), dollars
    Vector K;  ///< uncalled commitments, dollars

    static IlliquidState zero(int n_ill) { return {Vector::Zero(n_ill), Vector::Zero(n_ill)}; }
};

struct JointState {
    double L = 0.0;  ///< liquid wealth, dollars
    IlliquidState illiquid;

    double total_wealth() const { return L + illiquid.I.sum(); }

    static JointState cash(double wealth, int n_ill) { return {wealth, IlliquidState::zero(n_ill)}; }
};

/// u = (h, n, s): liquid allocation, new commitments, outside cash.
struct ControlDecision {
    Vector h;
    Vector n;
    double s = 0.0;
    bool fallback = false;  ///< set when the policy degraded to its fallback rule
};

struct IlliquidStep {
    IlliquidState next;
    Vector calls;
    Vector distributions;
};

/// Advances one illiquid period: C = l0 n + l1 K, D = R delta I,
/// K' = K + n - C, I' = R I + C - D.
inline IlliquidStep step_illiquid(const IlliquidState& x, const Vector& n, const JointDraw& d) {
    if (n.size() != x.I.size() || x.K.size() != x.I.size() || d.R_ill.size() != x.I.size()) {
        throw ArgumentError("step_illiquid: dimension mismatch");
    }
    if ((n.array() < 0.0).any()) throw ArgumentError("step_illiquid: negative commitment");
    IlliquidStep out;
    out.calls = d.lambda0.cwiseProduct(n) + d.lambda1.cwiseProduct(x.K);
    out.distributions = d.R_ill.cwiseProduct(d.delta).cwiseProduct(x.I);
    out.next.K = x.K + n - out.calls;
    out.next.I = d.R_ill.cwiseProduct(x.I) + out.calls - out.distributions;
    return out;
}

struct JointStep {
    JointState next;  ///< liquid wealth before any forced injection
    Vector calls;
    Vector distributions;
};

/// Advances the joint system: L' = h^T R_liq - 1^T C + 1^T D + s.
inline JointStep step_joint(const JointState& x, const ControlDecision& u, const JointDraw& d) {
    if (u.h.size() != d.R_liq.size()) throw ArgumentError("step_joint: allocation dimension mismatch");
    if (u.s < 0.0 || (u.h.array() < 0.0).any()) throw ArgumentError("step_joint: negative control");
    const IlliquidStep ill = step_illiquid(x.illiquid, u.n, d);
    JointStep out;
    out.next.illiquid = ill.next;
    out.next.L = u.h.dot(d.R_liq) - ill.calls.sum() + ill.distributions.sum() + u.s;
    out.calls = ill.calls;
    out.distributions = ill.distributions;
    return out;
}

enum class SystemLayout { illiquid_only, joint };

/// Random (or mean) system matrices.
///
/// illiquid_only: x = (I, K), u = n, y = (I, K, C, D).
/// joint:         x = (L, I, K), u = (h, n, s), y = (L, I, K, C, D).
struct SystemMatrices {
    SystemLayout layout = SystemLayout::illiquid_only;
    int n_ill = 0;
    int n_liq = 0;
    Matrix A, B, F, G;

    int state_dim() const { return layout == SystemLayout::joint ? 1 + 2 * n_ill : 2 * n_ill; }
    int control_dim() const { return layout == SystemLayout::joint ? n_liq + n_ill + 1 : n_ill; }
    int output_dim() const { return layout == SystemLayout::joint ? 1 + 4 * n_ill : 4 * n_ill; }
};

inline SystemMatrices build_matrices(const JointDraw& d, SystemLayout layout) {
    const int n = static_cast<int>(d.R_ill.size());
    const int nl = static_cast<int>(d.R_liq.size());
    SystemMatrices m;
    m.layout = layout;
    m.n_ill = n;
    m.n_liq = layout == SystemLayout::joint ? nl : 0;
    // offsets of I and K in x, of n in u, of outputs in y
    const int off = layout == SystemLayout::joint ? 1 : 0;
    const int nu = layout == SystemLayout::joint ? nl : 0;
    m.A = Matrix::Zero(m.state_dim(), m.state_dim());
    m.B = Matrix::Zero(m.state_dim(), m.control_dim());
    m.F = Matrix::Zero(m.output_dim(), m.state_dim());
    m.G = Matrix::Zero(m.output_dim(), m.control_dim());
    for (int i = 0; i < n; ++i) {
        const int iI = off + i;
        const int iK = off + n + i;
        const int in = nu + i;
        const double r = d.R_ill[i];
        m.A(iI, iI) = r * (1.0 - d.delta[i]);
        m.A(iI, iK) = d.lambda1[i];
        m.A(iK, iK) = 1.0 - d.lambda1[i];
        m.B(iI, in) = d.lambda0[i];
        m.B(iK, in) = 1.0 - d.lambda0[i];
        // outputs: I, K, C, D blocks after an optional leading L
        m.F(off + i, iI) = 1.0;
        m.F(off + n + i, iK) = 1.0;
        m.F(off + 2 * n + i, iK) = d.lambda1[i];
        m.G(off + 2 * n + i, in) = d.lambda0[i];
        m.F(off + 3 * n + i, iI) = r * d.delta[i];
        if (layout == SystemLayout::joint) {
            m.A(0, iI) = d.delta[i] * r;
            m.A(0, iK) = -d.lambda1[i];
            m.B(0, in) = -d.lambda0[i];
        }
    }
    if (layout == SystemLayout::joint) {
        for (int j = 0; j < nl; ++j) m.B(0, j) = d.R_liq[j];
        m.B(0, nl + n) = 1.0;
        m.F(0, 0) = 1.0;
    }
    return m;
}

/// Expected system matrices, estimated by Monte Carlo.
struct MeanMatrices {
    SystemMatrices mean;
    SystemMatrices std_error;  ///< standard error of each entry of `mean`
    long sample_count = 0;
    std::uint64_t seed = 0;

    const Matrix& A() const { return mean.A; }
    const Matrix& B() const { return mean.B; }
    const Matrix& F() const { return mean.F; }
    const Matrix& G() const { return mean.G; }
    int n_ill() const { return mean.n_ill; }
    int n_liq() const { return mean.n_liq; }
    SystemLayout layout() const { return mean.layout; }

    /// E[lambda^1] per illiquid asset.
    Vector mean_lambda1() const {
        const int off = layout() == SystemLayout::joint ? 1 : 0;
        const int n = n_ill();
        Vector out(n);
        for (int i = 0; i < n; ++i) out[i] = mean.A(off + i, off + n + i);
        return out;
    }

    /// E[lambda^0] per illiquid asset.
    Vector mean_lambda0() const {
        const int off = layout() == SystemLayout::joint ? 1 : 0;
        const int nu = layout() == SystemLayout::joint ? n_liq() : 0;
        Vector out(n_ill());
        for (int i = 0; i < n_ill(); ++i) out[i] = mean.B(off + i, nu + i);
        return out;
    }
};

inline constexpr long kDefaultMeanSamples = 1000000;
inline constexpr std::uint64_t kDefaultMeanSeed = 12345;

inline MeanMatrices mean_matrices(const LatentDistribution& dist, SystemLayout layout,
                                  long sample_count = kDefaultMeanSamples,
                                  std::uint64_t seed = kDefaultMeanSeed) {
    if (sample_count < 2) throw ArgumentError("mean_matrices: need at least two samples");
    RandomStream rng(seed);
    // Welford running mean: a degenerate distribution reproduces its draw exactly.
    SystemMatrices mean = build_matrices(dist.sample(rng), layout);
    SystemMatrices m2 = mean;
    for (Matrix* m : {&m2.A, &m2.B, &m2.F, &m2.G}) m->setZero();
    auto update = [](Matrix& mu, Matrix& acc, const Matrix& x, double k) {
        const Matrix d = x - mu;
        mu += d / k;
        acc += d.cwiseProduct(x - mu);
    };
    for (long k = 2; k <= sample_count; ++k) {
        const SystemMatrices s = build_matrices(dist.sample(rng), layout);
        const double kk = static_cast<double>(k);
        update(mean.A, m2.A, s.A, kk);
        update(mean.B, m2.B, s.B, kk);
        update(mean.F, m2.F, s.F, kk);
        update(mean.G, m2.G, s.G, kk);
    }
    const double N = static_cast<double>(sample_count);
    auto se = [N](const Matrix& acc) { return Matrix((acc / (N - 1.0)).cwiseMax(0.0).cwiseSqrt() / std::sqrt(N)); };
    MeanMatrices out;
    out.sample_count = sample_count;
    out.seed = seed;
    out.mean = mean;
    out.std_error = mean;
    out.std_error.A = se(m2.A);
    out.std_error.B = se(m2.B);
    out.std_error.F = se(m2.F);
    out.std_error.G = se(m2.G);
    return out;
}

/// Memoizes mean_matrices. Owned by the caller; safe for concurrent use.
class MeanMatrixCache {
public:
    MeanMatrices get(const LatentDistribution& dist, SystemLayout layout,
                     long sample_count = kDefaultMeanSamples, std::uint64_t seed = kDefaultMeanSeed) {
        const Key key{dist.fingerprint(), static_cast<int>(layout), sample_count, seed};
        {
            std::lock_guard lock(mutex_);
            auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        MeanMatrices mm = mean_matrices(dist, layout, sample_count, seed);
        std::lock_guard lock(mutex_);
        return cache_.emplace(key, std::move(mm)).first->second;
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return cache_.size();
    }

private:
    using Key = std::tuple<std::string, int, long, std::uint64_t>;
    mutable std::mutex mutex_;
    std::map<Key, MeanMatrices> cache_;
};

/// Illiquid-only view (x = (I, K), u = n) of a joint mean system.
inline MeanMatrices illiquid_subsystem(const MeanMatrices& mm) {
    if (mm.layout() == SystemLayout::illiquid_only) return mm;
    const int n = mm.n_ill();
    const int nl = mm.n_liq();
    auto extract = [n, nl](const SystemMatrices& s) {
        SystemMatrices o;
        o.layout = SystemLayout::illiquid_only;
        o.n_ill = n;
        o.n_liq = 0;
        o.A = s.A.block(1, 1, 2 * n, 2 * n);
        o.B = s.B.block(1, nl, 2 * n, n);
        o.F = s.F.block(1, 1, 4 * n, 2 * n);
        o.G = s.G.block(1, nl, 4 * n, n);
        return o;
    };
    MeanMatrices out;
    out.mean = extract(mm.mean);
    out.std_error = extract(mm.std_error);
    out.sample_count = mm.sample_count;
    out.seed = mm.seed;
    return out;
}

/// Output component indices (per illiquid asset i, with n illiquids) of the
/// illiquid-only output vector y = (I, K, C, D).
struct OutputIndex {
    static int I(int n, int i) { return i + 0 * n; }
    static int K(int n, int i) { return i + 1 * n; }
    static int C(int n, int i) { return i + 2 * n; }
    static int D(int n, int i) { return i + 3 * n; }
};

namespace detail {
inline void require_illiquid_only(const MeanMatrices& mm, const char* op) {
    if (mm.layout() != SystemLayout::illiquid_only) {
        throw ArgumentError(std::string(op) + ": expects illiquid-only mean matrices (see illiquid_subsystem)");
    }
}

/// Mean outputs y_1..y_T with u_t = commitment(t) applied at every asset, zero initial state.
template <class Commitment>
std::vector<Vector> mean_response(const MeanMatrices& mm, int T, Commitment commitment) {
    if (T < 1) throw ArgumentError("response horizon must be >= 1");
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(T));
    Vector x = Vector::Zero(mm.A().rows());
    for (int t = 1; t <= T; ++t) {
        const Vector u = Vector::Constant(mm.B().cols(), commitment(t));
        out.push_back(mm.F() * x + mm.G() * u);
        x = mm.A() * x + mm.B() * u;
    }
    return out;
}
}  // namespace detail

/// Mean outputs to a unit commitment at t = 1 (in every asset) from zero state.
/// y_1 = G (the same-period call), y_t = F A^(t-2) B for t >= 2.
inline std::vector<Vector> impulse_response(const MeanMatrices& mm, int T) {
    detail::require_illiquid_only(mm, "impulse_response");
    return detail::mean_response(mm, T, [](int t) { return t == 1 ? 1.0 : 0.0; });
}

/// Mean outputs to a constant unit commitment from zero state.
inline std::vector<Vector> step_response(const MeanMatrices& mm, int T) {
    detail::require_illiquid_only(mm, "step_response");
    return detail::mean_response(mm, T, [](int) { return 1.0; });
}

/// Asymptotic mean outputs per dollar of constant commitment, per illiquid asset.
struct SteadyStateGains {
    Vector alpha_I;
    Vector alpha_K;
    Vector alpha_C;
    Vector alpha_D;
};

inline SteadyStateGains steady_state_gains(const MeanMatrices& joint_or_illiquid) {
    const MeanMatrices mm = illiquid_subsystem(joint_or_illiquid);
    const double rho = spectral_radius(mm.A());
    if (!(rho < 1.0)) {
        throw NonConvergentSystemError("mean dynamics spectral radius " + std::to_string(rho) + " >= 1");
    }
    const Eigen::Index nx = mm.A().rows();
    const Matrix I = Matrix::Identity(nx, nx);
    const Matrix yss = mm.F() * (I - mm.A()).partialPivLu().solve(mm.B()) + mm.G();
    const int n = mm.n_ill();
    SteadyStateGains g{Vector(n), Vector(n), Vector(n), Vector(n)};
    for (int i = 0; i < n; ++i) {
        g.alpha_I[i] = yss(OutputIndex::I(n, i), i);
        g.alpha_K[i] = yss(OutputIndex::K(n, i), i);
        g.alpha_C[i] = yss(OutputIndex::C(n, i), i);
        g.alpha_D[i] = yss(OutputIndex::D(n, i), i);
    }
    return g;
}

}  // namespace illiquid
