#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "illiquid/errors.hpp"

namespace illiquid {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline bool is_symmetric(const Matrix& m, double tol = 1e-12) {
    if (m.rows() != m.cols()) return false;
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

/// Largest absolute difference between m and its transpose.
inline double asymmetry(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    return (m - m.transpose()).cwiseAbs().maxCoeff();
}

/// Returns a factor F with F * F^T == sigma. Works for singular PSD input;
/// eigenvalues below -psd_tol are rejected.
inline Matrix psd_factor(const Matrix& sigma, double psd_tol = 1e-10) {
    if (sigma.rows() != sigma.cols()) throw ModelError("covariance is not square");
    if (sigma.size() == 0) return Matrix(0, 0);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
    if (eig.info() != Eigen::Success) throw ModelError("covariance eigendecomposition failed");
    const Vector& ev = eig.eigenvalues();
    if (ev.minCoeff() < -psd_tol) {
        throw ModelError("covariance is not positive semidefinite (min eigenvalue " +
                         std::to_string(ev.minCoeff()) + ")");
    }
    Vector root = ev.cwiseMax(0.0).cwiseSqrt();
    Matrix f = eig.eigenvectors() * root.asDiagonal();
    // zero-variance coordinates (e.g. cash) stay exactly deterministic
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
        if (sigma(i, i) == 0.0) f.row(i).setZero();
    }
    return f;
}

/// Returns M with M^T M == sigma, dropping numerically zero directions, so that
/// ||M y||_2 == sqrt(y^T sigma y). Rows of M are scaled eigenvectors.
inline Matrix psd_sqrt_rows(const Matrix& sigma, double psd_tol = 1e-10) {
    if (sigma.size() == 0) return Matrix(0, 0);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
    if (eig.info() != Eigen::Success) throw ModelError("covariance eigendecomposition failed");
    const Vector& ev = eig.eigenvalues();
    if (ev.minCoeff() < -psd_tol) throw ModelError("covariance is not positive semidefinite");
    const double cutoff = std::max(1e-14, 1e-13 * ev.cwiseAbs().maxCoeff());
    int keep = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) keep += ev[i] > cutoff ? 1 : 0;
    Matrix rows(keep, sigma.cols());
    int r = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] > cutoff) rows.row(r++) = std::sqrt(ev[i]) * eig.eigenvectors().col(i).transpose();
    }
    return rows;
}

/// Spectral radius by power iteration on A^2, renormalizing every step.
inline double spectral_radius(const Matrix& a, int max_iter = 1000, double tol = 1e-10) {
    if (a.rows() != a.cols()) throw ArgumentError("spectral_radius: matrix not square");
    const Eigen::Index n = a.rows();
    if (n == 0) return 0.0;
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = 1.0 + 0.1 * static_cast<double>(i + 1) / static_cast<double>(n);
    x.normalize();
    double prev = -1.0;
    double estimate = 0.0;
    for (int it = 0; it < max_iter; ++it) {
        // two-step growth handles sign-alternating dominant pairs
        const Vector y2 = a * (a * x);
        const double ny2 = y2.norm();
        if (ny2 == 0.0) return 0.0;
        estimate = std::sqrt(ny2);
        if (std::abs(estimate - prev) <= tol * std::max(1.0, estimate)) break;
        prev = estimate;
        x = y2 / ny2;
    }
    return estimate;
}

}  // namespace illiquid
