#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isac/errors.hpp"

namespace isac {

using cd = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSpeedOfLight = 299'792'458.0;
inline constexpr cd kJ{0.0, 1.0};

// -------------------------------------------------------------------------
// HermitianMatrix
// -------------------------------------------------------------------------

/// Square complex matrix that equals its conjugate transpose.
///
/// Construction checks the Hermitian property to 1e-12 relative to the
/// largest entry and then stores the exactly symmetrized average, so
/// downstream eigen-solvers never see rounding-level asymmetry.
class HermitianMatrix {
public:
    HermitianMatrix() = default;

    explicit HermitianMatrix(CMatrix m) {
        if (m.rows() != m.cols()) {
            throw ContractError("HermitianMatrix: matrix is not square");
        }
        const double scale = m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
        const double asym = m.size() == 0 ? 0.0 : (m - m.adjoint()).cwiseAbs().maxCoeff();
        if (asym > 1e-12 * std::max(scale, 1e-300)) {
            throw DomainError("HermitianMatrix: input is not Hermitian (asymmetry " +
                              std::to_string(asym) + ")");
        }
        m_ = 0.5 * (m + m.adjoint());
    }

    static HermitianMatrix identity(Index n, double scale = 1.0) {
        return HermitianMatrix(CMatrix(CMatrix::Identity(n, n) * scale));
    }

    const CMatrix& matrix() const noexcept { return m_; }
    Index dim() const noexcept { return m_.rows(); }
    double trace() const { return m_.trace().real(); }

    RVector eigenvalues() const {
        Eigen::SelfAdjointEigenSolver<CMatrix> es(m_, Eigen::EigenvaluesOnly);
        return es.eigenvalues();
    }

    bool is_positive_semidefinite(double rel_tol = 1e-10) const {
        if (dim() == 0) {
            return true;
        }
        const RVector ev = eigenvalues();
        const double top = std::max(ev.maxCoeff(), 0.0);
        return ev.minCoeff() >= -rel_tol * std::max(top, 1e-300);
    }

    HermitianMatrix operator+(const HermitianMatrix& o) const { return HermitianMatrix(CMatrix(m_ + o.m_)); }
    HermitianMatrix operator*(double s) const { return HermitianMatrix(CMatrix(m_ * s)); }

private:
    CMatrix m_;
};

// -------------------------------------------------------------------------
// Special functions
// -------------------------------------------------------------------------

/// Zeroth-order Bessel function of the first kind.
inline double bessel_j0(double x) {
    if (!std::isfinite(x)) {
        throw DomainError("bessel_j0: non-finite argument");
    }
    // J0 is even; the standard library only accepts non-negative arguments.
    return std::cyl_bessel_j(0.0, std::abs(x));
}

/// Nodes and weights of the n-point Gauss-Hermite rule for the weight
/// exp(-x^2), via the Golub-Welsch eigenproblem.
inline std::pair<RVector, RVector> gauss_hermite(int n) {
    if (n < 1) {
        throw DomainError("gauss_hermite: need at least one node");
    }
    RMatrix jacobi = RMatrix::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        const double off = std::sqrt(0.5 * k);
        jacobi(k, k - 1) = off;
        jacobi(k - 1, k) = off;
    }
    Eigen::SelfAdjointEigenSolver<RMatrix> es(jacobi);
    RVector nodes = es.eigenvalues();
    RVector weights = es.eigenvectors().row(0).transpose().array().square() * std::sqrt(kPi);
    return {nodes, weights};
}

// -------------------------------------------------------------------------
// Structured matrices
// -------------------------------------------------------------------------

/// Kronecker product; block (i,j) of the result is a(i,j) * b.
inline CMatrix kronecker(const CMatrix& a, const CMatrix& b) {
    CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Index i = 0; i < a.rows(); ++i) {
        for (Index j = 0; j < a.cols(); ++j) {
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
        }
    }
    return out;
}

/// Hermitian Toeplitz matrix whose first row is `first_row`:
/// entry (i,j) = first_row[j-i] for j >= i and its conjugate below.
inline HermitianMatrix toeplitz_hermitian(std::span<const cd> first_row) {
    if (first_row.empty()) {
        throw DomainError("toeplitz_hermitian: empty input");
    }
    if (std::abs(first_row[0].imag()) > 1e-12 * std::max(1.0, std::abs(first_row[0]))) {
        throw DomainError("toeplitz_hermitian: first entry must be real");
    }
    const auto n = static_cast<Index>(first_row.size());
    CMatrix t(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            const auto lag = static_cast<std::size_t>(std::abs(i - j));
            t(i, j) = (i > j) ? std::conj(first_row[lag]) : first_row[lag];
        }
    }
    t.diagonal() = t.diagonal().real().cast<cd>();
    return HermitianMatrix(std::move(t));
}

inline HermitianMatrix toeplitz_hermitian(std::span<const double> first_row) {
    std::vector<cd> c(first_row.begin(), first_row.end());
    return toeplitz_hermitian(std::span<const cd>(c));
}

// -------------------------------------------------------------------------
// Factorizations
// -------------------------------------------------------------------------

/// Whitening transform W = L^{-1} for r = L L^H, so that W r W^H = I.
///
/// Cholesky is done by hand rather than through Eigen::LLT so that the
/// pivot test can be made relative to the trace.
inline CMatrix whitener(const HermitianMatrix& r) {
    const CMatrix& a = r.matrix();
    const Index n = a.rows();
    const double tol = 1e-14 * std::max(std::abs(r.trace()), 1e-300);
    CMatrix l = CMatrix::Zero(n, n);
    for (Index j = 0; j < n; ++j) {
        double d = a(j, j).real();
        for (Index k = 0; k < j; ++k) {
            d -= std::norm(l(j, k));
        }
        if (!(d > tol)) {
            throw SingularityError("whitener: matrix is not positive-definite (pivot " +
                                   std::to_string(d) + ")");
        }
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (Index i = j + 1; i < n; ++i) {
            cd s = a(i, j);
            for (Index k = 0; k < j; ++k) {
                s -= l(i, k) * std::conj(l(j, k));
            }
            l(i, j) = s / ljj;
        }
    }
    CMatrix w = CMatrix::Identity(n, n);
    l.triangularView<Eigen::Lower>().solveInPlace(w);
    return w;
}

/// Square root S of a Hermitian PSD matrix, S S^H = a. Eigen-based so it
/// tolerates rank deficiency (fully correlated blocks, zero-spread clusters).
inline CMatrix psd_sqrt(const HermitianMatrix& a, double rel_tol = 1e-10) {
    if (a.dim() == 0) {
        return {};
    }
    Eigen::SelfAdjointEigenSolver<CMatrix> es(a.matrix());
    const RVector& ev = es.eigenvalues();
    const double top = std::max(ev.maxCoeff(), 0.0);
    if (ev.minCoeff() < -rel_tol * std::max(top, 1e-300)) {
        throw DomainError("psd_sqrt: matrix is not positive-semidefinite");
    }
    const RVector root = ev.cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.cast<cd>().asDiagonal();
}

/// Lower factor L with L L^H = a for a Hermitian PSD matrix. Pivots below
/// rel_tol * trace are treated as zero and their columns dropped, so
/// singular correlation matrices (fully correlated blocks) are accepted.
/// Row j of L only involves the first j+1 columns: the leading k x k block
/// of L factors the leading k x k block of a.
inline CMatrix psd_cholesky(const HermitianMatrix& a, double rel_tol = 1e-12) {
    const CMatrix& m = a.matrix();
    const Index n = m.rows();
    const double tol = rel_tol * std::max(std::abs(a.trace()), 1e-300);
    CMatrix l = CMatrix::Zero(n, n);
    for (Index j = 0; j < n; ++j) {
        double d = m(j, j).real();
        for (Index k = 0; k < j; ++k) {
            d -= std::norm(l(j, k));
        }
        if (d < -std::max(1e3 * tol, 1e-300)) {
            throw DomainError("psd_cholesky: matrix is not positive-semidefinite");
        }
        if (d <= tol) {
            continue;
        }
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (Index i = j + 1; i < n; ++i) {
            cd s = m(i, j);
            for (Index k = 0; k < j; ++k) {
                s -= l(i, k) * std::conj(l(j, k));
            }
            l(i, j) = s / ljj;
        }
    }
    return l;
}

/// Moore-Penrose pseudo-inverse of a real symmetric matrix; eigenvalues
/// below rel_cutoff * (largest |eigenvalue|) are treated as zero.
inline RMatrix pinv_symmetric(const RMatrix& a, double rel_cutoff = 1e-10) {
    if (a.size() == 0) {
        return {};
    }
    Eigen::SelfAdjointEigenSolver<RMatrix> es(0.5 * (a + a.transpose()));
    const RVector& ev = es.eigenvalues();
    const double cutoff = rel_cutoff * ev.cwiseAbs().maxCoeff();
    RVector inv = RVector::Zero(ev.size());
    for (Index i = 0; i < ev.size(); ++i) {
        if (std::abs(ev(i)) > cutoff) {
            inv(i) = 1.0 / ev(i);
        }
    }
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

// -------------------------------------------------------------------------
// Random draws
// -------------------------------------------------------------------------

using Rng = std::mt19937_64;

/// Seed of substream `stream` derived from `seed` (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// One CN(0, 1) sample.
inline cd complex_normal(Rng& rng) {
    std::normal_distribution<double> n(0.0, std::sqrt(0.5));
    const double re = n(rng);
    const double im = n(rng);
    return {re, im};
}

inline CMatrix complex_normal(Index rows, Index cols, Rng& rng) {
    CMatrix out(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) {
            out(i, j) = complex_normal(rng);
        }
    }
    return out;
}

// -------------------------------------------------------------------------
// Test oracle
// -------------------------------------------------------------------------

/// Central-difference Jacobian of f at x0; column l is
/// (f(x0 + step e_l) - f(x0 - step e_l)) / (2 step).
inline CMatrix finite_difference_jacobian(const std::function<CVector(const RVector&)>& f,
                                          const RVector& x0, double step) {
    if (!(step > 0.0)) {
        throw DomainError("finite_difference_jacobian: step must be positive");
    }
    const CVector f0 = f(x0);
    CMatrix jac(f0.size(), x0.size());
    RVector x = x0;
    for (Index l = 0; l < x0.size(); ++l) {
        x(l) = x0(l) + step;
        const CVector plus = f(x);
        x(l) = x0(l) - step;
        const CVector minus = f(x);
        x(l) = x0(l);
        jac.col(l) = (plus - minus) / (2.0 * step);
    }
    return jac;
}

} // namespace isac
