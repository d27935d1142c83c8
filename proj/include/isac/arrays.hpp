#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "isac/numerics.hpp"

namespace isac {

/// Half-wavelength ULA response, entry m = exp(j pi m sin(angle)).
inline CVector steering(int array_size, double angle) {
    CVector a(array_size);
    const double phase = kPi * std::sin(angle);
    for (int m = 0; m < array_size; ++m) {
        a(m) = std::polar(1.0, phase * m);
    }
    return a;
}

/// d steering / d angle: entry m gains the factor j pi m cos(angle).
inline CVector steering_derivative(int array_size, double angle) {
    CVector d = steering(array_size, angle);
    const double c = kPi * std::cos(angle);
    for (int m = 0; m < array_size; ++m) {
        d(m) *= kJ * (c * m);
    }
    return d;
}

/// Gaussian local-scattering covariance: the average over `centers` of
/// E[a(phi) a(phi)^H] with phi ~ N(center, spread^2), normalized to trace
/// `array_size`. Zero spread degenerates to the rank-one outer products.
inline HermitianMatrix local_scattering_covariance(std::span<const double> centers, double spread,
                                                   int array_size) {
    if (centers.empty()) {
        throw DomainError("local_scattering_covariance: need at least one cluster");
    }
    if (spread < 0.0) {
        throw DomainError("local_scattering_covariance: negative angular spread");
    }
    CMatrix r = CMatrix::Zero(array_size, array_size);
    // The integrand oscillates at up to pi (M-1) sqrt(2) spread per unit of
    // the Hermite variable; node spacing must resolve that frequency.
    const double max_freq = kPi * (array_size - 1) * std::sqrt(2.0) * spread;
    const int n_nodes = std::clamp(static_cast<int>(0.5 * max_freq * max_freq) + 48, 48, 600);
    const auto [nodes, weights] = gauss_hermite(n_nodes);
    for (double center : centers) {
        if (spread == 0.0) {
            const CVector a = steering(array_size, center);
            r += a * a.adjoint();
            continue;
        }
        // entry (m, m') depends only on m - m'; integrate each lag once
        CVector lag_value = CVector::Zero(array_size);
        for (Index q = 0; q < nodes.size(); ++q) {
            const double phi = center + std::sqrt(2.0) * spread * nodes(q);
            const double w = weights(q) / std::sqrt(kPi);
            const double s = kPi * std::sin(phi);
            for (int lag = 0; lag < array_size; ++lag) {
                lag_value(lag) += w * std::polar(1.0, s * lag);
            }
        }
        for (int m = 0; m < array_size; ++m) {
            for (int n = 0; n < array_size; ++n) {
                r(m, n) += m >= n ? lag_value(m - n) : std::conj(lag_value(n - m));
            }
        }
    }
    const double tr = r.trace().real();
    r *= static_cast<double>(array_size) / tr;
    return HermitianMatrix(CMatrix(0.5 * (r + r.adjoint())));
}

} // namespace isac
