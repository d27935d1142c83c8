#pragma once

#include <cmath>
#include <vector>

#include "isac/arrays.hpp"
#include "isac/numerics.hpp"
#include "isac/scenario.hpp"

namespace isac {

// -------------------------------------------------------------------------
// Spatial and temporal statistics
// -------------------------------------------------------------------------

/// Kronecker spatial covariance of vec(H_k), H_k in C^{M_tx x M_ue}.
/// Vectorization is column-major, so the BS antenna index runs fastest and
/// c_full = kron(c_ue, c_bs).
struct SpatialCovariance {
    HermitianMatrix c_bs;
    HermitianMatrix c_ue;
    HermitianMatrix c_full;

    SpatialCovariance() = default;
    SpatialCovariance(HermitianMatrix bs, HermitianMatrix ue)
        : c_bs(std::move(bs)), c_ue(std::move(ue)),
          c_full(CMatrix(kronecker(c_ue.matrix(), c_bs.matrix()))) {}

    int m_bs() const noexcept { return static_cast<int>(c_bs.dim()); }
    int m_ue() const noexcept { return static_cast<int>(c_ue.dim()); }
};

inline HermitianMatrix build_spatial_covariance(std::span<const double> cluster_angles, double angular_spread,
                                                int array_size) {
    return local_scattering_covariance(cluster_angles, angular_spread, array_size);
}

/// Covariance of UE k's channel: BS side from the UE's scatterer clusters
/// as seen from BS1 (LOS direction when none are configured), UE side
/// identity.
inline SpatialCovariance ue_spatial_covariance(const ScenarioConfig& cfg, int k) {
    const auto ku = static_cast<std::size_t>(k);
    std::vector<double> angles;
    if (cfg.ue_clusters.empty() || cfg.ue_clusters[ku].empty()) {
        const Vec2 d = cfg.ue_pos[ku] - cfg.bs1_pos;
        angles.push_back(std::atan2(d.y(), d.x()));
    } else {
        for (const Vec2& c : cfg.ue_clusters[ku]) {
            const Vec2 d = c - cfg.bs1_pos;
            angles.push_back(std::atan2(d.y(), d.x()));
        }
    }
    return {build_spatial_covariance(angles, cfg.ue_angular_spread, cfg.m_bs_tx),
            HermitianMatrix::identity(cfg.m_ue)};
}

/// Block-lag correlation zeta_k(lag) = J0(2 pi tau_c T lag |omega_k| / lambda).
inline double temporal_zeta(const ScenarioConfig& cfg, int k, int lag) {
    if (lag < 0) {
        throw DomainError("temporal_zeta: negative lag");
    }
    const double speed = cfg.ue_vel[static_cast<std::size_t>(k)].norm();
    return bessel_j0(2.0 * kPi * cfg.tau_c * cfg.symbol_duration() * lag * speed / cfg.wavelength());
}

/// [zeta(0), ..., zeta(n - 1)].
inline std::vector<double> zeta_vector(const ScenarioConfig& cfg, int k, int n) {
    std::vector<double> z(static_cast<std::size_t>(n));
    for (int lag = 0; lag < n; ++lag) {
        z[static_cast<std::size_t>(lag)] = temporal_zeta(cfg, k, lag);
    }
    return z;
}

// -------------------------------------------------------------------------
// Trajectory sampling
// -------------------------------------------------------------------------

/// Draws jointly Gaussian block trajectories with covariance
/// T(zeta) (x) C. Column j of a draw is the channel j blocks before the
/// newest one. The temporal factor is a lower Cholesky factor, so the
/// first q columns of a draw do not depend on the trajectory length:
/// estimators of different depth see the same channels for a given stream.
class TrajectorySampler {
public:
    TrajectorySampler(const HermitianMatrix& c, std::span<const double> zeta, int n_blocks)
        : n_blocks_(n_blocks) {
        if (n_blocks < 1 || static_cast<std::size_t>(n_blocks) > zeta.size()) {
            throw DomainError("TrajectorySampler: zeta shorter than the trajectory");
        }
        const HermitianMatrix t = toeplitz_hermitian(zeta.first(static_cast<std::size_t>(n_blocks)));
        if (!t.is_positive_semidefinite(1e-9)) {
            throw DomainError("TrajectorySampler: temporal correlation matrix is not PSD");
        }
        root_space_ = psd_sqrt(c);
        root_time_ = psd_cholesky(t);
    }

    int dim() const noexcept { return static_cast<int>(root_space_.rows()); }
    int n_blocks() const noexcept { return n_blocks_; }

    CMatrix draw(Rng& rng) const {
        const CMatrix z = complex_normal(root_space_.cols(), root_time_.cols(), rng);
        return root_space_ * z * root_time_.transpose();
    }

private:
    int n_blocks_;
    CMatrix root_space_;
    CMatrix root_time_;
};

/// One realization of [h_b; h_{b-1}; ...; h_{b-p_tot+1}] (block index outer,
/// antenna index inner) with covariance T(zeta) (x) C_k.
inline CVector sample_trajectory(const SpatialCovariance& cov, std::span<const double> zeta, int p_tot, Rng& rng) {
    const TrajectorySampler sampler(cov.c_full, zeta, p_tot);
    const CMatrix blocks = sampler.draw(rng);
    return Eigen::Map<const CVector>(blocks.data(), blocks.size());
}

} // namespace isac
