#pragma once

#include <cmath>
#include <vector>

#include "isac/arrays.hpp"
#include "isac/numerics.hpp"
#include "isac/scenario.hpp"

namespace isac {

/// Spatial clutter covariance B_sp at BS2: the normalized sum of Gaussian
/// local-scattering covariances, one per patch. Patch directions use the
/// same convention as the target angle psi (direction from the scatterer
/// towards BS2), so target and clutter live in one steering space.
inline HermitianMatrix build_spatial_clutter(std::span<const Vec2> patches, double spread, int m_rx,
                                             const Vec2& bs2_pos) {
    if (patches.empty()) {
        throw DomainError("build_spatial_clutter: need at least one patch");
    }
    std::vector<double> angles;
    angles.reserve(patches.size());
    for (const Vec2& patch : patches) {
        const Vec2 d = bs2_pos - patch;
        angles.push_back(std::atan2(d.y(), d.x()));
    }
    return local_scattering_covariance(angles, spread, m_rx);
}

/// Per-bin clutter-plus-noise covariances used by the likelihood.
struct PerBinClutterCov {
    HermitianMatrix r_ul;
    HermitianMatrix r_dl;

    const HermitianMatrix& for_link(Link link) const noexcept {
        return link == Link::Uplink ? r_ul : r_dl;
    }
};

/// R_DL = cbrt(delta^2) B_sp + sigma^2 I, R_UL = cbrt(kappa^2 delta^2) B_sp + sigma^2 I.
inline PerBinClutterCov per_bin_cov(const ClutterConfig& cl, const HermitianMatrix& b_sp, double noise_var) {
    if (!(noise_var > 0.0)) {
        throw DomainError("per_bin_cov: noise variance must be positive");
    }
    const CMatrix noise = CMatrix::Identity(b_sp.dim(), b_sp.dim()) * noise_var;
    const double dl = std::cbrt(cl.texture);
    const double ul = std::cbrt(cl.kappa * cl.texture);
    return {HermitianMatrix(CMatrix(ul * b_sp.matrix() + noise)),
            HermitianMatrix(CMatrix(dl * b_sp.matrix() + noise))};
}

/// Noise-only counterpart: R_UL = R_DL = sigma^2 I.
inline PerBinClutterCov noise_only_cov(int m_rx, double noise_var) {
    return {HermitianMatrix::identity(m_rx, noise_var), HermitianMatrix::identity(m_rx, noise_var)};
}

inline PerBinClutterCov scenario_clutter_cov(const ScenarioConfig& cfg) {
    if (cfg.clutter.patch_positions.empty() || cfg.clutter.texture == 0.0) {
        return noise_only_cov(cfg.m_bs_rx, cfg.noise_var);
    }
    const HermitianMatrix b_sp = build_spatial_clutter(cfg.clutter.patch_positions, cfg.clutter.angular_spread,
                                                       cfg.m_bs_rx, cfg.bs2_pos);
    return per_bin_cov(cfg.clutter, b_sp, cfg.noise_var);
}

/// W x with W the lower-Cholesky whitener of cov.
inline CVector whiten_bin(const CVector& x, const HermitianMatrix& cov) {
    if (x.size() != cov.dim()) {
        throw ContractError("whiten_bin: dimension mismatch");
    }
    return whitener(cov) * x;
}

/// Draws clutter over an n_sym x n_sc grid of bins for one link. The
/// covariance is Kronecker-separable, scale * T_time (x) T_freq (x) B_sp,
/// with exponential Toeplitz factors of unit diagonal, so each bin's
/// marginal matches the per-bin covariance minus the noise.
/// Column (s * n_sc + f) holds the bin at symbol s, subcarrier f.
class ClutterSampler {
public:
    ClutterSampler(const ScenarioConfig& cfg, Link link, int n_sym, int n_sc) : n_sym_(n_sym), n_sc_(n_sc) {
        const HermitianMatrix b_sp = build_spatial_clutter(cfg.clutter.patch_positions, cfg.clutter.angular_spread,
                                                           cfg.m_bs_rx, cfg.bs2_pos);
        const double texture = link == Link::Uplink ? cfg.clutter.kappa * cfg.clutter.texture : cfg.clutter.texture;
        root_space_ = std::sqrt(std::cbrt(texture)) * psd_sqrt(b_sp);
        root_time_ = psd_sqrt(exponential_toeplitz(cfg.clutter.temporal_corr, n_sym));
        root_freq_ = psd_sqrt(exponential_toeplitz(cfg.clutter.frequency_corr, n_sc));
    }

    CMatrix draw(Rng& rng) const {
        const Index m = root_space_.rows();
        const CMatrix z = complex_normal(m, static_cast<Index>(n_sym_) * n_sc_, rng);
        // vec over (freq fastest, then time) of the colored draw
        const CMatrix tf = kronecker(root_time_, root_freq_);
        return root_space_ * z * tf.transpose();
    }

private:
    static HermitianMatrix exponential_toeplitz(double rho, int n) {
        std::vector<double> row(static_cast<std::size_t>(n));
        for (int l = 0; l < n; ++l) {
            row[static_cast<std::size_t>(l)] = std::pow(rho, l);
        }
        return toeplitz_hermitian(std::span<const double>(row));
    }

    int n_sym_;
    int n_sc_;
    CMatrix root_space_;
    CMatrix root_time_;
    CMatrix root_freq_;
};

} // namespace isac
