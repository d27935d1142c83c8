#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "isac/comm_channel.hpp"
#include "isac/numerics.hpp"
#include "isac/scenario.hpp"

namespace isac {

// -------------------------------------------------------------------------
// Pilots
// -------------------------------------------------------------------------

/// Mutually orthogonal pilot matrices: UE k owns rows [k m_ue, (k+1) m_ue)
/// of the tau_p-point DFT matrix, so pilots_[k] pilots_[k]^H = tau_p I.
struct PilotBook {
    std::vector<CMatrix> pilots;

    const CMatrix& operator[](int k) const { return pilots[static_cast<std::size_t>(k)]; }
    int num_ues() const noexcept { return static_cast<int>(pilots.size()); }
};

inline PilotBook generate_pilots(int num_ues, int m_ue, int tau_p) {
    if (tau_p < num_ues * m_ue) {
        throw ConfigError("generate_pilots: tau_p smaller than K * m_ue");
    }
    PilotBook book;
    for (int k = 0; k < num_ues; ++k) {
        CMatrix b(m_ue, tau_p);
        for (int u = 0; u < m_ue; ++u) {
            const int row = k * m_ue + u;
            for (int t = 0; t < tau_p; ++t) {
                // reduce the exponent first so large tau_p keeps full phase accuracy
                const long long e = (static_cast<long long>(row) * t) % tau_p;
                b(u, t) = std::polar(1.0, -2.0 * kPi * static_cast<double>(e) / tau_p);
            }
        }
        book.pilots.push_back(std::move(b));
    }
    return book;
}

/// Y B_k^H / sqrt(tau_p).
inline CMatrix despread(const CMatrix& y, const CMatrix& pilot) {
    if (y.cols() != pilot.cols()) {
        throw ContractError("despread: observation and pilot lengths differ");
    }
    return y * pilot.adjoint() / std::sqrt(static_cast<double>(pilot.cols()));
}

// -------------------------------------------------------------------------
// Multi-pilot MMSE channel estimation
// -------------------------------------------------------------------------

/// How UE k's pilots reach BS1.
struct PilotLink {
    CMatrix pilot_precoder; // W_k^0 P_k^0 (m_ue x m_ue)
    int nu_p = 1;           // pilot subcarriers per PRB
    double alpha = 1.0;     // amplitude pathloss
    int tau_p = 1;
    double noise_var = 1.0;
};

struct ChannelEstimate {
    CVector h_hat;
    HermitianMatrix xi_hat;   // covariance of the estimate
    HermitianMatrix xi_tilde; // covariance of the error
};

/// MMSE estimator of h_b from the despread pilots of blocks b, b-1, ..., b-p.
///
/// Stacked observation layout (block outermost): [y_b; ...; y_{b-p}] with
/// y_j = [vec(Y_{j,1}); ...; vec(Y_{j,nu_p})]. Each y_j = alpha sqrt(tau_p)
/// D h_j + noise, D = 1_{nu_p} (x) (W^0 P^0)^T (x) I. The nu_p copies share
/// the channel, so the filter is formed on their sum (a sufficient
/// statistic) and expanded back when the full filter is requested.
class MmseChannelEstimator {
public:
    MmseChannelEstimator(const HermitianMatrix& c, std::span<const double> zeta, const PilotLink& link)
        : n_(static_cast<int>(c.dim())), p_tot_(static_cast<int>(zeta.size())), nu_p_(link.nu_p) {
        if (p_tot_ < 1) {
            throw DomainError("MmseChannelEstimator: need at least the current block");
        }
        if (link.pilot_precoder.rows() * (n_ / std::max<Index>(link.pilot_precoder.rows(), 1)) != n_ ||
            link.pilot_precoder.rows() != link.pilot_precoder.cols()) {
            throw ContractError("MmseChannelEstimator: pilot precoder does not match the channel dimension");
        }
        const Index m_ue = link.pilot_precoder.rows();
        const Index m_bs = n_ / m_ue;
        const CMatrix& cm = c.matrix();
        const CMatrix t = toeplitz_hermitian(zeta).matrix();

        // G = alpha sqrt(tau_p) ((W P)^T (x) I): per-copy observation matrix.
        const CMatrix g = link.alpha * std::sqrt(static_cast<double>(link.tau_p)) *
                          kronecker(link.pilot_precoder.transpose(), CMatrix::Identity(m_bs, m_bs));
        const CMatrix gc = g * cm;           // G C
        const CMatrix gcg = gc * g.adjoint(); // G C G^H
        const Index big = static_cast<Index>(n_) * p_tot_;

        // Cov of the summed copies / nu_p: nu_p (I (x) G) M (I (x) G)^H + sigma^2 I
        CMatrix a_red(big, big);
        CMatrix cross(n_, big); // Cov(h_b, stacked G h_j) = E (I (x) G)^H
        for (int r = 0; r < p_tot_; ++r) {
            for (int s = 0; s < p_tot_; ++s) {
                a_red.block(r * n_, s * n_, n_, n_) = (static_cast<double>(nu_p_) * t(r, s)) * gcg;
            }
            cross.block(0, r * n_, n_, n_) = zeta[static_cast<std::size_t>(r)] * gc.adjoint();
        }
        a_red.diagonal().array() += link.noise_var;

        Eigen::LDLT<CMatrix> ldlt(a_red);
        if (ldlt.info() != Eigen::Success) {
            throw SingularityError("MmseChannelEstimator: observation covariance is singular");
        }
        // filter acting on the summed copies
        filter_ = ldlt.solve(cross.adjoint()).adjoint();
        CMatrix xi_hat = static_cast<double>(nu_p_) * filter_ * cross.adjoint();
        xi_hat = 0.5 * (xi_hat + xi_hat.adjoint()).eval();
        xi_hat_ = HermitianMatrix(xi_hat);
        CMatrix err = cm - xi_hat;
        xi_tilde_ = HermitianMatrix(CMatrix(0.5 * (err + err.adjoint())));
    }

    int dim() const noexcept { return n_; }
    int p_tot() const noexcept { return p_tot_; }
    int nu_p() const noexcept { return nu_p_; }
    Index observation_dim() const noexcept { return static_cast<Index>(n_) * nu_p_ * p_tot_; }

    const HermitianMatrix& xi_hat() const noexcept { return xi_hat_; }
    const HermitianMatrix& xi_tilde() const noexcept { return xi_tilde_; }

    /// Full filter K with h_hat = K y_stack.
    CMatrix filter() const {
        CMatrix full(n_, observation_dim());
        for (int r = 0; r < p_tot_; ++r) {
            for (int s = 0; s < nu_p_; ++s) {
                full.middleCols((static_cast<Index>(r) * nu_p_ + s) * n_, n_) = filter_.middleCols(r * n_, n_);
            }
        }
        return full;
    }

    CVector apply(const CVector& y_stack) const {
        if (y_stack.size() != observation_dim()) {
            throw ContractError("MmseChannelEstimator: observation length mismatch");
        }
        CVector summed = CVector::Zero(static_cast<Index>(n_) * p_tot_);
        for (int r = 0; r < p_tot_; ++r) {
            for (int s = 0; s < nu_p_; ++s) {
                summed.segment(r * n_, n_) += y_stack.segment((static_cast<Index>(r) * nu_p_ + s) * n_, n_);
            }
        }
        return filter_ * summed;
    }

    ChannelEstimate estimate(const CVector& y_stack) const { return {apply(y_stack), xi_hat_, xi_tilde_}; }

private:
    int n_;
    int p_tot_;
    int nu_p_;
    CMatrix filter_;
    HermitianMatrix xi_hat_;
    HermitianMatrix xi_tilde_;
};

inline ChannelEstimate mmse_estimate(const CVector& y_stack, const HermitianMatrix& c, std::span<const double> zeta,
                                     const PilotLink& link) {
    return MmseChannelEstimator(c, zeta, link).estimate(y_stack);
}

// -------------------------------------------------------------------------
// Error-covariance contractions
// -------------------------------------------------------------------------

/// E[H~ H~^H] for H~ = reshape(h~) in C^{m_bs x m_ue}: the sum of the
/// diagonal m_bs x m_bs blocks of xi.
inline CMatrix error_outer(const HermitianMatrix& xi, int m_ue) {
    const Index m_bs = xi.dim() / m_ue;
    CMatrix out = CMatrix::Zero(m_bs, m_bs);
    for (int u = 0; u < m_ue; ++u) {
        out += xi.matrix().block(u * m_bs, u * m_bs, m_bs, m_bs);
    }
    return out;
}

/// E[H~ W H~^H] = sum_{u,u'} W(u,u') xi_{u,u'} with xi_{u,u'} the
/// (u,u') block of xi.
inline CMatrix error_weighted_outer(const HermitianMatrix& xi, const CMatrix& w) {
    const Index m_ue = w.rows();
    const Index m_bs = xi.dim() / m_ue;
    CMatrix out = CMatrix::Zero(m_bs, m_bs);
    for (Index u = 0; u < m_ue; ++u) {
        for (Index up = 0; up < m_ue; ++up) {
            out += w(u, up) * xi.matrix().block(u * m_bs, up * m_bs, m_bs, m_bs);
        }
    }
    return out;
}

inline CMatrix reshape_channel(const CVector& h, int m_ue) {
    const Index m_bs = h.size() / m_ue;
    return Eigen::Map<const CMatrix>(h.data(), m_bs, m_ue);
}

// -------------------------------------------------------------------------
// Combining and precoding
// -------------------------------------------------------------------------

/// Per-UE inputs shared by the combiner, precoder and SE expressions.
struct UeChannelState {
    CMatrix h_hat;           // m_bs x m_ue
    HermitianMatrix xi_tilde; // error covariance of vec(h)
    CMatrix w_bar;           // W_k P_k
    double alpha = 1.0;
};

inline void check_states(std::span<const UeChannelState> ues) {
    for (const UeChannelState& u : ues) {
        if (u.xi_tilde.dim() != u.h_hat.rows() * u.h_hat.cols() || u.w_bar.rows() != u.h_hat.cols() ||
            u.h_hat.rows() != ues[0].h_hat.rows()) {
            throw ContractError("UeChannelState: inconsistent channel, error covariance or precoder sizes");
        }
    }
}

/// MMSE combiner T_k = (sum_l alpha_l^2 (H_l W~_l H_l^H + E[H~_l W~_l H~_l^H]) + sigma^2 I)^{-1} H_k W_k.
inline CMatrix mmse_combiner(std::span<const UeChannelState> ues, int k, double noise_var) {
    check_states(ues);
    const Index m_bs = ues[0].h_hat.rows();
    CMatrix inner = CMatrix::Identity(m_bs, m_bs) * noise_var;
    for (const UeChannelState& u : ues) {
        const CMatrix w_tilde = u.w_bar * u.w_bar.adjoint();
        inner += u.alpha * u.alpha *
                 (u.h_hat * w_tilde * u.h_hat.adjoint() + error_weighted_outer(u.xi_tilde, w_tilde));
    }
    const UeChannelState& me = ues[static_cast<std::size_t>(k)];
    return inner.ldlt().solve(me.h_hat * me.w_bar);
}

/// DL MMSE precoder of every UE, concatenated [F_1, ..., F_K] with unit-norm columns.
inline CMatrix mmse_precoder(std::span<const UeChannelState> ues, double noise_var) {
    if (ues.empty()) {
        return {};
    }
    check_states(ues);
    const Index m_bs = ues[0].h_hat.rows();
    const int m_ue = static_cast<int>(ues[0].h_hat.cols());
    CMatrix inner = CMatrix::Identity(m_bs, m_bs) * noise_var;
    CMatrix rhs(m_bs, static_cast<Index>(ues.size()) * m_ue);
    for (std::size_t k = 0; k < ues.size(); ++k) {
        const UeChannelState& u = ues[k];
        inner += u.alpha * u.alpha * (u.h_hat * u.h_hat.adjoint() + error_outer(u.xi_tilde, m_ue));
        rhs.middleCols(static_cast<Index>(k) * m_ue, m_ue) = u.alpha * u.h_hat;
    }
    CMatrix f = inner.ldlt().solve(rhs);
    for (Index c = 0; c < f.cols(); ++c) {
        const double nrm = f.col(c).norm();
        if (nrm > 0.0) {
            f.col(c) /= nrm;
        }
    }
    return f;
}

/// log2 det(I + alpha_k^2 W_k^H H_k^H Psi^{-1} H_k W_k) where Psi collects
/// the other UEs' estimated-channel interference, every UE's estimation
/// error and noise.
inline double uplink_log_det(std::span<const UeChannelState> ues, int k, double noise_var) {
    const UeChannelState& me = ues[static_cast<std::size_t>(k)];
    const Index m_bs = me.h_hat.rows();
    CMatrix psi = CMatrix::Identity(m_bs, m_bs) * noise_var;
    for (std::size_t l = 0; l < ues.size(); ++l) {
        const UeChannelState& u = ues[l];
        const CMatrix w_tilde = u.w_bar * u.w_bar.adjoint();
        psi += u.alpha * u.alpha * error_weighted_outer(u.xi_tilde, w_tilde);
        if (static_cast<int>(l) != k) {
            psi += u.alpha * u.alpha * u.h_hat * w_tilde * u.h_hat.adjoint();
        }
    }
    const CMatrix hw = me.h_hat * me.w_bar;
    CMatrix s = CMatrix::Identity(hw.cols(), hw.cols()) + me.alpha * me.alpha * hw.adjoint() * psi.ldlt().solve(hw);
    s = 0.5 * (s + s.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<CMatrix> es(s, Eigen::EigenvaluesOnly);
    double bits = 0.0;
    for (Index i = 0; i < es.eigenvalues().size(); ++i) {
        bits += std::log2(std::max(es.eigenvalues()(i), 1.0));
    }
    return bits;
}

/// Fraction of a block's symbols carrying UL data on subcarrier v.
inline double pre_log(const ScenarioConfig& cfg, bool pilot_subcarrier) {
    const double used = pilot_subcarrier ? cfg.tau_p + cfg.tau_dl : cfg.tau_dl;
    return 1.0 - used / static_cast<double>(cfg.tau_c);
}

// -------------------------------------------------------------------------
// Uplink pilot phase simulation
// -------------------------------------------------------------------------

/// Statistics of the UL pilot phase of one scenario: per-UE covariances,
/// trajectory samplers and MMSE estimators, built once and reused across
/// Monte-Carlo realizations.
class PilotPhase {
public:
    /// `n_blocks` consecutive blocks are estimated per draw; the trajectory
    /// includes p extra blocks of history before the first one.
    PilotPhase(const ScenarioConfig& cfg, int n_blocks)
        : cfg_(cfg), n_blocks_(n_blocks), pilots_(generate_pilots(cfg.num_ues(), cfg.m_ue, cfg.tau_p)) {
        const int K = cfg.num_ues();
        const int p_tot = cfg.p + 1;
        const int traj = n_blocks + cfg.p;
        const double amp = ue_stream_amplitude(cfg);
        for (int k = 0; k < K; ++k) {
            covs_.push_back(ue_spatial_covariance(cfg, k));
            alpha_.push_back(pathloss(cfg, k));
            const std::vector<double> zeta = zeta_vector(cfg, k, std::max(traj, p_tot));
            samplers_.emplace_back(covs_.back().c_full, zeta, traj);
            PilotLink link;
            link.pilot_precoder = CMatrix::Identity(cfg.m_ue, cfg.m_ue) * amp;
            link.nu_p = cfg.nu_p;
            link.alpha = alpha_.back();
            link.tau_p = cfg.tau_p;
            link.noise_var = cfg.noise_var;
            estimators_.emplace_back(covs_.back().c_full, std::span<const double>(zeta).first(p_tot), link);
        }
        w_bar_ = CMatrix::Identity(cfg.m_ue, cfg.m_ue) * amp;
    }

    int num_ues() const noexcept { return cfg_.num_ues(); }
    int n_blocks() const noexcept { return n_blocks_; }
    const PilotBook& pilots() const noexcept { return pilots_; }
    const MmseChannelEstimator& estimator(int k) const { return estimators_[static_cast<std::size_t>(k)]; }
    const SpatialCovariance& covariance(int k) const { return covs_[static_cast<std::size_t>(k)]; }
    double alpha(int k) const { return alpha_[static_cast<std::size_t>(k)]; }
    const CMatrix& w_bar() const noexcept { return w_bar_; }

    /// One PRB: true channels and estimates, indexed [k][b], b = 0 .. n_blocks-1.
    struct Draw {
        std::vector<std::vector<CMatrix>> h;
        std::vector<std::vector<CMatrix>> h_hat;
    };

    /// Every UE's trajectory and every (block, pilot subcarrier) noise
    /// matrix has its own substream, indexed by the lag from the newest
    /// block, so configurations that differ only in p or nu_p share
    /// channels and noise for a given draw.
    Draw draw(Rng& rng) const {
        const int K = num_ues();
        const int m_ue = cfg_.m_ue;
        const int m_bs = cfg_.m_bs_tx;
        const int n = m_bs * m_ue;
        const int traj = n_blocks_ + cfg_.p;
        const int p_tot = cfg_.p + 1;
        const double noise_std = std::sqrt(cfg_.noise_var);
        const std::uint64_t base = rng();

        // column c of a trajectory is the block c steps before the newest
        std::vector<CMatrix> trajectories;
        trajectories.reserve(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) {
            Rng sub(mix_seed(base, static_cast<std::uint64_t>(k)));
            trajectories.push_back(samplers_[static_cast<std::size_t>(k)].draw(sub));
        }

        // despread observations [k]: column (c * nu_p + s) for lag c, pilot subcarrier s
        std::vector<CMatrix> despread_obs(static_cast<std::size_t>(K), CMatrix(n, static_cast<Index>(traj) * cfg_.nu_p));
        for (int c = 0; c < traj; ++c) {
            CMatrix clean = CMatrix::Zero(m_bs, cfg_.tau_p);
            for (int k = 0; k < K; ++k) {
                const CMatrix hk = reshape_channel(trajectories[static_cast<std::size_t>(k)].col(c), m_ue);
                clean += alpha_[static_cast<std::size_t>(k)] * (hk * w_bar_) * pilots_[k];
            }
            for (int s = 0; s < cfg_.nu_p; ++s) {
                Rng sub(mix_seed(base, (1ULL << 32) + (static_cast<std::uint64_t>(c) << 16) + static_cast<std::uint64_t>(s)));
                const CMatrix y = clean + noise_std * complex_normal(m_bs, cfg_.tau_p, sub);
                for (int k = 0; k < K; ++k) {
                    const CMatrix yt = despread(y, pilots_[k]);
                    despread_obs[static_cast<std::size_t>(k)].col(static_cast<Index>(c) * cfg_.nu_p + s) =
                        Eigen::Map<const CVector>(yt.data(), yt.size());
                }
            }
        }

        Draw out;
        out.h.resize(static_cast<std::size_t>(K));
        out.h_hat.resize(static_cast<std::size_t>(K));
        CVector stack(static_cast<Index>(n) * cfg_.nu_p * p_tot);
        for (int k = 0; k < K; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            for (int b = 0; b < n_blocks_; ++b) {
                const int c0 = n_blocks_ - 1 - b; // lag of block b from the newest
                for (int r = 0; r < p_tot; ++r) {
                    for (int s = 0; s < cfg_.nu_p; ++s) {
                        stack.segment((static_cast<Index>(r) * cfg_.nu_p + s) * n, n) =
                            despread_obs[ku].col(static_cast<Index>(c0 + r) * cfg_.nu_p + s);
                    }
                }
                out.h[ku].push_back(reshape_channel(trajectories[ku].col(c0), m_ue));
                out.h_hat[ku].push_back(reshape_channel(estimators_[ku].apply(stack), m_ue));
            }
        }
        return out;
    }

    /// Channel states of block b for the combiner/precoder/SE expressions.
    std::vector<UeChannelState> states(const Draw& d, int b, bool perfect_csi = false) const {
        std::vector<UeChannelState> out;
        const auto zero = HermitianMatrix(CMatrix(CMatrix::Zero(cfg_.m_bs_tx * cfg_.m_ue, cfg_.m_bs_tx * cfg_.m_ue)));
        for (int k = 0; k < num_ues(); ++k) {
            const auto ku = static_cast<std::size_t>(k);
            out.push_back({perfect_csi ? d.h[ku][static_cast<std::size_t>(b)] : d.h_hat[ku][static_cast<std::size_t>(b)],
                           perfect_csi ? zero : estimators_[ku].xi_tilde(), w_bar_, alpha_[ku]});
        }
        return out;
    }

private:
    ScenarioConfig cfg_;
    int n_blocks_;
    PilotBook pilots_;
    std::vector<SpatialCovariance> covs_;
    std::vector<double> alpha_;
    std::vector<TrajectorySampler> samplers_;
    std::vector<MmseChannelEstimator> estimators_;
    CMatrix w_bar_;
};

// -------------------------------------------------------------------------
// Spectral efficiency
// -------------------------------------------------------------------------

struct SpectralEfficiencyResult {
    /// mean SE of UE k on subcarrier v of the representative PRB, [k][v]
    std::vector<std::vector<double>> mean_se;
    /// per-realization sum over UEs of the PRB-averaged SE (bit/s/Hz)
    std::vector<double> sum_se;
};

/// Monte-Carlo UL spectral efficiency on one representative PRB
/// (frequency blocks are i.i.d.). Realization r uses the stream
/// seeded with seed + r, so results do not depend on evaluation order.
inline SpectralEfficiencyResult spectral_efficiency(const ScenarioConfig& cfg, int realizations, std::uint64_t seed,
                                                    bool perfect_csi = false) {
    if (realizations < 1) {
        throw DomainError("spectral_efficiency: need at least one realization");
    }
    cfg.validate();
    const int K = cfg.num_ues();
    SpectralEfficiencyResult out;
    out.mean_se.assign(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(cfg.v_cho), 0.0));
    out.sum_se.assign(static_cast<std::size_t>(realizations), 0.0);
    if (K == 0) {
        return out;
    }
    const PilotPhase phase(cfg, 1);
    std::vector<double> beta_v(static_cast<std::size_t>(cfg.v_cho));
    double mean_beta = 0.0;
    for (int v = 0; v < cfg.v_cho; ++v) {
        beta_v[static_cast<std::size_t>(v)] = pre_log(cfg, v < cfg.nu_p);
        mean_beta += beta_v[static_cast<std::size_t>(v)] / cfg.v_cho;
    }
    std::vector<double> log_det_sum(static_cast<std::size_t>(K), 0.0);
    for (int r = 0; r < realizations; ++r) {
        Rng rng(seed + static_cast<std::uint64_t>(r));
        const PilotPhase::Draw d = phase.draw(rng);
        const std::vector<UeChannelState> st = phase.states(d, 0, perfect_csi);
        double total = 0.0;
        for (int k = 0; k < K; ++k) {
            const double ld = uplink_log_det(st, k, cfg.noise_var);
            log_det_sum[static_cast<std::size_t>(k)] += ld;
            total += mean_beta * ld;
        }
        out.sum_se[static_cast<std::size_t>(r)] = total;
    }
    for (int k = 0; k < K; ++k) {
        for (int v = 0; v < cfg.v_cho; ++v) {
            out.mean_se[static_cast<std::size_t>(k)][static_cast<std::size_t>(v)] =
                beta_v[static_cast<std::size_t>(v)] * log_det_sum[static_cast<std::size_t>(k)] / realizations;
        }
    }
    return out;
}

} // namespace isac
