#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "isac/arrays.hpp"
#include "isac/numerics.hpp"
#include "isac/scenario.hpp"

namespace isac {

// -------------------------------------------------------------------------
// Target parameter vector
// -------------------------------------------------------------------------

/// Deterministic target unknowns. Path 0 is BS1 -> target -> BS2, path
/// k + 1 is UE k -> target -> BS2.
///
/// Flattened order: theta (K+1), psi, tau (K+1), omega (2), Re beta (K+1),
/// Im beta (K+1); 4(K+1)+3 entries.
struct TargetParams {
    RVector theta;
    double psi = 0.0;
    RVector tau;
    Vec2 omega = Vec2::Zero();
    CVector beta;

    int num_ues() const noexcept { return static_cast<int>(theta.size()) - 1; }
    int dim() const noexcept { return 4 * (num_ues() + 1) + 3; }

    RVector flatten() const {
        const int n = num_ues() + 1;
        RVector x(dim());
        x.segment(0, n) = theta;
        x(n) = psi;
        x.segment(n + 1, n) = tau;
        x.segment(2 * n + 1, 2) = omega;
        x.segment(2 * n + 3, n) = beta.real();
        x.segment(3 * n + 3, n) = beta.imag();
        return x;
    }

    static TargetParams unflatten(const RVector& x, int num_ues) {
        const int n = num_ues + 1;
        if (x.size() != 4 * n + 3) {
            throw ContractError("TargetParams::unflatten: wrong vector length");
        }
        TargetParams t;
        t.theta = x.segment(0, n);
        t.psi = x(n);
        t.tau = x.segment(n + 1, n);
        t.omega = x.segment(2 * n + 1, 2);
        t.beta.resize(n);
        for (int p = 0; p < n; ++p) {
            t.beta(p) = cd(x(2 * n + 3 + p), x(3 * n + 3 + p));
        }
        return t;
    }
};

/// Positions of each parameter inside the flattened vector.
struct EtaLayout {
    int num_ues = 0;

    int paths() const noexcept { return num_ues + 1; }
    int dim() const noexcept { return 4 * paths() + 3; }
    int theta(int path) const noexcept { return path; }
    int psi() const noexcept { return paths(); }
    int tau(int path) const noexcept { return paths() + 1 + path; }
    int omega_x() const noexcept { return 2 * paths() + 1; }
    int omega_y() const noexcept { return 2 * paths() + 2; }
    int re_beta(int path) const noexcept { return 2 * paths() + 3 + path; }
    int im_beta(int path) const noexcept { return 3 * paths() + 3 + path; }

    std::string name(int index) const {
        const int n = paths();
        const auto path_name = [](int p) { return p == 0 ? std::string("bs") : "ue" + std::to_string(p); };
        if (index < n) return "theta_" + path_name(index);
        if (index == n) return "psi";
        if (index < 2 * n + 1) return "tau_" + path_name(index - n - 1);
        if (index == 2 * n + 1) return "omega_x";
        if (index == 2 * n + 2) return "omega_y";
        if (index < 3 * n + 3) return "re_beta_" + path_name(index - 2 * n - 3);
        return "im_beta_" + path_name(index - 3 * n - 3);
    }

    int index_of(const std::string& name) const {
        for (int l = 0; l < dim(); ++l) {
            if (this->name(l) == name) return l;
        }
        throw ConfigError("unknown parameter name '" + name + "'");
    }
};

// -------------------------------------------------------------------------
// Geometry
// -------------------------------------------------------------------------

/// Linear Doppler model per path: f_D = grad . omega + offset (Hz).
struct SensingGeometry {
    std::vector<Vec2> doppler_grad;
    std::vector<double> doppler_offset;
    std::vector<double> range_tx; // transmitter -> target
    double range_rx = 0.0;        // target -> BS2
};

inline SensingGeometry sensing_geometry(const ScenarioConfig& cfg) {
    const Vec2& t = cfg.target_pos;
    const Vec2& q = cfg.bs2_pos;
    const double lambda = cfg.wavelength();
    const auto check = [&](const Vec2& other, const char* what) {
        if ((t - other).norm() < 1e-9) {
            throw GeometryError(std::string("target coincides with ") + what);
        }
    };
    check(cfg.bs1_pos, "BS1");
    check(q, "BS2");
    for (const Vec2& e : cfg.ue_pos) check(e, "a UE");

    SensingGeometry g;
    const Vec2 to_bs2 = (q - t).normalized();
    g.range_rx = (q - t).norm();
    const Vec2 from_bs1 = t - cfg.bs1_pos;
    g.doppler_grad.push_back((from_bs1.normalized() - to_bs2) / lambda);
    g.doppler_offset.push_back(0.0);
    g.range_tx.push_back(from_bs1.norm());
    for (int k = 0; k < cfg.num_ues(); ++k) {
        const Vec2 from_ue = t - cfg.ue_pos[static_cast<std::size_t>(k)];
        const Vec2 u = from_ue.normalized();
        g.doppler_grad.push_back((u - to_bs2) / lambda);
        g.doppler_offset.push_back(-cfg.ue_vel[static_cast<std::size_t>(k)].dot(u) / lambda);
        g.range_tx.push_back(from_ue.norm());
    }
    return g;
}

/// Mean power of a target gain from the bistatic radar equation,
/// lambda^2 rcs / ((4 pi)^3 r_tx^2 r_rx^2).
inline double target_gain_power(const ScenarioConfig& cfg, double range_tx, double range_rx) {
    const double four_pi_cubed = std::pow(4.0 * kPi, 3);
    return kSpeedOfLight * kSpeedOfLight * cfg.rcs /
           (four_pi_cubed * cfg.f_c * cfg.f_c * range_tx * range_tx * range_rx * range_rx);
}

/// Target parameters implied by the scenario geometry. The gains are drawn
/// from the gain seed, independently of the Monte-Carlo seed.
inline TargetParams derive_geometry(const ScenarioConfig& cfg) {
    const SensingGeometry geom = sensing_geometry(cfg);
    const Vec2& t = cfg.target_pos;
    const Vec2& q = cfg.bs2_pos;
    const int n = cfg.num_ues() + 1;

    TargetParams p;
    p.theta.resize(n);
    p.tau.resize(n);
    p.beta.resize(n);
    const Vec2 from_bs1 = t - cfg.bs1_pos;
    p.theta(0) = std::atan2(from_bs1.y(), from_bs1.x());
    p.psi = std::atan2(q.y() - t.y(), q.x() - t.x());
    p.tau(0) = (geom.range_tx[0] + geom.range_rx) / kSpeedOfLight;
    for (int k = 0; k < cfg.num_ues(); ++k) {
        const Vec2 d = t - cfg.ue_pos[static_cast<std::size_t>(k)];
        p.theta(k + 1) = std::atan2(d.y(), d.x());
        p.tau(k + 1) = (geom.range_tx[static_cast<std::size_t>(k) + 1] + geom.range_rx) / kSpeedOfLight;
    }
    p.omega = cfg.target_vel;

    Rng rng(cfg.gain_seed);
    std::uniform_real_distribution<double> phase(-kPi, kPi);
    for (int path = 0; path < n; ++path) {
        const double power = target_gain_power(cfg, geom.range_tx[static_cast<std::size_t>(path)], geom.range_rx);
        if (cfg.gain_model == GainModel::Deterministic) {
            p.beta(path) = std::polar(std::sqrt(power), phase(rng));
        } else {
            p.beta(path) = std::sqrt(power) * complex_normal(rng);
        }
    }
    return p;
}

// -------------------------------------------------------------------------
// Per-bin context
// -------------------------------------------------------------------------

/// Everything BS2 needs to describe the noise-free echo of one bin.
///
/// Downlink: `precoder` is F (M_tx x S), `power` the S amplitudes, `symbols`
/// the S symbols. Uplink: `ue_precoders` holds W_k, `power` and `symbols`
/// are stacked per UE (K * M_ue entries).
struct BinContext {
    int i = 0;
    int v = 0;
    Link link = Link::Downlink;
    CMatrix precoder;
    std::vector<CMatrix> ue_precoders;
    RVector power;
    CVector symbols;
    HermitianMatrix clutter_cov;
    bool known_symbols = true;
};

/// Analytic bin response: the mean is a_rx(psi) * c and the eta-Jacobian is
/// a_rx(psi) g^T + a_rx'(psi) c e_psi^T.
struct BinResponse {
    cd c{0.0, 0.0};
    CVector g;
};

// -------------------------------------------------------------------------
// Sensing model
// -------------------------------------------------------------------------

class SensingModel {
public:
    explicit SensingModel(const ScenarioConfig& cfg)
        : geom_(sensing_geometry(cfg)),
          layout_{cfg.num_ues()},
          m_tx_(cfg.m_bs_tx),
          m_rx_(cfg.m_bs_rx),
          m_ue_(cfg.m_ue),
          symbol_duration_(cfg.symbol_duration()),
          delta_f_(cfg.delta_f) {}

    const SensingGeometry& geometry() const noexcept { return geom_; }
    const EtaLayout& layout() const noexcept { return layout_; }
    int num_ues() const noexcept { return layout_.num_ues; }
    int m_tx() const noexcept { return m_tx_; }
    int m_rx() const noexcept { return m_rx_; }
    int m_ue() const noexcept { return m_ue_; }
    double symbol_duration() const noexcept { return symbol_duration_; }
    double delta_f() const noexcept { return delta_f_; }

    double doppler(const TargetParams& p, int path) const {
        const auto pu = static_cast<std::size_t>(path);
        return geom_.doppler_grad[pu].dot(p.omega) + geom_.doppler_offset[pu];
    }

    /// exp(-j 2 pi f_D T i) exp(j 2 pi delta_f v tau) for one path.
    cd path_phase(const TargetParams& p, int path, int i, int v) const {
        const double ph = -2.0 * kPi * doppler(p, path) * symbol_duration_ * i +
                          2.0 * kPi * delta_f_ * v * p.tau(path);
        return std::polar(1.0, ph);
    }

    CMatrix channel_g_bs(const TargetParams& p, int i, int v) const {
        const cd scale = p.beta(0) * path_phase(p, 0, i, v);
        return scale * steering(m_rx_, p.psi) * steering(m_tx_, p.theta(0)).adjoint();
    }

    CMatrix channel_g_ue(const TargetParams& p, int k, int i, int v) const {
        const cd scale = p.beta(k + 1) * path_phase(p, k + 1, i, v);
        return scale * steering(m_rx_, p.psi) * steering(m_ue_, p.theta(k + 1)).adjoint();
    }

    void check_context(const BinContext& ctx) const {
        const auto bad = [](const char* what) { throw ContractError(std::string("BinContext: ") + what); };
        if (ctx.power.size() != ctx.symbols.size()) bad("power and symbols differ in length");
        if (ctx.link == Link::Downlink) {
            if (ctx.precoder.rows() != m_tx_) bad("precoder rows must equal M_tx");
            if (ctx.precoder.cols() != ctx.symbols.size()) bad("precoder columns must equal stream count");
        } else {
            if (static_cast<int>(ctx.ue_precoders.size()) != num_ues()) bad("need one UE precoder per UE");
            for (const CMatrix& w : ctx.ue_precoders) {
                if (w.rows() != m_ue_ || w.cols() != m_ue_) bad("UE precoders must be M_ue x M_ue");
            }
            if (ctx.symbols.size() != num_ues() * m_ue_) bad("UL symbols must have K * M_ue entries");
        }
    }

    /// Noise-free, clutter-free echo at BS2 built from the channel matrices.
    CVector mean_vector(const BinContext& ctx, const TargetParams& p) const {
        check_context(ctx);
        if (ctx.link == Link::Downlink) {
            return channel_g_bs(p, ctx.i, ctx.v) * (ctx.precoder * (ctx.power.cast<cd>().asDiagonal() * ctx.symbols));
        }
        CVector mu = CVector::Zero(m_rx_);
        for (int k = 0; k < num_ues(); ++k) {
            const CVector px = ctx.power.segment(k * m_ue_, m_ue_).cast<cd>().cwiseProduct(
                ctx.symbols.segment(k * m_ue_, m_ue_));
            mu += channel_g_ue(p, k, ctx.i, ctx.v) * (ctx.ue_precoders[static_cast<std::size_t>(k)] * px);
        }
        return mu;
    }

    /// Adds path `path`'s contribution to the response. `s` = a^H Q x and
    /// `ds` = (da/dtheta)^H Q x for the path's transmit steering a.
    cd accumulate_path(const TargetParams& p, int path, int i, int v, cd s, cd ds, CVector& g) const {
        const cd phase = path_phase(p, path, i, v);
        const cd unit = phase * s;          // d c / d beta
        const cd c = p.beta(path) * unit;
        g(layout_.theta(path)) += p.beta(path) * phase * ds;
        g(layout_.tau(path)) += c * cd(0.0, 2.0 * kPi * delta_f_ * v);
        const cd dphase_dfd = cd(0.0, -2.0 * kPi * symbol_duration_ * i);
        const Vec2& grad = geom_.doppler_grad[static_cast<std::size_t>(path)];
        g(layout_.omega_x()) += c * dphase_dfd * grad.x();
        g(layout_.omega_y()) += c * dphase_dfd * grad.y();
        g(layout_.re_beta(path)) += unit;
        g(layout_.im_beta(path)) += kJ * unit;
        return c;
    }

    BinResponse response(const BinContext& ctx, const TargetParams& p) const {
        check_context(ctx);
        BinResponse r;
        r.g = CVector::Zero(layout_.dim());
        if (ctx.link == Link::Downlink) {
            const CVector fx = ctx.precoder * (ctx.power.cast<cd>().asDiagonal() * ctx.symbols);
            const cd s = steering(m_tx_, p.theta(0)).dot(fx);
            const cd ds = steering_derivative(m_tx_, p.theta(0)).dot(fx);
            r.c = accumulate_path(p, 0, ctx.i, ctx.v, s, ds, r.g);
            return r;
        }
        for (int k = 0; k < num_ues(); ++k) {
            const CVector px = ctx.power.segment(k * m_ue_, m_ue_).cast<cd>().cwiseProduct(
                ctx.symbols.segment(k * m_ue_, m_ue_));
            const CVector wx = ctx.ue_precoders[static_cast<std::size_t>(k)] * px;
            const cd s = steering(m_ue_, p.theta(k + 1)).dot(wx);
            const cd ds = steering_derivative(m_ue_, p.theta(k + 1)).dot(wx);
            r.c += accumulate_path(p, k + 1, ctx.i, ctx.v, s, ds, r.g);
        }
        return r;
    }

    /// d mu / d eta^T, M_rx x dim(eta).
    CMatrix jacobian_eta(const BinContext& ctx, const TargetParams& p) const {
        const BinResponse r = response(ctx, p);
        CMatrix jac = steering(m_rx_, p.psi) * r.g.transpose();
        jac.col(layout_.psi()) += steering_derivative(m_rx_, p.psi) * r.c;
        return jac;
    }

    /// d mu / d [Re x; Im x]^T, M_rx x 2 dim(x). Independent of x.
    CMatrix jacobian_symbols(const BinContext& ctx, const TargetParams& p) const {
        check_context(ctx);
        CMatrix b;
        if (ctx.link == Link::Downlink) {
            b = channel_g_bs(p, ctx.i, ctx.v) * ctx.precoder * ctx.power.cast<cd>().asDiagonal();
        } else {
            b.resize(m_rx_, num_ues() * m_ue_);
            for (int k = 0; k < num_ues(); ++k) {
                b.middleCols(k * m_ue_, m_ue_) =
                    channel_g_ue(p, k, ctx.i, ctx.v) * ctx.ue_precoders[static_cast<std::size_t>(k)] *
                    ctx.power.segment(k * m_ue_, m_ue_).cast<cd>().asDiagonal();
            }
        }
        CMatrix out(m_rx_, 2 * b.cols());
        out.leftCols(b.cols()) = b;
        out.rightCols(b.cols()) = kJ * b;
        return out;
    }

private:
    SensingGeometry geom_;
    EtaLayout layout_;
    int m_tx_;
    int m_rx_;
    int m_ue_;
    double symbol_duration_;
    double delta_f_;
};

} // namespace isac
