#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "isac/clutter.hpp"
#include "isac/estimation.hpp"
#include "isac/numerics.hpp"
#include "isac/scenario.hpp"
#include "isac/sensing_model.hpp"

namespace isac {

enum class Regime { Clairvoyant, FullyUnknown, Hybrid };
enum class ClutterMode { WithClutter, NoiseOnly };

inline std::string to_string(Regime r) {
    switch (r) {
        case Regime::Clairvoyant: return "clairvoyant";
        case Regime::FullyUnknown: return "fully_unknown";
        case Regime::Hybrid: return "hybrid";
    }
    return "?";
}

inline std::string to_string(ClutterMode m) { return m == ClutterMode::WithClutter ? "clutter" : "noise_only"; }

inline Regime parse_regime(const std::string& s) {
    if (s == "clairvoyant") return Regime::Clairvoyant;
    if (s == "fully_unknown" || s == "unknown") return Regime::FullyUnknown;
    if (s == "hybrid") return Regime::Hybrid;
    throw ConfigError("unknown regime '" + s + "'");
}

inline ClutterMode parse_clutter_mode(const std::string& s) {
    if (s == "clutter" || s == "with") return ClutterMode::WithClutter;
    if (s == "noise_only" || s == "noise-only") return ClutterMode::NoiseOnly;
    throw ConfigError("unknown clutter mode '" + s + "'");
}

// -------------------------------------------------------------------------
// Accumulation and CRB extraction
// -------------------------------------------------------------------------

/// Running sum of real symmetric FIMs.
class FimAccumulator {
public:
    FimAccumulator(int dim, Regime regime) : sum_(RMatrix::Zero(dim, dim)), regime_(regime) {}

    void add(const RMatrix& j) {
        if (j.rows() != sum_.rows() || j.cols() != sum_.cols()) {
            throw ContractError("FimAccumulator: dimension mismatch");
        }
        sum_ += 0.5 * (j + j.transpose());
        ++count_;
    }

    const RMatrix& sum() const noexcept { return sum_; }
    int count() const noexcept { return count_; }
    Regime regime() const noexcept { return regime_; }
    RMatrix mean() const { return count_ > 0 ? RMatrix(sum_ / count_) : sum_; }

    bool is_valid() const {
        if ((sum_ - sum_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(sum_.cwiseAbs().maxCoeff(), 1e-300)) {
            return false;
        }
        Eigen::SelfAdjointEigenSolver<RMatrix> es(sum_, Eigen::EigenvaluesOnly);
        const RVector ev = es.eigenvalues();
        return ev.minCoeff() >= -1e-8 * std::max(ev.maxCoeff(), 0.0);
    }

private:
    RMatrix sum_;
    int count_ = 0;
    Regime regime_;
};

struct CrbEntry {
    std::string name;
    double value = 0.0; // physical units
    std::string units;
};

/// Square roots of the inverse-FIM diagonal. Angles are reported in
/// degrees and delays as path lengths in meters; raw holds natural units.
struct CrbReport {
    EtaLayout layout;
    RVector raw;
    std::vector<CrbEntry> entries;
    std::string diagnostic; // names of unidentifiable parameters, empty when the FIM is invertible

    double value(const std::string& name) const { return entries.at(static_cast<std::size_t>(layout.index_of(name))).value; }
    bool all_finite() const {
        for (const CrbEntry& e : entries) {
            if (!std::isfinite(e.value)) return false;
        }
        return true;
    }
};

inline std::pair<double, std::string> to_physical(const EtaLayout& l, int index, double raw) {
    if (index <= l.psi()) return {rad_to_deg(raw), "deg"};
    if (index <= l.tau(l.num_ues)) return {raw * kSpeedOfLight, "m"};
    if (index <= l.omega_y()) return {raw, "m/s"};
    return {raw, "1"};
}

/// Null directions are those with eigenvalue below `null_cutoff` times the
/// largest one after Jacobi scaling; a parameter with a zero diagonal or any
/// weight in the null space is unidentifiable and gets an infinite bound.
inline CrbReport crb_report(const RMatrix& fim, const EtaLayout& layout, double null_cutoff = 1e-13) {
    const int n = layout.dim();
    if (fim.rows() != n || fim.cols() != n) {
        throw ContractError("crb_report: FIM does not match the parameter layout");
    }
    if (!fim.allFinite()) {
        throw SingularityError("crb_report: FIM has non-finite entries");
    }
    constexpr double inf = std::numeric_limits<double>::infinity();
    RVector raw = RVector::Constant(n, inf);

    std::vector<int> live;
    const double diag_max = std::max(fim.diagonal().maxCoeff(), 0.0);
    for (int l = 0; l < n; ++l) {
        if (fim(l, l) > 1e-300 && fim(l, l) > 1e-280 * diag_max) live.push_back(l);
    }
    if (!live.empty()) {
        const int m = static_cast<int>(live.size());
        RMatrix scaled(m, m);
        RVector d(m);
        for (int a = 0; a < m; ++a) d(a) = 1.0 / std::sqrt(fim(live[a], live[a]));
        for (int a = 0; a < m; ++a) {
            for (int b = 0; b < m; ++b) scaled(a, b) = d(a) * d(b) * fim(live[a], live[b]);
        }
        scaled = 0.5 * (scaled + scaled.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<RMatrix> es(scaled);
        const RVector ev = es.eigenvalues();
        const RMatrix& v = es.eigenvectors();
        const double top = ev.maxCoeff();
        for (int a = 0; a < m; ++a) {
            double null_weight = 0.0;
            double inv_diag = 0.0;
            for (int j = 0; j < m; ++j) {
                if (ev(j) <= null_cutoff * top) {
                    null_weight += v(a, j) * v(a, j);
                } else {
                    inv_diag += v(a, j) * v(a, j) / ev(j);
                }
            }
            if (null_weight < 1e-8) raw(live[a]) = d(a) * std::sqrt(inv_diag);
        }
    }

    CrbReport rep;
    rep.layout = layout;
    rep.raw = raw;
    for (int l = 0; l < n; ++l) {
        const auto [value, units] = to_physical(layout, l, raw(l));
        rep.entries.push_back({layout.name(l), value, units});
        if (!std::isfinite(raw(l))) {
            rep.diagnostic += (rep.diagnostic.empty() ? "unidentifiable: " : ", ") + layout.name(l);
        }
    }
    return rep;
}

// -------------------------------------------------------------------------
// Per-bin FIMs (direct route)
// -------------------------------------------------------------------------

inline RMatrix real_gram(const CMatrix& j) { return 2.0 * (j.adjoint() * j).real(); }

/// 2 Re[J^H R^{-1} J] for the eta-Jacobian of one bin.
inline RMatrix fim_clairvoyant_bin(const BinContext& ctx, const TargetParams& params, const SensingModel& model) {
    const CMatrix jw = whitener(ctx.clutter_cov) * model.jacobian_eta(ctx, params);
    RMatrix out = real_gram(jw);
    return 0.5 * (out + out.transpose());
}

/// FIM of one bin over [eta; Re x; Im x].
inline RMatrix augmented_fim_bin(const BinContext& ctx, const TargetParams& params, const SensingModel& model) {
    const CMatrix w = whitener(ctx.clutter_cov);
    const CMatrix je = model.jacobian_eta(ctx, params);
    const CMatrix jz = model.jacobian_symbols(ctx, params);
    CMatrix ja(je.rows(), je.cols() + jz.cols());
    ja << je, jz;
    RMatrix out = real_gram(w * ja);
    return 0.5 * (out + out.transpose());
}

/// Schur complement J_ee - J_ez pinv(J_zz) J_ze of one bin's augmented FIM.
inline RMatrix fim_effective_bin(const BinContext& ctx, const TargetParams& params, const SensingModel& model) {
    const RMatrix a = augmented_fim_bin(ctx, params, model);
    const Index n = model.layout().dim();
    const Index nz = a.rows() - n;
    if (nz == 0) {
        return a;
    }
    const RMatrix jzz_pinv = pinv_symmetric(a.bottomRightCorner(nz, nz), 1e-10);
    RMatrix out = a.topLeftCorner(n, n) - a.topRightCorner(n, nz) * jzz_pinv * a.bottomLeftCorner(nz, n);
    return 0.5 * (out + out.transpose());
}

// -------------------------------------------------------------------------
// Transmit waveform
// -------------------------------------------------------------------------

/// One concrete draw of every transmitted symbol plus the DL precoders.
///
/// Symbols at OFDM symbol i come from their own stream, so any subset of
/// symbols can be regenerated independently. Column v of `symbols(i)` holds
/// the symbols of bin (i, v): K M_ue UE streams on UE subcarriers (pilot
/// columns on pilot bins), one sensing symbol (row 0) on sensing subcarriers.
class WaveformRealization {
public:
    WaveformRealization(const ScenarioConfig& cfg, std::vector<CMatrix> dl_precoders, std::uint64_t symbol_seed)
        : cfg_(cfg),
          schedule_(build_schedule(cfg)),
          pilots_(generate_pilots(cfg.num_ues(), cfg.m_ue, cfg.tau_p)),
          dl_precoders_(std::move(dl_precoders)),
          seed_(symbol_seed),
          ue_amp_(ue_stream_amplitude(cfg)) {
        const std::size_t expect = static_cast<std::size_t>(cfg.num_blocks()) * static_cast<std::size_t>(cfg.n_prb_ue);
        if (cfg.num_ues() > 0 && dl_precoders_.size() != expect) {
            throw ContractError("WaveformRealization: need one DL precoder per (block, UE PRB)");
        }
        const int s = cfg.num_streams();
        for (const CMatrix& f : dl_precoders_) {
            if (f.rows() != cfg.m_bs_tx || f.cols() != s) {
                throw ContractError("WaveformRealization: DL precoder must be M_tx x (K M_ue)");
            }
        }
        for (int k = 0; k < cfg.num_ues(); ++k) {
            ue_precoders_.push_back(CMatrix::Identity(cfg.m_ue, cfg.m_ue));
        }
    }

    const ScenarioConfig& config() const noexcept { return cfg_; }
    const FrameSchedule& schedule() const noexcept { return schedule_; }
    double ue_amplitude() const noexcept { return ue_amp_; }
    int rows() const noexcept { return std::max(cfg_.num_streams(), 1); }

    const CMatrix& dl_precoder(int block, int prb) const {
        return dl_precoders_.at(static_cast<std::size_t>(block) * static_cast<std::size_t>(cfg_.n_prb_ue) +
                                static_cast<std::size_t>(prb));
    }

    CMatrix symbols(int i) const {
        Rng rng(mix_seed(seed_, static_cast<std::uint64_t>(i)));
        CMatrix x = complex_normal(rows(), schedule_.num_subcarriers(), rng);
        for (int v = 0; v < schedule_.num_subcarriers(); ++v) {
            if (schedule_.is_pilot(i, v)) {
                for (int k = 0; k < cfg_.num_ues(); ++k) {
                    x.col(v).segment(k * cfg_.m_ue, cfg_.m_ue) = pilots_[k].col(schedule_.pilot_column(i));
                }
            }
        }
        return x;
    }

    /// Symbols at bin (i, v) are known to BS2 under the hybrid regime.
    bool hybrid_known(int i, int v) const { return schedule_.is_sensing(v) || schedule_.is_pilot(i, v); }

    /// Full bin description for the direct route.
    BinContext context(int i, int v, const CMatrix& symbols_i, const HermitianMatrix& cov, bool known) const {
        BinContext ctx;
        ctx.i = i;
        ctx.v = v;
        ctx.link = schedule_.link(i, v);
        ctx.clutter_cov = cov;
        ctx.known_symbols = known;
        if (ctx.link == Link::Uplink) {
            ctx.ue_precoders = ue_precoders_;
            ctx.power = RVector::Constant(cfg_.num_streams(), ue_amp_);
            ctx.symbols = symbols_i.col(v).head(cfg_.num_streams());
        } else if (schedule_.is_sensing(v)) {
            ctx.precoder = steering(cfg_.m_bs_tx, sensing_beam_angle(cfg_, i)) / std::sqrt(double(cfg_.m_bs_tx));
            ctx.power = power_allocation(cfg_, schedule_, {i, v});
            ctx.symbols = symbols_i.col(v).head(1);
        } else {
            ctx.precoder = dl_precoder(schedule_.block_of(i), schedule_.prb_of(v));
            ctx.power = power_allocation(cfg_, schedule_, {i, v});
            ctx.symbols = symbols_i.col(v).head(cfg_.num_streams());
        }
        return ctx;
    }

private:
    ScenarioConfig cfg_;
    FrameSchedule schedule_;
    PilotBook pilots_;
    std::vector<CMatrix> dl_precoders_;
    std::vector<CMatrix> ue_precoders_;
    std::uint64_t seed_;
    double ue_amp_;
};

/// Draws UL channel estimates on every UE PRB and forms the DL MMSE
/// precoder of each (block, PRB), then the symbol seed.
/// `phase` must have been built from `cfg` with num_blocks() blocks.
inline WaveformRealization draw_waveform(const ScenarioConfig& cfg, const PilotPhase& phase, Rng& rng) {
    std::vector<CMatrix> precoders;
    if (cfg.num_ues() > 0) {
        if (phase.n_blocks() != cfg.num_blocks()) {
            throw ContractError("draw_waveform: pilot phase block count differs from the frame");
        }
        precoders.resize(static_cast<std::size_t>(cfg.num_blocks()) * static_cast<std::size_t>(cfg.n_prb_ue));
        for (int n = 0; n < cfg.n_prb_ue; ++n) {
            const PilotPhase::Draw d = phase.draw(rng);
            for (int b = 0; b < cfg.num_blocks(); ++b) {
                const std::vector<UeChannelState> st = phase.states(d, b);
                precoders[static_cast<std::size_t>(b) * static_cast<std::size_t>(cfg.n_prb_ue) +
                          static_cast<std::size_t>(n)] = mmse_precoder(st, cfg.noise_var);
            }
        }
    }
    const std::uint64_t symbol_seed = rng();
    return WaveformRealization(cfg, std::move(precoders), symbol_seed);
}

inline WaveformRealization draw_waveform(const ScenarioConfig& cfg, Rng& rng) {
    return draw_waveform(cfg, PilotPhase(cfg, cfg.num_blocks()), rng);
}

// -------------------------------------------------------------------------
// Frame assembly, direct route
// -------------------------------------------------------------------------

struct SymbolRange {
    int begin = 0;
    int end = -1; // -1: up to the last symbol
};

/// Sum of per-bin FIMs over a symbol range, building every bin's Jacobian.
/// Reference implementation; cost grows with M_rx x dim(eta)^2 per bin.
inline RMatrix assemble_fim_direct(Regime regime, const WaveformRealization& wf, const TargetParams& params,
                                   const SensingModel& model, const PerBinClutterCov& covs, SymbolRange range = {}) {
    const FrameSchedule& sch = wf.schedule();
    const int end = range.end < 0 ? sch.num_symbols() : range.end;
    RMatrix sum = RMatrix::Zero(model.layout().dim(), model.layout().dim());
    for (int i = range.begin; i < end; ++i) {
        const CMatrix x = wf.symbols(i);
        for (int v = 0; v < sch.num_subcarriers(); ++v) {
            const Link link = sch.link(i, v);
            if (link == Link::Uplink && model.num_ues() == 0) continue;
            if (link == Link::Downlink && sch.is_ue_subcarrier(v) && model.num_ues() == 0) continue;
            const bool known = regime == Regime::Clairvoyant || (regime == Regime::Hybrid && wf.hybrid_known(i, v));
            const BinContext ctx = wf.context(i, v, x, covs.for_link(link), known);
            sum += known ? fim_clairvoyant_bin(ctx, params, model) : fim_effective_bin(ctx, params, model);
        }
    }
    return 0.5 * (sum + sum.transpose());
}

// -------------------------------------------------------------------------
// Frame assembly, moment route
// -------------------------------------------------------------------------
//
// Each bin's mean is a_rx(psi) c and its Jacobian a_rx g^T + a_rx' c e_psi^T.
// With u = W a_rx, u' = W a_rx', the whitened Gram is
//   a conj(g) g^T + b conj(g) c e_psi^T + conj(b) e_psi conj(c) g^T + d |c|^2 e_psi e_psi^T
// (a = |u|^2, b = u^H u', d = |u'|^2), so the frame FIM only needs the sums
// of conj(g) g^T, conj(g) c and |c|^2 per link. The symbol columns all lie
// along u, so marginalizing the symbols of a bin leaves
// 2 |c|^2 (d - |b|^2 / a) on the (psi, psi) entry alone.

/// Receive-side scalars of one link under one covariance.
struct ReceiveGeometry {
    double a = 0.0;
    cd b{0.0, 0.0};
    double d = 0.0;

    double residual() const { return std::max(d - std::norm(b) / a, 0.0); }
};

inline ReceiveGeometry receive_geometry(const HermitianMatrix& cov, double psi, int m_rx) {
    const CMatrix w = whitener(cov);
    const CVector u = w * steering(m_rx, psi);
    const CVector du = w * steering_derivative(m_rx, psi);
    return {u.squaredNorm(), u.dot(du), du.squaredNorm()};
}

/// Sums of conj(g) g^T, conj(g) c and |c|^2 over a set of bins.
struct BinMoments {
    CMatrix gg;
    CVector gc;
    double cc = 0.0;

    explicit BinMoments(int dim = 0) : gg(CMatrix::Zero(dim, dim)), gc(CVector::Zero(dim)) {}

    BinMoments& operator+=(const BinMoments& o) {
        gg += o.gg;
        gc += o.gc;
        cc += o.cc;
        return *this;
    }

    /// Whitened Gram sum 2 Re[...] with every symbol known.
    RMatrix known_fim(const ReceiveGeometry& rx, int psi_index) const {
        CMatrix j = rx.a * gg;
        j.col(psi_index) += rx.b * gc;
        j.row(psi_index) += std::conj(rx.b) * gc.adjoint();
        j(psi_index, psi_index) += rx.d * cc;
        RMatrix out = 2.0 * j.real();
        return 0.5 * (out + out.transpose());
    }

    /// Same bins with their symbols marginalized out.
    RMatrix hidden_fim(const ReceiveGeometry& rx, int psi_index) const {
        RMatrix out = RMatrix::Zero(gg.rows(), gg.cols());
        out(psi_index, psi_index) = 2.0 * cc * rx.residual();
        return out;
    }
};

/// Moments of one frame, split by link and by whether the hybrid regime
/// treats the symbols as known.
struct FrameMoments {
    // [link][hybrid_known]
    std::array<std::array<BinMoments, 2>, 2> m;

    explicit FrameMoments(int dim = 0) {
        for (auto& row : m) row = {BinMoments(dim), BinMoments(dim)};
    }

    static std::size_t link_index(Link l) { return l == Link::Uplink ? 0 : 1; }
    BinMoments& at(Link l, bool known) { return m[link_index(l)][known ? 1 : 0]; }
    const BinMoments& at(Link l, bool known) const { return m[link_index(l)][known ? 1 : 0]; }

    FrameMoments& operator+=(const FrameMoments& o) {
        for (std::size_t a = 0; a < 2; ++a) {
            for (std::size_t b = 0; b < 2; ++b) m[a][b] += o.m[a][b];
        }
        return *this;
    }

    RMatrix fim(Regime regime, const ReceiveGeometry& ul, const ReceiveGeometry& dl, int psi_index) const {
        RMatrix out = RMatrix::Zero(m[0][0].gg.rows(), m[0][0].gg.cols());
        for (Link l : {Link::Uplink, Link::Downlink}) {
            const ReceiveGeometry& rx = l == Link::Uplink ? ul : dl;
            for (bool known : {false, true}) {
                const BinMoments& bm = at(l, known);
                const bool treat_known =
                    regime == Regime::Clairvoyant || (regime == Regime::Hybrid && known);
                out += treat_known ? bm.known_fim(rx, psi_index) : bm.hidden_fim(rx, psi_index);
            }
        }
        return out;
    }
};

/// Accumulates the frame moments of one waveform over a symbol range.
inline FrameMoments accumulate_moments(const WaveformRealization& wf, const TargetParams& params,
                                       const SensingModel& model, SymbolRange range = {}) {
    const ScenarioConfig& cfg = wf.config();
    const FrameSchedule& sch = wf.schedule();
    const EtaLayout& lay = model.layout();
    const int dim = lay.dim();
    const int K = cfg.num_ues();
    const int m_ue = cfg.m_ue;
    const int end = range.end < 0 ? sch.num_symbols() : range.end;
    FrameMoments fm(dim);

    // sparse supports of g
    std::vector<int> dl_support = {lay.theta(0), lay.tau(0), lay.omega_x(), lay.omega_y(), lay.re_beta(0),
                                   lay.im_beta(0)};
    std::vector<int> ul_support = {lay.omega_x(), lay.omega_y()};
    for (int k = 1; k <= K; ++k) {
        for (int idx : {lay.theta(k), lay.tau(k), lay.re_beta(k), lay.im_beta(k)}) ul_support.push_back(idx);
    }
    std::sort(dl_support.begin(), dl_support.end());
    std::sort(ul_support.begin(), ul_support.end());

    // transmit-side projections that do not depend on the symbols
    const CVector a_bs = steering(cfg.m_bs_tx, params.theta(0));
    const CVector da_bs = steering_derivative(cfg.m_bs_tx, params.theta(0));
    std::vector<CVector> a_ue, da_ue;
    for (int k = 0; k < K; ++k) {
        a_ue.push_back(steering(m_ue, params.theta(k + 1)));
        da_ue.push_back(steering_derivative(m_ue, params.theta(k + 1)));
    }
    std::vector<CVector> proj, dproj; // rows a^H F per (block, PRB), as column vectors
    if (K > 0) {
        for (int b = 0; b < sch.num_blocks(); ++b) {
            for (int n = 0; n < cfg.n_prb_ue; ++n) {
                const CMatrix& f = wf.dl_precoder(b, n);
                proj.push_back(f.adjoint() * a_bs);
                dproj.push_back(f.adjoint() * da_bs);
            }
        }
    }
    const double rho_s = cfg.num_sensing_subcarriers() > 0
                             ? std::sqrt((1.0 - cfg.gamma) * cfg.p_bs / cfg.num_sensing_subcarriers())
                             : 0.0;
    const double rho_ue =
        K > 0 && cfg.num_ue_subcarriers() > 0
            ? std::sqrt(cfg.gamma * cfg.p_bs / (static_cast<double>(cfg.num_ue_subcarriers()) * cfg.num_streams()))
            : 0.0;
    const double amp = wf.ue_amplitude();

    CVector g = CVector::Zero(dim);
    const auto add = [&](BinMoments& bm, const std::vector<int>& support, cd c) {
        for (std::size_t p = 0; p < support.size(); ++p) {
            const int r = support[p];
            const cd gr = std::conj(g(r));
            bm.gc(r) += gr * c;
            for (std::size_t q = p; q < support.size(); ++q) bm.gg(r, support[q]) += gr * g(support[q]);
        }
        bm.cc += std::norm(c);
        for (int r : support) g(r) = 0.0;
    };

    for (int i = range.begin; i < end; ++i) {
        const CMatrix x = wf.symbols(i);
        const CVector beam = steering(cfg.m_bs_tx, sensing_beam_angle(cfg, i)) / std::sqrt(double(cfg.m_bs_tx));
        const cd s_beam = a_bs.dot(beam) * rho_s;
        const cd ds_beam = da_bs.dot(beam) * rho_s;
        const int block = sch.block_of(i);
        for (int v = 0; v < sch.num_subcarriers(); ++v) {
            const Link link = sch.link(i, v);
            const bool known = wf.hybrid_known(i, v);
            if (link == Link::Downlink) {
                cd s, ds;
                if (sch.is_sensing(v)) {
                    s = s_beam * x(0, v);
                    ds = ds_beam * x(0, v);
                } else {
                    if (K == 0) continue;
                    const std::size_t pi = static_cast<std::size_t>(block) * static_cast<std::size_t>(cfg.n_prb_ue) +
                                           static_cast<std::size_t>(sch.prb_of(v));
                    const auto xs = x.col(v).head(cfg.num_streams());
                    s = rho_ue * proj[pi].dot(xs);
                    ds = rho_ue * dproj[pi].dot(xs);
                }
                const cd c = model.accumulate_path(params, 0, i, v, s, ds, g);
                add(fm.at(Link::Downlink, known), dl_support, c);
            } else {
                if (K == 0) continue;
                cd c{0.0, 0.0};
                for (int k = 0; k < K; ++k) {
                    const auto xk = x.col(v).segment(k * m_ue, m_ue);
                    const cd s = amp * a_ue[static_cast<std::size_t>(k)].dot(xk);
                    const cd ds = amp * da_ue[static_cast<std::size_t>(k)].dot(xk);
                    c += model.accumulate_path(params, k + 1, i, v, s, ds, g);
                }
                add(fm.at(Link::Uplink, known), ul_support, c);
            }
        }
    }
    // mirror the upper triangles
    for (auto& row : fm.m) {
        for (BinMoments& bm : row) {
            CMatrix full = bm.gg.triangularView<Eigen::Upper>();
            full.triangularView<Eigen::StrictlyLower>() = bm.gg.adjoint().triangularView<Eigen::StrictlyLower>();
            bm.gg = full;
        }
    }
    return fm;
}

/// Frame FIM of one waveform under one regime and covariance set.
inline RMatrix assemble_fim(Regime regime, const WaveformRealization& wf, const TargetParams& params,
                            const SensingModel& model, const PerBinClutterCov& covs, SymbolRange range = {}) {
    const FrameMoments fm = accumulate_moments(wf, params, model, range);
    const ReceiveGeometry ul = receive_geometry(covs.r_ul, params.psi, model.m_rx());
    const ReceiveGeometry dl = receive_geometry(covs.r_dl, params.psi, model.m_rx());
    return fm.fim(regime, ul, dl, model.layout().psi());
}

// -------------------------------------------------------------------------
// Monte-Carlo averaging
// -------------------------------------------------------------------------

inline constexpr std::array<Regime, 3> kAllRegimes = {Regime::Clairvoyant, Regime::Hybrid, Regime::FullyUnknown};
inline constexpr std::array<ClutterMode, 2> kAllClutterModes = {ClutterMode::WithClutter, ClutterMode::NoiseOnly};

/// Averaged FIMs of every (regime, clutter mode) pair from one set of
/// waveform realizations.
struct FimSet {
    std::array<std::array<RMatrix, 2>, 3> fim;
    EtaLayout layout;
    int n_real = 0;

    static std::size_t ri(Regime r) { return r == Regime::Clairvoyant ? 0 : r == Regime::Hybrid ? 1 : 2; }
    static std::size_t mi(ClutterMode m) { return m == ClutterMode::WithClutter ? 0 : 1; }
    const RMatrix& get(Regime r, ClutterMode m) const { return fim[ri(r)][mi(m)]; }
    RMatrix& get(Regime r, ClutterMode m) { return fim[ri(r)][mi(m)]; }
    CrbReport crb(Regime r, ClutterMode m) const { return crb_report(get(r, m), layout); }
};

inline int resolve_threads(int threads) {
    if (threads > 0) return threads;
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

/// Realization r draws its channel estimates and symbols from seed + r;
/// per-realization FIMs are summed in realization order, so the result
/// does not depend on the thread count.
inline FimSet monte_carlo_fims(const ScenarioConfig& cfg, int n_real, std::uint64_t seed, int threads = 0) {
    if (n_real < 1) {
        throw DomainError("monte_carlo_fims: need at least one realization");
    }
    cfg.validate();
    const TargetParams params = derive_geometry(cfg);
    const SensingModel model(cfg);
    const int psi = model.layout().psi();
    const PerBinClutterCov with = scenario_clutter_cov(cfg);
    const PerBinClutterCov without = noise_only_cov(cfg.m_bs_rx, cfg.noise_var);
    const std::array<ReceiveGeometry, 2> ul = {receive_geometry(with.r_ul, params.psi, cfg.m_bs_rx),
                                               receive_geometry(without.r_ul, params.psi, cfg.m_bs_rx)};
    const std::array<ReceiveGeometry, 2> dl = {receive_geometry(with.r_dl, params.psi, cfg.m_bs_rx),
                                               receive_geometry(without.r_dl, params.psi, cfg.m_bs_rx)};

    const PilotPhase phase(cfg, cfg.num_blocks());
    std::vector<FrameMoments> per_real(static_cast<std::size_t>(n_real));
    const int n_threads = std::min(resolve_threads(threads), n_real);
    const auto work = [&](int t) {
        for (int r = t; r < n_real; r += n_threads) {
            Rng rng(seed + static_cast<std::uint64_t>(r));
            const WaveformRealization wf = draw_waveform(cfg, phase, rng);
            per_real[static_cast<std::size_t>(r)] = accumulate_moments(wf, params, model);
        }
    };
    if (n_threads == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(work, t);
    }

    FrameMoments total(model.layout().dim());
    for (const FrameMoments& fm : per_real) total += fm;

    FimSet out;
    out.layout = model.layout();
    out.n_real = n_real;
    for (Regime r : kAllRegimes) {
        for (ClutterMode m : kAllClutterModes) {
            RMatrix j = total.fim(r, ul[FimSet::mi(m)], dl[FimSet::mi(m)], psi) / n_real;
            if (!j.allFinite()) {
                throw SingularityError("monte_carlo_fims: non-finite FIM");
            }
            out.get(r, m) = j;
        }
    }
    return out;
}

inline CrbReport monte_carlo_crb(Regime regime, ClutterMode mode, const ScenarioConfig& cfg, int n_real,
                                 std::uint64_t seed, int threads = 0) {
    return monte_carlo_fims(cfg, n_real, seed, threads).crb(regime, mode);
}

} // namespace isac
