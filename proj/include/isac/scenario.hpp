#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "isac/errors.hpp"
#include "isac/numerics.hpp"

namespace isac {

using Vec2 = Eigen::Vector2d;

inline constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }
inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

// -------------------------------------------------------------------------
// Configuration
// -------------------------------------------------------------------------

/// Clutter statistics. Scalars are linear here; the config file carries dB.
struct ClutterConfig {
    std::vector<Vec2> patch_positions;
    double texture = 1e-12;        // delta_cl^2
    double kappa = 1e-2;           // kappa_cl^2, UL/DL illumination ratio
    double angular_spread = 0.0;   // point scatterers
    double temporal_corr = 0.9;    // only used when drawing clutter samples
    double frequency_corr = 0.9;
};

enum class PathlossModel { UmiLos, UmiNlos };

/// How the target gains beta are fixed for a run. Deterministic uses the
/// radar-equation power as |beta|^2 with a seeded random phase; Random draws
/// beta ~ CN(0, power) from the same seeded stream.
enum class GainModel { Deterministic, Random };

struct ScenarioConfig {
    // geometry (meters, m/s)
    Vec2 bs1_pos{0.0, 0.0};
    Vec2 bs2_pos{10.0, 30.0};
    std::vector<Vec2> ue_pos;
    std::vector<Vec2> ue_vel;
    std::vector<std::vector<Vec2>> ue_clusters; // BS-side scatterer centres per UE
    double ue_angular_spread = deg_to_rad(10.0);
    Vec2 target_pos{157.6848, 157.6848};
    Vec2 target_vel{-30.0, 0.0};

    // arrays
    int m_bs_tx = 32;
    int m_bs_rx = 8;
    int m_ue = 2;

    // OFDM numerology
    double f_c = 2e9;
    double delta_f = 20e3;
    double t_cp = 2e-6;
    int n_prb = 30;
    int v_cho = 20;
    int n_prb_ue = 15;

    // frame schedule
    int tau_c = 60;
    int tau_p = 10;
    int tau_dl = 30;
    int nu_p = 1;
    int p = 2;           // past pilot blocks used by the channel estimator
    int n_symbols = 300; // I

    // powers (watts) and sensing
    double gamma = 0.5;
    double p_bs = 1.0;
    double p_ue = 0.01;
    double noise_var = 1e-16;
    double rcs = db_to_linear(1.0);
    double sweep_width = deg_to_rad(110.0);

    ClutterConfig clutter;
    PathlossModel pathloss_model = PathlossModel::UmiLos;
    GainModel gain_model = GainModel::Deterministic;
    std::uint64_t gain_seed = 1;
    std::uint64_t rng_seed = 1;

    int num_ues() const noexcept { return static_cast<int>(ue_pos.size()); }
    int num_streams() const noexcept { return num_ues() * m_ue; }
    int num_subcarriers() const noexcept { return n_prb * v_cho; }
    int num_ue_subcarriers() const noexcept { return n_prb_ue * v_cho; }
    int num_sensing_subcarriers() const noexcept { return num_subcarriers() - num_ue_subcarriers(); }
    int num_blocks() const noexcept { return tau_c > 0 ? n_symbols / tau_c : 0; }
    double symbol_duration() const noexcept { return 1.0 / delta_f + t_cp; }
    double wavelength() const noexcept { return kSpeedOfLight / f_c; }
    /// Parameter-vector length 4(K+1)+3.
    int eta_dim() const noexcept { return 4 * (num_ues() + 1) + 3; }

    void validate() const {
        const auto fail = [](const std::string& what) { throw ConfigError("scenario: " + what); };
        if (m_bs_tx < 1 || m_bs_rx < 1 || m_ue < 1) fail("antenna counts must be positive");
        if (n_prb < 1 || v_cho < 1) fail("n_prb and v_cho must be positive");
        if (n_prb_ue < 0 || n_prb_ue > n_prb) fail("n_prb_ue must lie in [0, n_prb]");
        if (tau_c < 1 || n_symbols < 1) fail("tau_c and n_symbols must be positive");
        if (tau_p < 0 || tau_dl < 0) fail("tau_p and tau_dl must be non-negative");
        if (tau_p + tau_dl > tau_c) fail("tau_p + tau_dl exceeds tau_c");
        if (nu_p < 0 || nu_p > v_cho) fail("nu_p must lie in [0, v_cho]");
        if (n_symbols % tau_c != 0) fail("n_symbols must be a multiple of tau_c");
        if (p < 0) fail("p must be non-negative");
        if (tau_p < num_ues() * m_ue) fail("tau_p must be at least K * m_ue for orthogonal pilots");
        if (num_ues() > 0 && (tau_p < 1 || nu_p < 1)) fail("UEs need at least one pilot symbol and subcarrier");
        if (!(symbol_duration() > 0.0) || !(delta_f > 0.0) || t_cp < 0.0) fail("invalid symbol timing");
        if (!(f_c > 0.0)) fail("carrier frequency must be positive");
        if (gamma < 0.0 || gamma > 1.0) fail("gamma must lie in [0, 1]");
        if (p_bs < 0.0 || p_ue < 0.0) fail("powers must be non-negative");
        if (!(noise_var > 0.0)) fail("noise variance must be positive");
        if (!(rcs >= 0.0)) fail("rcs must be non-negative");
        if (!(sweep_width >= 0.0)) fail("sweep width must be non-negative");
        if (ue_vel.size() != ue_pos.size()) fail("ue_vel must have one entry per UE");
        if (!ue_clusters.empty() && ue_clusters.size() != ue_pos.size()) fail("ue_clusters must have one list per UE");
        if (!(ue_angular_spread >= 0.0)) fail("ue angular spread must be non-negative");
        if (clutter.kappa < 0.0 || clutter.kappa > 1.0) fail("clutter kappa must lie in [0, 1]");
        if (clutter.texture < 0.0) fail("clutter texture must be non-negative");
        if (clutter.temporal_corr < 0.0 || clutter.temporal_corr >= 1.0 ||
            clutter.frequency_corr < 0.0 || clutter.frequency_corr >= 1.0)
            fail("clutter correlation coefficients must lie in [0, 1)");
        if (!(clutter.angular_spread >= 0.0)) fail("clutter angular spread must be non-negative");
    }
};

/// Layout used in the numerical study: five UEs east of BS1, two groups of
/// BS-side scatterers, four clutter patches south-east of BS2.
inline ScenarioConfig default_scenario() {
    ScenarioConfig cfg;
    cfg.ue_pos = {{234.389509671047, -279.334540216866},
                  {320.51584763567, -166.849989458794},
                  {354.669697176238, -31.0295777990933},
                  {348.690036111733, 109.941546080199},
                  {275.743431570397, 231.376211730278}};
    cfg.ue_vel.assign(cfg.ue_pos.size(), Vec2{-1.0, 0.0});
    const std::vector<Vec2> near_group = {{23.7202376879278, -32.0875865467068},
                                          {22.5809625508804, -32.2332889578661},
                                          {23.9433311571438, -26.3107133019434},
                                          {27.3690000903447, -26.5035858683089},
                                          {26.3812123971537, -27.2671304409952}};
    const std::vector<Vec2> far_group = {{240.463996161255, 60.2996419328793},
                                         {240.275605727513, 62.1868635268402},
                                         {236.587271931054, 64.7959557197263},
                                         {238.185112582204, 60.6002034861002},
                                         {237.715390279068, 67.5562701477462}};
    for (std::size_t k = 0; k < cfg.ue_pos.size(); ++k) {
        cfg.ue_clusters.push_back({near_group[k], far_group[k]});
    }
    cfg.clutter.patch_positions = {{90.0, -155.884572681199},
                                   {125.038506682619, -129.481164060957},
                                   {150.960702230176, -98.0350263027049},
                                   {169.144671741464, -61.5636257986204}};
    return cfg;
}

// -------------------------------------------------------------------------
// Frame schedule
// -------------------------------------------------------------------------

enum class Link { Uplink, Downlink };

struct Bin {
    int i = 0; // OFDM symbol index
    int v = 0; // subcarrier index
    friend bool operator==(const Bin&, const Bin&) = default;
};

/// Time-frequency resource map of BS1.
///
/// UE PRBs are the lowest n_prb_ue PRBs, the rest are sensing PRBs that
/// carry known downlink pilots at every symbol. Within a block of tau_c
/// symbols on a UE subcarrier: tau_p pilot/UL symbols, then UL data, then
/// tau_dl DL symbols. Pilot subcarriers are the first nu_p of each UE PRB.
class FrameSchedule {
public:
    explicit FrameSchedule(const ScenarioConfig& cfg)
        : n_symbols_(cfg.n_symbols),
          n_subcarriers_(cfg.num_subcarriers()),
          n_ue_subcarriers_(cfg.num_ue_subcarriers()),
          v_cho_(cfg.v_cho),
          tau_c_(cfg.tau_c),
          tau_p_(cfg.tau_p),
          tau_dl_(cfg.tau_dl),
          nu_p_(cfg.nu_p) {}

    int num_symbols() const noexcept { return n_symbols_; }
    int num_subcarriers() const noexcept { return n_subcarriers_; }
    int num_blocks() const noexcept { return n_symbols_ / tau_c_; }

    int block_of(int i) const noexcept { return i / tau_c_; }
    int prb_of(int v) const noexcept { return v / v_cho_; }
    int symbol_in_block(int i) const noexcept { return i % tau_c_; }

    bool is_sensing(int v) const noexcept { return v >= n_ue_subcarriers_; }
    bool is_ue_subcarrier(int v) const noexcept { return v < n_ue_subcarriers_; }
    bool is_pilot_subcarrier(int v) const noexcept { return is_ue_subcarrier(v) && (v % v_cho_) < nu_p_; }

    Link link(int i, int v) const noexcept {
        if (is_sensing(v)) {
            return Link::Downlink;
        }
        return symbol_in_block(i) < tau_c_ - tau_dl_ ? Link::Uplink : Link::Downlink;
    }

    bool is_pilot(int i, int v) const noexcept {
        return is_pilot_subcarrier(v) && symbol_in_block(i) < tau_p_;
    }

    /// Index of the pilot column transmitted at bin (i,v); only valid for pilot bins.
    int pilot_column(int i) const noexcept { return symbol_in_block(i); }

    std::vector<Bin> uplink_bins() const { return collect([&](int i, int v) { return link(i, v) == Link::Uplink; }); }
    std::vector<Bin> downlink_bins() const { return collect([&](int i, int v) { return link(i, v) == Link::Downlink; }); }
    std::vector<Bin> pilot_bins() const { return collect([&](int i, int v) { return is_pilot(i, v); }); }

    std::vector<int> sensing_subcarriers() const {
        std::vector<int> out;
        for (int v = n_ue_subcarriers_; v < n_subcarriers_; ++v) out.push_back(v);
        return out;
    }
    std::vector<int> ue_subcarriers() const {
        std::vector<int> out;
        for (int v = 0; v < n_ue_subcarriers_; ++v) out.push_back(v);
        return out;
    }

private:
    template <class Pred>
    std::vector<Bin> collect(Pred pred) const {
        std::vector<Bin> out;
        for (int i = 0; i < n_symbols_; ++i) {
            for (int v = 0; v < n_subcarriers_; ++v) {
                if (pred(i, v)) out.push_back({i, v});
            }
        }
        return out;
    }

    int n_symbols_;
    int n_subcarriers_;
    int n_ue_subcarriers_;
    int v_cho_;
    int tau_c_;
    int tau_p_;
    int tau_dl_;
    int nu_p_;
};

inline FrameSchedule build_schedule(const ScenarioConfig& cfg) {
    cfg.validate();
    return FrameSchedule(cfg);
}

// -------------------------------------------------------------------------
// Pathloss and power
// -------------------------------------------------------------------------

/// 3GPP UMi street-canyon pathloss in dB at planar distance d (m).
inline double umi_pathloss_db(double d, double f_c, PathlossModel model) {
    const double f_ghz = f_c / 1e9;
    const double los = 32.4 + 21.0 * std::log10(d) + 20.0 * std::log10(f_ghz);
    if (model == PathlossModel::UmiLos) {
        return los;
    }
    const double nlos = 22.4 + 35.3 * std::log10(d) + 21.3 * std::log10(f_ghz);
    return std::max(los, nlos);
}

/// Amplitude pathloss alpha_k = 10^(-PL/20) between BS1 and UE k.
inline double pathloss(const ScenarioConfig& cfg, int k) {
    if (k < 0 || k >= cfg.num_ues()) {
        throw DomainError("pathloss: UE index out of range");
    }
    const double d = (cfg.ue_pos[static_cast<std::size_t>(k)] - cfg.bs1_pos).norm();
    if (d < 10.0) {
        throw ConfigError("pathloss: UE closer than 10 m to BS1, outside the model's validity");
    }
    return std::pow(10.0, -umi_pathloss_db(d, cfg.f_c, cfg.pathloss_model) / 20.0);
}

/// Per-stream DL amplitude vector rho_{i,v} (square roots of powers).
inline RVector power_allocation(const ScenarioConfig& cfg, const FrameSchedule& schedule, Bin bin) {
    if (schedule.link(bin.i, bin.v) != Link::Downlink) {
        throw DomainError("power_allocation: bin is not a downlink bin");
    }
    if (schedule.is_sensing(bin.v)) {
        const double n_s = cfg.num_sensing_subcarriers();
        return RVector::Constant(1, std::sqrt((1.0 - cfg.gamma) * cfg.p_bs / n_s));
    }
    const int s = cfg.num_streams();
    if (s == 0) {
        return RVector(0);
    }
    const double share = cfg.gamma * cfg.p_bs / (static_cast<double>(cfg.num_ue_subcarriers()) * s);
    return RVector::Constant(s, std::sqrt(share));
}

/// Per-stream UE amplitude: P_UE spread over the UE's subcarriers and streams.
inline double ue_stream_amplitude(const ScenarioConfig& cfg) {
    const double n = static_cast<double>(cfg.num_ue_subcarriers()) * cfg.m_ue;
    return n > 0 ? std::sqrt(cfg.p_ue / n) : 0.0;
}

/// Transmit angle of the sensing beam at symbol i. The sector
/// [-sweep/2, +sweep/2] is split into tau_dl beams, cycled over symbols.
inline double sensing_beam_angle(const ScenarioConfig& cfg, int i) {
    const int n_beams = std::max(cfg.tau_dl, 1);
    if (n_beams == 1) {
        return 0.0;
    }
    const int j = i % n_beams;
    return -0.5 * cfg.sweep_width + cfg.sweep_width * j / (n_beams - 1);
}

} // namespace isac
