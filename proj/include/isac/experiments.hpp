#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "isac/estimation.hpp"
#include "isac/fim.hpp"
#include "isac/scenario.hpp"

namespace isac {

// -------------------------------------------------------------------------
// Experiment description
// -------------------------------------------------------------------------

enum class ExperimentKind { CrbAngleSweep, CrbGammaSweep, SeCdf };

inline std::string to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::CrbAngleSweep: return "crb_angle_sweep";
        case ExperimentKind::CrbGammaSweep: return "crb_gamma_sweep";
        case ExperimentKind::SeCdf: return "se_cdf";
    }
    return "?";
}

/// One swept scenario field and its values. SE studies may sweep several
/// axes; their cells are the cartesian product, last axis fastest.
struct SweepAxis {
    std::string name;
    std::vector<double> values;
};

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::CrbAngleSweep;
    std::vector<SweepAxis> axes;
    std::vector<Regime> regimes{kAllRegimes.begin(), kAllRegimes.end()};
    std::vector<ClutterMode> clutter_modes{kAllClutterModes.begin(), kAllClutterModes.end()};
    std::vector<std::string> parameters{"theta_bs", "tau_bs"};
    int n_realizations = 100;
    std::uint64_t seed = 1;
    int threads = 0;
    std::string output;
    ScenarioConfig scenario = default_scenario();
    std::uint64_t config_hash = 0;

    void validate() const {
        const auto fail = [](const std::string& what) { throw ConfigError("experiment: " + what); };
        if (n_realizations < 1) fail("n_realizations must be positive");
        if (axes.empty() && kind != ExperimentKind::SeCdf) fail("no sweep grid");
        if (kind != ExperimentKind::SeCdf && axes.size() != 1) fail("CRB sweeps take exactly one grid");
        for (const SweepAxis& a : axes) {
            if (a.values.empty()) fail("grid '" + a.name + "' is empty");
            const bool up = a.values.size() < 2 || a.values[1] > a.values[0];
            for (std::size_t i = 1; i < a.values.size(); ++i) {
                if (up ? !(a.values[i] > a.values[i - 1]) : !(a.values[i] < a.values[i - 1])) {
                    fail("grid '" + a.name + "' is not strictly monotone");
                }
            }
        }
        if (kind != ExperimentKind::SeCdf) {
            if (regimes.empty()) fail("no regimes selected");
            if (clutter_modes.empty()) fail("no clutter modes selected");
            if (parameters.empty()) fail("no parameters selected");
        }
        scenario.validate();
    }
};

/// FNV-1a over a byte string.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// -------------------------------------------------------------------------
// Loading
// -------------------------------------------------------------------------

namespace detail {

using json = nlohmann::ordered_json; // keeps sweep axes in file order

inline Vec2 read_vec2(const json& j, const std::string& key) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        throw ConfigError("'" + key + "' must be a [x, y] pair");
    }
    return {j[0].get<double>(), j[1].get<double>()};
}

inline std::vector<Vec2> read_vec2_list(const json& j, const std::string& key) {
    if (!j.is_array()) throw ConfigError("'" + key + "' must be a list of [x, y] pairs");
    std::vector<Vec2> out;
    for (const json& e : j) out.push_back(read_vec2(e, key));
    return out;
}

inline double read_number(const json& j, const std::string& key) {
    if (!j.is_number()) throw ConfigError("'" + key + "' must be a number");
    return j.get<double>();
}

inline int read_int(const json& j, const std::string& key) {
    if (!j.is_number_integer()) throw ConfigError("'" + key + "' must be an integer");
    return j.get<int>();
}

inline std::vector<double> read_grid(const json& j, const std::string& key) {
    if (!j.is_array()) throw ConfigError("'" + key + "' must be a list of numbers");
    std::vector<double> out;
    for (const json& e : j) out.push_back(read_number(e, key));
    return out;
}

inline void apply_clutter(ClutterConfig& cl, const json& j) {
    for (const auto& [key, val] : j.items()) {
        if (key == "patch_positions") cl.patch_positions = read_vec2_list(val, key);
        else if (key == "texture_db") cl.texture = db_to_linear(read_number(val, key));
        else if (key == "kappa_db") cl.kappa = db_to_linear(read_number(val, key));
        else if (key == "angular_spread_deg") cl.angular_spread = deg_to_rad(read_number(val, key));
        else if (key == "temporal_corr") cl.temporal_corr = read_number(val, key);
        else if (key == "frequency_corr") cl.frequency_corr = read_number(val, key);
        else throw ConfigError("unknown clutter key '" + key + "'");
    }
}

/// Overrides fields of `cfg` from a scenario object. Powers are in dBm,
/// gains in dB and angles in degrees.
inline void apply_scenario(ScenarioConfig& cfg, const json& j) {
    if (!j.is_object()) throw ConfigError("'scenario' must be an object");
    for (const auto& [key, val] : j.items()) {
        if (key == "bs1_pos") cfg.bs1_pos = read_vec2(val, key);
        else if (key == "bs2_pos") cfg.bs2_pos = read_vec2(val, key);
        else if (key == "ue_pos") cfg.ue_pos = read_vec2_list(val, key);
        else if (key == "ue_vel") cfg.ue_vel = read_vec2_list(val, key);
        else if (key == "ue_clusters") {
            if (!val.is_array()) throw ConfigError("'ue_clusters' must be a list of lists");
            cfg.ue_clusters.clear();
            for (const json& e : val) cfg.ue_clusters.push_back(read_vec2_list(e, key));
        }
        else if (key == "ue_angular_spread_deg") cfg.ue_angular_spread = deg_to_rad(read_number(val, key));
        else if (key == "target_pos") cfg.target_pos = read_vec2(val, key);
        else if (key == "target_vel") cfg.target_vel = read_vec2(val, key);
        else if (key == "m_bs_tx") cfg.m_bs_tx = read_int(val, key);
        else if (key == "m_bs_rx") cfg.m_bs_rx = read_int(val, key);
        else if (key == "m_ue") cfg.m_ue = read_int(val, key);
        else if (key == "f_c") cfg.f_c = read_number(val, key);
        else if (key == "delta_f") cfg.delta_f = read_number(val, key);
        else if (key == "t_cp") cfg.t_cp = read_number(val, key);
        else if (key == "n_prb") cfg.n_prb = read_int(val, key);
        else if (key == "v_cho") cfg.v_cho = read_int(val, key);
        else if (key == "n_prb_ue") cfg.n_prb_ue = read_int(val, key);
        else if (key == "tau_c") cfg.tau_c = read_int(val, key);
        else if (key == "tau_p") cfg.tau_p = read_int(val, key);
        else if (key == "tau_dl") cfg.tau_dl = read_int(val, key);
        else if (key == "nu_p") cfg.nu_p = read_int(val, key);
        else if (key == "p") cfg.p = read_int(val, key);
        else if (key == "n_symbols") cfg.n_symbols = read_int(val, key);
        else if (key == "gamma") cfg.gamma = read_number(val, key);
        else if (key == "p_bs_dbm") cfg.p_bs = dbm_to_watts(read_number(val, key));
        else if (key == "p_ue_dbm") cfg.p_ue = dbm_to_watts(read_number(val, key));
        else if (key == "noise_var_dbm") cfg.noise_var = dbm_to_watts(read_number(val, key));
        else if (key == "rcs_db") cfg.rcs = db_to_linear(read_number(val, key));
        else if (key == "sweep_width_deg") cfg.sweep_width = deg_to_rad(read_number(val, key));
        else if (key == "clutter") apply_clutter(cfg.clutter, val);
        else if (key == "pathloss_model") {
            const std::string s = val.is_string() ? val.get<std::string>() : "";
            if (s == "umi_los") cfg.pathloss_model = PathlossModel::UmiLos;
            else if (s == "umi_nlos") cfg.pathloss_model = PathlossModel::UmiNlos;
            else throw ConfigError("pathloss_model must be 'umi_los' or 'umi_nlos'");
        }
        else if (key == "gain_model") {
            const std::string s = val.is_string() ? val.get<std::string>() : "";
            if (s == "deterministic") cfg.gain_model = GainModel::Deterministic;
            else if (s == "random") cfg.gain_model = GainModel::Random;
            else throw ConfigError("gain_model must be 'deterministic' or 'random'");
        }
        else if (key == "gain_seed") cfg.gain_seed = val.get<std::uint64_t>();
        else if (key == "rng_seed") cfg.rng_seed = val.get<std::uint64_t>();
        else throw ConfigError("unknown scenario key '" + key + "'");
    }
    if (j.contains("ue_pos") && !j.contains("ue_vel")) {
        cfg.ue_vel.assign(cfg.ue_pos.size(), Vec2{-1.0, 0.0});
    }
    if (j.contains("ue_pos") && !j.contains("ue_clusters")) {
        cfg.ue_clusters.clear();
    }
}

inline std::vector<std::string> read_strings(const json& j, const std::string& key) {
    if (!j.is_array()) throw ConfigError("'" + key + "' must be a list of strings");
    std::vector<std::string> out;
    for (const json& e : j) {
        if (!e.is_string()) throw ConfigError("'" + key + "' must be a list of strings");
        out.push_back(e.get<std::string>());
    }
    return out;
}

inline const char* default_axis(ExperimentKind k) {
    return k == ExperimentKind::CrbAngleSweep ? "theta_bs_deg" : "gamma";
}

} // namespace detail

/// Parses an experiment document:
///   { "kind": ..., "grid": [...] or "sweep": {"name": [...], ...},
///     "regimes": [...], "clutter_modes": [...], "parameters": [...],
///     "n_realizations": N, "seed": S, "threads": T, "output": "...",
///     "scenario": { overrides of the default layout } }
inline ExperimentSpec parse_experiment(const std::string& text) {
    using detail::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("experiment document must be an object");

    ExperimentSpec spec;
    spec.config_hash = fnv1a(j.dump());
    try {
        if (!j.contains("kind") || !j["kind"].is_string()) throw ConfigError("missing 'kind'");
        const std::string kind = j["kind"].get<std::string>();
        if (kind == "crb_angle_sweep") spec.kind = ExperimentKind::CrbAngleSweep;
        else if (kind == "crb_gamma_sweep") spec.kind = ExperimentKind::CrbGammaSweep;
        else if (kind == "se_cdf") spec.kind = ExperimentKind::SeCdf;
        else throw ConfigError("unknown experiment kind '" + kind + "'");
        if (spec.kind == ExperimentKind::SeCdf) spec.n_realizations = 1000;

        for (const auto& [key, val] : j.items()) {
            if (key == "kind") continue;
            if (key == "grid") {
                if (spec.kind == ExperimentKind::SeCdf) throw ConfigError("se_cdf takes a 'sweep' object, not 'grid'");
                spec.axes = {{detail::default_axis(spec.kind), detail::read_grid(val, key)}};
            } else if (key == "sweep") {
                if (!val.is_object()) throw ConfigError("'sweep' must map field names to grids");
                for (const auto& [name, grid] : val.items()) {
                    spec.axes.push_back({name, detail::read_grid(grid, name)});
                }
            } else if (key == "regimes") {
                spec.regimes.clear();
                for (const std::string& s : detail::read_strings(val, key)) spec.regimes.push_back(parse_regime(s));
            } else if (key == "clutter_modes") {
                spec.clutter_modes.clear();
                for (const std::string& s : detail::read_strings(val, key)) {
                    spec.clutter_modes.push_back(parse_clutter_mode(s));
                }
            } else if (key == "parameters") {
                spec.parameters = detail::read_strings(val, key);
            } else if (key == "n_realizations") {
                spec.n_realizations = detail::read_int(val, key);
            } else if (key == "seed") {
                spec.seed = val.get<std::uint64_t>();
            } else if (key == "threads") {
                spec.threads = detail::read_int(val, key);
            } else if (key == "output") {
                if (!val.is_string()) throw ConfigError("'output' must be a string");
                spec.output = val.get<std::string>();
            } else if (key == "scenario") {
                detail::apply_scenario(spec.scenario, val);
            } else {
                throw ConfigError("unknown experiment key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid value: ") + e.what());
    }

    const std::vector<std::string> se_axes = {"p_ue_dbm", "nu_p", "ue_speed", "p"};
    for (const SweepAxis& a : spec.axes) {
        if (spec.kind == ExperimentKind::SeCdf) {
            if (std::find(se_axes.begin(), se_axes.end(), a.name) == se_axes.end()) {
                throw ConfigError("se_cdf cannot sweep '" + a.name + "'");
            }
        } else if (a.name != detail::default_axis(spec.kind)) {
            throw ConfigError("this experiment sweeps '" + std::string(detail::default_axis(spec.kind)) + "', not '" +
                              a.name + "'");
        }
    }
    if (spec.kind != ExperimentKind::SeCdf) {
        const EtaLayout layout{spec.scenario.num_ues()};
        for (const std::string& name : spec.parameters) layout.index_of(name);
    }
    spec.validate();
    return spec;
}

inline ExperimentSpec load_experiment(const std::filesystem::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".toml") {
        throw ConfigError("TOML experiment files are not supported by this build; use JSON");
    }
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_experiment(buf.str());
}

// -------------------------------------------------------------------------
// CSV
// -------------------------------------------------------------------------

inline std::string format_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::string str() const {
        std::string out;
        const auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t c = 0; c < cells.size(); ++c) {
                if (c) out += ',';
                out += cells[c];
            }
            out += '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
        return out;
    }
};

struct ExperimentOutput {
    CsvTable main;
    std::optional<CsvTable> summary; // SE studies: mean SE per (cell, k, v)
};

namespace detail {

inline std::vector<std::string> provenance(const ExperimentSpec& spec) {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(spec.config_hash));
    return {std::to_string(spec.seed), std::to_string(spec.n_realizations), hash};
}

} // namespace detail

// -------------------------------------------------------------------------
// Runners
// -------------------------------------------------------------------------

/// Target placed at angle theta (from BS1) on the circle through the
/// configured target position.
inline ScenarioConfig with_target_angle(const ScenarioConfig& cfg, double theta) {
    ScenarioConfig out = cfg;
    const double r = (cfg.target_pos - cfg.bs1_pos).norm();
    out.target_pos = cfg.bs1_pos + r * Vec2(std::cos(theta), std::sin(theta));
    return out;
}

namespace detail {

inline void emit_crb_rows(CsvTable& t, const ExperimentSpec& spec, const std::string& axis, double value,
                          const FimSet& fims) {
    for (Regime r : spec.regimes) {
        for (ClutterMode m : spec.clutter_modes) {
            const CrbReport rep = fims.crb(r, m);
            for (const std::string& name : spec.parameters) {
                const CrbEntry& e = rep.entries.at(static_cast<std::size_t>(rep.layout.index_of(name)));
                std::vector<std::string> row = {axis, format_number(value), to_string(r), to_string(m), e.name,
                                                format_number(e.value), e.units};
                for (std::string& p : provenance(spec)) row.push_back(std::move(p));
                t.rows.push_back(std::move(row));
            }
        }
    }
}

inline CsvTable crb_table() {
    return {{"sweep_variable", "sweep_value", "regime", "clutter_mode", "parameter_name", "crb_value", "units", "seed",
             "n_realizations", "config_hash"},
            {}};
}

} // namespace detail

inline CsvTable run_crb_angle_sweep(const ExperimentSpec& spec) {
    CsvTable t = detail::crb_table();
    const SweepAxis& axis = spec.axes.at(0);
    for (double deg : axis.values) {
        const ScenarioConfig cfg = with_target_angle(spec.scenario, deg_to_rad(deg));
        const FimSet fims = monte_carlo_fims(cfg, spec.n_realizations, spec.seed, spec.threads);
        detail::emit_crb_rows(t, spec, axis.name, deg, fims);
    }
    return t;
}

inline CsvTable run_crb_gamma_sweep(const ExperimentSpec& spec) {
    CsvTable t = detail::crb_table();
    const SweepAxis& axis = spec.axes.at(0);
    for (double gamma : axis.values) {
        ScenarioConfig cfg = spec.scenario;
        cfg.gamma = gamma;
        const FimSet fims = monte_carlo_fims(cfg, spec.n_realizations, spec.seed, spec.threads);
        detail::emit_crb_rows(t, spec, axis.name, gamma, fims);
    }
    return t;
}

/// Applies one SE sweep value to a scenario.
inline void apply_se_axis(ScenarioConfig& cfg, const std::string& name, double value) {
    const auto as_int = [&]() {
        if (value != std::floor(value)) throw ConfigError("'" + name + "' grid values must be integers");
        return static_cast<int>(value);
    };
    if (name == "p_ue_dbm") {
        cfg.p_ue = dbm_to_watts(value);
    } else if (name == "nu_p") {
        cfg.nu_p = as_int();
    } else if (name == "p") {
        cfg.p = as_int();
    } else if (name == "ue_speed") {
        if (value < 0.0) throw ConfigError("'ue_speed' must be non-negative");
        for (Vec2& v : cfg.ue_vel) {
            const double n = v.norm();
            v = n > 0.0 ? Vec2(v * (value / n)) : Vec2(-value, 0.0);
        }
    } else {
        throw ConfigError("unknown SE sweep axis '" + name + "'");
    }
}

/// Cartesian product of the sweep axes, last axis fastest.
inline std::vector<std::vector<double>> sweep_cells(const std::vector<SweepAxis>& axes) {
    std::vector<std::vector<double>> cells = {{}};
    for (const SweepAxis& a : axes) {
        std::vector<std::vector<double>> next;
        for (const auto& c : cells) {
            for (double v : a.values) {
                next.push_back(c);
                next.back().push_back(v);
            }
        }
        cells = std::move(next);
    }
    return cells;
}

/// Raw per-realization sum SE of every cell plus a mean-SE summary.
/// Cells run on a worker pool; rows are written in cell order.
inline ExperimentOutput run_se_cdf(const ExperimentSpec& spec) {
    const std::vector<std::vector<double>> cells = sweep_cells(spec.axes);
    std::vector<ScenarioConfig> cfgs;
    for (const auto& cell : cells) {
        ScenarioConfig cfg = spec.scenario;
        for (std::size_t a = 0; a < spec.axes.size(); ++a) apply_se_axis(cfg, spec.axes[a].name, cell[a]);
        cfg.validate();
        cfgs.push_back(std::move(cfg));
    }

    std::vector<SpectralEfficiencyResult> results(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    const int n_cells = static_cast<int>(cells.size());
    const int n_threads = std::min(resolve_threads(spec.threads), n_cells);
    const auto work = [&](int t) {
        for (int c = t; c < n_cells; c += n_threads) {
            try {
                results[static_cast<std::size_t>(c)] =
                    spectral_efficiency(cfgs[static_cast<std::size_t>(c)], spec.n_realizations, spec.seed);
            } catch (...) {
                errors[static_cast<std::size_t>(c)] = std::current_exception();
            }
        }
    };
    if (n_threads == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(work, t);
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    ExperimentOutput out;
    CsvTable summary;
    for (const SweepAxis& a : spec.axes) {
        out.main.header.push_back(a.name);
        summary.header.push_back(a.name);
    }
    for (const char* h : {"realization_id", "sum_se_bits_per_hz", "seed", "n_realizations", "config_hash"}) {
        out.main.header.push_back(h);
    }
    for (const char* h : {"k", "v", "mean_se", "seed", "n_realizations", "config_hash"}) summary.header.push_back(h);

    const std::vector<std::string> prov = detail::provenance(spec);
    for (std::size_t c = 0; c < cells.size(); ++c) {
        std::vector<std::string> key;
        for (double v : cells[c]) key.push_back(format_number(v));
        const SpectralEfficiencyResult& res = results[c];
        for (std::size_t r = 0; r < res.sum_se.size(); ++r) {
            std::vector<std::string> row = key;
            row.push_back(std::to_string(r));
            row.push_back(format_number(res.sum_se[r]));
            row.insert(row.end(), prov.begin(), prov.end());
            out.main.rows.push_back(std::move(row));
        }
        for (std::size_t k = 0; k < res.mean_se.size(); ++k) {
            for (std::size_t v = 0; v < res.mean_se[k].size(); ++v) {
                std::vector<std::string> row = key;
                row.push_back(std::to_string(k));
                row.push_back(std::to_string(v));
                row.push_back(format_number(res.mean_se[k][v]));
                row.insert(row.end(), prov.begin(), prov.end());
                summary.rows.push_back(std::move(row));
            }
        }
    }
    out.summary = std::move(summary);
    return out;
}

inline ExperimentOutput run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case ExperimentKind::CrbAngleSweep: return {run_crb_angle_sweep(spec), std::nullopt};
        case ExperimentKind::CrbGammaSweep: return {run_crb_gamma_sweep(spec), std::nullopt};
        case ExperimentKind::SeCdf: return run_se_cdf(spec);
    }
    throw ConfigError("unknown experiment kind");
}

/// Sibling path of the SE summary table: results.csv -> results_summary.csv.
inline std::filesystem::path summary_path(const std::filesystem::path& main) {
    std::filesystem::path p = main;
    p.replace_filename(main.stem().string() + "_summary" + main.extension().string());
    return p;
}

} // namespace isac
