// isac-crb: runs CRB sweeps and SE studies described by an experiment file.
//
//   isac-crb run <experiment.json> [--seed N] [--out PATH] [--threads N]
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "isac/experiments.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

void write_table(const isac::CsvTable& table, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw isac::ConfigError("cannot write '" + path.string() + "'");
    }
    out << table.str();
    if (!out) {
        throw isac::ConfigError("write to '" + path.string() + "' failed");
    }
}

int run(const std::string& file, std::optional<std::uint64_t> seed, const std::string& out_path,
        std::optional<int> threads) {
    isac::ExperimentSpec spec = isac::load_experiment(file);
    if (seed) spec.seed = *seed;
    if (threads) spec.threads = *threads;
    if (!out_path.empty()) spec.output = out_path;

    const isac::ExperimentOutput result = isac::run_experiment(spec);
    if (spec.output.empty()) {
        std::cout << result.main.str();
        if (result.summary) std::cout << '\n' << result.summary->str();
        return kExitOk;
    }
    write_table(result.main, spec.output);
    std::cerr << "wrote " << result.main.rows.size() << " rows to " << spec.output << '\n';
    if (result.summary) {
        const std::filesystem::path summary = isac::summary_path(spec.output);
        write_table(*result.summary, summary);
        std::cerr << "wrote " << result.summary->rows.size() << " rows to " << summary.string() << '\n';
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CRB and spectral-efficiency experiments for a bistatic OFDM ISAC network"};
    app.require_subcommand(1);

    std::string file;
    std::optional<std::uint64_t> seed;
    std::string out_path;
    std::optional<int> threads;
    CLI::App* run_cmd = app.add_subcommand("run", "run an experiment file");
    run_cmd->add_option("experiment", file, "experiment description (JSON)")->required();
    run_cmd->add_option("--seed", seed, "Monte-Carlo seed, overrides the file");
    run_cmd->add_option("--out", out_path, "output CSV path (default: stdout)");
    run_cmd->add_option("--threads", threads, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        return run(file, seed, out_path, threads);
    } catch (const isac::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const isac::GeometryError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const isac::Error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    }
}
