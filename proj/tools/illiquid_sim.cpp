#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "illiquid/config.hpp"
#include "illiquid/experiments.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Illiquid and liquid asset allocation simulator"};
    app.require_subcommand(1);
    app.set_version_flag("--version", illiquid::kLibraryVersion);

    std::string config_path;
    std::string output_dir;
    std::uint64_t seed = 0;
    int paths = 0;
    int threads = 0;
    bool quiet = false;
    auto* run = app.add_subcommand("run", "run the experiment described by a config file");
    run->add_option("-c,--config", config_path, "experiment config")->required()->check(CLI::ExistingFile);
    auto* dir_opt = run->add_option("-o,--output-dir", output_dir, "override [output] directory");
    auto* seed_opt = run->add_option("--seed", seed, "override master seed");
    auto* paths_opt = run->add_option("--paths", paths, "override path count")->check(CLI::PositiveNumber);
    auto* threads_opt = run->add_option("--threads", threads, "worker thread cap")->check(CLI::PositiveNumber);
    run->add_flag("-q,--quiet", quiet, "print nothing but errors");

    std::string check_path;
    auto* check = app.add_subcommand("check-config", "validate a config and print its canonical form");
    check->add_option("config", check_path, "experiment config")->required()->check(CLI::ExistingFile);

    auto* reference = app.add_subcommand("config-reference", "list every config key with its default");

    std::vector<std::string> metrics_files;
    std::string plot_out;
    auto* plot = app.add_subcommand("plot-data", "reshape metrics CSVs into long format for plotting");
    plot->add_option("metrics", metrics_files, "metrics CSV files")->check(CLI::ExistingFile);
    plot->add_option("-o,--output", plot_out, "output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*reference) {
            std::cout << illiquid::config_reference();
            return 0;
        }
        if (*check) {
            const illiquid::ExperimentConfig cfg = illiquid::load_config(check_path);
            for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << "\n";
            std::cout << illiquid::write_config(cfg);
            return 0;
        }
        if (*plot) {
            const std::string text = illiquid::emit_plot_data(metrics_files);
            if (plot_out.empty()) {
                std::cout << text;
            } else {
                std::ofstream(plot_out, std::ios::binary) << text;
            }
            return 0;
        }
        illiquid::ExperimentConfig cfg = illiquid::load_config(config_path);
        if (*dir_opt) cfg.directory = output_dir;
        if (*seed_opt) cfg.seed = seed;
        if (*paths_opt) cfg.paths = paths;
        if (*threads_opt) cfg.threads = threads;
        for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << "\n";
        const illiquid::ExperimentReport report = illiquid::run_experiment(cfg, quiet ? nullptr : &std::cout);
        for (const auto& f : report.failures) std::cerr << "error: " << f << "\n";
        return report.ok() ? 0 : kExitFailure;
    } catch (const illiquid::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}
