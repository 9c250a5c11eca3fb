// lfgp_cli <command> [--config file] [--seed n] [--out dir] [--threads n]

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11/CLI11.hpp>

#include "lfgp/cli_io.hpp"
#include "lfgp/error.hpp"
#include "lfgp/pipeline.hpp"

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 1;
};

int run(const std::string& command, const Flags& flags) {
    lfgp::RunConfig cfg = flags.config.empty() ? lfgp::parse_config(lfgp::Json::object())
                                               : lfgp::load_config(flags.config);
    if (flags.seed) cfg.io.seed = flags.seed;
    if (!flags.out.empty()) cfg.io.out_dir = flags.out;
    if (flags.threads < 1) throw lfgp::Error(lfgp::ErrorCode::ConfigError, "--threads must be >= 1");
    cfg.threads = flags.threads;
    const lfgp::OutputSet out = lfgp::execute(command, cfg);
    std::cout << command << ": wrote " << out.files().size() << " files to " << cfg.out_dir().string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent factor Gaussian process models of dynamic covariance"};
    app.require_subcommand(1);
    Flags flags;
    const char* help[] = {
        "sliding-window log-covariance estimates",
        "fit the latent factor GP model and export posterior summaries",
        "add a horseshoe factor to a saved chain",
        "write synthetic trial files",
        "run the method-comparison and posterior-contraction experiments",
        "classify condition trajectories from a saved chain",
        "SW-PCA and HMM baselines",
    };
    std::size_t h = 0;
    for (const auto& name : lfgp::command_names()) {
        CLI::App* sub = app.add_subcommand(name, help[h++]);
        sub->add_option("--config", flags.config, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", flags.seed, "master seed (overrides io.seed)");
        sub->add_option("--out", flags.out, "output directory (overrides io.out_dir)");
        sub->add_option("--threads", flags.threads, "worker threads")->check(CLI::PositiveNumber);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return static_cast<int>(lfgp::ErrorCategory::Config);
    }
    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, flags);
    } catch (const lfgp::Error& e) {
        std::cerr << "lfgp_cli " << command << ": " << e.what() << "\n";
        return static_cast<int>(lfgp::category_of(e.code()));
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "lfgp_cli " << command << ": " << e.what() << "\n";
        return static_cast<int>(lfgp::ErrorCategory::Data);
    } catch (const std::exception& e) {
        std::cerr << "lfgp_cli " << command << ": " << e.what() << "\n";
        return static_cast<int>(lfgp::ErrorCategory::Numerical);
    }
}
