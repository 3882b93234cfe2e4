#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "ctcalib/pipeline.hpp"

namespace {

using namespace ctcalib;

struct CommandArgs {
    std::string config_path;
    std::string positional;
    std::vector<std::pair<std::string, std::string>> overrides;
};

// Every config key becomes a --key override so the CLI and the config file
// can never drift apart.
void add_common_options(CLI::App* cmd, CommandArgs& args, const char* positional_name,
                        const char* positional_help) {
    cmd->add_option("--config", args.config_path, "JSON configuration file");
    if (positional_name) cmd->add_option(positional_name, args.positional, positional_help);
    for (const auto& key : config_keys()) {
        cmd->add_option_function<std::string>(
               "--" + key,
               [&args, key](const std::string& value) { args.overrides.emplace_back(key, value); })
            ->group("Configuration overrides")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
}

RunConfig build_config(const CommandArgs& args, const char* positional_key) {
    RunConfig config = args.config_path.empty() ? RunConfig{} : load_config(args.config_path);
    if (!args.positional.empty()) apply_override(config, positional_key, args.positional);
    for (const auto& [key, value] : args.overrides) apply_override(config, key, value);
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"targetless, observability-aware LiDAR-IMU calibration"};
    app.require_subcommand(1);

    CommandArgs sim_args, cal_args, seg_args, rep_args;
    CLI::App* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
    add_common_options(sim, sim_args, "dataset", "output dataset directory");
    CLI::App* cal = app.add_subcommand("calibrate", "run the full calibration pipeline");
    add_common_options(cal, cal_args, "dataset", "dataset directory");
    CLI::App* seg = app.add_subcommand("select-segments",
                                       "rank data segments by information content");
    add_common_options(seg, seg_args, "dataset", "dataset directory");
    CLI::App* rep = app.add_subcommand("report", "summarize a finished run");
    add_common_options(rep, rep_args, "run", "run directory with calibration outputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return ctcalib::kExitConfig;
    }

    try {
        if (sim->parsed()) return cmd_simulate(build_config(sim_args, "dataset_dir"), std::cout);
        if (cal->parsed()) return cmd_calibrate(build_config(cal_args, "dataset_dir"), std::cout);
        if (seg->parsed())
            return cmd_select_segments(build_config(seg_args, "dataset_dir"), std::cout);
        if (rep->parsed()) return cmd_report(build_config(rep_args, "run_dir"), std::cout);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return ctcalib::kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return ctcalib::kExitPipeline;
    }
    return ctcalib::kExitConfig;
}
