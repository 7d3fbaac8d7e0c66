// Experiment runner for the neural-network dynamic-programming library.
//
//   nndp run <config.json>       solve, evaluate, write result tables
//   nndp validate <config.json>  check the config without running anything
//   nndp oracle <config.json>    reference-solution tables only
//   nndp quantize <config.json>  quantizer training and distortion only
//
// Relative output directories resolve against $NNDP_OUTPUT_ROOT when set.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "nndp/experiment.hpp"
#include "nndp/version.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Backward dynamic programming with neural-network policies"};
    app.set_version_flag("--version", std::string(nndp::library_version()));
    app.require_subcommand(1);

    std::string config_path;
    auto add_verb = [&](const char* name, const char* description) {
        CLI::App* verb = app.add_subcommand(name, description);
        verb->add_option("config", config_path, "experiment config (JSON)")
            ->required()
            ->check(CLI::ExistingFile);
        return verb;
    };
    CLI::App* run = add_verb("run", "run the configured experiment");
    CLI::App* validate = add_verb("validate", "validate the config and list every violation");
    CLI::App* oracle = add_verb("oracle", "write the oracle tables only");
    CLI::App* quantize = add_verb("quantize", "train quantizers and report distortion");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return nndp::run_experiment(config_path);
    if (validate->parsed()) {
        auto report = nndp::validate_config(config_path);
        if (report.ok()) {
            std::printf("ok: no violations\n");
            return 0;
        }
        for (const auto& v : report.violations)
            std::printf("violation: %s: %s\n", v.field.c_str(), v.message.c_str());
        return 1;
    }
    if (oracle->parsed()) return nndp::run_oracle(config_path);
    if (quantize->parsed()) return nndp::run_quantize(config_path);
    return 1;
}
