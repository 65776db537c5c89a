#include <iostream>

#include <CLI11.hpp>

#include "regcert/pipeline.hpp"

namespace {

void add_common(CLI::App *cmd, regcert::RunOptions &opts, std::uint64_t &seed) {
    cmd->add_option("--config", opts.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--out", opts.out, "output directory")->required();
    cmd->add_option("--seed", seed, "global seed (overrides the config)");
    cmd->add_option("--threads", opts.threads, "worker cap (0 = hardware default)");
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Test-time registration uncertainty by perturbation and re-registration"};
    app.require_subcommand(1);

    regcert::RunOptions opts;
    std::uint64_t seed = 0;
    std::string nifti;

    auto *simulate = app.add_subcommand("simulate-pair", "phantom + ground-truth transform -> source/target pair");
    add_common(simulate, opts, seed);
    simulate->add_option("--import-nifti", nifti, "float32 NIfTI-1 source image (replaces the phantom)")
        ->check(CLI::ExistingFile);
    auto *estimate = app.add_subcommand("estimate", "per-voxel uncertainty of a registration backend");
    add_common(estimate, opts, seed);
    auto *evaluate = app.add_subcommand("evaluate", "error map, correlations and risk-coverage");
    add_common(evaluate, opts, seed);
    auto *lemma = app.add_subcommand("lemma-check", "Monte-Carlo checks of the covariance decomposition");
    add_common(lemma, opts, seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    for (auto *cmd : {simulate, estimate, evaluate, lemma})
        if (cmd->count("--seed")) opts.seed = seed;
    if (!nifti.empty()) opts.import_nifti = nifti;

    try {
        if (*simulate) {
            regcert::cmd_simulate_pair(opts);
        } else if (*estimate) {
            regcert::cmd_estimate(opts);
        } else if (*evaluate) {
            regcert::cmd_evaluate(opts);
        } else if (*lemma) {
            if (!regcert::cmd_lemma_check(opts)) std::cerr << "lemma-check: one or more checks failed\n";
        }
    } catch (...) {
        std::string message;
        const int code = regcert::exit_code_for_current_exception(message);
        std::cerr << "error: " << message << '\n';
        return code;
    }
    return 0;
}
