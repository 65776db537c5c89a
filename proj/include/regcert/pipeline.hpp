#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

namespace regcert {

/// Bad or inconsistent configuration (CLI exit code 1).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct RunOptions {
    /// JSON config; empty means all defaults.
    std::filesystem::path config;
    std::filesystem::path out = ".";
    /// Overrides the config's global seed.
    std::optional<std::uint64_t> seed;
    /// 0 keeps the hardware default.
    unsigned threads = 0;
    /// simulate-pair: read the source image from a NIfTI file.
    std::optional<std::filesystem::path> import_nifti;
};

// Each command reads its inputs from, and writes its outputs to, opts.out:
//   simulate-pair  source.rcv target.rcv gt.rcv gt.json
//   estimate       u.rcv cov.rcv mean.rcv pred.rcv estimate.json
//                  (+ intrinsic.rcv jitter.rcv for the oracle backend)
//   evaluate       error.rcv metrics.json risk_coverage.csv; the evaluated
//                  prediction is mean.rcv unless metrics.prediction = "pred"
//   lemma-check    lemma_report.json
// Numeric outputs are byte-identical for identical config and seed.
void cmd_simulate_pair(const RunOptions &opts);
void cmd_estimate(const RunOptions &opts);
void cmd_evaluate(const RunOptions &opts);
/// Returns true when no check failed (regime violations are warnings).
bool cmd_lemma_check(const RunOptions &opts);

/// Maps an in-flight exception to the CLI exit code: 1 config, 2 numeric,
/// 3 I/O. Call from inside a catch block.
int exit_code_for_current_exception(std::string &message);

} // namespace regcert
