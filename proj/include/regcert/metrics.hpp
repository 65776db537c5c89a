#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "regcert/registration.hpp"
#include "regcert/volume.hpp"

namespace regcert {

struct ErrorMap {
    /// |pred(y) - truth(y)| in voxels; zero outside the mask.
    Volume3 error;
    RoiMask mask;
};

/// Throws std::invalid_argument when pred, mask, and truth domain disagree.
ErrorMap error_map(const DenseTransform &pred, const Transform &truth, const RoiMask &mask);

/// Channel-0 values of the voxels inside the mask, in index order.
std::vector<double> masked_values(const Volume3 &v, const RoiMask &mask);

/// nullopt when either input is constant (undefined, not zero).
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);
std::optional<double> pearson(const Volume3 &a, const Volume3 &b, const RoiMask &mask);
std::optional<double> spearman(const Volume3 &a, const Volume3 &b, const RoiMask &mask);

/// Ranks starting at 1; tied values share the average of their ranks.
std::vector<double> average_ranks(std::span<const double> v);

struct RiskCoverageCurve {
    std::vector<double> coverage;
    std::vector<double> risk;
    /// Mean uncertainty of the equal-count bin each point falls in.
    std::vector<double> bin_mean_uncertainty;
    double aurc = 0.0;
    double oracle_aurc = 0.0;
    double random_aurc = 0.0;
    /// nullopt when random_aurc == oracle_aurc.
    std::optional<double> naurc;
    int bins = 0;
};

/// Voxels sorted by uncertainty ascending, ties by position; risk(k/M) is
/// the mean error of the first k. AURC is the mean of all M prefix means.
RiskCoverageCurve risk_coverage(std::span<const double> error, std::span<const double> uncertainty, int bins = 20);
RiskCoverageCurve risk_coverage(const ErrorMap &error, const Volume3 &uncertainty, int bins = 20);

/// Header `coverage,risk,bin_mean_uncertainty`, one row per point.
std::string risk_coverage_csv(const RiskCoverageCurve &curve);

struct MseReport {
    int draws = 0;
    std::vector<double> empirical;
    /// |mu|^2 + tr Sigma
    std::vector<double> predicted;
    double max_relative_error = 0.0;
    double mean_empirical = 0.0;
    double mean_predicted = 0.0;
};

/// Draws the oracle residual `draws` times with tau = identity and compares
/// the per-voxel mean squared residual with its bias-variance closed form.
MseReport mse_decomposition_check(const OracleBackend &oracle, int draws);

} // namespace regcert
