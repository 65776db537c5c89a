#pragma once

#include <span>
#include <string>
#include <vector>

#include "regcert/perturb.hpp"
#include "regcert/registration.hpp"

namespace regcert {

struct UncertaintyOptions {
    /// Divide by N - 1 instead of N.
    bool unbiased = false;
};

/// Composed-prediction statistics over N perturbations.
struct UncertaintyResult {
    DenseTransform mean_field;
    /// Per-voxel covariance of the composed predictions.
    std::vector<SymMat3> cov;
    /// Root trace of `cov`.
    Volume3 u;
    int samples = 0;
    PerturbSpec spec;
    bool unbiased = false;
    /// Upper bound on composed sample fields held in memory at once.
    std::size_t peak_samples_in_flight = 0;
};

/// For n < N: tau_n = sample_perturbation(spec, n); A'_n = warp(source, tau_n);
/// phi_n = backend(A'_n, target); g_n = tau_n o phi_n. Returns the per-voxel
/// mean and covariance of g_n and u = sqrt(tr S). Samples are accumulated in
/// fixed blocks merged in a fixed tree order, so results are bit-identical
/// for any thread count. Throws SampleError naming the failing sample.
UncertaintyResult estimate_uncertainty(const RegistrationBackend &backend, const Volume3 &source,
                                       const Volume3 &target, const PerturbSpec &spec,
                                       const UncertaintyOptions &opts = {});

/// Intrinsic spread E[J Sigma J^T] and bias jitter Cov[J mu] per voxel,
/// with J the perturbation Jacobian at v = tau^-1(phi(y)).
struct CovDecomposition {
    Shape3 shape{};
    std::vector<SymMat3> intrinsic;
    std::vector<SymMat3> jitter;
    std::vector<SymMat3> total;
    /// E[J mu]: predicted offset of the mean field from phi.
    std::vector<Vec3> mean_shift;
    int draws = 0;
    /// max over draws and voxels of |J - I|_F.
    double max_jacobian_deviation = 0.0;
};

/// Requires an OracleBackend; any other backend throws std::invalid_argument
/// ("decomposition requires analytic error model"). Uses the same tau
/// samples as estimate_uncertainty with the same spec. Covariances use
/// divisor `draws` unless `unbiased`.
CovDecomposition decompose_cov(const RegistrationBackend &backend, const PerturbSpec &spec, int draws,
                               bool unbiased = false);

struct CovPair {
    Mat3 intrinsic;
    Mat3 jitter;
    Mat3 total() const { return intrinsic + jitter; }
};

/// E_A[A Sigma A^T] and Cov_A[A mu] (divisor = sample count) over the given
/// affine samples at point y. Throws std::invalid_argument for an empty list.
CovPair closed_form_cov_affine(std::span<const AffineTransform> samples, const ErrorModel &model, const Shape3 &grid,
                               const Point3 &y);

enum class LemmaStatus { Pass, Fail, RegimeViolation };
std::string to_string(LemmaStatus s);

struct LemmaSetup {
    PerturbSpec spec;
    ErrorModel model;
    Transform phi = TranslationTransform{};
    Shape3 grid{16, 16, 16};
    int n_mc = 2000;
    /// Central box (fraction of each axis) used for the max statistic.
    double roi_fraction = 0.5;
    /// Extra relative error tolerated for first-order (non-affine) families.
    double taylor_allowance = 0.05;
    /// Non-affine perturbations whose |J - I|_F exceeds this are outside the
    /// first-order regime.
    double regime_threshold = 0.35;
};

struct LemmaReport {
    PerturbFamily family = PerturbFamily::Translation;
    /// Translation and affine families carry no linearization error.
    bool exact = true;
    std::vector<double> relative_error;
    double median_relative_error = 0.0;
    double max_relative_error_roi = 0.0;
    /// Two standard deviations of the Monte-Carlo relative error (median
    /// over voxels), from Wishart moments of the closed form.
    double mc_bound = 0.0;
    double allowance = 0.0;
    double max_jacobian_deviation = 0.0;
    /// max over voxels of |mean field - (phi + E[J mu])|.
    double max_mean_error = 0.0;
    LemmaStatus status = LemmaStatus::Pass;
    std::string note;
};

/// Runs estimate_uncertainty with an oracle backend and compares the
/// empirical covariance with the closed-form decomposition on the same
/// perturbation samples.
LemmaReport verify_lemma(const LemmaSetup &setup);

/// Expected relative Frobenius error scale of an N-sample covariance
/// estimate, given the intrinsic and jitter parts of the closed form.
double mc_relative_error_scale(const Mat3 &intrinsic, const Mat3 &jitter, int n);

} // namespace regcert
