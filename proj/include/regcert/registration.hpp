#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "regcert/geometry.hpp"
#include "regcert/volume.hpp"

namespace regcert {

/// Per-call context from the uncertainty harness. Solvers ignore it; the
/// oracle reads the perturbation and derives its noise stream from the nonce.
struct RegisterCall {
    const Transform *perturbation = nullptr;
    std::uint64_t nonce = 0;
};

/// f(source, target) -> dense map from target-domain points to source-domain
/// points, on the target grid.
class RegistrationBackend {
public:
    virtual ~RegistrationBackend() = default;
    virtual DenseTransform register_pair(const Volume3 &source, const Volume3 &target,
                                         const RegisterCall &call = {}) const = 0;
    virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// Error model

/// Scalar summary h(tau) used by tau-dependent error moments.
///   None:        h = 0
///   LinearScale: h = tr(J_tau(center)) / 3, the mean linear scale
///   Shift:       h = |tau(center) - center|
enum class TauFeature { None, LinearScale, Shift };

/// f(tau) = offset + gain * h(tau).
struct TauFactor {
    TauFeature feature = TauFeature::None;
    double offset = 1.0;
    double gain = 0.0;

    double operator()(const Transform &tau, const Shape3 &grid) const;
};

/// Residual distribution eps(tau; y) ~ N(mu(tau; y), Sigma(tau; y)).
struct ErrorModel {
    enum class CovKind { Zero, Isotropic, Constant };

    /// Constant mean, replaced per voxel by `mean_field` when that is set.
    Vec3 mean{};
    std::vector<Vec3> mean_field;
    TauFactor mean_factor;

    CovKind cov_kind = CovKind::Zero;
    double sigma = 0.0;
    Mat3 cov{};
    TauFactor cov_factor;

    std::uint64_t seed = 0;

    static ErrorModel none() { return {}; }
    static ErrorModel gaussian(const Vec3 &mean, double sigma, std::uint64_t seed = 0);
    static ErrorModel gaussian(const Vec3 &mean, const Mat3 &cov, std::uint64_t seed = 0);

    Vec3 mean_at(const Transform &tau, const Shape3 &grid, std::size_t voxel) const;
    Mat3 cov_at(const Transform &tau, const Shape3 &grid, std::size_t voxel) const;
    bool deterministic() const { return cov_kind == CovKind::Zero; }

    /// Throws std::invalid_argument for a non-symmetric or indefinite
    /// covariance, or a mean field of the wrong size.
    void validate(const Shape3 &grid) const;
};

struct OracleOutput {
    DenseTransform field;
    /// max over voxels of |tau(v) - phi(y)| for the solved v = tau^-1(phi(y)).
    double inversion_residual = 0.0;
};

/// Synthetic backend that returns (tau^-1 o phi)(y) + eps(y) with eps drawn
/// from the error model, independently per voxel. The noise stream depends
/// only on (model seed, nonce).
class OracleBackend : public RegistrationBackend {
public:
    OracleBackend(Transform true_transform, ErrorModel model, const Shape3 &grid);

    const Transform &true_transform() const { return truth_; }
    const ErrorModel &error_model() const { return model_; }
    const Shape3 &grid() const { return grid_; }
    /// phi(y) at every voxel center of the grid.
    const std::vector<Point3> &truth_points() const { return phi_; }

    OracleOutput run(const Transform &tau, std::uint64_t nonce) const;

    DenseTransform register_pair(const Volume3 &source, const Volume3 &target,
                                 const RegisterCall &call = {}) const override;
    std::string name() const override { return "oracle"; }

private:
    Transform truth_;
    ErrorModel model_;
    Shape3 grid_;
    std::vector<Point3> phi_;
};

OracleOutput oracle_register(const OracleBackend &oracle, const Transform &tau, std::uint64_t nonce);

// ---------------------------------------------------------------------------
// Solvers

struct IterationLog {
    int level = 0;
    int iteration = 0;
    double cost = 0.0;
    bool accepted = true;
};

struct AffineSsdOptions {
    int levels = 3;
    int iters = 60;
    /// Fraction of the damped Gauss-Newton step applied per iteration.
    double step = 1.0;
};

struct AffineSsdResult {
    AffineTransform transform;
    DenseTransform field;
    double ssd = 0.0;
    /// The step solve failed or a trial cost went non-finite; best-so-far returned.
    bool diverged = false;
    int iterations = 0;
    std::vector<IterationLog> log;
};

/// Multi-resolution (x2 per level) SSD minimization over the 12 affine
/// parameters. The result maps target points into the source.
AffineSsdResult affine_ssd_register(const Volume3 &source, const Volume3 &target, const AffineSsdOptions &opts = {});

class AffineSsdBackend : public RegistrationBackend {
public:
    explicit AffineSsdBackend(AffineSsdOptions opts = {}) : opts_(opts) {}
    DenseTransform register_pair(const Volume3 &source, const Volume3 &target,
                                 const RegisterCall &call = {}) const override;
    std::string name() const override { return "affine-ssd"; }
    const AffineSsdOptions &options() const { return opts_; }

private:
    AffineSsdOptions opts_;
};

struct DemonsOptions {
    int iters = 100;
    /// Gaussian smoothing of the displacement field after every update (voxels).
    double smooth_sigma = 1.5;
};

struct DemonsResult {
    DenseTransform field;
    std::vector<IterationLog> log;
};

/// Thirion demons: u <- smooth(u + (T - S o phi) grad(S o phi) /
/// (|grad|^2 + (T - S o phi)^2)), with a zero update where the denominator
/// vanishes. `initial` seeds the displacement.
DemonsResult demons_register(const Volume3 &source, const Volume3 &target, const DemonsOptions &opts = {},
                             const DenseTransform *initial = nullptr);

class DemonsBackend : public RegistrationBackend {
public:
    explicit DemonsBackend(DemonsOptions opts = {}) : opts_(opts) {}
    DenseTransform register_pair(const Volume3 &source, const Volume3 &target,
                                 const RegisterCall &call = {}) const override;
    std::string name() const override { return "demons"; }
    const DemonsOptions &options() const { return opts_; }

private:
    DemonsOptions opts_;
};

/// Separable Gaussian smoothing of a displacement field, clamped border.
DenseTransform smooth_field(const DenseTransform &field, double sigma);

/// Block-average downsampling by 2 along every axis with extent > 1.
Volume3 downsample2(const Volume3 &v);

} // namespace regcert
