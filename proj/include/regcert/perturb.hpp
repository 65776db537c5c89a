#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "regcert/geometry.hpp"
#include "regcert/random.hpp"
#include "regcert/volume.hpp"

namespace regcert {

enum class PerturbFamily { Translation, Scale, Shear, Affine, Deform };

PerturbFamily parse_perturb_family(const std::string &name);
std::string to_string(PerturbFamily f);

/// Random perturbation distribution. Defaults reproduce the test-time
/// sampling ranges: translation 1% of the image shape per axis, scale
/// U(0.9, 1.1), shear U(-0.02, 0.02), B-spline grid 10 voxels with node
/// displacement U(-12.5, 12.5) times `deform_strength`, N = 50.
///
/// `Affine` draws scale, shear and translation together.
struct PerturbSpec {
    PerturbFamily family = PerturbFamily::Translation;
    double translation_fraction = 0.01;
    double scale_low = 0.9;
    double scale_high = 1.1;
    double shear_range = 0.02;
    int bspline_spacing = 10;
    double bspline_range = 12.5;
    double deform_strength = 0.08;
    std::uint64_t seed = 0;
    int count = 50;

    void validate() const;
};

/// Sample n of the distribution; depends only on (spec, shape, n).
/// Scale and shear act about the domain center, which stays fixed.
Transform sample_perturbation(const PerturbSpec &spec, const Shape3 &shape, int n);

enum class GtKind { Translation, Affine, Deform2, SolverReal };

GtKind parse_gt_kind(const std::string &name);
std::string to_string(GtKind k);

/// Simulated ground-truth transform distribution. Defaults: translation 10%
/// of the shape, shear U(-0.1, 0.1), scale U(0.8, 1.2), two B-spline layers
/// with spacing 10 and node displacement U(-12.5, 12.5).
struct GtSpec {
    GtKind kind = GtKind::Translation;
    double translation_fraction = 0.1;
    double shear_range = 0.1;
    double scale_low = 0.8;
    double scale_high = 1.2;
    int bspline_spacing = 10;
    double bspline_range = 12.5;
    /// deform2 draws whose grid inversion residual exceeds this are redrawn.
    double max_inversion_residual = 0.5;
    int max_attempts = 10;
    /// solver-real: registration settings for the affine and demons stages.
    int affine_levels = 3;
    int affine_iters = 60;
    int demons_iters = 50;
    double demons_sigma = 1.5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct GroundTruth {
    Transform transform;
    /// deform2: the two spline layers, composed as layers[0] o layers[1].
    std::vector<BSplineTransform> layers;
    int attempts = 1;
    double inversion_residual = 0.0;
    /// solver-real: the affine stage and final SSD.
    std::optional<AffineTransform> affine_stage;
    double solver_ssd = 0.0;
};

/// Pair of images used by the solver-real protocol: the solver registers
/// `moving` (source) to `fixed`, and its estimate becomes the ground truth.
struct ImagePair {
    const Volume3 *source = nullptr;
    const Volume3 *fixed = nullptr;
};

/// Draws a ground-truth transform. Throws NumericError when deform2 cannot
/// find an invertible draw within max_attempts.
GroundTruth simulate_gt(const GtSpec &spec, const Shape3 &shape, const ImagePair &images = {});

/// Random B-spline with iid U(-range, range) node displacements.
BSplineTransform random_bspline(int spacing, const Shape3 &domain, double range, std::mt19937_64 &rng);

} // namespace regcert
