#include "regcert/perturb.hpp"

#include <stdexcept>

#include "regcert/errors.hpp"
#include "regcert/registration.hpp"

namespace regcert {

namespace {

constexpr std::uint64_t kPerturbDomain = 0x50455254;
constexpr std::uint64_t kGroundTruthDomain = 0x47545452;

Mat3 random_shear(std::mt19937_64 &rng, double range) {
    Mat3 m = Mat3::identity();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (i != j) m(i, j) = uniform(rng, -range, range);
    return m;
}

Mat3 random_scale(std::mt19937_64 &rng, double lo, double hi) {
    const double a = uniform(rng, lo, hi);
    const double b = uniform(rng, lo, hi);
    const double c = uniform(rng, lo, hi);
    return Mat3::diag(a, b, c);
}

Vec3 random_shift(std::mt19937_64 &rng, const Shape3 &shape, double fraction) {
    Vec3 t;
    for (std::size_t a = 0; a < 3; ++a) {
        const double bound = fraction * static_cast<double>(shape[a]);
        t[a] = uniform(rng, -bound, bound);
    }
    return t;
}

} // namespace

PerturbFamily parse_perturb_family(const std::string &name) {
    if (name == "translation") return PerturbFamily::Translation;
    if (name == "scale") return PerturbFamily::Scale;
    if (name == "shear") return PerturbFamily::Shear;
    if (name == "affine") return PerturbFamily::Affine;
    if (name == "deform") return PerturbFamily::Deform;
    throw std::invalid_argument("unknown perturbation family '" + name + "'");
}

std::string to_string(PerturbFamily f) {
    switch (f) {
    case PerturbFamily::Translation: return "translation";
    case PerturbFamily::Scale: return "scale";
    case PerturbFamily::Shear: return "shear";
    case PerturbFamily::Affine: return "affine";
    case PerturbFamily::Deform: return "deform";
    }
    return "unknown";
}

void PerturbSpec::validate() const {
    if (count < 2) throw std::invalid_argument("perturbation count N must be >= 2");
    if (!(translation_fraction >= 0.0)) throw std::invalid_argument("translation_fraction must be >= 0");
    if (!(scale_low > 0.0) || !(scale_high >= scale_low)) throw std::invalid_argument("scale range must satisfy 0 < low <= high");
    if (!(shear_range >= 0.0)) throw std::invalid_argument("shear_range must be >= 0");
    if (bspline_spacing < 2) throw std::invalid_argument("bspline_spacing must be >= 2");
    if (!(bspline_range >= 0.0) || !(deform_strength >= 0.0))
        throw std::invalid_argument("bspline_range and deform_strength must be >= 0");
}

BSplineTransform random_bspline(int spacing, const Shape3 &domain, double range, std::mt19937_64 &rng) {
    const Shape3 nodes = BSplineTransform::node_grid(spacing, domain);
    std::vector<Vec3> coeffs(nodes.voxels());
    for (auto &c : coeffs) c = {uniform(rng, -range, range), uniform(rng, -range, range), uniform(rng, -range, range)};
    return {spacing, domain, std::move(coeffs)};
}

Transform sample_perturbation(const PerturbSpec &spec, const Shape3 &shape, int n) {
    spec.validate();
    if (n < 0 || n >= spec.count) throw std::invalid_argument("perturbation index out of range");
    auto rng = make_stream(spec.seed, static_cast<std::uint64_t>(n), kPerturbDomain);
    const Point3 center = shape.center();
    switch (spec.family) {
    case PerturbFamily::Translation:
        return TranslationTransform(random_shift(rng, shape, spec.translation_fraction));
    case PerturbFamily::Scale:
        return AffineTransform::about(random_scale(rng, spec.scale_low, spec.scale_high), center);
    case PerturbFamily::Shear:
        return AffineTransform::about(random_shear(rng, spec.shear_range), center);
    case PerturbFamily::Affine: {
        const Mat3 scale = random_scale(rng, spec.scale_low, spec.scale_high);
        const Mat3 shear = random_shear(rng, spec.shear_range);
        const Vec3 shift = random_shift(rng, shape, spec.translation_fraction);
        return AffineTransform::about(scale * shear, center, shift);
    }
    case PerturbFamily::Deform:
        return random_bspline(spec.bspline_spacing, shape, spec.bspline_range * spec.deform_strength, rng);
    }
    throw std::logic_error("unhandled perturbation family");
}

GtKind parse_gt_kind(const std::string &name) {
    if (name == "translation") return GtKind::Translation;
    if (name == "affine") return GtKind::Affine;
    if (name == "deform2") return GtKind::Deform2;
    if (name == "solver-real") return GtKind::SolverReal;
    throw std::invalid_argument("unknown ground-truth kind '" + name + "'");
}

std::string to_string(GtKind k) {
    switch (k) {
    case GtKind::Translation: return "translation";
    case GtKind::Affine: return "affine";
    case GtKind::Deform2: return "deform2";
    case GtKind::SolverReal: return "solver-real";
    }
    return "unknown";
}

void GtSpec::validate() const {
    if (!(translation_fraction >= 0.0) || !(shear_range >= 0.0))
        throw std::invalid_argument("ground-truth ranges must be >= 0");
    if (!(scale_low > 0.0) || !(scale_high >= scale_low)) throw std::invalid_argument("ground-truth scale range invalid");
    if (bspline_spacing < 2 || !(bspline_range >= 0.0)) throw std::invalid_argument("ground-truth B-spline parameters invalid");
    if (max_attempts < 1) throw std::invalid_argument("max_attempts must be >= 1");
}

GroundTruth simulate_gt(const GtSpec &spec, const Shape3 &shape, const ImagePair &images) {
    spec.validate();
    const Point3 center = shape.center();
    switch (spec.kind) {
    case GtKind::Translation: {
        auto rng = make_stream(spec.seed, 0, kGroundTruthDomain);
        return {TranslationTransform(random_shift(rng, shape, spec.translation_fraction)), {}, 1, 0.0, {}, 0.0};
    }
    case GtKind::Affine: {
        auto rng = make_stream(spec.seed, 0, kGroundTruthDomain);
        const Vec3 shift = random_shift(rng, shape, spec.translation_fraction);
        const Mat3 shear = random_shear(rng, spec.shear_range);
        const Mat3 scale = random_scale(rng, spec.scale_low, spec.scale_high);
        return {AffineTransform::about(scale * shear, center, shift), {}, 1, 0.0, {}, 0.0};
    }
    case GtKind::Deform2: {
        if (shape.x < 32 || shape.y < 32 || shape.z < 32)
            throw std::invalid_argument("deform2 ground truth needs a shape of at least 32 per axis");
        std::string last_error;
        for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
            auto rng = make_stream(spec.seed, static_cast<std::uint64_t>(attempt), kGroundTruthDomain);
            BSplineTransform first = random_bspline(spec.bspline_spacing, shape, spec.bspline_range, rng);
            BSplineTransform second = random_bspline(spec.bspline_spacing, shape, spec.bspline_range, rng);
            DenseTransform composed = compose(Transform{first}, Transform{second}, shape);
            try {
                const InverseResult inv =
                    invert(Transform{composed}, {.tol = spec.max_inversion_residual / 10.0, .max_iter = 200});
                return {std::move(composed), {std::move(first), std::move(second)}, attempt + 1, inv.residual, {}, 0.0};
            } catch (const NumericError &e) {
                last_error = e.what();
            }
        }
        throw NumericError("deform2: no invertible draw within " + std::to_string(spec.max_attempts) +
                           " attempts (" + last_error + ")");
    }
    case GtKind::SolverReal: {
        if (!images.source || !images.fixed)
            throw std::invalid_argument("solver-real ground truth needs a source and a fixed image");
        const Volume3 &src = *images.source;
        const Volume3 &fix = *images.fixed;
        const AffineSsdResult affine = affine_ssd_register(src, fix, {spec.affine_levels, spec.affine_iters, 1.0});
        const Volume3 moved = warp(src, Transform{affine.transform});
        const DemonsResult nonrigid = demons_register(moved, fix, {spec.demons_iters, spec.demons_sigma});
        GroundTruth gt{compose(Transform{affine.transform}, nonrigid.field), {}, 1, 0.0, affine.transform, 0.0};
        const Volume3 final_moved = warp(src, gt.transform);
        double ssd = 0.0;
        for (std::size_t i = 0; i < final_moved.voxels(); ++i) {
            const double d = static_cast<double>(final_moved.at(i)) - static_cast<double>(fix.at(i));
            ssd += d * d;
        }
        gt.solver_ssd = ssd / static_cast<double>(final_moved.voxels());
        return gt;
    }
    }
    throw std::logic_error("unhandled ground-truth kind");
}

} // namespace regcert
