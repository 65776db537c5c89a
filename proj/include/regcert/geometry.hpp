#pragma once

#include <variant>
#include <vector>

#include "regcert/linalg.hpp"

namespace regcert {

// All transforms map points in continuous voxel-index space (unit spacing,
// origin at voxel (0,0,0)) to points in the same kind of space.

class TranslationTransform {
public:
    TranslationTransform() = default;
    explicit TranslationTransform(const Vec3 &t);

    const Vec3 &offset() const { return t_; }
    Point3 apply(const Point3 &p) const { return p + t_; }

private:
    Vec3 t_{};
};

class AffineTransform {
public:
    AffineTransform() : a_(Mat3::identity()) {}
    AffineTransform(const Mat3 &a, const Vec3 &b);

    static AffineTransform identity() { return {}; }
    /// Linear map acting about `center`: p -> center + A (p - center) + shift.
    static AffineTransform about(const Mat3 &a, const Point3 &center, const Vec3 &shift = {});

    const Mat3 &matrix() const { return a_; }
    const Vec3 &offset() const { return b_; }
    Point3 apply(const Point3 &p) const { return a_ * p + b_; }
    AffineTransform inverse() const;

private:
    Mat3 a_;
    Vec3 b_{};
};

/// Cubic B-spline free-form deformation. Control node k along an axis sits
/// at voxel coordinate (k - 1) * spacing, so one ring of nodes lies outside
/// the domain on the low side and at least two on the high side.
class BSplineTransform {
public:
    BSplineTransform(int spacing, const Shape3 &domain, std::vector<Vec3> coefficients);

    /// All-zero control displacements.
    static BSplineTransform zero(int spacing, const Shape3 &domain);
    /// Node count per axis needed to cover `domain`.
    static Shape3 node_grid(int spacing, const Shape3 &domain);

    int spacing() const { return spacing_; }
    const Shape3 &domain() const { return domain_; }
    const Shape3 &nodes() const { return nodes_; }
    const std::vector<Vec3> &coefficients() const { return coeffs_; }

    /// Displacement d(p), so that the transform maps p to p + d(p). Outside
    /// the domain the boundary cell's cubic is continued polynomially.
    Vec3 displacement(const Point3 &p) const;
    /// Jacobian of d at p (the transform's Jacobian is I + this).
    Mat3 displacement_jacobian(const Point3 &p) const;
    Point3 apply(const Point3 &p) const { return p + displacement(p); }

private:
    int spacing_;
    Shape3 domain_;
    Shape3 nodes_;
    std::vector<Vec3> coeffs_;
};

/// Dense displacement field on a voxel grid: map(y) = y + displacement(y).
class DenseTransform {
public:
    DenseTransform() = default;
    DenseTransform(const Shape3 &shape, std::vector<Vec3> displacement);

    static DenseTransform identity(const Shape3 &shape);

    const Shape3 &shape() const { return shape_; }
    const std::vector<Vec3> &displacements() const { return disp_; }
    const Vec3 &displacement(std::size_t voxel) const { return disp_[voxel]; }
    /// Mapped position of a voxel center.
    Point3 at(std::size_t voxel) const { return shape_.point(voxel) + disp_[voxel]; }

    /// Trilinear interpolation of the displacement, sampling position clamped
    /// to the grid.
    Vec3 interpolate(const Point3 &p) const;
    Point3 apply(const Point3 &p) const { return p + interpolate(p); }

private:
    Shape3 shape_{};
    std::vector<Vec3> disp_;
};

using Transform = std::variant<TranslationTransform, AffineTransform, BSplineTransform, DenseTransform>;

/// t(p). Throws std::invalid_argument("invalid point") for non-finite p.
Point3 evaluate(const Transform &t, const Point3 &p);

/// Domain shape carried by spline and dense variants; nullptr for analytic
/// variants without a grid.
const Shape3 *domain_of(const Transform &t);

/// Dense field d on `grid` with d(y) = outer(inner(y)) at every voxel center.
/// Spline/analytic outer transforms are evaluated exactly at inner(y).
DenseTransform compose(const Transform &outer, const Transform &inner, const Shape3 &grid);
/// Same, on the inner field's own grid.
DenseTransform compose(const Transform &outer, const DenseTransform &inner);
/// Exact composition of two affines: outer(inner(p)).
AffineTransform compose(const AffineTransform &outer, const AffineTransform &inner);

/// `t` sampled at every voxel center of `grid`.
DenseTransform render(const Transform &t, const Shape3 &grid);

struct InverseResult {
    Transform inverse;
    /// max over grid voxels of |t(t^-1(y)) - y|; zero for closed-form inverses.
    double residual = 0.0;
    int iterations = 0;
};

struct InversionOptions {
    double tol = 1e-3;
    int max_iter = 50;
};

/// Closed form for translation/affine. Spline and dense variants are
/// inverted on their grid by the fixed point u <- -d(y + u); throws
/// NumericError("inversion failed") when the residual exceeds 10 * tol.
InverseResult invert(const Transform &t, const InversionOptions &opts = {});

struct PointInverse {
    Point3 point;
    double residual = 0.0;
};

/// Solves t(x) = p for a single point (Newton iteration on the analytic
/// Jacobian; closed form for translation/affine).
PointInverse invert_point(const Transform &t, const Point3 &p, double tol = 1e-12, int max_iter = 100);

struct JacobianResult {
    Mat3 matrix;
    /// True when a dense field had to fall back to one-sided differences.
    bool one_sided = false;
};

/// Affine: A. Translation: I. B-spline: analytic basis derivatives.
/// Dense: central differences with a 1-voxel step.
JacobianResult jacobian_at(const Transform &t, const Point3 &p);

/// Cubic uniform B-spline basis weights at fractional position u.
std::array<double, 4> bspline_weights(double u);
std::array<double, 4> bspline_derivative_weights(double u);

} // namespace regcert
