#include "regcert/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "regcert/errors.hpp"
#include "regcert/parallel.hpp"

namespace regcert {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_finite(const Point3 &p) {
    if (!p.finite()) throw std::invalid_argument("invalid point");
}

struct CellCoord {
    std::int64_t cell;
    double frac;
};

CellCoord spline_cell(double p, int spacing, std::int64_t nodes) {
    const double s = p / static_cast<double>(spacing);
    const auto last = nodes - 4;
    auto cell = static_cast<std::int64_t>(std::floor(s));
    cell = std::clamp<std::int64_t>(cell, 0, last);
    return {cell, s - static_cast<double>(cell)};
}

} // namespace

std::array<double, 4> bspline_weights(double u) {
    const double v = 1.0 - u;
    const double u2 = u * u;
    const double u3 = u2 * u;
    return {v * v * v / 6.0, (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0, (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
            u3 / 6.0};
}

std::array<double, 4> bspline_derivative_weights(double u) {
    const double v = 1.0 - u;
    const double u2 = u * u;
    return {-0.5 * v * v, 1.5 * u2 - 2.0 * u, -1.5 * u2 + u + 0.5, 0.5 * u2};
}

// ---------------------------------------------------------------------------

TranslationTransform::TranslationTransform(const Vec3 &t) : t_(t) {
    if (!t.finite()) throw std::invalid_argument("translation must be finite");
}

AffineTransform::AffineTransform(const Mat3 &a, const Vec3 &b) : a_(a), b_(b) {
    if (!a.finite() || !b.finite()) throw std::invalid_argument("affine entries must be finite");
    if (a.det() == 0.0) throw std::invalid_argument("affine matrix is singular");
}

AffineTransform AffineTransform::about(const Mat3 &a, const Point3 &center, const Vec3 &shift) {
    return {a, center - a * center + shift};
}

AffineTransform AffineTransform::inverse() const {
    const Mat3 inv = a_.inverse();
    return {inv, -(inv * b_)};
}

BSplineTransform::BSplineTransform(int spacing, const Shape3 &domain, std::vector<Vec3> coefficients)
    : spacing_(spacing), domain_(domain), coeffs_(std::move(coefficients)) {
    if (spacing < 2) throw std::invalid_argument("B-spline spacing must be >= 2");
    if (!domain.valid()) throw std::invalid_argument("B-spline domain must be positive");
    nodes_ = node_grid(spacing, domain);
    if (coeffs_.size() != nodes_.voxels())
        throw std::invalid_argument("B-spline coefficient count " + std::to_string(coeffs_.size()) +
                                    " does not match node grid " + std::to_string(nodes_.voxels()));
    for (const auto &c : coeffs_)
        if (!c.finite()) throw std::invalid_argument("B-spline coefficients must be finite");
}

Shape3 BSplineTransform::node_grid(int spacing, const Shape3 &domain) {
    auto axis = [spacing](std::int64_t n) { return (n - 1) / spacing + 4; };
    return {axis(domain.x), axis(domain.y), axis(domain.z)};
}

BSplineTransform BSplineTransform::zero(int spacing, const Shape3 &domain) {
    return {spacing, domain, std::vector<Vec3>(node_grid(spacing, domain).voxels())};
}

Vec3 BSplineTransform::displacement(const Point3 &p) const {
    const auto cx = spline_cell(p.x, spacing_, nodes_.x);
    const auto cy = spline_cell(p.y, spacing_, nodes_.y);
    const auto cz = spline_cell(p.z, spacing_, nodes_.z);
    const auto wx = bspline_weights(cx.frac);
    const auto wy = bspline_weights(cy.frac);
    const auto wz = bspline_weights(cz.frac);
    Vec3 d;
    for (int c = 0; c < 4; ++c) {
        for (int b = 0; b < 4; ++b) {
            const double wyz = wy[b] * wz[c];
            const std::size_t row = nodes_.index(cx.cell, cy.cell + b, cz.cell + c);
            for (int a = 0; a < 4; ++a) d += (wx[a] * wyz) * coeffs_[row + static_cast<std::size_t>(a)];
        }
    }
    return d;
}

Mat3 BSplineTransform::displacement_jacobian(const Point3 &p) const {
    const auto cx = spline_cell(p.x, spacing_, nodes_.x);
    const auto cy = spline_cell(p.y, spacing_, nodes_.y);
    const auto cz = spline_cell(p.z, spacing_, nodes_.z);
    const auto wx = bspline_weights(cx.frac);
    const auto wy = bspline_weights(cy.frac);
    const auto wz = bspline_weights(cz.frac);
    const auto dx = bspline_derivative_weights(cx.frac);
    const auto dy = bspline_derivative_weights(cy.frac);
    const auto dz = bspline_derivative_weights(cz.frac);
    const double h = 1.0 / static_cast<double>(spacing_);
    Vec3 gx, gy, gz; // d/dx, d/dy, d/dz of the displacement vector
    for (int c = 0; c < 4; ++c) {
        for (int b = 0; b < 4; ++b) {
            const std::size_t row = nodes_.index(cx.cell, cy.cell + b, cz.cell + c);
            for (int a = 0; a < 4; ++a) {
                const Vec3 &k = coeffs_[row + static_cast<std::size_t>(a)];
                gx += (dx[a] * wy[b] * wz[c]) * k;
                gy += (wx[a] * dy[b] * wz[c]) * k;
                gz += (wx[a] * wy[b] * dz[c]) * k;
            }
        }
    }
    Mat3 j;
    for (std::size_t r = 0; r < 3; ++r) {
        j(r, 0) = gx[r] * h;
        j(r, 1) = gy[r] * h;
        j(r, 2) = gz[r] * h;
    }
    return j;
}

DenseTransform::DenseTransform(const Shape3 &shape, std::vector<Vec3> displacement)
    : shape_(shape), disp_(std::move(displacement)) {
    if (!shape.valid()) throw std::invalid_argument("dense transform shape must be positive");
    if (disp_.size() != shape.voxels()) throw std::invalid_argument("dense transform shape/displacement mismatch");
    for (const auto &d : disp_)
        if (!d.finite()) throw std::invalid_argument("dense transform displacement must be finite");
}

DenseTransform DenseTransform::identity(const Shape3 &shape) {
    return {shape, std::vector<Vec3>(shape.voxels())};
}

Vec3 DenseTransform::interpolate(const Point3 &p) const {
    std::array<std::int64_t, 3> lo{};
    std::array<std::int64_t, 3> hi{};
    std::array<double, 3> f{};
    for (std::size_t a = 0; a < 3; ++a) {
        const std::int64_t n = shape_[a];
        const double c = std::clamp(p[a], 0.0, static_cast<double>(n - 1));
        if (n == 1) {
            lo[a] = hi[a] = 0;
            f[a] = 0.0;
            continue;
        }
        lo[a] = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(c)), n - 2);
        hi[a] = lo[a] + 1;
        f[a] = c - static_cast<double>(lo[a]);
    }
    auto at = [&](std::int64_t i, std::int64_t j, std::int64_t k) -> const Vec3 & {
        return disp_[shape_.index(i, j, k)];
    };
    const Vec3 c00 = at(lo[0], lo[1], lo[2]) * (1.0 - f[0]) + at(hi[0], lo[1], lo[2]) * f[0];
    const Vec3 c10 = at(lo[0], hi[1], lo[2]) * (1.0 - f[0]) + at(hi[0], hi[1], lo[2]) * f[0];
    const Vec3 c01 = at(lo[0], lo[1], hi[2]) * (1.0 - f[0]) + at(hi[0], lo[1], hi[2]) * f[0];
    const Vec3 c11 = at(lo[0], hi[1], hi[2]) * (1.0 - f[0]) + at(hi[0], hi[1], hi[2]) * f[0];
    const Vec3 c0 = c00 * (1.0 - f[1]) + c10 * f[1];
    const Vec3 c1 = c01 * (1.0 - f[1]) + c11 * f[1];
    return c0 * (1.0 - f[2]) + c1 * f[2];
}

// ---------------------------------------------------------------------------

Point3 evaluate(const Transform &t, const Point3 &p) {
    require_finite(p);
    return std::visit([&](const auto &v) { return v.apply(p); }, t);
}

const Shape3 *domain_of(const Transform &t) {
    return std::visit(overloaded{[](const BSplineTransform &b) -> const Shape3 * { return &b.domain(); },
                                 [](const DenseTransform &d) -> const Shape3 * { return &d.shape(); },
                                 [](const auto &) -> const Shape3 * { return nullptr; }},
                      t);
}

DenseTransform compose(const Transform &outer, const Transform &inner, const Shape3 &grid) {
    if (!grid.valid()) throw std::invalid_argument("compose: grid shape must be positive");
    if (const Shape3 *d = domain_of(inner); d && !(*d == grid))
        throw std::invalid_argument("compose: inner transform shape mismatch");
    if (const Shape3 *d = domain_of(outer); d && !(*d == grid))
        throw std::invalid_argument("compose: outer transform shape mismatch");

    std::vector<Vec3> out(grid.voxels());
    parallel_for(out.size(), [&](std::size_t i) {
        const Point3 y = grid.point(i);
        const Point3 q = std::visit(
            overloaded{[&](const DenseTransform &d) { return d.at(i); }, [&](const auto &v) { return v.apply(y); }},
            inner);
        out[i] = evaluate(outer, q) - y;
    });
    return {grid, std::move(out)};
}

DenseTransform compose(const Transform &outer, const DenseTransform &inner) {
    const Shape3 &grid = inner.shape();
    if (const Shape3 *d = domain_of(outer); d && !(*d == grid))
        throw std::invalid_argument("compose: outer transform shape mismatch");
    std::vector<Vec3> out(grid.voxels());
    parallel_for(out.size(), [&](std::size_t i) { out[i] = evaluate(outer, inner.at(i)) - grid.point(i); });
    return {grid, std::move(out)};
}

AffineTransform compose(const AffineTransform &outer, const AffineTransform &inner) {
    return {outer.matrix() * inner.matrix(), outer.matrix() * inner.offset() + outer.offset()};
}

DenseTransform render(const Transform &t, const Shape3 &grid) {
    return compose(Transform{TranslationTransform{}}, t, grid);
}

// ---------------------------------------------------------------------------

namespace {

template <class Displacement>
InverseResult invert_on_grid(const Shape3 &grid, Displacement &&disp, const InversionOptions &opts) {
    std::vector<Vec3> u(grid.voxels());
    std::vector<double> update(grid.voxels());
    int iterations = 0;
    for (; iterations < opts.max_iter;) {
        parallel_for(u.size(), [&](std::size_t i) {
            const Point3 y = grid.point(i);
            const Vec3 next = -disp(y + u[i]);
            update[i] = (next - u[i]).norm();
            u[i] = next;
        });
        ++iterations;
        if (*std::max_element(update.begin(), update.end()) < opts.tol) break;
    }
    std::vector<double> res(grid.voxels());
    parallel_for(u.size(), [&](std::size_t i) {
        const Point3 y = grid.point(i);
        res[i] = (u[i] + disp(y + u[i])).norm();
    });
    const double residual = *std::max_element(res.begin(), res.end());
    if (!(residual <= 10.0 * opts.tol))
        throw NumericError("inversion failed: residual " + std::to_string(residual) + " after " +
                           std::to_string(iterations) + " iterations");
    return {Transform{DenseTransform(grid, std::move(u))}, residual, iterations};
}

} // namespace

InverseResult invert(const Transform &t, const InversionOptions &opts) {
    if (!(opts.tol > 0.0) || opts.max_iter < 1) throw std::invalid_argument("invert: tol and max_iter must be positive");
    return std::visit(
        overloaded{
            [](const TranslationTransform &tr) { return InverseResult{TranslationTransform(-tr.offset()), 0.0, 0}; },
            [](const AffineTransform &a) { return InverseResult{a.inverse(), 0.0, 0}; },
            [&](const BSplineTransform &b) {
                return invert_on_grid(b.domain(), [&](const Point3 &p) { return b.displacement(p); }, opts);
            },
            [&](const DenseTransform &d) {
                return invert_on_grid(d.shape(), [&](const Point3 &p) { return d.interpolate(p); }, opts);
            }},
        t);
}

PointInverse invert_point(const Transform &t, const Point3 &p, double tol, int max_iter) {
    require_finite(p);
    if (const auto *tr = std::get_if<TranslationTransform>(&t)) {
        const Point3 x = p - tr->offset();
        return {x, (tr->apply(x) - p).norm()};
    }
    if (const auto *a = std::get_if<AffineTransform>(&t)) {
        const Point3 x = a->matrix().inverse() * (p - a->offset());
        return {x, (a->apply(x) - p).norm()};
    }
    Point3 x = p;
    double r = (evaluate(t, x) - p).norm();
    for (int it = 0; it < max_iter && r > tol; ++it) {
        const Vec3 f = evaluate(t, x) - p;
        const Mat3 j = jacobian_at(t, x).matrix;
        const double det = j.det();
        Point3 next = std::abs(det) > 1e-8 ? x - j.inverse() * f : x - f;
        double rn = (evaluate(t, next) - p).norm();
        if (!(rn < r)) {
            // Newton overshoot: fall back to the damped fixed-point step.
            next = x - 0.5 * f;
            rn = (evaluate(t, next) - p).norm();
        }
        x = next;
        r = rn;
    }
    return {x, r};
}

JacobianResult jacobian_at(const Transform &t, const Point3 &p) {
    require_finite(p);
    return std::visit(
        overloaded{[](const TranslationTransform &) { return JacobianResult{Mat3::identity(), false}; },
                   [](const AffineTransform &a) { return JacobianResult{a.matrix(), false}; },
                   [&](const BSplineTransform &b) {
                       return JacobianResult{Mat3::identity() + b.displacement_jacobian(p), false};
                   },
                   [&](const DenseTransform &d) {
                       JacobianResult out{Mat3::identity(), false};
                       const Shape3 &s = d.shape();
                       for (std::size_t axis = 0; axis < 3; ++axis) {
                           const double n = static_cast<double>(s[axis]);
                           if (s[axis] == 1) continue;
                           Point3 lo = p;
                           Point3 hi = p;
                           double h = 2.0;
                           if (p[axis] - 1.0 < 0.0) {
                               h = 1.0;
                               hi[axis] += 1.0;
                               out.one_sided = true;
                           } else if (p[axis] + 1.0 > n - 1.0) {
                               h = 1.0;
                               lo[axis] -= 1.0;
                               out.one_sided = true;
                           } else {
                               lo[axis] -= 1.0;
                               hi[axis] += 1.0;
                           }
                           const Vec3 g = (d.interpolate(hi) - d.interpolate(lo)) * (1.0 / h);
                           for (std::size_t r = 0; r < 3; ++r) out.matrix(r, axis) += g[r];
                       }
                       return out;
                   }},
        t);
}

} // namespace regcert
