#include <doctest.h>

#include <algorithm>
#include <limits>
#include <random>
#include <stdexcept>

#include "oracles.hpp"
#include "regcert/errors.hpp"
#include "regcert/geometry.hpp"
#include "regcert/perturb.hpp"

using namespace regcert;

namespace {

double max_dist(const Point3 &a, const Point3 &b) { return (a - b).norm(); }

BSplineTransform random_spline(const Shape3 &domain, int spacing, double range, unsigned seed) {
    const Shape3 nodes = BSplineTransform::node_grid(spacing, domain);
    return {spacing, domain, oracle::random_vectors(nodes.voxels(), range, seed)};
}

} // namespace

TEST_CASE("analytic evaluation") {
    CHECK(evaluate(AffineTransform{}, {3, 4, 5}) == Point3{3, 4, 5});
    CHECK(evaluate(AffineTransform(Mat3::diag(2, 2, 2), {1, 0, 0}), {1, 1, 1}) == Point3{3, 2, 2});
    CHECK(evaluate(TranslationTransform({1, -2, 0.5}), {0, 0, 0}) == Point3{1, -2, 0.5});
}

TEST_CASE("non-finite points are rejected") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(evaluate(TranslationTransform{}, {nan, 0, 0}), "invalid point", std::invalid_argument);
    CHECK_THROWS_AS(evaluate(AffineTransform{}, {0, std::numeric_limits<double>::infinity(), 0}),
                    std::invalid_argument);
}

TEST_CASE("singular affine is rejected") {
    CHECK_THROWS_AS(AffineTransform(Mat3::diag(1, 0, 1), {}), std::invalid_argument);
}

TEST_CASE("b-spline constant coefficients shift every interior point") {
    const Shape3 domain{24, 20, 16};
    const Shape3 nodes = BSplineTransform::node_grid(5, domain);
    const BSplineTransform t(5, domain, std::vector<Vec3>(nodes.voxels(), Vec3{0.5, 0, 0}));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const Point3 p{u(rng) * 23, u(rng) * 19, u(rng) * 15};
        CHECK(max_dist(evaluate(t, p), p + Vec3{0.5, 0, 0}) < 1e-9);
        CHECK(max_dist(oracle::bspline_direct(t, p), Vec3{0.5, 0, 0}) < 1e-12);
    }
}

TEST_CASE("b-spline matches direct basis summation") {
    const Shape3 domain{30, 25, 21};
    const BSplineTransform t = random_spline(domain, 7, 2.0, 4);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 300; ++i) {
        const Point3 p{u(rng) * 29, u(rng) * 24, u(rng) * 20};
        CHECK(max_dist(t.displacement(p), oracle::bspline_direct(t, p)) < 1e-12);
    }
    // Grid corners, including the far faces.
    for (const Point3 &p : {Point3{0, 0, 0}, Point3{29, 24, 20}, Point3{29, 0, 20}})
        CHECK(max_dist(t.displacement(p), oracle::bspline_direct(t, p)) < 1e-12);
}

TEST_CASE("b-spline node grid covers the domain") {
    for (int spacing : {2, 3, 10}) {
        const Shape3 domain{32, 17, 9};
        const Shape3 nodes = BSplineTransform::node_grid(spacing, domain);
        for (std::size_t a = 0; a < 3; ++a) {
            // Support of the last domain point needs node index floor((n-1)/s) + 2.
            CHECK(nodes[a] >= (domain[a] - 1) / spacing + 3);
        }
    }
    CHECK_THROWS_AS(BSplineTransform::zero(1, {8, 8, 8}), std::invalid_argument);
}

TEST_CASE("compose") {
    const Shape3 grid{6, 5, 4};
    SUBCASE("identity outer samples the inner transform") {
        const BSplineTransform phi = random_spline(grid, 3, 1.0, 9);
        const DenseTransform d = compose(TranslationTransform{}, phi, grid);
        double dev = 0.0;
        for (std::size_t i = 0; i < grid.voxels(); ++i) dev = std::max(dev, max_dist(d.at(i), phi.apply(grid.point(i))));
        CHECK(dev == 0.0);
    }
    SUBCASE("translations add") {
        const DenseTransform d = compose(TranslationTransform({1, 2, 3}), TranslationTransform({-0.5, 0.25, 4}), grid);
        for (std::size_t i = 0; i < grid.voxels(); ++i)
            CHECK(max_dist(d.at(i), grid.point(i) + Vec3{0.5, 2.25, 7}) < 1e-12);
    }
    SUBCASE("affines follow the matrix product") {
        std::mt19937_64 rng(7);
        const Mat3 a = oracle::random_matrix(rng, 0.3), c = oracle::random_matrix(rng, 0.3);
        const Vec3 b{0.3, -1, 2}, dd{1, 1, -0.5};
        const AffineTransform outer(a, b), inner(c, dd);
        const AffineTransform exact = compose(outer, inner);
        const DenseTransform dense = compose(outer, inner, grid);
        std::uniform_real_distribution<double> u(-10, 10);
        for (int i = 0; i < 10; ++i) {
            const Point3 y{u(rng), u(rng), u(rng)};
            const Point3 expect = a * (c * y + dd) + b;
            CHECK(max_dist(exact.apply(y), expect) < 1e-12);
        }
        for (std::size_t i = 0; i < grid.voxels(); ++i) {
            const Point3 y = grid.point(i);
            CHECK(max_dist(dense.at(i), a * (c * y + dd) + b) < 1e-12);
        }
    }
    SUBCASE("dense shape mismatch is an error") {
        const DenseTransform inner = DenseTransform::identity({3, 3, 3});
        CHECK_THROWS_AS(compose(DenseTransform::identity({4, 4, 4}), inner), std::invalid_argument);
        CHECK_THROWS_AS(compose(TranslationTransform{}, inner, grid), std::invalid_argument);
    }
}

TEST_CASE("dense interpolation is trilinear with clamping") {
    const Shape3 grid{5, 4, 3};
    const auto disp = oracle::random_vectors(grid.voxels(), 2.0, 13);
    const DenseTransform d(grid, disp);
    Volume3 x = Volume3::zeros(grid, 1);
    for (std::size_t i = 0; i < grid.voxels(); ++i) x.data[i] = static_cast<float>(disp[i].x);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 6.0);
    for (int i = 0; i < 200; ++i) {
        const Point3 p{u(rng), u(rng) * 0.7, u(rng) * 0.5};
        // The float copy limits the comparison to single precision.
        CHECK(d.interpolate(p).x == doctest::Approx(oracle::nested_lerp(x, p)).epsilon(1e-6));
    }
    CHECK(d.interpolate(grid.point(7)) == disp[7]);
}

TEST_CASE("closed-form inverses") {
    const InverseResult t = invert(TranslationTransform({2, -1, 0}));
    CHECK(std::get<TranslationTransform>(t.inverse).offset() == Vec3{-2, 1, 0});
    CHECK(t.residual == 0.0);
    const InverseResult a = invert(AffineTransform(Mat3::diag(2, 2, 2), {}));
    CHECK(std::get<AffineTransform>(a.inverse).matrix() == Mat3::diag(0.5, 0.5, 0.5));
}

TEST_CASE("b-spline inversion from the default perturbation distribution") {
    const Shape3 grid{32, 32, 32};
    PerturbSpec spec;
    spec.family = PerturbFamily::Deform;
    spec.seed = 21;
    for (int n = 0; n < 3; ++n) {
        const Transform tau = sample_perturbation(spec, grid, n);
        const InverseResult inv = invert(tau);
        CHECK(inv.residual < 0.05);
        // Cross-check: evaluate tau at the inverted positions.
        const auto &d = std::get<DenseTransform>(inv.inverse);
        double worst = 0.0;
        for (std::size_t i = 0; i < grid.voxels(); ++i) worst = std::max(worst, max_dist(evaluate(tau, d.at(i)), grid.point(i)));
        CHECK(worst <= inv.residual + 1e-12);
    }
}

TEST_CASE("dense inversion of a rendered field") {
    const Shape3 grid{20, 20, 20};
    const BSplineTransform t = random_spline(grid, 5, 0.5, 8);
    const DenseTransform d = render(t, grid);
    const InverseResult inv = invert(d, {1e-4, 100});
    const auto &di = std::get<DenseTransform>(inv.inverse);
    double worst = 0.0;
    for (std::size_t i = 0; i < grid.voxels(); ++i) worst = std::max(worst, max_dist(d.apply(di.at(i)), grid.point(i)));
    CHECK(worst <= inv.residual + 1e-12);
    CHECK(inv.residual < 1e-3);
}

TEST_CASE("inversion failure is reported") {
    const Shape3 grid{20, 20, 20};
    const BSplineTransform wild = random_spline(grid, 3, 8.0, 3);
    CHECK_THROWS_AS(invert(wild, {1e-6, 3}), NumericError);
    try {
        invert(wild, {1e-6, 3});
    } catch (const NumericError &e) {
        CHECK(std::string(e.what()).find("inversion failed") != std::string::npos);
    }
}

TEST_CASE("point inversion") {
    const Shape3 grid{32, 32, 32};
    PerturbSpec spec;
    spec.family = PerturbFamily::Deform;
    const Transform tau = sample_perturbation(spec, grid, 0);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 31);
    for (int i = 0; i < 100; ++i) {
        const Point3 p{u(rng), u(rng), u(rng)};
        const PointInverse v = invert_point(tau, p);
        CHECK(max_dist(evaluate(tau, v.point), p) < 1e-10);
    }
    const Transform aff = AffineTransform(Mat3::diag(2, 1, 0.5), {1, 2, 3});
    CHECK(max_dist(invert_point(aff, {3, 2, 3.5}).point, {1, 0, 1}) < 1e-15);
}

TEST_CASE("jacobians") {
    CHECK(jacobian_at(TranslationTransform({3, 1, 2}), {1, 2, 3}).matrix == Mat3::identity());
    Mat3 a = Mat3::identity();
    a(0, 1) = 0.1;
    CHECK(jacobian_at(AffineTransform(a, {1, 1, 1}), {7, -2, 5}).matrix == a);

    SUBCASE("b-spline analytic jacobian against finite differences") {
        const Shape3 grid{30, 30, 30};
        const BSplineTransform t = random_spline(grid, 10, 1.0, 17);
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> u(2, 27);
        const double h = 1e-2;
        for (int n = 0; n < 30; ++n) {
            const Point3 p{u(rng), u(rng), u(rng)};
            const Mat3 j = jacobian_at(t, p).matrix;
            for (std::size_t c = 0; c < 3; ++c) {
                Vec3 e{};
                (c == 0 ? e.x : c == 1 ? e.y : e.z) = h;
                const Vec3 col = (t.apply(p + e) - t.apply(p - e)) * (0.5 / h);
                for (std::size_t r = 0; r < 3; ++r) CHECK(std::abs(j(r, c) - col[r]) < 1e-4);
            }
        }
    }
    SUBCASE("b-spline jacobian against the kernel-derivative oracle") {
        const Shape3 grid{25, 25, 25};
        const BSplineTransform t = random_spline(grid, 6, 1.0, 23);
        const Point3 p{11.3, 7.9, 17.2};
        const Shape3 &n = t.nodes();
        const double s = t.spacing();
        Mat3 expect = Mat3::identity();
        for (std::int64_t k = 0; k < n.z; ++k)
            for (std::int64_t j = 0; j < n.y; ++j)
                for (std::int64_t i = 0; i < n.x; ++i) {
                    const double tx = (p.x - (i - 1) * s) / s, ty = (p.y - (j - 1) * s) / s, tz = (p.z - (k - 1) * s) / s;
                    const Vec3 grad{oracle::bspline_kernel_derivative(tx) * oracle::bspline_kernel(ty) * oracle::bspline_kernel(tz) / s,
                                    oracle::bspline_kernel(tx) * oracle::bspline_kernel_derivative(ty) * oracle::bspline_kernel(tz) / s,
                                    oracle::bspline_kernel(tx) * oracle::bspline_kernel(ty) * oracle::bspline_kernel_derivative(tz) / s};
                    expect += Mat3::outer(t.coefficients()[n.index(i, j, k)], grad);
                }
        CHECK(oracle::max_abs_diff(jacobian_at(t, p).matrix, expect) < 1e-12);
    }
    SUBCASE("dense finite differences, one-sided at the boundary") {
        const Shape3 grid{8, 8, 8};
        Mat3 m = Mat3::identity();
        m(0, 2) = 0.2;
        m(1, 0) = -0.1;
        const DenseTransform d = render(AffineTransform(m, {0.5, 0, 0}), grid);
        const JacobianResult inner = jacobian_at(d, {4, 4, 4});
        CHECK_FALSE(inner.one_sided);
        CHECK(oracle::max_abs_diff(inner.matrix, m) < 1e-12);
        const JacobianResult edge = jacobian_at(d, {0, 4, 7});
        CHECK(edge.one_sided);
        CHECK(oracle::max_abs_diff(edge.matrix, m) < 1e-12);
    }
}

TEST_CASE("affine composition is associative on evaluation") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-5, 5);
    for (int trial = 0; trial < 5; ++trial) {
        const AffineTransform p(oracle::random_matrix(rng, 0.3), {u(rng), u(rng), u(rng)});
        const AffineTransform q(oracle::random_matrix(rng, 0.3), {u(rng), u(rng), u(rng)});
        const AffineTransform r(oracle::random_matrix(rng, 0.3), {u(rng), u(rng), u(rng)});
        const AffineTransform left = compose(p, compose(q, r));
        const AffineTransform right = compose(compose(p, q), r);
        for (int i = 0; i < 100; ++i) {
            const Point3 y{u(rng), u(rng), u(rng)};
            CHECK(max_dist(left.apply(y), right.apply(y)) < 1e-9);
        }
    }
}

TEST_CASE("jacobian of the identity is exactly the identity") {
    const Shape3 grid{12, 12, 12};
    const Transform ids[] = {TranslationTransform{}, AffineTransform{}, BSplineTransform::zero(4, grid),
                             DenseTransform::identity(grid)};
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 11);
    for (const auto &t : ids)
        for (int i = 0; i < 50; ++i) CHECK(jacobian_at(t, {u(rng), u(rng), u(rng)}).matrix == Mat3::identity());
}
