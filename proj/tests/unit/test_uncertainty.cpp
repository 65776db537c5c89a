#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "oracles.hpp"
#include "regcert/errors.hpp"
#include "regcert/parallel.hpp"
#include "regcert/uncertainty.hpp"

using namespace regcert;

namespace {

PerturbSpec collapsed(int count) {
    PerturbSpec s;
    s.translation_fraction = 0.0;
    s.scale_low = s.scale_high = 1.0;
    s.shear_range = 0.0;
    s.bspline_range = 0.0;
    s.count = count;
    return s;
}

double max_of(const Volume3 &v) { return *std::max_element(v.data.begin(), v.data.end()); }

// Returns a fixed per-sample field chosen by a permutation of the nonce.
class TableBackend : public RegistrationBackend {
public:
    TableBackend(Shape3 s, std::vector<std::vector<Vec3>> table, std::vector<int> order)
        : s_(s), table_(std::move(table)), order_(std::move(order)) {}
    DenseTransform register_pair(const Volume3 &, const Volume3 &, const RegisterCall &call) const override {
        return DenseTransform(s_, table_[static_cast<std::size_t>(order_[call.nonce])]);
    }
    std::string name() const override { return "table"; }

private:
    Shape3 s_;
    std::vector<std::vector<Vec3>> table_;
    std::vector<int> order_;
};

class FailingBackend : public RegistrationBackend {
public:
    DenseTransform register_pair(const Volume3 &, const Volume3 &target, const RegisterCall &call) const override {
        if (call.nonce == 5) throw NumericError("solver blew up");
        return DenseTransform::identity(target.shape);
    }
    std::string name() const override { return "failing"; }
};

} // namespace

TEST_CASE("identical samples give zero uncertainty exactly") {
    const Shape3 s{16, 16, 16};
    const Volume3 img = make_phantom(s, PhantomKind::Blobs, 0);
    SUBCASE("affine solver") {
        const UncertaintyResult r =
            estimate_uncertainty(AffineSsdBackend({2, 10, 1.0}), img, warp(img, TranslationTransform({1, 0, 0})),
                                 collapsed(4));
        CHECK(max_of(r.u) == 0.0f);
        for (const auto &c : r.cov) CHECK(c.trace() == 0.0);
    }
    SUBCASE("oracle without noise") {
        const OracleBackend oracle(TranslationTransform({0.3, 0, 0}), ErrorModel::none(), s);
        const UncertaintyResult r = estimate_uncertainty(oracle, img, img, collapsed(9));
        CHECK(max_of(r.u) == 0.0f);
        CHECK(r.samples == 9);
    }
}

TEST_CASE("noise-free oracle is equivariant for every family") {
    const Shape3 s{12, 12, 12};
    const Volume3 img = Volume3::zeros(s, 1);
    const OracleBackend oracle(AffineTransform::about(Mat3::diag(1.05, 1.0, 0.95), s.center(), {0.5, 0, -0.5}),
                               ErrorModel::none(), s);
    for (auto f : {PerturbFamily::Translation, PerturbFamily::Scale, PerturbFamily::Shear, PerturbFamily::Affine,
                   PerturbFamily::Deform}) {
        PerturbSpec spec;
        spec.family = f;
        spec.count = 8;
        const UncertaintyResult r = estimate_uncertainty(oracle, img, img, spec);
        CHECK(max_of(r.u) < 1e-6);
        for (std::size_t i = 0; i < s.voxels(); ++i)
            CHECK((r.mean_field.at(i) - evaluate(oracle.true_transform(), s.point(i))).norm() < 1e-6);
    }
}

TEST_CASE("translation perturbations with isotropic noise: mean trace near 3 sigma^2") {
    const Shape3 s{16, 16, 16};
    const OracleBackend oracle(TranslationTransform{}, ErrorModel::gaussian({}, 0.5, 1), s);
    PerturbSpec spec;
    spec.count = 2000;
    const Volume3 img = Volume3::zeros(s, 1);
    const UncertaintyResult r = estimate_uncertainty(oracle, img, img, spec);
    double mean_trace = 0.0;
    for (const auto &c : r.cov) mean_trace += c.trace();
    mean_trace /= static_cast<double>(r.cov.size());
    CHECK(mean_trace >= 0.70);
    CHECK(mean_trace <= 0.80);
    for (std::size_t i = 0; i < s.voxels(); ++i)
        CHECK(static_cast<double>(r.u.at(i)) == doctest::Approx(std::sqrt(r.cov[i].trace())).epsilon(1e-6));
}

TEST_CASE("divisor choice") {
    const Shape3 s{4, 4, 4};
    const OracleBackend oracle(TranslationTransform{}, ErrorModel::gaussian({}, 1.0, 2), s);
    PerturbSpec spec;
    spec.count = 10;
    const Volume3 img = Volume3::zeros(s, 1);
    const UncertaintyResult biased = estimate_uncertainty(oracle, img, img, spec);
    const UncertaintyResult unbiased = estimate_uncertainty(oracle, img, img, spec, {.unbiased = true});
    CHECK_FALSE(biased.unbiased);
    CHECK(unbiased.unbiased);
    for (std::size_t i = 0; i < s.voxels(); ++i)
        CHECK(unbiased.cov[i].trace() == doctest::Approx(biased.cov[i].trace() * 10.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("covariance matches a direct two-pass computation") {
    const Shape3 s{3, 2, 2};
    const int n = 37;
    std::vector<std::vector<Vec3>> table;
    std::vector<int> order(n);
    for (int k = 0; k < n; ++k) {
        order[static_cast<std::size_t>(k)] = k;
        std::vector<Vec3> f(s.voxels());
        for (std::size_t i = 0; i < f.size(); ++i)
            f[i] = {std::sin(0.7 * k + static_cast<double>(i)), std::cos(1.3 * k) * static_cast<double>(i), 0.01 * k * k};
        table.push_back(f);
    }
    const TableBackend backend(s, table, order);
    const Volume3 img = Volume3::zeros(s, 1);
    const UncertaintyResult r = estimate_uncertainty(backend, img, img, collapsed(n));
    for (std::size_t i = 0; i < s.voxels(); ++i) {
        Vec3 mean{};
        for (const auto &f : table) mean += f[i];
        mean = mean * (1.0 / n);
        Mat3 cov{};
        for (const auto &f : table) cov = cov + Mat3::outer(f[i] - mean, f[i] - mean);
        cov = cov * (1.0 / n);
        const Mat3 got = r.cov[i].full();
        for (std::size_t k = 0; k < 9; ++k) CHECK(got.m[k] == doctest::Approx(cov.m[k]).epsilon(1e-10).scale(1e-12));
        CHECK((r.mean_field.displacement(i) - mean).norm() < 1e-12);
    }
}

TEST_CASE("sample order does not change the estimate beyond rounding") {
    const Shape3 s{2, 2, 2};
    const int n = 25;
    std::vector<std::vector<Vec3>> table;
    for (int k = 0; k < n; ++k) {
        std::vector<Vec3> f(s.voxels());
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = {std::sin(3.1 * k + i), 0.5 * std::cos(k * 0.9), 1e3 + k};
        table.push_back(f);
    }
    std::vector<int> forward(n), backward(n);
    for (int k = 0; k < n; ++k) {
        forward[static_cast<std::size_t>(k)] = k;
        backward[static_cast<std::size_t>(k)] = n - 1 - k;
    }
    const Volume3 img = Volume3::zeros(s, 1);
    const auto a = estimate_uncertainty(TableBackend(s, table, forward), img, img, collapsed(n));
    const auto b = estimate_uncertainty(TableBackend(s, table, backward), img, img, collapsed(n));
    for (std::size_t i = 0; i < s.voxels(); ++i)
        CHECK(a.cov[i].trace() == doctest::Approx(b.cov[i].trace()).epsilon(1e-12));
}

TEST_CASE("results do not depend on the thread count") {
    const Shape3 s{10, 10, 10};
    const OracleBackend oracle(TranslationTransform{}, ErrorModel::gaussian({0.2, 0, 0}, 0.7, 3), s);
    PerturbSpec spec;
    spec.family = PerturbFamily::Affine;
    spec.count = 50;
    const Volume3 img = Volume3::zeros(s, 1);
    set_max_threads(1);
    const UncertaintyResult one = estimate_uncertainty(oracle, img, img, spec);
    set_max_threads(4);
    const UncertaintyResult four = estimate_uncertainty(oracle, img, img, spec);
    set_max_threads(0);
    CHECK(one.u.data == four.u.data);
    CHECK(one.mean_field.displacements() == four.mean_field.displacements());
}

TEST_CASE("estimate_uncertainty errors") {
    const Shape3 s{6, 6, 6};
    const Volume3 img = Volume3::zeros(s, 1);
    SUBCASE("backend failure names the sample") {
        try {
            estimate_uncertainty(FailingBackend(), img, img, collapsed(8));
            FAIL("expected SampleError");
        } catch (const SampleError &e) {
            CHECK(e.sample() == 5);
            CHECK(std::string(e.what()).find("solver blew up") != std::string::npos);
        }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(estimate_uncertainty(FailingBackend(), img, Volume3::zeros({6, 6, 5}, 1), collapsed(2)),
                        std::invalid_argument);
    }
    SUBCASE("fewer than two samples") {
        CHECK_THROWS_AS(estimate_uncertainty(FailingBackend(), img, img, collapsed(1)), std::invalid_argument);
    }
}

TEST_CASE("decomposition needs the analytic error model") {
    PerturbSpec spec;
    CHECK_THROWS_WITH_AS(decompose_cov(AffineSsdBackend(), spec, 10),
                         doctest::Contains("decomposition requires analytic error model"), std::invalid_argument);
}

TEST_CASE("decomposition: deterministic network has no intrinsic spread") {
    const Shape3 s{4, 4, 4};
    const OracleBackend oracle(TranslationTransform{}, ErrorModel::gaussian({1, -1, 0.5}, 0.0), s);
    PerturbSpec spec;
    spec.family = PerturbFamily::Affine;
    spec.count = 100;
    const CovDecomposition d = decompose_cov(oracle, spec, spec.count);
    for (std::size_t i = 0; i < s.voxels(); ++i) {
        CHECK(d.intrinsic[i].trace() == 0.0);
        CHECK(d.total[i].trace() == d.jitter[i].trace());
        CHECK(d.jitter[i].trace() > 0.0);
    }
}

TEST_CASE("decomposition: translations with constant moments") {
    const Shape3 s{4, 4, 4};
    Mat3 cov = Mat3::diag(0.3, 0.2, 0.1);
    cov(0, 1) = cov(1, 0) = 0.05;
    const OracleBackend oracle(TranslationTransform{}, ErrorModel::gaussian({1, 2, 3}, cov), s);
    PerturbSpec spec;
    spec.count = 40;
    const CovDecomposition d = decompose_cov(oracle, spec, spec.count);
    for (std::size_t i = 0; i < s.voxels(); ++i) {
        CHECK(oracle::max_abs_diff(d.intrinsic[i].full(), cov) < 1e-14);
        CHECK(d.jitter[i].trace() == 0.0);
    }
    CHECK(d.max_jacobian_deviation == 0.0);
}

TEST_CASE("decomposition: scale perturbations against exact uniform moments") {
    const Shape3 s{2, 2, 2};
    const OracleBackend oracle(TranslationTransform{}, ErrorModel::gaussian({1, 0, 0}, 0.2), s);
    PerturbSpec spec;
    spec.family = PerturbFamily::Scale;
    spec.count = 20000;
    const CovDecomposition d = decompose_cov(oracle, spec, spec.count);

    // U(a, b): E[s^2] = (b^3 - a^3) / (3 (b - a)), Var[s] = (b - a)^2 / 12.
    const double a = 0.9, b = 1.1;
    const double es2 = (b * b * b - a * a * a) / (3.0 * (b - a));
    const double var = (b - a) * (b - a) / 12.0;
    CHECK(es2 == doctest::Approx(1.0033333333333334));
    CHECK(var == doctest::Approx(0.0033333333333333335));

    // Same samples, accumulated here without the library's reduction.
    double sum_s2[3] = {0, 0, 0}, sum_s = 0, sum_sq = 0;
    for (int n = 0; n < spec.count; ++n) {
        const auto t = std::get<AffineTransform>(sample_perturbation(spec, s, n));
        for (std::size_t k = 0; k < 3; ++k) sum_s2[k] += t.matrix()(k, k) * t.matrix()(k, k);
        sum_s += t.matrix()(0, 0);
        sum_sq += t.matrix()(0, 0) * t.matrix()(0, 0);
    }
    const double m = spec.count;
    const double sample_var = sum_sq / m - (sum_s / m) * (sum_s / m);

    for (std::size_t i = 0; i < s.voxels(); ++i) {
        const Mat3 in = d.intrinsic[i].full();
        const Mat3 ji = d.jitter[i].full();
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(in(k, k) == doctest::Approx(0.04 * sum_s2[k] / m).epsilon(1e-10));
            CHECK(in(k, k) == doctest::Approx(0.04 * es2).epsilon(2e-3));
        }
        CHECK(in(0, 1) == 0.0);
        CHECK(ji(0, 0) == doctest::Approx(sample_var).epsilon(1e-6));
        CHECK(ji(0, 0) == doctest::Approx(var).epsilon(0.03));
        CHECK(ji(1, 1) == 0.0);
        CHECK(ji(2, 2) == 0.0);
        for (std::size_t k = 0; k < 9; ++k) CHECK(d.total[i].full().m[k] == doctest::Approx(in.m[k] + ji.m[k]));
    }
}

TEST_CASE("closed form over affine samples") {
    const Shape3 s{4, 4, 4};
    const ErrorModel model = ErrorModel::gaussian({1, 0, 0}, 1.0);
    SUBCASE("identity and doubling") {
        const std::vector<AffineTransform> samples{AffineTransform{}, AffineTransform(Mat3::diag(2, 2, 2), {})};
        const CovPair c = closed_form_cov_affine(samples, model, s, {1, 1, 1});
        CHECK(oracle::max_abs_diff(c.intrinsic, Mat3::diag(2.5, 2.5, 2.5)) < 1e-15);
        CHECK(oracle::max_abs_diff(c.jitter, Mat3::diag(0.25, 0, 0)) < 1e-15);
        CHECK(oracle::max_abs_diff(c.total(), Mat3::diag(2.75, 2.5, 2.5)) < 1e-15);
    }
    SUBCASE("identity samples reduce to the error model") {
        const std::vector<AffineTransform> samples(5);
        const CovPair c = closed_form_cov_affine(samples, model, s, {0, 0, 0});
        CHECK(oracle::max_abs_diff(c.intrinsic, Mat3::identity()) < 1e-15);
        CHECK(oracle::max_abs_diff(c.jitter, Mat3{}) == 0.0);
    }
    SUBCASE("single sample has no jitter") {
        const std::vector<AffineTransform> samples{AffineTransform(Mat3::diag(1.2, 0.8, 1.0), {3, 0, 0})};
        CHECK(oracle::max_abs_diff(closed_form_cov_affine(samples, model, s, {0, 0, 0}).jitter, Mat3{}) == 0.0);
    }
    SUBCASE("empty") {
        CHECK_THROWS_AS(closed_form_cov_affine({}, model, s, {0, 0, 0}), std::invalid_argument);
    }
}

TEST_CASE("monte carlo error scale") {
    // Pure intrinsic sigma^2 I: E|S - C|_F^2 = (9 + 3) sigma^4 / N and |C|_F = sqrt(3) sigma^2.
    const double scale = mc_relative_error_scale(Mat3::identity() * 0.25, Mat3{}, 100);
    CHECK(scale == doctest::Approx(std::sqrt(12.0 / 100.0) / std::sqrt(3.0)));
    CHECK(mc_relative_error_scale(Mat3{}, Mat3{}, 10) == 0.0);
}

TEST_CASE("lemma verification") {
    LemmaSetup setup;
    setup.grid = {8, 8, 8};
    setup.n_mc = 2000;
    SUBCASE("translation family with constant noise") {
        setup.spec.family = PerturbFamily::Translation;
        setup.model = ErrorModel::gaussian({0.5, 0, 0}, 0.5, 7);
        const LemmaReport r = verify_lemma(setup);
        CHECK(r.status == LemmaStatus::Pass);
        CHECK(r.exact);
        CHECK(r.median_relative_error < 0.10);
        CHECK(r.median_relative_error <= r.mc_bound);
    }
    SUBCASE("affine family is exact") {
        setup.spec.family = PerturbFamily::Affine;
        setup.model = ErrorModel::gaussian({1, -1, 0}, 0.5, 8);
        const LemmaReport r = verify_lemma(setup);
        CHECK(r.status == LemmaStatus::Pass);
        CHECK(r.exact);
        CHECK(r.allowance == 0.0);
        CHECK(r.median_relative_error < 0.10);
    }
    SUBCASE("weak spline perturbations are within the first-order allowance") {
        setup.grid = {12, 12, 12};
        setup.n_mc = 1000;
        setup.spec.family = PerturbFamily::Deform;
        setup.spec.deform_strength = 0.02;
        setup.model = ErrorModel::gaussian({0.5, 0.5, 0}, 0.5, 9);
        const LemmaReport r = verify_lemma(setup);
        CHECK(r.status == LemmaStatus::Pass);
        CHECK_FALSE(r.exact);
        CHECK(r.allowance == 0.05);
    }
    SUBCASE("strong spline perturbations are flagged, not failed") {
        setup.grid = {12, 12, 12};
        setup.n_mc = 200;
        setup.spec.family = PerturbFamily::Deform;
        setup.spec.deform_strength = 0.3;
        setup.model = ErrorModel::gaussian({0.5, 0.5, 0}, 0.5, 9);
        const LemmaReport r = verify_lemma(setup);
        CHECK(r.status == LemmaStatus::RegimeViolation);
        CHECK(r.max_jacobian_deviation > setup.regime_threshold);
        CHECK(to_string(r.status) == "regime_violation");
    }
}
