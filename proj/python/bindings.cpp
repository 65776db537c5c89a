// Python bindings. Arrays follow numpy order: a volume of Shape3{x, y, z} is
// an array of shape (z, y, x), fields add a trailing axis of 3 holding
// (dx, dy, dz) displacements in voxels.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "regcert/errors.hpp"
#include "regcert/metrics.hpp"
#include "regcert/parallel.hpp"
#include "regcert/pipeline.hpp"
#include "regcert/uncertainty.hpp"
#include "regcert/volume_io.hpp"

namespace py = pybind11;
using namespace regcert;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Shape3 shape_from_zyx(const std::vector<std::int64_t> &zyx) {
    if (zyx.size() != 3) throw std::invalid_argument("shape must have three entries (z, y, x)");
    return {zyx[2], zyx[1], zyx[0]};
}

std::vector<py::ssize_t> zyx(const Shape3 &s) { return {s.z, s.y, s.x}; }

py::array_t<float> to_numpy(const Volume3 &v) {
    auto dims = zyx(v.shape);
    if (v.channels > 1) dims.push_back(v.channels);
    py::array_t<float> out(dims);
    std::copy(v.data.begin(), v.data.end(), out.mutable_data());
    return out;
}

Volume3 volume_from(const FloatArray &a) {
    if (a.ndim() != 3 && a.ndim() != 4) throw std::invalid_argument("expected a (z, y, x) or (z, y, x, c) array");
    const Shape3 s{a.shape(2), a.shape(1), a.shape(0)};
    Volume3 v = Volume3::zeros(s, a.ndim() == 4 ? static_cast<int>(a.shape(3)) : 1);
    std::copy(a.data(), a.data() + a.size(), v.data.begin());
    return v;
}

py::array_t<double> to_numpy(const DenseTransform &t) {
    auto dims = zyx(t.shape());
    dims.push_back(3);
    py::array_t<double> out(dims);
    double *p = out.mutable_data();
    for (const auto &d : t.displacements()) {
        *p++ = d.x;
        *p++ = d.y;
        *p++ = d.z;
    }
    return out;
}

DenseTransform field_from(const DoubleArray &a) {
    if (a.ndim() != 4 || a.shape(3) != 3) throw std::invalid_argument("expected a (z, y, x, 3) displacement array");
    const Shape3 s{a.shape(2), a.shape(1), a.shape(0)};
    std::vector<Vec3> d(s.voxels());
    const double *p = a.data();
    for (auto &v : d) {
        v = {p[0], p[1], p[2]};
        p += 3;
    }
    return {s, std::move(d)};
}

py::array_t<double> sym_to_numpy(const std::vector<SymMat3> &m, const Shape3 &s) {
    auto dims = zyx(s);
    dims.push_back(6);
    py::array_t<double> out(dims);
    double *p = out.mutable_data();
    for (const auto &x : m)
        for (double v : x.v) *p++ = v;
    return out;
}

std::vector<double> flat(const DoubleArray &a) { return {a.data(), a.data() + a.size()}; }

py::object optional_float(const std::optional<double> &v) { return v ? py::object(py::float_(*v)) : py::none(); }

RunOptions run_options(const std::string &config, const std::string &out, std::optional<std::uint64_t> seed,
                       unsigned threads) {
    RunOptions o;
    o.config = config;
    o.out = out;
    o.seed = seed;
    o.threads = threads;
    return o;
}

} // namespace

PYBIND11_MODULE(_regcert, m) {
    m.doc() = "Perturbation-based registration uncertainty";

    py::register_exception<NumericError>(m, "NumericError", PyExc_RuntimeError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<SampleError>(m, "SampleError", PyExc_RuntimeError);

    m.def("set_max_threads", &set_max_threads, py::arg("n"));

    m.def(
        "make_phantom",
        [](const std::vector<std::int64_t> &shape, const std::string &kind, std::uint64_t seed) {
            return to_numpy(make_phantom(shape_from_zyx(shape), parse_phantom_kind(kind), seed));
        },
        py::arg("shape"), py::arg("kind") = "blobs", py::arg("seed") = 0);

    m.def(
        "simulate_gt",
        [](const std::vector<std::int64_t> &shape, const std::string &kind, std::uint64_t seed, double bspline_range,
           int max_attempts) {
            GtSpec g;
            g.kind = parse_gt_kind(kind);
            g.seed = seed;
            g.bspline_range = bspline_range;
            g.max_attempts = max_attempts;
            const Shape3 s = shape_from_zyx(shape);
            const GroundTruth gt = simulate_gt(g, s);
            py::dict out;
            out["displacement"] = to_numpy(render(gt.transform, s));
            out["attempts"] = gt.attempts;
            out["inversion_residual"] = gt.inversion_residual;
            out["layers"] = gt.layers.size();
            return out;
        },
        py::arg("shape"), py::arg("kind") = "translation", py::arg("seed") = 0, py::arg("bspline_range") = 12.5,
        py::arg("max_attempts") = 10);

    m.def(
        "warp",
        [](const FloatArray &image, const DoubleArray &displacement) {
            return to_numpy(warp(volume_from(image), Transform{field_from(displacement)}));
        },
        py::arg("image"), py::arg("displacement"));

    m.def(
        "estimate_uncertainty",
        [](const FloatArray &source, const FloatArray &target, const std::string &backend, const std::string &family,
           int count, std::uint64_t seed, double deform_strength, std::optional<DoubleArray> truth,
           std::array<double, 3> error_mean, double error_sigma, std::uint64_t error_seed, bool unbiased) {
            const Volume3 src = volume_from(source);
            const Volume3 tgt = volume_from(target);
            PerturbSpec spec;
            spec.family = parse_perturb_family(family);
            spec.count = count;
            spec.seed = seed;
            spec.deform_strength = deform_strength;
            std::unique_ptr<RegistrationBackend> b;
            if (backend == "affine-ssd") {
                b = std::make_unique<AffineSsdBackend>();
            } else if (backend == "demons") {
                b = std::make_unique<DemonsBackend>();
            } else if (backend == "oracle") {
                if (!truth) throw std::invalid_argument("the oracle backend needs the true displacement field");
                b = std::make_unique<OracleBackend>(
                    Transform{field_from(*truth)},
                    ErrorModel::gaussian({error_mean[0], error_mean[1], error_mean[2]}, error_sigma, error_seed),
                    tgt.shape);
            } else {
                throw std::invalid_argument("unknown backend '" + backend + "'");
            }
            UncertaintyResult r;
            {
                py::gil_scoped_release release;
                r = estimate_uncertainty(*b, src, tgt, spec, {.unbiased = unbiased});
            }
            py::dict out;
            out["u"] = to_numpy(r.u);
            out["cov"] = sym_to_numpy(r.cov, tgt.shape);
            out["mean"] = to_numpy(r.mean_field);
            out["samples"] = r.samples;
            return out;
        },
        py::arg("source"), py::arg("target"), py::arg("backend") = "affine-ssd", py::arg("family") = "translation",
        py::arg("count") = 50, py::arg("seed") = 0, py::arg("deform_strength") = 0.08, py::arg("truth") = py::none(),
        py::arg("error_mean") = std::array<double, 3>{0, 0, 0}, py::arg("error_sigma") = 0.0,
        py::arg("error_seed") = 0, py::arg("unbiased") = false);

    m.def(
        "error_map",
        [](const DoubleArray &pred, const DoubleArray &truth) {
            const DenseTransform p = field_from(pred);
            return to_numpy(error_map(p, Transform{field_from(truth)}, RoiMask::full(p.shape())).error);
        },
        py::arg("pred"), py::arg("truth"));

    m.def(
        "pearson", [](const DoubleArray &a, const DoubleArray &b) { return optional_float(pearson(flat(a), flat(b))); },
        py::arg("a"), py::arg("b"));
    m.def(
        "spearman",
        [](const DoubleArray &a, const DoubleArray &b) { return optional_float(spearman(flat(a), flat(b))); },
        py::arg("a"), py::arg("b"));

    m.def(
        "risk_coverage",
        [](const DoubleArray &error, const DoubleArray &uncertainty, int bins) {
            const RiskCoverageCurve c = risk_coverage(flat(error), flat(uncertainty), bins);
            py::dict out;
            out["coverage"] = c.coverage;
            out["risk"] = c.risk;
            out["bin_mean_uncertainty"] = c.bin_mean_uncertainty;
            out["aurc"] = c.aurc;
            out["oracle_aurc"] = c.oracle_aurc;
            out["random_aurc"] = c.random_aurc;
            out["naurc"] = optional_float(c.naurc);
            return out;
        },
        py::arg("error"), py::arg("uncertainty"), py::arg("bins") = 20);

    m.def(
        "verify_lemma",
        [](const std::string &family, std::array<double, 3> mean, double sigma, const std::vector<std::int64_t> &grid,
           int n_mc, double deform_strength, std::uint64_t seed) {
            LemmaSetup s;
            s.spec.family = parse_perturb_family(family);
            s.spec.deform_strength = deform_strength;
            s.spec.seed = seed;
            s.model = ErrorModel::gaussian({mean[0], mean[1], mean[2]}, sigma, seed + 1);
            s.grid = shape_from_zyx(grid);
            s.n_mc = n_mc;
            LemmaReport r;
            {
                py::gil_scoped_release release;
                r = verify_lemma(s);
            }
            py::dict out;
            out["status"] = to_string(r.status);
            out["note"] = r.note;
            out["exact"] = r.exact;
            out["median_relative_error"] = r.median_relative_error;
            out["max_relative_error_roi"] = r.max_relative_error_roi;
            out["mc_bound"] = r.mc_bound;
            out["allowance"] = r.allowance;
            out["max_jacobian_deviation"] = r.max_jacobian_deviation;
            return out;
        },
        py::arg("family") = "translation", py::arg("mean") = std::array<double, 3>{0.5, 0, 0}, py::arg("sigma") = 0.5,
        py::arg("grid") = std::vector<std::int64_t>{16, 16, 16}, py::arg("n_mc") = 2000,
        py::arg("deform_strength") = 0.08, py::arg("seed") = 0);

    m.def(
        "read_volume", [](const std::filesystem::path &p) { return to_numpy(read_volume(p)); }, py::arg("path"));
    m.def(
        "write_volume", [](const FloatArray &a, const std::filesystem::path &p) { write_volume(volume_from(a), p); },
        py::arg("array"), py::arg("path"));

    // Config-driven commands, same files as the command-line tool.
    const auto command = [&m](const char *name, auto fn) {
        m.def(
            name,
            [fn](const std::string &config, const std::string &out, std::optional<std::uint64_t> seed,
                 unsigned threads) {
                py::gil_scoped_release release;
                return fn(run_options(config, out, seed, threads));
            },
            py::arg("config") = "", py::arg("out") = ".", py::arg("seed") = py::none(), py::arg("threads") = 0);
    };
    command("simulate_pair", [](const RunOptions &o) { cmd_simulate_pair(o); });
    command("estimate", [](const RunOptions &o) { cmd_estimate(o); });
    command("evaluate", [](const RunOptions &o) { cmd_evaluate(o); });
    command("lemma_check", [](const RunOptions &o) { return cmd_lemma_check(o); });
}
