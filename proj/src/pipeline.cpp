#include "regcert/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include <json.hpp>

#include "regcert/errors.hpp"
#include "regcert/metrics.hpp"
#include "regcert/parallel.hpp"
#include "regcert/perturb.hpp"
#include "regcert/uncertainty.hpp"
#include "regcert/volume_io.hpp"

namespace regcert {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Sub-seed tags. Each consumer gets its own stream of the global seed unless
// its section names a seed explicitly.
enum SeedTag : std::uint64_t {
    kPhantomSeed = 1,
    kGtSeed = 2,
    kPerturbSeed = 3,
    kNoiseSeed = 4,
    kFixedPhantomSeed = 5,
};

std::uint64_t derive_seed(std::uint64_t global, SeedTag tag) { return splitmix64(global ^ splitmix64(tag)); }

/// Read-only view of a config object that rejects unknown keys.
class Section {
public:
    Section(const json &j, std::string name, std::set<std::string> allowed) : name_(std::move(name)) {
        if (j.is_null()) return;
        if (!j.is_object()) throw ConfigError(name_ + ": expected an object");
        for (const auto &[k, v] : j.items())
            if (!allowed.count(k)) throw ConfigError(name_ + ": unknown key '" + k + "'");
        j_ = j;
    }

    bool has(const std::string &key) const { return j_.contains(key); }
    const json &raw(const std::string &key) const { return j_.at(key); }

    template <class T> T get(const std::string &key, const T &fallback) const {
        if (!j_.contains(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception &) {
            throw ConfigError(name_ + "." + key + ": wrong type");
        }
    }

private:
    std::string name_;
    json j_ = json::object();
};

json load_config(const fs::path &path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error &e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> top = {"seed",       "phantom", "ground_truth", "perturbation", "backend",
                                              "estimate",   "metrics", "lemma_check",  "debug"};
    for (const auto &[k, v] : j.items())
        if (!top.count(k)) throw ConfigError("unknown config section '" + k + "'");
    return j;
}

const json &section(const json &cfg, const char *name) {
    static const json null;
    return cfg.contains(name) ? cfg.at(name) : null;
}

std::uint64_t global_seed(const json &cfg, const RunOptions &opts) {
    if (opts.seed) return *opts.seed;
    if (!cfg.contains("seed")) return 0;
    if (!cfg.at("seed").is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
    return cfg.at("seed").get<std::uint64_t>();
}

Shape3 parse_shape(const json &j, const std::string &where) {
    if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected [x, y, z]");
    Shape3 s{};
    try {
        s = {j[0].get<std::int64_t>(), j[1].get<std::int64_t>(), j[2].get<std::int64_t>()};
    } catch (const json::exception &) {
        throw ConfigError(where + ": expected integers");
    }
    if (!s.valid()) throw ConfigError(where + ": extents must be positive");
    return s;
}

Vec3 parse_vec(const json &j, const std::string &where) {
    if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected [x, y, z]");
    try {
        return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
    } catch (const json::exception &) {
        throw ConfigError(where + ": expected numbers");
    }
}

Mat3 parse_mat(const json &j, const std::string &where) {
    if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected a 3x3 array");
    Mat3 m;
    for (std::size_t r = 0; r < 3; ++r) {
        const Vec3 row = parse_vec(j[r], where);
        for (std::size_t c = 0; c < 3; ++c) m(r, c) = row[c];
    }
    return m;
}

json vec_json(const Vec3 &v) { return json::array({v.x, v.y, v.z}); }
json shape_json(const Shape3 &s) { return json::array({s.x, s.y, s.z}); }
json mat_json(const Mat3 &m) {
    return json::array({json::array({m(0, 0), m(0, 1), m(0, 2)}), json::array({m(1, 0), m(1, 1), m(1, 2)}),
                        json::array({m(2, 0), m(2, 1), m(2, 2)})});
}

template <class F> auto config_guard(F &&f) {
    try {
        return f();
    } catch (const ConfigError &) {
        throw;
    } catch (const std::invalid_argument &e) {
        throw ConfigError(e.what());
    }
}

// ---------------------------------------------------------------------------
// Sections

struct PhantomConfig {
    Shape3 shape{48, 48, 48};
    PhantomKind kind = PhantomKind::Blobs;
    std::uint64_t seed = 0;
};

PhantomConfig parse_phantom(const json &cfg, std::uint64_t seed) {
    const Section s(section(cfg, "phantom"), "phantom", {"shape", "kind", "seed"});
    PhantomConfig p;
    if (s.has("shape")) p.shape = parse_shape(s.raw("shape"), "phantom.shape");
    p.kind = config_guard([&] { return parse_phantom_kind(s.get<std::string>("kind", "blobs")); });
    p.seed = s.get<std::uint64_t>("seed", derive_seed(seed, kPhantomSeed));
    return p;
}

GtSpec parse_gt(const json &cfg, std::uint64_t seed) {
    const Section s(section(cfg, "ground_truth"), "ground_truth",
                    {"kind", "translation_fraction", "shear_range", "scale_range", "bspline_spacing", "bspline_range",
                     "max_inversion_residual", "max_attempts", "affine_levels", "affine_iters", "demons_iters",
                     "demons_sigma", "seed"});
    GtSpec g;
    g.kind = config_guard([&] { return parse_gt_kind(s.get<std::string>("kind", "translation")); });
    g.translation_fraction = s.get("translation_fraction", g.translation_fraction);
    g.shear_range = s.get("shear_range", g.shear_range);
    if (s.has("scale_range")) {
        const auto r = s.get<std::vector<double>>("scale_range", {});
        if (r.size() != 2) throw ConfigError("ground_truth.scale_range: expected [low, high]");
        g.scale_low = r[0];
        g.scale_high = r[1];
    }
    g.bspline_spacing = s.get("bspline_spacing", g.bspline_spacing);
    g.bspline_range = s.get("bspline_range", g.bspline_range);
    g.max_inversion_residual = s.get("max_inversion_residual", g.max_inversion_residual);
    g.max_attempts = s.get("max_attempts", g.max_attempts);
    g.affine_levels = s.get("affine_levels", g.affine_levels);
    g.affine_iters = s.get("affine_iters", g.affine_iters);
    g.demons_iters = s.get("demons_iters", g.demons_iters);
    g.demons_sigma = s.get("demons_sigma", g.demons_sigma);
    g.seed = s.get<std::uint64_t>("seed", derive_seed(seed, kGtSeed));
    config_guard([&] {
        g.validate();
        return 0;
    });
    return g;
}

PerturbSpec parse_perturb_json(const json &j, const std::string &where, std::uint64_t default_seed) {
    const Section s(j, where,
                    {"family", "count", "translation_fraction", "scale_range", "shear_range", "bspline_spacing",
                     "bspline_range", "strength", "seed"});
    PerturbSpec p;
    p.family = config_guard([&] { return parse_perturb_family(s.get<std::string>("family", "translation")); });
    p.count = s.get("count", p.count);
    p.translation_fraction = s.get("translation_fraction", p.translation_fraction);
    if (s.has("scale_range")) {
        const auto r = s.get<std::vector<double>>("scale_range", {});
        if (r.size() != 2) throw ConfigError(where + ".scale_range: expected [low, high]");
        p.scale_low = r[0];
        p.scale_high = r[1];
    }
    p.shear_range = s.get("shear_range", p.shear_range);
    p.bspline_spacing = s.get("bspline_spacing", p.bspline_spacing);
    p.bspline_range = s.get("bspline_range", p.bspline_range);
    p.deform_strength = s.get("strength", p.deform_strength);
    p.seed = s.get<std::uint64_t>("seed", default_seed);
    config_guard([&] {
        p.validate();
        return 0;
    });
    return p;
}

json perturb_json(const PerturbSpec &p) {
    return {{"family", to_string(p.family)},
            {"count", p.count},
            {"translation_fraction", p.translation_fraction},
            {"scale_range", {p.scale_low, p.scale_high}},
            {"shear_range", p.shear_range},
            {"bspline_spacing", p.bspline_spacing},
            {"bspline_range", p.bspline_range},
            {"strength", p.deform_strength},
            {"seed", p.seed}};
}

TauFactor parse_factor(const json &j, const std::string &where) {
    const Section s(j, where, {"feature", "offset", "gain"});
    TauFactor f;
    const auto feature = s.get<std::string>("feature", "none");
    if (feature == "none")
        f.feature = TauFeature::None;
    else if (feature == "linear-scale")
        f.feature = TauFeature::LinearScale;
    else if (feature == "shift")
        f.feature = TauFeature::Shift;
    else
        throw ConfigError(where + ".feature: unknown '" + feature + "'");
    f.offset = s.get("offset", f.offset);
    f.gain = s.get("gain", f.gain);
    return f;
}

ErrorModel parse_error_model(const json &j, const std::string &where, std::uint64_t default_seed) {
    const Section s(j, where, {"mean", "sigma", "cov", "mean_factor", "cov_factor", "seed"});
    ErrorModel m;
    if (s.has("mean")) m.mean = parse_vec(s.raw("mean"), where + ".mean");
    if (s.has("sigma") && s.has("cov")) throw ConfigError(where + ": give either sigma or cov");
    if (s.has("sigma")) {
        m.sigma = s.get("sigma", 0.0);
        m.cov_kind = m.sigma > 0.0 ? ErrorModel::CovKind::Isotropic : ErrorModel::CovKind::Zero;
    }
    if (s.has("cov")) {
        m.cov = parse_mat(s.raw("cov"), where + ".cov");
        m.cov_kind = ErrorModel::CovKind::Constant;
    }
    if (s.has("mean_factor")) m.mean_factor = parse_factor(s.raw("mean_factor"), where + ".mean_factor");
    if (s.has("cov_factor")) m.cov_factor = parse_factor(s.raw("cov_factor"), where + ".cov_factor");
    m.seed = s.get<std::uint64_t>("seed", default_seed);
    return m;
}

struct BackendConfig {
    std::string kind = "affine-ssd";
    AffineSsdOptions affine;
    DemonsOptions demons;
    json error_model;
};

BackendConfig parse_backend(const json &cfg) {
    const Section s(section(cfg, "backend"), "backend",
                    {"kind", "levels", "iters", "step", "smooth_sigma", "error_model"});
    BackendConfig b;
    b.kind = s.get<std::string>("kind", b.kind);
    if (b.kind != "affine-ssd" && b.kind != "demons" && b.kind != "oracle")
        throw ConfigError("backend.kind: expected affine-ssd, demons, or oracle");
    b.affine.levels = s.get("levels", b.affine.levels);
    b.affine.iters = s.get("iters", b.affine.iters);
    b.affine.step = s.get("step", b.affine.step);
    b.demons.iters = s.get("iters", b.demons.iters);
    b.demons.smooth_sigma = s.get("smooth_sigma", b.demons.smooth_sigma);
    if (b.affine.levels < 1 || b.affine.iters < 1 || !(b.affine.step > 0.0) || b.demons.smooth_sigma < 0.0)
        throw ConfigError("backend: levels/iters must be >= 1, step > 0, smooth_sigma >= 0");
    if (s.has("error_model")) {
        if (b.kind != "oracle") throw ConfigError("backend.error_model applies to the oracle backend only");
        b.error_model = s.raw("error_model");
    }
    return b;
}

json transform_json(const Transform &t) {
    return std::visit(
        [](const auto &x) -> json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, TranslationTransform>) {
                return {{"type", "translation"}, {"offset", vec_json(x.offset())}};
            } else if constexpr (std::is_same_v<T, AffineTransform>) {
                return {{"type", "affine"}, {"matrix", mat_json(x.matrix())}, {"offset", vec_json(x.offset())}};
            } else if constexpr (std::is_same_v<T, BSplineTransform>) {
                return {{"type", "bspline"}, {"spacing", x.spacing()}, {"nodes", shape_json(x.nodes())}};
            } else {
                return {{"type", "dense"}, {"shape", shape_json(x.shape())}};
            }
        },
        t);
}

void write_text(const fs::path &path, const std::string &text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path &path, const json &j) { write_text(path, j.dump(2) + "\n"); }

void ensure_dir(const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

Volume3 with_geometry(Volume3 v, const Volume3 &like) {
    v.spacing = like.spacing;
    v.origin = like.origin;
    return v;
}

Volume3 sym_volume(const std::vector<SymMat3> &m, const Shape3 &shape) {
    Volume3 v = Volume3::zeros(shape, 6);
    for (std::size_t i = 0; i < m.size(); ++i)
        for (int c = 0; c < 6; ++c) v.at(i, c) = static_cast<float>(m[i].v[static_cast<std::size_t>(c)]);
    return v;
}

std::string log_csv(const std::vector<IterationLog> &log) {
    std::ostringstream os;
    os.precision(17);
    os << "level,iteration,cost,accepted\n";
    for (const auto &e : log) os << e.level << ',' << e.iteration << ',' << e.cost << ',' << (e.accepted ? 1 : 0) << '\n';
    return os.str();
}

json optional_json(const std::optional<double> &v) { return v ? json(*v) : json("undefined"); }

void apply_threads(const RunOptions &opts) { set_max_threads(opts.threads); }

} // namespace

// ---------------------------------------------------------------------------

void cmd_simulate_pair(const RunOptions &opts) {
    apply_threads(opts);
    const json cfg = load_config(opts.config);
    const std::uint64_t seed = global_seed(cfg, opts);
    const PhantomConfig phantom = parse_phantom(cfg, seed);
    const GtSpec gt_spec = parse_gt(cfg, seed);

    Volume3 source;
    json provenance;
    if (opts.import_nifti) {
        source = read_nifti(*opts.import_nifti);
        provenance = {{"nifti", opts.import_nifti->string()}};
    } else {
        source = make_phantom(phantom.shape, phantom.kind, phantom.seed);
        provenance = {{"phantom", to_string(phantom.kind)}, {"shape", shape_json(phantom.shape)}, {"seed", phantom.seed}};
    }

    GroundTruth gt;
    if (gt_spec.kind == GtKind::SolverReal) {
        const Volume3 fixed = make_phantom(source.shape, phantom.kind, derive_seed(seed, kFixedPhantomSeed));
        gt = simulate_gt(gt_spec, source.shape, {&source, &fixed});
    } else {
        gt = simulate_gt(gt_spec, source.shape);
    }

    ensure_dir(opts.out);
    const Volume3 target = with_geometry(warp(source, gt.transform), source);
    write_volume(source, opts.out / "source.rcv");
    write_volume(target, opts.out / "target.rcv");
    write_volume(with_geometry(field_volume(render(gt.transform, source.shape)), source), opts.out / "gt.rcv");

    json meta = {{"kind", to_string(gt_spec.kind)},
                 {"seed", seed},
                 {"source", provenance},
                 {"transform", transform_json(gt.transform)},
                 {"attempts", gt.attempts},
                 {"inversion_residual", gt.inversion_residual},
                 {"layers", json::array()}};
    for (const auto &layer : gt.layers) meta["layers"].push_back(transform_json(layer));
    if (gt.affine_stage) {
        meta["affine_stage"] = transform_json(*gt.affine_stage);
        meta["solver_ssd"] = gt.solver_ssd;
    }
    meta["ground_truth"] = {{"translation_fraction", gt_spec.translation_fraction},
                            {"shear_range", gt_spec.shear_range},
                            {"scale_range", {gt_spec.scale_low, gt_spec.scale_high}},
                            {"bspline_spacing", gt_spec.bspline_spacing},
                            {"bspline_range", gt_spec.bspline_range},
                            {"max_inversion_residual", gt_spec.max_inversion_residual},
                            {"max_attempts", gt_spec.max_attempts},
                            {"seed", gt_spec.seed}};
    write_json(opts.out / "gt.json", meta);
}

void cmd_estimate(const RunOptions &opts) {
    apply_threads(opts);
    const json cfg = load_config(opts.config);
    const std::uint64_t seed = global_seed(cfg, opts);
    const PerturbSpec spec = parse_perturb_json(section(cfg, "perturbation"), "perturbation",
                                                derive_seed(seed, kPerturbSeed));
    const BackendConfig bcfg = parse_backend(cfg);
    const Section est(section(cfg, "estimate"), "estimate", {"unbiased"});
    const bool debug = cfg.value("debug", false);
    UncertaintyOptions uopts;
    uopts.unbiased = est.get("unbiased", false);

    const Volume3 source = read_volume(opts.out / "source.rcv");
    const Volume3 target = read_volume(opts.out / "target.rcv");
    if (!(source.shape == target.shape)) throw ConfigError("source and target shapes differ");

    std::unique_ptr<RegistrationBackend> backend;
    const OracleBackend *oracle = nullptr;
    if (bcfg.kind == "affine-ssd") {
        backend = std::make_unique<AffineSsdBackend>(bcfg.affine);
    } else if (bcfg.kind == "demons") {
        backend = std::make_unique<DemonsBackend>(bcfg.demons);
    } else {
        const ErrorModel model =
            parse_error_model(bcfg.error_model, "backend.error_model", derive_seed(seed, kNoiseSeed));
        config_guard([&] {
            model.validate(target.shape);
            return 0;
        });
        const DenseTransform truth = field_from_volume(read_volume(opts.out / "gt.rcv"));
        auto o = std::make_unique<OracleBackend>(Transform{truth}, model, target.shape);
        oracle = o.get();
        backend = std::move(o);
    }

    const auto start = std::chrono::steady_clock::now();
    // The unperturbed prediction uses a nonce no sample can reach.
    const DenseTransform pred = backend->register_pair(source, target, {nullptr, ~std::uint64_t{0}});
    const UncertaintyResult result = estimate_uncertainty(*backend, source, target, spec, uopts);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    ensure_dir(opts.out);
    write_volume(with_geometry(result.u, target), opts.out / "u.rcv");
    write_volume(with_geometry(sym_volume(result.cov, target.shape), target), opts.out / "cov.rcv");
    write_volume(with_geometry(field_volume(result.mean_field), target), opts.out / "mean.rcv");
    write_volume(with_geometry(field_volume(pred), target), opts.out / "pred.rcv");

    double max_u = 0.0, mean_u = 0.0;
    for (std::size_t i = 0; i < result.u.data.size(); ++i) {
        max_u = std::max(max_u, static_cast<double>(result.u.data[i]));
        mean_u += (result.u.data[i] - mean_u) / static_cast<double>(i + 1);
    }
    json meta = {{"backend", backend->name()},
                 {"seed", seed},
                 {"samples", result.samples},
                 {"unbiased", result.unbiased},
                 {"perturbation", perturb_json(spec)},
                 {"max_u", max_u},
                 {"mean_u", mean_u},
                 {"peak_samples_in_flight", result.peak_samples_in_flight},
                 {"threads", max_threads()},
                 {"wall_time_seconds", seconds}};

    if (oracle) {
        const CovDecomposition dec = decompose_cov(*oracle, spec, spec.count, uopts.unbiased);
        write_volume(with_geometry(sym_volume(dec.intrinsic, target.shape), target), opts.out / "intrinsic.rcv");
        write_volume(with_geometry(sym_volume(dec.jitter, target.shape), target), opts.out / "jitter.rcv");
        meta["max_jacobian_deviation"] = dec.max_jacobian_deviation;
    }
    if (debug) {
        if (bcfg.kind == "affine-ssd")
            write_text(opts.out / "iterations.csv", log_csv(affine_ssd_register(source, target, bcfg.affine).log));
        else if (bcfg.kind == "demons")
            write_text(opts.out / "iterations.csv", log_csv(demons_register(source, target, bcfg.demons).log));
    }
    write_json(opts.out / "estimate.json", meta);
}

void cmd_evaluate(const RunOptions &opts) {
    apply_threads(opts);
    const json cfg = load_config(opts.config);
    const Section s(section(cfg, "metrics"), "metrics", {"mask", "bins", "prediction"});
    const int bins = s.get("bins", 20);
    if (bins < 1) throw ConfigError("metrics.bins must be >= 1");
    const auto prediction = s.get<std::string>("prediction", "mean");
    if (prediction != "pred" && prediction != "mean") throw ConfigError("metrics.prediction: expected pred or mean");

    const Volume3 u = read_volume(opts.out / "u.rcv");
    const DenseTransform truth = field_from_volume(read_volume(opts.out / "gt.rcv"));
    const DenseTransform pred = field_from_volume(read_volume(opts.out / (prediction + ".rcv")));
    if (!(u.shape == truth.shape()) || !(pred.shape() == truth.shape()))
        throw ConfigError("evaluate: u, prediction and ground truth shapes differ");
    RoiMask mask = RoiMask::full(truth.shape());
    if (s.has("mask")) {
        mask = RoiMask::from_volume(read_volume(s.get<std::string>("mask", "")));
        config_guard([&] {
            mask.validate(truth.shape());
            return 0;
        });
    }

    const ErrorMap err = error_map(pred, Transform{truth}, mask);
    const auto e = masked_values(err.error, mask);
    const auto uv = masked_values(u, mask);
    const RiskCoverageCurve curve = risk_coverage(e, uv, bins);

    ensure_dir(opts.out);
    write_volume(with_geometry(err.error, u), opts.out / "error.rcv");
    write_text(opts.out / "risk_coverage.csv", risk_coverage_csv(curve));
    write_json(opts.out / "metrics.json", {{"pearson", optional_json(pearson(uv, e))},
                                           {"spearman", optional_json(spearman(uv, e))},
                                           {"aurc", curve.aurc},
                                           {"oracle_aurc", curve.oracle_aurc},
                                           {"random_aurc", curve.random_aurc},
                                           {"naurc", optional_json(curve.naurc)},
                                           {"mask_size", e.size()},
                                           {"bins", curve.bins},
                                           {"prediction", prediction},
                                           {"mean_error", curve.random_aurc}});
}

namespace {

LemmaSetup default_corollary_setup() {
    LemmaSetup l;
    l.spec.family = PerturbFamily::Translation;
    l.model = ErrorModel::gaussian({0.5, 0.0, 0.0}, 0.5);
    return l;
}

json lemma_json(const std::string &name, const LemmaReport &r) {
    return {{"name", name},
            {"kind", "covariance"},
            {"family", to_string(r.family)},
            {"status", to_string(r.status)},
            {"note", r.note},
            {"exact", r.exact},
            {"median_relative_error", r.median_relative_error},
            {"max_relative_error_roi", r.max_relative_error_roi},
            {"mc_bound", r.mc_bound},
            {"allowance", r.allowance},
            {"max_jacobian_deviation", r.max_jacobian_deviation},
            {"max_mean_error", r.max_mean_error}};
}

} // namespace

bool cmd_lemma_check(const RunOptions &opts) {
    apply_threads(opts);
    const json cfg = load_config(opts.config);
    const std::uint64_t seed = global_seed(cfg, opts);
    const Section s(section(cfg, "lemma_check"), "lemma_check", {"checks", "mse"});

    json report = {{"seed", seed}, {"checks", json::array()}};
    bool ok = true;

    json checks = s.has("checks") ? s.raw("checks") : json::array({json::object()});
    if (!checks.is_array()) throw ConfigError("lemma_check.checks must be an array");
    for (std::size_t k = 0; k < checks.size(); ++k) {
        const std::string where = "lemma_check.checks[" + std::to_string(k) + "]";
        const Section c(checks[k], where,
                        {"name", "perturbation", "error_model", "grid", "n_mc", "phi_offset", "roi_fraction",
                         "taylor_allowance", "regime_threshold"});
        LemmaSetup l = default_corollary_setup();
        if (c.has("perturbation"))
            l.spec = parse_perturb_json(c.raw("perturbation"), where + ".perturbation",
                                        derive_seed(seed, kPerturbSeed) + k);
        else
            l.spec.seed = derive_seed(seed, kPerturbSeed) + k;
        if (c.has("error_model"))
            l.model = parse_error_model(c.raw("error_model"), where + ".error_model", derive_seed(seed, kNoiseSeed) + k);
        else
            l.model.seed = derive_seed(seed, kNoiseSeed) + k;
        if (c.has("grid")) l.grid = parse_shape(c.raw("grid"), where + ".grid");
        if (c.has("phi_offset")) l.phi = TranslationTransform{parse_vec(c.raw("phi_offset"), where + ".phi_offset")};
        l.n_mc = c.get("n_mc", l.n_mc);
        l.roi_fraction = c.get("roi_fraction", l.roi_fraction);
        l.taylor_allowance = c.get("taylor_allowance", l.taylor_allowance);
        l.regime_threshold = c.get("regime_threshold", l.regime_threshold);
        if (l.n_mc < 2) throw ConfigError(where + ".n_mc must be >= 2");
        config_guard([&] {
            l.model.validate(l.grid);
            return 0;
        });
        const LemmaReport r = verify_lemma(l);
        if (r.status == LemmaStatus::Fail) ok = false;
        report["checks"].push_back(lemma_json(c.get<std::string>("name", "check" + std::to_string(k)), r));
    }

    json mse = s.has("mse") ? s.raw("mse") : json::array();
    if (!mse.is_array()) throw ConfigError("lemma_check.mse must be an array");
    for (std::size_t k = 0; k < mse.size(); ++k) {
        const std::string where = "lemma_check.mse[" + std::to_string(k) + "]";
        const Section c(mse[k], where, {"name", "error_model", "grid", "draws", "bounds"});
        const Shape3 grid = c.has("grid") ? parse_shape(c.raw("grid"), where + ".grid") : Shape3{4, 4, 4};
        const ErrorModel model = parse_error_model(c.has("error_model") ? c.raw("error_model") : json(), where,
                                                   derive_seed(seed, kNoiseSeed) + 1000 + k);
        config_guard([&] {
            model.validate(grid);
            return 0;
        });
        const int draws = c.get("draws", 2000);
        if (draws < 1) throw ConfigError(where + ".draws must be >= 1");
        const OracleBackend oracle(TranslationTransform{}, model, grid);
        const MseReport r = mse_decomposition_check(oracle, draws);
        json entry = {{"name", c.get<std::string>("name", "mse" + std::to_string(k))},
                      {"kind", "mse"},
                      {"draws", draws},
                      {"mean_empirical", r.mean_empirical},
                      {"mean_predicted", r.mean_predicted},
                      {"max_relative_error", r.max_relative_error}};
        if (c.has("bounds")) {
            const auto b = c.get<std::vector<double>>("bounds", {});
            if (b.size() != 2) throw ConfigError(where + ".bounds: expected [low, high]");
            bool inside = true;
            for (double v : r.empirical) inside = inside && v >= b[0] && v <= b[1];
            entry["bounds"] = b;
            entry["status"] = inside ? "pass" : "fail";
            ok = ok && inside;
        }
        report["checks"].push_back(entry);
    }

    report["status"] = ok ? "pass" : "fail";
    ensure_dir(opts.out);
    write_json(opts.out / "lemma_report.json", report);
    return ok;
}

int exit_code_for_current_exception(std::string &message) {
    try {
        throw;
    } catch (const IoError &e) {
        message = e.what();
        return 3;
    } catch (const NumericError &e) {
        message = e.what();
        return 2;
    } catch (const SampleError &e) {
        message = e.what();
        return 2;
    } catch (const std::invalid_argument &e) {
        message = e.what();
        return 1;
    } catch (const json::exception &e) {
        message = e.what();
        return 1;
    } catch (const std::filesystem::filesystem_error &e) {
        message = e.what();
        return 3;
    } catch (const std::exception &e) {
        message = e.what();
        return 2;
    } catch (...) {
        message = "unknown error";
        return 2;
    }
}

} // namespace regcert
