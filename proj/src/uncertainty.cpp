#include "regcert/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "regcert/errors.hpp"
#include "regcert/parallel.hpp"

namespace regcert {

namespace {

constexpr int kBlockSize = 8;

/// Per-voxel running mean and scatter of a 3-vector sample, plus an
/// optional plain sum of a symmetric matrix per voxel.
struct FieldMoments {
    std::size_t count = 0;
    std::vector<Vec3> mean;
    std::vector<SymMat3> m2;
    std::vector<SymMat3> extra;
    double max_extra_scalar = 0.0;

    FieldMoments(std::size_t voxels, bool with_extra)
        : mean(voxels), m2(voxels), extra(with_extra ? voxels : 0) {}

    void add(std::span<const Vec3> x) {
        ++count;
        const double inv = 1.0 / static_cast<double>(count);
        for (std::size_t i = 0; i < mean.size(); ++i) {
            const Vec3 delta = x[i] - mean[i];
            mean[i] += delta * inv;
            const Vec3 after = x[i] - mean[i];
            auto &s = m2[i].v;
            s[0] += delta.x * after.x;
            s[1] += 0.5 * (delta.x * after.y + delta.y * after.x);
            s[2] += 0.5 * (delta.x * after.z + delta.z * after.x);
            s[3] += delta.y * after.y;
            s[4] += 0.5 * (delta.y * after.z + delta.z * after.y);
            s[5] += delta.z * after.z;
        }
    }

    /// Chan et al. pairwise combination; `other` follows `this` in order.
    void merge(const FieldMoments &other) {
        if (other.count == 0) return;
        if (count == 0) {
            *this = other;
            return;
        }
        const double na = static_cast<double>(count);
        const double nb = static_cast<double>(other.count);
        const double n = na + nb;
        for (std::size_t i = 0; i < mean.size(); ++i) {
            const Vec3 delta = other.mean[i] - mean[i];
            mean[i] += delta * (nb / n);
            const double w = na * nb / n;
            auto &s = m2[i].v;
            const auto &o = other.m2[i].v;
            s[0] += o[0] + w * delta.x * delta.x;
            s[1] += o[1] + w * delta.x * delta.y;
            s[2] += o[2] + w * delta.x * delta.z;
            s[3] += o[3] + w * delta.y * delta.y;
            s[4] += o[4] + w * delta.y * delta.z;
            s[5] += o[5] + w * delta.z * delta.z;
        }
        for (std::size_t i = 0; i < extra.size(); ++i)
            for (std::size_t k = 0; k < 6; ++k) extra[i].v[k] += other.extra[i].v[k];
        max_extra_scalar = std::max(max_extra_scalar, other.max_extra_scalar);
        count += other.count;
    }
};

/// Processes samples [0, n) in blocks of kBlockSize, computing a wave of
/// blocks in parallel and folding block results into a binary-counter
/// stack. The merge tree depends only on n.
template <class MakeAcc, class Process>
FieldMoments reduce_samples(int n, MakeAcc &&make, Process &&process, std::size_t *peak_in_flight = nullptr) {
    const int blocks = (n + kBlockSize - 1) / kBlockSize;
    const int wave = static_cast<int>(std::max(1u, max_threads()));
    if (peak_in_flight)
        *peak_in_flight = static_cast<std::size_t>(std::min(wave, blocks)) * static_cast<std::size_t>(kBlockSize);

    std::vector<std::pair<int, FieldMoments>> stack;
    for (int first = 0; first < blocks; first += wave) {
        const int count = std::min(wave, blocks - first);
        std::vector<std::unique_ptr<FieldMoments>> results(static_cast<std::size_t>(count));
        parallel_for(static_cast<std::size_t>(count), [&](std::size_t b) {
            auto acc = std::make_unique<FieldMoments>(make());
            const int block = first + static_cast<int>(b);
            const int end = std::min(n, (block + 1) * kBlockSize);
            for (int s = block * kBlockSize; s < end; ++s) {
                try {
                    process(s, *acc);
                } catch (const SampleError &) {
                    throw;
                } catch (const std::exception &e) {
                    throw SampleError(s, e.what());
                }
            }
            results[b] = std::move(acc);
        });
        for (auto &r : results) {
            stack.emplace_back(0, std::move(*r));
            while (stack.size() >= 2 && stack[stack.size() - 1].first == stack[stack.size() - 2].first) {
                auto top = std::move(stack.back());
                stack.pop_back();
                stack.back().second.merge(top.second);
                ++stack.back().first;
            }
        }
    }
    FieldMoments total = std::move(stack.front().second);
    for (std::size_t i = 1; i < stack.size(); ++i) total.merge(stack[i].second);
    return total;
}

SymMat3 scaled(const SymMat3 &s, double f) {
    SymMat3 r = s;
    for (auto &v : r.v) v *= f;
    return r;
}

SymMat3 congruence(const Mat3 &j, const Mat3 &sigma) { return SymMat3::from(j * sigma * j.transpose()); }

const OracleBackend &require_oracle(const RegistrationBackend &backend) {
    const auto *oracle = dynamic_cast<const OracleBackend *>(&backend);
    if (!oracle) throw std::invalid_argument("decomposition requires analytic error model");
    return *oracle;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (v.size() % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

} // namespace

UncertaintyResult estimate_uncertainty(const RegistrationBackend &backend, const Volume3 &source,
                                       const Volume3 &target, const PerturbSpec &spec,
                                       const UncertaintyOptions &opts) {
    spec.validate();
    if (!(source.shape == target.shape)) throw std::invalid_argument("estimate_uncertainty: shape mismatch");
    if (spec.count < 2) throw std::invalid_argument("estimate_uncertainty: N must be >= 2");
    const Shape3 &grid = target.shape;
    const std::size_t voxels = grid.voxels();

    UncertaintyResult result;
    FieldMoments moments = reduce_samples(
        spec.count, [&] { return FieldMoments(voxels, false); },
        [&](int n, FieldMoments &acc) {
            const Transform tau = sample_perturbation(spec, source.shape, n);
            const Volume3 perturbed = warp(source, tau);
            const DenseTransform phi = backend.register_pair(perturbed, target, {&tau, static_cast<std::uint64_t>(n)});
            if (!(phi.shape() == grid)) throw std::runtime_error("backend returned a field of the wrong shape");
            const DenseTransform g = compose(tau, phi);
            acc.add(g.displacements());
        },
        &result.peak_samples_in_flight);

    const double div = static_cast<double>(opts.unbiased ? moments.count - 1 : moments.count);
    result.cov.resize(voxels);
    result.u = Volume3::zeros(grid, 1);
    result.u.spacing = target.spacing;
    result.u.origin = target.origin;
    for (std::size_t i = 0; i < voxels; ++i) {
        result.cov[i] = scaled(moments.m2[i], 1.0 / div);
        result.u.data[i] = static_cast<float>(std::sqrt(std::max(0.0, result.cov[i].trace())));
    }
    result.mean_field = DenseTransform(grid, std::move(moments.mean));
    result.samples = spec.count;
    result.spec = spec;
    result.unbiased = opts.unbiased;
    return result;
}

CovDecomposition decompose_cov(const RegistrationBackend &backend, const PerturbSpec &spec, int draws, bool unbiased) {
    const OracleBackend &oracle = require_oracle(backend);
    if (draws < 2) throw std::invalid_argument("decompose_cov: draws must be >= 2");
    PerturbSpec s = spec;
    s.count = draws;
    s.validate();
    const Shape3 &grid = oracle.grid();
    const std::size_t voxels = grid.voxels();
    const ErrorModel &model = oracle.error_model();
    const auto &phi = oracle.truth_points();

    FieldMoments moments = reduce_samples(
        draws, [&] { return FieldMoments(voxels, true); },
        [&](int n, FieldMoments &acc) {
            const Transform tau = sample_perturbation(s, grid, n);
            std::vector<Vec3> jmu(voxels);
            std::vector<double> dev(voxels);
            parallel_for(voxels, [&](std::size_t i) {
                const Point3 v = invert_point(tau, phi[i]).point;
                const Mat3 j = jacobian_at(tau, v).matrix;
                jmu[i] = j * model.mean_at(tau, grid, i);
                const SymMat3 c = congruence(j, model.cov_at(tau, grid, i));
                for (std::size_t k = 0; k < 6; ++k) acc.extra[i].v[k] += c.v[k];
                dev[i] = (j - Mat3::identity()).frobenius();
            });
            acc.add(jmu);
            acc.max_extra_scalar = std::max(acc.max_extra_scalar, *std::max_element(dev.begin(), dev.end()));
        });

    CovDecomposition out;
    out.shape = grid;
    out.draws = draws;
    out.max_jacobian_deviation = moments.max_extra_scalar;
    const double div = static_cast<double>(unbiased ? draws - 1 : draws);
    out.intrinsic.resize(voxels);
    out.jitter.resize(voxels);
    out.total.resize(voxels);
    for (std::size_t i = 0; i < voxels; ++i) {
        out.intrinsic[i] = scaled(moments.extra[i], 1.0 / static_cast<double>(draws));
        out.jitter[i] = scaled(moments.m2[i], 1.0 / div);
        for (std::size_t k = 0; k < 6; ++k) out.total[i].v[k] = out.intrinsic[i].v[k] + out.jitter[i].v[k];
    }
    out.mean_shift = std::move(moments.mean);
    return out;
}

CovPair closed_form_cov_affine(std::span<const AffineTransform> samples, const ErrorModel &model, const Shape3 &grid,
                               const Point3 &y) {
    if (samples.empty()) throw std::invalid_argument("closed_form_cov_affine: empty sample list");
    std::size_t voxel = 0;
    if (grid.valid()) {
        const auto clampi = [](double v, std::int64_t n) {
            return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::llround(v)), 0, n - 1);
        };
        voxel = grid.index(clampi(y.x, grid.x), clampi(y.y, grid.y), clampi(y.z, grid.z));
    }
    Mat3 intrinsic;
    Vec3 mean;
    std::vector<Vec3> amu;
    amu.reserve(samples.size());
    for (const auto &a : samples) {
        const Transform tau{a};
        const Mat3 &m = a.matrix();
        intrinsic += m * model.cov_at(tau, grid, voxel) * m.transpose();
        amu.push_back(m * model.mean_at(tau, grid, voxel));
        mean += amu.back();
    }
    const double n = static_cast<double>(samples.size());
    mean *= 1.0 / n;
    Mat3 jitter;
    for (const auto &v : amu) jitter += Mat3::outer(v - mean, v - mean);
    return {intrinsic * (1.0 / n), jitter * (1.0 / n)};
}

std::string to_string(LemmaStatus s) {
    switch (s) {
    case LemmaStatus::Pass: return "pass";
    case LemmaStatus::Fail: return "fail";
    case LemmaStatus::RegimeViolation: return "regime_violation";
    }
    return "unknown";
}

double mc_relative_error_scale(const Mat3 &intrinsic, const Mat3 &jitter, int n) {
    const Mat3 total = intrinsic + jitter;
    const double norm = total.frobenius();
    if (norm == 0.0 || n < 1) return 0.0;
    const double ti = intrinsic.trace();
    const double tj = jitter.trace();
    const double e2 = ti * ti + (intrinsic * intrinsic).trace() + 2.0 * ti * tj + 2.0 * (jitter * intrinsic).trace();
    return std::sqrt(std::max(0.0, e2) / static_cast<double>(n)) / norm;
}

LemmaReport verify_lemma(const LemmaSetup &setup) {
    PerturbSpec spec = setup.spec;
    spec.count = setup.n_mc;
    const OracleBackend oracle(setup.phi, setup.model, setup.grid);
    const Volume3 blank = Volume3::zeros(setup.grid, 1);

    const UncertaintyResult est = estimate_uncertainty(oracle, blank, blank, spec);
    const CovDecomposition dec = decompose_cov(oracle, spec, setup.n_mc);

    LemmaReport rep;
    rep.family = spec.family;
    rep.exact = spec.family != PerturbFamily::Deform;
    rep.max_jacobian_deviation = dec.max_jacobian_deviation;
    rep.allowance = rep.exact ? 0.0 : setup.taylor_allowance;

    const std::size_t voxels = setup.grid.voxels();
    const RoiMask roi = RoiMask::central(setup.grid, setup.roi_fraction);
    rep.relative_error.resize(voxels);
    std::vector<double> scale(voxels);
    for (std::size_t i = 0; i < voxels; ++i) {
        const Mat3 closed = dec.total[i].full();
        const Mat3 diff = est.cov[i].full() - closed;
        const double norm = closed.frobenius();
        rep.relative_error[i] = norm > 0.0 ? diff.frobenius() / norm : diff.frobenius();
        scale[i] = mc_relative_error_scale(dec.intrinsic[i].full(), dec.jitter[i].full(), setup.n_mc);
        const Vec3 predicted = oracle.truth_points()[i] + dec.mean_shift[i];
        rep.max_mean_error = std::max(rep.max_mean_error, (est.mean_field.at(i) - predicted).norm());
        if (roi.contains(i)) rep.max_relative_error_roi = std::max(rep.max_relative_error_roi, rep.relative_error[i]);
    }
    rep.median_relative_error = median(rep.relative_error);
    rep.mc_bound = std::max(2.0 * median(scale), 1e-9);

    const bool within = rep.median_relative_error <= rep.mc_bound + rep.allowance;
    if (rep.exact) {
        rep.status = within ? LemmaStatus::Pass : LemmaStatus::Fail;
        rep.note = "exact (no linearization)";
    } else if (!within || rep.max_jacobian_deviation > setup.regime_threshold) {
        rep.status = LemmaStatus::RegimeViolation;
        rep.note = "perturbation outside the first-order regime";
    } else {
        rep.status = LemmaStatus::Pass;
        rep.note = "first-order (Taylor) approximation";
    }
    return rep;
}

} // namespace regcert
