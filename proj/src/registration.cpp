#include "regcert/registration.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "regcert/errors.hpp"
#include "regcert/parallel.hpp"
#include "regcert/random.hpp"

namespace regcert {

// ---------------------------------------------------------------------------
// Error model

double TauFactor::operator()(const Transform &tau, const Shape3 &grid) const {
    double h = 0.0;
    switch (feature) {
    case TauFeature::None:
        break;
    case TauFeature::LinearScale:
        h = jacobian_at(tau, grid.center()).matrix.trace() / 3.0;
        break;
    case TauFeature::Shift:
        h = (evaluate(tau, grid.center()) - grid.center()).norm();
        break;
    }
    return offset + gain * h;
}

ErrorModel ErrorModel::gaussian(const Vec3 &mean, double sigma, std::uint64_t seed) {
    ErrorModel m;
    m.mean = mean;
    m.cov_kind = sigma == 0.0 ? CovKind::Zero : CovKind::Isotropic;
    m.sigma = sigma;
    m.seed = seed;
    return m;
}

ErrorModel ErrorModel::gaussian(const Vec3 &mean, const Mat3 &cov, std::uint64_t seed) {
    ErrorModel m;
    m.mean = mean;
    m.cov_kind = CovKind::Constant;
    m.cov = cov;
    m.seed = seed;
    return m;
}

Vec3 ErrorModel::mean_at(const Transform &tau, const Shape3 &grid, std::size_t voxel) const {
    const Vec3 base = mean_field.empty() ? mean : mean_field[voxel];
    if (mean_factor.feature == TauFeature::None && mean_factor.offset == 1.0) return base;
    return base * mean_factor(tau, grid);
}

Mat3 ErrorModel::cov_at(const Transform &tau, const Shape3 &grid, std::size_t) const {
    Mat3 c;
    switch (cov_kind) {
    case CovKind::Zero:
        return Mat3::zero();
    case CovKind::Isotropic:
        c = Mat3::identity() * (sigma * sigma);
        break;
    case CovKind::Constant:
        c = cov;
        break;
    }
    if (cov_factor.feature == TauFeature::None && cov_factor.offset == 1.0) return c;
    return c * cov_factor(tau, grid);
}

void ErrorModel::validate(const Shape3 &grid) const {
    if (!mean.finite()) throw std::invalid_argument("error model mean must be finite");
    if (!mean_field.empty() && mean_field.size() != grid.voxels())
        throw std::invalid_argument("error model mean field does not match grid");
    if (cov_kind == CovKind::Isotropic && !(sigma >= 0.0)) throw std::invalid_argument("error model sigma must be >= 0");
    if (cov_kind == CovKind::Constant) {
        if (!cov.finite()) throw std::invalid_argument("error model covariance must be finite");
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = i + 1; j < 3; ++j)
                if (std::abs(cov(i, j) - cov(j, i)) > 1e-12 * (1.0 + std::abs(cov(i, j))))
                    throw std::invalid_argument("error model covariance must be symmetric");
        const auto ev = symmetric_eigenvalues(cov);
        if (ev[0] < -1e-12 * std::max(1.0, ev[2]))
            throw std::invalid_argument("error model covariance must be positive semidefinite");
    }
}

// ---------------------------------------------------------------------------
// Oracle

OracleBackend::OracleBackend(Transform true_transform, ErrorModel model, const Shape3 &grid)
    : truth_(std::move(true_transform)), model_(std::move(model)), grid_(grid) {
    if (!grid.valid()) throw std::invalid_argument("oracle grid must be positive");
    model_.validate(grid_);
    phi_.resize(grid.voxels());
    parallel_for(phi_.size(), [&](std::size_t i) {
        phi_[i] = std::holds_alternative<DenseTransform>(truth_) ? std::get<DenseTransform>(truth_).at(i)
                                                                : evaluate(truth_, grid_.point(i));
    });
}

OracleOutput OracleBackend::run(const Transform &tau, std::uint64_t nonce) const {
    const std::size_t n = grid_.voxels();
    std::vector<Vec3> disp(n);
    std::vector<double> residual(n);
    parallel_for(n, [&](std::size_t i) {
        const PointInverse inv = invert_point(tau, phi_[i]);
        disp[i] = inv.point;
        residual[i] = inv.residual;
    });

    // Noise draws are sequential in voxel order so the stream is fixed by
    // (seed, nonce) alone.
    auto rng = make_stream(model_.seed, nonce, /*domain=*/0x4f52434c);
    std::normal_distribution<double> normal(0.0, 1.0);
    const bool tau_dependent_cov = model_.cov_factor.feature != TauFeature::None || model_.cov_factor.offset != 1.0;
    const Mat3 l_const = psd_cholesky(model_.cov_at(tau, grid_, 0));
    const bool tau_dependent_mean = model_.mean_factor.feature != TauFeature::None || model_.mean_factor.offset != 1.0;
    const double mean_scale = tau_dependent_mean ? model_.mean_factor(tau, grid_) : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 z{normal(rng), normal(rng), normal(rng)};
        const Vec3 base = model_.mean_field.empty() ? model_.mean : model_.mean_field[i];
        const Vec3 mu = tau_dependent_mean ? base * mean_scale : base;
        const Mat3 &l = tau_dependent_cov ? psd_cholesky(model_.cov_at(tau, grid_, i)) : l_const;
        disp[i] = disp[i] + mu + l * z - grid_.point(i);
    }
    return {DenseTransform(grid_, std::move(disp)), *std::max_element(residual.begin(), residual.end())};
}

DenseTransform OracleBackend::register_pair(const Volume3 &, const Volume3 &target, const RegisterCall &call) const {
    if (!(target.shape == grid_)) throw std::invalid_argument("oracle: target shape does not match oracle grid");
    static const Transform identity{TranslationTransform{}};
    return run(call.perturbation ? *call.perturbation : identity, call.nonce).field;
}

OracleOutput oracle_register(const OracleBackend &oracle, const Transform &tau, std::uint64_t nonce) {
    return oracle.run(tau, nonce);
}

// ---------------------------------------------------------------------------
// Shared helpers

Volume3 downsample2(const Volume3 &v) {
    Shape3 s{v.shape.x > 1 ? (v.shape.x + 1) / 2 : 1, v.shape.y > 1 ? (v.shape.y + 1) / 2 : 1,
             v.shape.z > 1 ? (v.shape.z + 1) / 2 : 1};
    Volume3 out = Volume3::zeros(s, v.channels);
    out.spacing = v.spacing * 2.0;
    out.origin = v.origin;
    const std::int64_t fx = v.shape.x > 1 ? 2 : 1;
    const std::int64_t fy = v.shape.y > 1 ? 2 : 1;
    const std::int64_t fz = v.shape.z > 1 ? 2 : 1;
    parallel_for(s.voxels(), [&](std::size_t idx) {
        const auto i = static_cast<std::int64_t>(idx) % s.x;
        const auto j = (static_cast<std::int64_t>(idx) / s.x) % s.y;
        const auto k = static_cast<std::int64_t>(idx) / (s.x * s.y);
        for (int c = 0; c < v.channels; ++c) {
            double sum = 0.0;
            int cnt = 0;
            for (std::int64_t dz = 0; dz < fz; ++dz)
                for (std::int64_t dy = 0; dy < fy; ++dy)
                    for (std::int64_t dx = 0; dx < fx; ++dx) {
                        const auto x = std::min(i * fx + dx, v.shape.x - 1);
                        const auto y = std::min(j * fy + dy, v.shape.y - 1);
                        const auto z = std::min(k * fz + dz, v.shape.z - 1);
                        sum += v.at(v.shape.index(x, y, z), c);
                        ++cnt;
                    }
            out.at(idx, c) = static_cast<float>(sum / cnt);
        }
    });
    return out;
}

DenseTransform smooth_field(const DenseTransform &field, double sigma) {
    if (!(sigma > 0.0)) return field;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int r = -radius; r <= radius; ++r) {
        const double w = std::exp(-0.5 * r * r / (sigma * sigma));
        kernel[static_cast<std::size_t>(r + radius)] = w;
        total += w;
    }
    for (auto &w : kernel) w /= total;

    const Shape3 &s = field.shape();
    std::vector<Vec3> cur = field.displacements();
    std::vector<Vec3> next(cur.size());
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const std::int64_t n = s[axis];
        if (n == 1) continue;
        parallel_for(cur.size(), [&](std::size_t idx) {
            std::array<std::int64_t, 3> pos{static_cast<std::int64_t>(idx) % s.x,
                                            (static_cast<std::int64_t>(idx) / s.x) % s.y,
                                            static_cast<std::int64_t>(idx) / (s.x * s.y)};
            const std::int64_t center = pos[axis];
            Vec3 acc;
            for (int r = -radius; r <= radius; ++r) {
                pos[axis] = std::clamp<std::int64_t>(center + r, 0, n - 1);
                acc += kernel[static_cast<std::size_t>(r + radius)] * cur[s.index(pos[0], pos[1], pos[2])];
            }
            next[idx] = acc;
        });
        std::swap(cur, next);
    }
    return {s, std::move(cur)};
}

namespace {

constexpr std::size_t kReduceChunks = 64;

// 12-parameter affine about the grid center c: x = c + (I + P)(y - c) + b.
struct AffineParams {
    std::array<double, 12> p{};

    AffineTransform transform(const Point3 &c) const {
        Mat3 a = Mat3::identity();
        for (std::size_t i = 0; i < 9; ++i) a.m[i] += p[i];
        return AffineTransform::about(a, c, {p[9], p[10], p[11]});
    }
};

struct LevelData {
    Volume3 source;
    Volume3 target;
    Volume3 source_gradient;
    double scale = 1.0;  // full-res voxels per level voxel
    double offset = 0.0; // full-res coordinate of level voxel 0
};

struct Normal {
    std::array<double, 78> h{}; // upper triangle of the 12x12 Gauss-Newton matrix
    std::array<double, 12> g{};
    double cost = 0.0;
    std::size_t count = 0;

    void add(const Normal &o) {
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += o.h[i];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.g[i];
        cost += o.cost;
        count += o.count;
    }
};

Normal accumulate(const LevelData &lv, const AffineTransform &t, const Point3 &center, bool with_normal) {
    const Shape3 &ts = lv.target.shape;
    const Shape3 &ss = lv.source.shape;
    const std::size_t n = ts.voxels();
    std::vector<Normal> parts(kReduceChunks);
    parallel_for(kReduceChunks, [&](std::size_t chunk) {
        const std::size_t begin = n * chunk / kReduceChunks;
        const std::size_t end = n * (chunk + 1) / kReduceChunks;
        Normal &acc = parts[chunk];
        std::array<double, 12> jrow{};
        for (std::size_t i = begin; i < end; ++i) {
            const Point3 y = ts.point(i) * lv.scale + Vec3{lv.offset, lv.offset, lv.offset};
            const Point3 x = t.apply(y);
            const Point3 xl = (x - Vec3{lv.offset, lv.offset, lv.offset}) * (1.0 / lv.scale);
            const double r = sample_trilinear(lv.source, xl) - static_cast<double>(lv.target.at(i));
            acc.cost += r * r;
            ++acc.count;
            if (!with_normal) continue;
            Vec3 grad;
            for (std::size_t a = 0; a < 3; ++a) {
                const bool inside = xl[a] >= 0.0 && xl[a] <= static_cast<double>(ss[a] - 1);
                grad[a] = inside ? sample_trilinear(lv.source_gradient, xl, static_cast<int>(a)) / lv.scale : 0.0;
            }
            const Vec3 rel = y - center;
            for (std::size_t a = 0; a < 3; ++a) {
                for (std::size_t b = 0; b < 3; ++b) jrow[3 * a + b] = grad[a] * rel[b];
                jrow[9 + a] = grad[a];
            }
            std::size_t k = 0;
            for (std::size_t a = 0; a < 12; ++a) {
                acc.g[a] += jrow[a] * r;
                for (std::size_t b = a; b < 12; ++b) acc.h[k++] += jrow[a] * jrow[b];
            }
        }
    });
    Normal total;
    for (const auto &p : parts) total.add(p);
    return total;
}

// Solves (H + lambda diag(H)) x = -g by Gaussian elimination with pivoting.
bool solve_step(const Normal &nrm, double lambda, std::array<double, 12> &x) {
    std::array<std::array<double, 13>, 12> m{};
    std::size_t k = 0;
    for (std::size_t a = 0; a < 12; ++a)
        for (std::size_t b = a; b < 12; ++b) {
            m[a][b] = nrm.h[k];
            m[b][a] = nrm.h[k];
            ++k;
        }
    for (std::size_t a = 0; a < 12; ++a) {
        m[a][a] += lambda * m[a][a] + 1e-12;
        m[a][12] = -nrm.g[a];
    }
    for (std::size_t col = 0; col < 12; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < 12; ++r)
            if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
        if (std::abs(m[piv][col]) < 1e-300) return false;
        std::swap(m[piv], m[col]);
        for (std::size_t r = col + 1; r < 12; ++r) {
            const double f = m[r][col] / m[col][col];
            for (std::size_t c = col; c < 13; ++c) m[r][c] -= f * m[col][c];
        }
    }
    for (std::size_t i = 12; i-- > 0;) {
        double s = m[i][12];
        for (std::size_t c = i + 1; c < 12; ++c) s -= m[i][c] * x[c];
        x[i] = s / m[i][i];
    }
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace

AffineSsdResult affine_ssd_register(const Volume3 &source, const Volume3 &target, const AffineSsdOptions &opts) {
    if (!(source.shape == target.shape)) throw std::invalid_argument("affine_ssd_register: shape mismatch");
    if (source.channels != 1 || target.channels != 1)
        throw std::invalid_argument("affine_ssd_register: single-channel images required");
    if (opts.levels < 1 || opts.iters < 1 || !(opts.step > 0.0))
        throw std::invalid_argument("affine_ssd_register: levels, iters and step must be positive");

    std::vector<LevelData> pyramid;
    {
        LevelData lv{source, target, gradient(source), 1.0, 0.0};
        pyramid.push_back(std::move(lv));
        for (int l = 1; l < opts.levels; ++l) {
            const auto &prev = pyramid.back();
            const Shape3 &ps = prev.source.shape;
            if (std::min({ps.x, ps.y, ps.z}) < 16) break;
            LevelData next;
            next.source = downsample2(prev.source);
            next.target = downsample2(prev.target);
            next.source_gradient = gradient(next.source);
            next.scale = prev.scale * 2.0;
            next.offset = prev.offset + 0.5 * prev.scale;
            pyramid.push_back(std::move(next));
        }
    }

    const Point3 center = target.shape.center();
    AffineSsdResult result;
    AffineParams params;
    for (std::size_t li = pyramid.size(); li-- > 0;) {
        const LevelData &lv = pyramid[li];
        const int level = static_cast<int>(li);
        Normal cur = accumulate(lv, params.transform(center), center, true);
        double lambda = 1e-3;
        int increases = 0;
        for (int it = 0; it < opts.iters; ++it) {
            std::array<double, 12> delta{};
            if (!solve_step(cur, lambda, delta)) {
                result.diverged = true;
                break;
            }
            // Predicted decrease of the quadratic model; stop once negligible.
            double predicted = 0.0;
            {
                std::size_t k = 0;
                std::array<double, 12> hd{};
                for (std::size_t a = 0; a < 12; ++a)
                    for (std::size_t b = a; b < 12; ++b) {
                        hd[a] += cur.h[k] * delta[b];
                        if (b != a) hd[b] += cur.h[k] * delta[a];
                        ++k;
                    }
                for (std::size_t a = 0; a < 12; ++a) predicted -= cur.g[a] * delta[a] + 0.5 * delta[a] * hd[a];
            }
            if (predicted <= 1e-12 * std::max(cur.cost, 1e-300)) break;
            double step_size = 0.0;
            for (double d : delta) step_size = std::max(step_size, std::abs(d));
            if (opts.step * step_size < 1e-7) break;

            AffineParams trial = params;
            for (std::size_t a = 0; a < 12; ++a) trial.p[a] += opts.step * delta[a];
            Normal next = accumulate(lv, trial.transform(center), center, true);
            ++result.iterations;
            const bool accepted = next.cost < cur.cost;
            result.log.push_back({level, it, accepted ? next.cost / static_cast<double>(next.count)
                                                      : cur.cost / static_cast<double>(cur.count),
                                  accepted});
            if (accepted) {
                const double rel = (cur.cost - next.cost) / std::max(cur.cost, 1e-300);
                params = trial;
                cur = next;
                lambda = std::max(lambda / 3.0, 1e-7);
                increases = 0;
                if (rel < 1e-9) break;
            } else {
                if (!std::isfinite(next.cost)) {
                    result.diverged = true;
                    break;
                }
                // Ten rejected trials in a row: the damped model finds no descent, so the
                // level has stalled at a (possibly kinked) minimum. Best-so-far is kept.
                lambda *= 4.0;
                if (++increases >= 10) break;
            }
        }
    }

    result.transform = params.transform(center);
    result.field = render(result.transform, target.shape);
    result.ssd = accumulate(pyramid.front(), result.transform, center, false).cost /
                 static_cast<double>(target.voxels());
    return result;
}

DenseTransform AffineSsdBackend::register_pair(const Volume3 &source, const Volume3 &target, const RegisterCall &) const {
    return affine_ssd_register(source, target, opts_).field;
}

DemonsResult demons_register(const Volume3 &source, const Volume3 &target, const DemonsOptions &opts,
                             const DenseTransform *initial) {
    if (!(source.shape == target.shape)) throw std::invalid_argument("demons_register: shape mismatch");
    if (source.channels != 1 || target.channels != 1)
        throw std::invalid_argument("demons_register: single-channel images required");
    if (opts.iters < 0) throw std::invalid_argument("demons_register: iters must be >= 0");
    if (initial && !(initial->shape() == target.shape))
        throw std::invalid_argument("demons_register: initial field shape mismatch");

    const Shape3 &s = target.shape;
    DemonsResult result;
    DenseTransform field = initial ? *initial : DenseTransform::identity(s);
    for (int it = 0; it < opts.iters; ++it) {
        const Volume3 moved = warp(source, Transform{field});
        const Volume3 grad = gradient(moved);
        std::vector<Vec3> disp = field.displacements();
        std::vector<double> sq(s.voxels());
        parallel_for(s.voxels(), [&](std::size_t i) {
            const double diff = static_cast<double>(target.at(i)) - static_cast<double>(moved.at(i));
            const Vec3 g{grad.at(i, 0), grad.at(i, 1), grad.at(i, 2)};
            const double denom = g.squared_norm() + diff * diff;
            sq[i] = diff * diff;
            if (denom > 1e-12) disp[i] += g * (diff / denom);
        });
        double cost = 0.0;
        for (double v : sq) cost += v;
        result.log.push_back({0, it, cost / static_cast<double>(s.voxels()), true});
        field = smooth_field(DenseTransform(s, std::move(disp)), opts.smooth_sigma);
    }
    result.field = std::move(field);
    return result;
}

DenseTransform DemonsBackend::register_pair(const Volume3 &source, const Volume3 &target, const RegisterCall &) const {
    return demons_register(source, target, opts_).field;
}

} // namespace regcert
