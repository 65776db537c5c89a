#include "regcert/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "regcert/parallel.hpp"

namespace regcert {

namespace {

void require_same(const Shape3 &a, const Shape3 &b, const char *what) {
    if (!(a == b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

/// Indices sorted by key ascending, ties by index.
std::vector<std::size_t> order_by(std::span<const double> key) {
    std::vector<std::size_t> idx(key.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (key[a] != key[b]) return key[a] < key[b];
        return a < b;
    });
    return idx;
}

// Running means keep a constant sequence exactly constant, which makes the
// constant-error identities hold bit for bit.
void prefix_risk(std::span<const double> error, const std::vector<std::size_t> &order, std::vector<double> *risk,
                 double &aurc) {
    double mean = 0.0;
    aurc = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const double n = static_cast<double>(k + 1);
        mean += (error[order[k]] - mean) / n;
        aurc += (mean - aurc) / n;
        if (risk) (*risk)[k] = mean;
    }
}

} // namespace

ErrorMap error_map(const DenseTransform &pred, const Transform &truth, const RoiMask &mask) {
    const Shape3 &grid = pred.shape();
    require_same(grid, mask.shape, "error_map");
    if (const Shape3 *d = domain_of(truth)) require_same(grid, *d, "error_map");
    ErrorMap out{Volume3::zeros(grid, 1), mask};
    parallel_for(grid.voxels(), [&](std::size_t i) {
        if (!mask.contains(i)) return;
        out.error.data[i] = static_cast<float>((pred.at(i) - evaluate(truth, grid.point(i))).norm());
    });
    return out;
}

std::vector<double> masked_values(const Volume3 &v, const RoiMask &mask) {
    require_same(v.shape, mask.shape, "masked_values");
    std::vector<double> out;
    out.reserve(mask.count());
    for (std::size_t i = 0; i < v.voxels(); ++i)
        if (mask.contains(i)) out.push_back(v.at(i));
    return out;
}

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
    if (a.size() < 2) throw std::invalid_argument("pearson: need at least two values");
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> v) {
    const auto order = order_by(v);
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("spearman: length mismatch");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    return pearson(ra, rb);
}

std::optional<double> pearson(const Volume3 &a, const Volume3 &b, const RoiMask &mask) {
    return pearson(masked_values(a, mask), masked_values(b, mask));
}

std::optional<double> spearman(const Volume3 &a, const Volume3 &b, const RoiMask &mask) {
    return spearman(masked_values(a, mask), masked_values(b, mask));
}

RiskCoverageCurve risk_coverage(std::span<const double> error, std::span<const double> uncertainty, int bins) {
    if (error.size() != uncertainty.size()) throw std::invalid_argument("risk_coverage: length mismatch");
    if (error.empty()) throw std::invalid_argument("risk_coverage: empty mask");
    if (bins < 1) throw std::invalid_argument("risk_coverage: bins must be >= 1");
    for (std::size_t i = 0; i < error.size(); ++i)
        if (!std::isfinite(error[i]) || !std::isfinite(uncertainty[i]))
            throw std::invalid_argument("risk_coverage: non-finite input");

    const std::size_t m = error.size();
    RiskCoverageCurve c;
    c.coverage.resize(m);
    c.risk.resize(m);
    c.bin_mean_uncertainty.resize(m);
    c.bins = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(bins), m));

    const auto order = order_by(uncertainty);
    prefix_risk(error, order, &c.risk, c.aurc);
    prefix_risk(error, order_by(error), nullptr, c.oracle_aurc);
    c.random_aurc = c.risk.back();
    for (std::size_t k = 0; k < m; ++k) c.coverage[k] = static_cast<double>(k + 1) / static_cast<double>(m);

    const auto nb = static_cast<std::size_t>(c.bins);
    for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t lo = b * m / nb;
        const std::size_t hi = (b + 1) * m / nb;
        double mean = 0.0;
        for (std::size_t k = lo; k < hi; ++k) mean += (uncertainty[order[k]] - mean) / static_cast<double>(k - lo + 1);
        for (std::size_t k = lo; k < hi; ++k) c.bin_mean_uncertainty[k] = mean;
    }

    if (c.random_aurc != c.oracle_aurc) c.naurc = (c.aurc - c.oracle_aurc) / (c.random_aurc - c.oracle_aurc);
    return c;
}

RiskCoverageCurve risk_coverage(const ErrorMap &error, const Volume3 &uncertainty, int bins) {
    require_same(error.error.shape, uncertainty.shape, "risk_coverage");
    return risk_coverage(masked_values(error.error, error.mask), masked_values(uncertainty, error.mask), bins);
}

std::string risk_coverage_csv(const RiskCoverageCurve &curve) {
    std::ostringstream os;
    os.precision(17);
    os << "coverage,risk,bin_mean_uncertainty\n";
    for (std::size_t k = 0; k < curve.coverage.size(); ++k)
        os << curve.coverage[k] << ',' << curve.risk[k] << ',' << curve.bin_mean_uncertainty[k] << '\n';
    return os.str();
}

MseReport mse_decomposition_check(const OracleBackend &oracle, int draws) {
    if (draws < 1) throw std::invalid_argument("mse_decomposition_check: draws must be >= 1");
    const Shape3 &grid = oracle.grid();
    const std::size_t voxels = grid.voxels();
    const Transform identity = TranslationTransform{};
    const ErrorModel &model = oracle.error_model();

    MseReport rep;
    rep.draws = draws;
    rep.empirical.assign(voxels, 0.0);
    rep.predicted.resize(voxels);
    for (int m = 0; m < draws; ++m) {
        const OracleOutput out = oracle.run(identity, static_cast<std::uint64_t>(m));
        for (std::size_t i = 0; i < voxels; ++i)
            rep.empirical[i] += (out.field.at(i) - oracle.truth_points()[i]).squared_norm();
    }
    for (std::size_t i = 0; i < voxels; ++i) {
        rep.empirical[i] /= static_cast<double>(draws);
        rep.predicted[i] = model.mean_at(identity, grid, i).squared_norm() + model.cov_at(identity, grid, i).trace();
        const double diff = std::abs(rep.empirical[i] - rep.predicted[i]);
        const double rel = rep.predicted[i] > 0.0 ? diff / rep.predicted[i] : diff;
        rep.max_relative_error = std::max(rep.max_relative_error, rel);
    }
    const double n = static_cast<double>(voxels);
    rep.mean_empirical = std::accumulate(rep.empirical.begin(), rep.empirical.end(), 0.0) / n;
    rep.mean_predicted = std::accumulate(rep.predicted.begin(), rep.predicted.end(), 0.0) / n;
    return rep;
}

} // namespace regcert
