#include "regcert/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "regcert/parallel.hpp"
#include "regcert/random.hpp"

namespace regcert {

Volume3 Volume3::zeros(const Shape3 &shape, int channels) {
    if (!shape.valid()) throw std::invalid_argument("volume shape must be positive");
    if (channels < 1) throw std::invalid_argument("volume channels must be positive");
    Volume3 v;
    v.shape = shape;
    v.channels = channels;
    v.data.assign(shape.voxels() * static_cast<std::size_t>(channels), 0.0f);
    return v;
}

void Volume3::validate() const {
    if (!shape.valid()) throw std::invalid_argument("volume shape must be positive");
    if (channels < 1) throw std::invalid_argument("volume channels must be positive");
    if (data.size() != shape.voxels() * static_cast<std::size_t>(channels))
        throw std::invalid_argument("volume data length does not match shape x channels");
    for (float f : data)
        if (!std::isfinite(f)) throw std::invalid_argument("volume contains non-finite values");
}

RoiMask RoiMask::full(const Shape3 &shape) {
    return {shape, std::vector<std::uint8_t>(shape.voxels(), 1)};
}

RoiMask RoiMask::central(const Shape3 &shape, double fraction) {
    RoiMask m{shape, std::vector<std::uint8_t>(shape.voxels(), 0)};
    const Point3 c = shape.center();
    for (std::size_t i = 0; i < m.member.size(); ++i) {
        const Point3 p = shape.point(i);
        bool inside = true;
        for (std::size_t a = 0; a < 3; ++a)
            inside = inside && std::abs(p[a] - c[a]) <= 0.5 * fraction * static_cast<double>(shape[a]);
        m.member[i] = inside ? 1 : 0;
    }
    return m;
}

RoiMask RoiMask::from_volume(const Volume3 &v) {
    RoiMask m{v.shape, std::vector<std::uint8_t>(v.voxels(), 0)};
    for (std::size_t i = 0; i < m.member.size(); ++i) m.member[i] = v.at(i) != 0.0f ? 1 : 0;
    return m;
}

std::size_t RoiMask::count() const {
    return static_cast<std::size_t>(std::count_if(member.begin(), member.end(), [](auto b) { return b != 0; }));
}

void RoiMask::validate(const Shape3 &paired) const {
    if (!(shape == paired) || member.size() != paired.voxels())
        throw std::invalid_argument("mask shape does not match volume");
    if (count() == 0) throw std::invalid_argument("mask has no member voxels");
}

double sample_trilinear(const Volume3 &v, const Point3 &p, int channel) {
    std::array<std::int64_t, 3> lo{};
    std::array<std::int64_t, 3> hi{};
    std::array<double, 3> f{};
    for (std::size_t a = 0; a < 3; ++a) {
        const std::int64_t n = v.shape[a];
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
    auto at = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
        return static_cast<double>(v.at(v.shape.index(i, j, k), channel));
    };
    const double c00 = at(lo[0], lo[1], lo[2]) * (1.0 - f[0]) + at(hi[0], lo[1], lo[2]) * f[0];
    const double c10 = at(lo[0], hi[1], lo[2]) * (1.0 - f[0]) + at(hi[0], hi[1], lo[2]) * f[0];
    const double c01 = at(lo[0], lo[1], hi[2]) * (1.0 - f[0]) + at(hi[0], lo[1], hi[2]) * f[0];
    const double c11 = at(lo[0], hi[1], hi[2]) * (1.0 - f[0]) + at(hi[0], hi[1], hi[2]) * f[0];
    const double c0 = c00 * (1.0 - f[1]) + c10 * f[1];
    const double c1 = c01 * (1.0 - f[1]) + c11 * f[1];
    return c0 * (1.0 - f[2]) + c1 * f[2];
}

Volume3 warp(const Volume3 &v, const Transform &t) {
    if (const Shape3 *d = domain_of(t); d && !(*d == v.shape))
        throw std::invalid_argument("warp: transform shape does not match volume");
    Volume3 out = v;
    parallel_for(v.voxels(), [&](std::size_t i) {
        const Point3 q = std::holds_alternative<DenseTransform>(t) ? std::get<DenseTransform>(t).at(i)
                                                                    : evaluate(t, v.shape.point(i));
        for (int c = 0; c < v.channels; ++c) out.at(i, c) = static_cast<float>(sample_trilinear(v, q, c));
    });
    return out;
}

Volume3 gradient(const Volume3 &v) {
    Volume3 g = Volume3::zeros(v.shape, 3);
    g.spacing = v.spacing;
    g.origin = v.origin;
    const Shape3 &s = v.shape;
    parallel_for(v.voxels(), [&](std::size_t idx) {
        const auto i = static_cast<std::int64_t>(idx) % s.x;
        const auto j = (static_cast<std::int64_t>(idx) / s.x) % s.y;
        const auto k = static_cast<std::int64_t>(idx) / (s.x * s.y);
        const std::array<std::int64_t, 3> pos{i, j, k};
        for (std::size_t a = 0; a < 3; ++a) {
            const std::int64_t n = s[a];
            if (n == 1) continue;
            auto lo = pos;
            auto hi = pos;
            lo[a] = std::max<std::int64_t>(pos[a] - 1, 0);
            hi[a] = std::min<std::int64_t>(pos[a] + 1, n - 1);
            const double h = static_cast<double>(hi[a] - lo[a]);
            const double d = static_cast<double>(v.at(s.index(hi[0], hi[1], hi[2]))) -
                             static_cast<double>(v.at(s.index(lo[0], lo[1], lo[2])));
            g.at(idx, static_cast<int>(a)) = static_cast<float>(d / h);
        }
    });
    return g;
}

PhantomKind parse_phantom_kind(const std::string &name) {
    if (name == "blobs") return PhantomKind::Blobs;
    if (name == "checker-smooth") return PhantomKind::CheckerSmooth;
    throw std::invalid_argument("unknown phantom kind '" + name + "'");
}

std::string to_string(PhantomKind kind) { return kind == PhantomKind::Blobs ? "blobs" : "checker-smooth"; }

Volume3 make_phantom(const Shape3 &shape, PhantomKind kind, std::uint64_t seed) {
    if (shape.x < 16 || shape.y < 16 || shape.z < 16)
        throw std::invalid_argument("phantom shape must be at least 16 along every axis");
    auto rng = make_stream(seed, 0, /*domain=*/0x50484e54);
    std::vector<double> val(shape.voxels(), 0.0);

    if (kind == PhantomKind::Blobs) {
        struct Bump {
            Point3 center;
            Vec3 inv_var;
            double amplitude;
        };
        const int count = 5 + static_cast<int>(rng() % 11);
        std::vector<Bump> bumps;
        for (int b = 0; b < count; ++b) {
            Bump bump;
            for (std::size_t a = 0; a < 3; ++a) {
                const double n = static_cast<double>(shape[a]);
                bump.center[a] = uniform(rng, 0.2 * n, 0.8 * n);
                const double sigma = uniform(rng, n / 14.0, n / 6.0);
                bump.inv_var[a] = 1.0 / (2.0 * sigma * sigma);
            }
            bump.amplitude = uniform(rng, 0.3, 1.0);
            bumps.push_back(bump);
        }
        parallel_for(val.size(), [&](std::size_t i) {
            const Point3 p = shape.point(i);
            double s = 0.0;
            for (const auto &b : bumps) {
                const Vec3 d = p - b.center;
                s += b.amplitude * std::exp(-(d.x * d.x * b.inv_var.x + d.y * d.y * b.inv_var.y +
                                              d.z * d.z * b.inv_var.z));
            }
            val[i] = s;
        });
    } else {
        Vec3 freq;
        Vec3 phase;
        for (std::size_t a = 0; a < 3; ++a) {
            freq[a] = uniform(rng, 1.0, 2.5) * 2.0 * std::numbers::pi / static_cast<double>(shape[a]);
            phase[a] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        }
        parallel_for(val.size(), [&](std::size_t i) {
            const Point3 p = shape.point(i);
            val[i] = std::sin(freq.x * p.x + phase.x) * std::sin(freq.y * p.y + phase.y) *
                     std::sin(freq.z * p.z + phase.z);
        });
    }

    const auto [mn, mx] = std::minmax_element(val.begin(), val.end());
    const double lo = *mn;
    const double range = *mx - *mn;
    Volume3 v = Volume3::zeros(shape, 1);
    for (std::size_t i = 0; i < val.size(); ++i)
        v.data[i] = range > 0.0 ? static_cast<float>((val[i] - lo) / range) : 0.0f;
    return v;
}

Volume3 scalar_volume(const Shape3 &shape, std::span<const double> values) {
    if (values.size() != shape.voxels()) throw std::invalid_argument("scalar field length does not match shape");
    Volume3 v = Volume3::zeros(shape, 1);
    for (std::size_t i = 0; i < values.size(); ++i) v.data[i] = static_cast<float>(values[i]);
    return v;
}

std::vector<double> to_doubles(const Volume3 &v, int channel) {
    std::vector<double> out(v.voxels());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v.at(i, channel);
    return out;
}

Volume3 field_volume(const DenseTransform &t) {
    Volume3 v = Volume3::zeros(t.shape(), 3);
    for (std::size_t i = 0; i < t.shape().voxels(); ++i)
        for (int c = 0; c < 3; ++c) v.at(i, c) = static_cast<float>(t.displacement(i)[static_cast<std::size_t>(c)]);
    return v;
}

DenseTransform field_from_volume(const Volume3 &v) {
    if (v.channels != 3) throw std::invalid_argument("displacement field volume must have 3 channels");
    std::vector<Vec3> d(v.voxels());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = {v.at(i, 0), v.at(i, 1), v.at(i, 2)};
    return {v.shape, std::move(d)};
}

} // namespace regcert
