#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "regcert/geometry.hpp"

namespace regcert {

/// Scalar or vector volume, channel-interleaved, x fastest. Spacing and
/// origin are metadata in mm; all math runs in voxel-index space.
struct Volume3 {
    Shape3 shape{};
    int channels = 1;
    std::vector<float> data;
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{};

    static Volume3 zeros(const Shape3 &shape, int channels = 1);

    std::size_t voxels() const { return shape.voxels(); }
    float &at(std::size_t voxel, int c = 0) { return data[voxel * static_cast<std::size_t>(channels) + c]; }
    float at(std::size_t voxel, int c = 0) const { return data[voxel * static_cast<std::size_t>(channels) + c]; }

    /// Throws std::invalid_argument when the invariants do not hold.
    void validate() const;
};

struct RoiMask {
    Shape3 shape{};
    std::vector<std::uint8_t> member;

    static RoiMask full(const Shape3 &shape);
    /// Voxels whose index-space coordinates lie in the central box covering
    /// `fraction` of each axis.
    static RoiMask central(const Shape3 &shape, double fraction);
    /// Nonzero voxels of channel 0.
    static RoiMask from_volume(const Volume3 &v);

    std::size_t count() const;
    bool contains(std::size_t voxel) const { return member[voxel] != 0; }
    void validate(const Shape3 &paired) const;
};

/// Trilinear interpolation with clamp-to-edge; exact at voxel centers.
double sample_trilinear(const Volume3 &v, const Point3 &p, int channel = 0);

/// Pull-back warp: out(y) = v(t(y)) at every voxel center, all channels.
Volume3 warp(const Volume3 &v, const Transform &t);

/// Central-difference gradient of channel 0 (one-sided at the border).
/// Returns a 3-channel volume.
Volume3 gradient(const Volume3 &v);

enum class PhantomKind { Blobs, CheckerSmooth };

PhantomKind parse_phantom_kind(const std::string &name);
std::string to_string(PhantomKind kind);

/// Deterministic synthetic image normalized to [0, 1]. Shape must be at
/// least 16 voxels along every axis.
Volume3 make_phantom(const Shape3 &shape, PhantomKind kind, std::uint64_t seed);

/// 1-channel view of a double field as a float volume.
Volume3 scalar_volume(const Shape3 &shape, std::span<const double> values);
std::vector<double> to_doubles(const Volume3 &v, int channel = 0);

/// Dense transform displacements as a 3-channel volume, and back.
Volume3 field_volume(const DenseTransform &t);
DenseTransform field_from_volume(const Volume3 &v);

} // namespace regcert
