#pragma once

#include <filesystem>

#include "regcert/volume.hpp"

namespace regcert {

// RCV1 layout, all little-endian:
//   bytes  0..3   "RCV1"
//   bytes  4..7   u32 version (1)
//   bytes  8..15  reserved, zero
//   u32 channels, 3 x u32 shape (x, y, z)
//   3 x f64 spacing, 3 x f64 origin
//   shape product * channels f32 values, channel-interleaved, x fastest

inline constexpr std::uint32_t kRcvVersion = 1;
inline constexpr std::size_t kRcvHeaderBytes = 80;

/// Throws IoError for unreadable files, bad magic, unsupported version,
/// "payload length mismatch", or non-finite values.
Volume3 read_volume(const std::filesystem::path &path);
void write_volume(const Volume3 &v, const std::filesystem::path &path);

/// Uncompressed single-file NIfTI-1 (.nii), float32 (datatype 16) only.
/// The first 3D volume is read; spacing and origin come from pixdim and the
/// qform offsets.
Volume3 read_nifti(const std::filesystem::path &path);

} // namespace regcert
