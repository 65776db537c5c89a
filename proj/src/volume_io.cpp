#include "regcert/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "regcert/errors.hpp"

namespace regcert {

namespace {

template <class T>
T from_le(const unsigned char *p) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T out;
    std::memcpy(&out, buf, sizeof(T));
    return out;
}

template <class T>
void put_le(std::vector<unsigned char> &out, T value) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

std::vector<unsigned char> slurp(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

Volume3 read_volume(const std::filesystem::path &path) {
    const auto bytes = slurp(path);
    const std::string where = " in '" + path.string() + "'";
    if (bytes.size() < kRcvHeaderBytes) throw IoError("truncated header" + where);
    if (std::memcmp(bytes.data(), "RCV1", 4) != 0) throw IoError("bad magic" + where);
    const auto version = from_le<std::uint32_t>(&bytes[4]);
    if (version != kRcvVersion) throw IoError("unsupported RCV version " + std::to_string(version) + where);

    const unsigned char *p = &bytes[16];
    Volume3 v;
    v.channels = static_cast<int>(from_le<std::uint32_t>(p));
    p += 4;
    v.shape.x = from_le<std::uint32_t>(p);
    v.shape.y = from_le<std::uint32_t>(p + 4);
    v.shape.z = from_le<std::uint32_t>(p + 8);
    p += 12;
    for (std::size_t a = 0; a < 3; ++a, p += 8) v.spacing[a] = from_le<double>(p);
    for (std::size_t a = 0; a < 3; ++a, p += 8) v.origin[a] = from_le<double>(p);
    if (!v.shape.valid() || v.channels < 1) throw IoError("invalid shape or channel count" + where);

    const std::size_t count = v.shape.voxels() * static_cast<std::size_t>(v.channels);
    if (bytes.size() - kRcvHeaderBytes != count * 4) throw IoError("payload length mismatch" + where);
    v.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        v.data[i] = from_le<float>(&bytes[kRcvHeaderBytes + 4 * i]);
        if (!std::isfinite(v.data[i])) throw IoError("non-finite value at element " + std::to_string(i) + where);
    }
    return v;
}

void write_volume(const Volume3 &v, const std::filesystem::path &path) {
    v.validate();
    std::vector<unsigned char> out;
    out.reserve(kRcvHeaderBytes + v.data.size() * 4);
    out.insert(out.end(), {'R', 'C', 'V', '1'});
    put_le<std::uint32_t>(out, kRcvVersion);
    out.insert(out.end(), 8, 0);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.channels));
    for (std::size_t a = 0; a < 3; ++a) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.shape[a]));
    for (std::size_t a = 0; a < 3; ++a) put_le<double>(out, v.spacing[a]);
    for (std::size_t a = 0; a < 3; ++a) put_le<double>(out, v.origin[a]);
    for (float f : v.data) put_le<float>(out, f);

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os.write(reinterpret_cast<const char *>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) throw IoError("write failed for '" + path.string() + "'");
}

Volume3 read_nifti(const std::filesystem::path &path) {
    const auto bytes = slurp(path);
    const std::string where = " in '" + path.string() + "'";
    if (bytes.size() < 352) throw IoError("truncated NIfTI header" + where);
    if (from_le<std::int32_t>(&bytes[0]) != 348) throw IoError("not a little-endian NIfTI-1 header" + where);
    if (std::memcmp(&bytes[344], "n+1\0", 4) != 0) throw IoError("only single-file NIfTI-1 (n+1) is supported" + where);

    std::int16_t dim[8];
    for (int i = 0; i < 8; ++i) dim[i] = from_le<std::int16_t>(&bytes[40 + 2 * i]);
    const auto datatype = from_le<std::int16_t>(&bytes[70]);
    if (datatype != 16)
        throw IoError("unsupported NIfTI datatype " + std::to_string(datatype) + " (only float32, code 16)" + where);
    if (dim[0] < 1 || dim[0] > 7) throw IoError("invalid NIfTI dim[0]" + where);
    Volume3 v;
    v.channels = 1;
    v.shape = {dim[1], dim[0] >= 2 ? dim[2] : 1, dim[0] >= 3 ? dim[3] : 1};
    if (!v.shape.valid()) throw IoError("invalid NIfTI dimensions" + where);
    for (int a = 0; a < 3; ++a) {
        const float px = from_le<float>(&bytes[76 + 4 * (a + 1)]);
        v.spacing[static_cast<std::size_t>(a)] = px > 0.0f ? px : 1.0;
        v.origin[static_cast<std::size_t>(a)] = from_le<float>(&bytes[268 + 4 * a]);
    }
    const auto offset = static_cast<std::size_t>(from_le<float>(&bytes[108]));
    const std::size_t count = v.shape.voxels();
    if (offset < 352 || bytes.size() < offset + count * 4) throw IoError("payload length mismatch" + where);
    v.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        v.data[i] = from_le<float>(&bytes[offset + 4 * i]);
        if (!std::isfinite(v.data[i])) throw IoError("non-finite value at element " + std::to_string(i) + where);
    }
    return v;
}

} // namespace regcert
