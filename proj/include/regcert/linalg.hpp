#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>

namespace regcert {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr double &operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3 &operator+=(const Vec3 &o) { x += o.x; y += o.y; z += o.z; return *this; }
    constexpr Vec3 &operator-=(const Vec3 &o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    constexpr Vec3 &operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    friend constexpr Vec3 operator+(Vec3 a, const Vec3 &b) { return a += b; }
    friend constexpr Vec3 operator-(Vec3 a, const Vec3 &b) { return a -= b; }
    friend constexpr Vec3 operator-(const Vec3 &a) { return {-a.x, -a.y, -a.z}; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
    friend constexpr bool operator==(const Vec3 &, const Vec3 &) = default;

    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    constexpr double squared_norm() const { return x * x + y * y + z * z; }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

/// Continuous voxel-index coordinates.
using Point3 = Vec3;

constexpr double dot(const Vec3 &a, const Vec3 &b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{};

    static constexpr Mat3 identity() { return diag(1.0, 1.0, 1.0); }
    static constexpr Mat3 zero() { return {}; }
    static constexpr Mat3 diag(double a, double b, double c) {
        Mat3 r;
        r.m = {a, 0, 0, 0, b, 0, 0, 0, c};
        return r;
    }
    static constexpr Mat3 outer(const Vec3 &a, const Vec3 &b) {
        Mat3 r;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) r(i, j) = a[i] * b[j];
        return r;
    }

    constexpr double &operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }
    constexpr double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }

    constexpr Mat3 transpose() const {
        Mat3 r;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }

    constexpr double det() const {
        const auto &a = *this;
        return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
               a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
               a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
    }

    /// Adjugate inverse; caller checks det() != 0.
    constexpr Mat3 inverse() const {
        const auto &a = *this;
        const double d = det();
        Mat3 r;
        r(0, 0) = (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) / d;
        r(0, 1) = (a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2)) / d;
        r(0, 2) = (a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1)) / d;
        r(1, 0) = (a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2)) / d;
        r(1, 1) = (a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0)) / d;
        r(1, 2) = (a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2)) / d;
        r(2, 0) = (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0)) / d;
        r(2, 1) = (a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1)) / d;
        r(2, 2) = (a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0)) / d;
        return r;
    }

    constexpr double trace() const { return m[0] + m[4] + m[8]; }

    double frobenius() const {
        double s = 0.0;
        for (double v : m) s += v * v;
        return std::sqrt(s);
    }

    bool finite() const {
        for (double v : m)
            if (!std::isfinite(v)) return false;
        return true;
    }

    constexpr Mat3 &operator+=(const Mat3 &o) {
        for (std::size_t i = 0; i < 9; ++i) m[i] += o.m[i];
        return *this;
    }
    constexpr Mat3 &operator-=(const Mat3 &o) {
        for (std::size_t i = 0; i < 9; ++i) m[i] -= o.m[i];
        return *this;
    }
    constexpr Mat3 &operator*=(double s) {
        for (auto &v : m) v *= s;
        return *this;
    }

    friend constexpr Mat3 operator+(Mat3 a, const Mat3 &b) { return a += b; }
    friend constexpr Mat3 operator-(Mat3 a, const Mat3 &b) { return a -= b; }
    friend constexpr Mat3 operator*(Mat3 a, double s) { return a *= s; }
    friend constexpr Mat3 operator*(double s, Mat3 a) { return a *= s; }
    friend constexpr bool operator==(const Mat3 &, const Mat3 &) = default;

    friend constexpr Mat3 operator*(const Mat3 &a, const Mat3 &b) {
        Mat3 r;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
                r(i, j) = s;
            }
        return r;
    }

    friend constexpr Vec3 operator*(const Mat3 &a, const Vec3 &v) {
        return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
                a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
                a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
    }
};

/// Upper triangle of a symmetric 3x3 matrix: xx, xy, xz, yy, yz, zz.
struct SymMat3 {
    std::array<double, 6> v{};

    static constexpr SymMat3 from(const Mat3 &a) {
        return {{a(0, 0), 0.5 * (a(0, 1) + a(1, 0)), 0.5 * (a(0, 2) + a(2, 0)), a(1, 1),
                 0.5 * (a(1, 2) + a(2, 1)), a(2, 2)}};
    }

    constexpr Mat3 full() const {
        Mat3 r;
        r.m = {v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5]};
        return r;
    }

    constexpr double trace() const { return v[0] + v[3] + v[5]; }
};

/// Lower-triangular factor L with L L^T = S for symmetric positive
/// semidefinite S. Zero pivots yield zero columns instead of failing.
Mat3 psd_cholesky(const Mat3 &s);

/// Eigenvalues of a symmetric matrix in ascending order.
std::array<double, 3> symmetric_eigenvalues(const Mat3 &s);

struct Shape3 {
    std::int64_t x = 0;
    std::int64_t y = 0;
    std::int64_t z = 0;

    constexpr std::int64_t operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr std::size_t voxels() const { return static_cast<std::size_t>(x * y * z); }
    constexpr bool valid() const { return x > 0 && y > 0 && z > 0; }
    constexpr std::size_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return static_cast<std::size_t>((k * y + j) * x + i);
    }
    /// Voxel-center coordinates of a linear index (x fastest).
    constexpr Point3 point(std::size_t idx) const {
        const auto i = static_cast<std::int64_t>(idx);
        return {static_cast<double>(i % x), static_cast<double>((i / x) % y),
                static_cast<double>(i / (x * y))};
    }
    constexpr Point3 center() const {
        return {0.5 * static_cast<double>(x - 1), 0.5 * static_cast<double>(y - 1),
                0.5 * static_cast<double>(z - 1)};
    }
    friend constexpr bool operator==(const Shape3 &, const Shape3 &) = default;
};

} // namespace regcert
