#include "regcert/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace regcert {

Mat3 psd_cholesky(const Mat3 &s) {
    Mat3 l;
    for (std::size_t j = 0; j < 3; ++j) {
        double d = s(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (d <= 1e-300) continue; // semidefinite direction: zero column
        const double ljj = std::sqrt(d);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < 3; ++i) {
            double v = s(i, j);
            for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
            l(i, j) = v / ljj;
        }
    }
    return l;
}

std::array<double, 3> symmetric_eigenvalues(const Mat3 &s) {
    // Cyclic Jacobi rotations. Unlike the trigonometric closed form this keeps
    // full relative accuracy for repeated and zero eigenvalues.
    Mat3 a = SymMat3::from(s).full();
    for (int sweep = 0; sweep < 50; ++sweep) {
        const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
        if (off == 0.0) break;
        for (std::size_t p = 0; p < 2; ++p)
            for (std::size_t q = p + 1; q < 3; ++q) {
                if (a(p, q) == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;
                Mat3 r = Mat3::identity();
                r(p, p) = c;
                r(q, q) = c;
                r(p, q) = sn;
                r(q, p) = -sn;
                a = r.transpose() * a * r;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
            }
    }
    std::array<double, 3> ev{a(0, 0), a(1, 1), a(2, 2)};
    std::sort(ev.begin(), ev.end());
    return ev;
}

} // namespace regcert
