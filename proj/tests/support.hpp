#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <doctest.h>

#include "masklrf/types.hpp"

namespace testing_support {

using masklrf::Mat3;
using masklrf::Matrix;
using masklrf::Vec3;

inline std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    std::vector<Vec3> p(n);
    for (auto& v : p) v = {u(rng), u(rng), u(rng)};
    return p;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    Matrix m(r, c);
    for (auto& x : m.data) x = nd(rng);
    return m;
}

inline double max_abs_diff(const Mat3& a, const Mat3& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < 9; ++i) m = std::max(m, std::abs(a.a[i] - b.a[i]));
    return m;
}

inline double max_abs_diff(const Vec3& a, const Vec3& b) {
    return std::max({std::abs(a[0] - b[0]), std::abs(a[1] - b[1]), std::abs(a[2] - b[2])});
}

template <class A, class B>
double max_abs_diff_seq(const A& a, const B& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    REQUIRE(a.same_shape(b));
    return max_abs_diff_seq(a.data, b.data);
}

inline double orthonormality_error(const Mat3& f) {
    const auto p = f.transposed() * f;
    return max_abs_diff(p, Mat3::identity());
}

}  // namespace testing_support
