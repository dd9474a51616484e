#include "support.hpp"

#include "masklrf/kernels.hpp"

using namespace masklrf;
using namespace testing_support;

namespace {

// Sizes straddle the parallel threshold so both code paths run.
const std::size_t kSizes[] = {3, 17, 64, 130};

struct ThreadScope {
    int saved = kernels::max_threads();
    explicit ThreadScope(int n) { kernels::set_threads(n); }
    ~ThreadScope() { kernels::set_threads(saved); }
};

}  // namespace

TEST_CASE("matmul matches a triple loop") {
    const auto a = random_matrix(7, 5, 1), b = random_matrix(5, 4, 2);
    Matrix c(7, 4);
    kernels::matmul(a, b, c);
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 5; ++k) s += a(i, k) * b(k, j);
            CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
}

TEST_CASE("transposed products accumulate into the output") {
    const auto a = random_matrix(6, 3, 3), b = random_matrix(6, 4, 4);
    Matrix c(3, 4, 1.0);
    kernels::matmul_tn_acc(a, b, c);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double s = 1.0;
            for (std::size_t k = 0; k < 6; ++k) s += a(k, i) * b(k, j);
            CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
    const auto x = random_matrix(4, 5, 5), y = random_matrix(3, 5, 6);
    Matrix z(4, 3, -2.0);
    kernels::matmul_nt_acc(x, y, z);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = -2.0;
            for (std::size_t k = 0; k < 5; ++k) s += x(i, k) * y(j, k);
            CHECK(z(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
    ThreadScope threads(4);
    for (auto n : kSizes) {
        CAPTURE(n);
        const auto a = random_matrix(n, n + 1, 10 + n), b = random_matrix(n + 1, n, 20 + n);
        Matrix p(n, n), s(n, n);
        kernels::matmul(a, b, p);
        kernels::serial::matmul(a, b, s);
        CHECK(p.data == s.data);

        Matrix p2(n, n, 0.5), s2(n, n, 0.5);
        kernels::matmul_tn_acc(b, b, p2);
        kernels::serial::matmul_tn_acc(b, b, s2);
        CHECK(p2.data == s2.data);

        Matrix p3(n, n, 0.25), s3(n, n, 0.25);
        kernels::matmul_nt_acc(a, a, p3);
        kernels::serial::matmul_nt_acc(a, a, s3);
        CHECK(p3.data == s3.data);
    }
}

TEST_CASE("fps_update and sq_distances agree with the serial reference") {
    ThreadScope threads(4);
    for (std::size_t n : {5u, 100u, 5000u}) {
        CAPTURE(n);
        auto pts = random_points(n, n);
        // Duplicate points create exact ties that must resolve to the lowest index.
        for (std::size_t i = 1; i + 1 < n; i += 7) pts[i + 1] = pts[i];
        std::vector<double> dp(n), ds(n);
        kernels::sq_distances(pts, pts[0], dp);
        kernels::serial::sq_distances(pts, pts[0], ds);
        CHECK(dp == ds);

        std::vector<double> mp(n, 1e300), ms(n, 1e300);
        std::size_t a = 0, b = 0;
        for (int step = 0; step < 20; ++step) {
            a = kernels::fps_update(pts, a, mp);
            b = kernels::serial::fps_update(pts, b, ms);
            REQUIRE(a == b);
        }
        CHECK(mp == ms);
    }
}

TEST_CASE("fps_update ties resolve to the lowest index") {
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}};
    std::vector<double> d(4, 1e300);
    CHECK(kernels::fps_update(pts, 0, d) == 1);
    std::vector<double> e(4, 1e300);
    CHECK(kernels::serial::fps_update(pts, 0, e) == 1);
}
