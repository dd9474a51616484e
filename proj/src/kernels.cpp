#include "masklrf/kernels.hpp"

#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace masklrf::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 14;

bool go_parallel(std::size_t work) {
#ifdef _OPENMP
    return work >= kParallelWork && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
    (void)work;
    return false;
#endif
}

void check_mm(const Matrix& a, const Matrix& b, const Matrix& c, std::size_t ar, std::size_t ac,
              std::size_t br, std::size_t bc) {
    (void)a;
    (void)b;
    if (ac != br || c.rows != ar || c.cols != bc)
        throw std::invalid_argument("matmul: shape mismatch");
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mm(a, b, c, a.rows, a.cols, b.rows, b.cols);
    const std::size_t n = a.rows, m = a.cols, p = b.cols;
    const bool par = go_parallel(n * m * p);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* crow = c.data.data() + i * p;
        for (std::size_t j = 0; j < p; ++j) crow[j] = 0.0;
        const double* arow = a.data.data() + i * m;
        for (std::size_t k = 0; k < m; ++k) {
            const double aik = arow[k];
            const double* brow = b.data.data() + k * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
        }
    }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mm(a, b, c, a.cols, a.rows, b.rows, b.cols);
    const std::size_t n = a.cols, m = a.rows, p = b.cols;
    const bool par = go_parallel(n * m * p);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* crow = c.data.data() + i * p;
        for (std::size_t r = 0; r < m; ++r) {
            const double ari = a.data[r * n + i];
            const double* brow = b.data.data() + r * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += ari * brow[j];
        }
    }
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mm(a, b, c, a.rows, a.cols, b.cols, b.rows);
    const std::size_t n = a.rows, m = a.cols, p = b.rows;
    const bool par = go_parallel(n * m * p);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const double* arow = a.data.data() + i * m;
        double* crow = c.data.data() + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            const double* brow = b.data.data() + j * m;
            double s = crow[j];
            for (std::size_t k = 0; k < m; ++k) s += arow[k] * brow[k];
            crow[j] = s;
        }
    }
}

void sq_distances(std::span<const Vec3> points, const Vec3& query, std::span<double> out) {
    const std::size_t n = points.size();
    const bool par = go_parallel(n * 8);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
        out[static_cast<std::size_t>(i)] = sq_dist(points[static_cast<std::size_t>(i)], query);
}

std::size_t fps_update(std::span<const Vec3> points, std::size_t picked, std::span<double> min_d) {
    const std::size_t n = points.size();
    const Vec3 p = points[picked];
    std::size_t best = 0;
    double best_d = -1.0;
    const bool par = go_parallel(n * 8);
#pragma omp parallel if (par)
    {
        std::size_t local_best = 0;
        double local_d = -1.0;
#pragma omp for schedule(static) nowait
        for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            const double d = sq_dist(points[i], p);
            if (d < min_d[i]) min_d[i] = d;
            if (min_d[i] > local_d) {
                local_d = min_d[i];
                local_best = i;
            }
        }
#pragma omp critical(masklrf_fps_reduce)
        {
            if (local_d > best_d || (local_d == best_d && local_best < best)) {
                best_d = local_d;
                best = local_best;
            }
        }
    }
    return best;
}

namespace serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mm(a, b, c, a.rows, a.cols, b.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mm(a, b, c, a.cols, a.rows, b.rows, b.cols);
    for (std::size_t i = 0; i < a.cols; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double s = c(i, j);
            for (std::size_t r = 0; r < a.rows; ++r) s += a(r, i) * b(r, j);
            c(i, j) = s;
        }
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mm(a, b, c, a.rows, a.cols, b.cols, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j) {
            double s = c(i, j);
            for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(j, k);
            c(i, j) = s;
        }
}

void sq_distances(std::span<const Vec3> points, const Vec3& query, std::span<double> out) {
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = sq_dist(points[i], query);
}

std::size_t fps_update(std::span<const Vec3> points, std::size_t picked, std::span<double> min_d) {
    const Vec3 p = points[picked];
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double d = sq_dist(points[i], p);
        if (d < min_d[i]) min_d[i] = d;
        if (min_d[i] > best_d) {
            best_d = min_d[i];
            best = i;
        }
    }
    return best;
}

}  // namespace serial

}  // namespace masklrf::kernels
