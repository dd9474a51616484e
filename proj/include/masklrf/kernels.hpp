#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "masklrf/types.hpp"

// Dense inner loops used by the model and the samplers. Every kernel has an
// OpenMP version (namespace kernels) and a plain serial reference
// (namespace kernels::serial). Both accumulate in the same order, so their
// outputs are bit-identical; tests and bench/ rely on that.
namespace masklrf::kernels {

/// C = A * B
void matmul(const Matrix& a, const Matrix& b, Matrix& c);
/// C += A^T * B
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);
/// C += A * B^T
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c);

/// out[i] = |points[i] - query|^2
void sq_distances(std::span<const Vec3> points, const Vec3& query, std::span<double> out);

/// min_d[i] = min(min_d[i], |points[i] - points[picked]|^2); returns argmax of
/// min_d over all i, lowest index on ties.
std::size_t fps_update(std::span<const Vec3> points, std::size_t picked, std::span<double> min_d);

/// Number of threads OpenMP will use for the next parallel region (1 without OpenMP).
int max_threads();
void set_threads(int n);

namespace serial {
void matmul(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c);
void sq_distances(std::span<const Vec3> points, const Vec3& query, std::span<double> out);
std::size_t fps_update(std::span<const Vec3> points, std::size_t picked, std::span<double> min_d);
}  // namespace serial

}  // namespace masklrf::kernels
