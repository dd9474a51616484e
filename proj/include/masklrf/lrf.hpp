#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <vector>

#include "masklrf/patchify.hpp"
#include "masklrf/types.hpp"

namespace masklrf {

struct SymMat3 {
    double xx = 0, xy = 0, xz = 0, yy = 0, yz = 0, zz = 0;

    Mat3 full() const {
        Mat3 m;
        m(0, 0) = xx;
        m(0, 1) = m(1, 0) = xy;
        m(0, 2) = m(2, 0) = xz;
        m(1, 1) = yy;
        m(1, 2) = m(2, 1) = yz;
        m(2, 2) = zz;
        return m;
    }
};

/// Ascending eigenvalues; column i of `vectors` pairs with values[i].
struct EigenDecomp3 {
    std::array<double, 3> values{};
    Mat3 vectors;
};

class NonConvergence : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LocalFrame {
    Mat3 F;
    /// True when the frame fell back to a non-equivariant choice (undefined e2 or
    /// an e1 sign that no rule could fix).
    bool degenerate = false;
    /// Gap between the two smallest covariance eigenvalues.
    double eigen_gap = 0.0;
};

/// (1/k) sum (p - mean)(p - mean)^T over the rows.
SymMat3 covariance3(std::span<const Vec3> rows);

/// Cyclic Jacobi. Each eigenvector's largest-magnitude component is made positive.
EigenDecomp3 eig_sym3(const SymMat3& a);

/// Frame columns (e1, e2, e3): e1 is the smallest-variance axis pointing away
/// from the patch mass, e2 the barycenter direction projected off e1, e3 = e1 x e2.
LocalFrame compute_lrf(const Patch& patch);

/// Fills F / has_frame / degenerate on every patch.
void assign_lrfs(std::vector<Patch>& patches);

struct NormalizedPatch {
    std::vector<Vec3> points;
    std::optional<std::vector<Vec3>> normals;
};

/// S F (and normals F). Throws if the patch frame was never set.
NormalizedPatch rotation_normalize(const Patch& patch);

}  // namespace masklrf
