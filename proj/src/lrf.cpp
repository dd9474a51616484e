#include "masklrf/lrf.hpp"

#include <algorithm>
#include <cmath>

namespace masklrf {

namespace {

constexpr int kMaxSweeps = 50;
constexpr double kE2Degenerate = 1e-8;
constexpr double kSignDegenerate = 1e-9;

Vec3 normalized(const Vec3& v) { return (1.0 / norm(v)) * v; }

}  // namespace

SymMat3 covariance3(std::span<const Vec3> rows) {
    const std::size_t k = rows.size();
    if (k < 3) throw std::invalid_argument("covariance3: need at least 3 rows");
    Vec3 mean{};
    for (const auto& p : rows) mean = mean + p;
    mean = (1.0 / static_cast<double>(k)) * mean;
    SymMat3 c;
    for (const auto& p : rows) {
        const Vec3 d = p - mean;
        c.xx += d[0] * d[0];
        c.xy += d[0] * d[1];
        c.xz += d[0] * d[2];
        c.yy += d[1] * d[1];
        c.yz += d[1] * d[2];
        c.zz += d[2] * d[2];
    }
    const double inv = 1.0 / static_cast<double>(k);
    c.xx *= inv;
    c.xy *= inv;
    c.xz *= inv;
    c.yy *= inv;
    c.yz *= inv;
    c.zz *= inv;
    return c;
}

EigenDecomp3 eig_sym3(const SymMat3& in) {
    Mat3 a = in.full();
    for (double v : a.a)
        if (!std::isfinite(v)) throw std::invalid_argument("eig_sym3: non-finite input");
    Mat3 v = Mat3::identity();

    double scale = 0.0;
    for (double x : a.a) scale += x * x;
    scale = std::sqrt(scale);
    const double tol = 1e-14 * (1.0 + scale);

    auto off = [&a] { return std::sqrt(2.0 * (a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2))); };

    int sweep = 0;
    while (off() > tol) {
        if (++sweep > kMaxSweeps) throw NonConvergence("eig_sym3: no convergence after 50 sweeps");
        for (std::size_t p = 0; p < 2; ++p) {
            for (std::size_t q = p + 1; q < 3; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                // A <- J^T A J with J the (p, q) Givens rotation.
                for (std::size_t r = 0; r < 3; ++r) {
                    const double arp = a(r, p), arq = a(r, q);
                    a(r, p) = c * arp - s * arq;
                    a(r, q) = s * arp + c * arq;
                }
                for (std::size_t r = 0; r < 3; ++r) {
                    const double apr = a(p, r), aqr = a(q, r);
                    a(p, r) = c * apr - s * aqr;
                    a(q, r) = s * apr + c * aqr;
                }
                a(p, q) = a(q, p) = 0.0;
                for (std::size_t r = 0; r < 3; ++r) {
                    const double vrp = v(r, p), vrq = v(r, q);
                    v(r, p) = c * vrp - s * vrq;
                    v(r, q) = s * vrp + c * vrq;
                }
            }
        }
    }

    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&a](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
    EigenDecomp3 out;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t src = order[i];
        out.values[i] = a(src, src);
        Vec3 col = v.column(src);
        std::size_t big = 0;
        for (std::size_t r = 1; r < 3; ++r)
            if (std::abs(col[r]) > std::abs(col[big])) big = r;
        if (col[big] < 0) col = -1.0 * col;
        const double len = norm(col);
        for (std::size_t r = 0; r < 3; ++r) out.vectors(r, i) = col[r] / len;
    }
    return out;
}

LocalFrame compute_lrf(const Patch& patch) {
    const auto& S = patch.S;
    const std::size_t k = S.size();
    const auto eig = eig_sym3(covariance3(S));

    double radius = 0.0;
    Vec3 bary{};
    for (const auto& p : S) {
        radius = std::max(radius, norm(p));
        bary = bary + p;
    }
    bary = (1.0 / static_cast<double>(k)) * bary;

    LocalFrame out;
    out.eigen_gap = eig.values[1] - eig.values[0];

    Vec3 e1 = eig.vectors.column(0);
    // Outward rule: sum over points of (0 - p).e1 must be non-negative, i.e. e1 points
    // away from the barycenter.
    const double mass = -dot(bary, e1);
    const bool mass_decides = std::abs(mass) > kSignDegenerate * radius;
    if (mass_decides && mass < 0) e1 = -1.0 * e1;

    Vec3 proj = bary - dot(bary, e1) * e1;
    Vec3 e2{};
    if (norm(proj) >= kE2Degenerate * radius && radius > 0) {
        e2 = normalized(proj);
    } else {
        const Vec3 mid = eig.vectors.column(1);
        e2 = normalized(mid - dot(mid, e1) * e1);
        out.degenerate = true;
    }
    Vec3 e3 = cross(e1, e2);

    if (!mass_decides) {
        // Flat or mirror-symmetric patch: the outward rule is decided by round-off, so
        // orient (e1, e3) by the third moment of the points along e3.
        double m3 = 0.0;
        for (const auto& p : S) {
            const double t = dot(p, e3);
            m3 += t * t * t;
        }
        if (std::abs(m3) <= kSignDegenerate * static_cast<double>(k) * radius * radius * radius) {
            out.degenerate = true;
        } else if (m3 < 0) {
            e1 = -1.0 * e1;
            e3 = -1.0 * e3;
        }
    }
    out.F = Mat3::from_columns(e1, e2, e3);
    return out;
}

void assign_lrfs(std::vector<Patch>& patches) {
    for (auto& p : patches) {
        const auto frame = compute_lrf(p);
        p.F = frame.F;
        p.degenerate = frame.degenerate;
        p.has_frame = true;
    }
}

NormalizedPatch rotation_normalize(const Patch& patch) {
    if (!patch.has_frame) throw std::logic_error("rotation_normalize: patch frame not set");
    NormalizedPatch out;
    out.points.reserve(patch.k());
    for (const auto& p : patch.S) out.points.push_back(p * patch.F);
    if (patch.normals) {
        std::vector<Vec3> nn;
        nn.reserve(patch.k());
        for (const auto& n : *patch.normals) nn.push_back(n * patch.F);
        out.normals = std::move(nn);
    }
    return out;
}

}  // namespace masklrf
