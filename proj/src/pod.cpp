#include "masklrf/pod.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "masklrf/lrf.hpp"

namespace masklrf {

namespace {

// Box sides below this fraction of the longest side are treated as flat; LRF
// normalization leaves round-off of order 1e-17 on the normal axis of planar patches.
constexpr double kFlatAxis = 1e-9;

}  // namespace

PodTarget pod_grid(std::span<const Vec3> points, std::span<const Vec3> normals, std::size_t grid) {
    const std::size_t k = points.size();
    if (k == 0) throw std::invalid_argument("pod_grid: empty patch");
    if (normals.size() != k) throw std::invalid_argument("pod_grid: normals required for every point");
    if (grid == 0) throw std::invalid_argument("pod_grid: grid size must be positive");

    Vec3 lo = points[0], hi = points[0];
    for (const auto& p : points)
        for (std::size_t a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    Vec3 extent = hi - lo;
    const double longest = std::max({extent[0], extent[1], extent[2]});
    std::array<bool, 3> flat{};
    for (std::size_t a = 0; a < 3; ++a) {
        flat[a] = longest == 0.0 || extent[a] <= kFlatAxis * longest;
        extent[a] += 1e-9 * (extent[a] + 1.0);
    }

    PodTarget out;
    out.grid = grid;
    out.values.assign(PodTarget::length(grid), 0.0);
    std::vector<std::size_t> count(grid * grid * grid, 0);

    // Accumulate in lexicographic point order so any permutation of the input
    // produces bit-identical sums.
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (points[a] != points[b]) return points[a] < points[b];
        return normals[a] < normals[b];
    });

    for (const std::size_t i : order) {
        std::array<std::size_t, 3> cell{};
        Vec3 u{};
        for (std::size_t a = 0; a < 3; ++a) {
            if (flat[a]) {
                u[a] = 0.5;
                cell[a] = 0;
            } else {
                u[a] = (points[i][a] - lo[a]) / extent[a];
                const double f = std::floor(static_cast<double>(grid) * u[a]);
                cell[a] = static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(grid - 1)));
            }
        }
        const std::size_t off = out.cell_offset(cell[0], cell[1], cell[2]);
        ++count[off / kPodChannels];
        const Vec3& n = normals[i];
        double* v = out.values.data() + off;
        v[1] += u[0];
        v[2] += u[1];
        v[3] += u[2];
        v[4] += n[0] * n[0];
        v[5] += n[0] * n[1];
        v[6] += n[0] * n[2];
        v[7] += n[1] * n[1];
        v[8] += n[1] * n[2];
        v[9] += n[2] * n[2];
    }
    for (std::size_t c = 0; c < count.size(); ++c) {
        if (count[c] == 0) continue;
        double* v = out.values.data() + c * kPodChannels;
        const double inv = 1.0 / static_cast<double>(count[c]);
        v[0] = static_cast<double>(count[c]) / static_cast<double>(k);
        for (std::size_t ch = 1; ch < kPodChannels; ++ch) v[ch] *= inv;
    }
    return out;
}

std::vector<PodTarget> pod_targets_for_masked(const std::vector<Patch>& patches, const MaskSplit& split,
                                              std::size_t grid) {
    std::vector<PodTarget> out;
    out.reserve(split.masked.size());
    for (auto idx : split.masked) {
        const auto& patch = patches.at(idx);
        if (!patch.normals) throw std::invalid_argument("pod_targets_for_masked: masked patch has no normals");
        const auto norm = rotation_normalize(patch);
        out.push_back(pod_grid(norm.points, *norm.normals, grid));
    }
    return out;
}

Matrix stack_targets(const std::vector<PodTarget>& targets, std::size_t grid) {
    const std::size_t len = PodTarget::length(grid);
    Matrix out(targets.size(), len);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i].values.size() != len) throw std::invalid_argument("stack_targets: grid size mismatch");
        std::copy(targets[i].values.begin(), targets[i].values.end(), out.row(i).begin());
    }
    return out;
}

}  // namespace masklrf
