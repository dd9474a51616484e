#include "masklrf/patchify.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "masklrf/kernels.hpp"

namespace masklrf {

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t count) {
    const std::size_t n = points.size();
    if (count == 0) throw std::invalid_argument("farthest_point_sample: count must be at least 1");
    if (count > n) throw std::invalid_argument("farthest_point_sample: count exceeds point count");
    std::vector<std::size_t> picked;
    picked.reserve(count);
    std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
    std::size_t next = 0;
    for (std::size_t s = 0; s < count; ++s) {
        picked.push_back(next);
        // Selected points get a negative sentinel so duplicates can never be re-picked.
        min_d[next] = -1.0;
        if (s + 1 < count) next = kernels::fps_update(points, next, min_d);
    }
    return picked;
}

std::vector<std::size_t> knn(std::span<const Vec3> points, const Vec3& query, std::size_t k) {
    const std::size_t n = points.size();
    if (k > n) throw std::invalid_argument("knn: k exceeds point count");
    std::vector<double> d(n);
    kernels::sq_distances(points, query, d);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto less = [&](std::size_t a, std::size_t b) { return d[a] < d[b] || (d[a] == d[b] && a < b); };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), less);
    idx.resize(k);
    return idx;
}

std::vector<Patch> build_patches(const PointCloud& pc, std::size_t num_patches, std::size_t k) {
    if (k == 0) throw std::invalid_argument("build_patches: k must be at least 1");
    const auto centers = farthest_point_sample(pc.positions, num_patches);
    std::vector<Patch> patches(centers.size());
    for (std::size_t p = 0; p < centers.size(); ++p) {
        Patch& patch = patches[p];
        patch.c = pc.positions[centers[p]];
        patch.member_indices = knn(pc.positions, patch.c, k);
        patch.S.reserve(k);
        for (auto i : patch.member_indices) patch.S.push_back(pc.positions[i] - patch.c);
        if (pc.normals) {
            std::vector<Vec3> nn;
            nn.reserve(k);
            for (auto i : patch.member_indices) nn.push_back((*pc.normals)[i]);
            patch.normals = std::move(nn);
        }
    }
    return patches;
}

std::size_t masked_count(std::size_t num_patches, unsigned ratio_percent) {
    if (ratio_percent > 100) throw std::invalid_argument("mask ratio must be within [0, 100]");
    return (2 * ratio_percent * num_patches + 100) / 200;
}

MaskSplit mask_split(std::size_t num_patches, unsigned ratio_percent, std::uint64_t seed) {
    const std::size_t n_masked = masked_count(num_patches, ratio_percent);
    std::vector<std::size_t> order(num_patches);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, 0x4d41534bULL));
    std::shuffle(order.begin(), order.end(), rng);
    MaskSplit split;
    split.masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_masked));
    split.visible.assign(order.begin() + static_cast<std::ptrdiff_t>(n_masked), order.end());
    std::sort(split.masked.begin(), split.masked.end());
    std::sort(split.visible.begin(), split.visible.end());
    return split;
}

}  // namespace masklrf
