#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "masklrf/geomio.hpp"
#include "masklrf/types.hpp"

namespace masklrf {

/// k points around a center: S holds p - c, F is the local reference frame
/// (identity until compute_lrf fills it).
struct Patch {
    std::vector<Vec3> S;
    Vec3 c{};
    Mat3 F = Mat3::identity();
    bool has_frame = false;
    bool degenerate = false;
    std::optional<std::vector<Vec3>> normals;
    std::vector<std::size_t> member_indices;

    std::size_t k() const { return S.size(); }
};

struct MaskSplit {
    std::vector<std::size_t> visible;
    std::vector<std::size_t> masked;
};

/// Greedy farthest point sampling starting at index 0; ties go to the lowest index.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t count);

/// k nearest indices to query ordered by (distance, index).
std::vector<std::size_t> knn(std::span<const Vec3> points, const Vec3& query, std::size_t k);

/// FPS centers with their k nearest points; frames are left unset.
std::vector<Patch> build_patches(const PointCloud& pc, std::size_t num_patches, std::size_t k);

/// Number of masked patches: M% of num_patches rounded half-up.
std::size_t masked_count(std::size_t num_patches, unsigned ratio_percent);

MaskSplit mask_split(std::size_t num_patches, unsigned ratio_percent, std::uint64_t seed);

}  // namespace masklrf
