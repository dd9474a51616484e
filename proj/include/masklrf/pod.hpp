#pragma once

#include <span>
#include <vector>

#include "masklrf/patchify.hpp"
#include "masklrf/types.hpp"

namespace masklrf {

inline constexpr std::size_t kPodChannels = 10;

/// G^3 cells x 10 channels, flattened x-major then y, z, channel. Per cell:
/// frequency, mean box-normalized coordinates (3), upper triangle of the mean
/// normal outer product (xx, xy, xz, yy, yz, zz).
struct PodTarget {
    std::size_t grid = 0;
    std::vector<double> values;

    static std::size_t length(std::size_t grid) { return grid * grid * grid * kPodChannels; }
    std::size_t cell_offset(std::size_t ix, std::size_t iy, std::size_t iz) const {
        return ((ix * grid + iy) * grid + iz) * kPodChannels;
    }
};

/// Descriptor of one rotation-normalized patch.
PodTarget pod_grid(std::span<const Vec3> points, std::span<const Vec3> normals, std::size_t grid);

/// One target per masked patch, in split.masked order.
std::vector<PodTarget> pod_targets_for_masked(const std::vector<Patch>& patches, const MaskSplit& split,
                                              std::size_t grid);

/// Stacks targets into an (count x G^3*10) matrix.
Matrix stack_targets(const std::vector<PodTarget>& targets, std::size_t grid);

}  // namespace masklrf
