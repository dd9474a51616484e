#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "masklrf/types.hpp"

namespace masklrf {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// n oriented points. Normals, when present, are unit length.
struct PointCloud {
    std::vector<Vec3> positions;
    std::optional<std::vector<Vec3>> normals;

    std::size_t size() const { return positions.size(); }
    bool has_normals() const { return normals.has_value(); }
};

/// Proper rotation acting on row vectors (p' = p R).
struct Rotation {
    Mat3 R = Mat3::identity();
};

/// Throws std::invalid_argument if the cloud breaks its invariants.
void validate(const PointCloud& pc);

/// OPC text format: "OPC <n> <has_normals>" then n rows of 3 or 6 reals.
PointCloud load_point_cloud(std::string_view text);
std::string save_point_cloud(const PointCloud& pc);

PointCloud read_point_cloud_file(const std::string& path);
void write_point_cloud_file(const PointCloud& pc, const std::string& path);

enum class ShapeKind { sphere, cube, torus, two_planes };

ShapeKind parse_shape_kind(std::string_view name);
std::string_view shape_kind_name(ShapeKind kind);

inline constexpr double kTorusMajor = 1.0;
inline constexpr double kTorusMinor = 0.4;

/// Raw i.i.d. samples drawn per output point before FPS thinning.
inline constexpr std::size_t kShapeOversample = 8;

/// n well-spread surface points with analytic normals; deterministic per (kind, n, seed).
PointCloud generate_shape(ShapeKind kind, std::size_t n, std::uint64_t seed);

/// Uniform on SO(3): a normalized quaternion with standard-normal components.
Rotation random_rotation(std::uint64_t seed);

PointCloud apply_rotation(const PointCloud& pc, const Rotation& rot);

/// Per-axis factors drawn uniformly from [0.8, 1.2].
Vec3 draw_scale_factors(std::uint64_t seed);
PointCloud anisotropic_scale(const PointCloud& pc, std::uint64_t seed);
/// Scales positions per axis; normals go through the inverse transpose and are renormalized.
PointCloud scale_with_factors(const PointCloud& pc, const Vec3& factors);

/// Mixes a base seed with stream identifiers into an independent 64-bit seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace masklrf
