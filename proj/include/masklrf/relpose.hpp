#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "masklrf/autograd.hpp"
#include "masklrf/patchify.hpp"
#include "masklrf/types.hpp"

namespace masklrf {

/// Pose of patch i seen from patch j: RP = (c_i - c_j) F_j, RO = F_i^T F_j.
struct RelPose {
    Vec3 RP{};
    Mat3 RO;

    /// (RP, RO row-major).
    std::array<double, 12> flat12() const;
};

/// Two-layer MLP 12 -> hidden -> width with GELU in between.
struct RelPoseEmbedder {
    Matrix w1;  // 12 x hidden
    Matrix b1;  // 1 x hidden
    Matrix w2;  // hidden x width
    Matrix b2;  // 1 x width

    static RelPoseEmbedder zeros(std::size_t hidden, std::size_t width);
    std::size_t width() const { return w2.cols; }
};

RelPose relative_pose(const Patch& pi, const Patch& pj);

/// Batched MLP over an (m x 12) input inside a graph.
ag::Var embed_relpose(ag::Graph& g, ag::Var flat, ag::Var w1, ag::Var b1, ag::Var w2, ag::Var b2);

std::vector<double> embed_relpose(const RelPose& rp, const RelPoseEmbedder& emb);

/// Embeddings R_ab for (rows[a], cols[b]). With a demand mask only the
/// requested pairs are computed; entries not demanded stay empty.
struct RelPoseTable {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<std::optional<std::vector<double>>> entries;

    const std::optional<std::vector<double>>& at(std::size_t a, std::size_t b) const { return entries[a * n_cols + b]; }
};

RelPoseTable relpose_table(const std::vector<Patch>& patches, const std::vector<std::size_t>& rows,
                           const std::vector<std::size_t>& cols, const RelPoseEmbedder& emb,
                           const std::vector<std::vector<bool>>* demand = nullptr);

}  // namespace masklrf
