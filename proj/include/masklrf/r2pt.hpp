#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "masklrf/autograd.hpp"
#include "masklrf/geomio.hpp"
#include "masklrf/patchify.hpp"
#include "masklrf/pod.hpp"
#include "masklrf/relpose.hpp"

namespace masklrf {

struct ModelConfig {
    std::size_t d = 384;
    std::size_t heads = 6;
    std::size_t enc_blocks = 12;
    std::size_t dec_blocks = 4;
    std::size_t grid = 6;
    std::size_t mlp_ratio = 4;
    std::size_t num_points = 1024;
    std::size_t num_patches = 64;
    std::size_t patch_size = 32;
    std::size_t finetune_targets = 16;

    static ModelConfig paper() { return {}; }
    /// d=48, heads=2, enc=4, dec=2, G=4, k=16, N_p=16, n=256.
    static ModelConfig desk();
    /// Small enough for exhaustive finite-difference checks.
    static ModelConfig tiny();

    void validate() const;
    std::size_t pod_length() const { return PodTarget::length(grid); }

    std::map<std::string, std::string> to_kv() const;
    /// Unknown keys are ignored so a shared config file can also carry training keys.
    static ModelConfig from_kv(const std::map<std::string, std::string>& kv, ModelConfig base);
    bool operator==(const ModelConfig&) const = default;
};

enum class Mode { pretrain, finetune };

/// Attention targets per query: max(1, floor(visible/4)) when pretraining,
/// the fixed finetune count otherwise.
std::size_t attention_targets(const ModelConfig& cfg, Mode mode, std::size_t visible);

struct Tensor {
    std::string name;
    Matrix value;
};

struct LinearRef {
    std::size_t w = 0;
    std::size_t b = 0;
};

struct BlockRef {
    std::size_t ln1_g = 0, ln1_b = 0;
    std::size_t wq = 0, wk = 0, wv = 0;
    LinearRef proj;
    std::size_t ln2_g = 0, ln2_b = 0;
    LinearRef fc1, fc2;
};

/// Indices into ModelState::tensors for each component.
struct ModelLayout {
    LinearRef embed1, embed2, embed3, embed4;
    LinearRef rel1, rel2;
    std::vector<BlockRef> enc;
    std::vector<BlockRef> dec;
    std::size_t mask_token = 0;
    LinearRef head;
};

struct ModelState {
    ModelConfig config;
    std::vector<Tensor> tensors;
    ModelLayout layout;

    /// Truncated normal (sigma 0.02, cut at 2 sigma) weights, normal(0.02) mask
    /// token, zero biases, unit normalization gains.
    static ModelState init(const ModelConfig& cfg, std::uint64_t seed);
    static ModelState zeros(const ModelConfig& cfg);
    /// Empty-valued tensors with the right names and shapes.
    static ModelState skeleton(const ModelConfig& cfg);

    const Matrix& at(std::size_t i) const { return tensors[i].value; }
    Matrix& at(std::size_t i) { return tensors[i].value; }
    std::size_t num_parameters() const;
    RelPoseEmbedder relpose_embedder() const;
};

struct TokenSet {
    Matrix tokens;
    std::vector<Vec3> centers;
    std::vector<Mat3> frames;
    std::vector<std::size_t> patch_indices;

    std::size_t size() const { return tokens.rows; }
};

struct EncodeOptions {
    /// Control run: embed raw center-relative points and feed absolute center
    /// offsets instead of relative poses. Not rotation-invariant.
    bool absolute_pose = false;
};

/// Graph-level forward passes over a bound ModelState.
class Forward {
public:
    Forward(ag::Graph& g, const ModelState& state, bool requires_grad);

    ag::Graph& graph() { return g_; }
    ag::Var param(std::size_t i) const { return params_[i]; }
    const std::vector<ag::Var>& params() const { return params_; }

    ag::Var linear(ag::Var x, const LinearRef& l);
    /// Stacked point sets (m groups of k rows) -> m x d tokens.
    ag::Var embed_points(const Matrix& stacked, std::size_t group);
    ag::Var embed_patches(const std::vector<Patch>& patches, std::span<const std::size_t> ids, bool normalize = true);
    ag::Var block(ag::Var x, const BlockRef& b, const ag::AttentionPattern& pattern, ag::Var relpose);

    /// Builds local (odd blocks) and global (even blocks) patterns for the given
    /// tokens and the relative-pose embeddings for every demanded pair.
    struct Attention {
        ag::AttentionPattern local;
        ag::AttentionPattern global;
        ag::Var relpose;
    };
    Attention attention_for(const std::vector<Patch>& patches, std::span<const std::size_t> ids, std::size_t t,
                            bool absolute_pose = false);

    std::vector<ag::Var> encode(const std::vector<Patch>& patches, std::span<const std::size_t> visible, Mode mode,
                                const EncodeOptions& opt = {});
    /// Predictions (masked x G^3*10) from the last encoder output.
    ag::Var decode(const std::vector<Patch>& patches, std::span<const std::size_t> visible,
                   std::span<const std::size_t> masked, ag::Var encoded);

private:
    ag::Graph& g_;
    const ModelState& state_;
    std::vector<ag::Var> params_;
};

std::vector<double> embed_patch(std::span<const Vec3> norm_points, const ModelState& state);

std::vector<std::size_t> select_targets_local(std::span<const Vec3> centers, std::size_t query, std::size_t t);
std::vector<std::size_t> select_targets_global(std::span<const Vec3> centers, std::size_t t);

/// One pose-aware block. relpose.at(a, b) must hold R for every (query a, target b)
/// named in targets, indexed by token position.
TokenSet attention_block(const TokenSet& tok, const std::vector<std::vector<std::size_t>>& targets,
                         const RelPoseTable& relpose, const ModelState& state, const BlockRef& block);

/// Output of every encoder block for the given visible patches.
std::vector<TokenSet> encoder_forward(const std::vector<Patch>& patches, const std::vector<std::size_t>& visible,
                                      const ModelState& state, Mode mode, const EncodeOptions& opt = {});

/// Reconstruction predictions for the masked patches, row i for masked[i].
Matrix decoder_forward(const TokenSet& encoded, const std::vector<Patch>& patches,
                       const std::vector<std::size_t>& masked, const ModelState& state);

/// Per-block token mean, concatenated in block order.
std::vector<double> global_feature(const std::vector<TokenSet>& blocks);

/// Inverse-squared-distance blend of the 3 nearest token centers per point.
Matrix propagate_pointwise(const TokenSet& last, const PointCloud& pc);

/// Patches with frames assigned, ready for the model.
std::vector<Patch> prepare_patches(const PointCloud& pc, const ModelConfig& cfg);

std::vector<std::size_t> all_indices(std::size_t n);

}  // namespace masklrf
