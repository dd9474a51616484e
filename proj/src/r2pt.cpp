#include "masklrf/r2pt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "masklrf/lrf.hpp"

namespace masklrf {

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.d = 48;
    c.heads = 2;
    c.enc_blocks = 4;
    c.dec_blocks = 2;
    c.grid = 4;
    c.patch_size = 16;
    c.num_patches = 16;
    c.num_points = 256;
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.d = 8;
    c.heads = 2;
    c.enc_blocks = 2;
    c.dec_blocks = 2;
    c.grid = 2;
    c.mlp_ratio = 2;
    c.patch_size = 8;
    c.num_patches = 6;
    c.num_points = 64;
    c.finetune_targets = 4;
    return c;
}

void ModelConfig::validate() const {
    if (d == 0 || heads == 0 || enc_blocks == 0 || dec_blocks == 0 || grid == 0 || mlp_ratio == 0 ||
        num_points == 0 || num_patches == 0 || patch_size == 0 || finetune_targets == 0)
        throw std::invalid_argument("model config: all counts must be at least 1");
    if (d % heads != 0) throw std::invalid_argument("model config: d must be divisible by heads");
    if (d % 2 != 0) throw std::invalid_argument("model config: d must be even");
    if (patch_size < 3) throw std::invalid_argument("model config: patches need at least 3 points");
    if (num_patches > num_points || patch_size > num_points)
        throw std::invalid_argument("model config: N_p and k must not exceed n");
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
    return {{"d", std::to_string(d)},
            {"heads", std::to_string(heads)},
            {"enc_blocks", std::to_string(enc_blocks)},
            {"dec_blocks", std::to_string(dec_blocks)},
            {"G", std::to_string(grid)},
            {"mlp_ratio", std::to_string(mlp_ratio)},
            {"n", std::to_string(num_points)},
            {"N_p", std::to_string(num_patches)},
            {"k", std::to_string(patch_size)},
            {"finetune_t", std::to_string(finetune_targets)}};
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv, ModelConfig base) {
    auto read = [&kv](const char* key, std::size_t& field) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(it->second, &pos);
        } catch (const std::exception&) {
            throw std::invalid_argument(std::string("config: bad value for ") + key);
        }
        if (pos != it->second.size()) throw std::invalid_argument(std::string("config: bad value for ") + key);
        field = static_cast<std::size_t>(v);
    };
    read("d", base.d);
    read("heads", base.heads);
    read("enc_blocks", base.enc_blocks);
    read("dec_blocks", base.dec_blocks);
    read("G", base.grid);
    read("mlp_ratio", base.mlp_ratio);
    read("n", base.num_points);
    read("N_p", base.num_patches);
    read("k", base.patch_size);
    read("finetune_t", base.finetune_targets);
    return base;
}

std::size_t attention_targets(const ModelConfig& cfg, Mode mode, std::size_t visible) {
    if (mode == Mode::finetune) return cfg.finetune_targets;
    return std::max<std::size_t>(1, visible / 4);
}

namespace {

enum class Init { weight, bias, gain, token };

struct LayoutBuilder {
    std::vector<Tensor> tensors;
    std::vector<Init> kinds;

    std::size_t add(std::string name, std::size_t r, std::size_t c, Init kind) {
        tensors.push_back({std::move(name), Matrix(r, c)});
        kinds.push_back(kind);
        return tensors.size() - 1;
    }
    LinearRef linear(const std::string& name, std::size_t in, std::size_t out) {
        LinearRef l;
        l.w = add(name + ".w", in, out, Init::weight);
        l.b = add(name + ".b", 1, out, Init::bias);
        return l;
    }
    BlockRef block(const std::string& p, const ModelConfig& c) {
        BlockRef b;
        b.ln1_g = add(p + ".ln1.g", 1, c.d, Init::gain);
        b.ln1_b = add(p + ".ln1.b", 1, c.d, Init::bias);
        b.wq = add(p + ".attn.wq", c.d, c.d, Init::weight);
        b.wk = add(p + ".attn.wk", c.d, c.d, Init::weight);
        b.wv = add(p + ".attn.wv", c.d, c.d, Init::weight);
        b.proj = linear(p + ".attn.proj", c.d, c.d);
        b.ln2_g = add(p + ".ln2.g", 1, c.d, Init::gain);
        b.ln2_b = add(p + ".ln2.b", 1, c.d, Init::bias);
        b.fc1 = linear(p + ".mlp.fc1", c.d, c.d * c.mlp_ratio);
        b.fc2 = linear(p + ".mlp.fc2", c.d * c.mlp_ratio, c.d);
        return b;
    }
};

ModelState build_layout(const ModelConfig& cfg, std::vector<Init>* kinds) {
    cfg.validate();
    LayoutBuilder lb;
    ModelState s;
    s.config = cfg;
    const std::size_t half = cfg.d / 2;
    s.layout.embed1 = lb.linear("embed.fc1", 3, half);
    s.layout.embed2 = lb.linear("embed.fc2", half, half);
    s.layout.embed3 = lb.linear("embed.fc3", cfg.d, cfg.d);
    s.layout.embed4 = lb.linear("embed.fc4", cfg.d, cfg.d);
    s.layout.rel1 = lb.linear("relpose.fc1", 12, cfg.d);
    s.layout.rel2 = lb.linear("relpose.fc2", cfg.d, cfg.d);
    for (std::size_t b = 0; b < cfg.enc_blocks; ++b) s.layout.enc.push_back(lb.block("enc." + std::to_string(b), cfg));
    for (std::size_t b = 0; b < cfg.dec_blocks; ++b) s.layout.dec.push_back(lb.block("dec." + std::to_string(b), cfg));
    s.layout.mask_token = lb.add("mask_token", 1, cfg.d, Init::token);
    s.layout.head = lb.linear("head", cfg.d, cfg.pod_length());
    s.tensors = std::move(lb.tensors);
    if (kinds) *kinds = std::move(lb.kinds);
    return s;
}

}  // namespace

ModelState ModelState::skeleton(const ModelConfig& cfg) { return build_layout(cfg, nullptr); }

ModelState ModelState::zeros(const ModelConfig& cfg) { return build_layout(cfg, nullptr); }

ModelState ModelState::init(const ModelConfig& cfg, std::uint64_t seed) {
    std::vector<Init> kinds;
    ModelState s = build_layout(cfg, &kinds);
    constexpr double sigma = 0.02;
    for (std::size_t i = 0; i < s.tensors.size(); ++i) {
        std::mt19937_64 rng(derive_seed(seed, 0x494e4954ULL, i));
        std::normal_distribution<double> gauss(0.0, sigma);
        auto& m = s.tensors[i].value;
        switch (kinds[i]) {
            case Init::weight:
                for (auto& x : m.data) {
                    do {
                        x = gauss(rng);
                    } while (std::abs(x) > 2.0 * sigma);
                }
                break;
            case Init::token:
                for (auto& x : m.data) x = gauss(rng);
                break;
            case Init::gain:
                std::fill(m.data.begin(), m.data.end(), 1.0);
                break;
            case Init::bias:
                break;
        }
    }
    return s;
}

std::size_t ModelState::num_parameters() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.value.size();
    return n;
}

RelPoseEmbedder ModelState::relpose_embedder() const {
    return {at(layout.rel1.w), at(layout.rel1.b), at(layout.rel2.w), at(layout.rel2.b)};
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

std::vector<std::size_t> select_targets_local(std::span<const Vec3> centers, std::size_t query, std::size_t t) {
    const std::size_t m = centers.size();
    if (query >= m) throw std::invalid_argument("select_targets_local: query out of range");
    const std::size_t count = std::min(std::max<std::size_t>(t, 1), m);
    std::vector<double> d(m);
    for (std::size_t j = 0; j < m; ++j) d[j] = sq_dist(centers[j], centers[query]);
    std::vector<std::size_t> others;
    others.reserve(m - 1);
    for (std::size_t j = 0; j < m; ++j)
        if (j != query) others.push_back(j);
    auto less = [&](std::size_t a, std::size_t b) { return d[a] < d[b] || (d[a] == d[b] && a < b); };
    std::partial_sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(count - 1), others.end(), less);
    std::vector<std::size_t> out{query};
    out.insert(out.end(), others.begin(), others.begin() + static_cast<std::ptrdiff_t>(count - 1));
    return out;
}

std::vector<std::size_t> select_targets_global(std::span<const Vec3> centers, std::size_t t) {
    return farthest_point_sample(centers, std::min(std::max<std::size_t>(t, 1), centers.size()));
}

Forward::Forward(ag::Graph& g, const ModelState& state, bool requires_grad) : g_(g), state_(state) {
    params_.reserve(state.tensors.size());
    for (const auto& t : state.tensors) params_.push_back(g.parameter(t.value, requires_grad));
}

ag::Var Forward::linear(ag::Var x, const LinearRef& l) { return g_.add_row(g_.matmul(x, params_[l.w]), params_[l.b]); }

ag::Var Forward::embed_points(const Matrix& stacked, std::size_t group) {
    const auto& L = state_.layout;
    const auto pts = g_.constant(stacked);
    const auto f = linear(g_.gelu(linear(pts, L.embed1)), L.embed2);
    const auto pooled = g_.segment_broadcast(g_.segment_max(f, group), group);
    const auto h = linear(g_.gelu(linear(g_.concat_cols(f, pooled), L.embed3)), L.embed4);
    return g_.segment_max(h, group);
}

ag::Var Forward::embed_patches(const std::vector<Patch>& patches, std::span<const std::size_t> ids, bool normalize) {
    std::vector<std::vector<Vec3>> sets;
    sets.reserve(ids.size());
    for (auto id : ids) {
        const auto& p = patches.at(id);
        sets.push_back(normalize ? rotation_normalize(p).points : p.S);
    }
    const std::size_t k = sets.empty() ? 0 : sets[0].size();
    Matrix m(sets.size() * k, 3);
    for (std::size_t s = 0; s < sets.size(); ++s) {
        if (sets[s].size() != k) throw std::invalid_argument("embed: patches must have equal point counts");
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t c = 0; c < 3; ++c) m(s * k + r, c) = sets[s][r][c];
    }
    return embed_points(m, k);
}

ag::Var Forward::block(ag::Var x, const BlockRef& b, const ag::AttentionPattern& pattern, ag::Var relpose) {
    const auto h = g_.layer_norm(x, params_[b.ln1_g], params_[b.ln1_b]);
    const auto q = g_.matmul(h, params_[b.wq]);
    const auto k = g_.matmul(h, params_[b.wk]);
    const auto v = g_.matmul(h, params_[b.wv]);
    const auto att = g_.sparse_attention(q, k, v, relpose, pattern, state_.config.heads);
    x = g_.add(x, linear(att, b.proj));
    const auto h2 = g_.layer_norm(x, params_[b.ln2_g], params_[b.ln2_b]);
    return g_.add(x, linear(g_.gelu(linear(h2, b.fc1)), b.fc2));
}

Forward::Attention Forward::attention_for(const std::vector<Patch>& patches, std::span<const std::size_t> ids,
                                          std::size_t t, bool absolute_pose) {
    const std::size_t m = ids.size();
    std::vector<Vec3> centers;
    centers.reserve(m);
    for (auto id : ids) centers.push_back(patches.at(id).c);

    Attention att;
    att.local.targets.resize(m);
    att.global.targets.resize(m);
    const auto global = select_targets_global(centers, t);
    for (std::size_t i = 0; i < m; ++i) {
        att.local.targets[i] = select_targets_local(centers, i, t);
        att.global.targets[i] = global;
    }

    // Each ordered pair demanded by either pattern gets one row of the embedding input.
    std::vector<std::size_t> row_of(m * m, std::numeric_limits<std::size_t>::max());
    std::vector<double> flat;
    std::size_t rows = 0;
    auto assign = [&](ag::AttentionPattern& pat) {
        pat.pair_rows.resize(m);
        for (std::size_t i = 0; i < m; ++i) {
            pat.pair_rows[i].clear();
            for (auto j : pat.targets[i]) {
                auto& slot = row_of[i * m + j];
                if (slot == std::numeric_limits<std::size_t>::max()) {
                    slot = rows++;
                    const auto& pi = patches[ids[i]];
                    const auto& pj = patches[ids[j]];
                    std::array<double, 12> f{};
                    if (absolute_pose) {
                        const Vec3 delta = pi.c - pj.c;
                        const Mat3 eye = Mat3::identity();
                        f = {delta[0], delta[1], delta[2], eye.a[0], eye.a[1], eye.a[2],
                             eye.a[3], eye.a[4], eye.a[5], eye.a[6], eye.a[7], eye.a[8]};
                    } else {
                        f = relative_pose(pi, pj).flat12();
                    }
                    flat.insert(flat.end(), f.begin(), f.end());
                }
                pat.pair_rows[i].push_back(slot);
            }
        }
    };
    assign(att.local);
    assign(att.global);

    const auto& L = state_.layout;
    const auto in = g_.constant(Matrix(rows, 12, std::move(flat)));
    att.relpose = embed_relpose(g_, in, params_[L.rel1.w], params_[L.rel1.b], params_[L.rel2.w], params_[L.rel2.b]);
    return att;
}

std::vector<ag::Var> Forward::encode(const std::vector<Patch>& patches, std::span<const std::size_t> visible,
                                     Mode mode, const EncodeOptions& opt) {
    if (visible.empty()) throw std::invalid_argument("encode: no visible patches");
    const auto t = attention_targets(state_.config, mode, visible.size());
    auto att = attention_for(patches, visible, t, opt.absolute_pose);
    auto x = embed_patches(patches, visible, !opt.absolute_pose);
    std::vector<ag::Var> outs;
    outs.reserve(state_.layout.enc.size());
    for (std::size_t b = 0; b < state_.layout.enc.size(); ++b) {
        // Blocks are 1-based in the alternation rule: odd -> local, even -> global.
        const auto& pattern = (b % 2 == 0) ? att.local : att.global;
        x = block(x, state_.layout.enc[b], pattern, att.relpose);
        outs.push_back(x);
    }
    return outs;
}

ag::Var Forward::decode(const std::vector<Patch>& patches, std::span<const std::size_t> visible,
                        std::span<const std::size_t> masked, ag::Var encoded) {
    if (masked.empty()) throw std::invalid_argument("decode: no masked patches");
    if (g_.value(encoded).rows != visible.size()) throw std::invalid_argument("decode: encoded token count mismatch");
    std::vector<std::size_t> ids(visible.begin(), visible.end());
    ids.insert(ids.end(), masked.begin(), masked.end());
    const auto mask_rows = g_.gather_rows(params_[state_.layout.mask_token], std::vector<std::size_t>(masked.size(), 0));
    auto x = g_.concat_rows(encoded, mask_rows);
    const auto t = std::max<std::size_t>(1, ids.size() / 4);
    auto att = attention_for(patches, ids, t);
    for (std::size_t b = 0; b < state_.layout.dec.size(); ++b) {
        const auto& pattern = (b % 2 == 0) ? att.local : att.global;
        x = block(x, state_.layout.dec[b], pattern, att.relpose);
    }
    std::vector<std::size_t> rows(masked.size());
    std::iota(rows.begin(), rows.end(), visible.size());
    return linear(g_.gather_rows(x, std::move(rows)), state_.layout.head);
}

std::vector<double> embed_patch(std::span<const Vec3> norm_points, const ModelState& state) {
    ag::Graph g;
    Forward fw(g, state, false);
    Matrix m(norm_points.size(), 3);
    for (std::size_t r = 0; r < norm_points.size(); ++r)
        for (std::size_t c = 0; c < 3; ++c) m(r, c) = norm_points[r][c];
    return g.value(fw.embed_points(m, norm_points.size())).data;
}

TokenSet attention_block(const TokenSet& tok, const std::vector<std::vector<std::size_t>>& targets,
                         const RelPoseTable& relpose, const ModelState& state, const BlockRef& block) {
    const std::size_t m = tok.size();
    ag::AttentionPattern pattern;
    pattern.targets = targets;
    pattern.pair_rows.resize(m);
    std::vector<double> flat;
    std::size_t rows = 0;
    for (std::size_t i = 0; i < m; ++i)
        for (auto j : targets.at(i)) {
            if (i >= relpose.n_rows || j >= relpose.n_cols || !relpose.at(i, j))
                throw std::invalid_argument("attention_block: missing relative pose for pair (" + std::to_string(i) +
                                            ", " + std::to_string(j) + ")");
            const auto& r = *relpose.at(i, j);
            flat.insert(flat.end(), r.begin(), r.end());
            pattern.pair_rows[i].push_back(rows++);
        }
    ag::Graph g;
    Forward fw(g, state, false);
    const auto x = g.constant(tok.tokens);
    const auto R = g.constant(Matrix(rows, state.config.d, std::move(flat)));
    TokenSet out = tok;
    out.tokens = g.value(fw.block(x, block, pattern, R));
    return out;
}

namespace {

TokenSet token_set(const std::vector<Patch>& patches, const std::vector<std::size_t>& ids, Matrix tokens) {
    TokenSet t;
    t.tokens = std::move(tokens);
    t.patch_indices = ids;
    for (auto id : ids) {
        t.centers.push_back(patches[id].c);
        t.frames.push_back(patches[id].F);
    }
    return t;
}

}  // namespace

std::vector<TokenSet> encoder_forward(const std::vector<Patch>& patches, const std::vector<std::size_t>& visible,
                                      const ModelState& state, Mode mode, const EncodeOptions& opt) {
    ag::Graph g;
    Forward fw(g, state, false);
    const auto outs = fw.encode(patches, visible, mode, opt);
    std::vector<TokenSet> sets;
    sets.reserve(outs.size());
    for (auto v : outs) sets.push_back(token_set(patches, visible, g.value(v)));
    return sets;
}

Matrix decoder_forward(const TokenSet& encoded, const std::vector<Patch>& patches,
                       const std::vector<std::size_t>& masked, const ModelState& state) {
    ag::Graph g;
    Forward fw(g, state, false);
    const auto enc = g.constant(encoded.tokens);
    return g.value(fw.decode(patches, encoded.patch_indices, masked, enc));
}

std::vector<double> global_feature(const std::vector<TokenSet>& blocks) {
    std::vector<double> out;
    for (const auto& b : blocks) {
        const auto& T = b.tokens;
        if (T.rows == 0) throw std::invalid_argument("global_feature: empty token set");
        std::vector<double> mean(T.cols, 0.0);
        for (std::size_t i = 0; i < T.rows; ++i)
            for (std::size_t c = 0; c < T.cols; ++c) mean[c] += T(i, c);
        for (auto& v : mean) v /= static_cast<double>(T.rows);
        out.insert(out.end(), mean.begin(), mean.end());
    }
    return out;
}

Matrix propagate_pointwise(const TokenSet& last, const PointCloud& pc) {
    const std::size_t m = last.size();
    if (m == 0) throw std::invalid_argument("propagate_pointwise: empty token set");
    const std::size_t nn = std::min<std::size_t>(3, m);
    const std::size_t d = last.tokens.cols;
    Matrix out(pc.size(), d);
    for (std::size_t p = 0; p < pc.size(); ++p) {
        const auto idx = knn(last.centers, pc.positions[p], nn);
        double wsum = 0.0;
        std::vector<double> acc(d, 0.0);
        for (auto j : idx) {
            const double dist = std::sqrt(sq_dist(last.centers[j], pc.positions[p]));
            const double w = 1.0 / ((dist + 1e-9) * (dist + 1e-9));
            wsum += w;
            for (std::size_t c = 0; c < d; ++c) acc[c] += w * last.tokens(j, c);
        }
        for (std::size_t c = 0; c < d; ++c) out(p, c) = acc[c] / wsum;
    }
    return out;
}

std::vector<Patch> prepare_patches(const PointCloud& pc, const ModelConfig& cfg) {
    auto patches = build_patches(pc, cfg.num_patches, cfg.patch_size);
    assign_lrfs(patches);
    return patches;
}

}  // namespace masklrf
