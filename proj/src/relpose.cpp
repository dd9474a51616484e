#include "masklrf/relpose.hpp"

#include <stdexcept>

namespace masklrf {

std::array<double, 12> RelPose::flat12() const {
    std::array<double, 12> out{};
    out[0] = RP[0];
    out[1] = RP[1];
    out[2] = RP[2];
    for (std::size_t i = 0; i < 9; ++i) out[3 + i] = RO.a[i];
    return out;
}

RelPoseEmbedder RelPoseEmbedder::zeros(std::size_t hidden, std::size_t width) {
    return {Matrix(12, hidden), Matrix(1, hidden), Matrix(hidden, width), Matrix(1, width)};
}

RelPose relative_pose(const Patch& pi, const Patch& pj) {
    if (!pi.has_frame || !pj.has_frame) throw std::logic_error("relative_pose: patch frame not set");
    RelPose rp;
    rp.RP = (pi.c - pj.c) * pj.F;
    rp.RO = pi.F.transposed() * pj.F;
    return rp;
}

ag::Var embed_relpose(ag::Graph& g, ag::Var flat, ag::Var w1, ag::Var b1, ag::Var w2, ag::Var b2) {
    const auto hidden = g.gelu(g.add_row(g.matmul(flat, w1), b1));
    return g.add_row(g.matmul(hidden, w2), b2);
}

std::vector<double> embed_relpose(const RelPose& rp, const RelPoseEmbedder& emb) {
    ag::Graph g;
    const auto f = rp.flat12();
    const auto flat = g.constant(Matrix(1, 12, std::vector<double>(f.begin(), f.end())));
    const auto out = embed_relpose(g, flat, g.parameter(emb.w1, false), g.parameter(emb.b1, false),
                                   g.parameter(emb.w2, false), g.parameter(emb.b2, false));
    return g.value(out).data;
}

RelPoseTable relpose_table(const std::vector<Patch>& patches, const std::vector<std::size_t>& rows,
                           const std::vector<std::size_t>& cols, const RelPoseEmbedder& emb,
                           const std::vector<std::vector<bool>>* demand) {
    RelPoseTable table;
    table.n_rows = rows.size();
    table.n_cols = cols.size();
    table.entries.resize(rows.size() * cols.size());

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<double> flat;
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b) {
            if (demand && !(*demand)[a][b]) continue;
            const auto f = relative_pose(patches.at(rows[a]), patches.at(cols[b])).flat12();
            flat.insert(flat.end(), f.begin(), f.end());
            pairs.emplace_back(a, b);
        }
    if (pairs.empty()) return table;

    ag::Graph g;
    const auto in = g.constant(Matrix(pairs.size(), 12, std::move(flat)));
    const auto out = embed_relpose(g, in, g.parameter(emb.w1, false), g.parameter(emb.b1, false),
                                   g.parameter(emb.w2, false), g.parameter(emb.b2, false));
    const auto& R = g.value(out);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto row = R.row(p);
        table.entries[pairs[p].first * table.n_cols + pairs[p].second] = std::vector<double>(row.begin(), row.end());
    }
    return table;
}

}  // namespace masklrf
