#include "support.hpp"

#include "masklrf/lrf.hpp"
#include "masklrf/relpose.hpp"

using namespace masklrf;
using namespace testing_support;

namespace {

std::vector<Patch> framed_patches(const PointCloud& pc, std::size_t np = 16, std::size_t k = 16) {
    auto p = build_patches(pc, np, k);
    assign_lrfs(p);
    return p;
}

RelPoseEmbedder random_embedder(std::size_t h, std::size_t d, std::uint64_t seed) {
    return {random_matrix(12, h, seed, 0.3), random_matrix(1, h, seed + 1, 0.3), random_matrix(h, d, seed + 2, 0.3),
            random_matrix(1, d, seed + 3, 0.3)};
}

}  // namespace

TEST_CASE("self pair and world frame") {
    Patch p;
    p.c = {1, 2, 3};
    p.F = random_rotation(3).R;
    p.has_frame = true;
    const auto self = relative_pose(p, p);
    CHECK(self.RP == Vec3{0, 0, 0});
    CHECK(max_abs_diff(self.RO, Mat3::identity()) <= 1e-15);

    Patch q;
    q.has_frame = true;
    p.c = {2, 4, 6};
    q.c = {1, 2, 3};
    CHECK(relative_pose(p, q).RP == Vec3{1, 2, 3});
    const auto f = relative_pose(p, q).flat12();
    CHECK(f[0] == 1);
    CHECK(f[3 + 1] == relative_pose(p, q).RO(0, 1));

    Patch bare;
    CHECK_THROWS(relative_pose(bare, q));
}

TEST_CASE("relative poses are invariant to a shared rotation of both patches") {
    for (std::uint64_t s = 0; s < 30; ++s) {
        Patch a, b;
        a.c = random_points(1, s)[0];
        b.c = random_points(1, s + 100)[0];
        a.F = random_rotation(s + 200).R;
        b.F = random_rotation(s + 300).R;
        a.has_frame = b.has_frame = true;
        const auto rp = relative_pose(a, b);
        const auto r = random_rotation(s + 400).R;
        Patch ar = a, br = b;
        ar.c = a.c * r;
        br.c = b.c * r;
        ar.F = r.transposed() * a.F;
        br.F = r.transposed() * b.F;
        const auto rr = relative_pose(ar, br);
        CHECK(max_abs_diff(rr.RP, rp.RP) <= 1e-10);
        CHECK(max_abs_diff(rr.RO, rp.RO) <= 1e-10);
        CHECK(orthonormality_error(rp.RO) <= 1e-10);
        CHECK(rp.RO.det() == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(max_abs_diff(relative_pose(b, a).RO, rp.RO.transposed()) <= 1e-12);
    }
}

TEST_CASE("relative poses of real clouds survive rotation") {
    std::size_t excluded = 0;
    for (std::uint64_t s = 0; s < 8; ++s) {
        const auto pc = generate_shape(static_cast<ShapeKind>(s % 4), 256, s);
        const auto base = framed_patches(pc);
        for (std::uint64_t r = 0; r < 5; ++r) {
            const auto rot = framed_patches(apply_rotation(pc, random_rotation(derive_seed(s, r))));
            for (std::size_t i = 0; i < base.size(); ++i)
                for (std::size_t j = 0; j < base.size(); ++j) {
                    if (base[i].degenerate || base[j].degenerate) {
                        ++excluded;
                        continue;
                    }
                    const auto a = relative_pose(base[i], base[j]), b = relative_pose(rot[i], rot[j]);
                    REQUIRE(max_abs_diff(a.RP, b.RP) <= 1e-10);
                    REQUIRE(max_abs_diff(a.RO, b.RO) <= 1e-10);
                }
        }
    }
    MESSAGE("pairs excluded for degenerate frames: " << excluded);
}

TEST_CASE("embedder: zeros, determinism, hand-evaluated forward") {
    RelPose rp;
    rp.RP = {0.5, -1, 2};
    rp.RO = random_rotation(1).R;
    CHECK(embed_relpose(rp, RelPoseEmbedder::zeros(4, 6)) == std::vector<double>(6, 0.0));

    const auto emb = random_embedder(3, 5, 9);
    CHECK(embed_relpose(rp, emb) == embed_relpose(rp, emb));

    // h = 2, d = 2: only RP_x and RO_00 carry weight.
    auto tiny = RelPoseEmbedder::zeros(2, 2);
    tiny.w1(0, 0) = 1.0;
    tiny.w1(3, 1) = -2.0;
    tiny.b1(0, 1) = 0.5;
    tiny.w2(0, 0) = 2.0;
    tiny.w2(1, 0) = 1.0;
    tiny.w2(1, 1) = -1.0;
    tiny.b2(0, 1) = 0.25;
    const double h0 = ag::gelu(rp.RP[0]);
    const double h1 = ag::gelu(-2.0 * rp.RO(0, 0) + 0.5);
    const auto out = embed_relpose(rp, tiny);
    CHECK(out[0] == doctest::Approx(2.0 * h0 + h1).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(-h1 + 0.25).epsilon(1e-15));
    // exact erf GELU
    CHECK(ag::gelu(1.0) == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))).epsilon(1e-15));
}

TEST_CASE("embedder parameter gradients match central differences") {
    auto emb = random_embedder(4, 3, 21);
    const auto x = random_matrix(5, 12, 22);
    const auto target = random_matrix(5, 3, 23);
    auto loss = [&](const RelPoseEmbedder& e) {
        ag::Graph g;
        const auto out = embed_relpose(g, g.constant(x), g.parameter(e.w1, false), g.parameter(e.b1, false),
                                       g.parameter(e.w2, false), g.parameter(e.b2, false));
        return g.value(g.sum_sq_diff(out, target))(0, 0);
    };
    ag::Graph g;
    const auto w1 = g.parameter(emb.w1), b1 = g.parameter(emb.b1), w2 = g.parameter(emb.w2), b2 = g.parameter(emb.b2);
    g.backward(g.sum_sq_diff(embed_relpose(g, g.constant(x), w1, b1, w2, b2), target));
    const std::vector<std::pair<Matrix*, ag::Var>> params{{&emb.w1, w1}, {&emb.b1, b1}, {&emb.w2, w2}, {&emb.b2, b2}};
    double worst = 0.0;
    for (auto [m, v] : params) {
        const Matrix grad = *g.grad(v);
        for (std::size_t i = 0; i < m->size(); ++i) {
            const double keep = m->data[i];
            m->data[i] = keep + 1e-6;
            const double up = loss(emb);
            m->data[i] = keep - 1e-6;
            const double dn = loss(emb);
            m->data[i] = keep;
            const double fd = (up - dn) / 2e-6;
            worst = std::max(worst, std::abs(grad.data[i] - fd) / (1.0 + std::abs(grad.data[i])));
        }
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("relpose tables") {
    const auto patches = framed_patches(generate_shape(ShapeKind::torus, 256, 5));
    const auto emb = random_embedder(6, 4, 30);
    const std::vector<std::size_t> ids{0, 3, 7};
    const auto table = relpose_table(patches, ids, ids, emb);
    const auto self = embed_relpose(RelPose{{0, 0, 0}, Mat3::identity()}, emb);
    for (std::size_t a = 0; a < 3; ++a) {
        CHECK(max_abs_diff_seq(*table.at(a, a), self) <= 1e-12);
        for (std::size_t b = 0; b < 3; ++b)
            CHECK(max_abs_diff_seq(*table.at(a, b), embed_relpose(relative_pose(patches[ids[a]], patches[ids[b]]), emb)) <=
                  1e-14);
    }

    std::vector<std::vector<bool>> demand(3, std::vector<bool>(3, false));
    demand[0][2] = demand[2][1] = true;
    const auto sparse = relpose_table(patches, ids, ids, emb, &demand);
    std::size_t filled = 0;
    for (const auto& e : sparse.entries) filled += e.has_value();
    CHECK(filled == 2);
    CHECK(*sparse.at(0, 2) == *table.at(0, 2));

    const auto rotated = framed_patches(apply_rotation(generate_shape(ShapeKind::torus, 256, 5), random_rotation(8)));
    const auto rt = relpose_table(rotated, ids, ids, emb);
    for (std::size_t i = 0; i < rt.entries.size(); ++i)
        CHECK(max_abs_diff_seq(*rt.entries[i], *table.entries[i]) <= 1e-9);
}
