#include "oracles.hpp"

#include <numeric>

#include "masklrf/lrf.hpp"
#include "masklrf/pod.hpp"

using namespace masklrf;
using namespace testing_support;

namespace {

std::vector<Vec3> unit_vectors(std::size_t n, std::uint64_t seed) {
    auto v = random_points(n, seed);
    for (auto& x : v) x = (1.0 / norm(x)) * x;
    return v;
}

}  // namespace

TEST_CASE("identical points collapse to one centered cell") {
    const std::vector<Vec3> pts(5, Vec3{0.3, -1, 2});
    const std::vector<Vec3> nrm(5, Vec3{0, 0, 1});
    const auto t = pod_grid(pts, nrm, 3);
    REQUIRE(t.values.size() == 270);
    const std::vector<double> expect{1, 0.5, 0.5, 0.5, 0, 0, 0, 0, 0, 1};
    CHECK(std::vector<double>(t.values.begin(), t.values.begin() + 10) == expect);
    CHECK(std::accumulate(t.values.begin() + 10, t.values.end(), 0.0) == 0.0);
}

TEST_CASE("opposite box corners land in opposite cells") {
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 1, 1}};
    const std::vector<Vec3> nrm{{1, 0, 0}, {0, 1, 0}};
    const auto t = pod_grid(pts, nrm, 2);
    CHECK(t.values[t.cell_offset(0, 0, 0)] == 0.5);
    CHECK(t.values[t.cell_offset(1, 1, 1)] == 0.5);
    CHECK(t.values[t.cell_offset(1, 1, 1) + 7] == 1.0);  // yy moment of (0,1,0)
}

TEST_CASE("hand-built 4-point patch matches the exhaustive binning oracle") {
    const std::vector<Vec3> pts{{0, 0, 0}, {0.9, 0.1, 0.4}, {0.2, 0.8, 0.6}, {1.0, 1.0, 1.0}};
    const auto nrm = unit_vectors(4, 1);
    CHECK(max_abs_diff_seq(pod_grid(pts, nrm, 2).values, pod_oracle(pts, nrm, 2)) <= 1e-15);
}

TEST_CASE("POD binning matches the oracle on random patches") {
    for (std::uint64_t s = 0; s < 150; ++s) {
        const std::size_t k = 1 + s % 40, g = 1 + s % 6;
        const auto pts = random_points(k, s, 1.0 + static_cast<double>(s));
        const auto nrm = unit_vectors(k, s + 5000);
        const auto t = pod_grid(pts, nrm, g);
        if (k == 1) continue;  // zero extent handled separately
        CAPTURE(s);
        CHECK(max_abs_diff_seq(t.values, pod_oracle(pts, nrm, g)) <= 1e-12);
    }
}

TEST_CASE("target invariants") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const std::size_t k = 2 + s % 30;
        const auto t = pod_grid(random_points(k, s), unit_vectors(k, s + 1), 4);
        double freq = 0.0;
        for (std::size_t c = 0; c < 64; ++c) {
            const double* v = t.values.data() + c * 10;
            freq += v[0];
            CHECK((v[0] >= 0 && v[0] <= 1));
            for (int a = 1; a <= 3; ++a) CHECK((v[a] >= 0 && v[a] <= 1));
            if (v[0] == 0.0)
                for (int ch = 1; ch < 10; ++ch) CHECK(v[ch] == 0.0);
            else
                CHECK(v[4] + v[7] + v[9] == doctest::Approx(1.0).epsilon(1e-12));  // unit normals: trace 1
        }
        CHECK(std::abs(freq - 1.0) <= 1e-12);
    }
    CHECK(PodTarget::length(6) == 2160);
}

TEST_CASE("permuting points leaves the target bit-identical") {
    auto pts = random_points(25, 3);
    auto nrm = unit_vectors(25, 4);
    const auto base = pod_grid(pts, nrm, 4).values;
    std::vector<std::size_t> perm(25);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<Vec3> p2, n2;
        for (auto i : perm) p2.push_back(pts[i]), n2.push_back(nrm[i]);
        CHECK(pod_grid(p2, n2, 4).values == base);
    }
}

TEST_CASE("errors") {
    const std::vector<Vec3> none;
    CHECK_THROWS(pod_grid(none, none, 4));
    const std::vector<Vec3> one{{0, 0, 0}};
    CHECK_THROWS(pod_grid(one, none, 4));
    CHECK_THROWS(pod_grid(one, one, 0));
}

TEST_CASE("flat patches keep every point in the first layer") {
    // LRF-normalized planar patch: x is the (numerically) zero-extent normal axis.
    std::vector<Vec3> pts;
    for (const auto& p : random_points(20, 8)) pts.push_back({1e-18 * p[2], p[0], p[1]});
    const auto t = pod_grid(pts, std::vector<Vec3>(20, Vec3{1, 0, 0}), 3);
    for (std::size_t ix = 1; ix < 3; ++ix)
        for (std::size_t iy = 0; iy < 3; ++iy)
            for (std::size_t iz = 0; iz < 3; ++iz) CHECK(t.values[t.cell_offset(ix, iy, iz)] == 0.0);
    for (std::size_t iy = 0; iy < 3; ++iy)
        for (std::size_t iz = 0; iz < 3; ++iz)
            if (t.values[t.cell_offset(0, iy, iz)] > 0) CHECK(t.values[t.cell_offset(0, iy, iz) + 1] == 0.5);
}

TEST_CASE("masked targets: count, order, and rotation invariance") {
    const auto pc = generate_shape(ShapeKind::torus, 256, 12);
    auto patches = build_patches(pc, 16, 16);
    assign_lrfs(patches);
    const auto split = mask_split(16, 60, 3);
    const auto targets = pod_targets_for_masked(patches, split, 4);
    REQUIRE(targets.size() == split.masked.size());
    const auto n0 = rotation_normalize(patches[split.masked[0]]);
    CHECK(targets[0].values == pod_grid(n0.points, *n0.normals, 4).values);
    CHECK(pod_targets_for_masked(patches, mask_split(16, 0, 3), 4).empty());
    const auto stacked = stack_targets(targets, 4);
    CHECK(stacked.rows == targets.size());
    CHECK(stacked.cols == 640);

    for (std::uint64_t r = 0; r < 10; ++r) {
        auto rp = build_patches(apply_rotation(pc, random_rotation(r)), 16, 16);
        assign_lrfs(rp);
        const auto rt = pod_targets_for_masked(rp, split, 4);
        for (std::size_t i = 0; i < rt.size(); ++i) {
            if (patches[split.masked[i]].degenerate) continue;
            CHECK(max_abs_diff_seq(rt[i].values, targets[i].values) <= 1e-9);
        }
    }
    Patch bare = patches[0];
    bare.normals.reset();
    std::vector<Patch> ps{bare};
    CHECK_THROWS(pod_targets_for_masked(ps, MaskSplit{{}, {0}}, 4));
}
