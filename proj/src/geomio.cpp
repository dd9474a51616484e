#include "masklrf/geomio.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "masklrf/kernels.hpp"

namespace masklrf {

namespace {

constexpr double kNormalTolerance = 1e-3;
constexpr double kMinNormal = 1e-6;

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

double parse_real(std::string_view tok, std::size_t line_no) {
    double v = 0.0;
    const auto* first = tok.data();
    const auto* last = tok.data() + tok.size();
    if (!tok.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last)
        throw FormatError("line " + std::to_string(line_no) + ": malformed number '" + std::string(tok) + "'");
    if (!std::isfinite(v)) throw FormatError("line " + std::to_string(line_no) + ": non-finite value");
    return v;
}

std::size_t parse_count(std::string_view tok) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size()) throw FormatError("malformed header");
    return v;
}

void append_real(std::string& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    (void)ec;
    out.append(buf, ptr);
}

Vec3 unit_or_throw(Vec3 n, std::size_t line_no) {
    const double len = norm(n);
    if (len < kMinNormal)
        throw FormatError("line " + std::to_string(line_no) + ": non-normalizable normal");
    if (std::abs(len - 1.0) > kNormalTolerance)
        throw FormatError("line " + std::to_string(line_no) + ": normal is not unit length");
    return (1.0 / len) * n;
}

}  // namespace

void validate(const PointCloud& pc) {
    if (pc.positions.empty()) throw std::invalid_argument("point cloud is empty");
    for (const auto& p : pc.positions)
        for (double v : p)
            if (!std::isfinite(v)) throw std::invalid_argument("point cloud has non-finite coordinates");
    if (pc.normals) {
        if (pc.normals->size() != pc.positions.size())
            throw std::invalid_argument("normal count does not match point count");
        for (const auto& n : *pc.normals)
            if (!(std::abs(norm(n) - 1.0) <= 1e-9)) throw std::invalid_argument("normal is not unit length");
    }
}

PointCloud load_point_cloud(std::string_view text) {
    PointCloud pc;
    bool have_header = false;
    std::size_t expected = 0;
    bool with_normals = false;
    std::vector<Vec3> normals;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.front() == '#') continue;
        const auto tok = split_ws(line);
        if (tok.empty()) continue;
        if (!have_header) {
            if (tok.size() != 3 || tok[0] != "OPC" || (tok[2] != "0" && tok[2] != "1"))
                throw FormatError("malformed header");
            expected = parse_count(tok[1]);
            if (expected == 0) throw FormatError("malformed header: point count must be at least 1");
            with_normals = tok[2] == "1";
            have_header = true;
            continue;
        }
        const std::size_t cols = with_normals ? 6 : 3;
        if (tok.size() != cols)
            throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(cols) + " values");
        if (pc.positions.size() == expected) throw FormatError("row count mismatch");
        pc.positions.push_back({parse_real(tok[0], line_no), parse_real(tok[1], line_no), parse_real(tok[2], line_no)});
        if (with_normals)
            normals.push_back(unit_or_throw(
                {parse_real(tok[3], line_no), parse_real(tok[4], line_no), parse_real(tok[5], line_no)}, line_no));
    }
    if (!have_header) throw FormatError("malformed header: missing OPC line");
    if (pc.positions.size() != expected) throw FormatError("row count mismatch");
    if (with_normals) pc.normals = std::move(normals);
    return pc;
}

std::string save_point_cloud(const PointCloud& pc) {
    std::string out = "OPC " + std::to_string(pc.size()) + (pc.normals ? " 1\n" : " 0\n");
    out.reserve(pc.size() * (pc.normals ? 140 : 70));
    for (std::size_t i = 0; i < pc.size(); ++i) {
        const auto& p = pc.positions[i];
        append_real(out, p[0]);
        out += ' ';
        append_real(out, p[1]);
        out += ' ';
        append_real(out, p[2]);
        if (pc.normals) {
            for (double v : (*pc.normals)[i]) {
                out += ' ';
                append_real(out, v);
            }
        }
        out += '\n';
    }
    return out;
}

PointCloud read_point_cloud_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return load_point_cloud(ss.str());
}

void write_point_cloud_file(const PointCloud& pc, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << save_point_cloud(pc);
}

ShapeKind parse_shape_kind(std::string_view name) {
    if (name == "sphere") return ShapeKind::sphere;
    if (name == "cube") return ShapeKind::cube;
    if (name == "torus") return ShapeKind::torus;
    if (name == "two_planes") return ShapeKind::two_planes;
    throw std::invalid_argument("unknown shape kind '" + std::string(name) + "'");
}

std::string_view shape_kind_name(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::sphere: return "sphere";
        case ShapeKind::cube: return "cube";
        case ShapeKind::torus: return "torus";
        case ShapeKind::two_planes: return "two_planes";
    }
    return "unknown";
}

PointCloud generate_shape(ShapeKind kind, std::size_t n, std::uint64_t seed) {
    if (n < 16) throw std::invalid_argument("generate_shape: n must be at least 16");
    std::mt19937_64 rng(derive_seed(seed, 0x5348415045ULL, static_cast<std::uint64_t>(kind)));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    // Dense i.i.d. surface sample thinned to n points by farthest point sampling,
    // the usual preparation of benchmark point clouds.
    const std::size_t dense = kShapeOversample * n;
    PointCloud pc;
    pc.positions.reserve(dense);
    std::vector<Vec3> normals;
    normals.reserve(dense);

    for (std::size_t i = 0; i < dense; ++i) {
        switch (kind) {
            case ShapeKind::sphere: {
                Vec3 g{};
                double len = 0.0;
                do {
                    g = {gauss(rng), gauss(rng), gauss(rng)};
                    len = norm(g);
                } while (len < 1e-8);
                const Vec3 p = (1.0 / len) * g;
                pc.positions.push_back(p);
                normals.push_back(p);
                break;
            }
            case ShapeKind::cube: {
                // Axis-aligned cube [-1, 1]^3, faces chosen uniformly (equal areas).
                const auto face = static_cast<std::size_t>(uni(rng) * 6.0) % 6;
                const std::size_t axis = face / 2;
                const double side = (face % 2 == 0) ? 1.0 : -1.0;
                Vec3 p{};
                Vec3 nrm{};
                p[axis] = side;
                nrm[axis] = side;
                p[(axis + 1) % 3] = 2.0 * uni(rng) - 1.0;
                p[(axis + 2) % 3] = 2.0 * uni(rng) - 1.0;
                pc.positions.push_back(p);
                normals.push_back(nrm);
                break;
            }
            case ShapeKind::torus: {
                // Rejection on the area element (R + r cos phi) gives area-uniform samples.
                double theta = 0.0, phi = 0.0;
                do {
                    theta = 2.0 * std::numbers::pi * uni(rng);
                    phi = 2.0 * std::numbers::pi * uni(rng);
                } while (uni(rng) * (kTorusMajor + kTorusMinor) > kTorusMajor + kTorusMinor * std::cos(phi));
                const double ring = kTorusMajor + kTorusMinor * std::cos(phi);
                pc.positions.push_back({ring * std::cos(theta), ring * std::sin(theta), kTorusMinor * std::sin(phi)});
                normals.push_back({std::cos(phi) * std::cos(theta), std::cos(phi) * std::sin(theta), std::sin(phi)});
                break;
            }
            case ShapeKind::two_planes: {
                // Floor x in [0,2], y in [-1,1] at z=0 and a shorter wall z in [0,1.2] at x=0,
                // sampled in proportion to their areas.
                constexpr double floor_area = 2.0 * 2.0;
                constexpr double wall_area = 1.2 * 2.0;
                if (uni(rng) * (floor_area + wall_area) < floor_area) {
                    pc.positions.push_back({2.0 * uni(rng), 2.0 * uni(rng) - 1.0, 0.0});
                    normals.push_back({0.0, 0.0, 1.0});
                } else {
                    pc.positions.push_back({0.0, 2.0 * uni(rng) - 1.0, 1.2 * uni(rng)});
                    normals.push_back({1.0, 0.0, 0.0});
                }
                break;
            }
        }
    }
    std::vector<double> min_d(dense, std::numeric_limits<double>::infinity());
    PointCloud out;
    out.positions.reserve(n);
    std::vector<Vec3> out_normals;
    out_normals.reserve(n);
    std::size_t pick = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out.positions.push_back(pc.positions[pick]);
        out_normals.push_back(normals[pick]);
        min_d[pick] = -1.0;
        pick = kernels::fps_update(pc.positions, pick, min_d);
    }
    out.normals = std::move(out_normals);
    return out;
}

Rotation random_rotation(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 0x524f54ULL));
    std::normal_distribution<double> gauss(0.0, 1.0);
    double w = 0, x = 0, y = 0, z = 0, len = 0;
    do {
        w = gauss(rng);
        x = gauss(rng);
        y = gauss(rng);
        z = gauss(rng);
        len = std::sqrt(w * w + x * x + y * y + z * z);
    } while (len < 1e-12);
    w /= len;
    x /= len;
    y /= len;
    z /= len;
    Rotation rot;
    auto& R = rot.R;
    R(0, 0) = 1 - 2 * (y * y + z * z);
    R(0, 1) = 2 * (x * y - z * w);
    R(0, 2) = 2 * (x * z + y * w);
    R(1, 0) = 2 * (x * y + z * w);
    R(1, 1) = 1 - 2 * (x * x + z * z);
    R(1, 2) = 2 * (y * z - x * w);
    R(2, 0) = 2 * (x * z - y * w);
    R(2, 1) = 2 * (y * z + x * w);
    R(2, 2) = 1 - 2 * (x * x + y * y);
    return rot;
}

PointCloud apply_rotation(const PointCloud& pc, const Rotation& rot) {
    PointCloud out;
    out.positions.reserve(pc.size());
    for (const auto& p : pc.positions) out.positions.push_back(p * rot.R);
    if (pc.normals) {
        std::vector<Vec3> normals;
        normals.reserve(pc.size());
        for (const auto& n : *pc.normals) normals.push_back(n * rot.R);
        out.normals = std::move(normals);
    }
    return out;
}

Vec3 draw_scale_factors(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 0x5343414c45ULL));
    std::uniform_real_distribution<double> uni(0.8, 1.2);
    const double a = uni(rng);
    const double b = uni(rng);
    const double c = uni(rng);
    return {a, b, c};
}

PointCloud anisotropic_scale(const PointCloud& pc, std::uint64_t seed) {
    return scale_with_factors(pc, draw_scale_factors(seed));
}

PointCloud scale_with_factors(const PointCloud& pc, const Vec3& factors) {
    PointCloud out;
    out.positions.reserve(pc.size());
    for (const auto& p : pc.positions) out.positions.push_back({p[0] * factors[0], p[1] * factors[1], p[2] * factors[2]});
    if (pc.normals) {
        std::vector<Vec3> normals;
        normals.reserve(pc.size());
        for (const auto& n : *pc.normals) {
            const Vec3 t{n[0] / factors[0], n[1] / factors[1], n[2] / factors[2]};
            normals.push_back((1.0 / norm(t)) * t);
        }
        out.normals = std::move(normals);
    }
    return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    // splitmix64 finalizer applied over the stream identifiers.
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    std::uint64_t h = mix(base);
    h = mix(h ^ a);
    h = mix(h ^ b);
    h = mix(h ^ c);
    return h;
}

}  // namespace masklrf
