#include "masklrf/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace masklrf {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt17(double x) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    (void)ec;
    return std::string(buf, end);
}

std::vector<std::size_t> degenerate_ids(const std::vector<Patch>& patches) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < patches.size(); ++i)
        if (patches[i].degenerate) out.push_back(i);
    return out;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
        kv[trim(std::string_view(t).substr(0, eq))] = trim(std::string_view(t).substr(eq + 1));
    }
    return kv;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::vector<PointCloud> synthetic_dataset(std::size_t count, std::size_t n, std::uint64_t seed, bool rotate) {
    static constexpr ShapeKind kinds[] = {ShapeKind::sphere, ShapeKind::cube, ShapeKind::torus, ShapeKind::two_planes};
    std::vector<PointCloud> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto pc = generate_shape(kinds[i % 4], n, derive_seed(seed, 0x53484150ULL, i));
        if (rotate) pc = apply_rotation(pc, random_rotation(derive_seed(seed, 0x53524f54ULL, i)));
        out.push_back(std::move(pc));
    }
    return out;
}

double relative_linf(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("relative_linf: length mismatch");
    double scale = 0.0, dev = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max(scale, std::abs(a[i]));
        dev = std::max(dev, std::abs(a[i] - b[i]));
    }
    return dev / std::max(scale, 1e-300);
}

std::vector<double> embed_cloud(const ModelState& state, const PointCloud& pc, const EncodeOptions& opt) {
    const auto patches = prepare_patches(pc, state.config);
    return global_feature(encoder_forward(patches, all_indices(patches.size()), state, Mode::finetune, opt));
}

std::string InvarianceReport::to_string() const {
    std::ostringstream os;
    os << "comparisons: " << trials << "\n"
       << "max_rel_linf_deviation: " << fmt17(max_rel_deviation) << "\n"
       << "degenerate_patches: " << degenerate_patches << " of " << patches << "\n"
       << "result: " << (passed ? "PASS" : "FAIL") << "\n";
    return os.str();
}

InvarianceReport check_invariance(const ModelState& state, const PointCloud& pc, std::size_t trials, double tol,
                                  std::uint64_t seed, const EncodeOptions& opt) {
    InvarianceReport rep;
    rep.trials = trials;
    const auto base_patches = prepare_patches(pc, state.config);
    std::set<std::size_t> degenerate;
    for (auto i : degenerate_ids(base_patches)) degenerate.insert(i);
    rep.patches = base_patches.size();
    const auto base = global_feature(
        encoder_forward(base_patches, all_indices(base_patches.size()), state, Mode::finetune, opt));
    for (std::size_t t = 0; t < trials; ++t) {
        const auto rotated = apply_rotation(pc, random_rotation(derive_seed(seed, 0x494e5652ULL, t)));
        const auto patches = prepare_patches(rotated, state.config);
        for (auto i : degenerate_ids(patches)) degenerate.insert(i);
        const auto f =
            global_feature(encoder_forward(patches, all_indices(patches.size()), state, Mode::finetune, opt));
        rep.max_rel_deviation = std::max(rep.max_rel_deviation, relative_linf(base, f));
    }
    rep.degenerate_patches = degenerate.size();
    rep.passed = rep.max_rel_deviation <= tol;
    return rep;
}

std::string ReconstructReport::csv() const {
    std::string out = "patch_index,target_norm,prediction_norm,sq_error\n";
    for (const auto& r : rows)
        out += std::to_string(r.patch_index) + "," + fmt17(r.target_norm) + "," + fmt17(r.prediction_norm) + "," +
               fmt17(r.sq_error) + "\n";
    out += "total_loss," + fmt17(total_loss) + "\n";
    return out;
}

ReconstructReport reconstruct(const ModelState& state, const PointCloud& pc, unsigned mask_ratio, std::uint64_t seed) {
    if (masked_count(state.config.num_patches, mask_ratio) == 0) throw std::invalid_argument("no masked patches");
    const auto sample = make_sample(pc, state.config, mask_ratio, derive_seed(seed, 0x4d41534bULL));
    const auto pred = predict(state, sample);
    ReconstructReport rep;
    for (std::size_t i = 0; i < sample.split.masked.size(); ++i) {
        ReconstructRow row;
        row.patch_index = sample.split.masked[i];
        const auto z = sample.targets.row(i);
        const auto zh = pred.row(i);
        for (std::size_t j = 0; j < z.size(); ++j) {
            row.target_norm += z[j] * z[j];
            row.prediction_norm += zh[j] * zh[j];
            row.sq_error += (z[j] - zh[j]) * (z[j] - zh[j]);
        }
        row.target_norm = std::sqrt(row.target_norm);
        row.prediction_norm = std::sqrt(row.prediction_norm);
        rep.total_loss += row.sq_error;
        rep.rows.push_back(row);
    }
    return rep;
}

std::string SweepResult::csv() const {
    std::string out = "ratio,final_loss\n";
    for (const auto& r : rows) out += std::to_string(r.ratio) + "," + fmt17(r.final_loss) + "\n";
    return out;
}

SweepResult mask_sweep(const std::vector<PointCloud>& dataset, std::vector<unsigned> ratios, const TrainConfig& cfg,
                       const ModelConfig& mcfg) {
    SweepResult res;
    std::vector<unsigned> unique;
    for (auto r : ratios) {
        if (r < 10 || r > 90) throw std::invalid_argument("mask ratio " + std::to_string(r) + " outside [10, 90]");
        if (std::find(unique.begin(), unique.end(), r) != unique.end()) {
            res.warnings.push_back("duplicate ratio " + std::to_string(r) + " ignored");
            continue;
        }
        unique.push_back(r);
    }
    for (auto r : unique) {
        auto c = cfg;
        c.mask_ratio = r;
        const auto run = pretrain(dataset, c, mcfg);
        res.rows.push_back({r, run.history.back().mean_loss});
    }
    return res;
}

std::vector<LabeledCloud> read_labeled_list(const std::string& path, std::map<std::string, int>& label_ids) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open list " + path);
    const auto dir = std::filesystem::path(path).parent_path();
    std::vector<LabeledCloud> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::istringstream ls(t);
        std::string label, file;
        if (!(ls >> label >> file)) throw std::invalid_argument("list " + path + ": expected '<label> <path>'");
        std::filesystem::path p(file);
        if (p.is_relative()) p = dir / p;
        auto it = label_ids.try_emplace(label, static_cast<int>(label_ids.size())).first;
        out.push_back({read_point_cloud_file(p.string()), it->second});
    }
    return out;
}

LinearProbe LinearProbe::fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y, std::size_t classes,
                             std::size_t steps, double lr) {
    if (x.empty() || x.size() != y.size()) throw std::invalid_argument("probe: need one label per feature");
    const std::size_t n = x.size(), dim = x[0].size();
    LinearProbe p{Matrix(dim, classes), std::vector<double>(classes, 0.0)};
    Matrix gw(dim, classes);
    std::vector<double> gb(classes), prob(classes);
    for (std::size_t step = 0; step < steps; ++step) {
        std::fill(gw.data.begin(), gw.data.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < classes; ++c) {
                double s = p.bias[c];
                for (std::size_t j = 0; j < dim; ++j) s += x[i][j] * p.weights(j, c);
                prob[c] = s;
            }
            const double mx = *std::max_element(prob.begin(), prob.end());
            double z = 0.0;
            for (auto& v : prob) z += (v = std::exp(v - mx));
            for (std::size_t c = 0; c < classes; ++c) {
                const double d = prob[c] / z - (static_cast<int>(c) == y[i] ? 1.0 : 0.0);
                gb[c] += d;
                for (std::size_t j = 0; j < dim; ++j) gw(j, c) += x[i][j] * d;
            }
        }
        const double s = lr / static_cast<double>(n);
        for (std::size_t k = 0; k < gw.data.size(); ++k) p.weights.data[k] -= s * gw.data[k];
        for (std::size_t c = 0; c < classes; ++c) p.bias[c] -= s * gb[c];
    }
    return p;
}

int LinearProbe::predict(const std::vector<double>& f) const {
    int best = 0;
    double best_s = -INFINITY;
    for (std::size_t c = 0; c < bias.size(); ++c) {
        double s = bias[c];
        for (std::size_t j = 0; j < f.size(); ++j) s += f[j] * weights(j, c);
        if (s > best_s) best_s = s, best = static_cast<int>(c);
    }
    return best;
}

double LinearProbe::accuracy(const std::vector<std::vector<double>>& x, const std::vector<int>& y) const {
    if (x.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < x.size(); ++i) hit += predict(x[i]) == y[i];
    return 100.0 * static_cast<double>(hit) / static_cast<double>(x.size());
}

ProbeResult probe_features(const std::vector<std::vector<double>>& train_x, const std::vector<int>& train_y,
                           const std::vector<std::vector<double>>& test_x, const std::vector<int>& test_y) {
    const std::set<int> labels(train_y.begin(), train_y.end());
    if (labels.size() < 2) throw std::invalid_argument("probe needs at least 2 classes, got " + std::to_string(labels.size()));
    if (train_x.empty()) throw std::invalid_argument("probe: empty training set");
    const std::size_t classes = static_cast<std::size_t>(*labels.rbegin()) + 1;
    for (int t : test_y)
        if (t < 0 || static_cast<std::size_t>(t) >= classes) throw std::invalid_argument("probe: test label unseen in training");

    // Standardize with training statistics so step size 0.1 suits any feature scale.
    const std::size_t dim = train_x[0].size();
    std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
    for (const auto& f : train_x)
        for (std::size_t j = 0; j < dim; ++j) mean[j] += f[j];
    for (auto& m : mean) m /= static_cast<double>(train_x.size());
    for (const auto& f : train_x)
        for (std::size_t j = 0; j < dim; ++j) sd[j] += (f[j] - mean[j]) * (f[j] - mean[j]);
    for (auto& s : sd) s = std::sqrt(s / static_cast<double>(train_x.size()));
    auto standardize = [&](std::vector<std::vector<double>> xs) {
        for (auto& f : xs) {
            if (f.size() != dim) throw std::invalid_argument("probe: feature length mismatch");
            for (std::size_t j = 0; j < dim; ++j) f[j] = sd[j] > 1e-12 ? (f[j] - mean[j]) / sd[j] : 0.0;
        }
        return xs;
    };
    const auto tx = standardize(train_x);
    const auto vx = standardize(test_x);
    const auto p = LinearProbe::fit(tx, train_y, classes);
    return {p.accuracy(tx, train_y), p.accuracy(vx, test_y), labels.size()};
}

ProbeResult probe(const ModelState& state, const std::vector<LabeledCloud>& train, const std::vector<LabeledCloud>& test) {
    auto features = [&](const std::vector<LabeledCloud>& set, std::vector<std::vector<double>>& x, std::vector<int>& y) {
        x.resize(set.size());
        y.resize(set.size());
        std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
        for (std::size_t i = 0; i < set.size(); ++i) {
            try {
                x[i] = embed_cloud(state, set[i].cloud);
            } catch (...) {
#pragma omp critical(probe_err)
                if (!err) err = std::current_exception();
            }
        }
        if (err) std::rethrow_exception(err);
        for (std::size_t i = 0; i < set.size(); ++i) y[i] = set[i].label;
    };
    std::vector<std::vector<double>> tx, vx;
    std::vector<int> ty, vy;
    features(train, tx, ty);
    features(test, vx, vy);
    return probe_features(tx, ty, vx, vy);
}

}  // namespace masklrf
