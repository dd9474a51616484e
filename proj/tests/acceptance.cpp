// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.
// Writes the training curve, sweep and probe outputs to --results-dir.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>

#include "masklrf/checkpoint.hpp"
#include "masklrf/commands.hpp"
#include "masklrf/lrf.hpp"
#include "masklrf/pod.hpp"
#include "oracles.hpp"

using namespace masklrf;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double x, int prec = 3) {
    std::ostringstream os;
    os.precision(prec);
    os << x;
    return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

// 1. RP/RO of every non-degenerate patch pair survive rotation.
Outcome relpose_invariance() {
    const auto cfg = ModelConfig::desk();
    const auto clouds = synthetic_dataset(50, cfg.num_points, 101, true);
    std::size_t compared = 0, failures = 0, excluded = 0;
    double worst = 0.0;
    for (std::size_t c = 0; c < clouds.size(); ++c) {
        const auto base = prepare_patches(clouds[c], cfg);
        for (std::uint64_t r = 0; r < 20; ++r) {
            const auto rot = prepare_patches(apply_rotation(clouds[c], random_rotation(derive_seed(102, c, r))), cfg);
            for (std::size_t i = 0; i < base.size(); ++i)
                for (std::size_t j = 0; j < base.size(); ++j) {
                    if (base[i].degenerate || base[j].degenerate || rot[i].degenerate || rot[j].degenerate) {
                        ++excluded;
                        continue;
                    }
                    const auto a = relative_pose(base[i], base[j]), b = relative_pose(rot[i], rot[j]);
                    const double e = std::max(max_abs_diff(a.RP, b.RP), max_abs_diff(a.RO, b.RO));
                    worst = std::max(worst, e);
                    failures += e > 1e-10;
                    ++compared;
                }
        }
    }
    return {failures == 0 && compared > 0,
            std::to_string(compared) + " pairs, max abs diff " + fmt(worst) + ", failures " + std::to_string(failures) +
                ", degenerate-excluded " + std::to_string(excluded)};
}

// 2. Global feature under rotation, plus the absolute-pose control.
Outcome end_to_end_invariance() {
    const auto state = ModelState::init(ModelConfig::desk(), 201);
    bool ok = true;
    std::string detail;
    for (auto kind : {ShapeKind::torus, ShapeKind::cube, ShapeKind::two_planes}) {
        const auto pc = generate_shape(kind, state.config.num_points, 202);
        const auto inv = check_invariance(state, pc, 8, 1e-6, 203);
        const auto ctl = check_invariance(state, pc, 8, 1e-6, 203, {true});
        ok = ok && inv.passed && ctl.max_rel_deviation >= 1e-2;
        detail += std::string(shape_kind_name(kind)) + " dev " + fmt(inv.max_rel_deviation) + " (degenerate " +
                  std::to_string(inv.degenerate_patches) + ") control " + fmt(ctl.max_rel_deviation) + "; ";
    }
    return {ok, detail};
}

// 3. Zero relative pose with full targets is ordinary multi-head attention.
Outcome attention_degeneracy() {
    auto cfg = ModelConfig::desk();
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto state = ModelState::init(cfg, 300 + s);
        for (std::size_t i = 0; i < state.tensors.size(); ++i)
            state.tensors[i].value =
                random_matrix(state.at(i).rows, state.at(i).cols, derive_seed(301, s, i), 0.3);
        const std::size_t m = 2 + s;
        TokenSet tok;
        tok.tokens = random_matrix(m, cfg.d, derive_seed(302, s));
        tok.centers = random_points(m, derive_seed(303, s));
        RelPoseTable zero;
        zero.n_rows = zero.n_cols = m;
        zero.entries.assign(m * m, std::vector<double>(cfg.d, 0.0));
        std::vector<std::vector<std::size_t>> targets, dense;
        for (std::size_t i = 0; i < m; ++i) {
            targets.push_back(select_targets_local(tok.centers, i, m));
            dense.push_back(all_indices(m));
        }
        const auto& block = state.layout.enc[s % cfg.enc_blocks];
        const auto out = attention_block(tok, targets, zero, state, block).tokens;
        const auto ref = block_oracle(to_rows(tok.tokens), state, block, dense,
                                      [](auto, auto) -> const std::vector<double>* { return nullptr; });
        worst = std::max(worst, max_diff(ref, out));
    }
    return {worst <= 1e-12, "10 token sets, max abs diff " + fmt(worst)};
}

// 4. Finite-difference gradient check on the tiny preset.
Outcome gradient_check() {
    const auto rep = grad_check(ModelConfig::tiny(), 1);
    const auto expected = ModelState::init(ModelConfig::tiny(), 1).tensors.size();
    std::set<std::string> names;
    bool covered = true;
    for (const auto& e : rep.entries) {
        names.insert(e.name);
        covered = covered && e.checked > 0;
    }
    covered = covered && names.size() == expected && rep.entries.size() == expected;
    return {covered && rep.worst_rel <= 1e-4,
            std::to_string(rep.entries.size()) + "/" + std::to_string(expected) + " tensors, worst rel " +
                fmt(rep.worst_rel) + " (" + rep.worst_tensor + "), componentwise " + fmt(rep.worst_componentwise)};
}

// 5. Brute-force and closed-form oracles, >= 100 random instances each.
Outcome oracles() {
    std::size_t fps_bad = 0, knn_bad = 0;
    double eig_worst = 0.0, pod_worst = 0.0, adam_worst = 0.0;
    constexpr std::size_t N = 120;
    for (std::uint64_t s = 0; s < N; ++s) {
        const std::size_t n = 2 + s % 60;
        auto pts = random_points(n, derive_seed(501, s));
        if (s % 4 == 0) pts[1] = pts[0];
        const std::size_t count = 1 + (s * 7) % n;
        fps_bad += farthest_point_sample(pts, count) != fps_oracle(pts, count);
        const auto q = random_points(1, derive_seed(502, s))[0];
        const std::size_t k = 1 + s % n;
        knn_bad += knn(pts, q, k) != knn_oracle(pts, q, k);

        const auto a = random_matrix(1, 6, derive_seed(503, s));
        const SymMat3 sym{a.data[0], a.data[1], a.data[2], a.data[3], a.data[4], a.data[5]};
        const auto e = eig_sym3(sym);
        Mat3 rec;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int c = 0; c < 3; ++c) rec(i, j) += e.vectors(i, c) * e.values[c] * e.vectors(j, c);
        eig_worst = std::max(eig_worst, max_abs_diff(rec, sym.full()));

        const std::size_t kp = 2 + s % 30, g = 1 + s % 6;
        const auto p = random_points(kp, derive_seed(504, s));
        auto nrm = random_points(kp, derive_seed(505, s));
        for (auto& v : nrm) v = (1.0 / norm(v)) * v;
        pod_worst = std::max(pod_worst, max_abs_diff_seq(pod_grid(p, nrm, g).values, pod_oracle(p, nrm, g)));

        std::vector<Tensor> w{{"w", random_matrix(4, 3, derive_seed(506, s))}};
        const auto w0 = w[0].value;
        const Gradients gr{random_matrix(4, 3, derive_seed(507, s))};
        OptState opt;
        opt.m = {Matrix(4, 3)};
        opt.v = {Matrix(4, 3)};
        const AdamWParams hp;
        const double lr = 1e-3 * static_cast<double>(1 + s % 9);
        adamw_step(w, gr, opt, lr, hp);
        for (std::size_t i = 0; i < w0.size(); ++i) {
            const double g0 = gr[0].data[i];
            const double expect = w0.data[i] * (1.0 - lr * hp.weight_decay) - lr * g0 / (std::abs(g0) + hp.eps);
            adam_worst = std::max(adam_worst, std::abs(w[0].value.data[i] - expect));
        }
    }
    const bool ok = fps_bad == 0 && knn_bad == 0 && eig_worst <= 1e-10 && pod_worst <= 1e-12 && adam_worst <= 1e-14;
    return {ok, std::to_string(N) + " instances each: fps mismatches " + std::to_string(fps_bad) + ", knn mismatches " +
                    std::to_string(knn_bad) + ", eig reconstruction " + fmt(eig_worst) + ", pod " + fmt(pod_worst) +
                    ", adamw " + fmt(adam_worst)};
}

struct TrainingRun {
    PretrainResult result;
    double seconds = 0.0;
};

TrainConfig desk_training() {
    TrainConfig t;
    t.epochs = 100;
    t.batch = 64;
    t.mask_ratio = 60;
    t.seed = 601;
    return t;
}

// 6. Desk pretraining halves the loss, beats the mean predictor, and reproduces.
Outcome training(const fs::path& results, ModelState& trained) {
    const auto mcfg = ModelConfig::desk();
    const auto cfg = desk_training();
    const auto data = synthetic_dataset(200, mcfg.num_points, 602, true);
    auto run = [&] {
        const auto t0 = Clock::now();
        TrainingRun r{pretrain(data, cfg, mcfg,
                               [](const EpochRecord& e) {
                                   if (e.epoch % 10 == 0)
                                       std::fprintf(stderr, "  epoch %zu loss %.4f\n", e.epoch, e.mean_loss);
                               }),
                      0.0};
        r.seconds = seconds_since(t0);
        return r;
    };
    const auto a = run();
    const auto b = run();
    write_file(results / "training_curve.csv", history_csv(a.result.history));
    trained = a.result.state;

    const double first = a.result.history.front().mean_loss;
    const double last = a.result.history.back().mean_loss;
    const double baseline = mean_predictor_baseline(data, cfg, mcfg, cfg.epochs - 1);
    const bool halved = last <= 0.5 * first;
    const bool beats = last < baseline;
    const bool reproducible = serialize_checkpoint(a.result.state) == serialize_checkpoint(b.result.state) &&
                              history_csv(a.result.history) == history_csv(b.result.history);
    const bool fast = a.seconds < 480.0;
    return {halved && beats && reproducible && fast,
            "epoch 1 " + fmt(first, 5) + ", epoch 100 " + fmt(last, 5) + " (ratio " + fmt(last / first) +
                (halved ? " <= 0.5" : " > 0.5") + "), mean-predictor baseline " + fmt(baseline, 5) +
                (beats ? " beaten" : " NOT beaten") + ", reproducible " + (reproducible ? "yes" : "no") + ", " +
                fmt(a.seconds) + " s per run"};
}

std::vector<LabeledCloud> labeled(const std::vector<PointCloud>& clouds) {
    std::vector<LabeledCloud> out;
    for (std::size_t i = 0; i < clouds.size(); ++i) out.push_back({clouds[i], static_cast<int>(i % 4)});
    return out;
}

// 7. Linear probe: pretrained vs random weights, and A/R vs R/R.
Outcome probe_transfer(const fs::path& results, const ModelState& trained) {
    const auto n = trained.config.num_points;
    const auto train_rot = labeled(synthetic_dataset(80, n, 701, true));
    const auto train_aligned = labeled(synthetic_dataset(80, n, 701, false));
    const auto test_rot = labeled(synthetic_dataset(80, n, 702, true));
    const auto random_state = ModelState::init(trained.config, 703);

    const auto pre_rr = probe(trained, train_rot, test_rot);
    const auto pre_ar = probe(trained, train_aligned, test_rot);
    const auto rnd_rr = probe(random_state, train_rot, test_rot);
    const double gap = pre_rr.test_accuracy - rnd_rr.test_accuracy;
    const double protocol = std::abs(pre_ar.test_accuracy - pre_rr.test_accuracy);

    std::ostringstream os;
    os << "protocol,checkpoint,train_accuracy,test_accuracy\n"
       << "R/R,pretrained," << pre_rr.train_accuracy << ',' << pre_rr.test_accuracy << '\n'
       << "A/R,pretrained," << pre_ar.train_accuracy << ',' << pre_ar.test_accuracy << '\n'
       << "R/R,random," << rnd_rr.train_accuracy << ',' << rnd_rr.test_accuracy << '\n';
    write_file(results / "probe.csv", os.str());
    return {gap >= 10.0 && protocol <= 3.0,
            "R/R pretrained " + fmt(pre_rr.test_accuracy) + "% vs random " + fmt(rnd_rr.test_accuracy) + "% (gap " +
                fmt(gap) + ", need >= 10); A/R " + fmt(pre_ar.test_accuracy) + "% (|A/R - R/R| " + fmt(protocol) +
                ", need <= 3)"};
}

// 8. The masking-ratio sweep completes at every ratio.
Outcome sweep(const fs::path& results) {
    const auto mcfg = ModelConfig::desk();
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch = 16;
    cfg.seed = 801;
    const auto data = synthetic_dataset(40, mcfg.num_points, 802, true);
    const auto res = mask_sweep(data, {10, 20, 30, 40, 50, 60, 70, 80, 90}, cfg, mcfg);
    write_file(results / "mask_sweep.csv", res.csv());
    bool finite = res.rows.size() == 9;
    for (const auto& r : res.rows) finite = finite && std::isfinite(r.final_loss);
    return {finite, std::to_string(res.rows.size()) + " runs (40 shapes, 10 epochs each), all losses finite: " +
                        (finite ? "yes" : "no")};
}

// 9. Checkpoint round trips and corruption rejection.
Outcome checkpoints() {
    const auto dir = fs::temp_directory_path() / "masklrf_acceptance_ckpt";
    fs::create_directories(dir);
    std::size_t mismatches = 0, accepted_corrupt = 0;
    std::mt19937_64 rng(901);
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto state = ModelState::init(s % 2 ? ModelConfig::desk() : ModelConfig::tiny(), derive_seed(902, s));
        for (auto& t : state.tensors)
            for (auto& x : t.value.data) x = std::ldexp(std::uniform_real_distribution<double>(-1, 1)(rng),
                                                         static_cast<int>(rng() % 200) - 100);
        const auto a = (dir / "a.ckpt").string(), b = (dir / "b.ckpt").string();
        save_checkpoint(state, a);
        const auto loaded = load_checkpoint(a);
        save_checkpoint(loaded, b);
        std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
        const std::string ba((std::istreambuf_iterator<char>(fa)), {}), bb((std::istreambuf_iterator<char>(fb)), {});
        bool same = ba == bb && loaded.config == state.config;
        for (std::size_t i = 0; same && i < state.tensors.size(); ++i)
            same = std::memcmp(loaded.at(i).data.data(), state.at(i).data.data(), state.at(i).size() * 8) == 0;
        mismatches += !same;

        for (int variant = 0; variant < 2; ++variant) {
            auto bad = ba;
            if (variant == 0) {
                bad.resize(rng() % ba.size());
            } else {
                const auto pos = rng() % ba.size();
                bad[pos] = static_cast<char>(bad[pos] ^ static_cast<char>(1 + rng() % 255));
            }
            try {
                parse_checkpoint(bad);
                ++accepted_corrupt;
            } catch (const CheckpointError&) {
            }
        }
    }
    fs::remove_all(dir);
    return {mismatches == 0 && accepted_corrupt == 0,
            "100 round trips, mismatches " + std::to_string(mismatches) + "; 200 corrupted files, accepted " +
                std::to_string(accepted_corrupt)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MaskLRF acceptance run"};
    std::string results_dir = "results";
    app.add_option("--results-dir", results_dir, "where curves and reports are written");
    CLI11_PARSE(app, argc, argv);
    const fs::path results(results_dir);
    fs::create_directories(results);

    const auto start = Clock::now();
    std::ostringstream report;
    int failed = 0;
    auto criterion = [&](int id, const char* title, const std::function<Outcome()>& body) {
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = body();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const std::string line = "[" + std::string(o.pass ? "PASS" : "FAIL") + "] " + std::to_string(id) + ". " +
                                 title + ": " + o.detail + " [" + fmt(seconds_since(t0)) + " s]";
        std::cout << line << std::endl;
        report << line << '\n';
        failed += !o.pass;
    };

    ModelState trained;
    criterion(1, "relative-pose invariance", relpose_invariance);
    criterion(2, "end-to-end rotation invariance", end_to_end_invariance);
    criterion(3, "attention degeneracy", attention_degeneracy);
    criterion(4, "gradient correctness", gradient_check);
    criterion(5, "oracle equivalence", oracles);
    criterion(6, "training effectiveness", [&] { return training(results, trained); });
    criterion(7, "pretraining transfer", [&] {
        if (trained.tensors.empty()) return Outcome{false, "no pretrained state (criterion 6 did not finish)"};
        return probe_transfer(results, trained);
    });
    criterion(8, "masking-ratio harness", [&] { return sweep(results); });
    criterion(9, "checkpoint integrity", checkpoints);

    const double total = seconds_since(start);
    const std::string summary = std::to_string(9 - failed) + "/9 criteria passed; total runtime " + fmt(total) +
                                " s (target < 900 s)";
    std::cout << summary << std::endl;
    report << summary << '\n';
    write_file(results / "acceptance.txt", report.str());
    return failed == 0 ? 0 : 1;
}
