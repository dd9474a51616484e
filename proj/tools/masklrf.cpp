// masklrf: generate shapes, pretrain, and inspect rotation-invariant point models.
// Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "masklrf/checkpoint.hpp"
#include "masklrf/commands.hpp"
#include "masklrf/kernels.hpp"

using namespace masklrf;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    int threads = 0;
};

struct DataFlags {
    std::string list;
    std::size_t shapes = 200;
    bool rotate = true;
};

ModelConfig preset(const std::string& name) {
    if (name == "desk") return ModelConfig::desk();
    if (name == "tiny") return ModelConfig::tiny();
    if (name == "paper") return ModelConfig::paper();
    throw UsageError("unknown preset '" + name + "' (desk, tiny, paper)");
}

std::map<std::string, std::string> config_kv(const Common& c) {
    if (c.config.empty()) return {};
    return read_config_file(c.config);
}

ModelConfig model_config(const Common& c, const std::string& preset_name) {
    try {
        auto m = ModelConfig::from_kv(config_kv(c), preset(preset_name));
        m.validate();
        return m;
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

void write_output(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<PointCloud> load_dataset(const DataFlags& d, const ModelConfig& m, std::uint64_t seed) {
    if (d.list.empty()) return synthetic_dataset(d.shapes, m.num_points, seed, d.rotate);
    std::map<std::string, int> ids;
    std::vector<PointCloud> out;
    for (auto& lc : read_labeled_list(d.list, ids)) out.push_back(std::move(lc.cloud));
    return out;
}

void add_data_flags(CLI::App* cmd, DataFlags& d) {
    cmd->add_option("--data", d.list, "labeled list file of OPC clouds (labels ignored); synthetic if absent");
    cmd->add_option("--shapes", d.shapes, "synthetic dataset size")->check(CLI::PositiveNumber);
    cmd->add_flag("!--aligned", d.rotate, "do not rotate synthetic shapes");
}

TrainConfig train_config(const Common& c, std::size_t epochs, std::size_t batch, unsigned mask_ratio) {
    try {
        auto t = TrainConfig::from_kv(config_kv(c), TrainConfig{});
        t.seed = c.seed;
        if (epochs) t.epochs = epochs;
        if (batch) t.batch = batch;
        if (mask_ratio) t.mask_ratio = mask_ratio;
        t.validate();
        return t;
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

std::string join_decimals(const std::vector<double>& v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
    os << "\n";
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masklrf: rotation-invariant masked point modeling"};
    app.require_subcommand(1);
    app.fallthrough();
    Common c;
    app.add_option("--config", c.config, "key=value file with model and training fields");
    app.add_option("--seed", c.seed, "base seed");
    app.add_option("--out", c.out, "output path (stdout when absent for text outputs)");
    app.add_option("--threads", c.threads, "OpenMP threads; 1 is bit-reproducible")->check(CLI::NonNegativeNumber);

    std::string preset_name = "desk";
    auto add_preset = [&](CLI::App* cmd) { cmd->add_option("--preset", preset_name, "desk, tiny or paper"); };

    // gen
    auto* gen = app.add_subcommand("gen", "write a synthetic shape as OPC text");
    std::string shape = "sphere";
    std::size_t n = 1024;
    bool gen_rotate = false;
    gen->add_option("--shape", shape, "sphere, cube, torus, two_planes");
    gen->add_option("--n", n, "number of points");
    gen->add_flag("--rotate", gen_rotate, "apply a random rotation");

    // init
    auto* init = app.add_subcommand("init", "write a randomly initialized checkpoint");
    add_preset(init);

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "masked point modeling pretraining");
    add_preset(pre);
    DataFlags data;
    add_data_flags(pre, data);
    std::size_t epochs = 0, batch = 0;
    unsigned mask_ratio = 0;
    std::string loss_csv;
    pre->add_option("--epochs", epochs);
    pre->add_option("--batch", batch);
    pre->add_option("--mask-ratio", mask_ratio)->check(CLI::Range(0u, 100u));
    pre->add_option("--loss-csv", loss_csv, "epoch,mean_loss,lr (default <out>.loss.csv)");

    // embed
    auto* emb = app.add_subcommand("embed", "global feature of a cloud, one line");
    std::string ckpt, input;
    emb->add_option("--ckpt", ckpt)->required();
    emb->add_option("--input", input)->required();

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct", "per-masked-patch reconstruction CSV");
    rec->add_option("--ckpt", ckpt)->required();
    rec->add_option("--input", input)->required();
    unsigned rec_ratio = 60;
    rec->add_option("--mask-ratio", rec_ratio)->check(CLI::Range(0u, 100u));

    // check-invariance
    auto* inv = app.add_subcommand("check-invariance", "global feature deviation under random rotations");
    inv->add_option("--ckpt", ckpt)->required();
    inv->add_option("--input", input)->required();
    std::size_t trials = 8;
    double tol = 1e-4;
    inv->add_option("--trials", trials);
    inv->add_option("--tol", tol)->check(CLI::NonNegativeNumber);

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "finite-difference check of every tensor (tiny preset)");
    double gc_tol = 1e-4;
    gc->add_option("--tol", gc_tol)->check(CLI::NonNegativeNumber);

    // mask-sweep
    auto* sweep = app.add_subcommand("mask-sweep", "pretrain once per masking ratio");
    add_preset(sweep);
    DataFlags sweep_data;
    add_data_flags(sweep, sweep_data);
    std::vector<unsigned> ratios{10, 20, 30, 40, 50, 60, 70, 80, 90};
    sweep->add_option("--ratios", ratios)->delimiter(',');
    sweep->add_option("--epochs", epochs);
    sweep->add_option("--batch", batch);

    // probe
    auto* prb = app.add_subcommand("probe", "linear probe on frozen global features");
    std::string train_list, test_list;
    prb->add_option("--ckpt", ckpt)->required();
    prb->add_option("--train", train_list, "'<label> <path>' lines")->required();
    prb->add_option("--test", test_list, "'<label> <path>' lines")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (c.threads > 0) kernels::set_threads(c.threads);

        if (gen->parsed()) {
            ShapeKind kind;
            try {
                kind = parse_shape_kind(shape);
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            if (n < 16) throw UsageError("--n must be at least 16");
            auto pc = generate_shape(kind, n, c.seed);
            if (gen_rotate) pc = apply_rotation(pc, random_rotation(derive_seed(c.seed, 0x47524f54ULL)));
            write_output(c.out, save_point_cloud(pc));
        } else if (init->parsed()) {
            if (c.out.empty()) throw UsageError("init needs --out");
            save_checkpoint(ModelState::init(model_config(c, preset_name), c.seed), c.out);
        } else if (pre->parsed()) {
            if (c.out.empty()) throw UsageError("pretrain needs --out");
            const auto m = model_config(c, preset_name);
            const auto t = train_config(c, epochs, batch, mask_ratio);
            const auto dataset = load_dataset(data, m, c.seed);
            const auto run = pretrain(dataset, t, m, [](const EpochRecord& r) {
                std::cerr << "epoch " << r.epoch << " loss " << r.mean_loss << " lr " << r.lr << "\n";
            });
            save_checkpoint(run.state, c.out);
            write_output(loss_csv.empty() ? c.out + ".loss.csv" : loss_csv, history_csv(run.history));
        } else if (emb->parsed()) {
            const auto state = load_checkpoint(ckpt);
            write_output(c.out, join_decimals(embed_cloud(state, read_point_cloud_file(input))));
        } else if (rec->parsed()) {
            const auto state = load_checkpoint(ckpt);
            write_output(c.out, reconstruct(state, read_point_cloud_file(input), rec_ratio, c.seed).csv());
        } else if (inv->parsed()) {
            const auto state = load_checkpoint(ckpt);
            const auto rep = check_invariance(state, read_point_cloud_file(input), trials, tol, c.seed);
            write_output(c.out, rep.to_string());
            return rep.passed ? 0 : 1;
        } else if (gc->parsed()) {
            const auto rep = grad_check(ModelConfig::tiny(), c.seed);
            write_output(c.out, rep.to_string());
            return rep.worst_rel <= gc_tol ? 0 : 1;
        } else if (sweep->parsed()) {
            const auto m = model_config(c, preset_name);
            const auto t = train_config(c, epochs, batch, 0);
            const auto res = mask_sweep(load_dataset(sweep_data, m, c.seed), ratios, t, m);
            for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
            write_output(c.out, res.csv());
        } else if (prb->parsed()) {
            const auto state = load_checkpoint(ckpt);
            std::map<std::string, int> ids;
            const auto train = read_labeled_list(train_list, ids);
            const auto test = read_labeled_list(test_list, ids);
            const auto r = probe(state, train, test);
            std::ostringstream os;
            os << "classes: " << r.classes << "\ntrain_accuracy: " << r.train_accuracy
               << "\ntest_accuracy: " << r.test_accuracy << "\n";
            write_output(c.out, os.str());
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
