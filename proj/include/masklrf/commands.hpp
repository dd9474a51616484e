#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "masklrf/geomio.hpp"
#include "masklrf/r2pt.hpp"
#include "masklrf/trainer.hpp"

// Library side of the command-line tool; tools/masklrf.cpp only parses flags.
namespace masklrf {

/// key=value lines; '#' comments and blank lines ignored.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> read_config_file(const std::string& path);

/// `count` clouds cycling sphere, cube, torus, two_planes; optionally rotated.
std::vector<PointCloud> synthetic_dataset(std::size_t count, std::size_t n, std::uint64_t seed, bool rotate);

struct InvarianceReport {
    std::size_t trials = 0;
    double max_rel_deviation = 0.0;
    std::size_t degenerate_patches = 0;
    std::size_t patches = 0;
    bool passed = true;

    std::string to_string() const;
};

/// Global feature of the cloud vs `trials` random rotations of it.
InvarianceReport check_invariance(const ModelState& state, const PointCloud& pc, std::size_t trials, double tol,
                                  std::uint64_t seed, const EncodeOptions& opt = {});

/// max |a - b| / max(|a|_inf, 1e-300).
double relative_linf(const std::vector<double>& a, const std::vector<double>& b);

/// Global feature with all patches visible (finetune mode).
std::vector<double> embed_cloud(const ModelState& state, const PointCloud& pc, const EncodeOptions& opt = {});

struct ReconstructRow {
    std::size_t patch_index = 0;
    double target_norm = 0.0;
    double prediction_norm = 0.0;
    double sq_error = 0.0;
};

struct ReconstructReport {
    std::vector<ReconstructRow> rows;
    double total_loss = 0.0;

    std::string csv() const;
};

ReconstructReport reconstruct(const ModelState& state, const PointCloud& pc, unsigned mask_ratio, std::uint64_t seed);

struct SweepRow {
    unsigned ratio = 0;
    double final_loss = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<std::string> warnings;

    std::string csv() const;
};

/// One pretraining run per distinct ratio, all sharing cfg.seed.
SweepResult mask_sweep(const std::vector<PointCloud>& dataset, std::vector<unsigned> ratios, const TrainConfig& cfg,
                       const ModelConfig& mcfg);

struct LabeledCloud {
    PointCloud cloud;
    int label = 0;
};

/// Lines of "<label> <path>"; relative paths resolve against the list's directory.
std::vector<LabeledCloud> read_labeled_list(const std::string& path, std::map<std::string, int>& label_ids);

struct ProbeResult {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::size_t classes = 0;
};

/// Linear softmax classifier over raw features; full-batch gradient descent.
struct LinearProbe {
    Matrix weights;  // features x classes
    std::vector<double> bias;

    static LinearProbe fit(const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                           std::size_t classes, std::size_t steps = 500, double lr = 0.1);
    int predict(const std::vector<double>& feature) const;
    double accuracy(const std::vector<std::vector<double>>& features, const std::vector<int>& labels) const;
};

ProbeResult probe(const ModelState& state, const std::vector<LabeledCloud>& train, const std::vector<LabeledCloud>& test);
/// Same, from precomputed features.
ProbeResult probe_features(const std::vector<std::vector<double>>& train_x, const std::vector<int>& train_y,
                           const std::vector<std::vector<double>>& test_x, const std::vector<int>& test_y);

}  // namespace masklrf
