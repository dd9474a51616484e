#include "masklrf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "masklrf/kernels.hpp"
#include "masklrf/lrf.hpp"

namespace masklrf {

void TrainConfig::validate() const {
    if (epochs == 0 || batch == 0) throw std::invalid_argument("train config: epochs and batch must be at least 1");
    if (!(lr_min >= 0.0) || !(lr_max >= lr_min))
        throw std::invalid_argument("train config: need lr_max >= lr_min >= 0");
    if (mask_ratio > 100) throw std::invalid_argument("train config: mask ratio must be within [0, 100]");
    if (warmup_epochs < 0 || warmup_epochs >= static_cast<double>(epochs))
        throw std::invalid_argument("train config: warmup must be shorter than training");
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
    auto f = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    return {{"epochs", std::to_string(epochs)},    {"batch", std::to_string(batch)},
            {"lr_max", f(lr_max)},                 {"lr_min", f(lr_min)},
            {"warmup_epochs", f(warmup_epochs)},   {"weight_decay", f(weight_decay)},
            {"beta1", f(beta1)},                   {"beta2", f(beta2)},
            {"eps", f(eps)},                       {"mask_ratio", std::to_string(mask_ratio)},
            {"seed", std::to_string(seed)},        {"clip_norm", f(clip_norm)},
            {"augment", augment ? "1" : "0"}};
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv, TrainConfig base) {
    auto real = [&kv](const char* key, double& field) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        std::size_t pos = 0;
        try {
            field = std::stod(it->second, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != it->second.size()) throw std::invalid_argument(std::string("config: bad value for ") + key);
    };
    auto count = [&kv](const char* key, auto& field) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(it->second, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != it->second.size()) throw std::invalid_argument(std::string("config: bad value for ") + key);
        field = static_cast<std::remove_reference_t<decltype(field)>>(v);
    };
    count("epochs", base.epochs);
    count("batch", base.batch);
    real("lr_max", base.lr_max);
    real("lr_min", base.lr_min);
    real("warmup_epochs", base.warmup_epochs);
    real("weight_decay", base.weight_decay);
    real("beta1", base.beta1);
    real("beta2", base.beta2);
    real("eps", base.eps);
    count("mask_ratio", base.mask_ratio);
    count("seed", base.seed);
    real("clip_norm", base.clip_norm);
    unsigned aug = base.augment ? 1 : 0;
    count("augment", aug);
    base.augment = aug != 0;
    return base;
}

OptState OptState::zeros_like(const ModelState& state) {
    OptState o;
    for (const auto& t : state.tensors) {
        o.m.emplace_back(t.value.rows, t.value.cols);
        o.v.emplace_back(t.value.rows, t.value.cols);
    }
    return o;
}

double mpm_loss(const Matrix& z, const Matrix& zhat) {
    if (!z.same_shape(zhat))
        throw std::invalid_argument("mpm_loss: shape mismatch " + shape_str(z) + " vs " + shape_str(zhat));
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double r = z.data[i] - zhat.data[i];
        s += r * r;
    }
    return s;
}

void adamw_step(std::vector<Tensor>& params, const Gradients& grads, OptState& opt, double lr, const AdamWParams& hp) {
    if (grads.size() != params.size() || opt.m.size() != params.size() || opt.v.size() != params.size())
        throw std::invalid_argument("adamw_step: tensor count mismatch");
    for (std::size_t t = 0; t < params.size(); ++t)
        if (!params[t].value.same_shape(grads[t]) || !params[t].value.same_shape(opt.m[t]) ||
            !params[t].value.same_shape(opt.v[t]))
            throw std::invalid_argument("adamw_step: shape mismatch for " + params[t].name);
    ++opt.step;
    const double step = static_cast<double>(opt.step);
    const double bc1 = 1.0 - std::pow(hp.beta1, step);
    const double bc2 = 1.0 - std::pow(hp.beta2, step);
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& w = params[t].value.data;
        const auto& g = grads[t].data;
        auto& m = opt.m[t].data;
        auto& v = opt.v[t].data;
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] -= lr * hp.weight_decay * w[i];
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + hp.eps);
        }
    }
}

double lr_at(double u, const TrainConfig& cfg) {
    u = std::clamp(u, 0.0, 1.0);
    const double w = cfg.warmup_epochs / static_cast<double>(cfg.epochs);
    if (u < w) return cfg.lr_max * u / w;
    if (w >= 1.0) return cfg.lr_max;
    const double frac = (u - w) / (1.0 - w);
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
}

PretrainSample make_sample(const PointCloud& pc, const ModelConfig& mcfg, unsigned mask_ratio, std::uint64_t mask_seed) {
    if (!pc.has_normals()) throw std::invalid_argument("pretraining cloud lacks normals");
    PretrainSample s;
    s.patches = prepare_patches(pc, mcfg);
    s.split = mask_split(s.patches.size(), mask_ratio, mask_seed);
    s.targets = stack_targets(pod_targets_for_masked(s.patches, s.split, mcfg.grid), mcfg.grid);
    return s;
}

PretrainSample training_sample(const PointCloud& pc, const TrainConfig& cfg, const ModelConfig& mcfg,
                               std::size_t epoch, std::size_t index) {
    const auto aug_seed = derive_seed(cfg.seed, 0x415547ULL, epoch, index);
    const auto mask_seed = derive_seed(cfg.seed, 0x4d534bULL, epoch, index);
    if (!cfg.augment) return make_sample(pc, mcfg, cfg.mask_ratio, mask_seed);
    return make_sample(anisotropic_scale(pc, aug_seed), mcfg, cfg.mask_ratio, mask_seed);
}

namespace {

ag::Var build_loss(Forward& fw, const PretrainSample& s) {
    if (s.split.masked.empty()) throw std::invalid_argument("pretraining sample has no masked patches");
    const auto enc = fw.encode(s.patches, s.split.visible, Mode::pretrain);
    const auto pred = fw.decode(s.patches, s.split.visible, s.split.masked, enc.back());
    return fw.graph().sum_sq_diff(pred, s.targets);
}

}  // namespace

Matrix predict(const ModelState& state, const PretrainSample& s) {
    ag::Graph g;
    Forward fw(g, state, false);
    const auto enc = fw.encode(s.patches, s.split.visible, Mode::pretrain);
    return g.value(fw.decode(s.patches, s.split.visible, s.split.masked, enc.back()));
}

double sample_loss(const ModelState& state, const PretrainSample& s) {
    ag::Graph g;
    Forward fw(g, state, false);
    return g.value(build_loss(fw, s))(0, 0);
}

LossGrad loss_and_grad(const ModelState& state, const PretrainSample& s) {
    ag::Graph g;
    Forward fw(g, state, true);
    const auto loss = build_loss(fw, s);
    g.backward(loss);
    LossGrad out;
    out.loss = g.value(loss)(0, 0);
    out.grads.reserve(state.tensors.size());
    for (std::size_t t = 0; t < state.tensors.size(); ++t) {
        const auto* gr = g.grad(fw.param(t));
        out.grads.push_back(gr ? *gr : Matrix(state.at(t).rows, state.at(t).cols));
    }
    return out;
}

PretrainResult pretrain(const std::vector<PointCloud>& dataset, const TrainConfig& cfg, const ModelConfig& mcfg,
                        const EpochCallback& on_epoch) {
    return pretrain_from(ModelState::init(mcfg, derive_seed(cfg.seed, 0x4d4f44454cULL)), dataset, cfg, on_epoch);
}

PretrainResult pretrain_from(ModelState state, const std::vector<PointCloud>& dataset, const TrainConfig& cfg,
                             const EpochCallback& on_epoch) {
    cfg.validate();
    const auto& mcfg = state.config;
    if (dataset.empty()) throw std::invalid_argument("pretrain: dataset is empty");
    for (std::size_t i = 0; i < dataset.size(); ++i)
        if (!dataset[i].has_normals())
            throw std::invalid_argument("pretrain: cloud " + std::to_string(i) + " lacks normals");
    if (masked_count(mcfg.num_patches, cfg.mask_ratio) == 0)
        throw std::invalid_argument("pretrain: mask ratio leaves no masked patches");

    PretrainResult result{std::move(state), {}};
    auto& st = result.state;
    OptState opt = OptState::zeros_like(st);
    const AdamWParams hp{cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
    const std::size_t n = dataset.size();
    const std::size_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const double total_steps = static_cast<double>(steps_per_epoch * cfg.epochs);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = all_indices(n);
        std::mt19937_64 rng(derive_seed(cfg.seed, 0x4f52444552ULL, epoch));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        const double epoch_lr = lr_at(static_cast<double>(epoch * steps_per_epoch) / total_steps, cfg);
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const std::size_t begin = step * cfg.batch;
            const std::size_t end = std::min(n, begin + cfg.batch);
            const std::size_t bsz = end - begin;
            std::vector<LossGrad> results(bsz);
            std::vector<std::exception_ptr> errors(bsz);

            // Samples are independent given the read-only state; the reduction below
            // runs in a fixed order, so results do not depend on the thread count.
#pragma omp parallel for schedule(dynamic, 1) if (kernels::max_threads() > 1)
            for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(bsz); ++bi) {
                const auto b = static_cast<std::size_t>(bi);
                try {
                    const std::size_t idx = order[begin + b];
                    results[b] = loss_and_grad(st, training_sample(dataset[idx], cfg, mcfg, epoch, idx));
                } catch (...) {
                    errors[b] = std::current_exception();
                }
            }
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);

            Gradients grads = std::move(results[0].grads);
            for (std::size_t b = 0; b < bsz; ++b) {
                const double l = results[b].loss;
                if (!std::isfinite(l))
                    throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch + 1) + ", sample " +
                                             std::to_string(order[begin + b]));
                loss_sum += l;
                if (b == 0) continue;
                for (std::size_t t = 0; t < grads.size(); ++t) {
                    auto& dst = grads[t].data;
                    const auto& src = results[b].grads[t].data;
                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
                }
            }
            const double inv = 1.0 / static_cast<double>(bsz);
            double sq = 0.0;
            for (auto& gm : grads)
                for (auto& x : gm.data) {
                    x *= inv;
                    sq += x * x;
                }
            if (cfg.clip_norm > 0.0 && std::sqrt(sq) > cfg.clip_norm) {
                const double s = cfg.clip_norm / std::sqrt(sq);
                for (auto& gm : grads)
                    for (auto& x : gm.data) x *= s;
            }
            const double lr = lr_at(static_cast<double>(epoch * steps_per_epoch + step) / total_steps, cfg);
            adamw_step(st.tensors, grads, opt, lr, hp);
        }
        EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(n), epoch_lr};
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,mean_loss,lr\n";
    for (const auto& r : history) os << r.epoch << ',' << r.mean_loss << ',' << r.lr << '\n';
    return os.str();
}

double mean_predictor_baseline(const std::vector<PointCloud>& dataset, const TrainConfig& cfg,
                               const ModelConfig& mcfg, std::size_t epoch) {
    std::vector<Matrix> targets;
    targets.reserve(dataset.size());
    std::size_t rows = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        targets.push_back(training_sample(dataset[i], cfg, mcfg, epoch, i).targets);
        rows += targets.back().rows;
    }
    const std::size_t len = mcfg.pod_length();
    std::vector<double> mean(len, 0.0);
    for (const auto& t : targets)
        for (std::size_t r = 0; r < t.rows; ++r)
            for (std::size_t c = 0; c < len; ++c) mean[c] += t(r, c);
    for (auto& v : mean) v /= static_cast<double>(rows);
    double total = 0.0;
    for (const auto& t : targets) {
        Matrix pred(t.rows, len);
        for (std::size_t r = 0; r < t.rows; ++r) std::copy(mean.begin(), mean.end(), pred.row(r).begin());
        total += mpm_loss(pred, t);
    }
    return total / static_cast<double>(dataset.size());
}

double evaluate_epoch(const ModelState& state, const std::vector<PointCloud>& dataset, const TrainConfig& cfg,
                      std::size_t epoch) {
    std::vector<double> losses(dataset.size());
#pragma omp parallel for schedule(dynamic, 1) if (kernels::max_threads() > 1)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(dataset.size()); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        losses[i] = sample_loss(state, training_sample(dataset[i], cfg, state.config, epoch, i));
    }
    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(dataset.size());
}

std::string GradCheckReport::to_string() const {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific;
    for (const auto& e : entries)
        os << e.name << " checked=" << e.checked << " rel=" << e.worst_rel << " abs=" << e.worst_abs
           << " componentwise=" << e.worst_componentwise << '\n';
    os << "worst_rel=" << worst_rel << " tensor=" << worst_tensor << " worst_abs=" << worst_abs
       << " worst_componentwise=" << worst_componentwise << '\n';
    return os.str();
}

GradCheckReport grad_check(const ModelState& state, const PretrainSample& sample, std::uint64_t seed,
                           std::size_t per_tensor, double step) {
    const auto analytic = loss_and_grad(state, sample);
    ModelState probe = state;
    GradCheckReport report;
    std::mt19937_64 rng(derive_seed(seed, 0x4752414443ULL));
    for (std::size_t t = 0; t < probe.tensors.size(); ++t) {
        auto& values = probe.tensors[t].value.data;
        std::vector<std::size_t> coords = all_indices(values.size());
        if (coords.size() > per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(per_tensor);
        }
        GradCheckEntry e{probe.tensors[t].name, coords.size(), 0.0, 0.0, 0.0};
        double gmax = 0.0;
        for (auto c : coords) {
            const double orig = values[c];
            values[c] = orig + step;
            const double up = sample_loss(probe, sample);
            values[c] = orig - step;
            const double down = sample_loss(probe, sample);
            values[c] = orig;
            const double fd = (up - down) / (2.0 * step);
            const double g = analytic.grads[t].data[c];
            const double abs_err = std::abs(g - fd);
            gmax = std::max(gmax, std::abs(g));
            e.worst_abs = std::max(e.worst_abs, abs_err);
            e.worst_componentwise = std::max(e.worst_componentwise, abs_err / std::max(std::abs(g), 1e-8));
        }
        e.worst_rel = e.worst_abs / std::max(gmax, 1e-8);
        report.worst_componentwise = std::max(report.worst_componentwise, e.worst_componentwise);
        if (e.worst_rel >= report.worst_rel) {
            report.worst_rel = e.worst_rel;
            report.worst_tensor = e.name;
        }
        report.worst_abs = std::max(report.worst_abs, e.worst_abs);
        report.entries.push_back(std::move(e));
    }
    return report;
}

GradCheckReport grad_check(const ModelConfig& tiny, std::uint64_t seed) {
    if (tiny.d > 16 || tiny.num_patches > 6 || tiny.patch_size > 8 || tiny.grid > 3)
        throw std::invalid_argument("grad_check: requires the tiny preset (d<=16, N_p<=6, k<=8, G<=3)");
    const auto cloud = apply_rotation(generate_shape(ShapeKind::torus, tiny.num_points, seed), random_rotation(seed));
    const auto sample = make_sample(cloud, tiny, 60, seed);
    auto state = ModelState::init(tiny, seed);
    std::mt19937_64 rng(derive_seed(seed, 0x47435354ULL));
    for (auto& t : state.tensors) {
        const auto rows = static_cast<double>(t.value.rows);
        std::normal_distribution<double> gauss(0.0, t.value.rows > 1 ? 1.0 / std::sqrt(rows) : 0.3);
        for (auto& x : t.value.data) x = gauss(rng);
    }
    return grad_check(state, sample, seed);
}

}  // namespace masklrf
