#include "acmseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace acmseg {

using json = nlohmann::json;

void TrainConfig::validate() const {
    arch.validate();
    acm.validate();
    ssvm.validate();
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw std::invalid_argument("train: step size must be >= 0");
    if (!(C >= 0.0)) throw std::invalid_argument("train: C must be >= 0");
    if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
    if (checkpoint_every > 0 && checkpoint_path.empty()) {
        throw std::invalid_argument("train: checkpoint_every needs a checkpoint path");
    }
    if (!(radius_frac > 0.0 && radius_frac <= 0.5)) throw std::invalid_argument("train: radius_frac must be in (0, 0.5]");
}

std::string train_config_to_json(const TrainConfig& c) {
    json j;
    j["arch"] = json::parse(arch_to_json(c.arch));
    j["epochs"] = c.epochs;
    j["step_size"] = c.step_size;
    j["C"] = c.C;
    j["batch"] = c.batch;
    j["seed"] = c.seed;
    j["radius_frac"] = c.radius_frac;
    j["optimizer"] = c.optimizer == Optimizer::adam ? "adam" : "sgd";
    j["update_per_init"] = c.update_per_init;
    j["checkpoint_every"] = c.checkpoint_every;
    j["acm"] = {{"max_iters", c.acm.max_iters},   {"step_size", c.acm.step_size},
                {"backtracking", c.acm.backtracking}, {"converge_tol", c.acm.converge_tol},
                {"L", c.acm.L},                   {"resample_every", c.acm.resample_every},
                {"balloon_h", c.acm.balloon_h}};
    j["ssvm"] = {{"C", c.ssvm.C},
                 {"loss_scale", c.ssvm.loss_scale},
                 {"margin_rule", c.ssvm.margin_rule == MarginRule::hinge ? "hinge" : "literal"}};
    return j.dump();
}

std::string report_to_json(const TrainReport& r) {
    json j;
    j["epoch_hinge"] = r.epoch_hinge;
    j["epoch_train_iou"] = r.epoch_train_iou;
    j["epoch_violated"] = r.epoch_violated;
    j["epoch_seconds"] = r.epoch_seconds;
    j["test_iou"] = r.test_iou ? json(*r.test_iou) : json(nullptr);
    j["wall_seconds"] = r.wall_seconds;
    j["seed"] = r.seed;
    j["train_ids"] = r.train_ids;
    j["test_ids"] = r.test_ids;
    j["config"] = json::parse(r.config_json);
    return j.dump();
}

TrainReport report_from_json(const std::string& text) {
    const json j = json::parse(text);
    TrainReport r;
    r.epoch_hinge = j.at("epoch_hinge").get<std::vector<double>>();
    r.epoch_train_iou = j.at("epoch_train_iou").get<std::vector<double>>();
    r.epoch_violated = j.at("epoch_violated").get<std::vector<double>>();
    r.epoch_seconds = j.at("epoch_seconds").get<std::vector<double>>();
    if (!j.at("test_iou").is_null()) r.test_iou = j["test_iou"].get<double>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    r.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    r.config_json = j.at("config").dump();
    return r;
}

namespace {

void check_dataset(const std::vector<Sample>& ds, const ArchConfig& arch) {
    if (ds.empty()) throw std::invalid_argument("empty dataset");
    for (const auto& s : ds) {
        if (s.image.width != arch.input_size || s.image.height != arch.input_size) {
            throw std::invalid_argument(s.id + ": image size " + std::to_string(s.image.width) +
                                        " does not match model input " + std::to_string(arch.input_size));
        }
        if (s.gt_mask.count() == 0) throw std::invalid_argument(s.id + ": empty ground-truth mask");
    }
}

void apply_update(BackboneParams& params, const BackboneParams& data_grad, double data_scale, const TrainConfig& cfg,
                  OptimizerState& st) {
    const double eta = cfg.step_size;
    if (cfg.optimizer == Optimizer::sgd) {
        for (std::size_t t = 0; t < params.tensors.size(); ++t) {
            auto& w = params.tensors[t].data;
            const auto& g = data_grad.tensors[t].data;
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta * (w[i] + data_scale * g[i]);
        }
        return;
    }
    if (st.m.tensors.empty()) {
        st.m = BackboneParams::zeros(params.arch);
        st.v = BackboneParams::zeros(params.arch);
    }
    ++st.step;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    for (std::size_t t = 0; t < params.tensors.size(); ++t) {
        auto& w = params.tensors[t].data;
        auto& m = st.m.tensors[t].data;
        auto& v = st.v.tensors[t].data;
        const auto& g = data_grad.tensors[t].data;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = w[i] + data_scale * g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            w[i] -= eta * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
        }
    }
}

StepStats per_init_updates(BackboneParams& params, const Sample& s, const TrainConfig& cfg, OptimizerState& st) {
    StepStats stats;
    const BackboneParams snapshot = params;
    const ForwardResult fr = forward(snapshot, s.image);
    const Polygon gt = resample(s.gt_polygon, cfg.acm.L);
    const PriorMaps aug = fr.maps.with_kappa(augmented_kappa(fr.maps.kappa(), s.gt_mask, cfg.ssvm.loss_scale));
    const auto inits = init_polygons(fr.maps.width(), fr.maps.height(), cfg.radius_frac, cfg.acm.L);
    for (const auto& init : inits) {
        const Polygon y = evolve(init, aug, cfg.acm).final;
        const HingeTerms h = hinge_terms(gt, y, fr.maps, s.gt_mask);
        stats.hinge_sum += h.value();
        stats.iou_sum += 1.0 - h.delta;
        ++stats.samples;
        BackboneParams g = BackboneParams::zeros(params.arch);
        if (h.violated(cfg.ssvm.margin_rule)) {
            ++stats.violated;
            MapGrads v = energy_map_grads(gt, fr.maps);
            v -= energy_map_grads(y, fr.maps);
            g = backward(snapshot, *fr.cache, v);
        }
        apply_update(params, g, cfg.C, cfg, st);
    }
    return stats;
}

}  // namespace

StepStats train_step(BackboneParams& params, std::span<const Sample* const> batch, const TrainConfig& cfg,
                     OptimizerState& state, bool zero_subgradients) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    std::vector<const Sample*> order(batch.begin(), batch.end());
    std::stable_sort(order.begin(), order.end(), [](const Sample* a, const Sample* b) { return a->id < b->id; });

    if (cfg.update_per_init && !zero_subgradients) {
        StepStats total;
        for (const Sample* s : order) {
            const StepStats st = per_init_updates(params, *s, cfg, state);
            total.hinge_sum += st.hinge_sum / st.samples;
            total.iou_sum += st.iou_sum / st.samples;
            total.violated += st.violated > 0 ? 1 : 0;
            ++total.samples;
        }
        return total;
    }

    StepStats stats;
    BackboneParams sum = BackboneParams::zeros(params.arch);
    if (!zero_subgradients) {
        for (const Sample* s : order) {
            const ForwardResult fr = forward(params, s->image);
            const LossAugmentedResult la =
                loss_augmented_infer(fr.maps, s->gt_mask, cfg.acm, cfg.ssvm, cfg.radius_frac);
            const Polygon gt = resample(s->gt_polygon, cfg.acm.L);
            const HingeTerms h = hinge_terms(gt, la.poly, fr.maps, s->gt_mask);
            stats.hinge_sum += h.value();
            stats.iou_sum += 1.0 - h.delta;
            ++stats.samples;
            if (!h.violated(cfg.ssvm.margin_rule)) continue;
            ++stats.violated;
            MapGrads v = energy_map_grads(gt, fr.maps);
            v -= energy_map_grads(la.poly, fr.maps);
            sum.axpy(1.0, backward(params, *fr.cache, v));
        }
    }
    apply_update(params, sum, cfg.C / static_cast<double>(order.size()), cfg, state);
    if (!params.all_finite()) throw std::runtime_error("training diverged: non-finite weights");
    return stats;
}

TrainResult train(const std::vector<Sample>& dataset, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    return train(init_params(cfg.arch, cfg.seed), dataset, cfg, on_epoch);
}

TrainResult train(BackboneParams init, const std::vector<Sample>& dataset, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    if (!(init.arch == cfg.arch)) throw std::invalid_argument("train: initial params do not match the configured architecture");
    check_dataset(dataset, cfg.arch);
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();

    TrainResult out{std::move(init), {}};
    TrainReport& rep = out.report;
    rep.seed = cfg.seed;
    rep.config_json = train_config_to_json(cfg);
    for (const auto& s : dataset) rep.train_ids.push_back(s.id);

    std::vector<const Sample*> order;
    for (const auto& s : dataset) order.push_back(&s);
    std::sort(order.begin(), order.end(), [](const Sample* a, const Sample* b) { return a->id < b->id; });

    OptimizerState state;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto te = clock::now();
        std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(epoch), std::uint64_t{0xe70c}};
        std::mt19937_64 rng(seq);
        std::shuffle(order.begin(), order.end(), rng);

        StepStats acc;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch));
            const StepStats st = train_step(out.params, std::span<const Sample* const>(order.data() + b, e - b), cfg, state);
            acc.hinge_sum += st.hinge_sum;
            acc.iou_sum += st.iou_sum;
            acc.violated += st.violated;
            acc.samples += st.samples;
        }
        const double n = std::max(1, acc.samples);
        const double secs = std::chrono::duration<double>(clock::now() - te).count();
        rep.epoch_hinge.push_back(acc.hinge_sum / n);
        rep.epoch_train_iou.push_back(acc.iou_sum / n);
        rep.epoch_violated.push_back(acc.violated / n);
        rep.epoch_seconds.push_back(secs);
        rep.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        if (on_epoch) on_epoch({epoch, rep.epoch_hinge.back(), rep.epoch_train_iou.back(), rep.epoch_violated.back(), secs});
        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
            save_checkpoint(cfg.checkpoint_path, out.params, rep);
        }
    }
    rep.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    return out;
}

EvalResult evaluate(const BackboneParams& params, const std::vector<Sample>& dataset, const AcmOptions& opts,
                    double radius_frac) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    check_dataset(dataset, params.arch);
    EvalResult r;
    for (const auto& s : dataset) {
        const PriorMaps maps = predict(params, s.image);
        const auto cands = infer_multi(maps, opts, radius_frac);
        const Selection sel = select_best(cands, s.gt_mask);
        const auto center = iou(rasterize(cands[kCenterInit].poly, s.gt_mask.width, s.gt_mask.height), s.gt_mask);
        const auto unsup = iou(rasterize(cands[select_best_unsupervised(cands)].poly, s.gt_mask.width, s.gt_mask.height),
                               s.gt_mask);
        r.per_sample.push_back({s.id, sel.iou, sel.index, cands[sel.index].energy, center, unsup});
        r.mean_iou += sel.iou;
        r.mean_center_iou += center;
        r.mean_unsupervised_iou += unsup;
    }
    const double n = static_cast<double>(dataset.size());
    r.mean_iou /= n;
    r.mean_center_iou /= n;
    r.mean_unsupervised_iou /= n;
    return r;
}

void save_checkpoint(const std::string& path, const BackboneParams& params, const TrainReport& report) {
    write_checkpoint(path, params, json{{"report", json::parse(report_to_json(report))}}.dump());
}

LoadedModel load_checkpoint(const std::string& path, const std::optional<ArchConfig>& expected) {
    LoadedCheckpoint ck = read_checkpoint(path, expected);
    LoadedModel m{std::move(ck.params), std::nullopt};
    const json meta = json::parse(ck.meta_json);
    if (meta.is_object() && meta.contains("report")) {
        try {
            m.report = report_from_json(meta["report"].dump());
        } catch (const json::exception& e) {
            throw CheckpointError("corrupt checkpoint " + path + ": bad training report (" + e.what() + ")");
        }
    }
    return m;
}

}  // namespace acmseg
