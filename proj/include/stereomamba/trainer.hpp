// SPDX-License-Identifier: Apache-2.0
//
// Training/evaluation orchestration: the JSON-mirrored run configuration,
// deterministic dataset assembly, the AdamW training loop with per-epoch
// checkpoints, the frame evaluation loops (metric and warp protocols), and
// the three-variant ablation driver. Every random draw is keyed by
// (config seed, purpose tag, index), so reruns and resumed runs are bitwise
// reproducible.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stereomamba/checkpoint.hpp"
#include "stereomamba/data.hpp"
#include "stereomamba/metrics.hpp"
#include "stereomamba/model.hpp"
#include "stereomamba/optim.hpp"

namespace stereomamba {

// Purpose tags for seed derivation; frozen, since changing any of them
// changes every training trajectory.
namespace seed_tag {
inline constexpr uint64_t kModelInit = 1;
inline constexpr uint64_t kTrainSample = 2;
inline constexpr uint64_t kHeldoutSample = 3;
inline constexpr uint64_t kShuffle = 4;
inline constexpr uint64_t kAugment = 5;
}  // namespace seed_tag

struct SynthSpec {
    int64_t count = 300;     // training samples
    int64_t heldout = 30;    // evaluation samples (disjoint seed stream)
    int64_t height = 64;
    int64_t width = 128;
    int64_t d_max_gt = 16;   // largest ground-truth disparity the generator draws
    int64_t layers = 4;
};

// Channel/width knobs of the network, mirrored into the JSON config so desk
// runs can scale the model without recompiling.
struct ModelScale {
    int64_t c0 = 16, c1 = 16, c2 = 32, c3 = 64, c4 = 16;
    int64_t n_state = 8;
    int64_t blocks_per_stage = 2;
    int64_t ffn_expand = 2;
    int64_t fusion_up3 = 32, fusion_up2 = 32;
    int64_t n_groups = 8;
    int64_t agg_base = 8;
};

struct TrainConfig {
    uint64_t seed = 0;
    int64_t epochs = 30;
    int64_t batch_size = 4;
    double lr_max = 2e-4;
    std::string lr_schedule = "one_cycle";  // or "constant"
    double weight_decay = 1e-4;
    double beta1 = 0.9, beta2 = 0.999;
    int64_t d_max = 64;
    std::array<double, 4> loss_weights{0.5, 0.5, 0.7, 1.0};
    std::string backbone = "fe_mamba";  // or "plain_cnn"
    bool mff_enabled = true;
    std::string dataset_dir;  // empty -> synthesize per `synth`
    std::string eval_dir;     // empty -> synthesize the held-out set
    SynthSpec synth;
    int64_t crop_height = 64, crop_width = 128;
    ModelScale model;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
        if (!(lr_max > 0.0)) throw std::invalid_argument("config: lr_max must be positive");
        if (lr_schedule != "one_cycle" && lr_schedule != "constant")
            throw std::invalid_argument("config: lr_schedule must be one_cycle or constant, got " +
                                        lr_schedule);
        if (weight_decay < 0.0) throw std::invalid_argument("config: weight_decay must be >= 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw std::invalid_argument("config: betas must lie in [0, 1)");
        for (double w : loss_weights)
            if (w < 0.0) throw std::invalid_argument("config: loss weights must be nonnegative");
        if (backbone != "fe_mamba" && backbone != "plain_cnn")
            throw std::invalid_argument("config: backbone must be fe_mamba or plain_cnn, got " + backbone);
        if (dataset_dir.empty()) {
            if (synth.count < 1 || synth.heldout < 1)
                throw std::invalid_argument("config: synth counts must be >= 1");
        }
        model_config().validate();  // covers d_max, groups, widths
        if (crop_height < 16 || crop_width < 16 || crop_height % 16 != 0 || crop_width % 16 != 0)
            throw std::invalid_argument("config: crop dims must be positive multiples of 16");
    }

    ModelConfig model_config() const {
        ModelConfig mc;
        mc.backbone.c0 = model.c0;
        mc.backbone.c1 = model.c1;
        mc.backbone.c2 = model.c2;
        mc.backbone.c3 = model.c3;
        mc.backbone.c4 = model.c4;
        mc.backbone.n_state = model.n_state;
        mc.backbone.blocks_per_stage = model.blocks_per_stage;
        mc.backbone.ffn_expand = model.ffn_expand;
        mc.fusion.up3 = model.fusion_up3;
        mc.fusion.up2 = model.fusion_up2;
        mc.d_max = d_max;
        mc.n_groups = model.n_groups;
        mc.agg_base = model.agg_base;
        mc.use_scan = backbone == "fe_mamba";
        mc.mff_enabled = mff_enabled;
        return mc;
    }
};

namespace config_detail {

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known,
                           const std::string& where) {
    for (const auto& item : j.items())
        if (std::find(known.begin(), known.end(), item.key()) == known.end())
            throw std::invalid_argument("config: unknown key \"" + item.key() + "\" in " + where);
}

}  // namespace config_detail

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["lr_max"] = c.lr_max;
    j["lr_schedule"] = c.lr_schedule;
    j["weight_decay"] = c.weight_decay;
    j["betas"] = {c.beta1, c.beta2};
    j["d_max"] = c.d_max;
    j["loss_weights"] = c.loss_weights;
    j["backbone"] = c.backbone;
    j["mff_enabled"] = c.mff_enabled;
    j["dataset_dir"] = c.dataset_dir;
    j["eval_dir"] = c.eval_dir;
    j["synth"] = {{"count", c.synth.count},       {"heldout", c.synth.heldout},
                  {"height", c.synth.height},     {"width", c.synth.width},
                  {"d_max_gt", c.synth.d_max_gt}, {"layers", c.synth.layers}};
    j["crop_height"] = c.crop_height;
    j["crop_width"] = c.crop_width;
    j["model"] = {{"c0", c.model.c0},
                  {"c1", c.model.c1},
                  {"c2", c.model.c2},
                  {"c3", c.model.c3},
                  {"c4", c.model.c4},
                  {"n_state", c.model.n_state},
                  {"blocks_per_stage", c.model.blocks_per_stage},
                  {"ffn_expand", c.model.ffn_expand},
                  {"fusion_up3", c.model.fusion_up3},
                  {"fusion_up2", c.model.fusion_up2},
                  {"n_groups", c.model.n_groups},
                  {"agg_base", c.model.agg_base}};
    return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
    config_detail::reject_unknown(
        j,
        {"seed", "epochs", "batch_size", "lr_max", "lr_schedule", "weight_decay", "betas", "d_max",
         "loss_weights", "backbone", "mff_enabled", "dataset_dir", "eval_dir", "synth", "crop_height",
         "crop_width", "model"},
        "config");
    TrainConfig c;
    c.seed = j.value("seed", c.seed);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_max = j.value("lr_max", c.lr_max);
    c.lr_schedule = j.value("lr_schedule", c.lr_schedule);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("betas")) {
        const auto& b = j.at("betas");
        if (!b.is_array() || b.size() != 2)
            throw std::invalid_argument("config: betas must be a 2-element array");
        c.beta1 = b[0].get<double>();
        c.beta2 = b[1].get<double>();
    }
    c.d_max = j.value("d_max", c.d_max);
    if (j.contains("loss_weights")) {
        const auto& w = j.at("loss_weights");
        if (!w.is_array() || w.size() != 4)
            throw std::invalid_argument("config: loss_weights must be a 4-element array");
        for (size_t i = 0; i < 4; ++i) c.loss_weights[i] = w[i].get<double>();
    }
    c.backbone = j.value("backbone", c.backbone);
    c.mff_enabled = j.value("mff_enabled", c.mff_enabled);
    c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
    c.eval_dir = j.value("eval_dir", c.eval_dir);
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        config_detail::reject_unknown(s, {"count", "heldout", "height", "width", "d_max_gt", "layers"},
                                      "synth");
        c.synth.count = s.value("count", c.synth.count);
        c.synth.heldout = s.value("heldout", c.synth.heldout);
        c.synth.height = s.value("height", c.synth.height);
        c.synth.width = s.value("width", c.synth.width);
        c.synth.d_max_gt = s.value("d_max_gt", c.synth.d_max_gt);
        c.synth.layers = s.value("layers", c.synth.layers);
    }
    c.crop_height = j.value("crop_height", c.crop_height);
    c.crop_width = j.value("crop_width", c.crop_width);
    if (j.contains("model")) {
        const auto& m = j.at("model");
        config_detail::reject_unknown(m,
                                      {"c0", "c1", "c2", "c3", "c4", "n_state", "blocks_per_stage",
                                       "ffn_expand", "fusion_up3", "fusion_up2", "n_groups", "agg_base"},
                                      "model");
        c.model.c0 = m.value("c0", c.model.c0);
        c.model.c1 = m.value("c1", c.model.c1);
        c.model.c2 = m.value("c2", c.model.c2);
        c.model.c3 = m.value("c3", c.model.c3);
        c.model.c4 = m.value("c4", c.model.c4);
        c.model.n_state = m.value("n_state", c.model.n_state);
        c.model.blocks_per_stage = m.value("blocks_per_stage", c.model.blocks_per_stage);
        c.model.ffn_expand = m.value("ffn_expand", c.model.ffn_expand);
        c.model.fusion_up3 = m.value("fusion_up3", c.model.fusion_up3);
        c.model.fusion_up2 = m.value("fusion_up2", c.model.fusion_up2);
        c.model.n_groups = m.value("n_groups", c.model.n_groups);
        c.model.agg_base = m.value("agg_base", c.model.agg_base);
    }
    return c;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("config: cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config: parse error in " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

// Canonical fingerprint: FNV-1a over the sorted-key JSON dump, so two configs
// hash equal exactly when every field matches.
inline uint64_t config_fingerprint(const TrainConfig& c) { return fnv1a64(to_json(c).dump()); }

// ---------------------------------------------------------------------------
// Dataset assembly

inline std::vector<StereoSample> build_training_set(const TrainConfig& cfg) {
    std::vector<StereoSample> out;
    if (!cfg.dataset_dir.empty()) {
        for (const std::string& stem : list_sample_stems(cfg.dataset_dir))
            out.push_back(load_sample(cfg.dataset_dir, stem));
        if (out.empty()) throw std::invalid_argument("dataset: no samples in " + cfg.dataset_dir);
        return out;
    }
    out.reserve(static_cast<size_t>(cfg.synth.count));
    for (int64_t i = 0; i < cfg.synth.count; ++i)
        out.push_back(synth_stereogram(derive_seed(cfg.seed, seed_tag::kTrainSample, uint64_t(i)),
                                       cfg.synth.height, cfg.synth.width, cfg.synth.d_max_gt,
                                       cfg.synth.layers));
    return out;
}

inline std::vector<StereoSample> build_heldout_set(const TrainConfig& cfg) {
    std::vector<StereoSample> out;
    if (!cfg.eval_dir.empty()) {
        for (const std::string& stem : list_sample_stems(cfg.eval_dir))
            out.push_back(load_sample(cfg.eval_dir, stem));
        if (out.empty()) throw std::invalid_argument("dataset: no samples in " + cfg.eval_dir);
        return out;
    }
    out.reserve(static_cast<size_t>(cfg.synth.heldout));
    for (int64_t i = 0; i < cfg.synth.heldout; ++i)
        out.push_back(synth_stereogram(derive_seed(cfg.seed, seed_tag::kHeldoutSample, uint64_t(i)),
                                       cfg.synth.height, cfg.synth.width, cfg.synth.d_max_gt,
                                       cfg.synth.layers));
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct EpochStat {
    int64_t epoch = 0;       // 1-based
    double mean_loss = 0.0;  // per-sample mean over the epoch
    double lr_last = 0.0;    // learning rate of the epoch's final step
};

inline std::string loss_csv(const std::vector<EpochStat>& history) {
    std::string out = "epoch,loss,lr\n";
    for (const EpochStat& s : history)
        out += std::to_string(s.epoch) + "," + metrics_detail::g17(s.mean_loss) + "," +
               metrics_detail::g17(s.lr_last) + "\n";
    return out;
}

namespace ckpt_detail {

inline const Tensor& fetch_entry(const std::unordered_map<std::string, const Tensor*>& by_name,
                                 const std::string& name, const Shape& shape) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: missing entry " + name);
    if (it->second->shape() != shape)
        throw std::runtime_error("checkpoint: shape mismatch for " + name);
    return *it->second;
}

}  // namespace ckpt_detail

// Loads model parameters and the training-time channel stats out of a
// checkpoint. Optimizer state in the file is ignored, so this is the path for
// inference/evaluation; Trainer::restore additionally recovers the moments.
inline ChannelStats restore_model(StereoModel& model, const CheckpointData& ckpt) {
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : ckpt.entries) by_name[name] = &t;
    for (Parameter* p : model.params().all())
        p->value = ckpt_detail::fetch_entry(by_name, p->name, p->value.shape()).clone();
    const Tensor& mean = ckpt_detail::fetch_entry(by_name, "stats.mean", {3});
    const Tensor& stdev = ckpt_detail::fetch_entry(by_name, "stats.stdev", {3});
    ChannelStats stats;
    for (int64_t c = 0; c < 3; ++c) {
        stats.mean[static_cast<size_t>(c)] = mean[c];
        stats.stdev[static_cast<size_t>(c)] = stdev[c];
    }
    return stats;
}

class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg)
        : cfg_(cfg),
          model_(cfg.model_config(), derive_seed(cfg.seed, seed_tag::kModelInit)),
          opt_(model_.params(), cfg.beta1, cfg.beta2, cfg.weight_decay) {
        cfg_.validate();
        data_ = build_training_set(cfg_);
        stats_ = compute_stats(data_);
        steps_per_epoch_ =
            (static_cast<int64_t>(data_.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
        total_steps_ = steps_per_epoch_ * cfg_.epochs;
    }

    const TrainConfig& config() const { return cfg_; }
    StereoModel& model() { return model_; }
    const StereoModel& model() const { return model_; }
    const ChannelStats& stats() const { return stats_; }
    int64_t epochs_done() const { return opt_.step_count() / steps_per_epoch_; }

    // Runs epochs [epochs_done, min(stop_after, cfg.epochs)) and returns one
    // stat row per epoch run. Checkpoints after every epoch when out_dir is
    // nonempty.
    std::vector<EpochStat> run(const std::filesystem::path& out_dir = {}, int64_t stop_after = -1) {
        const int64_t last_epoch = stop_after < 0 ? cfg_.epochs : std::min(stop_after, cfg_.epochs);
        if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
        std::vector<EpochStat> history;
        for (int64_t epoch = epochs_done(); epoch < last_epoch; ++epoch) {
            EpochStat stat = run_epoch(epoch);
            history.push_back(stat);
            if (!out_dir.empty()) save_checkpoint(out_dir / "checkpoint.bin", checkpoint_data());
        }
        return history;
    }

    CheckpointData checkpoint_data() {
        CheckpointData d;
        d.step = opt_.step_count();
        d.config_fingerprint = config_fingerprint(cfg_);
        for (Parameter* p : model_.params().all()) d.entries.emplace_back(p->name, p->value.clone());
        auto params = model_.params().all();
        for (size_t i = 0; i < params.size(); ++i) {
            d.entries.emplace_back("opt.m." + params[i]->name, opt_.first_moments()[i].clone());
            d.entries.emplace_back("opt.v." + params[i]->name, opt_.second_moments()[i].clone());
        }
        Tensor mean({3}), stdev({3});
        for (int64_t c = 0; c < 3; ++c) {
            mean[c] = stats_.mean[static_cast<size_t>(c)];
            stdev[c] = stats_.stdev[static_cast<size_t>(c)];
        }
        d.entries.emplace_back("stats.mean", std::move(mean));
        d.entries.emplace_back("stats.stdev", std::move(stdev));
        return d;
    }

    void restore(const CheckpointData& ckpt) {
        if (ckpt.config_fingerprint != config_fingerprint(cfg_))
            throw std::runtime_error("checkpoint was written by a different config (fingerprint mismatch)");
        stats_ = restore_model(model_, ckpt);
        std::unordered_map<std::string, const Tensor*> by_name;
        for (const auto& [name, t] : ckpt.entries) by_name[name] = &t;
        auto params = model_.params().all();
        for (size_t i = 0; i < params.size(); ++i) {
            opt_.first_moments()[i] =
                ckpt_detail::fetch_entry(by_name, "opt.m." + params[i]->name, params[i]->value.shape())
                    .clone();
            opt_.second_moments()[i] =
                ckpt_detail::fetch_entry(by_name, "opt.v." + params[i]->name, params[i]->value.shape())
                    .clone();
        }
        opt_.set_step_count(ckpt.step);
    }

private:
    double lr_for_step(int64_t step) const {
        if (cfg_.lr_schedule == "constant") return cfg_.lr_max;
        return one_cycle_lr(step, total_steps_, cfg_.lr_max);
    }

    EpochStat run_epoch(int64_t epoch) {
        // deterministic shuffle keyed by (seed, epoch) only
        std::vector<int64_t> order(data_.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
        Rng shuffle_rng(derive_seed(cfg_.seed, seed_tag::kShuffle, uint64_t(epoch)));
        for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);

        double loss_sum = 0.0;
        int64_t loss_n = 0;
        double lr_last = 0.0;
        for (int64_t b = 0; b < steps_per_epoch_; ++b) {
            const int64_t lo = b * cfg_.batch_size;
            const int64_t hi = std::min<int64_t>(lo + cfg_.batch_size, int64_t(order.size()));
            Tape t;
            NodeId sum = -1;
            for (int64_t k = lo; k < hi; ++k) {
                const int64_t idx = order[static_cast<size_t>(k)];
                Rng aug_rng(derive_seed(derive_seed(cfg_.seed, seed_tag::kAugment, uint64_t(epoch)),
                                        seed_tag::kAugment, uint64_t(idx)));
                StereoSample s = augment(data_[static_cast<size_t>(idx)], cfg_.crop_height,
                                         cfg_.crop_width, stats_, aug_rng);
                NodeId l = t.constant(s.left);
                NodeId r = t.constant(s.right);
                std::vector<NodeId> maps = model_.forward(t, l, r, true);
                Tensor smask = supervision_mask(s.gt_disparity, cfg_.d_max);
                for (int64_t i = 0; i < smask.size(); ++i)
                    if (s.valid_mask[i] == 0.0) smask[i] = 0.0;
                NodeId loss = stereo_loss(t, maps, s.gt_disparity, smask, cfg_.loss_weights);
                sum = (k == lo) ? loss : ops::add(t, sum, loss);
            }
            NodeId mean = ops::scale(t, sum, 1.0 / static_cast<double>(hi - lo));
            t.backward(mean);
            const double lr = lr_for_step(opt_.step_count());
            opt_.step(t, lr);
            lr_last = lr;
            loss_sum += t.value(mean)[0] * static_cast<double>(hi - lo);
            loss_n += hi - lo;
        }
        return EpochStat{epoch + 1, loss_sum / static_cast<double>(loss_n), lr_last};
    }

    TrainConfig cfg_;
    StereoModel model_;
    AdamW opt_;
    std::vector<StereoSample> data_;
    ChannelStats stats_;
    int64_t steps_per_epoch_ = 0;
    int64_t total_steps_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation loops

inline int worker_count() {
    if (const char* s = std::getenv("STEREOMAMBA_THREADS")) {
        const int v = std::atoi(s);
        if (v >= 1) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

// Frames whose ground truth covers less than this fraction of pixels are
// dropped from evaluation reports.
inline constexpr double kMinValidFraction = 0.10;

struct EvalResult {
    std::vector<FrameMetrics> rows;
    int64_t skipped = 0;
};

// Evaluates every sufficiently labelled frame; with_warp additionally scores
// the predicted-disparity warp against the captured right view over
// warp-valid ∧ right-coverage pixels. Frames run in parallel (worker cap via
// STEREOMAMBA_THREADS); aggregation order is the dataset order.
inline EvalResult evaluate_frames(const StereoModel& model, const ChannelStats& stats,
                                  const std::vector<StereoSample>& set,
                                  const std::vector<std::string>& names, bool with_warp) {
    if (!names.empty() && names.size() != set.size())
        throw std::invalid_argument("evaluate: name list does not match the sample count");
    std::vector<std::optional<FrameMetrics>> slots(set.size());
    std::vector<char> skipped(set.size(), 0);

    auto eval_one = [&](size_t i) {
        const StereoSample& s = set[i];
        double frac = 0.0;
        for (int64_t p = 0; p < s.valid_mask.size(); ++p) frac += s.valid_mask[p];
        frac /= static_cast<double>(s.valid_mask.size());
        if (frac < kMinValidFraction) {
            skipped[i] = 1;
            return;
        }
        Tensor pred = predict_disparity(model, normalize_channels(s.left, stats),
                                        normalize_channels(s.right, stats));
        FrameMetrics fm;
        fm.frame = names.empty() ? "frame-" + std::to_string(i) : names[i];
        fm.rep = disparity_metrics(pred, s.gt_disparity, s.valid_mask, s.calib);
        if (with_warp) {
            WarpResult wr = warp_synthesize(s.left, pred);
            Tensor hint = right_coverage(s.gt_disparity, s.valid_mask);
            for (int64_t p = 0; p < hint.size(); ++p)
                if (wr.warp_valid[p] == 0.0) hint[p] = 0.0;
            try {
                fm.rep.ssim = ssim(wr.right_synth, s.right, &hint);
                fm.rep.psnr_db = psnr(wr.right_synth, s.right, &hint);
            } catch (const std::invalid_argument&) {
                // no fully valid window / no valid pixel: leave the fields n/a
            }
        }
        slots[i] = std::move(fm);
    };

    const int workers = std::min<int>(worker_count(), static_cast<int>(set.size()));
    if (workers <= 1) {
        for (size_t i = 0; i < set.size(); ++i) eval_one(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(workers));
        for (int wk = 0; wk < workers; ++wk)
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < set.size(); i = next.fetch_add(1)) eval_one(i);
            });
        for (std::thread& th : pool) th.join();
    }

    EvalResult out;
    for (size_t i = 0; i < set.size(); ++i) {
        if (slots[i]) out.rows.push_back(std::move(*slots[i]));
        out.skipped += skipped[i];
    }
    return out;
}

// Mean SSIM/PSNR of warping with the GROUND-TRUTH disparity — the reference
// level the predicted warp is compared against.
inline std::pair<double, double> warp_reference(const std::vector<StereoSample>& set) {
    double ssim_sum = 0.0, psnr_sum = 0.0;
    int64_t n = 0;
    for (const StereoSample& s : set) {
        WarpResult wr = warp_synthesize(s.left, s.gt_disparity);
        Tensor hint = right_coverage(s.gt_disparity, s.valid_mask);
        for (int64_t p = 0; p < hint.size(); ++p)
            if (wr.warp_valid[p] == 0.0) hint[p] = 0.0;
        try {
            ssim_sum += ssim(wr.right_synth, s.right, &hint);
            psnr_sum += psnr(wr.right_synth, s.right, &hint);
            ++n;
        } catch (const std::invalid_argument&) {
        }
    }
    if (n == 0) throw std::invalid_argument("warp reference: no scorable frames");
    return {ssim_sum / static_cast<double>(n), psnr_sum / static_cast<double>(n)};
}

// ---------------------------------------------------------------------------
// Ablation driver: three variants sharing seed and data.

struct AblationRow {
    std::string variant;
    MetricReport heldout;
    double final_loss = 0.0;
};

inline std::vector<TrainConfig> ablation_variants(const TrainConfig& base) {
    TrainConfig plain = base;
    plain.backbone = "plain_cnn";
    plain.mff_enabled = true;
    TrainConfig no_mff = base;
    no_mff.backbone = "fe_mamba";
    no_mff.mff_enabled = false;
    TrainConfig full = base;
    full.backbone = "fe_mamba";
    full.mff_enabled = true;
    return {plain, no_mff, full};
}

inline std::string ablation_variant_name(const TrainConfig& c) {
    if (c.backbone == "plain_cnn") return "plain_cnn";
    return c.mff_enabled ? "fe_mamba+mff" : "fe_mamba-no-mff";
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "variant,epe,bad2,bad3,bad5,final_loss\n";
    for (const AblationRow& r : rows)
        out += r.variant + "," + metrics_detail::g17(r.heldout.epe_px) + "," +
               metrics_detail::g17(r.heldout.bad2_pct) + "," + metrics_detail::g17(r.heldout.bad3_pct) +
               "," + metrics_detail::g17(r.heldout.bad5_pct) + "," + metrics_detail::g17(r.final_loss) +
               "\n";
    return out;
}

// Trains every variant from scratch on the shared data/seed and scores each
// on the shared held-out set. Mean metrics come from the evaluation rows.
inline std::vector<AblationRow> ablation_run(const TrainConfig& base) {
    std::vector<AblationRow> rows;
    const std::vector<StereoSample> held = build_heldout_set(base);
    for (const TrainConfig& variant : ablation_variants(base)) {
        variant.validate();
        Trainer tr(variant);
        std::vector<EpochStat> hist = tr.run();
        EvalResult ev = evaluate_frames(tr.model(), tr.stats(), held, {}, false);
        if (ev.rows.empty()) throw std::runtime_error("ablation: every held-out frame was skipped");
        AblationRow row;
        row.variant = ablation_variant_name(variant);
        for (const FrameMetrics& fm : ev.rows) {
            row.heldout.epe_px += fm.rep.epe_px;
            row.heldout.bad2_pct += fm.rep.bad2_pct;
            row.heldout.bad3_pct += fm.rep.bad3_pct;
            row.heldout.bad5_pct += fm.rep.bad5_pct;
            row.heldout.depth_mae_mm += fm.rep.depth_mae_mm;
            row.heldout.valid_count += fm.rep.valid_count;
        }
        const double n = static_cast<double>(ev.rows.size());
        row.heldout.epe_px /= n;
        row.heldout.bad2_pct /= n;
        row.heldout.bad3_pct /= n;
        row.heldout.bad5_pct /= n;
        row.heldout.depth_mae_mm /= n;
        row.final_loss = hist.empty() ? 0.0 : hist.back().mean_loss;
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace stereomamba
