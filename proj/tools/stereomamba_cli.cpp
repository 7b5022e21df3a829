// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface of the pipeline. Subcommands:
//   synth          write a synthetic rectified stereo dataset to disk
//   train          fit a model from a JSON config; checkpoints + loss CSV
//   infer          left/right PPM pair -> disparity PFM (+ color PPM)
//   eval           score predictions against ground truth -> metric CSV
//   warp-eval      ground-truth-free scoring: warp left by the predicted
//                  disparity and compare against the captured right view
//   duality-check  scan-vs-materialization equivalence suite
//   bench          scan vs quadratic timings with the equality assertion
//   ablation       train the three backbone/fusion variants and tabulate
//
// Exit codes: 0 success, 2 bad usage or invalid configuration, 1 runtime
// failure. STEREOMAMBA_THREADS caps evaluation workers.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stereomamba/trainer.hpp"

namespace {

using namespace stereomamba;
namespace fs = std::filesystem;

std::string stem_name(int64_t i) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%06lld", static_cast<long long>(i));
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    f << text;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
    std::string out;
    uint64_t seed = 0;
    SynthSpec spec;
};

int cmd_synth(const SynthOpts& o) {
    fs::create_directories(o.out);
    for (int64_t i = 0; i < o.spec.count; ++i)
        save_sample(o.out, stem_name(i),
                    synth_stereogram(derive_seed(o.seed, seed_tag::kTrainSample, uint64_t(i)),
                                     o.spec.height, o.spec.width, o.spec.d_max_gt, o.spec.layers));
    std::printf("wrote %lld samples (%lldx%lld, d_gt <= %lld) to %s\n",
                static_cast<long long>(o.spec.count), static_cast<long long>(o.spec.height),
                static_cast<long long>(o.spec.width), static_cast<long long>(o.spec.d_max_gt),
                o.out.c_str());
    if (o.spec.heldout > 0) {
        const fs::path held = fs::path(o.out) / "heldout";
        fs::create_directories(held);
        for (int64_t i = 0; i < o.spec.heldout; ++i)
            save_sample(held, stem_name(i),
                        synth_stereogram(derive_seed(o.seed, seed_tag::kHeldoutSample, uint64_t(i)),
                                         o.spec.height, o.spec.width, o.spec.d_max_gt, o.spec.layers));
        std::printf("wrote %lld held-out samples to %s\n", static_cast<long long>(o.spec.heldout),
                    held.string().c_str());
    }
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
    std::string config;
    std::string out;
    std::string resume;
    int64_t stop_after = -1;  // stop after this many total epochs (testing hook)
};

int cmd_train(const TrainOpts& o) {
    const TrainConfig cfg = load_config(o.config);
    Trainer tr(cfg);
    if (!o.resume.empty()) tr.restore(load_checkpoint(o.resume));

    int64_t param_count = 0;
    for (const Parameter* p : tr.model().params().all()) param_count += p->value.size();
    const int64_t last = o.stop_after > 0 ? std::min(o.stop_after, cfg.epochs) : cfg.epochs;
    std::printf("training: %lld parameters, epochs %lld..%lld of %lld, batch %lld\n",
                static_cast<long long>(param_count), static_cast<long long>(tr.epochs_done() + 1),
                static_cast<long long>(last), static_cast<long long>(cfg.epochs),
                static_cast<long long>(cfg.batch_size));

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<EpochStat> history;
    for (int64_t e = tr.epochs_done(); e < last; ++e) {
        std::vector<EpochStat> part = tr.run(o.out, e + 1);  // one epoch, then checkpoint
        history.insert(history.end(), part.begin(), part.end());
        const EpochStat& s = history.back();
        std::printf("epoch %lld/%lld  loss %.6f  lr %.6g  (%.1f s)\n",
                    static_cast<long long>(s.epoch), static_cast<long long>(cfg.epochs), s.mean_loss,
                    s.lr_last, seconds_since(t0));
        std::fflush(stdout);
    }
    if (!o.out.empty()) {
        write_text(fs::path(o.out) / "loss.csv", loss_csv(history));
        write_text(fs::path(o.out) / "config.json", to_json(cfg).dump(2) + "\n");
    }
    std::printf("done: %zu epochs in %.1f s; artifacts in %s\n", history.size(), seconds_since(t0),
                o.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// infer

// Untrained weights when no checkpoint is given (contract smoke runs).
struct LoadedModel {
    StereoModel model;
    ChannelStats stats;
};

LoadedModel make_model(const TrainConfig& cfg, const std::string& ckpt_path) {
    LoadedModel lm{StereoModel(cfg.model_config(), derive_seed(cfg.seed, seed_tag::kModelInit)),
                   ChannelStats{}};
    if (!ckpt_path.empty()) {
        CheckpointData d = load_checkpoint(ckpt_path);
        if (d.config_fingerprint != config_fingerprint(cfg))
            throw std::runtime_error(
                "checkpoint was written by a different config (fingerprint mismatch)");
        lm.stats = restore_model(lm.model, d);
    }
    return lm;
}

// Disparity in [0, d_max) to a blue->green->red ramp.
Tensor colorize_disparity(const Tensor& d, int64_t d_max) {
    const int64_t h = d.dim(0), w = d.dim(1);
    Tensor img({3, h, w});
    auto band = [](double v, double center) {
        return std::clamp(1.5 - std::abs(4.0 * v - center), 0.0, 1.0);
    };
    for (int64_t i = 0; i < h * w; ++i) {
        const double v = std::clamp(d[i] / static_cast<double>(d_max), 0.0, 1.0);
        img[0 * h * w + i] = band(v, 3.0);
        img[1 * h * w + i] = band(v, 2.0);
        img[2 * h * w + i] = band(v, 1.0);
    }
    return img;
}

struct InferOpts {
    std::string config;
    std::string checkpoint;
    std::string left, right;
    std::string out_pfm;
    std::string out_ppm;
};

int cmd_infer(const InferOpts& o) {
    const TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_config(o.config);
    const Tensor left = read_ppm(o.left);
    const Tensor right = read_ppm(o.right);
    if (left.shape() != right.shape())
        throw std::invalid_argument("infer: left " + shape_str(left.shape()) + " vs right " +
                                    shape_str(right.shape()));
    if (left.dim(1) % 16 != 0 || left.dim(2) % 16 != 0)
        throw std::invalid_argument("infer: image dims must be multiples of 16, got " +
                                    shape_str(left.shape()));
    if (o.checkpoint.empty())
        std::fprintf(stderr, "note: no --checkpoint given, running untrained weights\n");
    LoadedModel lm = make_model(cfg, o.checkpoint);
    const Tensor pred = predict_disparity(lm.model, normalize_channels(left, lm.stats),
                                          normalize_channels(right, lm.stats));
    write_pfm(o.out_pfm, pred);
    if (!o.out_ppm.empty()) write_ppm(o.out_ppm, colorize_disparity(pred, cfg.d_max));
    double lo = pred[0], hi = pred[0];
    for (int64_t i = 0; i < pred.size(); ++i) {
        lo = std::min(lo, pred[i]);
        hi = std::max(hi, pred[i]);
    }
    std::printf("disparity %lldx%lld in [%.3f, %.3f] -> %s\n", static_cast<long long>(pred.dim(0)),
                static_cast<long long>(pred.dim(1)), lo, hi, o.out_pfm.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// eval / warp-eval

struct EvalOpts {
    std::string data;
    std::string pred;  // directory of <stem>.pfm predictions …
    std::string config;
    std::string checkpoint;  // … or a model to predict with
    std::string out;
};

std::vector<StereoSample> load_dataset(const std::string& dir, std::vector<std::string>& stems) {
    stems = list_sample_stems(dir);
    if (stems.empty()) throw std::invalid_argument("eval: no samples in " + dir);
    std::vector<StereoSample> set;
    set.reserve(stems.size());
    for (const std::string& stem : stems) set.push_back(load_sample(dir, stem));
    return set;
}

// File-based prediction scoring; mirrors evaluate_frames' skip rule.
EvalResult eval_pred_dir(const std::vector<StereoSample>& set, const std::vector<std::string>& stems,
                         const std::string& pred_dir, bool with_warp) {
    EvalResult out;
    for (size_t i = 0; i < set.size(); ++i) {
        const StereoSample& s = set[i];
        double frac = 0.0;
        for (int64_t p = 0; p < s.valid_mask.size(); ++p) frac += s.valid_mask[p];
        if (frac / static_cast<double>(s.valid_mask.size()) < kMinValidFraction) {
            ++out.skipped;
            continue;
        }
        const Tensor pred = read_pfm(fs::path(pred_dir) / (stems[i] + ".pfm"));
        if (pred.shape() != s.gt_disparity.shape())
            throw std::invalid_argument("eval: prediction " + stems[i] + " is " +
                                        shape_str(pred.shape()) + ", ground truth is " +
                                        shape_str(s.gt_disparity.shape()));
        FrameMetrics fm;
        fm.frame = stems[i];
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
                // no scorable window: leave the columns n/a
            }
        }
        out.rows.push_back(std::move(fm));
    }
    return out;
}

int cmd_eval(const EvalOpts& o, bool with_warp) {
    const bool have_pred = !o.pred.empty();
    const bool have_model = !o.checkpoint.empty();
    if (have_pred == have_model)
        throw std::invalid_argument(
            "eval: give either --pred or --config/--checkpoint, and not both");
    if (have_model && o.config.empty())
        throw std::invalid_argument("eval: --checkpoint needs the --config it was trained with");

    std::vector<std::string> stems;
    const std::vector<StereoSample> set = load_dataset(o.data, stems);
    EvalResult ev;
    if (have_model) {
        LoadedModel lm = make_model(load_config(o.config), o.checkpoint);
        ev = evaluate_frames(lm.model, lm.stats, set, stems, with_warp);
    } else {
        ev = eval_pred_dir(set, stems, o.pred, with_warp);
    }
    if (ev.rows.empty()) throw std::runtime_error("eval: every frame was under-labelled, nothing scored");

    if (!o.out.empty()) write_metrics_csv(o.out, ev.rows);
    std::printf("%zu frames (%lld skipped under-labelled): %s\n", ev.rows.size(),
                static_cast<long long>(ev.skipped), metric_summary_line(mean_report(ev.rows)).c_str());
    if (with_warp) {
        auto [gt_ssim, gt_psnr] = warp_reference(set);
        const MetricReport agg = mean_report(ev.rows);
        if (agg.ssim && agg.psnr_db)
            std::printf("predicted warp: SSIM %.4f | PSNR %.2f dB\n", *agg.ssim, *agg.psnr_db);
        std::printf("gt-disparity warp: SSIM %.4f | PSNR %.2f dB\n", gt_ssim, gt_psnr);
        if (agg.ssim) std::printf("ssim gap (gt - predicted): %.4f\n", gt_ssim - *agg.ssim);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// duality-check

struct DualityOpts {
    int64_t seeds = 100;
    int64_t t_max = 64;
    int64_t n_max = 16;
    uint64_t seed = 0;
};

int cmd_duality(const DualityOpts& o) {
    double worst_quad = 0.0, worst_attn = 0.0;
    for (int64_t s = 0; s < o.seeds; ++s) {
        Rng rng(derive_seed(o.seed, 9001, uint64_t(s)));
        const int64_t T = rng.uniform_int(1, o.t_max);
        const int64_t N = rng.uniform_int(1, o.n_max);
        Tensor a({T});
        for (int64_t t = 0; t < T; ++t) a[t] = rng.uniform(0.2, 0.98);
        const Tensor b = rng.uniform_tensor({T, N}, -1.0, 1.0);
        const Tensor c = rng.uniform_tensor({T, N}, -1.0, 1.0);
        const Tensor x = rng.uniform_tensor({1, T}, -1.0, 1.0);
        worst_quad = std::max(worst_quad, max_abs_diff(ssm_scan_forward(a, b, c, x),
                                                       ssm_scan_quadratic(a, b, c, x)));

        // unit decay: the scan must equal causal linear attention with Q=C, K=B
        const Tensor ones = Tensor::ones({T});
        const Tensor att = masked_linear_attention(c, b, x.reshaped({T, 1}));
        worst_attn = std::max(worst_attn, max_abs_diff(ssm_scan_forward(ones, b, c, x),
                                                       att.reshaped({1, T})));
    }
    const bool ok_quad = worst_quad < 1e-10, ok_attn = worst_attn < 1e-12;
    std::printf("%lld sequences, T <= %lld, N <= %lld\n", static_cast<long long>(o.seeds),
                static_cast<long long>(o.t_max), static_cast<long long>(o.n_max));
    std::printf("scan vs materialized quadratic: max |diff| %.3g (tol 1e-10) %s\n", worst_quad,
                ok_quad ? "PASS" : "FAIL");
    std::printf("unit-decay scan vs masked attention: max |diff| %.3g (tol 1e-12) %s\n", worst_attn,
                ok_attn ? "PASS" : "FAIL");
    return ok_quad && ok_attn ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOpts {
    int64_t t_max = 4096;
    int64_t n_state = 8;
    uint64_t seed = 0;
    std::string out;
};

int cmd_bench(const BenchOpts& o) {
    const std::vector<ScanBenchRow> rows = scan_bench(o.n_state, o.t_max, o.seed);
    std::string report = "scan vs quadratic materialization, n_state " + std::to_string(o.n_state) +
                         ", seed " + std::to_string(o.seed) + "\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %12s %14s %12s %14s %6s\n", "T", "linear_ms",
                  "quadratic_ms", "quad/lin", "max_abs_diff", "equal");
    report += line;
    bool all_equal = true;
    for (const ScanBenchRow& r : rows) {
        const bool eq = r.max_diff < 1e-10;
        all_equal = all_equal && eq;
        std::snprintf(line, sizeof line, "%-8lld %12.3f %14.3f %12.1f %14.3g %6s\n",
                      static_cast<long long>(r.t), r.linear_ms, r.quadratic_ms,
                      r.quadratic_ms / std::max(r.linear_ms, 1e-9), r.max_diff, eq ? "yes" : "NO");
        report += line;
    }
    report += all_equal ? "equality: PASS (every T within 1e-10)\n" : "equality: FAIL\n";
    std::fputs(report.c_str(), stdout);
    if (!o.out.empty()) write_text(o.out, report);
    return all_equal ? 0 : 1;
}

// ---------------------------------------------------------------------------
// ablation

struct AblationOpts {
    std::string config;
    std::string out;
};

int cmd_ablation(const AblationOpts& o) {
    const TrainConfig cfg = load_config(o.config);
    const std::vector<AblationRow> rows = ablation_run(cfg);
    for (const AblationRow& r : rows)
        std::printf("%-16s EPE %.4f | Bad2 %.2f%% | Bad3 %.2f%% | Bad5 %.2f%% | final loss %.4f\n",
                    r.variant.c_str(), r.heldout.epe_px, r.heldout.bad2_pct, r.heldout.bad3_pct,
                    r.heldout.bad5_pct, r.final_loss);
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        write_text(fs::path(o.out) / "ablation.csv", ablation_csv(rows));
        std::printf("report: %s\n", (fs::path(o.out) / "ablation.csv").string().c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stereo disparity estimation: selective-scan features, group-wise correlation "
                 "volume, 3D aggregation, soft-argmin regression"};
    app.require_subcommand(1);

    SynthOpts so;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic stereo dataset");
    synth->add_option("--out", so.out, "Output directory")->required();
    synth->add_option("--seed", so.seed, "Base RNG seed");
    synth->add_option("--count", so.spec.count, "Training sample count");
    synth->add_option("--heldout", so.spec.heldout, "Held-out sample count (under <out>/heldout)");
    synth->add_option("--height", so.spec.height, "Image height");
    synth->add_option("--width", so.spec.width, "Image width");
    synth->add_option("--d-max-gt", so.spec.d_max_gt, "Largest generated disparity");
    synth->add_option("--layers", so.spec.layers, "Depth layers per scene");

    TrainOpts to;
    CLI::App* train = app.add_subcommand("train", "Train a model from a JSON config");
    train->add_option("--config", to.config, "JSON run configuration")->required();
    train->add_option("--out", to.out, "Artifact directory (checkpoint.bin, loss.csv)")->required();
    train->add_option("--resume", to.resume, "Checkpoint to continue from");
    train->add_option("--stop-after-epoch", to.stop_after, "Halt once this many epochs are done");

    InferOpts io;
    CLI::App* infer = app.add_subcommand("infer", "Predict disparity for one rectified pair");
    infer->add_option("--left", io.left, "Left view (PPM)")->required();
    infer->add_option("--right", io.right, "Right view (PPM)")->required();
    infer->add_option("--out-pfm", io.out_pfm, "Disparity output (PFM)")->required();
    infer->add_option("--out-ppm", io.out_ppm, "Color-mapped disparity output (PPM)");
    infer->add_option("--config", io.config, "JSON run configuration (defaults when omitted)");
    infer->add_option("--checkpoint", io.checkpoint, "Trained weights (untrained when omitted)");

    EvalOpts eo;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Score predictions against ground truth");
    eval_cmd->add_option("--data", eo.data, "Dataset directory (synth layout)")->required();
    eval_cmd->add_option("--pred", eo.pred, "Directory of <stem>.pfm predictions");
    eval_cmd->add_option("--config", eo.config, "JSON run configuration (with --checkpoint)");
    eval_cmd->add_option("--checkpoint", eo.checkpoint, "Predict in-process with these weights");
    eval_cmd->add_option("--out", eo.out, "Metric CSV path");

    EvalOpts wo;
    CLI::App* warp = app.add_subcommand("warp-eval", "Ground-truth-free warp scoring (SSIM/PSNR)");
    warp->add_option("--data", wo.data, "Dataset directory (synth layout)")->required();
    warp->add_option("--pred", wo.pred, "Directory of <stem>.pfm predictions");
    warp->add_option("--config", wo.config, "JSON run configuration (with --checkpoint)");
    warp->add_option("--checkpoint", wo.checkpoint, "Predict in-process with these weights");
    warp->add_option("--out", wo.out, "Metric CSV path (ssim/psnr columns filled)");

    DualityOpts duo;
    CLI::App* dual = app.add_subcommand("duality-check", "Scan-vs-materialization equivalence suite");
    dual->add_option("--seeds", duo.seeds, "Number of random sequences");
    dual->add_option("--t-max", duo.t_max, "Largest sequence length");
    dual->add_option("--n-max", duo.n_max, "Largest state dimension");
    dual->add_option("--seed", duo.seed, "Base RNG seed");

    BenchOpts bo;
    CLI::App* bench = app.add_subcommand("bench", "Scan vs quadratic timing/equality report");
    bench->add_option("--t-max", bo.t_max, "Largest sequence length (doubling from 64)");
    bench->add_option("--n-state", bo.n_state, "State dimension");
    bench->add_option("--seed", bo.seed, "Base RNG seed");
    bench->add_option("--out", bo.out, "Write the report to this file as well");

    AblationOpts ao;
    CLI::App* ablation = app.add_subcommand("ablation", "Train and compare the three variants");
    ablation->add_option("--config", ao.config, "JSON run configuration of the full variant")->required();
    ablation->add_option("--out", ao.out, "Report directory (ablation.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (app.got_subcommand(synth)) return cmd_synth(so);
        if (app.got_subcommand(train)) return cmd_train(to);
        if (app.got_subcommand(infer)) return cmd_infer(io);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(eo, false);
        if (app.got_subcommand(warp)) return cmd_eval(wo, true);
        if (app.got_subcommand(dual)) return cmd_duality(duo);
        if (app.got_subcommand(bench)) return cmd_bench(bo);
        if (app.got_subcommand(ablation)) return cmd_ablation(ao);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
