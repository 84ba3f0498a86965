// Command-line front end for the full pipeline:
// datagen | featurize | pretrain | adapt | finetune | evaluate | ablate | demo-perturb

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "jitter/ablation.hpp"
#include "jitter/datagen.hpp"
#include "jitter/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json record_to_json(const jitter::PerturbationRecord& rec) {
    json j;
    j["block_perm"] = rec.block_perm;
    j["chosen_blocks"] = rec.chosen_blocks;
    j["flipped"] = rec.flipped;
    j["noise_seed"] = rec.noise_seed;
    j["noise_scale"] = rec.noise_scale;
    json perms = json::object();
    for (const auto& [b, p] : rec.frame_perms) perms[std::to_string(b)] = p;
    j["frame_perms"] = perms;
    json pos = json::object();
    for (const auto& [b, p] : rec.frame_positions) pos[std::to_string(b)] = p;
    j["frame_positions"] = pos;
    return j;
}

json frames_to_json(const jitter::FrameSequence& s) {
    json rows = json::array();
    for (int t = 0; t < s.T; ++t) {
        json row = json::array();
        for (int d = 0; d < s.D; ++d) row.push_back(s.at(t, d));
        rows.push_back(row);
    }
    return rows;
}

struct StageOptions {
    std::string data, features, out, init;
    double scale = 0.1;
    std::uint64_t seed = 0;
    std::string mode = "multitask";
    double p_b = 0.75, p_fb = 0.5, p_ff = 0.25, flip_rate = 0.0, noise = 0.0;
    bool parallel = false;
    bool no_consistency = false;
    bool no_augment = false;
};

jitter::TrainConfig make_train_config(const StageOptions& o) {
    jitter::TrainConfig cfg;
    cfg.shuffle.mode = jitter::shuffle_mode_from_string(o.mode);
    cfg.shuffle.p_b = o.p_b;
    cfg.shuffle.p_fb = o.p_fb;
    cfg.shuffle.p_ff = o.p_ff;
    cfg.shuffle.flip_rate = o.flip_rate;
    cfg.shuffle.noise_scale = o.noise;
    cfg.shuffle.seed = o.seed;
    cfg.scale = o.scale;
    cfg.seed = o.seed;
    cfg.parallel_multitask = o.parallel;
    cfg.consistency_in_adapt = !o.no_consistency;
    cfg.augment_enabled = !o.no_augment;
    cfg.shuffle.validate();
    return cfg;
}

void add_stage_options(CLI::App* cmd, StageOptions& o, bool wants_init) {
    cmd->add_option("--data", o.data, "dataset directory (from datagen)")->required();
    cmd->add_option("--features", o.features, "feature cache directory (from featurize)")
        ->required();
    cmd->add_option("--out", o.out, "run output directory")->required();
    if (wants_init) cmd->add_option("--init", o.init, "run directory of the previous stage");
    cmd->add_option("--seed", o.seed, "global seed");
    cmd->add_option("--scale", o.scale, "fraction of the 6000-step schedule (default 0.1)");
    cmd->add_option("--mode", o.mode, "block | frame | multitask");
    cmd->add_option("--p-b", o.p_b, "block shuffle rate");
    cmd->add_option("--p-fb", o.p_fb, "block-selection rate for frame shuffle");
    cmd->add_option("--p-ff", o.p_ff, "within-block frame shuffle rate");
    cmd->add_option("--flip-rate", o.flip_rate, "block flip probability");
    cmd->add_option("--noise", o.noise, "noise injection scale lambda");
    cmd->add_flag("--parallel", o.parallel, "compute both shuffle losses every iteration");
    cmd->add_flag("--no-consistency", o.no_consistency, "disable the consistency loss in adapt");
    cmd->add_flag("--no-augment", o.no_augment, "disable augmentations in SED stages");
}

int run_stage_cmd(jitter::Stage stage, const StageOptions& o) {
    auto ds = jitter::load_dataset(o.data, o.features);
    auto cfg = make_train_config(o);
    jitter::run_training_stage(stage, ds, cfg, o.init, o.out);
    std::cout << jitter::to_string(stage) << " complete: " << o.out << "\n";
    return 0;
}

int run_ablate(const StageOptions& base, int seeds, const std::string& out_dir) {
    auto ds = jitter::load_dataset(base.data, base.features);
    jitter::run_ablate(ds, make_train_config(base), seeds, out_dir);
    std::ifstream tf(out_dir + "/tables.md");
    std::cout << tf.rdbuf();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"JiTTER: hierarchical temporal shuffle pretraining for sound event detection"};
    app.require_subcommand(1);

    // datagen
    auto* dg = app.add_subcommand("datagen", "synthesize the dataset");
    std::string dg_out;
    jitter::DatasetManifest man;
    dg->add_option("--out", dg_out, "output directory")->required();
    dg->add_option("--seed", man.seed, "dataset seed");
    dg->add_option("--strong", man.strong, "strong-labeled clips");
    dg->add_option("--weak", man.weak, "weak-labeled clips");
    dg->add_option("--unlabeled", man.unlabeled, "unlabeled clips");
    dg->add_option("--validation", man.validation, "validation clips");

    // featurize
    auto* fz = app.add_subcommand("featurize", "extract and cache log-mel features");
    std::string fz_data, fz_out;
    fz->add_option("--data", fz_data, "dataset directory")->required();
    fz->add_option("--out", fz_out, "feature cache directory")->required();

    StageOptions pre_o, ad_o, ft_o;
    auto* pre = app.add_subcommand("pretrain", "stage 1: shuffle reconstruction pretraining");
    add_stage_options(pre, pre_o, false);
    auto* ad = app.add_subcommand("adapt", "stage 2: train SED/AT heads on frozen features");
    add_stage_options(ad, ad_o, true);
    auto* ft = app.add_subcommand("finetune", "stage 3: end-to-end fine-tuning");
    add_stage_options(ft, ft_o, true);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "PSDS1 evaluation on the validation split");
    std::string ev_data, ev_features, ev_ckpt, ev_dets, ev_out = "report.json";
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--features", ev_features, "feature cache directory");
    ev->add_option("--checkpoint", ev_ckpt, "run directory holding checkpoint/");
    ev->add_option("--detections", ev_dets, "score a detections TSV instead of a checkpoint");
    ev->add_option("--out", ev_out, "report file");

    // ablate
    StageOptions ab_o;
    int ab_seeds = 1;
    auto* ab = app.add_subcommand("ablate", "run the shuffle/flip/noise configuration grids");
    add_stage_options(ab, ab_o, false);
    ab->add_option("--seeds", ab_seeds, "independent runs per cell (reports mean and max)");

    // demo-perturb
    auto* dp = app.add_subcommand("demo-perturb", "write a before/after perturbation example");
    std::string dp_out = "perturb_demo.json";
    int dp_t = 100, dp_d = 4, dp_iter = 0;
    StageOptions dp_o;
    dp->add_option("--out", dp_out, "output JSON file");
    dp->add_option("--frames", dp_t, "sequence length T");
    dp->add_option("--dim", dp_d, "feature dimension D");
    dp->add_option("--iteration", dp_iter, "iteration index (multitask parity)");
    dp->add_option("--seed", dp_o.seed, "seed");
    dp->add_option("--mode", dp_o.mode, "block | frame | multitask");
    dp->add_option("--p-b", dp_o.p_b, "block shuffle rate");
    dp->add_option("--p-fb", dp_o.p_fb, "frame block-selection rate");
    dp->add_option("--p-ff", dp_o.p_ff, "within-block frame rate");
    dp->add_option("--flip-rate", dp_o.flip_rate, "block flip probability");
    dp->add_option("--noise", dp_o.noise, "noise scale lambda");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*dg) {
            jitter::build_dataset(dg_out, man);
            std::cout << "dataset written to " << dg_out << "\n";
        } else if (*fz) {
            jitter::featurize_dataset(fz_data, fz_out);
            std::cout << "features written to " << fz_out << "\n";
        } else if (*pre) {
            return run_stage_cmd(jitter::Stage::pretrain, pre_o);
        } else if (*ad) {
            return run_stage_cmd(jitter::Stage::adapt, ad_o);
        } else if (*ft) {
            if (ft_o.init.empty())
                throw jitter::DependencyError("finetune requires --init (an adapt run directory)");
            return run_stage_cmd(jitter::Stage::finetune, ft_o);
        } else if (*ev) {
            jitter::PSDSParams params;
            jitter::PsdsReport report;
            if (!ev_dets.empty()) {
                std::map<std::string, int> ids;
                std::vector<int> windows;
                auto jman = jitter::read_json_file(ev_data + "/manifest.json");
                int num_classes = 0;
                for (const auto& c : jman.at("classes")) {
                    ids[c.at("name")] = c.at("id");
                    ++num_classes;
                }
                auto gts = jitter::read_events_tsv(ev_data + "/validation.tsv", ids);
                std::vector<jitter::EventList> dets;
                if (fs::exists(ev_dets) && fs::file_size(ev_dets) > 0)
                    dets = jitter::read_events_tsv(ev_dets, ids);
                const double hours = static_cast<double>(gts.size()) * 10.0 / 3600.0;
                report = jitter::psds_single(dets, gts, params, num_classes, hours);
            } else {
                if (ev_features.empty() || ev_ckpt.empty())
                    throw jitter::DependencyError(
                        "evaluate needs either --detections or --features plus --checkpoint");
                auto ds = jitter::load_dataset(ev_data, ev_features);
                report = jitter::run_evaluate(ev_ckpt, ds, params);
            }
            jitter::write_json_file(ev_out, jitter::report_to_json(report));
            std::cout << "PSDS1 = " << report.psds << " (report: " << ev_out << ")\n";
        } else if (*ab) {
            return run_ablate(ab_o, ab_seeds, ab_o.out);
        } else if (*dp) {
            jitter::Rng rng(jitter::splitmix64(dp_o.seed + 17));
            jitter::FrameSequence seq(dp_t, dp_d);
            for (int t = 0; t < dp_t; ++t)
                for (int d = 0; d < dp_d; ++d) seq.at(t, d) = rng.gauss();
            jitter::ShuffleSpec spec;
            spec.mode = jitter::shuffle_mode_from_string(dp_o.mode);
            spec.p_b = dp_o.p_b;
            spec.p_fb = dp_o.p_fb;
            spec.p_ff = dp_o.p_ff;
            spec.flip_rate = dp_o.flip_rate;
            spec.noise_scale = dp_o.noise;
            spec.seed = dp_o.seed;
            auto res = jitter::apply(seq, spec, dp_iter);
            json j;
            j["before"] = frames_to_json(seq);
            j["after"] = frames_to_json(res.sequence);
            j["record"] = record_to_json(res.record);
            j["applied_mode"] = jitter::to_string(res.applied);
            jitter::write_json_file(dp_out, j);
            std::cout << "perturbation demo written to " << dp_out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
