#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "jitter/training.hpp"

namespace jitter {

class DependencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Every stage writes a self-contained run directory: config echo, JSONL
// metrics, checkpoint, state marker.

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream f(path);
    f << j.dump(2) << "\n";
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DependencyError("missing required file: " + path);
    return nlohmann::json::parse(f);
}

inline nlohmann::json train_config_json(const TrainConfig& cfg) {
    return {{"mode", to_string(cfg.shuffle.mode)},
            {"p_b", cfg.shuffle.p_b},
            {"p_fb", cfg.shuffle.p_fb},
            {"p_ff", cfg.shuffle.p_ff},
            {"flip_rate", cfg.shuffle.flip_rate},
            {"noise_scale", cfg.shuffle.noise_scale},
            {"block_size_block", cfg.shuffle.block_size_block},
            {"block_size_frame", cfg.shuffle.block_size_frame},
            {"scale", cfg.scale},
            {"seed", cfg.seed},
            {"lr_pretrain", cfg.lr_pretrain},
            {"lr_adapt", cfg.lr_adapt},
            {"lr_finetune", cfg.lr_finetune},
            {"weight_decay", cfg.weight_decay},
            {"w_weak", cfg.weights.w_weak},
            {"w_cons_max", cfg.weights.w_cons_max},
            {"ema_decay", cfg.ema_decay},
            {"parallel_multitask", cfg.parallel_multitask},
            {"consistency_in_adapt", cfg.consistency_in_adapt},
            {"augment", cfg.augment_enabled}};
}

inline Stage stage_from_string(const std::string& s) {
    if (s == "none") return Stage::none;
    if (s == "pretrain") return Stage::pretrain;
    if (s == "adapt") return Stage::adapt;
    if (s == "finetune") return Stage::finetune;
    throw std::invalid_argument("unknown stage: " + s);
}

// Runs one training stage into out_dir. init_dir empty means a fresh random
// model (allowed for pretrain, and for adapt as the no-pretraining control).
inline void run_training_stage(Stage stage, const Dataset& ds, const TrainConfig& cfg,
                               const std::string& init_dir, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    TrainState state;
    if (init_dir.empty()) {
        Rng init_rng(splitmix64(cfg.seed + 0x5eedULL));
        ModelConfig mc;
        mc.classes = ds.num_classes();
        state.student = Model(mc);
        state.student.init(init_rng);
        state.stage = Stage::none;
    } else {
        if (!fs::exists(init_dir + "/checkpoint/manifest.json"))
            throw DependencyError("no checkpoint found in " + init_dir +
                                  " (run the previous stage first)");
        state.student = Model::load(init_dir + "/checkpoint");
        state.stage = stage_from_string(
            read_json_file(init_dir + "/state.json").at("stage").get<std::string>());
    }
    auto cfg_json = train_config_json(cfg);
    cfg_json["stage"] = to_string(stage);
    write_json_file(out_dir + "/config.json", cfg_json);
    MetricsLog metrics(out_dir + "/metrics.jsonl");
    run_stage(stage, cfg.steps_per_stage(), state, ds, cfg, metrics);
    state.student.save(out_dir + "/checkpoint");
    write_json_file(out_dir + "/state.json", {{"stage", to_string(state.stage)}});
}

inline PsdsReport run_evaluate(const std::string& checkpoint_dir, const Dataset& ds,
                               const PSDSParams& params = {}, int n_thresholds = 50) {
    namespace fs = std::filesystem;
    if (!fs::exists(checkpoint_dir + "/checkpoint/manifest.json"))
        throw DependencyError("no checkpoint found in " + checkpoint_dir);
    auto model = Model::load(checkpoint_dir + "/checkpoint");
    return evaluate_model(model, ds, params, n_thresholds);
}

// datagen -> featurize assumed done; runs pretrain (optional), adapt,
// finetune under root/, returns final PSDS1.
inline PsdsReport run_full_pipeline(const Dataset& ds, TrainConfig cfg, const std::string& root,
                                    bool with_pretraining) {
    std::string prev;
    if (with_pretraining) {
        run_training_stage(Stage::pretrain, ds, cfg, "", root + "/pretrain");
        prev = root + "/pretrain";
    }
    run_training_stage(Stage::adapt, ds, cfg, prev, root + "/adapt");
    run_training_stage(Stage::finetune, ds, cfg, root + "/adapt", root + "/finetune");
    auto report = run_evaluate(root + "/finetune", ds);
    write_json_file(root + "/report.json", report_to_json(report));
    return report;
}

}  // namespace jitter
