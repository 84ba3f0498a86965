#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jitter/pipeline.hpp"

namespace jitter {

// One configuration cell of the ablation grids: shuffle strategy table,
// block flip table, noise injection table.
struct AblateCell {
    std::string table, method;
    TrainConfig cfg;
};

inline std::vector<AblateCell> ablate_grid(const TrainConfig& base) {
    std::vector<AblateCell> cells;
    auto mk = [&](const std::string& table, const std::string& method, auto&& tweak) {
        TrainConfig cfg = base;
        cfg.shuffle.p_b = 0;
        cfg.shuffle.p_fb = 0;
        cfg.shuffle.p_ff = 0;
        cfg.shuffle.flip_rate = 0;
        cfg.shuffle.noise_scale = 0;
        tweak(cfg);
        cells.push_back({table, method, cfg});
    };
    for (double pb : {0.25, 0.5, 0.75})
        mk("shuffle", "Block Shuffle", [&](TrainConfig& c) {
            c.shuffle.mode = ShuffleMode::block;
            c.shuffle.p_b = pb;
        });
    for (double pfb : {0.25, 0.5, 0.75})
        for (double pff : {0.25, 0.5, 0.75})
            mk("shuffle", "Frame Shuffle", [&](TrainConfig& c) {
                c.shuffle.mode = ShuffleMode::frame;
                c.shuffle.p_fb = pfb;
                c.shuffle.p_ff = pff;
            });
    const double multitask[][3] = {
        {0.75, 0.5, 0.25}, {0.5, 0.5, 0.25}, {0.75, 0.25, 0.25}, {0.75, 0.75, 0.25},
        {0.75, 0.5, 0.5}};
    for (const auto& m : multitask)
        mk("shuffle", "Multitask", [&](TrainConfig& c) {
            c.shuffle.mode = ShuffleMode::multitask;
            c.shuffle.p_b = m[0];
            c.shuffle.p_fb = m[1];
            c.shuffle.p_ff = m[2];
        });
    for (double flip : {0.25, 0.5, 0.75})
        mk("flip", "Multitask + Flip", [&](TrainConfig& c) {
            c.shuffle.mode = ShuffleMode::multitask;
            c.shuffle.p_b = 0.75;
            c.shuffle.p_fb = 0.5;
            c.shuffle.p_ff = 0.25;
            c.shuffle.flip_rate = flip;
        });
    for (double lam : {0.05, 0.1, 0.2, 0.4})
        mk("noise", "Multitask + Noise", [&](TrainConfig& c) {
            c.shuffle.mode = ShuffleMode::multitask;
            c.shuffle.p_b = 0.75;
            c.shuffle.p_fb = 0.5;
            c.shuffle.p_ff = 0.25;
            c.shuffle.noise_scale = lam;
        });
    return cells;
}

namespace detail {

inline std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

inline std::string dash_or(double v, bool active) { return active ? fmt3(v) : "-"; }

}  // namespace detail

// Runs the no-pretraining baseline plus every grid cell over `seeds`
// independent seeds, writes tables.md and results.json into out_dir,
// and returns the results array.
inline nlohmann::json run_ablate(const Dataset& ds, const TrainConfig& base, int seeds,
                                 const std::string& out_dir) {
    using detail::dash_or;
    using detail::fmt3;
    std::filesystem::create_directories(out_dir);
    auto cells = ablate_grid(base);

    // no-pretraining control plays the role of the paper's baseline row
    nlohmann::json results = nlohmann::json::array();
    auto run_cell = [&](const std::string& name, TrainConfig cfg, bool pretrain) {
        std::vector<double> scores;
        for (int k = 0; k < seeds; ++k) {
            cfg.seed = base.seed + static_cast<std::uint64_t>(k);
            cfg.shuffle.seed = cfg.seed;
            const std::string root = out_dir + "/" + name + "/seed" + std::to_string(k);
            auto report = run_full_pipeline(ds, cfg, root, pretrain);
            scores.push_back(report.psds);
        }
        double mean = 0, mx = 0;
        for (double s : scores) {
            mean += s;
            mx = std::max(mx, s);
        }
        mean /= static_cast<double>(scores.size());
        return std::pair<double, double>{mean, mx};
    };

    std::ostringstream md;
    md << "## Shuffle ablation (PSDS1, mean over " << seeds << " seed(s))\n\n";
    md << "| Method | p_b | p_fb | p_ff | PSDS |\n|---|---|---|---|---|\n";
    {
        auto [mean, mx] = run_cell("baseline", base, false);
        md << "| Baseline (no pretraining) | - | - | - | " << fmt3(mean) << " |\n";
        results.push_back({{"table", "shuffle"}, {"method", "Baseline (no pretraining)"},
                           {"psds_mean", mean}, {"psds_max", mx}});
    }
    int idx = 0;
    for (const auto& cell : cells) {
        const std::string name = "cell" + std::to_string(idx++);
        auto [mean, mx] = run_cell(name, cell.cfg, true);
        const auto& sh = cell.cfg.shuffle;
        const bool block_active = sh.mode != ShuffleMode::frame;
        const bool frame_active = sh.mode != ShuffleMode::block;
        nlohmann::json row = {{"table", cell.table},   {"method", cell.method},
                              {"p_b", sh.p_b},         {"p_fb", sh.p_fb},
                              {"p_ff", sh.p_ff},       {"flip_rate", sh.flip_rate},
                              {"noise_scale", sh.noise_scale}, {"psds_mean", mean},
                              {"psds_max", mx}};
        results.push_back(row);
        if (cell.table == "shuffle")
            md << "| JiTTER (" << cell.method << ") | " << dash_or(sh.p_b, block_active) << " | "
               << dash_or(sh.p_fb, frame_active) << " | " << dash_or(sh.p_ff, frame_active)
               << " | " << fmt3(mean) << " |\n";
    }
    md << "\n## Block flip (PSDS1)\n\n| Method | flip rate | PSDS |\n|---|---|---|\n";
    for (const auto& r : results)
        if (r.contains("flip_rate") && r["table"] == "flip")
            md << "| " << r["method"].get<std::string>() << " | " << fmt3(r["flip_rate"]) << " | "
               << fmt3(r["psds_mean"]) << " |\n";
    md << "\n## Noise injection (PSDS1)\n\n| Method | noise scale | PSDS |\n|---|---|---|\n";
    for (const auto& r : results)
        if (r.contains("noise_scale") && r["table"] == "noise")
            md << "| " << r["method"].get<std::string>() << " | " << fmt3(r["noise_scale"])
               << " | " << fmt3(r["psds_mean"]) << " |\n";

    std::ofstream tf(out_dir + "/tables.md");
    tf << md.str();
    write_json_file(out_dir + "/results.json", results);
    return results;
}

}  // namespace jitter
