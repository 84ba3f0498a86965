#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jitter/datagen.hpp"
#include "jitter/evaluation.hpp"
#include "jitter/features.hpp"
#include "jitter/tensor_io.hpp"

namespace jitter {

struct LoadedClip {
    std::string id;
    std::vector<float> spec;          // standardized log-mel, 500 x 128
    std::vector<double> strong_grid;  // 100 x C rasterized labels, empty if none
    std::vector<double> weak;         // C presence labels, empty if none
    EventList events;
    bool has_strong = false;
    bool has_weak = false;
};

struct Dataset {
    std::vector<std::string> class_names;
    std::map<std::string, int> class_ids;
    std::vector<int> median_windows;  // per class: 5 transient, 20 stationary
    std::vector<LoadedClip> strong, weak, unlabeled, validation;
    int frames = 500;
    int bins = 128;
    int label_steps = 100;

    int num_classes() const { return static_cast<int>(class_names.size()); }
};

// >= 50% overlap of each 0.1 s label step with an event marks the step active
inline std::vector<double> rasterize_events(const EventList& ev, int num_classes, int steps = 100,
                                            double step_seconds = 0.1) {
    std::vector<double> grid(static_cast<std::size_t>(steps) * num_classes, 0.0);
    for (const auto& e : ev.events)
        for (int t = 0; t < steps; ++t) {
            const double lo = t * step_seconds, hi = lo + step_seconds;
            const double ov = std::max(0.0, std::min(hi, e.offset) - std::max(lo, e.onset));
            if (ov >= 0.5 * step_seconds)
                grid[static_cast<std::size_t>(t) * num_classes + e.class_id] = 1.0;
        }
    return grid;
}

// Extract and cache log-mel features for every clip; per-bin mean/std
// standardization statistics are computed on the strong split.
inline void featurize_dataset(const std::string& data_dir, const std::string& features_dir,
                              const FeatureConfig& cfg = {}) {
    namespace fs = std::filesystem;
    std::ifstream mf(data_dir + "/manifest.json");
    if (!mf) throw DataError("featurize: no manifest.json in " + data_dir);
    nlohmann::json man = nlohmann::json::parse(mf);
    fs::create_directories(features_dir);

    const int bins = cfg.mel_bins;
    std::vector<double> mean(static_cast<std::size_t>(bins), 0.0),
        sq(static_cast<std::size_t>(bins), 0.0);
    std::size_t strong_frames = 0;
    for (const auto& [split, ids] : man.at("splits").items()) {
        for (const auto& jid : ids) {
            const std::string id = jid.get<std::string>();
            auto w = normalize(read_wav(data_dir + "/audio/" + id + ".wav"));
            auto lm = logmel(w, cfg);
            write_jtt1(features_dir + "/" + id + ".jtt", {lm.frames, lm.bins}, lm.data);
            if (split == "strong") {
                for (int t = 0; t < lm.frames; ++t)
                    for (int b = 0; b < bins; ++b) {
                        mean[static_cast<std::size_t>(b)] += lm.at(t, b);
                        sq[static_cast<std::size_t>(b)] += lm.at(t, b) * lm.at(t, b);
                    }
                strong_frames += static_cast<std::size_t>(lm.frames);
            }
        }
    }
    nlohmann::json stats;
    std::vector<double> m(static_cast<std::size_t>(bins)), s(static_cast<std::size_t>(bins));
    for (int b = 0; b < bins; ++b) {
        m[static_cast<std::size_t>(b)] = mean[static_cast<std::size_t>(b)] / strong_frames;
        const double var = sq[static_cast<std::size_t>(b)] / strong_frames -
                           m[static_cast<std::size_t>(b)] * m[static_cast<std::size_t>(b)];
        s[static_cast<std::size_t>(b)] = std::sqrt(std::max(var, 1e-12));
    }
    stats["mean"] = m;
    stats["std"] = s;
    std::ofstream sf(features_dir + "/stats.json");
    sf << stats.dump() << "\n";
}

inline Dataset load_dataset(const std::string& data_dir, const std::string& features_dir) {
    std::ifstream mf(data_dir + "/manifest.json");
    if (!mf) throw DataError("load_dataset: no manifest.json in " + data_dir);
    nlohmann::json man = nlohmann::json::parse(mf);
    std::ifstream sf(features_dir + "/stats.json");
    if (!sf) throw DataError("load_dataset: no stats.json in " + features_dir + " (run featurize)");
    nlohmann::json stats = nlohmann::json::parse(sf);
    const std::vector<double> mean = stats.at("mean"), stdv = stats.at("std");

    Dataset ds;
    for (const auto& c : man.at("classes")) {
        ds.class_names.push_back(c.at("name"));
        ds.class_ids[c.at("name")] = c.at("id");
        ds.median_windows.push_back(c.at("category") == "transient" ? 5 : 20);
    }
    const int C = ds.num_classes();

    auto load_events = [&](const std::string& path) {
        std::map<std::string, EventList> out;
        if (!std::filesystem::exists(path)) return out;
        for (auto& l : read_events_tsv(path, ds.class_ids)) out[l.clip_id] = l;
        return out;
    };
    auto strong_events = load_events(data_dir + "/strong.tsv");
    auto val_events = load_events(data_dir + "/validation.tsv");

    std::map<std::string, std::vector<double>> weak_labels;
    {
        std::ifstream wf(data_dir + "/weak.tsv");
        std::string line;
        while (std::getline(wf, line)) {
            if (line.empty()) continue;
            std::istringstream is(line);
            std::string id, rest;
            is >> id;
            is >> rest;
            std::vector<double> lab(static_cast<std::size_t>(C), 0.0);
            std::stringstream cs(rest);
            std::string tok;
            while (std::getline(cs, tok, ','))
                if (!tok.empty()) lab[static_cast<std::size_t>(ds.class_ids.at(tok))] = 1.0;
            weak_labels[id] = std::move(lab);
        }
    }

    auto load_split = [&](const std::string& split, std::vector<LoadedClip>& out) {
        for (const auto& jid : man.at("splits").at(split)) {
            LoadedClip clip;
            clip.id = jid.get<std::string>();
            auto t = read_jtt1(features_dir + "/" + clip.id + ".jtt");
            ds.frames = t->shape[0];
            ds.bins = t->shape[1];
            clip.spec.resize(t->size());
            for (int fr = 0; fr < ds.frames; ++fr)
                for (int b = 0; b < ds.bins; ++b) {
                    const std::size_t i = static_cast<std::size_t>(fr) * ds.bins + b;
                    clip.spec[i] = static_cast<float>(
                        (t->data[i] - mean[static_cast<std::size_t>(b)]) /
                        stdv[static_cast<std::size_t>(b)]);
                }
            if (auto it = strong_events.find(clip.id); it != strong_events.end()) {
                clip.events = it->second;
                clip.strong_grid = rasterize_events(it->second, C, ds.label_steps);
                clip.has_strong = true;
                // weak labels of strong clips are the projection of strong ones
                clip.weak.assign(static_cast<std::size_t>(C), 0.0);
                for (const auto& e : it->second.events)
                    clip.weak[static_cast<std::size_t>(e.class_id)] = 1.0;
                clip.has_weak = true;
            }
            if (auto it = val_events.find(clip.id); it != val_events.end()) {
                clip.events = it->second;
                clip.strong_grid = rasterize_events(it->second, C, ds.label_steps);
                clip.has_strong = true;
            }
            if (auto it = weak_labels.find(clip.id); it != weak_labels.end()) {
                clip.weak = it->second;
                clip.has_weak = true;
            }
            out.push_back(std::move(clip));
        }
    };
    load_split("strong", ds.strong);
    load_split("weak", ds.weak);
    load_split("unlabeled", ds.unlabeled);
    load_split("validation", ds.validation);
    return ds;
}

inline TensorPtr clip_spec_tensor(const LoadedClip& clip, int frames, int bins) {
    std::vector<double> d(clip.spec.begin(), clip.spec.end());
    return tensor({frames, bins}, std::move(d));
}

}  // namespace jitter
