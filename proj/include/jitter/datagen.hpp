#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "jitter/evaluation.hpp"
#include "jitter/features.hpp"
#include "jitter/rng.hpp"

namespace jitter {

// ---------------------------------------------------------------------------
// 16-bit PCM mono WAV
// ---------------------------------------------------------------------------

inline void write_wav(const std::string& path, const Waveform& w) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_wav: cannot open " + path);
    auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    f.write("RIFF", 4);
    u32(36 + data_bytes);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    u32(16);
    u16(1);  // PCM
    u16(1);  // mono
    u32(static_cast<std::uint32_t>(w.sample_rate));
    u32(static_cast<std::uint32_t>(w.sample_rate * 2));
    u16(2);
    u16(16);
    f.write("data", 4);
    u32(data_bytes);
    for (float s : w.samples) {
        const double c = std::clamp(static_cast<double>(s), -1.0, 1.0);
        const std::int16_t v = static_cast<std::int16_t>(std::lround(c * 32767.0));
        f.write(reinterpret_cast<const char*>(&v), 2);
    }
}

inline Waveform read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_wav: cannot open " + path);
    char id[4];
    std::uint32_t size = 0;
    f.read(id, 4);
    f.read(reinterpret_cast<char*>(&size), 4);
    f.read(id, 4);
    if (!f || std::string(id, 4) != "WAVE") throw DataError("read_wav: not a WAV file: " + path);
    Waveform w;
    std::uint16_t channels = 1, bits = 16;
    while (f.read(id, 4) && f.read(reinterpret_cast<char*>(&size), 4)) {
        const std::string chunk(id, 4);
        if (chunk == "fmt ") {
            std::vector<char> buf(size);
            f.read(buf.data(), size);
            channels = *reinterpret_cast<std::uint16_t*>(buf.data() + 2);
            w.sample_rate = static_cast<int>(*reinterpret_cast<std::uint32_t*>(buf.data() + 4));
            bits = *reinterpret_cast<std::uint16_t*>(buf.data() + 14);
        } else if (chunk == "data") {
            if (channels != 1 || bits != 16)
                throw DataError("read_wav: only 16-bit mono supported: " + path);
            const std::size_t n = size / 2;
            w.samples.resize(n);
            std::vector<std::int16_t> buf(n);
            f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
            for (std::size_t i = 0; i < n; ++i)
                w.samples[i] = static_cast<float>(buf[i]) / 32768.0f;
            return w;
        } else {
            f.seekg(size, std::ios::cur);
        }
    }
    throw DataError("read_wav: no data chunk in " + path);
}

// ---------------------------------------------------------------------------
// synthetic classes and clips
// ---------------------------------------------------------------------------

enum class ClassCategory { transient, stationary };

struct ClassSpec {
    int id = 0;
    std::string name;
    ClassCategory category = ClassCategory::transient;
    double f_lo = 0.0, f_hi = 0.0;       // synthesis band, Hz
    double dur_lo = 0.0, dur_hi = 0.0;   // event duration, s
};

inline std::vector<ClassSpec> default_classes() {
    // 5 transient (tone bursts 0.05-0.3 s) + 5 stationary (band noise 1-6 s)
    return {
        {0, "alarm", ClassCategory::transient, 800, 1200, 0.05, 0.3},
        {1, "click", ClassCategory::transient, 2000, 3000, 0.05, 0.3},
        {2, "knock", ClassCategory::transient, 150, 250, 0.05, 0.3},
        {3, "beep", ClassCategory::transient, 400, 600, 0.05, 0.3},
        {4, "blip", ClassCategory::transient, 3000, 4500, 0.05, 0.3},
        {5, "hum", ClassCategory::stationary, 80, 160, 1.0, 6.0},
        {6, "hiss", ClassCategory::stationary, 4000, 6000, 1.0, 6.0},
        {7, "drone", ClassCategory::stationary, 300, 500, 1.0, 6.0},
        {8, "rumble", ClassCategory::stationary, 30, 120, 1.0, 6.0},
        {9, "whirr", ClassCategory::stationary, 1000, 1800, 1.0, 6.0},
    };
}

namespace detail {

// Voss-McCartney pink noise, unit-ish amplitude before scaling
inline std::vector<float> pink_noise(std::size_t n, Rng& rng) {
    constexpr int rows_n = 8;
    double rows[rows_n];
    for (auto& r : rows) r = rng.gauss();
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        // update the row whose bit flips at this counter value
        std::size_t c = i + 1;
        int row = 0;
        while (row < rows_n - 1 && !(c & 1)) {
            c >>= 1;
            ++row;
        }
        rows[row] = rng.gauss();
        double s = 0;
        for (double r : rows) s += r;
        out[i] = static_cast<float>(s / rows_n);
    }
    return out;
}

}  // namespace detail

struct SynthConfig {
    double clip_seconds = 10.0;
    int sample_rate = 16000;
    int min_events = 1;
    int max_events = 4;
    double bed_level_db = -30.0;  // pink-noise bed relative to event amplitude 0.5
};

// Deterministic per seed: events over a low-level pink-noise bed, exact
// onsets/offsets recorded. An empty class list yields a noise-only clip.
inline std::pair<Waveform, EventList> synth_clip(std::uint64_t seed,
                                                 const std::vector<ClassSpec>& classes,
                                                 const std::string& clip_id,
                                                 const SynthConfig& cfg = {}) {
    Rng rng(splitmix64(seed));
    const std::size_t n = static_cast<std::size_t>(cfg.clip_seconds * cfg.sample_rate);
    Waveform w;
    w.sample_rate = cfg.sample_rate;
    w.samples = detail::pink_noise(n, rng);
    {
        double rms = 0;
        for (float s : w.samples) rms += static_cast<double>(s) * s;
        rms = std::sqrt(rms / static_cast<double>(n));
        const float g = static_cast<float>(0.5 * std::pow(10.0, cfg.bed_level_db / 20.0) /
                                           std::max(rms, 1e-12));
        for (auto& s : w.samples) s *= g;
    }
    EventList labels;
    labels.clip_id = clip_id;
    if (classes.empty()) return {std::move(w), std::move(labels)};

    const int n_events = rng.int_range(cfg.min_events, cfg.max_events);
    for (int e = 0; e < n_events; ++e) {
        const auto& cls = classes[rng.index(classes.size())];
        const double dur = rng.uniform(cls.dur_lo, cls.dur_hi);
        const double onset = rng.uniform(0.0, cfg.clip_seconds - dur);
        const std::size_t i0 = static_cast<std::size_t>(onset * cfg.sample_rate);
        const std::size_t len = static_cast<std::size_t>(dur * cfg.sample_rate);
        if (cls.category == ClassCategory::transient) {
            const double freq = rng.uniform(cls.f_lo, cls.f_hi);
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            // flat body with short raised-cosine edges so the audible extent
            // matches the labeled onset/offset even for the shortest bursts
            const double fade = std::min(0.01 * cfg.sample_rate, static_cast<double>(len) / 2.0);
            for (std::size_t i = 0; i < len && i0 + i < n; ++i) {
                double env = 1.0;
                const double di = static_cast<double>(i);
                if (di < fade) env = 0.5 - 0.5 * std::cos(M_PI * di / fade);
                const double tail = static_cast<double>(len) - di;
                if (tail < fade) env = std::min(env, 0.5 - 0.5 * std::cos(M_PI * tail / fade));
                w.samples[i0 + i] += static_cast<float>(
                    0.5 * env *
                    std::sin(phase + 2.0 * M_PI * freq * static_cast<double>(i) / cfg.sample_rate));
            }
        } else {
            // band-limited noise as a sum of random sinusoids
            constexpr int K = 24;
            double freqs[K], phases[K];
            for (int k = 0; k < K; ++k) {
                freqs[k] = rng.uniform(cls.f_lo, cls.f_hi);
                phases[k] = rng.uniform(0.0, 2.0 * M_PI);
            }
            const double amp = 0.2 * std::sqrt(2.0 / K);
            const double fade = 0.02 * cfg.sample_rate;  // 20 ms edges
            for (std::size_t i = 0; i < len && i0 + i < n; ++i) {
                double s = 0;
                for (int k = 0; k < K; ++k)
                    s += std::sin(phases[k] +
                                  2.0 * M_PI * freqs[k] * static_cast<double>(i) / cfg.sample_rate);
                double env = 1.0;
                const double di = static_cast<double>(i);
                if (di < fade) env = di / fade;
                const double tail = static_cast<double>(len) - di;
                if (tail < fade) env = std::min(env, tail / fade);
                w.samples[i0 + i] += static_cast<float>(amp * env * s);
            }
        }
        labels.events.push_back({cls.id, onset, onset + dur});
    }
    std::sort(labels.events.begin(), labels.events.end(),
              [](const Event& a, const Event& b) { return a.onset < b.onset; });
    return {std::move(w), std::move(labels)};
}

// ---------------------------------------------------------------------------
// dataset builder
// ---------------------------------------------------------------------------

struct DatasetManifest {
    int strong = 200;
    int weak = 200;
    int unlabeled = 400;
    int validation = 100;
    std::uint64_t seed = 0;
};

inline void build_dataset(const std::string& out_dir, const DatasetManifest& man,
                          const std::vector<ClassSpec>& classes = default_classes(),
                          const SynthConfig& synth = {}) {
    namespace fs = std::filesystem;
    if (fs::exists(out_dir + "/manifest.json"))
        throw DataError("build_dataset: output already exists: " + out_dir);
    fs::create_directories(out_dir + "/audio");

    std::vector<std::string> class_names;
    for (const auto& c : classes) class_names.push_back(c.name);

    nlohmann::json jman;
    jman["seed"] = man.seed;
    nlohmann::json jclasses = nlohmann::json::array();
    for (const auto& c : classes)
        jclasses.push_back({{"id", c.id},
                            {"name", c.name},
                            {"category", c.category == ClassCategory::transient ? "transient"
                                                                                : "stationary"}});
    jman["classes"] = jclasses;

    struct Split {
        const char* name;
        int count;
    };
    const Split splits[] = {{"strong", man.strong},
                            {"weak", man.weak},
                            {"unlabeled", man.unlabeled},
                            {"validation", man.validation}};
    std::uint64_t clip_index = 0;
    std::ofstream weak_file(out_dir + "/weak.tsv");
    for (const auto& sp : splits) {
        std::vector<EventList> all_events;
        nlohmann::json ids = nlohmann::json::array();
        for (int i = 0; i < sp.count; ++i, ++clip_index) {
            const std::string clip_id = std::string(sp.name) + "_" + std::to_string(i);
            auto [w, ev] = synth_clip(man.seed ^ splitmix64(clip_index + 1), classes, clip_id, synth);
            write_wav(out_dir + "/audio/" + clip_id + ".wav", w);
            ids.push_back(clip_id);
            if (std::string(sp.name) == "strong" || std::string(sp.name) == "validation")
                all_events.push_back(ev);
            if (std::string(sp.name) == "weak") {
                std::set<std::string> present;
                for (const auto& e : ev.events)
                    present.insert(class_names[static_cast<std::size_t>(e.class_id)]);
                weak_file << clip_id << "\t";
                bool first = true;
                for (const auto& c : present) {
                    weak_file << (first ? "" : ",") << c;
                    first = false;
                }
                weak_file << "\n";
            }
        }
        jman["splits"][sp.name] = ids;
        if (!all_events.empty())
            write_events_tsv(out_dir + "/" + sp.name + ".tsv", all_events, class_names);
    }
    std::ofstream mf(out_dir + "/manifest.json");
    mf << jman.dump(2) << "\n";
}

}  // namespace jitter
