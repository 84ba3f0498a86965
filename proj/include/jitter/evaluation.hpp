#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace jitter {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Event {
    int class_id = 0;
    double onset = 0.0;
    double offset = 0.0;
};

struct EventList {
    std::string clip_id;
    std::vector<Event> events;
};

struct PSDSParams {
    double dtc = 0.7;       // detection-tolerance criterion ratio
    double gtc = 0.7;       // ground-truth-tolerance ratio
    double alpha_st = 1.0;  // cross-class TPR variance penalty
    double e_max = 100.0;   // max eFPR, per hour
};

// frame-wise probability matrix for one clip, T x C row-major
struct ProbGrid {
    int T = 0;
    int C = 0;
    std::vector<double> data;

    ProbGrid() = default;
    ProbGrid(int t, int c) : T(t), C(c), data(static_cast<std::size_t>(t) * c, 0.0) {}
    double& at(int t, int c) { return data[static_cast<std::size_t>(t) * C + c]; }
    double at(int t, int c) const { return data[static_cast<std::size_t>(t) * C + c]; }
};

// cap frame-level activity by clip-level confidence, element-wise min
inline ProbGrid weak_mask(const ProbGrid& strong, const std::vector<double>& weak) {
    if (static_cast<int>(weak.size()) != strong.C)
        throw DataError("weak_mask: class count mismatch");
    ProbGrid out = strong;
    for (int t = 0; t < out.T; ++t)
        for (int c = 0; c < out.C; ++c)
            out.at(t, c) = std::min(strong.at(t, c), weak[static_cast<std::size_t>(c)]);
    return out;
}

// hard-gating alternative: suppress class c entirely when weak[c] < 0.5
inline ProbGrid weak_mask_hard(const ProbGrid& strong, const std::vector<double>& weak) {
    ProbGrid out = strong;
    for (int c = 0; c < out.C; ++c)
        if (weak[static_cast<std::size_t>(c)] < 0.5)
            for (int t = 0; t < out.T; ++t) out.at(t, c) = 0.0;
    return out;
}

// Sliding median with edge-replication padding; window w covers offsets
// [-floor((w-1)/2), floor(w/2)]. Even window medians average the two middle
// values.
inline std::vector<double> median_filter_1d(const std::vector<double>& x, int w) {
    const int T = static_cast<int>(x.size());
    if (w > T) throw DataError("median_filter: window " + std::to_string(w) +
                               " exceeds sequence length " + std::to_string(T));
    if (w <= 1) return x;
    std::vector<double> out(static_cast<std::size_t>(T));
    std::vector<double> win(static_cast<std::size_t>(w));
    const int lo = -(w - 1) / 2;
    for (int t = 0; t < T; ++t) {
        for (int i = 0; i < w; ++i) {
            const int s = std::clamp(t + lo + i, 0, T - 1);
            win[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(s)];
        }
        std::sort(win.begin(), win.end());
        out[static_cast<std::size_t>(t)] =
            w % 2 ? win[static_cast<std::size_t>(w / 2)]
                  : 0.5 * (win[static_cast<std::size_t>(w / 2 - 1)] +
                           win[static_cast<std::size_t>(w / 2)]);
    }
    return out;
}

inline ProbGrid median_filter(const ProbGrid& strong, const std::vector<int>& windows) {
    if (static_cast<int>(windows.size()) != strong.C)
        throw DataError("median_filter: need one window per class");
    ProbGrid out = strong;
    std::vector<double> col(static_cast<std::size_t>(strong.T));
    for (int c = 0; c < strong.C; ++c) {
        for (int t = 0; t < strong.T; ++t) col[static_cast<std::size_t>(t)] = strong.at(t, c);
        auto f = median_filter_1d(col, windows[static_cast<std::size_t>(c)]);
        for (int t = 0; t < strong.T; ++t) out.at(t, c) = f[static_cast<std::size_t>(t)];
    }
    return out;
}

// threshold-and-merge decoding at 0.1 s per frame; maximal runs of frames
// >= tau become events, no gap merging
inline EventList decode(const ProbGrid& strong, double tau, const std::string& clip_id = "",
                        double frame_seconds = 0.1) {
    EventList out;
    out.clip_id = clip_id;
    for (int c = 0; c < strong.C; ++c) {
        int run_start = -1;
        for (int t = 0; t <= strong.T; ++t) {
            const bool active = t < strong.T && strong.at(t, c) >= tau;
            if (active && run_start < 0) run_start = t;
            if (!active && run_start >= 0) {
                out.events.push_back({c, run_start * frame_seconds, t * frame_seconds});
                run_start = -1;
            }
        }
    }
    return out;
}

namespace detail {

// total length of the union of intervals
inline double union_length(std::vector<std::pair<double, double>> iv) {
    std::sort(iv.begin(), iv.end());
    double total = 0.0, hi = -1e300;
    double lo = 0.0;
    bool open = false;
    for (const auto& [a, b] : iv) {
        if (!open || a > hi) {
            if (open) total += hi - lo;
            lo = a;
            hi = b;
            open = true;
        } else {
            hi = std::max(hi, b);
        }
    }
    if (open) total += hi - lo;
    return total;
}

inline double intersect_length(double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

}  // namespace detail

struct MatchCounts {
    std::vector<int> tp;  // detected ground truths, per class
    std::vector<int> fp;  // invalid detections, per class
    std::vector<int> gt;  // ground truths, per class
};

// Intersection-based matching: a detection is valid when the fraction of its
// duration intersecting same-class ground truth is >= dtc; a ground truth is
// detected when the fraction of its duration covered by valid detections is
// >= gtc.
inline MatchCounts intersection_match(const EventList& dets, const EventList& gts,
                                      const PSDSParams& params, int num_classes) {
    for (const auto& e : dets.events)
        if (!(e.onset < e.offset)) throw DataError("intersection_match: malformed detection");
    for (const auto& e : gts.events)
        if (!(e.onset < e.offset)) throw DataError("intersection_match: malformed ground truth");
    MatchCounts m;
    m.tp.assign(static_cast<std::size_t>(num_classes), 0);
    m.fp.assign(static_cast<std::size_t>(num_classes), 0);
    m.gt.assign(static_cast<std::size_t>(num_classes), 0);
    for (const auto& g : gts.events) ++m.gt[static_cast<std::size_t>(g.class_id)];

    std::vector<char> valid(dets.events.size(), 0);
    for (std::size_t i = 0; i < dets.events.size(); ++i) {
        const auto& d = dets.events[i];
        std::vector<std::pair<double, double>> pieces;
        for (const auto& g : gts.events)
            if (g.class_id == d.class_id) {
                const double a = std::max(d.onset, g.onset), b = std::min(d.offset, g.offset);
                if (b > a) pieces.push_back({a, b});
            }
        const double covered = detail::union_length(pieces);
        if (covered / (d.offset - d.onset) >= params.dtc)
            valid[i] = 1;
        else
            ++m.fp[static_cast<std::size_t>(d.class_id)];
    }
    for (const auto& g : gts.events) {
        std::vector<std::pair<double, double>> pieces;
        for (std::size_t i = 0; i < dets.events.size(); ++i) {
            if (!valid[i]) continue;
            const auto& d = dets.events[i];
            if (d.class_id != g.class_id) continue;
            const double a = std::max(d.onset, g.onset), b = std::min(d.offset, g.offset);
            if (b > a) pieces.push_back({a, b});
        }
        if (detail::union_length(pieces) / (g.offset - g.onset) >= params.gtc)
            ++m.tp[static_cast<std::size_t>(g.class_id)];
    }
    return m;
}

struct RocPoint {
    double tau = 0.0;
    double efpr = 0.0;
    double etpr = 0.0;
};

struct PsdsReport {
    double psds = 0.0;
    std::vector<RocPoint> roc;
    // per-class TPR at reference thresholds 0.25 / 0.5 / 0.75
    std::map<std::string, std::vector<double>> tpr_at;
};

// One validation clip, post-processed probabilities plus ground truth.
struct ScoredClip {
    ProbGrid probs;
    EventList truth;
};

inline std::vector<double> threshold_sweep(int n) {
    std::vector<double> taus(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        taus[static_cast<std::size_t>(i)] = static_cast<double>(i + 1) / (n + 1);
    return taus;
}

// PSDS1: per threshold, dataset-wide per-class TPR and mean per-class FP/hour;
// eTPR = mean TPR - alpha_st * std TPR (clamped at 0); score is the area under
// the monotone upper envelope of (eFPR, eTPR) on [0, e_max], divided by e_max.
inline PsdsReport psds(const std::vector<ScoredClip>& clips, const PSDSParams& params,
                       int num_classes, double total_hours, int n_thresholds = 50) {
    std::size_t total_gt = 0;
    for (const auto& c : clips) total_gt += c.truth.events.size();
    if (total_gt == 0) throw DataError("psds: empty ground truth, score undefined");
    PsdsReport report;
    const auto taus = threshold_sweep(n_thresholds);
    const std::vector<double> refs = {0.25, 0.5, 0.75};
    for (double tau : taus) {
        std::vector<long> tp(static_cast<std::size_t>(num_classes), 0),
            fp(static_cast<std::size_t>(num_classes), 0), gt(static_cast<std::size_t>(num_classes), 0);
        for (const auto& clip : clips) {
            auto dets = decode(clip.probs, tau, clip.truth.clip_id);
            auto m = intersection_match(dets, clip.truth, params, num_classes);
            for (int c = 0; c < num_classes; ++c) {
                tp[static_cast<std::size_t>(c)] += m.tp[static_cast<std::size_t>(c)];
                fp[static_cast<std::size_t>(c)] += m.fp[static_cast<std::size_t>(c)];
                gt[static_cast<std::size_t>(c)] += m.gt[static_cast<std::size_t>(c)];
            }
        }
        double tpr_sum = 0, tpr_sq = 0, fpr_sum = 0;
        int active_classes = 0;
        std::vector<double> tprs(static_cast<std::size_t>(num_classes), 0.0);
        for (int c = 0; c < num_classes; ++c) {
            double tpr = 0.0;
            if (gt[static_cast<std::size_t>(c)] > 0) {
                tpr = static_cast<double>(tp[static_cast<std::size_t>(c)]) /
                      static_cast<double>(gt[static_cast<std::size_t>(c)]);
                ++active_classes;
            }
            tprs[static_cast<std::size_t>(c)] = tpr;
            tpr_sum += tpr;
            tpr_sq += tpr * tpr;
            fpr_sum += static_cast<double>(fp[static_cast<std::size_t>(c)]) / total_hours;
        }
        const int n = active_classes > 0 ? active_classes : num_classes;
        // mean/std over classes that have ground truth
        double mean_tpr = 0, var_tpr = 0;
        {
            double s = 0;
            for (int c = 0; c < num_classes; ++c)
                if (gt[static_cast<std::size_t>(c)] > 0) s += tprs[static_cast<std::size_t>(c)];
            mean_tpr = s / n;
            double vq = 0;
            for (int c = 0; c < num_classes; ++c)
                if (gt[static_cast<std::size_t>(c)] > 0) {
                    const double d = tprs[static_cast<std::size_t>(c)] - mean_tpr;
                    vq += d * d;
                }
            var_tpr = vq / n;
        }
        const double etpr = std::max(0.0, mean_tpr - params.alpha_st * std::sqrt(var_tpr));
        const double efpr = fpr_sum / num_classes;
        report.roc.push_back({tau, efpr, etpr});
        for (std::size_t r = 0; r < refs.size(); ++r)
            if (std::abs(tau - refs[r]) < 0.5 / (n_thresholds + 1)) {
                std::ostringstream key;
                key << "tau_" << refs[r];
                if (!report.tpr_at.count(key.str())) report.tpr_at[key.str()] = tprs;
            }
    }
    // monotone upper envelope: f(x) = max{ etpr_i : efpr_i <= x }
    auto pts = report.roc;
    std::sort(pts.begin(), pts.end(), [](const RocPoint& a, const RocPoint& b) {
        return a.efpr < b.efpr;
    });
    double area = 0.0, best = 0.0, prev_x = 0.0;
    for (const auto& p : pts) {
        const double x = std::min(p.efpr, params.e_max);
        if (x > prev_x) {
            area += best * (x - prev_x);
            prev_x = x;
        }
        if (p.efpr <= params.e_max) best = std::max(best, p.etpr);
    }
    area += best * (params.e_max - prev_x);
    report.psds = area / params.e_max;
    return report;
}

// PSDS of a fixed detection set (one operating point): the envelope is a
// single step at that point's eFPR.
inline PsdsReport psds_single(const std::vector<EventList>& dets, const std::vector<EventList>& gts,
                              const PSDSParams& params, int num_classes, double total_hours) {
    std::map<std::string, const EventList*> det_by_clip;
    for (const auto& d : dets) det_by_clip[d.clip_id] = &d;
    std::vector<long> tp(static_cast<std::size_t>(num_classes), 0),
        fp(static_cast<std::size_t>(num_classes), 0), gt(static_cast<std::size_t>(num_classes), 0);
    std::size_t total_gt = 0;
    for (const auto& g : gts) {
        total_gt += g.events.size();
        EventList empty;
        empty.clip_id = g.clip_id;
        const EventList* d = det_by_clip.count(g.clip_id) ? det_by_clip.at(g.clip_id) : &empty;
        auto m = intersection_match(*d, g, params, num_classes);
        for (int c = 0; c < num_classes; ++c) {
            tp[static_cast<std::size_t>(c)] += m.tp[static_cast<std::size_t>(c)];
            fp[static_cast<std::size_t>(c)] += m.fp[static_cast<std::size_t>(c)];
            gt[static_cast<std::size_t>(c)] += m.gt[static_cast<std::size_t>(c)];
        }
    }
    if (total_gt == 0) throw DataError("psds: empty ground truth, score undefined");
    double s = 0, fpr_sum = 0;
    int n = 0;
    std::vector<double> tprs;
    for (int c = 0; c < num_classes; ++c) {
        if (gt[static_cast<std::size_t>(c)] > 0) {
            const double tpr = static_cast<double>(tp[static_cast<std::size_t>(c)]) /
                               static_cast<double>(gt[static_cast<std::size_t>(c)]);
            s += tpr;
            tprs.push_back(tpr);
            ++n;
        }
        fpr_sum += static_cast<double>(fp[static_cast<std::size_t>(c)]) / total_hours;
    }
    const double mean_tpr = s / n;
    double vq = 0;
    for (double v : tprs) vq += (v - mean_tpr) * (v - mean_tpr);
    const double std_tpr = std::sqrt(vq / n);
    const double etpr = std::max(0.0, mean_tpr - params.alpha_st * std_tpr);
    const double efpr = fpr_sum / num_classes;
    PsdsReport r;
    r.roc.push_back({0.5, efpr, etpr});
    r.psds = efpr >= params.e_max ? 0.0 : etpr * (params.e_max - efpr) / params.e_max;
    return r;
}

// ---------------------------------------------------------------------------
// file formats: tab-separated events, weak labels, JSON score report
// ---------------------------------------------------------------------------

inline void write_events_tsv(const std::string& path, const std::vector<EventList>& lists,
                             const std::vector<std::string>& class_names) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open " + path);
    for (const auto& l : lists)
        for (const auto& e : l.events)
            f << l.clip_id << "\t" << e.onset << "\t" << e.offset << "\t"
              << class_names[static_cast<std::size_t>(e.class_id)] << "\n";
}

inline std::vector<EventList> read_events_tsv(const std::string& path,
                                              const std::map<std::string, int>& class_ids) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path);
    std::map<std::string, EventList> by_clip;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string clip, cls;
        double on, off;
        if (!(is >> clip >> on >> off >> cls)) throw DataError("malformed event line: " + line);
        auto it = class_ids.find(cls);
        if (it == class_ids.end()) throw DataError("unknown class in events file: " + cls);
        auto& l = by_clip[clip];
        l.clip_id = clip;
        l.events.push_back({it->second, on, off});
    }
    std::vector<EventList> out;
    for (auto& [k, v] : by_clip) out.push_back(std::move(v));
    return out;
}

inline nlohmann::json report_to_json(const PsdsReport& r) {
    nlohmann::json j;
    j["psds1"] = r.psds;
    j["tpr_at"] = r.tpr_at;
    nlohmann::json roc = nlohmann::json::array();
    for (const auto& p : r.roc) roc.push_back({{"tau", p.tau}, {"efpr", p.efpr}, {"etpr", p.etpr}});
    j["roc"] = roc;
    return j;
}

}  // namespace jitter
