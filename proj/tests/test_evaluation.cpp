#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "jitter/evaluation.hpp"
#include "jitter/rng.hpp"
#include "reference_psds.hpp"

using namespace jitter;

namespace {

std::vector<double> naive_median(const std::vector<double>& x, int w) {
    const int T = static_cast<int>(x.size());
    std::vector<double> out(static_cast<std::size_t>(T));
    const int lo = -(w - 1) / 2;
    for (int t = 0; t < T; ++t) {
        std::vector<double> win;
        for (int i = 0; i < w; ++i)
            win.push_back(x[static_cast<std::size_t>(std::clamp(t + lo + i, 0, T - 1))]);
        std::sort(win.begin(), win.end());
        out[static_cast<std::size_t>(t)] =
            w % 2 ? win[static_cast<std::size_t>(w / 2)]
                  : 0.5 * (win[static_cast<std::size_t>(w / 2 - 1)] +
                           win[static_cast<std::size_t>(w / 2)]);
    }
    return out;
}

EventList events(std::initializer_list<Event> evs, const std::string& id = "c") {
    EventList l;
    l.clip_id = id;
    l.events = evs;
    return l;
}

}  // namespace

TEST_CASE("weak_mask caps strong activity by clip confidence") {
    ProbGrid strong(3, 2);
    for (auto& v : strong.data) v = 0.9;
    auto all = weak_mask(strong, {1.0, 0.0});
    for (int t = 0; t < 3; ++t) {
        REQUIRE(all.at(t, 0) == 0.9);
        REQUIRE(all.at(t, 1) == 0.0);
    }
    auto mid = weak_mask(strong, {0.3, 0.3});
    for (double v : mid.data) REQUIRE(v == 0.3);
    REQUIRE_THROWS_AS(weak_mask(strong, {0.5}), DataError);
}

TEST_CASE("weak_mask never increases any probability") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        ProbGrid strong(20, 4);
        for (auto& v : strong.data) v = rng.uniform();
        std::vector<double> weak(4);
        for (auto& v : weak) v = rng.uniform();
        auto out = weak_mask(strong, weak);
        for (int t = 0; t < 20; ++t)
            for (int c = 0; c < 4; ++c) REQUIRE(out.at(t, c) <= strong.at(t, c));
    }
}

TEST_CASE("hard weak mask gates whole classes at 0.5") {
    ProbGrid strong(2, 2);
    for (auto& v : strong.data) v = 0.8;
    auto out = weak_mask_hard(strong, {0.49, 0.51});
    REQUIRE(out.at(0, 0) == 0.0);
    REQUIRE(out.at(0, 1) == 0.8);
}

TEST_CASE("median filter basics") {
    std::vector<double> constant(30, 0.7);
    REQUIRE(median_filter_1d(constant, 5) == constant);

    std::vector<double> spike(20, 0.0);
    spike[10] = 1.0;
    auto f = median_filter_1d(spike, 5);
    for (double v : f) REQUIRE(v == 0.0);

    REQUIRE_THROWS_AS(median_filter_1d(std::vector<double>(3, 0.0), 5), DataError);
}

TEST_CASE("median filter equals the sort-based oracle for windows 5 and 20") {
    Rng rng(2);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> x(100);
        for (auto& v : x) v = rng.bernoulli(0.4) ? 1.0 : rng.uniform();
        REQUIRE(median_filter_1d(x, 5) == naive_median(x, 5));
        REQUIRE(median_filter_1d(x, 20) == naive_median(x, 20));
    }
}

TEST_CASE("median filter window-5 idempotency: the naive claim is false; "
          "repetition converges") {
    // Counterexample to idempotency on arbitrary binary sequences:
    // 1 1 0 0 1 1 0 0 1 1 changes again on the second pass.
    std::vector<double> cx = {1, 1, 0, 0, 1, 1, 0, 0, 1, 1};
    auto p1 = median_filter_1d(cx, 5);
    auto p2 = median_filter_1d(p1, 5);
    REQUIRE(p1 != p2);  // documents the defect in the naive idempotency claim

    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x(60);
        for (auto& v : x) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
        // corrected property 1: repeated filtering reaches a fixed point
        auto cur = x;
        bool fixed = false;
        for (int it = 0; it < 60 && !fixed; ++it) {
            auto nxt = median_filter_1d(cur, 5);
            fixed = nxt == cur;
            cur = nxt;
        }
        REQUIRE(fixed);
        // corrected property 2: binary signals whose runs all have length >= 3
        // are genuine fixed points of the window-5 filter
        std::vector<double> runs;
        Rng rr(100 + static_cast<std::uint64_t>(trial));
        double val = rr.bernoulli(0.5) ? 1.0 : 0.0;
        while (runs.size() < 40) {
            const int len = 3 + static_cast<int>(rr.index(4));
            for (int i = 0; i < len; ++i) runs.push_back(val);
            val = 1.0 - val;
        }
        REQUIRE(median_filter_1d(runs, 5) == runs);
    }
}

TEST_CASE("per-class median windows") {
    ProbGrid g(25, 2);
    Rng rng(4);
    for (auto& v : g.data) v = rng.uniform();
    auto out = median_filter(g, {5, 20});
    for (int c = 0; c < 2; ++c) {
        std::vector<double> col(25);
        for (int t = 0; t < 25; ++t) col[static_cast<std::size_t>(t)] = g.at(t, c);
        auto f = naive_median(col, c == 0 ? 5 : 20);
        for (int t = 0; t < 25; ++t) REQUIRE(out.at(t, c) == f[static_cast<std::size_t>(t)]);
    }
    REQUIRE_THROWS_AS(median_filter(g, {5}), DataError);
}

TEST_CASE("decode thresholds maximal runs at 0.1 s per frame") {
    ProbGrid g(100, 1);
    REQUIRE(decode(g, 0.5).events.empty());

    for (int t = 10; t < 20; ++t) g.at(t, 0) = 0.9;
    auto one = decode(g, 0.5);
    REQUIRE(one.events.size() == 1);
    REQUIRE(one.events[0].onset == 1.0);
    REQUIRE(one.events[0].offset == 2.0);

    g.at(15, 0) = 0.0;  // split by a single inactive frame: two events, no merging
    auto two = decode(g, 0.5);
    REQUIRE(two.events.size() == 2);
}

TEST_CASE("intersection matching hand examples") {
    PSDSParams p;  // dtc = gtc = 0.7
    auto exact = intersection_match(events({{0, 1.0, 2.0}}), events({{0, 1.0, 2.0}}), p, 1);
    REQUIRE(exact.tp[0] == 1);
    REQUIRE(exact.fp[0] == 0);

    auto off = intersection_match(events({{0, 0.0, 1.0}}), events({{0, 0.5, 1.5}}), p, 1);
    REQUIRE(off.tp[0] == 0);
    REQUIRE(off.fp[0] == 1);

    // two detections each fully inside one ground truth; union covers it all
    auto halves = intersection_match(events({{0, 1.0, 1.5}, {0, 1.5, 2.0}}),
                                     events({{0, 1.0, 2.0}}), p, 1);
    REQUIRE(halves.tp[0] == 1);
    REQUIRE(halves.fp[0] == 0);

    REQUIRE_THROWS_AS(intersection_match(events({{0, 2.0, 1.0}}), events({}), p, 1), DataError);
    REQUIRE_THROWS_AS(intersection_match(events({}), events({{0, 1.0, 1.0}}), p, 1), DataError);
}

TEST_CASE("intersection matching equals the brute-force matcher on 1000 random scenes") {
    PSDSParams p;
    Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        auto rand_events = [&](int max_n) {
            EventList l;
            l.clip_id = "r";
            const int n = static_cast<int>(rng.index(static_cast<std::size_t>(max_n) + 1));
            for (int i = 0; i < n; ++i) {
                const double onset = rng.uniform(0.0, 9.0);
                const double dur = rng.uniform(0.05, 10.0 - onset);
                l.events.push_back({static_cast<int>(rng.index(3)), onset, onset + dur});
            }
            return l;
        };
        auto dets = rand_events(5);
        auto gts = rand_events(5);
        auto fast = intersection_match(dets, gts, p, 3);
        auto ref = refpsds::match(dets, gts, p, 3);
        REQUIRE(fast.tp == ref.tp);
        REQUIRE(fast.fp == ref.fp);
        REQUIRE(fast.gt == ref.gt);
    }
}

TEST_CASE("psds endpoints: perfect detector 1.0, silent detector 0.0") {
    PSDSParams p;
    std::vector<ScoredClip> clips;
    for (int i = 0; i < 3; ++i) {
        ScoredClip c;
        c.probs = ProbGrid(100, 2);
        c.truth.clip_id = "clip" + std::to_string(i);
        c.truth.events = {{0, 1.0, 2.0}, {1, 4.0, 6.0}};
        for (const auto& e : c.truth.events)
            for (int t = static_cast<int>(e.onset * 10); t < static_cast<int>(e.offset * 10); ++t)
                c.probs.at(t, e.class_id) = 1.0;
        clips.push_back(std::move(c));
    }
    const double hours = 3.0 * 10.0 / 3600.0;
    REQUIRE(psds(clips, p, 2, hours).psds == 1.0);

    for (auto& c : clips) c.probs = ProbGrid(100, 2);
    REQUIRE(psds(clips, p, 2, hours).psds == 0.0);

    for (auto& c : clips) c.truth.events.clear();
    REQUIRE_THROWS_AS(psds(clips, p, 2, hours), DataError);
}

TEST_CASE("psds matches the brute-force reference on the hand scenario") {
    // 3 clips, 2 classes, one systematically false-positive class
    PSDSParams p;
    Rng rng(6);
    std::vector<ScoredClip> clips;
    for (int i = 0; i < 3; ++i) {
        ScoredClip c;
        c.probs = ProbGrid(100, 2);
        c.truth.clip_id = "h" + std::to_string(i);
        c.truth.events = {{0, 2.0, 3.0}};
        for (int t = 20; t < 30; ++t) c.probs.at(t, 0) = 0.6 + 0.1 * i;
        // class 1 fires with varying confidence but has no ground truth events
        for (int t = 50; t < 70; ++t) c.probs.at(t, 1) = 0.3 + 0.2 * i;
        clips.push_back(std::move(c));
    }
    const double hours = 3.0 * 10.0 / 3600.0;
    const auto fast = psds(clips, p, 2, hours);
    const double ref = refpsds::psds(clips, p, 2, hours);
    REQUIRE(std::abs(fast.psds - ref) < 1e-9);
}

TEST_CASE("psds matches the reference on random scored clips") {
    PSDSParams p;
    Rng rng(7);
    for (int scene = 0; scene < 20; ++scene) {
        std::vector<ScoredClip> clips;
        for (int i = 0; i < 4; ++i) {
            ScoredClip c;
            c.probs = ProbGrid(100, 3);
            c.truth.clip_id = "s" + std::to_string(i);
            for (auto& v : c.probs.data) v = rng.bernoulli(0.2) ? rng.uniform() : 0.0;
            const int n = static_cast<int>(rng.index(4));
            for (int e = 0; e < n; ++e) {
                const double onset = rng.uniform(0.0, 8.0);
                c.truth.events.push_back(
                    {static_cast<int>(rng.index(3)), onset, onset + rng.uniform(0.2, 2.0)});
            }
            clips.push_back(std::move(c));
        }
        std::size_t total_gt = 0;
        for (const auto& c : clips) total_gt += c.truth.events.size();
        if (total_gt == 0) continue;
        const double hours = 4.0 * 10.0 / 3600.0;
        REQUIRE(std::abs(psds(clips, p, 3, hours).psds -
                         refpsds::psds(clips, p, 3, hours)) < 1e-9);
    }
}

TEST_CASE("psds is monotone under strictly improved detections") {
    PSDSParams p;
    std::vector<ScoredClip> clips(1);
    clips[0].probs = ProbGrid(100, 2);
    clips[0].truth.clip_id = "m";
    clips[0].truth.events = {{0, 1.0, 2.0}, {1, 3.0, 4.0}};
    for (int t = 10; t < 20; ++t) clips[0].probs.at(t, 0) = 0.9;
    const double hours = 10.0 / 3600.0;
    const double before = psds(clips, p, 2, hours).psds;
    // add a clean true positive for the second class, no new false positives
    for (int t = 30; t < 40; ++t) clips[0].probs.at(t, 1) = 0.9;
    const double after = psds(clips, p, 2, hours).psds;
    REQUIRE(after >= before);
    REQUIRE(after > 0.0);
}

TEST_CASE("psds_single scores one operating point; empty detections score 0") {
    PSDSParams p;
    std::vector<EventList> gts = {events({{0, 1.0, 2.0}}, "a"), events({{1, 3.0, 5.0}}, "b")};
    REQUIRE(psds_single({}, gts, p, 2, 20.0 / 3600.0).psds == 0.0);
    std::vector<EventList> perfect = {events({{0, 1.0, 2.0}}, "a"), events({{1, 3.0, 5.0}}, "b")};
    REQUIRE(psds_single(perfect, gts, p, 2, 20.0 / 3600.0).psds == 1.0);
}

TEST_CASE("events TSV round trip") {
    const std::string path = "events_rt.tsv";
    std::vector<EventList> lists = {events({{0, 1.25, 2.5}, {1, 0.0, 0.5}}, "clip_a"),
                                    events({{1, 3.0, 4.0}}, "clip_b")};
    write_events_tsv(path, lists, {"alarm", "hiss"});
    auto back = read_events_tsv(path, {{"alarm", 0}, {"hiss", 1}});
    REQUIRE(back.size() == 2);
    REQUIRE(back[0].clip_id == "clip_a");
    REQUIRE(back[0].events.size() == 2);
    REQUIRE(back[0].events[0].onset == 1.25);
    REQUIRE(back[1].events[0].class_id == 1);
    REQUIRE_THROWS_AS(read_events_tsv(path, {{"alarm", 0}}), DataError);  // unknown class
    std::filesystem::remove(path);
}

TEST_CASE("report JSON carries score, reference TPRs, and the ROC") {
    PsdsReport r;
    r.psds = 0.5;
    r.roc = {{0.1, 2.0, 0.6}};
    r.tpr_at["tau_0.5"] = {0.5, 0.7};
    auto j = report_to_json(r);
    REQUIRE(j.at("psds1") == 0.5);
    REQUIRE(j.at("roc").size() == 1);
    REQUIRE(j.at("tpr_at").at("tau_0.5").size() == 2);
}
