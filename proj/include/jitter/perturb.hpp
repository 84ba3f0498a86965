#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "jitter/rng.hpp"

namespace jitter {

class PerturbError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// T x D matrix of frame features, row-major.
struct FrameSequence {
    int T = 0;
    int D = 0;
    std::vector<double> data;

    FrameSequence() = default;
    FrameSequence(int t, int d) : T(t), D(d), data(static_cast<std::size_t>(t) * d, 0.0) {}

    double* frame(int t) { return data.data() + static_cast<std::size_t>(t) * D; }
    const double* frame(int t) const { return data.data() + static_cast<std::size_t>(t) * D; }
    double& at(int t, int d) { return data[static_cast<std::size_t>(t) * D + d]; }
    double at(int t, int d) const { return data[static_cast<std::size_t>(t) * D + d]; }
};

struct BlockPartition {
    int block_size = 0;  // F
    int num_blocks = 0;  // B
};

enum class ShuffleMode { block, frame, multitask };

inline std::string to_string(ShuffleMode m) {
    switch (m) {
        case ShuffleMode::block: return "block";
        case ShuffleMode::frame: return "frame";
        case ShuffleMode::multitask: return "multitask";
    }
    return "?";
}

inline ShuffleMode shuffle_mode_from_string(const std::string& s) {
    if (s == "block") return ShuffleMode::block;
    if (s == "frame") return ShuffleMode::frame;
    if (s == "multitask") return ShuffleMode::multitask;
    throw std::invalid_argument("unknown shuffle mode: " + s);
}

struct ShuffleSpec {
    double p_b = 0.0;        // block shuffle rate
    double p_fb = 0.0;       // block-selection rate for frame shuffle
    double p_ff = 0.0;       // within-block frame rate
    double flip_rate = 0.0;  // probability of time-reversing a shuffled block
    double noise_scale = 0.0;
    ShuffleMode mode = ShuffleMode::multitask;
    std::uint64_t seed = 0;
    int block_size_block = 5;    // block size for block-level shuffle (B=20 at T=100)
    int block_size_frame = 20;   // block size for frame-level shuffle (B=5 at T=100)
    bool multitask_block_first = true;

    void validate() const {
        auto rate = [](double v, const char* name) {
            if (!(v >= 0.0 && v <= 1.0))
                throw std::invalid_argument(std::string(name) + " must be in [0,1]");
        };
        rate(p_b, "p_b");
        rate(p_fb, "p_fb");
        rate(p_ff, "p_ff");
        rate(flip_rate, "flip_rate");
        if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale))
            throw std::invalid_argument("noise_scale must be finite and >= 0");
    }
};

// Exact log of one perturbation; with the original sequence it reproduces the
// perturbed one bit-exactly, and invert() undoes the reordering.
struct PerturbationRecord {
    // block_perm[i] = source block placed at position i; fixes 0 and B-1
    std::vector<int> block_perm;
    // per-block frame permutation (frame shuffle only): perm[j] = source frame
    std::map<int, std::vector<int>> frame_perms;
    // per-block positions selected for permutation (frame shuffle only)
    std::map<int, std::vector<int>> frame_positions;
    std::vector<int> chosen_blocks;  // blocks selected for block shuffle / noise
    std::vector<int> flipped;        // destination slots whose content was reversed
    std::uint64_t noise_seed = 0;
    double noise_scale = 0.0;
    BlockPartition part;
};

inline BlockPartition partition(const FrameSequence& seq, int block_size) {
    if (block_size < 1) throw PerturbError("partition: block_size must be >= 1");
    if (seq.T % block_size != 0)
        throw PerturbError("partition: T=" + std::to_string(seq.T) +
                           " not divisible by block_size=" + std::to_string(block_size));
    return {block_size, seq.T / block_size};
}

// round-half-up of p*n, the convention for all selection counts
inline int selection_count(double p, int n) {
    return static_cast<int>(std::floor(p * n + 0.5));
}

namespace detail {

inline void copy_block(const FrameSequence& src, int src_block, FrameSequence& dst, int dst_block,
                       int F, bool reversed) {
    for (int f = 0; f < F; ++f) {
        const int sf = src_block * F + (reversed ? F - 1 - f : f);
        const int df = dst_block * F + f;
        std::copy(src.frame(sf), src.frame(sf) + src.D, dst.frame(df));
    }
}

}  // namespace detail

// Shuffle a fraction p_b of interior blocks (first and last are anchors),
// optionally time-reverse each chosen block with probability flip_rate, then
// add lambda-scaled unit Gaussian noise to every chosen block.
inline std::pair<FrameSequence, PerturbationRecord> block_shuffle(const FrameSequence& seq,
                                                                 const BlockPartition& part,
                                                                 double p_b, double flip_rate,
                                                                 double noise_scale, Rng& rng) {
    const int B = part.num_blocks, F = part.block_size;
    if (B < 3) throw PerturbError("block_shuffle: need B >= 3 (two anchors + interior)");
    PerturbationRecord rec;
    rec.part = part;
    rec.noise_scale = noise_scale;
    rec.block_perm.resize(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) rec.block_perm[static_cast<std::size_t>(i)] = i;

    const int k = std::min(selection_count(p_b, B), B - 2);
    std::vector<int> interior;
    if (k > 0) {
        auto picks = rng.sample_without_replacement(B - 2, k);
        for (int v : picks) interior.push_back(v + 1);  // interior indices 1..B-2
        std::sort(interior.begin(), interior.end());
        auto perm = rng.permutation(k);
        for (int i = 0; i < k; ++i)
            rec.block_perm[static_cast<std::size_t>(interior[static_cast<std::size_t>(i)])] =
                interior[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        rec.chosen_blocks = interior;
        for (int slot : interior)
            if (rng.bernoulli(flip_rate)) rec.flipped.push_back(slot);
    }
    rec.noise_seed = rng.raw();

    FrameSequence out = seq;
    for (int slot : rec.chosen_blocks) {
        const bool flip = std::find(rec.flipped.begin(), rec.flipped.end(), slot) != rec.flipped.end();
        detail::copy_block(seq, rec.block_perm[static_cast<std::size_t>(slot)], out, slot, F, flip);
    }
    if (noise_scale > 0.0 && !rec.chosen_blocks.empty()) {
        Rng noise_rng(rec.noise_seed);
        for (int slot : rec.chosen_blocks)
            for (int f = 0; f < F; ++f) {
                double* row = out.frame(slot * F + f);
                for (int d = 0; d < seq.D; ++d) row[d] += noise_scale * noise_rng.gauss();
            }
    }
    return {std::move(out), std::move(rec)};
}

// Select m = round(p_fb * B) blocks (anchors included), and within each permute
// round(p_ff * F) frame positions among themselves; block order is unchanged.
inline std::pair<FrameSequence, PerturbationRecord> frame_shuffle(const FrameSequence& seq,
                                                                 const BlockPartition& part,
                                                                 double p_fb, double p_ff,
                                                                 Rng& rng) {
    const int B = part.num_blocks, F = part.block_size;
    if (F < 2) throw PerturbError("frame_shuffle: need F >= 2");
    PerturbationRecord rec;
    rec.part = part;
    rec.block_perm.resize(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) rec.block_perm[static_cast<std::size_t>(i)] = i;

    const int m = std::min(selection_count(p_fb, B), B);
    const int nf = std::min(selection_count(p_ff, F), F);
    std::vector<int> blocks = rng.sample_without_replacement(B, m);
    std::sort(blocks.begin(), blocks.end());
    FrameSequence out = seq;
    for (int b : blocks) {
        std::vector<int> perm(static_cast<std::size_t>(F));
        for (int f = 0; f < F; ++f) perm[static_cast<std::size_t>(f)] = f;
        if (nf >= 1) {
            std::vector<int> pos = rng.sample_without_replacement(F, nf);
            std::sort(pos.begin(), pos.end());
            auto p = rng.permutation(nf);
            for (int i = 0; i < nf; ++i)
                perm[static_cast<std::size_t>(pos[static_cast<std::size_t>(i)])] =
                    pos[static_cast<std::size_t>(p[static_cast<std::size_t>(i)])];
            rec.frame_positions[b] = std::move(pos);
        }
        for (int f = 0; f < F; ++f) {
            const int src = b * F + perm[static_cast<std::size_t>(f)];
            const int dst = b * F + f;
            if (src != dst) std::copy(seq.frame(src), seq.frame(src) + seq.D, out.frame(dst));
        }
        rec.frame_perms[b] = std::move(perm);
    }
    return {std::move(out), std::move(rec)};
}

struct ApplyResult {
    FrameSequence sequence;
    PerturbationRecord record;
    ShuffleMode applied;
};

// Mode dispatch; multitask alternates block/frame by iteration parity.
// Deterministic in (seq, spec, iteration).
inline ApplyResult apply(const FrameSequence& seq, const ShuffleSpec& spec, int iteration) {
    spec.validate();
    Rng rng(splitmix64(spec.seed ^ splitmix64(static_cast<std::uint64_t>(iteration) + 1)));
    ShuffleMode m = spec.mode;
    if (m == ShuffleMode::multitask) {
        const bool even = iteration % 2 == 0;
        m = (even == spec.multitask_block_first) ? ShuffleMode::block : ShuffleMode::frame;
    }
    if (m == ShuffleMode::block) {
        auto part = partition(seq, spec.block_size_block);
        auto [out, rec] = block_shuffle(seq, part, spec.p_b, spec.flip_rate, spec.noise_scale, rng);
        return {std::move(out), std::move(rec), ShuffleMode::block};
    }
    auto part = partition(seq, spec.block_size_frame);
    auto [out, rec] = frame_shuffle(seq, part, spec.p_fb, spec.p_ff, rng);
    return {std::move(out), std::move(rec), ShuffleMode::frame};
}

// Undo the reordering described by the record: inverse frame permutations,
// un-flip, inverse block permutation. Injected noise (if any) stays with the
// frames it was added to.
inline FrameSequence invert(const FrameSequence& perturbed, const PerturbationRecord& rec) {
    const int B = rec.part.num_blocks, F = rec.part.block_size;
    if (perturbed.T != B * F)
        throw PerturbError("invert: sequence length " + std::to_string(perturbed.T) +
                           " does not match record partition " + std::to_string(B * F));
    FrameSequence step1 = perturbed;
    // inverse frame permutations (frame-level records)
    for (const auto& [b, perm] : rec.frame_perms) {
        for (int f = 0; f < F; ++f) {
            const int src_pos = perm[static_cast<std::size_t>(f)];
            std::copy(perturbed.frame(b * F + f), perturbed.frame(b * F + f) + perturbed.D,
                      step1.frame(b * F + src_pos));
        }
    }
    // un-flip, then inverse block permutation
    FrameSequence out = step1;
    for (int slot = 0; slot < B; ++slot) {
        const int src = rec.block_perm[static_cast<std::size_t>(slot)];
        if (src == slot && std::find(rec.flipped.begin(), rec.flipped.end(), slot) == rec.flipped.end())
            continue;
        const bool flip =
            std::find(rec.flipped.begin(), rec.flipped.end(), slot) != rec.flipped.end();
        detail::copy_block(step1, slot, out, src, F, flip);
    }
    return out;
}

}  // namespace jitter
