#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "jitter/dataset.hpp"
#include "jitter/model.hpp"
#include "jitter/perturb.hpp"
#include "jitter/tensor.hpp"

namespace jitter {

enum class Stage { none, pretrain, adapt, finetune };

inline std::string to_string(Stage s) {
    switch (s) {
        case Stage::none: return "none";
        case Stage::pretrain: return "pretrain";
        case Stage::adapt: return "adapt";
        case Stage::finetune: return "finetune";
    }
    return "?";
}

class ScheduleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// frame-wise squared error summed over the whole sequence
inline TensorPtr rec_loss(const TensorPtr& pred, const TensorPtr& target) {
    require_same_shape(pred, target, "rec_loss");
    return sum_sq(sub(pred, target));
}

inline double rec_loss_normalized(const TensorPtr& loss, const TensorPtr& target) {
    return loss->data[0] / static_cast<double>(target->size());
}

// Reconstruction objective over both perturbed views of the same clip; used in
// parallel multitask mode (alternating mode computes one term per iteration).
inline TensorPtr jitter_loss(const TensorPtr& block_perturbed, const TensorPtr& frame_perturbed,
                             const TensorPtr& target, const Model& net) {
    auto rb = net.reconstruct(net.context_forward(block_perturbed));
    auto rf = net.reconstruct(net.context_forward(frame_perturbed));
    return add(rec_loss(rb, target), rec_loss(rf, target));
}

struct LossWeights {
    double w_weak = 0.5;
    double w_cons_max = 2.0;
    double ramp_frac = 0.2;  // linear ramp of the consistency weight

    double cons_weight(int step, int total_steps) const {
        const int ramp = std::max(1, static_cast<int>(ramp_frac * total_steps));
        return w_cons_max * std::min(1.0, static_cast<double>(step) / ramp);
    }
};

struct SedBatchItem {
    Prediction student;
    Prediction teacher;              // probabilities from the no-grad teacher forward
    TensorPtr strong_labels;         // 100 x C or null
    TensorPtr weak_labels;           // 1 x C or null
};

// B(S_P, l_s) on strong clips + w_W B(W_P, l_w) on weak clips
// + w_C [M(S_P, sg(S_P^T)) + M(W_P, sg(W_P^T))] on all clips
inline TensorPtr sed_loss(const std::vector<SedBatchItem>& batch, double w_weak, double w_cons) {
    TensorPtr loss = scalar(0.0);
    int n_strong = 0, n_weak = 0;
    TensorPtr strong_term = scalar(0.0), weak_term = scalar(0.0), cons_term = scalar(0.0);
    for (const auto& item : batch) {
        if (item.strong_labels) {
            strong_term = add(strong_term, bce_mean(item.student.strong, item.strong_labels));
            ++n_strong;
        }
        if (item.weak_labels) {
            weak_term = add(weak_term, bce_mean(item.student.weak, item.weak_labels));
            ++n_weak;
        }
        if (w_cons > 0.0 && item.teacher.strong) {
            cons_term = add(cons_term, mse_mean(item.student.strong, item.teacher.strong));
            cons_term = add(cons_term, mse_mean(item.student.weak, item.teacher.weak));
        }
    }
    if (n_strong > 0) loss = add(loss, scale(strong_term, 1.0 / n_strong));
    if (n_weak > 0) loss = add(loss, scale(weak_term, w_weak / n_weak));
    if (w_cons > 0.0 && !batch.empty())
        loss = add(loss, scale(cons_term, w_cons / static_cast<double>(batch.size())));
    return loss;
}

// ---------------------------------------------------------------------------
// optimizer and teacher
// ---------------------------------------------------------------------------

class AdamW {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 1e-4;

    void step(Model& model, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, t_);
        const double bc2 = 1.0 - std::pow(beta2, t_);
        for (auto& [name, p] : model.params) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            auto& st = moments_[name];
            if (st.m.size() != p->size()) {
                st.m.assign(p->size(), 0.0);
                st.v.assign(p->size(), 0.0);
            }
            for (std::size_t i = 0; i < p->size(); ++i) {
                const double g = p->grad[i];
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                const double mh = st.m[i] / bc1;
                const double vh = st.v[i] / bc2;
                p->data[i] -= lr * (mh / (std::sqrt(vh) + eps) + weight_decay * p->data[i]);
            }
        }
    }

private:
    struct State {
        std::vector<double> m, v;
    };
    std::map<std::string, State> moments_;
    long t_ = 0;
};

// theta_T <- decay * theta_T + (1 - decay) * theta
inline void ema_update(Model& teacher, const Model& student, double decay) {
    for (auto& [name, tp] : teacher.params) {
        auto it = student.params.find(name);
        if (it == student.params.end() || it->second->size() != tp->size())
            throw std::runtime_error("ema_update: parameter manifest mismatch at " + name);
        const auto& sp = it->second;
        for (std::size_t i = 0; i < tp->size(); ++i)
            tp->data[i] = decay * tp->data[i] + (1.0 - decay) * sp->data[i];
    }
    if (teacher.params.size() != student.params.size())
        throw std::runtime_error("ema_update: parameter manifest mismatch");
}

// ---------------------------------------------------------------------------
// augmentations (fine-tuning stages only, on spectrograms before encoding)
// ---------------------------------------------------------------------------

struct AugmentationConfig {
    int frame_shift_max = 15;      // spectral frames
    int frame_shift_stride = 5;    // snap shifts to the encoder stride so labels stay aligned
    double mixup_alpha = 0.2;
    double mixup_prob = 0.5;
    int time_mask_max = 50;        // spectral frames
    int filter_bands = 4;
    double filter_strength = 0.3;  // additive band offsets in standardized log-mel units
    int freq_distort_max = 2;      // max mel-bin displacement of the warp
};

// one clip's features and labels during training
struct BatchClip {
    std::vector<double> spec;    // frames x bins
    std::vector<double> strong;  // steps x C, empty when unlabeled
    std::vector<double> weak;    // C, empty when unlabeled
    int frames = 500, bins = 128, steps = 100, classes = 10;
};

inline BatchClip make_batch_clip(const LoadedClip& clip, int frames, int bins, int steps,
                                 int classes) {
    BatchClip b;
    b.frames = frames;
    b.bins = bins;
    b.steps = steps;
    b.classes = classes;
    b.spec.assign(clip.spec.begin(), clip.spec.end());
    if (clip.has_strong) b.strong = clip.strong_grid;
    if (clip.has_weak) b.weak = clip.weak;
    return b;
}

inline void frame_shift(BatchClip& b, int shift) {
    if (shift == 0) return;
    auto roll_rows = [](std::vector<double>& m, int rows, int cols, int s) {
        if (m.empty()) return;
        std::vector<double> out(m.size());
        for (int r = 0; r < rows; ++r) {
            const int src = ((r - s) % rows + rows) % rows;
            std::copy(m.begin() + static_cast<std::ptrdiff_t>(src) * cols,
                      m.begin() + static_cast<std::ptrdiff_t>(src + 1) * cols,
                      out.begin() + static_cast<std::ptrdiff_t>(r) * cols);
        }
        m = std::move(out);
    };
    roll_rows(b.spec, b.frames, b.bins, shift);
    // labels roll by the feature-to-label rate ratio
    const int label_shift = static_cast<int>(std::lround(
        static_cast<double>(shift) * b.steps / b.frames));
    roll_rows(b.strong, b.steps, b.classes, label_shift);
}

inline void time_mask(BatchClip& b, int start, int width) {
    if (width <= 0) return;
    for (int t = start; t < std::min(b.frames, start + width); ++t)
        for (int j = 0; j < b.bins; ++j) b.spec[static_cast<std::size_t>(t) * b.bins + j] = 0.0;
    if (!b.strong.empty()) {
        const int s0 = start * b.steps / b.frames;
        const int s1 = (start + width) * b.steps / b.frames;
        for (int t = s0; t < std::min(b.steps, s1); ++t)
            for (int c = 0; c < b.classes; ++c)
                b.strong[static_cast<std::size_t>(t) * b.classes + c] = 0.0;
    }
}

inline void mixup(BatchClip& a, const BatchClip& b, double lam) {
    for (std::size_t i = 0; i < a.spec.size(); ++i)
        a.spec[i] = lam * a.spec[i] + (1.0 - lam) * b.spec[i];
    if (!a.strong.empty() && !b.strong.empty())
        for (std::size_t i = 0; i < a.strong.size(); ++i)
            a.strong[i] = lam * a.strong[i] + (1.0 - lam) * b.strong[i];
    if (!a.weak.empty() && !b.weak.empty())
        for (std::size_t i = 0; i < a.weak.size(); ++i)
            a.weak[i] = lam * a.weak[i] + (1.0 - lam) * b.weak[i];
}

inline void filter_augment(BatchClip& b, const AugmentationConfig& cfg, Rng& rng) {
    // random contiguous band boundaries with a random offset per band
    std::vector<int> bounds = {0, b.bins};
    for (int i = 1; i < cfg.filter_bands; ++i) bounds.push_back(rng.int_range(1, b.bins - 1));
    std::sort(bounds.begin(), bounds.end());
    for (std::size_t k = 0; k + 1 < bounds.size(); ++k) {
        const double off = rng.uniform(-cfg.filter_strength, cfg.filter_strength);
        for (int t = 0; t < b.frames; ++t)
            for (int j = bounds[k]; j < bounds[k + 1]; ++j)
                b.spec[static_cast<std::size_t>(t) * b.bins + j] += off;
    }
}

// smooth random warp of the mel axis, piecewise-linear, bounded displacement
inline void freq_distortion(BatchClip& b, const AugmentationConfig& cfg, Rng& rng) {
    constexpr int knots = 5;
    double disp[knots];
    for (auto& d : disp) d = rng.uniform(-cfg.freq_distort_max, cfg.freq_distort_max);
    disp[0] = disp[knots - 1] = 0.0;  // pin edges
    std::vector<double> shift(static_cast<std::size_t>(b.bins));
    for (int j = 0; j < b.bins; ++j) {
        const double x = static_cast<double>(j) / (b.bins - 1) * (knots - 1);
        const int k = std::min(static_cast<int>(x), knots - 2);
        const double fr = x - k;
        shift[static_cast<std::size_t>(j)] = (1.0 - fr) * disp[k] + fr * disp[k + 1];
    }
    std::vector<double> row(static_cast<std::size_t>(b.bins));
    for (int t = 0; t < b.frames; ++t) {
        double* r = b.spec.data() + static_cast<std::size_t>(t) * b.bins;
        for (int j = 0; j < b.bins; ++j) {
            const double src = std::clamp(j + shift[static_cast<std::size_t>(j)], 0.0,
                                          static_cast<double>(b.bins - 1));
            const int lo = static_cast<int>(src);
            const int hi = std::min(lo + 1, b.bins - 1);
            const double fr = src - lo;
            row[static_cast<std::size_t>(j)] = (1.0 - fr) * r[lo] + fr * r[hi];
        }
        std::copy(row.begin(), row.end(), r);
    }
}

inline void augment(std::vector<BatchClip>& batch, const std::vector<const LoadedClip*>& mix_pool,
                    const AugmentationConfig& cfg, Rng& rng) {
    const int stride = std::max(1, cfg.frame_shift_stride);
    for (auto& clip : batch) {
        const int s_max = cfg.frame_shift_max / stride;
        frame_shift(clip, stride * rng.int_range(-s_max, s_max));
        if (!mix_pool.empty() && rng.bernoulli(cfg.mixup_prob)) {
            const auto* partner = mix_pool[rng.index(mix_pool.size())];
            mixup(clip,
                  make_batch_clip(*partner, clip.frames, clip.bins, clip.steps, clip.classes),
                  rng.beta(cfg.mixup_alpha, cfg.mixup_alpha));
        }
        // mask boundaries snapped to the stride as well, for exact label masking
        const int width = stride * rng.int_range(0, cfg.time_mask_max / stride);
        if (width > 0)
            time_mask(clip, stride * rng.int_range(0, (clip.frames - width) / stride), width);
        filter_augment(clip, cfg, rng);
        freq_distortion(clip, cfg, rng);
    }
}

// ---------------------------------------------------------------------------
// three-stage schedule
// ---------------------------------------------------------------------------

struct TrainConfig {
    ShuffleSpec shuffle;
    double scale = 0.1;     // fraction of the full 6000-step schedule
    int base_steps = 6000;
    double lr_pretrain = 1e-3;
    double lr_adapt = 1e-3;
    double lr_finetune = 1e-4;
    double weight_decay = 1e-4;
    LossWeights weights;
    double ema_decay = 0.999;
    int batch_pretrain = 4;
    int batch_strong = 1, batch_weak = 1, batch_unlabeled = 2;
    bool consistency_in_adapt = true;
    bool parallel_multitask = false;
    bool augment_enabled = true;
    AugmentationConfig aug;
    std::uint64_t seed = 0;

    int steps_per_stage() const {
        return std::max(1, static_cast<int>(std::lround(base_steps * scale)));
    }
};

struct TrainState {
    Model student;
    Model teacher;  // EMA copy; never receives gradients
    AdamW opt;
    int step = 0;
    Stage stage = Stage::none;
};

inline void require_stage_order(Stage done, Stage next) {
    const bool ok = (next == Stage::pretrain && done == Stage::none) ||
                    (next == Stage::adapt && (done == Stage::none || done == Stage::pretrain)) ||
                    (next == Stage::finetune && done == Stage::adapt);
    if (!ok)
        throw ScheduleError("stage order violation: " + to_string(next) + " after " +
                            to_string(done));
}

inline double cosine_lr(double base, int step, int total) {
    return base * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total));
}

class MetricsLog {
public:
    explicit MetricsLog(const std::string& path)
        : out_(path, std::ios::app) {}
    void log(const nlohmann::json& j) {
        if (out_) out_ << j.dump() << "\n";
    }
    void flush() { out_.flush(); }

private:
    std::ofstream out_;
};

namespace detail {

inline std::vector<const LoadedClip*> clip_pool(const std::vector<LoadedClip>& v) {
    std::vector<const LoadedClip*> out;
    for (const auto& c : v) out.push_back(&c);
    return out;
}

}  // namespace detail

// One pretraining step's loss for one clip; alternating multitask applies one
// perturbation per iteration, parallel mode applies both and sums.
inline std::pair<TensorPtr, double> pretrain_clip_loss(const Model& model,
                                                       const TensorPtr& latents,
                                                       const TrainConfig& cfg, int iteration) {
    const auto target = tensor(latents->shape, latents->data);
    const auto frames = to_frames(latents);
    if (cfg.parallel_multitask && cfg.shuffle.mode == ShuffleMode::multitask) {
        ShuffleSpec bs = cfg.shuffle;
        bs.mode = ShuffleMode::block;
        ShuffleSpec fs = cfg.shuffle;
        fs.mode = ShuffleMode::frame;
        auto b = apply(frames, bs, iteration);
        auto f = apply(frames, fs, iteration);
        auto loss = jitter_loss(to_tensor(b.sequence), to_tensor(f.sequence), target, model);
        return {loss, rec_loss_normalized(loss, target) / 2.0};
    }
    auto res = apply(frames, cfg.shuffle, iteration);
    auto recon = model.reconstruct(model.context_forward(to_tensor(res.sequence)));
    auto loss = rec_loss(recon, target);
    return {loss, rec_loss_normalized(loss, target)};
}

inline void run_stage(Stage stage, int steps, TrainState& state, const Dataset& ds,
                      const TrainConfig& cfg, MetricsLog& metrics) {
    require_stage_order(state.stage, stage);
    Rng rng(splitmix64(cfg.seed ^ (static_cast<std::uint64_t>(stage) << 32)));
    const int C = ds.num_classes();
    auto& model = state.student;

    if (stage == Stage::pretrain) {
        model.set_trainable({"ctx.", "head.recon"});
        auto pool = detail::clip_pool(ds.strong);
        for (const auto& c : ds.weak) pool.push_back(&c);
        for (const auto& c : ds.unlabeled) pool.push_back(&c);
        for (int s = 0; s < steps; ++s, ++state.step) {
            TensorPtr total = scalar(0.0);
            double rec_norm = 0.0;
            for (int b = 0; b < cfg.batch_pretrain; ++b) {
                const auto* clip = pool[rng.index(pool.size())];
                auto latents = model.encode(clip_spec_tensor(*clip, ds.frames, ds.bins));
                TrainConfig per_clip = cfg;  // distinct shuffle stream per batch slot
                per_clip.shuffle.seed =
                    cfg.shuffle.seed ^
                    splitmix64(static_cast<std::uint64_t>(s) * cfg.batch_pretrain + b + 1);
                auto [loss, norm] = pretrain_clip_loss(model, latents, per_clip, s);
                total = add(total, loss);
                rec_norm += norm;
            }
            total = scale(total, 1.0 / cfg.batch_pretrain);
            backward(total);
            const double lr = cosine_lr(cfg.lr_pretrain, s, steps);
            state.opt.step(model, lr);
            for (auto& [n, p] : model.params) p->zero_grad();
            metrics.log({{"step", state.step},
                         {"stage", "pretrain"},
                         {"loss", total->data[0]},
                         {"rec_norm", rec_norm / cfg.batch_pretrain},
                         {"lr", lr}});
        }
        state.stage = Stage::pretrain;
        metrics.flush();
        return;
    }

    // SED stages
    if (stage == Stage::adapt)
        model.set_trainable({"head.sed", "head.at"});
    else
        model.set_trainable({"enc.", "ctx.", "head."});
    state.teacher = model.clone();
    const double lr_base = stage == Stage::adapt ? cfg.lr_adapt : cfg.lr_finetune;
    const bool use_cons = stage == Stage::finetune || cfg.consistency_in_adapt;
    auto strong_pool = detail::clip_pool(ds.strong);
    auto weak_pool = detail::clip_pool(ds.weak);
    auto unlabeled_pool = detail::clip_pool(ds.unlabeled);

    for (int s = 0; s < steps; ++s, ++state.step) {
        std::vector<BatchClip> batch;
        for (int i = 0; i < cfg.batch_strong; ++i) {
            batch.push_back(make_batch_clip(*strong_pool[rng.index(strong_pool.size())], ds.frames,
                                            ds.bins, ds.label_steps, C));
            batch.back().weak.clear();  // the weak BCE term applies to weak clips only
        }
        for (int i = 0; i < cfg.batch_weak && !weak_pool.empty(); ++i)
            batch.push_back(make_batch_clip(*weak_pool[rng.index(weak_pool.size())], ds.frames,
                                            ds.bins, ds.label_steps, C));
        for (int i = 0; i < cfg.batch_unlabeled && !unlabeled_pool.empty(); ++i)
            batch.push_back(make_batch_clip(*unlabeled_pool[rng.index(unlabeled_pool.size())],
                                            ds.frames, ds.bins, ds.label_steps, C));
        if (cfg.augment_enabled) augment(batch, strong_pool, cfg.aug, rng);

        const double w_cons = use_cons ? cfg.weights.cons_weight(s, steps) : 0.0;
        std::vector<SedBatchItem> items;
        for (auto& clip : batch) {
            SedBatchItem item;
            auto spec = tensor({ds.frames, ds.bins}, clip.spec);
            item.student = model.predict(model.context_forward(model.encode(spec)));
            if (w_cons > 0.0) {
                NoGradGuard ng;
                item.teacher =
                    state.teacher.predict(state.teacher.context_forward(state.teacher.encode(spec)));
            }
            if (!clip.strong.empty())
                item.strong_labels = tensor({ds.label_steps, C}, clip.strong);
            if (!clip.weak.empty()) item.weak_labels = tensor({1, C}, clip.weak);
            items.push_back(std::move(item));
        }
        auto loss = sed_loss(items, cfg.weights.w_weak, w_cons);
        backward(loss);
        const double lr = cosine_lr(lr_base, s, steps);
        state.opt.step(model, lr);
        for (auto& [n, p] : model.params) p->zero_grad();
        ema_update(state.teacher, model, cfg.ema_decay);
        metrics.log({{"step", state.step},
                     {"stage", to_string(stage)},
                     {"loss", loss->data[0]},
                     {"w_cons", w_cons},
                     {"lr", lr}});
    }
    state.stage = stage;
    metrics.flush();
}

// ---------------------------------------------------------------------------
// evaluation of a trained model on the validation split
// ---------------------------------------------------------------------------

inline std::vector<ScoredClip> score_validation(const Model& model, const Dataset& ds,
                                                bool hard_weak_mask = false) {
    NoGradGuard ng;
    std::vector<ScoredClip> out;
    for (const auto& clip : ds.validation) {
        auto pred = model.predict(
            model.context_forward(model.encode(clip_spec_tensor(clip, ds.frames, ds.bins))));
        ProbGrid strong(ds.label_steps, ds.num_classes());
        strong.data = pred.strong->data;
        std::vector<double> weak = pred.weak->data;
        auto masked = hard_weak_mask ? weak_mask_hard(strong, weak) : weak_mask(strong, weak);
        ScoredClip sc;
        sc.probs = median_filter(masked, ds.median_windows);
        sc.truth = clip.events;
        sc.truth.clip_id = clip.id;
        out.push_back(std::move(sc));
    }
    return out;
}

inline PsdsReport evaluate_model(const Model& model, const Dataset& ds,
                                 const PSDSParams& params = {}, int n_thresholds = 50) {
    auto scored = score_validation(model, ds);
    const double hours =
        static_cast<double>(ds.validation.size()) * 10.0 / 3600.0;
    return psds(scored, params, ds.num_classes(), hours, n_thresholds);
}

}  // namespace jitter
