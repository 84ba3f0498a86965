#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "jitter/perturb.hpp"
#include "jitter/tensor.hpp"
#include "jitter/tensor_io.hpp"

namespace jitter {

// Three strided conv stages over time: (k5,s5) then two (k3,s1,p1), mapping a
// 500x128 spectrogram to a 100xD latent sequence.
struct EncoderConfig {
    int mel_bins = 128;
    int input_frames = 500;
    int latent_dim = 64;

    int output_frames() const { return input_frames / 5; }
};

struct ContextConfig {
    int layers = 2;
    int heads = 4;
    int dim = 64;
    int ffn_dim() const { return 4 * dim; }
    int max_rel = 100;  // R; biases indexed by clip(i-j, -R, R)
    int head_dim() const { return dim / heads; }
};

struct ModelConfig {
    EncoderConfig enc;
    ContextConfig ctx;
    int classes = 10;

    nlohmann::json to_json() const {
        return {{"mel_bins", enc.mel_bins},   {"input_frames", enc.input_frames},
                {"latent_dim", enc.latent_dim}, {"layers", ctx.layers},
                {"heads", ctx.heads},         {"dim", ctx.dim},
                {"max_rel", ctx.max_rel},     {"classes", classes}};
    }
    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.enc.mel_bins = j.at("mel_bins");
        c.enc.input_frames = j.at("input_frames");
        c.enc.latent_dim = j.at("latent_dim");
        c.ctx.layers = j.at("layers");
        c.ctx.heads = j.at("heads");
        c.ctx.dim = j.at("dim");
        c.ctx.max_rel = j.at("max_rel");
        c.classes = j.at("classes");
        return c;
    }
};

struct Prediction {
    TensorPtr strong;  // 100 x C probabilities
    TensorPtr weak;    // 1 x C probabilities
    TensorPtr recon;   // 100 x D
};

namespace detail {

// flat gather indices realizing a 1-d convolution unfold over time
inline std::vector<int> unfold_indices(int t_in, int channels, int kernel, int stride, int pad,
                                       int& t_out) {
    t_out = (t_in + 2 * pad - kernel) / stride + 1;
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(t_out) * kernel * channels);
    for (int t = 0; t < t_out; ++t)
        for (int i = 0; i < kernel; ++i) {
            const int src_t = t * stride - pad + i;
            for (int c = 0; c < channels; ++c)
                idx.push_back(src_t < 0 || src_t >= t_in ? -1 : src_t * channels + c);
        }
    return idx;
}

}  // namespace detail

class Model {
public:
    ModelConfig cfg;
    std::map<std::string, TensorPtr> params;

    Model() = default;
    explicit Model(const ModelConfig& c) : cfg(c) {}

    void init(Rng& rng) {
        const int D = cfg.enc.latent_dim;
        add_linear("enc.s0", 5 * cfg.enc.mel_bins, D, rng);
        add_linear("enc.s1", 3 * D, D, rng);
        add_linear("enc.s2", 3 * D, D, rng);
        for (int l = 0; l < cfg.ctx.layers; ++l) {
            const std::string p = "ctx.l" + std::to_string(l) + ".";
            add_param(p + "ln1.g", full({cfg.ctx.dim}, 1.0));
            add_param(p + "ln1.b", zeros({cfg.ctx.dim}));
            add_linear(p + "attn.q", cfg.ctx.dim, cfg.ctx.dim, rng);
            add_linear(p + "attn.k", cfg.ctx.dim, cfg.ctx.dim, rng);
            add_linear(p + "attn.v", cfg.ctx.dim, cfg.ctx.dim, rng);
            add_linear(p + "attn.o", cfg.ctx.dim, cfg.ctx.dim, rng);
            add_param(p + "rpe", randn({cfg.ctx.heads, 2 * cfg.ctx.max_rel + 1}, rng, 0.02));
            add_param(p + "ln2.g", full({cfg.ctx.dim}, 1.0));
            add_param(p + "ln2.b", zeros({cfg.ctx.dim}));
            add_linear(p + "ffn.w1", cfg.ctx.dim, cfg.ctx.ffn_dim(), rng);
            add_linear(p + "ffn.w2", cfg.ctx.ffn_dim(), cfg.ctx.dim, rng);
        }
        add_linear("head.recon", D, D, rng);
        add_linear("head.sed", D, cfg.classes, rng);
        add_linear("head.at", D, cfg.classes, rng);
        // start the classifier heads at a low positive rate: event-active cells
        // are rare, so a neutral 0.5 prior wastes early training on suppression
        for (const char* b : {"head.sed.b", "head.at.b"})
            for (auto& v : param(b)->data) v = -2.0;
    }

    TensorPtr param(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw std::runtime_error("unknown parameter: " + name);
        return it->second;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [k, v] : params) n += v->size();
        return n;
    }

    // spec: input_frames x mel_bins (standardized log-mel)
    TensorPtr encode(const TensorPtr& spec) const {
        if (spec->shape != std::vector<int>{cfg.enc.input_frames, cfg.enc.mel_bins})
            throw ShapeError("encode: expected " +
                             shape_str({cfg.enc.input_frames, cfg.enc.mel_bins}) + ", got " +
                             shape_str(spec->shape));
        auto x = conv_stage(spec, "enc.s0", 5, 5, 0);
        x = gelu(x);
        x = conv_stage(x, "enc.s1", 3, 1, 1);
        x = gelu(x);
        x = conv_stage(x, "enc.s2", 3, 1, 1);
        return x;
    }

    TensorPtr context_forward(const TensorPtr& latents) const {
        auto x = latents;
        for (int l = 0; l < cfg.ctx.layers; ++l) x = layer_forward(x, l);
        return x;
    }

    TensorPtr reconstruct(const TensorPtr& ctx_out) const { return linear(ctx_out, "head.recon"); }

    Prediction predict(const TensorPtr& ctx_out) const {
        Prediction pred;
        pred.recon = linear(ctx_out, "head.recon");
        auto sed_logits = linear(ctx_out, "head.sed");
        pred.strong = sigmoid(sed_logits);
        auto at_logits = linear(ctx_out, "head.at");
        // softmax-attention pooling over time, per class
        auto attn = transpose(softmax(transpose(at_logits)));
        auto weak_logits = sum_rows(mul(attn, sed_logits));
        pred.weak = sigmoid(weak_logits);
        return pred;
    }

    void set_trainable(const std::vector<std::string>& prefixes) {
        for (auto& [name, p] : params) {
            bool on = false;
            for (const auto& pre : prefixes)
                if (name.rfind(pre, 0) == 0) on = true;
            p->requires_grad = on;
            if (on) p->ensure_grad();
        }
    }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const auto& [name, p] : params)
            if (p->requires_grad) out.push_back(name);
        return out;
    }

    Model clone() const {
        Model m(cfg);
        for (const auto& [name, p] : params) {
            auto q = tensor(p->shape, p->data);
            m.params[name] = q;
        }
        return m;
    }

    void save(const std::string& dir) const {
        std::filesystem::create_directories(dir);
        nlohmann::json manifest;
        manifest["config"] = cfg.to_json();
        nlohmann::json files = nlohmann::json::object();
        for (const auto& [name, p] : params) {
            const std::string fname = name + ".jtt";
            write_jtt1(dir + "/" + fname, *p);
            files[name] = fname;
        }
        manifest["params"] = files;
        std::ofstream f(dir + "/manifest.json");
        f << manifest.dump(2) << "\n";
    }

    static Model load(const std::string& dir) {
        std::ifstream f(dir + "/manifest.json");
        if (!f) throw std::runtime_error("checkpoint manifest not found in " + dir);
        nlohmann::json manifest = nlohmann::json::parse(f);
        Model m(ModelConfig::from_json(manifest.at("config")));
        for (auto& [name, fname] : manifest.at("params").items())
            m.params[name] = read_jtt1(dir + "/" + fname.get<std::string>());
        return m;
    }

private:
    void add_param(const std::string& name, TensorPtr t) { params[name] = std::move(t); }

    void add_linear(const std::string& name, int fan_in, int fan_out, Rng& rng) {
        const double std = std::sqrt(2.0 / (fan_in + fan_out));
        add_param(name + ".w", randn({fan_in, fan_out}, rng, std));
        add_param(name + ".b", zeros({fan_out}));
    }

    TensorPtr linear(const TensorPtr& x, const std::string& name) const {
        return add_rowvec(matmul(x, param(name + ".w")), param(name + ".b"));
    }

    TensorPtr conv_stage(const TensorPtr& x, const std::string& name, int kernel, int stride,
                         int pad) const {
        const int t_in = x->shape[0], ch = x->shape[1];
        int t_out = 0;
        auto idx = detail::unfold_indices(t_in, ch, kernel, stride, pad, t_out);
        auto unfolded = gather(x, idx, {t_out, kernel * ch});
        return add_rowvec(matmul(unfolded, param(name + ".w")), param(name + ".b"));
    }

    TensorPtr layer_forward(const TensorPtr& x, int l) const {
        const std::string p = "ctx.l" + std::to_string(l) + ".";
        const int T = x->shape[0];
        const int H = cfg.ctx.heads, dh = cfg.ctx.head_dim(), R = cfg.ctx.max_rel;
        auto a_in = rowwise_affine(layer_norm(x), param(p + "ln1.g"), param(p + "ln1.b"));
        auto q = linear(a_in, p + "attn.q");
        auto k = linear(a_in, p + "attn.k");
        auto v = linear(a_in, p + "attn.v");
        auto rpe = param(p + "rpe");
        std::vector<TensorPtr> heads;
        heads.reserve(static_cast<std::size_t>(H));
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int h = 0; h < H; ++h) {
            auto qh = slice_cols(q, h * dh, (h + 1) * dh);
            auto kh = slice_cols(k, h * dh, (h + 1) * dh);
            auto vh = slice_cols(v, h * dh, (h + 1) * dh);
            auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
            // learned scalar bias over clipped relative distance i-j
            std::vector<int> rel_idx(static_cast<std::size_t>(T) * T);
            for (int i = 0; i < T; ++i)
                for (int j = 0; j < T; ++j) {
                    const int rel = std::clamp(i - j, -R, R) + R;
                    rel_idx[static_cast<std::size_t>(i) * T + j] = h * (2 * R + 1) + rel;
                }
            auto bias = gather(rpe, rel_idx, {T, T});
            auto attn = softmax(add(scores, bias));
            heads.push_back(matmul(attn, vh));
        }
        auto attn_out = linear(concat_cols(heads), p + "attn.o");
        auto x2 = add(x, attn_out);
        auto f_in = rowwise_affine(layer_norm(x2), param(p + "ln2.g"), param(p + "ln2.b"));
        auto ffn = linear(gelu(linear(f_in, p + "ffn.w1")), p + "ffn.w2");
        return add(x2, ffn);
    }
};

// FrameSequence <-> Tensor bridges
inline TensorPtr to_tensor(const FrameSequence& s) { return tensor({s.T, s.D}, s.data); }

inline FrameSequence to_frames(const TensorPtr& t) {
    FrameSequence s(t->shape[0], t->shape.size() > 1 ? t->shape[1] : 1);
    s.data = t->data;
    return s;
}

}  // namespace jitter
