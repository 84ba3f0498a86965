#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace jitter {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Waveform {
    std::vector<float> samples;
    int sample_rate = 16000;
};

// T x 128 log-mel energies; hop 320 samples (20 ms), FFT 1024, Hann window,
// reflect-center padding so T = ceil(len / hop) (500 frames for a 10 s clip).
struct LogMelSpectrogram {
    int frames = 0;
    int bins = 128;
    std::vector<double> data;  // row-major frames x bins

    double& at(int t, int b) { return data[static_cast<std::size_t>(t) * bins + b]; }
    double at(int t, int b) const { return data[static_cast<std::size_t>(t) * bins + b]; }
};

struct FeatureConfig {
    int sample_rate = 16000;
    int fft_size = 1024;
    int hop = 320;
    int mel_bins = 128;
    double fmin = 0.0;
    double fmax = 8000.0;
    double log_floor = 1e-8;
};

inline Waveform normalize(Waveform w) {
    float mx = 0.0f;
    for (float s : w.samples) mx = std::max(mx, std::abs(s));
    if (mx > 0.0f) {
        const float inv = 1.0f / mx;
        for (auto& s : w.samples) s *= inv;
    }
    return w;
}

namespace detail {

// iterative radix-2 complex FFT, in place; n must be a power of two
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
inline double hz_to_mel(double hz) {
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    const double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    if (hz < min_log_hz) return hz / f_sp;
    return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

inline double mel_to_hz(double mel) {
    constexpr double f_sp = 200.0 / 3.0;
    constexpr double min_log_hz = 1000.0;
    const double min_log_mel = min_log_hz / f_sp;
    const double logstep = std::log(6.4) / 27.0;
    if (mel < min_log_mel) return mel * f_sp;
    return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

}  // namespace detail

// band edge frequencies for the triangular filters: mel_bins + 2 points
inline std::vector<double> mel_band_edges(const FeatureConfig& cfg) {
    std::vector<double> edges(static_cast<std::size_t>(cfg.mel_bins) + 2);
    const double mlo = detail::hz_to_mel(cfg.fmin);
    const double mhi = detail::hz_to_mel(cfg.fmax);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = detail::mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) /
                                               static_cast<double>(cfg.mel_bins + 1));
    return edges;
}

// Slaney-style area-normalized triangular filterbank over FFT power bins.
inline std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& cfg) {
    const int nbins = cfg.fft_size / 2 + 1;
    const auto edges = mel_band_edges(cfg);
    std::vector<std::vector<double>> fb(static_cast<std::size_t>(cfg.mel_bins),
                                        std::vector<double>(static_cast<std::size_t>(nbins), 0.0));
    const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.fft_size;
    for (int m = 0; m < cfg.mel_bins; ++m) {
        const double lo = edges[static_cast<std::size_t>(m)];
        const double mid = edges[static_cast<std::size_t>(m) + 1];
        const double hi = edges[static_cast<std::size_t>(m) + 2];
        const double norm = 2.0 / (hi - lo);
        for (int k = 0; k < nbins; ++k) {
            const double f = k * bin_hz;
            double w = 0.0;
            if (f > lo && f < mid)
                w = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi)
                w = (hi - f) / (hi - mid);
            fb[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)] = w * norm;
        }
    }
    return fb;
}

// STFT power spectrogram, reflect-center padded, T = ceil(len / hop).
inline std::vector<std::vector<double>> stft_power(const Waveform& w, const FeatureConfig& cfg) {
    const int n = cfg.fft_size;
    const int half = n / 2;
    const int len = static_cast<int>(w.samples.size());
    const int frames = (len + cfg.hop - 1) / cfg.hop;
    std::vector<double> window(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
    auto sample_at = [&](int i) -> double {
        // reflect padding without repeating the edge sample
        if (i < 0) i = -i;
        if (i >= len) i = 2 * (len - 1) - i;
        i = std::clamp(i, 0, len - 1);
        return static_cast<double>(w.samples[static_cast<std::size_t>(i)]);
    };
    std::vector<std::vector<double>> power(static_cast<std::size_t>(frames),
                                           std::vector<double>(static_cast<std::size_t>(half + 1)));
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(n));
    for (int t = 0; t < frames; ++t) {
        const int center = t * cfg.hop;
        for (int i = 0; i < n; ++i)
            buf[static_cast<std::size_t>(i)] = {sample_at(center - half + i) *
                                                    window[static_cast<std::size_t>(i)],
                                                0.0};
        detail::fft_radix2(buf);
        for (int k = 0; k <= half; ++k)
            power[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] =
                std::norm(buf[static_cast<std::size_t>(k)]);
    }
    return power;
}

inline LogMelSpectrogram logmel(const Waveform& w, const FeatureConfig& cfg = {}) {
    if (w.sample_rate != cfg.sample_rate)
        throw ConfigError("logmel: expected sample rate " + std::to_string(cfg.sample_rate) +
                          ", got " + std::to_string(w.sample_rate));
    const auto power = stft_power(w, cfg);
    const auto fb = mel_filterbank(cfg);
    LogMelSpectrogram out;
    out.frames = static_cast<int>(power.size());
    out.bins = cfg.mel_bins;
    out.data.resize(static_cast<std::size_t>(out.frames) * cfg.mel_bins);
    for (int t = 0; t < out.frames; ++t) {
        for (int m = 0; m < cfg.mel_bins; ++m) {
            double e = 0.0;
            const auto& row = fb[static_cast<std::size_t>(m)];
            const auto& p = power[static_cast<std::size_t>(t)];
            for (std::size_t k = 0; k < row.size(); ++k) e += row[k] * p[k];
            out.at(t, m) = std::log(e + cfg.log_floor);
        }
    }
    for (double v : out.data)
        if (!std::isfinite(v)) throw ConfigError("logmel: non-finite output");
    return out;
}

}  // namespace jitter
