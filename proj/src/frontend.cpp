#include "sid/frontend.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

namespace sid {
namespace {

constexpr double kLogFloor = 1e-10;
constexpr double kStdFloor = 1e-5;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

// In-place iterative radix-2 Cooley-Tukey. n must be a power of two.
void fft(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Reflect index into [0, n), bouncing at both ends (handles pads wider than
// the signal).
size_t reflect_index(long long i, size_t n) {
    if (n == 1) return 0;
    long long m = static_cast<long long>(n);
    while (i < 0 || i >= m) {
        if (i < 0) i = -i;
        if (i >= m) i = 2 * m - 2 - i;
    }
    return static_cast<size_t>(i);
}

}  // namespace

void FrontendConfig::validate(int sample_rate_hz) const {
    if (n_mels < 1) throw std::invalid_argument("n_mels must be >= 1");
    if (!(hop_ms > 0.0) || hop_ms > win_ms)
        throw std::invalid_argument("require 0 < hop_ms <= win_ms");
    double fmax = fmax_hz > 0.0 ? fmax_hz : sample_rate_hz / 2.0;
    if (!(fmin_hz < fmax) || fmax > sample_rate_hz / 2.0 + 1e-9)
        throw std::invalid_argument("require fmin_hz < fmax_hz <= sample_rate/2");
}

AudioWaveform fix_length(const AudioWaveform& wave, double target_seconds,
                         size_t crop_offset) {
    if (!(target_seconds > 0.0))
        throw std::invalid_argument("fix_length: target must be positive");
    if (wave.samples.empty())
        throw std::invalid_argument("fix_length: empty waveform");

    const size_t target =
        static_cast<size_t>(std::llround(target_seconds * wave.sample_rate_hz));
    const size_t len = wave.samples.size();

    AudioWaveform out;
    out.sample_rate_hz = wave.sample_rate_hz;
    if (len == target) {
        out.samples = wave.samples;
    } else if (len > target) {
        size_t start = std::min(crop_offset, len - target);
        out.samples.assign(wave.samples.begin() + static_cast<long>(start),
                           wave.samples.begin() + static_cast<long>(start + target));
    } else {
        out.samples.resize(target);
        for (size_t i = 0; i < target; ++i) out.samples[i] = wave.samples[i % len];
    }
    return out;
}

Mat mel_filterbank(int n_mels, int n_fft, int sample_rate_hz, double fmin_hz,
                   double fmax_hz) {
    const int n_bins = n_fft / 2 + 1;
    if (n_mels > n_bins - 2)
        throw std::invalid_argument("n_mels exceeds usable FFT bins");
    double fmax = fmax_hz > 0.0 ? fmax_hz : sample_rate_hz / 2.0;

    const double mel_lo = hz_to_mel(fmin_hz);
    const double mel_hi = hz_to_mel(fmax);
    std::vector<double> edges(n_mels + 2);
    for (int i = 0; i < n_mels + 2; ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

    Mat fb = Mat::Zero(n_mels, n_bins);
    const double bin_hz = static_cast<double>(sample_rate_hz) / n_fft;
    for (int m = 0; m < n_mels; ++m) {
        double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
        for (int k = 0; k < n_bins; ++k) {
            double f = k * bin_hz;
            if (f <= lo || f >= hi) continue;
            fb(m, k) = f <= center ? (f - lo) / (center - lo) : (hi - f) / (hi - center);
        }
    }
    return fb;
}

std::vector<double> mel_center_freqs_hz(int n_mels, int sample_rate_hz,
                                        double fmin_hz, double fmax_hz) {
    double fmax = fmax_hz > 0.0 ? fmax_hz : sample_rate_hz / 2.0;
    const double mel_lo = hz_to_mel(fmin_hz);
    const double mel_hi = hz_to_mel(fmax);
    std::vector<double> centers(n_mels);
    for (int m = 0; m < n_mels; ++m)
        centers[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (n_mels + 1));
    return centers;
}

LogMelFrames log_mel(const AudioWaveform& wave, const FrontendConfig& cfg) {
    cfg.validate(wave.sample_rate_hz);
    const int sr = wave.sample_rate_hz;
    const int hop = static_cast<int>(std::lround(cfg.hop_ms * sr / 1000.0));
    const int win = static_cast<int>(std::lround(cfg.win_ms * sr / 1000.0));
    if (hop <= 0 || win <= 0) throw std::invalid_argument("window/hop too small");
    if (wave.samples.size() < static_cast<size_t>(hop))
        throw std::invalid_argument("waveform shorter than one hop");

    const int n_fft = next_pow2(win);
    const int n_bins = n_fft / 2 + 1;
    const int n_frames = frame_count(wave.samples.size(), hop);

    // Periodic Hann, centered in the FFT buffer.
    std::vector<double> window(n_fft, 0.0);
    const int woff = (n_fft - win) / 2;
    for (int i = 0; i < win; ++i)
        window[woff + i] =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);

    const Mat fb = mel_filterbank(cfg.n_mels, n_fft, sr, cfg.fmin_hz, cfg.fmax_hz);

    LogMelFrames out;
    out.frame_hop_ms = cfg.hop_ms;
    out.data.resize(n_frames, cfg.n_mels);

    std::vector<std::complex<double>> buf(n_fft);
    Eigen::VectorXd power(n_bins);
    const size_t len = wave.samples.size();
    for (int t = 0; t < n_frames; ++t) {
        const long long center = static_cast<long long>(t) * hop;
        for (int i = 0; i < n_fft; ++i) {
            long long idx = center - n_fft / 2 + i;
            buf[i] = wave.samples[reflect_index(idx, len)] * window[i];
        }
        fft(buf);
        for (int k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
        Eigen::VectorXd mel = fb * power;
        for (int m = 0; m < cfg.n_mels; ++m)
            out.data(t, m) = std::log(mel[m] + kLogFloor);
    }
    return out;
}

LogMelFrames normalize(const LogMelFrames& frames) {
    const int n = frames.n_frames();
    if (n < 2) throw std::invalid_argument("normalize: need at least 2 frames");

    LogMelFrames out;
    out.frame_hop_ms = frames.frame_hop_ms;
    out.data.resizeLike(frames.data);
    for (int c = 0; c < frames.n_mels(); ++c) {
        const double mean = frames.data.col(c).mean();
        const double var = (frames.data.col(c).array() - mean).square().sum() / n;
        const double sd = std::max(std::sqrt(var), kStdFloor);
        out.data.col(c) = (frames.data.col(c).array() - mean) / sd;
    }
    return out;
}

}  // namespace sid
