#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace sid {

using Mat = Eigen::MatrixXd;

// ─── Audio frontend ──────────────────────────────────────────────────────────
// Raw mono audio → fixed-length, per-channel normalized 80-dim log-mel frames.

struct AudioWaveform {
    std::vector<double> samples;  // amplitudes in [-1, 1]
    int sample_rate_hz = 16000;
};

struct FrontendConfig {
    int n_mels = 80;
    double win_ms = 25.0;
    double hop_ms = 10.0;
    double target_seconds = 15.0;
    double fmin_hz = 0.0;
    double fmax_hz = -1.0;  // <= 0 means Nyquist

    void validate(int sample_rate_hz) const;
};

struct LogMelFrames {
    Mat data;  // (n_frames, n_mels)
    double frame_hop_ms = 10.0;

    int n_frames() const { return static_cast<int>(data.rows()); }
    int n_mels() const { return static_cast<int>(data.cols()); }
};

// Reads a mono 16-bit PCM RIFF/WAVE file. Samples are scaled by 1/32768.
// Throws std::runtime_error on missing file, unsupported channel count or
// encoding, and truncated headers/payloads.
AudioWaveform load_audio(const std::string& path);

// Writes mono 16-bit PCM. Samples are clipped to [-1, 1] before quantizing.
void write_wav_pcm16(const std::string& path, const std::vector<double>& samples,
                     int sample_rate_hz);

// Crops or tiles to exactly round(target_seconds * sample_rate) samples.
// Longer inputs are cropped starting at crop_offset (clamped so a full
// window fits); shorter inputs are tiled and then cropped. An input already
// at target length is returned unchanged.
AudioWaveform fix_length(const AudioWaveform& wave, double target_seconds,
                         size_t crop_offset = 0);

// Short-time log-mel analysis. Hann window, center padding (reflect), power
// spectrum, triangular mel filters on [fmin, fmax], natural log with floor
// 1e-10. Frame count is ceil(len / hop_samples).
LogMelFrames log_mel(const AudioWaveform& wave, const FrontendConfig& cfg);

// Per-utterance, per-mel-channel standardization to mean 0 and population
// std 1, with a std floor of 1e-5 (constant channels map to zeros).
LogMelFrames normalize(const LogMelFrames& frames);

// Number of frames log_mel produces for a given sample count and hop.
inline int frame_count(size_t n_samples, int hop_samples) {
    return static_cast<int>((n_samples + hop_samples - 1) / hop_samples);
}

// Triangular mel filterbank, shape (n_mels, n_fft/2 + 1). Exposed so tests
// can check row positivity and locate filter center frequencies.
Mat mel_filterbank(int n_mels, int n_fft, int sample_rate_hz, double fmin_hz,
                   double fmax_hz);

// Center frequency (Hz) of each mel filter.
std::vector<double> mel_center_freqs_hz(int n_mels, int sample_rate_hz,
                                        double fmin_hz, double fmax_hz);

}  // namespace sid
