#include "sid/frontend.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sid {
namespace {

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

void write_u16(std::ostream& out, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out.write(b, 2);
}

}  // namespace

AudioWaveform load_audio(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open audio file: " + path);

    char tag[4];
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "RIFF", 4) != 0)
        throw std::runtime_error(path + ": not a RIFF file");
    read_u32(in);  // riff size
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "WAVE", 4) != 0)
        throw std::runtime_error(path + ": not a WAVE file");

    int sample_rate = 0;
    int channels = 0;
    int bits = 0;
    bool fmt_seen = false;
    std::vector<int16_t> pcm;
    bool data_seen = false;

    while (in.read(tag, 4)) {
        uint32_t chunk_size = read_u32(in);
        if (!in) throw std::runtime_error(path + ": truncated chunk header");
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            if (chunk_size < 16) throw std::runtime_error(path + ": malformed fmt chunk");
            uint16_t format = read_u16(in);
            channels = read_u16(in);
            sample_rate = static_cast<int>(read_u32(in));
            read_u32(in);  // byte rate
            read_u16(in);  // block align
            bits = read_u16(in);
            in.ignore(chunk_size - 16);
            if (format != 1)
                throw std::runtime_error(path + ": unsupported encoding (PCM only)");
            fmt_seen = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!fmt_seen) throw std::runtime_error(path + ": data chunk before fmt");
            if (channels != 1)
                throw std::runtime_error(path + ": unsupported channel count (" +
                                         std::to_string(channels) + ", mono required)");
            if (bits != 16)
                throw std::runtime_error(path + ": unsupported sample width (16-bit required)");
            size_t n = chunk_size / 2;
            pcm.resize(n);
            in.read(reinterpret_cast<char*>(pcm.data()), static_cast<std::streamsize>(n * 2));
            if (static_cast<size_t>(in.gcount()) != n * 2)
                throw std::runtime_error(path + ": truncated data chunk");
            data_seen = true;
        } else {
            in.ignore(chunk_size + (chunk_size & 1));
        }
        if (data_seen && fmt_seen) break;
    }
    if (!fmt_seen || !data_seen)
        throw std::runtime_error(path + ": missing fmt or data chunk");
    if (sample_rate <= 0) throw std::runtime_error(path + ": invalid sample rate");
    if (pcm.empty()) throw std::runtime_error(path + ": empty data chunk");

    AudioWaveform wave;
    wave.sample_rate_hz = sample_rate;
    wave.samples.resize(pcm.size());
    for (size_t i = 0; i < pcm.size(); ++i)
        wave.samples[i] = static_cast<double>(pcm[i]) / 32768.0;
    return wave;
}

void write_wav_pcm16(const std::string& path, const std::vector<double>& samples,
                     int sample_rate_hz) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);

    uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
    out.write("RIFF", 4);
    write_u32(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_u32(out, 16);
    write_u16(out, 1);  // PCM
    write_u16(out, 1);  // mono
    write_u32(out, static_cast<uint32_t>(sample_rate_hz));
    write_u32(out, static_cast<uint32_t>(sample_rate_hz * 2));
    write_u16(out, 2);
    write_u16(out, 16);
    out.write("data", 4);
    write_u32(out, data_bytes);
    for (double s : samples) {
        double c = std::clamp(s, -1.0, 1.0);
        auto v = static_cast<int16_t>(std::lround(c * 32767.0));
        write_u16(out, static_cast<uint16_t>(v));
    }
    if (!out) throw std::runtime_error("write failure: " + path);
}

}  // namespace sid
