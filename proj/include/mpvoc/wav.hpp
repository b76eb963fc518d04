#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpvoc/signal.hpp"

namespace mpvoc {

enum class WavEncoding { pcm16, float32 };

namespace wav_detail {

inline void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u16(std::string& s, uint16_t v) {
    for (int i = 0; i < 2; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint16_t get_u16(const unsigned char* p) {
    return static_cast<uint16_t>(static_cast<uint32_t>(p[0]) |
                                 (static_cast<uint32_t>(p[1]) << 8));
}

}  // namespace wav_detail

// Mono WAV writer, PCM16 or IEEE float32.
inline void write_wav(const std::string& path, const Waveform& wave,
                      WavEncoding enc = WavEncoding::pcm16) {
    wave.validate();
    using namespace wav_detail;
    const uint32_t n = static_cast<uint32_t>(wave.samples.size());
    const uint16_t fmt = enc == WavEncoding::pcm16 ? 1 : 3;
    const uint16_t bytes_per = enc == WavEncoding::pcm16 ? 2 : 4;
    const uint32_t data_size = n * bytes_per;
    std::string out;
    out.reserve(44 + data_size);
    out += "RIFF";
    put_u32(out, 36 + data_size);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, fmt);
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<uint32_t>(wave.sample_rate));
    put_u32(out, static_cast<uint32_t>(wave.sample_rate) * bytes_per);
    put_u16(out, bytes_per);
    put_u16(out, static_cast<uint16_t>(bytes_per * 8));
    out += "data";
    put_u32(out, data_size);
    if (enc == WavEncoding::pcm16) {
        for (double v : wave.samples) {
            const double c = std::clamp(v, -1.0, 1.0);
            const int32_t q = static_cast<int32_t>(std::lrint(c * 32767.0));
            put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
        }
    } else {
        for (double v : wave.samples) {
            const float f = static_cast<float>(v);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    }
    std::ofstream fs(path, std::ios::binary);
    if (!fs) throw std::runtime_error("write_wav: cannot open " + path);
    fs.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!fs) throw std::runtime_error("write_wav: write failed for " + path);
}

// Mono WAV reader for PCM16 and IEEE float32 files. Multi-channel input is rejected.
inline Waveform read_wav(const std::string& path) {
    using namespace wav_detail;
    std::ifstream fs(path, std::ios::binary);
    if (!fs) throw std::runtime_error("read_wav: cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(fs)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
        std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path);

    uint16_t fmt = 0, channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    std::size_t data_off = 0, data_len = 0;
    std::size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const char* id = reinterpret_cast<const char*>(buf.data() + pos);
        const uint32_t sz = get_u32(buf.data() + pos + 4);
        const std::size_t body = pos + 8;
        if (std::memcmp(id, "fmt ", 4) == 0 && body + 16 <= buf.size()) {
            fmt = get_u16(buf.data() + body);
            channels = get_u16(buf.data() + body + 2);
            sample_rate = get_u32(buf.data() + body + 4);
            bits = get_u16(buf.data() + body + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_off = body;
            data_len = std::min<std::size_t>(sz, buf.size() - body);
        }
        pos = body + sz + (sz & 1);
    }
    if (fmt == 0 || data_off == 0)
        throw std::runtime_error("read_wav: missing fmt or data chunk: " + path);
    if (channels != 1)
        throw std::runtime_error("read_wav: only mono files are supported, file has " +
                                 std::to_string(channels) + " channels: " + path);

    Waveform w;
    w.sample_rate = static_cast<int>(sample_rate);
    if (fmt == 1 && bits == 16) {
        const std::size_t n = data_len / 2;
        w.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const int16_t q = static_cast<int16_t>(get_u16(buf.data() + data_off + 2 * i));
            w.samples[i] = static_cast<double>(q) / 32767.0;
        }
    } else if (fmt == 3 && bits == 32) {
        const std::size_t n = data_len / 4;
        w.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const uint32_t b = get_u32(buf.data() + data_off + 4 * i);
            float f;
            std::memcpy(&f, &b, 4);
            w.samples[i] = static_cast<double>(f);
        }
    } else {
        throw std::runtime_error("read_wav: unsupported encoding (need PCM16 or float32): " +
                                 path);
    }
    if (w.samples.empty()) throw std::runtime_error("read_wav: empty data chunk: " + path);
    return w;
}

}  // namespace mpvoc
