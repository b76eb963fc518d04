#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mpvoc/rng.hpp"
#include "mpvoc/tensor.hpp"

namespace mpvoc {

inline constexpr char kCheckpointMagic[4] = {'M', 'P', 'V', 'C'};
inline constexpr uint32_t kCheckpointVersion = 1;

// IEEE CRC32 (reflected 0xEDB88320), as used by zlib.
inline uint32_t crc32(const unsigned char* data, std::size_t len) {
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

namespace ckpt_detail {

class Writer {
  public:
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void bytes(const void* p, std::size_t n) {
        buf_.append(static_cast<const char*>(p), n);
    }
    std::string& str() { return buf_; }

  private:
    std::string buf_;
};

class Reader {
  public:
    Reader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() {
        const uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return n_ - pos_; }

  private:
    void need(std::size_t n) const {
        if (pos_ + n > n_) throw std::runtime_error("checkpoint: truncated record");
    }
    const unsigned char* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

inline void write_tensor(Writer& w, const Tensor& t) {
    w.u32(static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) w.u64(static_cast<uint64_t>(d));
    for (double v : t.data) w.f64(v);
}

inline Tensor read_tensor(Reader& r) {
    const uint32_t rank = r.u32();
    if (rank > 4) throw std::runtime_error("checkpoint: tensor rank out of range");
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(r.u64());
    Tensor t(shape);
    for (double& v : t.data) v = r.f64();
    return t;
}

}  // namespace ckpt_detail

// Complete training state: resolved config echo, parameters, AdamW moments,
// step counter, and the batch-sampling RNG.
struct Checkpoint {
    std::string config_text;
    uint64_t step = 0;
    Rng::State rng{};
    uint64_t adam_t = 0;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> adam_m;
    std::vector<std::pair<std::string, Tensor>> adam_v;
};

// Layout: magic "MPVC", version u32, length-prefixed named records
// (u32 name length, name, u64 payload length, payload), trailing CRC32 over
// everything before it. All integers little-endian.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    using ckpt_detail::Writer;
    Writer out;
    out.bytes(kCheckpointMagic, 4);
    out.u32(kCheckpointVersion);

    auto record = [&out](const std::string& name, const std::string& payload) {
        out.u32(static_cast<uint32_t>(name.size()));
        out.bytes(name.data(), name.size());
        out.u64(payload.size());
        out.bytes(payload.data(), payload.size());
    };
    auto tensor_payload = [](const Tensor& t) {
        Writer w;
        ckpt_detail::write_tensor(w, t);
        return w.str();
    };

    record("meta/config", ck.config_text);
    {
        Writer w;
        w.u64(ck.step);
        record("step", w.str());
    }
    {
        Writer w;
        for (int i = 0; i < 4; ++i) w.u64(ck.rng.s[i]);
        w.u64(ck.rng.has_spare);
        w.f64(ck.rng.spare);
        record("rng", w.str());
    }
    {
        Writer w;
        w.u64(ck.adam_t);
        record("adam/t", w.str());
    }
    for (const auto& [name, t] : ck.params) record("param/" + name, tensor_payload(t));
    for (const auto& [name, t] : ck.adam_m) record("adam/m/" + name, tensor_payload(t));
    for (const auto& [name, t] : ck.adam_v) record("adam/v/" + name, tensor_payload(t));

    const uint32_t crc =
        crc32(reinterpret_cast<const unsigned char*>(out.str().data()), out.str().size());
    out.u32(crc);

    std::ofstream fs(path, std::ios::binary);
    if (!fs) throw std::runtime_error("save_checkpoint: cannot open " + path);
    fs.write(out.str().data(), static_cast<std::streamsize>(out.str().size()));
    if (!fs) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream fs(path, std::ios::binary);
    if (!fs) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(fs)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw std::runtime_error("load_checkpoint: file too small: " + path);
    if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
        throw std::runtime_error("load_checkpoint: bad magic, not a checkpoint: " + path);

    const std::size_t body = buf.size() - 4;
    uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<uint32_t>(buf[body + static_cast<std::size_t>(i)]) << (8 * i);
    if (crc32(buf.data(), body) != stored_crc)
        throw std::runtime_error("load_checkpoint: CRC mismatch, file is corrupted: " + path);

    ckpt_detail::Reader r(buf.data(), body);
    r.bytes(4);  // magic
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: version " + std::to_string(version) +
                                 " not supported (expected " +
                                 std::to_string(kCheckpointVersion) + "): " + path);

    Checkpoint ck;
    while (r.remaining() > 0) {
        const uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        const uint64_t payload_len = r.u64();
        const std::string payload = r.bytes(payload_len);
        ckpt_detail::Reader pr(reinterpret_cast<const unsigned char*>(payload.data()),
                               payload.size());
        if (name == "meta/config") {
            ck.config_text = payload;
        } else if (name == "step") {
            ck.step = pr.u64();
        } else if (name == "rng") {
            for (int i = 0; i < 4; ++i) ck.rng.s[i] = pr.u64();
            ck.rng.has_spare = static_cast<uint8_t>(pr.u64());
            ck.rng.spare = pr.f64();
        } else if (name == "adam/t") {
            ck.adam_t = pr.u64();
        } else if (name.rfind("param/", 0) == 0) {
            ck.params.emplace_back(name.substr(6), ckpt_detail::read_tensor(pr));
        } else if (name.rfind("adam/m/", 0) == 0) {
            ck.adam_m.emplace_back(name.substr(7), ckpt_detail::read_tensor(pr));
        } else if (name.rfind("adam/v/", 0) == 0) {
            ck.adam_v.emplace_back(name.substr(7), ckpt_detail::read_tensor(pr));
        } else {
            throw std::runtime_error("load_checkpoint: unknown record '" + name + "' in " + path);
        }
    }
    return ck;
}

}  // namespace mpvoc
