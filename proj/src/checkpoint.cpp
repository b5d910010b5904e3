#include "sspl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "sspl/errors.hpp"

namespace sspl {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'P', 'C'};
constexpr uint16_t kVersion = 1;

void put_u16(std::ostream& o, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
    o.write(b, 2);
}
void put_u32(std::ostream& o, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    o.write(b, 4);
}
void put_u64(std::ostream& o, uint64_t v) {
    put_u32(o, static_cast<uint32_t>(v & 0xFFFFFFFFu));
    put_u32(o, static_cast<uint32_t>(v >> 32));
}
void put_f32s(std::ostream& o, const float* data, size_t n) {
    for (size_t i = 0; i < n; ++i) put_u32(o, std::bit_cast<uint32_t>(data[i]));
}

struct Reader {
    explicit Reader(const std::string& path) : in(path, std::ios::binary) {
        if (!in) throw FormatError("checkpoint: cannot open " + path, 0);
    }
    std::ifstream in;
    uint64_t offset = 0;

    void bytes(char* dst, size_t n, const char* what) {
        in.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n)
            throw FormatError("checkpoint: truncated while reading " + std::string(what), offset);
        offset += n;
    }
    uint16_t u16(const char* what) {
        unsigned char b[2];
        bytes(reinterpret_cast<char*>(b), 2, what);
        return static_cast<uint16_t>(b[0] | (b[1] << 8));
    }
    uint32_t u32(const char* what) {
        unsigned char b[4];
        bytes(reinterpret_cast<char*>(b), 4, what);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }
    uint64_t u64(const char* what) {
        const uint64_t lo = u32(what);
        const uint64_t hi = u32(what);
        return lo | (hi << 32);
    }
    void f32s(float* dst, size_t n, const char* what) {
        for (size_t i = 0; i < n; ++i) dst[i] = std::bit_cast<float>(u32(what));
    }
};

} // namespace

void checkpoint_save(const std::string& path, const CheckpointMeta& meta,
                     const nn::ParamList<float>& params, const std::vector<MomentPair>& moments) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, 4);
    put_u16(out, kVersion);
    put_u32(out, static_cast<uint32_t>(meta.config_text.size()));
    out.write(meta.config_text.data(), static_cast<std::streamsize>(meta.config_text.size()));
    put_u32(out, meta.epoch);
    put_u64(out, meta.seed);
    put_u64(out, meta.optimizer_step);
    put_u32(out, static_cast<uint32_t>(params.size()));
    for (const auto& p : params) {
        put_u16(out, static_cast<uint16_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        out.put(static_cast<char>(p.trainable ? 1 : 0));
        out.put(static_cast<char>(p.tensor.ndim()));
        for (int d = 0; d < p.tensor.ndim(); ++d) put_u32(out, static_cast<uint32_t>(p.tensor.dim(d)));
        put_f32s(out, p.tensor.data(), static_cast<size_t>(p.tensor.size()));
    }
    out.put(static_cast<char>(moments.empty() ? 0 : 1));
    if (!moments.empty()) {
        put_u32(out, static_cast<uint32_t>(moments.size()));
        for (const auto& mp : moments) {
            put_u32(out, static_cast<uint32_t>(mp.m.size()));
            put_f32s(out, mp.m.data(), mp.m.size());
            put_f32s(out, mp.v.data(), mp.v.size());
        }
    }
    if (!out) throw UsageError("checkpoint: write failed for " + path);
}

RawCheckpoint checkpoint_read(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("checkpoint: bad magic", 0);
    if (r.u16("version") != kVersion) throw FormatError("checkpoint: unsupported version", 4);
    RawCheckpoint raw;
    const uint32_t cfg_len = r.u32("config length");
    raw.meta.config_text.resize(cfg_len);
    if (cfg_len) r.bytes(raw.meta.config_text.data(), cfg_len, "config echo");
    raw.meta.epoch = r.u32("epoch");
    raw.meta.seed = r.u64("seed");
    raw.meta.optimizer_step = r.u64("optimizer step");
    const uint32_t n = r.u32("parameter count");
    for (uint32_t i = 0; i < n; ++i) {
        RawCheckpoint::Entry e;
        const uint16_t name_len = r.u16("name length");
        e.name.resize(name_len);
        r.bytes(e.name.data(), name_len, "name");
        char trainable;
        r.bytes(&trainable, 1, "trainable flag");
        char ndim;
        r.bytes(&ndim, 1, "rank");
        int64_t count = 1;
        for (int d = 0; d < ndim; ++d) {
            e.shape.push_back(static_cast<int>(r.u32("dim")));
            count *= e.shape.back();
        }
        e.data.resize(static_cast<size_t>(count));
        r.f32s(e.data.data(), e.data.size(), e.name.c_str());
        raw.entries.push_back(std::move(e));
    }
    char has_opt;
    r.bytes(&has_opt, 1, "optimizer flag");
    if (has_opt) {
        const uint32_t k = r.u32("moment count");
        for (uint32_t i = 0; i < k; ++i) {
            MomentPair mp;
            const uint32_t sz = r.u32("moment size");
            mp.m.resize(sz);
            mp.v.resize(sz);
            r.f32s(mp.m.data(), sz, "first moment");
            r.f32s(mp.v.data(), sz, "second moment");
            raw.moments.push_back(std::move(mp));
        }
    }
    return raw;
}

void checkpoint_apply(const RawCheckpoint& raw, const nn::ParamList<float>& params) {
    std::map<std::string, const RawCheckpoint::Entry*> by_name;
    for (const auto& e : raw.entries) by_name[e.name] = &e;
    for (const auto& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end())
            throw FormatError("checkpoint: missing parameter '" + p.name + "'", 0);
        const auto& e = *it->second;
        if (e.shape != p.tensor.shape())
            throw FormatError("checkpoint: shape mismatch for parameter '" + p.name + "'", 0);
        std::memcpy(const_cast<float*>(p.tensor.data()), e.data.data(),
                    e.data.size() * sizeof(float));
    }
}

} // namespace sspl
