#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "cgraseg/errors.hpp"
#include "cgraseg/quant.hpp"

// Quantized-weight container and its binary file format.
//
// LMQW layout (all integers little-endian):
//   magic "LMQW" | u16 version (=1) | u32 tensor count
//   per tensor:
//     u16 name length | name bytes (UTF-8)
//     u8  rank | u32 dims[rank]
//     f32 scale | i32 zero_point
//     u8  element width in bits (8/16/32)
//     raw little-endian elements (width/8 bytes each, signed)
//
// Round-trips must be bit-exact; tensors are kept name-sorted so writes are
// deterministic.

namespace cgraseg {

struct WeightStore {
    std::map<std::string, QTensor> tensors;

    const QTensor& get(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IoError("weight store: missing tensor '" + name + "'");
        return it->second;
    }
    bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    put_bytes(os, b, 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(os, b, 4);
}

inline void put_i32(std::ostream& os, std::int32_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
}

inline void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

inline void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw IoError(std::string("LMQW: truncated while reading ") + what);
    }
}

inline std::uint16_t get_u16(std::istream& is, const char* what) {
    unsigned char b[2];
    get_bytes(is, b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    get_bytes(is, b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::int32_t get_i32(std::istream& is, const char* what) {
    return static_cast<std::int32_t>(get_u32(is, what));
}

inline float get_f32(std::istream& is, const char* what) {
    std::uint32_t bits = get_u32(is, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

} // namespace detail

inline void write_lmqw(std::ostream& os, const WeightStore& store) {
    using namespace detail;
    put_bytes(os, "LMQW", 4);
    put_u16(os, 1);
    put_u32(os, static_cast<std::uint32_t>(store.tensors.size()));
    for (const auto& [name, t] : store.tensors) {
        t.validate();
        if (name.size() > 0xffff) throw IoError("LMQW: tensor name too long");
        if (t.dims.size() > 0xff) throw IoError("LMQW: tensor rank too large");
        put_u16(os, static_cast<std::uint16_t>(name.size()));
        put_bytes(os, name.data(), name.size());
        os.put(static_cast<char>(t.dims.size()));
        for (std::uint32_t d : t.dims) put_u32(os, d);
        put_f32(os, static_cast<float>(t.params.scale));
        put_i32(os, t.params.zero_point);
        os.put(static_cast<char>(t.params.bits));
        const int width = t.params.bits / 8;
        for (std::int32_t v : t.data) {
            for (int i = 0; i < width; ++i) {
                os.put(static_cast<char>((static_cast<std::uint32_t>(v) >> (8 * i)) & 0xff));
            }
        }
    }
    if (!os) throw IoError("LMQW: write failed");
}

inline WeightStore read_lmqw(std::istream& is) {
    using namespace detail;
    char magic[4];
    get_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, "LMQW", 4) != 0) throw IoError("LMQW: bad magic");
    const std::uint16_t version = get_u16(is, "version");
    if (version != 1) {
        throw IoError("LMQW: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = get_u32(is, "tensor count");

    WeightStore store;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = get_u16(is, "name length");
        std::string name(name_len, '\0');
        get_bytes(is, name.data(), name_len, "name");

        QTensor t;
        unsigned char rank;
        get_bytes(is, &rank, 1, "rank");
        t.dims.resize(rank);
        for (auto& d : t.dims) d = get_u32(is, "dims");
        t.params.scale = get_f32(is, "scale");
        t.params.zero_point = get_i32(is, "zero_point");
        unsigned char bits;
        get_bytes(is, &bits, 1, "element width");
        t.params.bits = bits;
        if (bits != 8 && bits != 16 && bits != 32) {
            throw IoError("LMQW: bad element width " + std::to_string(bits));
        }

        const std::uint64_t n = t.element_count();
        const int width = bits / 8;
        t.data.resize(n);
        for (std::uint64_t e = 0; e < n; ++e) {
            std::uint32_t raw = 0;
            unsigned char b[4] = {0, 0, 0, 0};
            get_bytes(is, b, static_cast<std::size_t>(width), "elements");
            for (int k = 0; k < width; ++k) raw |= static_cast<std::uint32_t>(b[k]) << (8 * k);
            // Sign-extend from the stored width.
            const std::uint32_t sign_bit = 1u << (bits - 1);
            if (bits < 32 && (raw & sign_bit)) raw |= ~((sign_bit << 1) - 1);
            t.data[e] = static_cast<std::int32_t>(raw);
        }
        t.validate();
        if (!store.tensors.emplace(std::move(name), std::move(t)).second) {
            throw IoError("LMQW: duplicate tensor name");
        }
    }
    return store;
}

inline void write_lmqw_file(const std::string& path, const WeightStore& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write_lmqw(os, store);
}

inline WeightStore read_lmqw_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    return read_lmqw(is);
}

inline std::string lmqw_to_string(const WeightStore& store) {
    std::ostringstream os(std::ios::binary);
    write_lmqw(os, store);
    return os.str();
}

} // namespace cgraseg
