#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "cgraseg/errors.hpp"
#include "cgraseg/metrics.hpp"

// Binary PPM (P6) images in, binary PGM (P5) class-id maps out. Both are
// dependency-free and bit-exact in any language, which keeps inference
// outputs byte-comparable across runs and implementations. maxval is fixed
// at 255.

namespace cgraseg {

struct Image {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t channels = 3;
    std::vector<std::uint8_t> data; // row-major, interleaved channels

    std::uint8_t at(std::uint32_t y, std::uint32_t x, std::uint32_t c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

namespace detail {

// Reads one whitespace-delimited token, skipping '#' comment lines.
inline std::string pnm_token(std::istream& is, const std::string& path) {
    std::string tok;
    int ch = is.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
        } else if (std::isspace(ch)) {
            ch = is.get();
        } else {
            break;
        }
    }
    while (ch != EOF && !std::isspace(ch)) {
        tok.push_back(static_cast<char>(ch));
        ch = is.get();
    }
    if (tok.empty()) throw IoError(path + ": truncated header");
    return tok;
}

inline std::uint32_t pnm_number(std::istream& is, const std::string& path) {
    const std::string tok = pnm_token(is, path);
    try {
        return static_cast<std::uint32_t>(std::stoul(tok));
    } catch (const std::exception&) {
        throw IoError(path + ": bad header field '" + tok + "'");
    }
}

inline std::vector<std::uint8_t> pnm_payload(std::istream& is, std::size_t n,
                                             const std::string& path) {
    std::vector<std::uint8_t> data(n);
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw IoError(path + ": truncated pixel data");
    }
    return data;
}

} // namespace detail

inline Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    if (detail::pnm_token(is, path) != "P6") throw IoError(path + ": expected binary PPM (P6)");
    Image img;
    img.width = detail::pnm_number(is, path);
    img.height = detail::pnm_number(is, path);
    const std::uint32_t maxval = detail::pnm_number(is, path);
    if (maxval != 255) throw IoError(path + ": only maxval 255 is supported");
    if (img.width < 1 || img.height < 1) throw IoError(path + ": empty image");
    img.channels = 3;
    img.data = detail::pnm_payload(is, static_cast<std::size_t>(img.width) * img.height * 3, path);
    return img;
}

inline void write_ppm(const std::string& path, const Image& img) {
    if (img.channels != 3) throw IoError("PPM requires 3 channels");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.data.data()),
             static_cast<std::streamsize>(img.data.size()));
    if (!os) throw IoError("write failed for '" + path + "'");
}

inline LabelMap read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    if (detail::pnm_token(is, path) != "P5") throw IoError(path + ": expected binary PGM (P5)");
    LabelMap map;
    map.width = detail::pnm_number(is, path);
    map.height = detail::pnm_number(is, path);
    const std::uint32_t maxval = detail::pnm_number(is, path);
    if (maxval != 255) throw IoError(path + ": only maxval 255 is supported");
    if (map.width < 1 || map.height < 1) throw IoError(path + ": empty map");
    map.data = detail::pnm_payload(is, static_cast<std::size_t>(map.width) * map.height, path);
    return map;
}

inline void write_pgm(const std::string& path, const LabelMap& map) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "P5\n" << map.width << " " << map.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(map.data.data()),
             static_cast<std::streamsize>(map.data.size()));
    if (!os) throw IoError("write failed for '" + path + "'");
}

} // namespace cgraseg
