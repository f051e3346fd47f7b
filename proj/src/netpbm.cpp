#include "dsegnet/netpbm.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <vector>

namespace dseg {
namespace {

using Kind = NetpbmError::Kind;

struct Parsed {
    std::size_t w = 0, h = 0;
    std::vector<unsigned char> payload;
};

Parsed parse(const std::string& path, const char* magic, std::size_t channels) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw NetpbmError(Kind::Open, "cannot open '" + path + "'");
    const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(f), {}};
    std::size_t pos = 0;

    if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
        throw NetpbmError(Kind::BadMagic, path + ": bad magic, expected " + magic);
    }
    pos = 2;
    auto is_space = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
    auto next_number = [&](const char* what) -> std::size_t {
        for (;;) {
            while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        if (pos >= bytes.size()) throw NetpbmError(Kind::Truncated, path + ": truncated header reading " + what);
        if (bytes[pos] < '0' || bytes[pos] > '9') {
            throw NetpbmError(Kind::BadHeader, path + ": malformed header field " + what);
        }
        std::size_t v = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + (bytes[pos++] - '0');
            if (v > (1u << 24)) throw NetpbmError(Kind::BadHeader, path + ": header field " + what + " too large");
        }
        return v;
    };
    Parsed p;
    p.w = next_number("width");
    p.h = next_number("height");
    const std::size_t maxval = next_number("maxval");
    if (maxval != 255) throw NetpbmError(Kind::BadMaxval, path + ": maxval " + std::to_string(maxval) + " != 255");
    if (p.w == 0 || p.h == 0) throw NetpbmError(Kind::BadHeader, path + ": zero extent");
    if (pos >= bytes.size() || !is_space(bytes[pos])) {
        throw NetpbmError(Kind::Truncated, path + ": missing separator before payload");
    }
    ++pos;
    const std::size_t need = p.w * p.h * channels;
    if (bytes.size() - pos < need) {
        throw NetpbmError(Kind::Truncated, path + ": truncated payload (" + std::to_string(bytes.size() - pos) + " of " +
                                               std::to_string(need) + " bytes)");
    }
    p.payload.assign(bytes.begin() + static_cast<long>(pos), bytes.begin() + static_cast<long>(pos + need));
    return p;
}

void emit(const std::string& path, const char* magic, std::size_t w, std::size_t h,
          const std::vector<unsigned char>& payload) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw NetpbmError(Kind::Write, "cannot open '" + path + "' for writing");
    const std::string header = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!f) throw NetpbmError(Kind::Write, "write failed for '" + path + "'");
}

}  // namespace

std::uint8_t to_byte(float v) {
    const float c = std::min(1.0f, std::max(0.0f, std::isnan(v) ? 0.0f : v));
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

Tensor<float> read_ppm(const std::string& path) {
    const Parsed p = parse(path, "P6", 3);
    Tensor<float> t(Shape{1, 3, p.h, p.w});
    for (std::size_t y = 0; y < p.h; ++y)
        for (std::size_t x = 0; x < p.w; ++x)
            for (std::size_t c = 0; c < 3; ++c) t.at(0, c, y, x) = p.payload[(y * p.w + x) * 3 + c] / 255.0f;
    return t;
}

void write_ppm(const Tensor<float>& image, const std::string& path) {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3) throw DimensionError("write_ppm: expected (1,3,h,w), got " + s.str());
    std::vector<unsigned char> payload(s.h * s.w * 3);
    for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x)
            for (std::size_t c = 0; c < 3; ++c) payload[(y * s.w + x) * 3 + c] = to_byte(image.at(0, c, y, x));
    emit(path, "P6", s.w, s.h, payload);
}

Tensor<float> read_pgm(const std::string& path) {
    const Parsed p = parse(path, "P5", 1);
    Tensor<float> t(Shape{1, 1, p.h, p.w});
    for (std::size_t i = 0; i < p.payload.size(); ++i) t[i] = p.payload[i] / 255.0f;
    return t;
}

void write_pgm(const Tensor<float>& image, const std::string& path) {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 1) throw DimensionError("write_pgm: expected (1,1,h,w), got " + s.str());
    std::vector<unsigned char> payload(s.h * s.w);
    for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = to_byte(image[i]);
    emit(path, "P5", s.w, s.h, payload);
}

}  // namespace dseg
