#pragma once

// Binary PPM (P6) and PGM (P5) with maxval 255. Samples map to [0,1] as
// byte/255 on read and round(v*255) on write, clamped, so any file written
// here survives a read/write cycle byte for byte.

#include <string>

#include "dsegnet/error.hpp"
#include "dsegnet/tensor.hpp"

namespace dseg {

class NetpbmError : public IoError {
public:
    enum class Kind { Open, BadMagic, BadHeader, BadMaxval, Truncated, Write };

    NetpbmError(Kind kind, const std::string& message) : IoError(message), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// (1,3,h,w) image.
Tensor<float> read_ppm(const std::string& path);
void write_ppm(const Tensor<float>& image, const std::string& path);

// (1,1,h,w) single-channel image.
Tensor<float> read_pgm(const std::string& path);
void write_pgm(const Tensor<float>& image, const std::string& path);

std::uint8_t to_byte(float v);

}  // namespace dseg
