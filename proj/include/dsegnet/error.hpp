#pragma once

#include <stdexcept>
#include <string>

namespace dseg {

// Base for every error raised by the library. The CLI maps these to exit
// code 2; messages always name the offending tensor, file, or flag.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible tensor extents. The message carries the full dimension report.
class DimensionError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Raised by batch normalization in eval mode before running statistics exist.
class UninitializedStatisticsError : public Error {
public:
    using Error::Error;
};

}  // namespace dseg
