#pragma once

#include <cstdint>
#include <string>

#include "dsegnet/error.hpp"
#include "dsegnet/layers.hpp"

namespace dseg {

class WeightFileError : public IoError {
public:
    enum class Kind { BadMagic, BadVersion, NameNotFound, ShapeMismatch, UnexpectedEof, BadDtype };

    WeightFileError(Kind kind, const std::string& message) : IoError(message), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

inline constexpr std::uint32_t kWeightFileVersion = 1;

// Writes every registered tensor (running statistics included) in registry
// order. Float registries write dtype 0; double registries write dtype 1.
template <typename T>
void save_weights(const ParamRegistry<T>& reg, const std::string& path);

// The file is parsed and checked against the registry completely before any
// value is overwritten, so a failed load leaves the model untouched.
template <typename T>
void load_weights(ParamRegistry<T>& reg, const std::string& path);

}  // namespace dseg
