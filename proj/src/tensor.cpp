#include "dsegnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "dsegnet/error.hpp"

namespace dseg {

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape), data_(shape.numel(), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_.str());
    }
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::bitwise_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(T)) == 0);
}

template <typename T>
void write_text(std::ostream& os, const Tensor<T>& t) {
    const Shape& s = t.shape();
    os << "shape " << s.n << ' ' << s.c << ' ' << s.h << ' ' << s.w << '\n';
    os << std::setprecision(std::numeric_limits<T>::max_digits10);
    for (std::size_t i = 0; i < s.n; ++i) {
        for (std::size_t j = 0; j < s.c; ++j) {
            for (std::size_t y = 0; y < s.h; ++y) {
                for (std::size_t x = 0; x < s.w; ++x) {
                    if (x) os << ' ';
                    os << t.at(i, j, y, x);
                }
                os << '\n';
            }
        }
    }
}

template <typename T>
Tensor<T> read_text(std::istream& is) {
    std::string tag;
    Shape s;
    if (!(is >> tag >> s.n >> s.c >> s.h >> s.w) || tag != "shape") {
        throw IoError("tensor text dump: missing 'shape n c h w' header");
    }
    std::vector<T> data(s.numel());
    for (auto& v : data) {
        if (!(is >> v)) throw IoError("tensor text dump: expected " + std::to_string(s.numel()) + " values");
    }
    return Tensor<T>(s, std::move(data));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape())) {
        throw DimensionError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
    }
    double m = 0.0;
    for (std::size_t k = 0; k < a.numel(); ++k) {
        m = std::max(m, std::abs(static_cast<double>(a[k]) - static_cast<double>(b[k])));
    }
    return m;
}

template class Tensor<float>;
template class Tensor<double>;
template void write_text(std::ostream&, const Tensor<float>&);
template void write_text(std::ostream&, const Tensor<double>&);
template Tensor<float> read_text(std::istream&);
template Tensor<double> read_text(std::istream&);
template double max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace dseg
