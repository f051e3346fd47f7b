#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dseg {

// Extents of an N,C,H,W tensor.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t numel() const { return n * c * h * w; }
    constexpr std::size_t plane() const { return h * w; }
    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    std::string str() const;
};

// Dense row-major N,C,H,W array. Element (i,j,y,x) lives at
// ((i*c + j)*h + y)*w + x. Copies are deep.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> data);

    static Tensor zeros(Shape shape) { return Tensor(shape, T(0)); }
    static Tensor full(Shape shape, T value) { return Tensor(shape, value); }

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }

    std::size_t offset(std::size_t i, std::size_t j, std::size_t y, std::size_t x) const {
        return ((i * shape_.c + j) * shape_.h + y) * shape_.w + x;
    }
    T& at(std::size_t i, std::size_t j, std::size_t y, std::size_t x) { return data_[offset(i, j, y, x)]; }
    const T& at(std::size_t i, std::size_t j, std::size_t y, std::size_t x) const {
        return data_[offset(i, j, y, x)];
    }
    T& operator[](std::size_t k) { return data_[k]; }
    const T& operator[](std::size_t k) const { return data_[k]; }

    void fill(T value);

    // Pointer to the h*w plane of sample i, channel j.
    T* plane(std::size_t i, std::size_t j) { return data_.data() + (i * shape_.c + j) * shape_.plane(); }
    const T* plane(std::size_t i, std::size_t j) const {
        return data_.data() + (i * shape_.c + j) * shape_.plane();
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool bitwise_equal(const Tensor& other) const;

private:
    Shape shape_{};
    std::vector<T> data_;
};

// Diagnostic text dump used by golden-file tests:
//   shape n c h w
// followed by h rows of w values for every (sample, channel) plane.
template <typename T>
void write_text(std::ostream& os, const Tensor<T>& t);
template <typename T>
Tensor<T> read_text(std::istream& is);

// Maximum absolute elementwise difference; shapes must match.
template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace dseg
