#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "crossl/errors.hpp"

namespace crossl {

// Dense n-dimensional array of doubles, row-major. The single value type for
// signals, embeddings, parameters and gradients across the library.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> v);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor scalar(double value);

    std::size_t size() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool empty() const { return values.empty(); }

    // Rank-checked element accessors for tests and small helpers; hot loops
    // index values directly.
    double& at(std::size_t i);
    double& at(std::size_t i, std::size_t j);
    double& at(std::size_t i, std::size_t j, std::size_t k);
    double at(std::size_t i) const;
    double at(std::size_t i, std::size_t j) const;
    double at(std::size_t i, std::size_t j, std::size_t k) const;

    bool all_finite() const;
    double item() const; // single-element tensors only
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);
void require_shape(const Tensor& t, const std::vector<std::size_t>& expected,
                   const std::string& what);

// Row-major boolean matrix; used for per-(sample, modality) availability.
struct BoolMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> bits;

    BoolMatrix() = default;
    BoolMatrix(std::size_t r, std::size_t c, bool fill = true)
        : rows(r), cols(c), bits(r * c, fill ? 1 : 0) {}

    bool get(std::size_t r, std::size_t c) const { return bits[r * cols + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { bits[r * cols + c] = v ? 1 : 0; }
    bool operator==(const BoolMatrix&) const = default;
};

} // namespace crossl
