#include "crossl/tensor.hpp"

#include <cmath>
#include <sstream>

namespace crossl {

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != shape_product(shape)) {
        throw shape_error("tensor: " + std::to_string(values.size()) +
                          " values do not fill shape " + shape_to_string(shape));
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    std::size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

namespace {

void check_rank(const Tensor& t, std::size_t r) {
    if (t.rank() != r) {
        throw shape_error("tensor: rank-" + std::to_string(r) +
                          " access on shape " + shape_to_string(t.shape));
    }
}

} // namespace

double& Tensor::at(std::size_t i) {
    check_rank(*this, 1);
    return values[i];
}

double& Tensor::at(std::size_t i, std::size_t j) {
    check_rank(*this, 2);
    return values[i * shape[1] + j];
}

double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) {
    check_rank(*this, 3);
    return values[(i * shape[1] + j) * shape[2] + k];
}

double Tensor::at(std::size_t i) const { return const_cast<Tensor*>(this)->at(i); }
double Tensor::at(std::size_t i, std::size_t j) const {
    return const_cast<Tensor*>(this)->at(i, j);
}
double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
    return const_cast<Tensor*>(this)->at(i, j, k);
}

bool Tensor::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double Tensor::item() const {
    if (values.size() != 1) {
        throw shape_error("tensor: item() on non-scalar shape " + shape_to_string(shape));
    }
    return values[0];
}

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void require_shape(const Tensor& t, const std::vector<std::size_t>& expected,
                   const std::string& what) {
    if (t.shape != expected) {
        throw shape_error(what + ": expected shape " + shape_to_string(expected) +
                          ", got " + shape_to_string(t.shape));
    }
}

} // namespace crossl
