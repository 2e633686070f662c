#pragma once

#include <cassert>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvstta {

// Dense row-major tensor of doubles. Shape {1} is used for scalars.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0)
        : shape(std::move(s)), data(static_cast<size_t>(count(shape)), fill) {}
    Tensor(std::vector<int> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (count(shape) != static_cast<long long>(data.size()))
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    static long long count(const std::vector<int>& s) {
        long long n = 1;
        for (int e : s) {
            if (e <= 0) throw std::invalid_argument("Tensor: nonpositive extent");
            n *= e;
        }
        return n;
    }

    int numel() const { return static_cast<int>(data.size()); }
    bool is_scalar() const { return data.size() == 1; }

    double& operator[](int i) { return data[static_cast<size_t>(i)]; }
    double operator[](int i) const { return data[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        // NaN/Inf propagate through the running sum; if the sum itself
        // overflowed on finite inputs the slow scan clears the false alarm.
        double acc = 0.0;
        for (double v : data) acc += v;
        if (std::isfinite(acc)) return true;
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const { return shape_str(shape); }

    static std::string shape_str(const std::vector<int>& s) {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << "]";
        return os.str();
    }
};

}  // namespace mvstta
