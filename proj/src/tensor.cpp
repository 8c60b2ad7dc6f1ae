#include "emgadapt/tensor.hpp"

#include <cmath>
#include <sstream>

namespace emg::nn {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int64_t> s, float fill)
    : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), fill) {}

int64_t Tensor::numel() const { return static_cast<int64_t>(data.size()); }

int64_t Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows(): tensor is not 2-D, shape " + shape_str());
    return shape[0];
}

int64_t Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols(): tensor is not 2-D, shape " + shape_str());
    return shape[1];
}

float& Tensor::at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
float Tensor::at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
}

void Tensor::zero_grad() { grad.assign(grad.size(), 0.0f); }

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor make_tensor(std::vector<int64_t> shape, std::vector<float> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw ShapeError("make_tensor: value count does not match shape");
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::move(values);
    return t;
}

Tensor make_scalar(float v) { return make_tensor({1}, {v}); }

Tensor make_matrix(std::initializer_list<std::initializer_list<float>> rows) {
    std::vector<float> vals;
    int64_t r = static_cast<int64_t>(rows.size());
    int64_t c = r ? static_cast<int64_t>(rows.begin()->size()) : 0;
    for (const auto& row : rows) {
        if (static_cast<int64_t>(row.size()) != c)
            throw ShapeError("make_matrix: ragged rows");
        vals.insert(vals.end(), row.begin(), row.end());
    }
    return make_tensor({r, c}, std::move(vals));
}

namespace {
uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
} // namespace

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 1));
}

uint64_t mix_seed(uint64_t seed, const std::string& label) {
    uint64_t h = 1469598103934665603ULL; // FNV-1a
    for (unsigned char ch : label) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return mix_seed(seed, h);
}

void fill_normal(Tensor& t, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (float& v : t.data) v = static_cast<float>(dist(rng));
}

Tensor randn(std::vector<int64_t> shape, std::mt19937_64& rng, double stddev) {
    Tensor t(std::move(shape));
    fill_normal(t, rng, stddev);
    return t;
}

} // namespace emg::nn
