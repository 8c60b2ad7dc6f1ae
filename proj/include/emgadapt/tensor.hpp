#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "emgadapt/errors.hpp"

namespace emg::nn {

// Dense row-major float32 tensor. Gradients, when materialized, live in
// `grad` with the same element count as `data`.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad; // empty = no gradient buffer

    Tensor() = default;
    Tensor(std::vector<int64_t> s, float fill = 0.0f);

    int64_t numel() const;
    int rank() const { return static_cast<int>(shape.size()); }

    // 2-D accessors; throw on rank mismatch.
    int64_t rows() const;
    int64_t cols() const;
    float& at(int64_t r, int64_t c);
    float at(int64_t r, int64_t c) const;

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    void ensure_grad(); // allocate + zero-fill grad
    void zero_grad();
    bool all_finite() const;

    std::string shape_str() const;
};

Tensor make_tensor(std::vector<int64_t> shape, std::vector<float> values);
Tensor make_scalar(float v);
Tensor make_matrix(std::initializer_list<std::initializer_list<float>> rows);

int64_t shape_numel(const std::vector<int64_t>& shape);

// Deterministic seed derivation: mixes a base seed with a stream label so
// independent RNG streams never overlap.
uint64_t mix_seed(uint64_t seed, uint64_t stream);
uint64_t mix_seed(uint64_t seed, const std::string& label);

// N(0, std^2) fill using a named, pinned generator.
void fill_normal(Tensor& t, std::mt19937_64& rng, double stddev);
Tensor randn(std::vector<int64_t> shape, std::mt19937_64& rng, double stddev = 1.0);

} // namespace emg::nn
