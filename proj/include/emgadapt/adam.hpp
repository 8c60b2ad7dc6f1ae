#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "emgadapt/tensor.hpp"

namespace emg::nn {

using NamedTensors = std::map<std::string, Tensor>;

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment buffers per parameter plus a shared step counter.
struct AdamState {
    struct Slot {
        std::vector<float> m;
        std::vector<float> v;
    };
    int64_t step = 0;
    std::map<std::string, Slot> slots;
};

// One bias-corrected Adam update applied in place to every entry of `grads`.
// Parameters without a gradient are left untouched. Deterministic.
void adam_step(NamedTensors& params, const NamedTensors& grads, AdamState& state,
               const AdamHyper& hyper);

} // namespace emg::nn
