#include "emgadapt/adam.hpp"

#include <cmath>

namespace emg::nn {

void adam_step(NamedTensors& params, const NamedTensors& grads, AdamState& state,
               const AdamHyper& hyper) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    for (const auto& [name, g] : grads) {
        auto it = params.find(name);
        if (it == params.end())
            throw ConfigError("adam_step: gradient for unknown parameter '" + name + "'");
        Tensor& p = it->second;
        if (!p.same_shape(g))
            throw ShapeError("adam_step: gradient shape " + g.shape_str() +
                             " does not match parameter '" + name + "' " + p.shape_str());
        AdamState::Slot& slot = state.slots[name];
        if (slot.m.size() != p.data.size()) {
            slot.m.assign(p.data.size(), 0.0f);
            slot.v.assign(p.data.size(), 0.0f);
        }
        for (size_t i = 0; i < p.data.size(); ++i) {
            const double gi = g.data[i];
            const double m = hyper.beta1 * slot.m[i] + (1.0 - hyper.beta1) * gi;
            const double v = hyper.beta2 * slot.v[i] + (1.0 - hyper.beta2) * gi * gi;
            slot.m[i] = static_cast<float>(m);
            slot.v[i] = static_cast<float>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            p.data[i] = static_cast<float>(p.data[i] - hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps));
        }
    }
}

} // namespace emg::nn
