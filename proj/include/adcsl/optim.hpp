#pragma once

#include <cstddef>
#include <vector>

#include "adcsl/tensor.hpp"
#include "adcsl/vit.hpp"

namespace adcsl {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list; moments are created on the first step.
class Adam {
public:
    explicit Adam(AdamOptions options = {}) : options_(options) {}

    /// `grads[i]` belongs to `params[i]`; the list must not change between steps.
    void step(const ParamRefs& params, const std::vector<Tensor>& grads);

    std::size_t steps() const { return steps_; }
    const AdamOptions& options() const { return options_; }

private:
    AdamOptions options_;
    std::size_t steps_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace adcsl
