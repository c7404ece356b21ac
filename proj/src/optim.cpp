#include "adcsl/optim.hpp"

#include <cmath>

#include "adcsl/errors.hpp"

namespace adcsl {

void Adam::step(const ParamRefs& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw ContractError("Adam: parameter and gradient counts differ");
    if (m_.empty()) {
        for (const Param* p : params) {
            m_.push_back(Tensor::zeros(p->value.shape()));
            v_.push_back(Tensor::zeros(p->value.shape()));
        }
    }
    if (m_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");

    ++steps_;
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(options_.beta1, t);
    const double c2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& w = params[i]->value;
        const Tensor& g = grads[i];
        if (g.shape() != w.shape() || m_[i].shape() != w.shape()) {
            throw DimensionError("Adam: gradient shape mismatch for " + params[i]->name);
        }
        for (std::size_t j = 0; j < w.size(); ++j) {
            m_[i][j] = options_.beta1 * m_[i][j] + (1.0 - options_.beta1) * g[j];
            v_[i][j] = options_.beta2 * v_[i][j] + (1.0 - options_.beta2) * g[j] * g[j];
            const double mhat = m_[i][j] / c1;
            const double vhat = v_[i][j] / c2;
            w[j] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
        }
    }
}

}  // namespace adcsl
