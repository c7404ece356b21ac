#pragma once

#include <thread>
#include <vector>

#include "adcsl/harness.hpp"

namespace fixture {

struct Trained {
    std::vector<adcsl::Tensor> client, server;
    std::vector<adcsl::StepReport> steps;
};

/// Runs `steps` lockstep iterations over an in-process pair on consecutive training
/// batches (no shuffling) and returns both halves' parameters.
inline Trained train_session(adcsl::RunConfig cfg, const adcsl::Dataset& data, std::size_t steps) {
    using namespace adcsl;
    cfg.model.classes = data.classes;
    cfg.resolve();
    auto [client_end, server_end] = inprocess_pair();
    ServerSession server(cfg);
    std::thread t([&, ep = server_end.get()] {
        try {
            serve_session(server, *ep);
        } catch (...) {
        }
    });
    Trained out;
    {
        ClientSession client(cfg, *client_end, 1e300);
        client.handshake();
        const std::size_t per_epoch = data.train.size() / cfg.batch_size;
        for (std::size_t s = 0; s < steps; ++s) {
            const std::size_t b = s % per_epoch;
            std::vector<std::size_t> idx(data.train.begin() + static_cast<std::ptrdiff_t>(b * cfg.batch_size),
                                         data.train.begin() + static_cast<std::ptrdiff_t>((b + 1) * cfg.batch_size));
            out.steps.push_back(client.train_step(gather_images(data, idx), gather_labels(data, idx)));
        }
        client.shutdown();
        for (Param* p : client.parameters()) out.client.push_back(p->value);
    }
    t.join();
    for (Param* p : server.parameters()) out.server.push_back(p->value);
    return out;
}

inline double max_param_diff(const Trained& a, const Trained& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.client.size(); ++i) worst = std::max(worst, adcsl::max_abs_diff(a.client[i], b.client[i]));
    for (std::size_t i = 0; i < a.server.size(); ++i) worst = std::max(worst, adcsl::max_abs_diff(a.server[i], b.server[i]));
    return worst;
}

}  // namespace fixture
