#pragma once

#include <random>

#include "adcsl/dataset.hpp"
#include "adcsl/harness.hpp"
#include "adcsl/vit.hpp"

namespace fixture {

/// Three blocks split after two, 8x8 single-channel images, d = 8.
inline adcsl::ViTConfig toy_model(std::size_t classes = 3) {
    adcsl::ViTConfig c;
    c.channels = 1;
    c.height = 8;
    c.width = 8;
    c.patch_size = 4;
    c.embed_dim = 8;
    c.heads = 2;
    c.head_dim_qk = 4;
    c.head_dim_v = 4;
    c.blocks = 3;
    c.split_point = 2;
    c.classes = classes;
    c.ffn_ratio = 2;
    return c;
}

/// Run configuration around the toy model with a small synthetic dataset.
inline adcsl::RunConfig toy_run(std::size_t batch = 6) {
    adcsl::RunConfig cfg;
    cfg.model = toy_model();
    cfg.batch_size = batch;
    cfg.data.classes = 3;
    cfg.data.samples_per_class = 20;
    cfg.data.marked_patches = 1;
    cfg.data.channels = 1;
    cfg.data.height = 8;
    cfg.data.width = 8;
    cfg.data.patch_size = 4;
    return cfg;
}

inline adcsl::Tensor random_images(std::size_t batch, const adcsl::ViTConfig& c, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    adcsl::Tensor t({batch, c.channels, c.height, c.width});
    for (auto& x : t.data()) x = normal(rng);
    return t;
}

}  // namespace fixture
