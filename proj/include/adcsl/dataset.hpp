#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adcsl/tensor.hpp"

namespace adcsl {

struct Dataset {
    Tensor images;  // [N x C x H x W], values representable in float32
    std::vector<std::uint16_t> labels;
    std::size_t classes = 0;
    std::vector<std::size_t> train, val, test;

    std::size_t size() const { return labels.size(); }
    /// Labels in range, splits disjoint and covering every sample.
    void validate() const;
};

struct SyntheticSpec {
    std::size_t classes = 10;
    std::size_t samples_per_class = 120;
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t patch_size = 8;
    /// Patch cells that carry the class texture.
    std::size_t marked_patches = 3;
    double signal = 1.0;
    double noise = 1.0;
    double test_fraction = 0.2;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
};

/// Every class owns a fixed set of patch cells, each with its own Gaussian texture; a
/// sample is its class template at a random amplitude plus iid Gaussian noise. Splits
/// come from a seeded shuffle.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Class templates used by generate_synthetic, [classes x C x H x W].
Tensor synthetic_templates(const SyntheticSpec& spec);

/// u64 LE header length, JSON header, f32 images, u16 labels.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

Tensor gather_images(const Dataset& data, std::span<const std::size_t> indices);
std::vector<std::uint16_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

}  // namespace adcsl
