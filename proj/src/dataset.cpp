#include "adcsl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>

#include "adcsl/errors.hpp"

namespace adcsl {

void Dataset::validate() const {
    if (images.rank() != 4 || images.dim(0) != labels.size()) {
        throw DimensionError("dataset images " + shape_string(images.shape()) + " do not match " +
                             std::to_string(labels.size()) + " labels");
    }
    for (auto l : labels) {
        if (l >= classes) throw ContractError("label " + std::to_string(l) + " out of range");
    }
    std::vector<int> seen(labels.size(), 0);
    for (const auto* split : {&train, &val, &test}) {
        for (auto i : *split) {
            if (i >= labels.size()) throw ContractError("split index out of range");
            ++seen[i];
        }
    }
    if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) {
        throw ContractError("dataset splits must be disjoint and exhaustive");
    }
}

namespace {

void check_spec(const SyntheticSpec& s) {
    if (s.classes < 2 || s.classes > 65535) throw ContractError("synthetic data needs 2..65535 classes");
    if (s.samples_per_class < 1) throw ContractError("synthetic data needs at least one sample per class");
    if (s.channels < 1 || s.patch_size < 1 || s.height % s.patch_size != 0 || s.width % s.patch_size != 0) {
        throw ContractError("synthetic image dims must be multiples of the patch size");
    }
    const std::size_t cells = (s.height / s.patch_size) * (s.width / s.patch_size);
    if (s.marked_patches < 1 || s.marked_patches > cells) throw ContractError("marked_patches out of range");
    if (s.test_fraction < 0 || s.val_fraction < 0 || s.test_fraction + s.val_fraction >= 1) {
        throw ContractError("split fractions must leave a training set");
    }
}

}  // namespace

Tensor synthetic_templates(const SyntheticSpec& spec) {
    check_spec(spec);
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t p = spec.patch_size, gw = spec.width / p;
    const std::size_t cells = (spec.height / p) * gw;
    const std::size_t plane = spec.height * spec.width;
    Tensor templates({spec.classes, spec.channels, spec.height, spec.width});
    for (std::size_t c = 0; c < spec.classes; ++c) {
        std::vector<std::size_t> order(cells);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t m = 0; m < spec.marked_patches; ++m) {
            const std::size_t row0 = (order[m] / gw) * p, col0 = (order[m] % gw) * p;
            for (std::size_t ch = 0; ch < spec.channels; ++ch) {
                for (std::size_t y = 0; y < p; ++y) {
                    for (std::size_t x = 0; x < p; ++x) {
                        templates[(c * spec.channels + ch) * plane + (row0 + y) * spec.width + col0 + x] =
                            spec.signal * normal(rng);
                    }
                }
            }
        }
    }
    return templates;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    const Tensor templates = synthetic_templates(spec);
    const std::size_t count = spec.classes * spec.samples_per_class;
    const std::size_t per = spec.channels * spec.height * spec.width;

    std::mt19937_64 rng(spec.seed ^ 0x5eed5eed5eed5eedULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> amplitude(0.75, 1.25);

    Dataset data;
    data.classes = spec.classes;
    data.images = Tensor({count, spec.channels, spec.height, spec.width});
    data.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t label = i % spec.classes;
        data.labels[i] = static_cast<std::uint16_t>(label);
        const double a = amplitude(rng);
        for (std::size_t j = 0; j < per; ++j) {
            const double v = a * templates[label * per + j] + spec.noise * normal(rng);
            data.images[i * per + j] = static_cast<double>(static_cast<float>(v));
        }
    }

    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::floor(spec.test_fraction * static_cast<double>(count)));
    const auto n_val = static_cast<std::size_t>(std::floor(spec.val_fraction * static_cast<double>(count)));
    data.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    data.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                    order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    data.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), order.end());
    data.validate();
    return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
    data.validate();
    nlohmann::json header;
    header["format"] = "adcsl-dataset";
    header["version"] = 1;
    header["count"] = data.size();
    header["shape"] = data.images.shape();
    header["classes"] = data.classes;
    header["train"] = data.train;
    header["val"] = data.val;
    header["test"] = data.test;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open dataset for writing: " + path);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::vector<float> pixels(data.images.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(data.images[i]);
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(data.labels.data()),
              static_cast<std::streamsize>(data.labels.size() * sizeof(std::uint16_t)));
    if (!out) throw std::runtime_error("failed writing dataset: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1u << 30)) throw std::runtime_error("corrupt dataset header: " + path);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("truncated dataset header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("invalid dataset header in " + path + ": " + e.what());
    }
    if (header.value("format", "") != "adcsl-dataset") throw std::runtime_error("not a dataset file: " + path);

    Dataset data;
    const Shape shape = header.at("shape").get<Shape>();
    data.classes = header.at("classes");
    data.train = header.at("train").get<std::vector<std::size_t>>();
    data.val = header.at("val").get<std::vector<std::size_t>>();
    data.test = header.at("test").get<std::vector<std::size_t>>();

    std::vector<float> pixels(shape_size(shape));
    in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size() * sizeof(float)));
    data.labels.resize(shape.empty() ? 0 : shape[0]);
    in.read(reinterpret_cast<char*>(data.labels.data()),
            static_cast<std::streamsize>(data.labels.size() * sizeof(std::uint16_t)));
    if (!in) throw std::runtime_error("truncated dataset payload: " + path);

    std::vector<double> wide(pixels.begin(), pixels.end());
    data.images = Tensor(shape, std::move(wide));
    data.validate();
    return data;
}

Tensor gather_images(const Dataset& data, std::span<const std::size_t> indices) {
    Shape shape = data.images.shape();
    const std::size_t per = data.images.size() / shape[0];
    shape[0] = indices.size();
    Tensor out(shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy_n(data.images.data().data() + indices[i] * per, per, out.data().data() + i * per);
    }
    return out;
}

std::vector<std::uint16_t> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
    std::vector<std::uint16_t> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = data.labels[indices[i]];
    return out;
}

}  // namespace adcsl
