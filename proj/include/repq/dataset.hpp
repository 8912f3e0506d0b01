#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "repq/tensor.hpp"

namespace repq {

struct Dataset {
    int channels = 3, height = 32, width = 32;
    std::vector<float> images; // n * c * h * w, contiguous per image
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t image_len() const { return static_cast<std::size_t>(channels) * height * width; }
    Tensor4 batch(const std::vector<int>& indices) const;
    Dataset subset(std::size_t first, std::size_t count) const;
};

// CIFAR-10 normalization constants applied by load_cifar10.
inline constexpr float kCifarMean[3] = {0.4914f, 0.4822f, 0.4465f};
inline constexpr float kCifarStd[3] = {0.2470f, 0.2435f, 0.2616f};

// Reads every *.bin file under dir (sorted by name) as 3073-byte records:
// 1 label byte + 3072 CHW pixel bytes (R plane, G plane, B plane). Pixels
// are scaled to [0,1] then normalized per channel.
Dataset load_cifar10(const std::string& dir);
Dataset load_cifar10_file(const std::string& path);

// Class-conditional Gaussian-blob images in [0,1] pixel space, balanced
// labels, linearly separable at the blob centers. Deterministic per seed.
Dataset synth_dataset(std::uint64_t seed, int n, int classes, int size);

// Writes a dataset of [0,1]-pixel images as CIFAR-10 binary records (the
// inverse of load_cifar10's byte layout, without normalization).
void write_cifar10_file(const Dataset& data, const std::string& path);

} // namespace repq
