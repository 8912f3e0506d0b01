#include "repq/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "repq/errors.hpp"
#include "repq/rng.hpp"

namespace repq {

namespace fs = std::filesystem;

Tensor4 Dataset::batch(const std::vector<int>& indices) const {
    Tensor4 out(static_cast<int>(indices.size()), channels, height, width);
    const std::size_t len = image_len();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t idx = static_cast<std::size_t>(indices[i]);
        if (idx >= size()) throw ConfigError("batch: index out of range");
        std::copy_n(images.data() + idx * len, len, out.data() + i * len);
    }
    return out;
}

Dataset Dataset::subset(std::size_t first, std::size_t count) const {
    if (first + count > size()) throw ConfigError("subset: range out of bounds");
    Dataset out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    const std::size_t len = image_len();
    out.images.assign(images.begin() + static_cast<std::ptrdiff_t>(first * len),
                      images.begin() + static_cast<std::ptrdiff_t>((first + count) * len));
    out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(first),
                      labels.begin() + static_cast<std::ptrdiff_t>(first + count));
    return out;
}

Dataset load_cifar10_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    constexpr std::size_t kRecord = 3073; // 1 label byte + 3 * 1024 pixels
    if (bytes.size() % kRecord != 0) {
        throw FormatError(path + ": size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
    }
    const std::size_t n = bytes.size() / kRecord;

    Dataset d;
    d.images.reserve(n * d.image_len());
    d.labels.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        const unsigned char* rec = bytes.data() + r * kRecord;
        d.labels.push_back(rec[0]);
        for (int ch = 0; ch < 3; ++ch) {
            for (int px = 0; px < 1024; ++px) {
                const float v = static_cast<float>(rec[1 + ch * 1024 + px]) / 255.0f;
                d.images.push_back((v - kCifarMean[ch]) / kCifarStd[ch]);
            }
        }
    }
    return d;
}

Dataset load_cifar10(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".bin") {
            files.push_back(entry.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    Dataset d;
    for (const std::string& f : files) {
        Dataset part = load_cifar10_file(f);
        d.images.insert(d.images.end(), part.images.begin(), part.images.end());
        d.labels.insert(d.labels.end(), part.labels.begin(), part.labels.end());
    }
    return d;
}

void write_cifar10_file(const Dataset& data, const std::string& path) {
    if (data.channels != 3 || data.height * data.width != 1024) {
        throw ConfigError("write_cifar10_file: dataset is not 3x32x32");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    const std::size_t len = data.image_len();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const unsigned char label = static_cast<unsigned char>(data.labels[i]);
        out.put(static_cast<char>(label));
        for (std::size_t p = 0; p < len; ++p) {
            const float v = std::clamp(data.images[i * len + p], 0.0f, 1.0f);
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
        }
    }
    if (!out) throw IoError("write failed: " + path);
}

Dataset synth_dataset(std::uint64_t seed, int n, int classes, int size) {
    if (n < classes || classes < 2 || size < 4) {
        throw ConfigError("synth_dataset: need n >= classes >= 2 and size >= 4");
    }
    Rng rng = Rng::stream(seed, "data");

    Dataset d;
    d.channels = 3;
    d.height = size;
    d.width = size;
    d.images.resize(static_cast<std::size_t>(n) * d.image_len());
    d.labels.resize(static_cast<std::size_t>(n));

    // round-robin labels (balanced within +-1), then shuffled
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i % classes;
    rng.shuffle(order);

    const double sigma = size / 6.0;
    const double ring = size / 4.0;
    const double two_pi = 6.283185307179586476925286766559;

    for (int i = 0; i < n; ++i) {
        const int label = order[static_cast<std::size_t>(i)];
        d.labels[static_cast<std::size_t>(i)] = label;
        const double angle = two_pi * label / classes;
        // small positional jitter keeps the task non-trivial for a convnet
        const double cx = size / 2.0 + ring * std::cos(angle) + rng.uniform(-2.0, 2.0);
        const double cy = size / 2.0 + ring * std::sin(angle) + rng.uniform(-2.0, 2.0);
        float* img = d.images.data() + static_cast<std::size_t>(i) * d.image_len();
        for (int ch = 0; ch < 3; ++ch) {
            const double amp = 0.35 + 0.3 * std::sin(two_pi * (static_cast<double>(label) / classes + ch / 3.0));
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    const double dx = x - cx, dy = y - cy;
                    const double bump = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                    const double v = 0.25 + amp * bump + 0.12 * rng.normal();
                    img[(static_cast<std::size_t>(ch) * size + y) * size + x] =
                        static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
    }
    return d;
}

} // namespace repq
