#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "repq/dataset.hpp"
#include "repq/errors.hpp"

using namespace repq;

namespace {

std::filesystem::path temp_dir(const char* name) {
    const std::filesystem::path p = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("cifar record: label 3, all pixels 255 normalizes to (1-mean)/std") {
    const auto dir = temp_dir("repq_cifar_a");
    const auto file = dir / "data_batch_1.bin";
    {
        std::ofstream out(file, std::ios::binary);
        out.put(3);
        for (int i = 0; i < 3072; ++i) out.put(static_cast<char>(0xFF));
    }
    const Dataset d = load_cifar10(dir.string());
    REQUIRE(d.size() == 1);
    CHECK(d.labels[0] == 3);
    for (int ch = 0; ch < 3; ++ch) {
        const float want = (1.0f - kCifarMean[ch]) / kCifarStd[ch];
        for (int px = 0; px < 1024; ++px) {
            const float got = d.images[static_cast<std::size_t>(ch) * 1024 + px];
            REQUIRE(got == doctest::Approx(want).epsilon(1e-6));
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("empty file loads as an empty dataset") {
    const auto dir = temp_dir("repq_cifar_b");
    { std::ofstream out(dir / "test_batch.bin", std::ios::binary); }
    const Dataset d = load_cifar10(dir.string());
    CHECK(d.size() == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("record count equals bytes / 3073; other sizes are format errors") {
    const auto dir = temp_dir("repq_cifar_c");
    {
        std::ofstream out(dir / "data_batch_1.bin", std::ios::binary);
        for (int r = 0; r < 5; ++r) {
            out.put(static_cast<char>(r));
            for (int i = 0; i < 3072; ++i) out.put(static_cast<char>(i % 251));
        }
    }
    CHECK(load_cifar10(dir.string()).size() == 5);
    {
        std::ofstream out(dir / "data_batch_1.bin", std::ios::binary | std::ios::app);
        out.put(0); // stray byte
    }
    CHECK_THROWS_AS(load_cifar10(dir.string()), FormatError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("write_cifar10_file inverts load (modulo normalization)") {
    const Dataset d = synth_dataset(3, 20, 4, 32);
    const auto dir = temp_dir("repq_cifar_d");
    write_cifar10_file(d, (dir / "data_batch_1.bin").string());
    const Dataset back = load_cifar10(dir.string());
    REQUIRE(back.size() == d.size());
    CHECK(back.labels == d.labels);
    // un-normalize and compare against the quantized pixel (1/255 grid)
    for (std::size_t i = 0; i < 40; ++i) {
        const int ch = static_cast<int>((i / 1024) % 3);
        const float pixel = back.images[i] * kCifarStd[ch] + kCifarMean[ch];
        CHECK(std::abs(pixel - d.images[i]) <= 0.5f / 255.0f + 1e-6f);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("missing directory raises IoError") {
    CHECK_THROWS_AS(load_cifar10("/definitely/not/here"), IoError);
}

TEST_CASE("synth_dataset: determinism, balance, separability") {
    const Dataset a = synth_dataset(9, 200, 10, 32);
    const Dataset b = synth_dataset(9, 200, 10, 32);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    const Dataset c = synth_dataset(10, 200, 10, 32);
    CHECK(a.images != c.images);

    // balanced within +-1
    std::vector<int> hist(10, 0);
    for (int l : a.labels) ++hist[static_cast<std::size_t>(l)];
    const auto [lo, hi] = std::minmax_element(hist.begin(), hist.end());
    CHECK(*hi - *lo <= 1);

    // linear probe: nearest class mean on raw pixels
    const std::size_t len = a.image_len();
    std::vector<std::vector<double>> means(10, std::vector<double>(len, 0.0));
    std::vector<int> counts(10, 0);
    const Dataset train = a.subset(0, 100), test = a.subset(100, 100);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const int l = train.labels[i];
        ++counts[static_cast<std::size_t>(l)];
        for (std::size_t p = 0; p < len; ++p) {
            means[static_cast<std::size_t>(l)][p] += train.images[i * len + p];
        }
    }
    for (int l = 0; l < 10; ++l) {
        for (double& v : means[static_cast<std::size_t>(l)]) v /= std::max(1, counts[static_cast<std::size_t>(l)]);
    }
    int hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        double best = 1e300;
        int arg = -1;
        for (int l = 0; l < 10; ++l) {
            double dist = 0.0;
            for (std::size_t p = 0; p < len; ++p) {
                const double d = test.images[i * len + p] - means[static_cast<std::size_t>(l)][p];
                dist += d * d;
            }
            if (dist < best) {
                best = dist;
                arg = l;
            }
        }
        if (arg == test.labels[i]) ++hits;
    }
    CHECK(hits >= 90);
}

TEST_CASE("synth_dataset validates arguments") {
    CHECK_THROWS_AS(synth_dataset(0, 3, 10, 32), ConfigError);
    CHECK_THROWS_AS(synth_dataset(0, 10, 1, 32), ConfigError);
}

TEST_CASE("batch gathers rows in index order") {
    const Dataset d = synth_dataset(4, 10, 2, 8);
    const Tensor4 b = d.batch({3, 0, 7});
    CHECK(b.shape() == Shape4{3, 3, 8, 8});
    for (int i = 0; i < 8 * 8 * 3; ++i) {
        CHECK(b.data()[i] == d.images[3 * d.image_len() + static_cast<std::size_t>(i)]);
    }
}
