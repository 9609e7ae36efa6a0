#include "doctest.h"

#include "polynet/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

using namespace polynet;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) { return (fs::temp_directory_path() / ("polynet_" + name)).string(); }

Dataset balanced(std::size_t classes, std::size_t per_class) {
    std::vector<double> inputs;
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t j = 0; j < per_class; ++j) {
            inputs.push_back(static_cast<double>(c * per_class + j));  // unique id
            labels.push_back(c);
        }
    return Dataset({1}, classes, std::move(inputs), std::move(labels));
}

}  // namespace

TEST_CASE("dataset invariants") {
    CHECK_THROWS_AS(Dataset({2}, 2, {1, 2, 3}, {0}), DataError);
    CHECK_THROWS_AS(Dataset({1}, 2, {1}, {2}), DataError);
    const Dataset ds({2}, 3, {1, 2, 3, 4}, {2, 0});
    CHECK(ds.sample(1) == Tensor::vector({3, 4}));
    CHECK(class_histogram(ds) == std::vector<std::size_t>{1, 0, 1});
    CHECK(class_histogram(Dataset({4}, 5, {}, {})) == std::vector<std::size_t>(5, 0));
}

TEST_CASE("PDCD round trip") {
    const std::string path = temp_path("roundtrip.pdcd");
    SUBCASE("f32 vectors") {
        const Dataset ds = synth_quadratic(5, 20, 3);
        save_dataset(path, ds);
        CHECK(load_dataset(path) == ds);
    }
    SUBCASE("u8 images") {
        std::vector<double> px;
        for (int i = 0; i < 2 * 2 * 3 * 3; ++i) px.push_back((i * 7 % 256) / 255.0);
        const Dataset ds({2, 3, 3}, 4, px, {3, 1}, Storage::u8_image);
        save_dataset(path, ds);
        CHECK(load_dataset(path) == ds);
    }
    SUBCASE("empty dataset keeps K") {
        const Dataset ds({3}, 7, {}, {});
        save_dataset(path, ds);
        const Dataset back = load_dataset(path);
        CHECK(back.size() == 0);
        CHECK(back.classes() == 7);
    }
    SUBCASE("corruption is detected") {
        save_dataset(path, balanced(2, 3));
        std::string bytes;
        {
            std::ifstream in(path, std::ios::binary);
            bytes.assign(std::istreambuf_iterator<char>(in), {});
        }
        auto write = [&](const std::string& b) {
            std::ofstream out(path, std::ios::binary | std::ios::trunc);
            out.write(b.data(), static_cast<std::streamsize>(b.size()));
        };
        std::string bad = bytes;
        bad[0] = 'X';
        write(bad);
        CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("bad magic"), DataError);
        write(bytes.substr(0, bytes.size() - 1));
        CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("truncated"), DataError);
        bad = bytes;
        bad[bad.size() - 2] = 9;  // last label, low byte
        write(bad);
        CHECK_THROWS_WITH_AS(load_dataset(path), doctest::Contains("label 9 >= K = 2"), DataError);
    }
    fs::remove(path);
    CHECK_THROWS_AS(load_dataset(temp_path("missing.pdcd")), DataError);
}

TEST_CASE("synth_quadratic") {
    const Dataset a = synth_quadratic(8, 50, 1), b = synth_quadratic(8, 50, 1), c = synth_quadratic(8, 50, 2);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    CHECK(class_histogram(a) == std::vector<std::size_t>{50, 50});
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Tensor z = a.sample(i);
        double form = 0.0;
        for (std::size_t k = 0; k < 8; ++k) form += (k % 2 ? -1.0 : 1.0) * z[k] * z[k];
        CHECK(a.label(i) == (form > 0.0 ? 1u : 0u));
    }
    CHECK_THROWS_AS(synth_quadratic(1, 5, 1), DataError);
}

TEST_CASE("subsample_per_class") {
    const Dataset ds = balanced(4, 100);
    for (std::size_t m : {1u, 50u, 100u}) {
        const Dataset s = subsample_per_class(ds, m, 7);
        CHECK(class_histogram(s) == std::vector<std::size_t>(4, m));
        std::set<double> ids(s.inputs().begin(), s.inputs().end());
        CHECK(ids.size() == s.size());
        for (std::size_t i = 0; i < s.size(); ++i)
            CHECK(static_cast<std::size_t>(s.inputs()[i]) / 100 == s.label(i));
        CHECK(subsample_per_class(ds, m, 7) == s);
    }
    CHECK(subsample_per_class(ds, 100, 3) == ds);
    CHECK_FALSE(subsample_per_class(ds, 50, 1) == subsample_per_class(ds, 50, 2));
    CHECK_THROWS_AS(subsample_per_class(ds, 101, 1), DataError);
}

TEST_CASE("long-tailed profiles") {
    CHECK(longtail_profile(10, 100, 5000) ==
          std::vector<std::size_t>{5000, 2997, 1797, 1077, 646, 387, 232, 139, 83, 50});
    CHECK(longtail_profile(10, 10, 5000) ==
          std::vector<std::size_t>{5000, 3871, 2997, 2321, 1797, 1391, 1077, 834, 646, 500});
    CHECK(longtail_profile(10, 200, 5000) ==
          std::vector<std::size_t>{5000, 2775, 1540, 855, 475, 263, 146, 81, 45, 25});
    CHECK(longtail_profile(10, 10, 500) == std::vector<std::size_t>{500, 387, 300, 232, 180, 139, 108, 83, 65, 50});
    CHECK(longtail_profile(3, 1, 40) == std::vector<std::size_t>{40, 40, 40});
    CHECK(longtail_profile(1, 50, 40) == std::vector<std::size_t>{40});
    CHECK_THROWS_AS(longtail_profile(10, 0.5, 100), DataError);
    CHECK_THROWS_AS(longtail_profile(10, 1000, 100), DataError);

    const Dataset ds = balanced(10, 500);
    for (double imbalance : {10.0, 20.0, 50.0, 100.0, 200.0}) {
        const Dataset lt = longtail_resample(ds, imbalance, 5);
        const auto counts = class_histogram(lt);
        CHECK(counts == longtail_profile(10, imbalance, 500));
        CHECK(std::abs(static_cast<double>(counts.back()) - 500.0 / imbalance) <= 1.0);
        CHECK(std::is_sorted(counts.rbegin(), counts.rend()));
        CHECK(longtail_resample(ds, imbalance, 5) == lt);
    }
    CHECK(longtail_resample(ds, 1.0, 5) == ds);
    CHECK_THROWS_AS(longtail_resample(ds, 10.0, 5, 600), DataError);
}
