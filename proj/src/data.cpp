#include "polynet/data.hpp"

#include "binary_io.hpp"
#include "polynet/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace polynet {

Dataset::Dataset(Shape sample_shape, std::size_t classes, std::vector<double> inputs, std::vector<std::size_t> labels,
                 Storage storage)
    : sample_shape_(std::move(sample_shape)),
      classes_(classes),
      inputs_(std::move(inputs)),
      labels_(std::move(labels)),
      storage_(storage) {
    if (sample_shape_.empty()) throw DataError("dataset: sample shape must have rank >= 1");
    if (classes_ == 0) throw DataError("dataset: class count must be positive");
    const std::size_t per = element_count(sample_shape_);
    if (inputs_.size() != labels_.size() * per)
        throw DataError("dataset: " + std::to_string(inputs_.size()) + " input values do not fit " +
                        std::to_string(labels_.size()) + " samples of " + shape_string(sample_shape_));
    for (std::size_t y : labels_)
        if (y >= classes_)
            throw DataError("dataset: label " + std::to_string(y) + " out of range for " + std::to_string(classes_) +
                            " classes");
}

Tensor Dataset::sample(std::size_t i) const {
    if (i >= size()) throw std::out_of_range("dataset: sample index out of range");
    const std::size_t per = sample_size();
    const auto first = inputs_.begin() + static_cast<std::ptrdiff_t>(i * per);
    return Tensor(sample_shape_, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)));
}

Dataset Dataset::select(const std::vector<std::size_t>& indices) const {
    const std::size_t per = sample_size();
    std::vector<double> in;
    std::vector<std::size_t> lab;
    in.reserve(indices.size() * per);
    lab.reserve(indices.size());
    for (std::size_t i : indices) {
        if (i >= size()) throw std::out_of_range("dataset: sample index out of range");
        const auto first = inputs_.begin() + static_cast<std::ptrdiff_t>(i * per);
        in.insert(in.end(), first, first + static_cast<std::ptrdiff_t>(per));
        lab.push_back(labels_[i]);
    }
    return Dataset(sample_shape_, classes_, std::move(in), std::move(lab), storage_);
}

void save_dataset(const std::string& path, const Dataset& ds) {
    if (ds.classes() > 65536) throw DataError("save_dataset: labels are stored as u16");
    if (ds.size() > std::numeric_limits<std::uint32_t>::max()) throw DataError("save_dataset: too many samples");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_dataset: cannot open '" + path + "' for writing");
    out.write("PDCD", 4);
    io::put<std::uint32_t>(out, 1);
    io::put<std::uint8_t>(out, static_cast<std::uint8_t>(ds.storage()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.classes()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size()));
    io::put<std::uint8_t>(out, static_cast<std::uint8_t>(ds.sample_shape().size()));
    for (std::size_t e : ds.sample_shape()) io::put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    if (ds.storage() == Storage::u8_image) {
        for (double v : ds.inputs()) {
            const double q = std::round(v * 255.0);
            if (!(q >= 0.0 && q <= 255.0)) throw DataError("save_dataset: image values must lie in [0, 1]");
            io::put<std::uint8_t>(out, static_cast<std::uint8_t>(q));
        }
    } else {
        for (double v : ds.inputs()) io::put_f32(out, static_cast<float>(v));
    }
    for (std::size_t y : ds.labels()) io::put<std::uint16_t>(out, static_cast<std::uint16_t>(y));
    if (!out) throw DataError("save_dataset: write failed for '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_dataset: cannot open '" + path + "'");
    io::Reader r(in, "load_dataset '" + path + "'");
    try {
        r.expect_magic("PDCD");
        const auto version = r.get<std::uint32_t>();
        if (version != 1) throw DataError("load_dataset: unsupported version " + std::to_string(version));
        const auto flags = r.get<std::uint8_t>();
        if (flags > 1) throw DataError("load_dataset: unknown storage flag " + std::to_string(flags));
        const auto classes = r.get<std::uint32_t>();
        const auto n = r.get<std::uint32_t>();
        const auto rank = r.get<std::uint8_t>();
        if (rank == 0) throw DataError("load_dataset: sample rank must be positive");
        Shape shape;
        for (unsigned i = 0; i < rank; ++i) {
            shape.push_back(r.get<std::uint32_t>());
            if (shape.back() == 0) throw DataError("load_dataset: zero sample extent");
        }
        const Storage storage = static_cast<Storage>(flags);
        std::vector<double> values(static_cast<std::size_t>(n) * element_count(shape));
        for (auto& v : values)
            v = storage == Storage::u8_image ? r.get<std::uint8_t>() / 255.0 : static_cast<double>(r.get_f32());
        std::vector<std::size_t> labels(n);
        for (auto& y : labels) {
            y = r.get<std::uint16_t>();
            if (y >= classes)
                throw DataError("load_dataset: label " + std::to_string(y) + " >= K = " + std::to_string(classes));
        }
        r.expect_end();
        return Dataset(std::move(shape), classes, std::move(values), std::move(labels), storage);
    } catch (const io::FormatError& e) {
        throw DataError(e.what());
    }
}

std::vector<std::size_t> class_histogram(const Dataset& ds) {
    std::vector<std::size_t> counts(ds.classes(), 0);
    for (std::size_t y : ds.labels()) ++counts[y];
    return counts;
}

Dataset synth_quadratic(std::size_t d, std::size_t n_per_class, std::uint64_t seed) {
    if (d < 2) throw DataError("synth_quadratic: d must be at least 2");
    Rng rng(seed);
    std::vector<double> inputs;
    std::vector<std::size_t> labels;
    std::size_t have[2] = {0, 0};
    std::vector<double> z(d);
    while (have[0] < n_per_class || have[1] < n_per_class) {
        double form = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            z[i] = static_cast<double>(static_cast<float>(rng.normal()));
            form += (i % 2 == 0 ? 1.0 : -1.0) * z[i] * z[i];
        }
        if (form == 0.0) continue;
        const std::size_t y = form > 0.0 ? 1 : 0;
        if (have[y] == n_per_class) continue;
        ++have[y];
        inputs.insert(inputs.end(), z.begin(), z.end());
        labels.push_back(y);
    }
    return Dataset({d}, 2, std::move(inputs), std::move(labels), Storage::f32_vector);
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
    std::vector<std::vector<std::size_t>> by(ds.classes());
    for (std::size_t i = 0; i < ds.size(); ++i) by[ds.label(i)].push_back(i);
    return by;
}

// Picks counts[c] samples of every class c uniformly without replacement.
Dataset pick_per_class(const Dataset& ds, const std::vector<std::size_t>& counts, std::uint64_t seed) {
    const auto by = indices_by_class(ds);
    Rng rng(seed);
    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < ds.classes(); ++c) {
        const auto perm = rng.permutation(by[c].size());
        for (std::size_t j = 0; j < counts[c]; ++j) chosen.push_back(by[c][perm[j]]);
    }
    std::sort(chosen.begin(), chosen.end());
    return ds.select(chosen);
}

}  // namespace

Dataset subsample_per_class(const Dataset& ds, std::size_t m, std::uint64_t seed) {
    const auto counts = class_histogram(ds);
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] < m)
            throw DataError("subsample_per_class: class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                            " samples, fewer than " + std::to_string(m));
    return pick_per_class(ds, std::vector<std::size_t>(ds.classes(), m), seed);
}

std::vector<std::size_t> longtail_profile(std::size_t classes, double imbalance, std::size_t n_max) {
    if (classes == 0) throw DataError("longtail_profile: no classes");
    if (!(imbalance >= 1.0)) throw DataError("longtail_profile: imbalance factor must be >= 1");
    if (n_max == 0) throw DataError("longtail_profile: n_max must be positive");
    std::vector<std::size_t> sizes(classes);
    for (std::size_t i = 0; i < classes; ++i) {
        const double exponent = classes == 1 ? 0.0 : -static_cast<double>(i) / static_cast<double>(classes - 1);
        sizes[i] = static_cast<std::size_t>(std::llround(static_cast<double>(n_max) * std::pow(imbalance, exponent)));
        if (sizes[i] == 0)
            throw DataError("longtail_profile: infeasible profile, class " + std::to_string(i) +
                            " would receive no samples");
    }
    return sizes;
}

Dataset longtail_resample(const Dataset& ds, double imbalance, std::uint64_t seed, std::size_t n_max) {
    const auto counts = class_histogram(ds);
    if (n_max == 0) n_max = counts.empty() ? 0 : *std::min_element(counts.begin(), counts.end());
    const auto sizes = longtail_profile(ds.classes(), imbalance, n_max);
    for (std::size_t c = 0; c < sizes.size(); ++c)
        if (counts[c] < sizes[c])
            throw DataError("longtail_resample: infeasible profile, class " + std::to_string(c) + " needs " +
                            std::to_string(sizes[c]) + " samples but has " + std::to_string(counts[c]));
    return pick_per_class(ds, sizes, seed);
}

}  // namespace polynet
