// data.hpp - datasets, the PDCD file format and the sampling protocols.
//
// PDCD layout (little-endian):
//   "PDCD", version u32 = 1, flags u8 (0: u8 image, 1: f32 vector), K u32,
//   n u32, rank u8 + extents u32[rank] of one sample, n * prod(extents)
//   payload values, labels u16[n].
// u8 payloads load as value / 255.

#ifndef POLYNET_DATA_HPP
#define POLYNET_DATA_HPP

#include "polynet/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace polynet {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Storage : std::uint8_t { u8_image = 0, f32_vector = 1 };

// Samples are stored back to back, row-major; n may be zero.
class Dataset {
public:
    Dataset() = default;
    Dataset(Shape sample_shape, std::size_t classes, std::vector<double> inputs, std::vector<std::size_t> labels,
            Storage storage = Storage::f32_vector);

    const Shape& sample_shape() const { return sample_shape_; }
    std::size_t sample_size() const { return element_count(sample_shape_); }
    std::size_t classes() const { return classes_; }
    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }
    Storage storage() const { return storage_; }

    const std::vector<double>& inputs() const { return inputs_; }
    const std::vector<std::size_t>& labels() const { return labels_; }
    std::size_t label(std::size_t i) const { return labels_.at(i); }
    Tensor sample(std::size_t i) const;

    // Samples at `indices`, in that order.
    Dataset select(const std::vector<std::size_t>& indices) const;

    bool operator==(const Dataset&) const = default;

private:
    Shape sample_shape_{1};
    std::size_t classes_ = 1;
    std::vector<double> inputs_;
    std::vector<std::size_t> labels_;
    Storage storage_ = Storage::f32_vector;
};

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

std::vector<std::size_t> class_histogram(const Dataset& ds);

// Two balanced classes of z ~ N(0, I_d) (float-rounded), labelled by the sign
// of z^T Q z with Q = diag(1, -1, 1, -1, ...); ties are redrawn.
Dataset synth_quadratic(std::size_t d, std::size_t n_per_class, std::uint64_t seed);

// Exactly m samples of every class, uniform without replacement, kept in
// their original order.
Dataset subsample_per_class(const Dataset& ds, std::size_t m, std::uint64_t seed);

// Class i receives round(n_max * IF^(-i/(K-1))) samples.
std::vector<std::size_t> longtail_profile(std::size_t classes, double imbalance, std::size_t n_max);

// Long-tailed subset: class 0 keeps n_max samples (default: the smallest
// class count) and class i follows longtail_profile.
Dataset longtail_resample(const Dataset& ds, double imbalance, std::uint64_t seed, std::size_t n_max = 0);

}  // namespace polynet

#endif  // POLYNET_DATA_HPP
