// netzoo.hpp - architecture descriptors, parameter counting and network
// assembly by stacking blocks.
//
// Descriptor text, one layer per line, '#' starts a comment, keys are
// case-insensitive:
//
//   name resnet18-cifar100
//   input 3x32x32              # or "input 8" for vector data
//   stage name=stem
//   conv k=3 out=64 stride=1 pad=1 bias=false
//   bn
//   stage name=layer1
//   block kind=residual1 channels=64 realization=conv3x3
//   pool kind=avg              # global; "k=2 stride=2" for a window
//   dense out=64 bias=true
//   head classes=100
//
// Features flow as [hw x c] matrices. A vector input of length d is the
// single row [1 x d].

#ifndef POLYNET_NETZOO_HPP
#define POLYNET_NETZOO_HPP

#include "polynet/autodiff.hpp"
#include "polynet/blocks.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace polynet {

class ArchError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class LayerKind { conv, batchnorm, dense, pool, block, head };
enum class PoolKind { avg, max };

// Extents are resolved by parse_arch: `in` is always the incoming channel
// count, `out` the outgoing one.
struct LayerRecord {
    LayerKind kind = LayerKind::conv;
    std::size_t line = 0;  // descriptor line, 0 when built in code
    std::size_t in = 0, out = 0;
    std::size_t k = 1, stride = 1, pad = 0;  // conv and windowed pool
    bool bias = false;                       // conv, dense
    PoolKind pool = PoolKind::avg;
    bool global = true;  // pool without a window
    BlockSpec block;
};

struct Stage {
    std::string name;
    std::vector<LayerRecord> layers;
};

struct FeatureShape {
    std::size_t c = 0, h = 1, w = 1;
    std::size_t hw() const { return h * w; }
    bool operator==(const FeatureShape&) const = default;
};

struct ArchSpec {
    std::string name;
    Shape input;  // {c, h, w} or {d}
    std::vector<Stage> stages;

    FeatureShape input_features() const;
    std::size_t classes() const;  // head width
};

// Layer label used in messages and parameter names: "<stage>.<index>".
std::string layer_label(const Stage& stage, std::size_t index);

ArchSpec parse_arch(const std::string& text);
std::string format_arch(const ArchSpec& spec);

// Re-checks the shape chain of a spec built in code and resolves extents.
void validate_arch(ArchSpec& spec);

// Feature shape after each layer, in stage order.
std::vector<FeatureShape> trace_shapes(const ArchSpec& spec);

std::size_t layer_param_count(const LayerRecord& layer);
std::size_t count_params(const ArchSpec& spec);

// Builtin names: resnet18-cifar100, resnet34-cifar100, senet18-cifar100
// (alias senet18), resnet18-imagenet, pdc<N>-w<W> and pinet<N>-w<W> (CIFAR
// stem, four conv3x3 stages of widths W..8W), vec<D>-pdc<N>-w<W> (one dense
// PDC block on a D-vector, two classes) and vec<D>-affine.
std::optional<std::string> builtin_arch_text(const std::string& name);
std::vector<std::string> builtin_arch_names();

// A builtin name, or else a path to a descriptor file.
ArchSpec load_arch(const std::string& name_or_path);

// Graph mapping one sample (input shape) to logits [1 x classes].
// Parameters are named "<stage>.<index>.<name>". Throws ArchError for layers
// that have no differentiable form (max pooling).
Graph build_network(const ArchSpec& spec, std::uint64_t seed, InitScheme scheme = InitScheme::training);

}  // namespace polynet

#endif  // POLYNET_NETZOO_HPP
