// autodiff.hpp - tape-based reverse-mode differentiation over the tensor
// primitives.
//
// A Graph is recorded once (define-then-run): builder calls create nodes and
// infer shapes without touching values. forward() then evaluates the nodes in
// recording order for a concrete input and caches every value; backward()
// walks them in reverse and returns gradients for the trainable parameters.
//
//   Graph g;
//   Var x = g.input({1, 4});
//   Var c = g.parameter("C", Tensor::identity(4));
//   g.set_output(matmul(x, c));
//   Tensor y = g.forward(x_value);
//   GradientSet grads = g.backward(upstream);
//
// Var handles point into their Graph and are only meant to live while the
// graph is being built; moving a Graph invalidates them.

#ifndef POLYNET_AUTODIFF_HPP
#define POLYNET_AUTODIFF_HPP

#include "polynet/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace polynet {

class Graph;

class Var {
public:
    Var() = default;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }
    const Shape& shape() const;

private:
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

// Parameter name -> gradient of the same shape.
using GradientSet = std::map<std::string, Tensor>;

class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum class OpKind {
    input,
    parameter,
    constant,
    matmul,
    hadamard,
    add,
    sub,
    scale,
    transpose,
    reshape,
    softmax_rows,
    global_avg_pool,
    replicate_rows,
    conv2d,
};

struct ParameterSlot {
    std::string name;
    std::size_t node;
    bool trainable;
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    Var input(Shape shape);
    Var parameter(std::string name, Tensor value, bool trainable = true);
    Var constant(Tensor value);
    void set_output(Var out);

    Tensor forward(const Tensor& input);
    GradientSet backward(const Tensor& upstream);

    // Gradient with respect to the graph input from the last backward().
    const Tensor& input_gradient() const;

    const Shape& input_shape() const;
    const Shape& output_shape() const;
    std::size_t node_count() const { return nodes_.size(); }

    const std::vector<ParameterSlot>& parameters() const { return params_; }
    bool has_parameter(const std::string& name) const;
    Tensor& parameter_value(const std::string& name);
    const Tensor& parameter_value(const std::string& name) const;
    std::size_t trainable_count() const;

    // Node-level access used by the op builders.
    const Shape& node_shape(std::size_t id) const { return nodes_.at(id).shape; }
    Var record(OpKind kind, std::vector<std::size_t> inputs, Shape shape, double scalar = 0.0,
               std::size_t arg0 = 0, std::size_t arg1 = 0);

private:
    struct Node {
        OpKind kind;
        std::vector<std::size_t> inputs;
        Shape shape;
        double scalar = 0.0;
        std::size_t arg0 = 0, arg1 = 0;
        Tensor value;
        bool needs_grad = false;
    };

    std::size_t parameter_node(const std::string& name) const;
    void accumulate(std::vector<std::optional<Tensor>>& adj, std::size_t id, Tensor grad) const;

    std::vector<Node> nodes_;
    std::vector<ParameterSlot> params_;
    std::optional<std::size_t> input_;
    std::optional<std::size_t> output_;
    bool forward_done_ = false;
    Tensor input_grad_;
};

// Differentiable counterparts of the tensor primitives. Same names as the
// Tensor overloads so block formulas can be written once for both.
Var matmul(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
Var softmax_rows(const Var& a);
Var global_avg_pool(const Var& x);
Var replicate_rows(const Var& v, std::size_t m);
Var conv2d(const Var& x, const Var& kernel, std::size_t stride, std::size_t pad);

// Scalar objective used by grad_check: <upstream, graph(input)>.
struct GradCheckOptions {
    double eps = 1e-5;
    std::size_t max_entries = 200;  // entries beyond this are subsampled
    std::uint64_t seed = 0;
};

// Max over checked parameter entries of |a - n| / max(1, |a|, |n|), where a is
// the analytic gradient and n the central difference. Parameters are restored
// before returning.
double grad_check(Graph& graph, const Tensor& input, const GradCheckOptions& options = {});

}  // namespace polynet

#endif  // POLYNET_AUTODIFF_HPP
