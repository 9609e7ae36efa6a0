#include "polynet/autodiff.hpp"

#include "polynet/random.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace polynet {

const Shape& Var::shape() const { return graph_->node_shape(id_); }

Var Graph::record(OpKind kind, std::vector<std::size_t> inputs, Shape shape, double scalar, std::size_t arg0,
                  std::size_t arg1) {
    for (auto in : inputs)
        if (in >= nodes_.size()) throw GraphError("node input refers to an unknown node");
    Node node{kind, std::move(inputs), std::move(shape), scalar, arg0, arg1, Tensor(), false};
    node.needs_grad = kind == OpKind::input;
    for (auto in : node.inputs) node.needs_grad = node.needs_grad || nodes_[in].needs_grad;
    nodes_.push_back(std::move(node));
    forward_done_ = false;
    return Var(this, nodes_.size() - 1);
}

Var Graph::input(Shape shape) {
    if (input_) throw GraphError("graph already has an input");
    Var v = record(OpKind::input, {}, std::move(shape));
    input_ = v.id();
    return v;
}

Var Graph::parameter(std::string name, Tensor value, bool trainable) {
    if (has_parameter(name)) throw GraphError("duplicate parameter name '" + name + "'");
    Var v = record(OpKind::parameter, {}, value.shape());
    nodes_[v.id()].value = std::move(value);
    nodes_[v.id()].needs_grad = trainable;
    params_.push_back({std::move(name), v.id(), trainable});
    return v;
}

Var Graph::constant(Tensor value) {
    Var v = record(OpKind::constant, {}, value.shape());
    nodes_[v.id()].value = std::move(value);
    return v;
}

void Graph::set_output(Var out) {
    if (&out.graph() != this) throw GraphError("output belongs to another graph");
    output_ = out.id();
}

const Shape& Graph::input_shape() const {
    if (!input_) throw GraphError("graph has no input");
    return nodes_[*input_].shape;
}

const Shape& Graph::output_shape() const {
    if (!output_) throw GraphError("graph has no output");
    return nodes_[*output_].shape;
}

bool Graph::has_parameter(const std::string& name) const {
    return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
}

std::size_t Graph::parameter_node(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.node;
    throw GraphError("unknown parameter '" + name + "'");
}

Tensor& Graph::parameter_value(const std::string& name) { return nodes_[parameter_node(name)].value; }

const Tensor& Graph::parameter_value(const std::string& name) const {
    return nodes_[parameter_node(name)].value;
}

std::size_t Graph::trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
        if (p.trainable) n += element_count(nodes_[p.node].shape);
    return n;
}

const Tensor& Graph::input_gradient() const {
    if (!input_) throw GraphError("graph has no input");
    return input_grad_;
}

Tensor Graph::forward(const Tensor& input) {
    if (!input_ || !output_) throw GraphError("graph needs an input and an output before forward");
    if (input.shape() != nodes_[*input_].shape)
        throw ShapeError("forward: input shape " + shape_string(input.shape()) + " differs from declared " +
                         shape_string(nodes_[*input_].shape));

    for (auto& node : nodes_) {
        auto in = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };
        switch (node.kind) {
        case OpKind::input: node.value = input; break;
        case OpKind::parameter:
        case OpKind::constant: break;
        case OpKind::matmul: node.value = matmul(in(0), in(1)); break;
        case OpKind::hadamard: node.value = hadamard(in(0), in(1)); break;
        case OpKind::add: node.value = in(0) + in(1); break;
        case OpKind::sub: node.value = in(0) - in(1); break;
        case OpKind::scale: node.value = scale(in(0), node.scalar); break;
        case OpKind::transpose: node.value = transpose(in(0)); break;
        case OpKind::reshape: node.value = reshape(in(0), node.shape); break;
        case OpKind::softmax_rows: node.value = softmax_rows(in(0)); break;
        case OpKind::global_avg_pool: node.value = global_avg_pool(in(0)); break;
        case OpKind::replicate_rows: node.value = replicate_rows(in(0), node.arg0); break;
        case OpKind::conv2d: node.value = conv2d(in(0), in(1), node.arg0, node.arg1); break;
        }
    }
    forward_done_ = true;
    return nodes_[*output_].value;
}

void Graph::accumulate(std::vector<std::optional<Tensor>>& adj, std::size_t id, Tensor grad) const {
    if (!nodes_[id].needs_grad) return;
    if (adj[id])
        adj[id]->array() += grad.array();
    else
        adj[id] = std::move(grad);
}

GradientSet Graph::backward(const Tensor& upstream) {
    if (!forward_done_) throw GraphError("backward called before forward");
    if (upstream.shape() != nodes_[*output_].shape)
        throw ShapeError("backward: upstream shape " + shape_string(upstream.shape()) + " differs from output " +
                         shape_string(nodes_[*output_].shape));

    std::vector<std::optional<Tensor>> adj(nodes_.size());
    if (nodes_[*output_].needs_grad) adj[*output_] = upstream;

    for (std::size_t id = nodes_.size(); id-- > 0;) {
        if (!adj[id]) continue;
        const Node& node = nodes_[id];
        const Tensor& g = *adj[id];
        auto val = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };
        auto push = [&](std::size_t k, Tensor grad) { accumulate(adj, node.inputs[k], std::move(grad)); };

        switch (node.kind) {
        case OpKind::input:
        case OpKind::parameter:
        case OpKind::constant: break;
        case OpKind::matmul:
            push(0, matmul(g, transpose(val(1))));
            push(1, matmul(transpose(val(0)), g));
            break;
        case OpKind::hadamard:
            push(0, hadamard(g, val(1)));
            push(1, hadamard(g, val(0)));
            break;
        case OpKind::add:
            push(0, g);
            push(1, g);
            break;
        case OpKind::sub:
            push(0, g);
            push(1, scale(g, -1.0));
            break;
        case OpKind::scale: push(0, scale(g, node.scalar)); break;
        case OpKind::transpose: push(0, transpose(g)); break;
        case OpKind::reshape: push(0, reshape(g, nodes_[node.inputs[0]].shape)); break;
        case OpKind::softmax_rows: {
            // dX_ij = S_ij (G_ij - sum_k G_ik S_ik)
            Tensor dx(node.value);
            auto s = node.value.matrix();
            auto gm = g.matrix();
            auto out = dx.matrix();
            for (Eigen::Index i = 0; i < s.rows(); ++i) {
                const double inner = s.row(i).dot(gm.row(i));
                out.row(i) = s.row(i).array() * (gm.row(i).array() - inner);
            }
            push(0, std::move(dx));
            break;
        }
        case OpKind::global_avg_pool: {
            const std::size_t rows = nodes_[node.inputs[0]].shape[0];
            push(0, replicate_rows(scale(g, 1.0 / static_cast<double>(rows)), rows));
            break;
        }
        case OpKind::replicate_rows: {
            Tensor dv({1, g.extent(1)});
            dv.matrix() = g.matrix().colwise().sum();
            push(0, std::move(dv));
            break;
        }
        case OpKind::conv2d:
            push(0, conv2d_input_grad(g, val(1), val(0).shape(), node.arg0, node.arg1));
            push(1, conv2d_kernel_grad(g, val(0), val(1).shape(), node.arg0, node.arg1));
            break;
        }
    }

    input_grad_ = adj[*input_] ? std::move(*adj[*input_]) : Tensor::zeros(nodes_[*input_].shape);

    GradientSet grads;
    for (const auto& p : params_) {
        if (!p.trainable) continue;
        grads.emplace(p.name, adj[p.node] ? std::move(*adj[p.node]) : Tensor::zeros(nodes_[p.node].shape));
    }
    return grads;
}

// ---------------------------------------------------------------------------

namespace {

Graph& same_graph(const Var& a, const Var& b, const char* op) {
    if (&a.graph() != &b.graph()) throw GraphError(std::string(op) + ": operands belong to different graphs");
    return a.graph();
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ShapeError(message);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
    Graph& g = same_graph(a, b, "matmul");
    const Shape &sa = a.shape(), &sb = b.shape();
    require(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0],
            "matmul: cannot multiply " + shape_string(sa) + " by " + shape_string(sb));
    return g.record(OpKind::matmul, {a.id(), b.id()}, {sa[0], sb[1]});
}

Var hadamard(const Var& a, const Var& b) {
    Graph& g = same_graph(a, b, "hadamard");
    require(a.shape() == b.shape(),
            "hadamard: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    return g.record(OpKind::hadamard, {a.id(), b.id()}, a.shape());
}

Var operator+(const Var& a, const Var& b) {
    Graph& g = same_graph(a, b, "add");
    require(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    return g.record(OpKind::add, {a.id(), b.id()}, a.shape());
}

Var operator-(const Var& a, const Var& b) {
    Graph& g = same_graph(a, b, "sub");
    require(a.shape() == b.shape(), "sub: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    return g.record(OpKind::sub, {a.id(), b.id()}, a.shape());
}

Var scale(const Var& a, double s) { return a.graph().record(OpKind::scale, {a.id()}, a.shape(), s); }

Var transpose(const Var& a) {
    const Shape& s = a.shape();
    require(s.size() == 2, "transpose: expected rank 2, got " + shape_string(s));
    return a.graph().record(OpKind::transpose, {a.id()}, {s[1], s[0]});
}

Var reshape(const Var& a, Shape shape) {
    require(element_count(shape) == element_count(a.shape()),
            "reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape) + " changes the element count");
    for (auto e : shape) require(e > 0, "reshape: extents must be positive");
    return a.graph().record(OpKind::reshape, {a.id()}, std::move(shape));
}

Var softmax_rows(const Var& a) {
    require(a.shape().size() == 2, "softmax_rows: expected rank 2, got " + shape_string(a.shape()));
    return a.graph().record(OpKind::softmax_rows, {a.id()}, a.shape());
}

Var global_avg_pool(const Var& x) {
    require(x.shape().size() == 2, "global_avg_pool: expected rank 2, got " + shape_string(x.shape()));
    return x.graph().record(OpKind::global_avg_pool, {x.id()}, {1, x.shape()[1]});
}

Var replicate_rows(const Var& v, std::size_t m) {
    const Shape& s = v.shape();
    require(s.size() == 2 && s[0] == 1, "replicate_rows: expected a single row, got " + shape_string(s));
    require(m >= 1, "replicate_rows: count must be positive");
    return v.graph().record(OpKind::replicate_rows, {v.id()}, {m, s[1]}, 0.0, m);
}

Var conv2d(const Var& x, const Var& kernel, std::size_t stride, std::size_t pad) {
    Graph& g = same_graph(x, kernel, "conv2d");
    const ConvGeometry geo = conv_geometry<double>(x.shape(), kernel.shape(), stride, pad);
    return g.record(OpKind::conv2d, {x.id(), kernel.id()}, {geo.out_channels, geo.out_height(), geo.out_width()},
                    0.0, stride, pad);
}

// ---------------------------------------------------------------------------

double grad_check(Graph& graph, const Tensor& input, const GradCheckOptions& options) {
    if (options.eps < 1e-7 || options.eps > 1e-3) throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");

    Rng rng(options.seed);
    const Tensor output = graph.forward(input);
    if (!all_finite(output)) throw std::domain_error("grad_check: non-finite forward value");
    const Tensor upstream = rng.uniform_tensor(output.shape(), -1.0, 1.0);
    const GradientSet analytic = graph.backward(upstream);

    struct Entry {
        std::string name;
        std::size_t index;
    };
    std::vector<Entry> entries;
    for (const auto& p : graph.parameters()) {
        if (!p.trainable) continue;
        const std::size_t n = graph.parameter_value(p.name).size();
        for (std::size_t i = 0; i < n; ++i) entries.push_back({p.name, i});
    }
    if (entries.size() > options.max_entries) {
        const auto order = rng.permutation(entries.size());
        std::vector<Entry> picked;
        for (std::size_t i = 0; i < options.max_entries; ++i) picked.push_back(entries[order[i]]);
        entries = std::move(picked);
    }

    auto objective = [&] { return dot(upstream, graph.forward(input)); };

    double worst = 0.0;
    for (const auto& e : entries) {
        double& theta = graph.parameter_value(e.name)[e.index];
        const double saved = theta;
        theta = saved + options.eps;
        const double plus = objective();
        theta = saved - options.eps;
        const double minus = objective();
        theta = saved;
        const double numeric = (plus - minus) / (2.0 * options.eps);
        const double a = analytic.at(e.name)[e.index];
        if (!std::isfinite(numeric) || !std::isfinite(a)) throw std::domain_error("grad_check: non-finite gradient");
        worst = std::max(worst, std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)}));
    }
    graph.forward(input);
    return worst;
}

}  // namespace polynet
