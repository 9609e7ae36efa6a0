#include "polynet/trainer.hpp"

#include "binary_io.hpp"
#include "polynet/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace polynet {

void TrainConfig::validate() const {
    if (epochs == 0) throw std::invalid_argument("train config: epochs must be positive");
    if (batch == 0) throw std::invalid_argument("train config: batch must be positive");
    if (!(lr0 >= 0.0) || !std::isfinite(lr0)) throw std::invalid_argument("train config: lr0 must be >= 0");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("train config: gamma must lie in (0, 1]");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train config: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("train config: weight decay must be >= 0");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        if (i > 0 && milestones[i] <= milestones[i - 1])
            throw std::invalid_argument("train config: milestones must be strictly increasing");
        if (milestones[i] >= epochs) throw std::invalid_argument("train config: milestones must be < epochs");
    }
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    if (epoch >= cfg.epochs)
        throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) +
                                ")");
    double lr = cfg.lr0;
    for (std::size_t m : cfg.milestones)
        if (m <= epoch) lr *= cfg.gamma;
    return lr;
}

LossResult cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B x K]");
    const std::size_t b = logits.extent(0), k = logits.extent(1);
    if (labels.size() != b) throw ShapeError("cross_entropy: one label per row required");
    LossResult r;
    r.grad = softmax_rows(logits);
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= k)
            throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " >= " + std::to_string(k));
        // log-sum-exp with max subtraction
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(logits(i, j) - mx);
        r.loss += std::log(sum) + mx - logits(i, labels[i]);
        r.grad(i, labels[i]) -= 1.0;
    }
    r.loss /= static_cast<double>(b);
    r.grad = scale(r.grad, 1.0 / static_cast<double>(b));
    return r;
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t k = logits.extent(logits.rank() - 1);
    const double* p = logits.data() + row * k;
    return static_cast<std::size_t>(std::max_element(p, p + k) - p);
}

void sgd_update(Tensor& theta, const Tensor& grad, Tensor& velocity, double lr, double momentum, double weight_decay) {
    if (grad.shape() != theta.shape()) throw ShapeError("sgd_update: gradient shape differs from parameter");
    if (velocity.rank() == 0) velocity = Tensor::zeros(theta.shape());
    if (velocity.shape() != theta.shape()) throw ShapeError("sgd_update: velocity shape differs from parameter");
    velocity.array() = momentum * velocity.array() + grad.array() + weight_decay * theta.array();
    theta.array() -= lr * velocity.array();
}

void sgd_step(Graph& graph, const GradientSet& grads, VelocityState& velocity, double lr, const TrainConfig& cfg) {
    for (const auto& [name, g] : grads)
        sgd_update(graph.parameter_value(name), g, velocity[name], lr, cfg.momentum, cfg.weight_decay);
}

double RunReport::final_eval_acc() const {
    if (rows.empty()) throw std::logic_error("run report has no rows");
    return rows.back().eval_acc;
}

double evaluate(Graph& graph, const Dataset& ds) {
    if (ds.empty()) throw std::invalid_argument("evaluate: empty dataset");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) correct += argmax_row(graph.forward(ds.sample(i))) == ds.label(i);
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

RunReport train(Graph& graph, const Dataset& train_set, const Dataset& eval_set, const TrainConfig& cfg,
                const std::function<void(const EpochRow&)>& on_epoch) {
    cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    if (train_set.sample_shape() != graph.input_shape())
        throw ShapeError("train: samples of shape " + shape_string(train_set.sample_shape()) +
                         " do not fit the network input " + shape_string(graph.input_shape()));
    Rng rng(cfg.seed);
    VelocityState velocity;
    RunReport report;
    const std::size_t n = train_set.size();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        const auto order = rng.permutation(n);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch) {
            const std::size_t end = std::min(n, start + cfg.batch);
            GradientSet batch_grad;
            for (std::size_t j = start; j < end; ++j) {
                const std::size_t i = order[j];
                const Tensor logits = graph.forward(train_set.sample(i));
                const LossResult l = cross_entropy(logits, {train_set.label(i)});
                if (!std::isfinite(l.loss))
                    throw TrainingDiverged("train: non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                                           std::to_string(i) + " (lr " + std::to_string(lr) + ")");
                loss_sum += l.loss;
                GradientSet g = graph.backward(l.grad);
                for (auto& [name, t] : g) {
                    auto it = batch_grad.find(name);
                    if (it == batch_grad.end()) batch_grad.emplace(name, std::move(t));
                    else it->second = it->second + t;
                }
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (auto& [name, t] : batch_grad) t = scale(t, inv);
            sgd_step(graph, batch_grad, velocity, lr, cfg);
        }
        EpochRow row{epoch, lr, loss_sum / static_cast<double>(n), evaluate(graph, train_set),
                     evaluate(graph, eval_set)};
        report.rows.push_back(row);
        if (on_epoch) on_epoch(row);
    }
    return report;
}

std::string csv_header() { return "epoch,lr,train_loss,train_acc,eval_acc"; }

std::string csv_row(const EpochRow& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g", r.epoch, r.lr, r.train_loss, r.train_acc, r.eval_acc);
    return buf;
}

void write_report_csv(const std::string& path, const RunReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << csv_header() << "\n";
    for (const auto& r : report.rows) out << csv_row(r) << "\n";
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Checkpoint snapshot(const Graph& graph) {
    Checkpoint ckpt;
    for (const auto& p : graph.parameters()) ckpt.emplace_back(p.name, graph.parameter_value(p.name));
    return ckpt;
}

void save_checkpoint(const std::string& path, const Graph& graph) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path + "' for writing");
    const Checkpoint ckpt = snapshot(graph);
    out.write("PDCK", 4);
    io::put<std::uint32_t>(out, 1);
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.size()));
    for (const auto& [name, t] : ckpt) {
        io::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        io::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (std::size_t e : t.shape()) io::put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
        for (double v : t.values()) io::put_f64(out, v);
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
    io::Reader r(in, "load_checkpoint '" + path + "'");
    r.expect_magic("PDCK");
    const auto version = r.get<std::uint32_t>();
    if (version != 1) throw io::FormatError("load_checkpoint: unsupported version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    Checkpoint ckpt;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.get<std::uint32_t>();
        if (len > 4096) throw io::FormatError("load_checkpoint: implausible name length");
        std::string name(len, '\0');
        r.read(name.data(), len);
        const auto rank = r.get<std::uint8_t>();
        Shape shape;
        for (unsigned k = 0; k < rank; ++k) shape.push_back(r.get<std::uint32_t>());
        Tensor t(shape);
        for (auto& v : t.values()) v = r.get_f64();
        ckpt.emplace_back(std::move(name), std::move(t));
    }
    r.expect_end();
    return ckpt;
}

void apply_checkpoint(Graph& graph, const Checkpoint& ckpt) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : ckpt) by_name[name] = &t;
    if (by_name.size() != graph.parameters().size())
        throw std::runtime_error("checkpoint holds " + std::to_string(by_name.size()) + " parameters, network has " +
                                 std::to_string(graph.parameters().size()));
    for (const auto& p : graph.parameters()) {
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint lacks parameter '" + p.name + "'");
        Tensor& dst = graph.parameter_value(p.name);
        if (dst.shape() != it->second->shape())
            throw ShapeError("checkpoint parameter '" + p.name + "' has shape " + shape_string(it->second->shape()) +
                             ", network expects " + shape_string(dst.shape()));
        dst = *it->second;
    }
}

}  // namespace polynet
