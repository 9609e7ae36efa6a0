// trainer.hpp - SGD with momentum, step schedule, cross-entropy, evaluation
// and checkpoints.
//
// Checkpoint layout (little-endian): "PDCK", version u32 = 1, count u32, then
// per parameter: name length u32, UTF-8 name, rank u8, extents u32[rank],
// f64 payload.

#ifndef POLYNET_TRAINER_HPP
#define POLYNET_TRAINER_HPP

#include "polynet/autodiff.hpp"
#include "polynet/data.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace polynet {

struct TrainConfig {
    std::size_t epochs = 120;
    std::size_t batch = 128;
    double lr0 = 0.1;
    std::vector<std::size_t> milestones{40, 60, 80, 100};
    double gamma = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;  // shuffle order

    // Throws std::invalid_argument when an invariant is broken.
    void validate() const;
};

// lr0 * gamma^k, k = number of milestones <= epoch.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct LossResult {
    double loss = 0.0;
    Tensor grad;  // d loss / d logits, same shape as the logits
};

// Mean over rows of -log softmax(logits)[label].
LossResult cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

// Row argmax, ties to the lowest index.
std::size_t argmax_row(const Tensor& logits, std::size_t row = 0);

// Momentum buffers keyed like the gradients; missing entries start at zero.
using VelocityState = GradientSet;

// v <- momentum v + g + wd theta;  theta <- theta - lr v
void sgd_update(Tensor& theta, const Tensor& grad, Tensor& velocity, double lr, double momentum, double weight_decay);
void sgd_step(Graph& graph, const GradientSet& grads, VelocityState& velocity, double lr, const TrainConfig& cfg);

struct EpochRow {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;  // mean sample loss seen during the epoch
    double train_acc = 0.0;   // accuracy on the training set after the epoch
    double eval_acc = 0.0;    // accuracy on the evaluation set after the epoch
};

struct RunReport {
    std::vector<EpochRow> rows;
    double final_eval_acc() const;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One seeded permutation per epoch, last partial batch kept, gradients
// averaged over the batch. `on_epoch` is called after every epoch.
RunReport train(Graph& graph, const Dataset& train_set, const Dataset& eval_set, const TrainConfig& cfg,
                const std::function<void(const EpochRow&)>& on_epoch = {});

double evaluate(Graph& graph, const Dataset& ds);

std::string csv_header();
std::string csv_row(const EpochRow& row);
void write_report_csv(const std::string& path, const RunReport& report);

using Checkpoint = std::vector<std::pair<std::string, Tensor>>;

Checkpoint snapshot(const Graph& graph);
void save_checkpoint(const std::string& path, const Graph& graph);
Checkpoint load_checkpoint(const std::string& path);
// Every parameter of the graph must be present with the same shape.
void apply_checkpoint(Graph& graph, const Checkpoint& ckpt);

}  // namespace polynet

#endif  // POLYNET_TRAINER_HPP
