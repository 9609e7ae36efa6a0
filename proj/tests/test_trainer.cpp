#include "doctest.h"

#include "polynet/netzoo.hpp"
#include "polynet/trainer.hpp"

#include <cmath>
#include <filesystem>

using namespace polynet;
namespace fs = std::filesystem;

namespace {

double batch_loss(Graph& g, const Dataset& ds) {
    double s = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) s += cross_entropy(g.forward(ds.sample(i)), {ds.label(i)}).loss;
    return s / static_cast<double>(ds.size());
}

GradientSet batch_gradient(Graph& g, const Dataset& ds) {
    GradientSet total;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const LossResult l = cross_entropy(g.forward(ds.sample(i)), {ds.label(i)});
        for (auto& [name, t] : g.backward(l.grad)) {
            const Tensor scaled = scale(t, 1.0 / static_cast<double>(ds.size()));
            auto it = total.find(name);
            if (it == total.end()) total.emplace(name, scaled);
            else it->second = it->second + scaled;
        }
    }
    return total;
}

Dataset image_batch(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> px;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 2 * 4 * 4; ++k) px.push_back(rng.normal());
        labels.push_back(i % 3);
    }
    return Dataset({2, 4, 4}, 3, px, labels);
}

}  // namespace

TEST_CASE("learning-rate schedule") {
    TrainConfig cfg;
    CHECK(lr_at(0, cfg) == 0.1);
    CHECK(lr_at(39, cfg) == 0.1);
    CHECK(lr_at(40, cfg) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(lr_at(105, cfg) == doctest::Approx(1e-5).epsilon(1e-12));
    for (std::size_t e = 1; e < cfg.epochs; ++e) CHECK(lr_at(e, cfg) <= lr_at(e - 1, cfg));
    CHECK_THROWS_AS(lr_at(120, cfg), std::out_of_range);

    TrainConfig bad = cfg;
    bad.milestones = {40, 40};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.milestones = {130};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.gamma = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("cross-entropy") {
    const LossResult uniform = cross_entropy(Tensor::zeros({2, 10}), {3, 7});
    CHECK(std::abs(uniform.loss - std::log(10.0)) < 1e-15);
    CHECK(cross_entropy(Tensor::from_rows({{0, 800, 0}}), {1}).loss < 1e-300);
    CHECK(cross_entropy(Tensor::from_rows({{0, 800, 0}}), {0}).loss == doctest::Approx(800.0));
    CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 3}), {3}), std::out_of_range);

    Rng rng(1);
    const Tensor z = rng.normal_tensor({3, 4}, 2.0);
    const std::vector<std::size_t> y{0, 3, 1};
    const LossResult r = cross_entropy(z, y);
    double worst = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        Tensor p = z, m = z;
        p[i] += 1e-6;
        m[i] -= 1e-6;
        const double numeric = (cross_entropy(p, y).loss - cross_entropy(m, y).loss) / 2e-6;
        worst = std::max(worst, std::abs(numeric - r.grad[i]));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("SGD update") {
    SUBCASE("plain SGD") {
        Tensor theta = Tensor::vector({1, -2}), v;
        sgd_update(theta, Tensor::vector({0.5, 1}), v, 0.1, 0.0, 0.0);
        CHECK(theta == Tensor::vector({1 - 0.1 * 0.5, -2 - 0.1}));
    }
    SUBCASE("zero gradient is a no-op") {
        Tensor theta = Tensor::vector({1, -2}), v;
        sgd_update(theta, Tensor::zeros({2}), v, 0.1, 0.9, 0.0);
        CHECK(theta == Tensor::vector({1, -2}));
    }
    SUBCASE("two momentum steps on f = theta^2 / 2") {
        for (auto [wd, expect] : {std::pair{0.0, 0.72}, std::pair{5e-4, 0.7198650025}}) {
            Tensor theta = Tensor::vector({1.0}), v;
            for (int step = 0; step < 2; ++step) sgd_update(theta, theta, v, 0.1, 0.9, wd);
            CHECK(std::abs(theta[0] - expect) < 1e-12);
        }
    }
    Tensor theta = Tensor::vector({1.0}), v;
    CHECK_THROWS_AS(sgd_update(theta, Tensor::vector({1, 2}), v, 0.1, 0.9, 0.0), ShapeError);
}

TEST_CASE("evaluate") {
    Graph g = build_network(parse_arch("input 2\nhead classes=3\n"), 1);
    for (const auto& p : g.parameters()) g.parameter_value(p.name) = Tensor::zeros(g.parameter_value(p.name).shape());
    const Dataset ds({2}, 3, std::vector<double>(18, 1.0), {0, 1, 2, 0, 1, 2, 0, 1, 2});
    CHECK(evaluate(g, ds) == doctest::Approx(1.0 / 3.0));
    CHECK_THROWS_AS(evaluate(g, Dataset({2}, 3, {}, {})), std::invalid_argument);

    SUBCASE("positive rescaling of the logits keeps the accuracy") {
        Graph a = build_network(parse_arch("input 2\nhead classes=3\n"), 4, InitScheme::random);
        const Dataset data = synth_quadratic(2, 20, 1);
        Graph b = build_network(parse_arch("input 2\nhead classes=3\n"), 4, InitScheme::random);
        for (const auto& p : b.parameters()) b.parameter_value(p.name) = scale(b.parameter_value(p.name), 7.5);
        const Dataset three({2}, 3, data.inputs(), data.labels());
        CHECK(evaluate(a, three) == evaluate(b, three));
    }
    SUBCASE("a memorizer scores 1") {
        Graph m = build_network(parse_arch("input 2\nhead classes=2\n"), 1);
        m.parameter_value("stem.0.weight") = Tensor::from_rows({{-1, 1}, {0, 0}});
        const Dataset sep({2}, 2, {-1, 0, 2, 0, -3, 5, 0.5, 1}, {0, 1, 0, 1});
        CHECK(evaluate(m, sep) == 1.0);
    }
}

TEST_CASE("training") {
    const Dataset data = synth_quadratic(4, 12, 2);
    const ArchSpec spec = load_arch("vec4-pdc2-w4");
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 5;
    cfg.milestones = {2};

    SUBCASE("zero learning rate leaves parameters untouched") {
        cfg.lr0 = 0.0;
        Graph g = build_network(spec, 1);
        const Checkpoint before = snapshot(g);
        train(g, data, data, cfg);
        const Checkpoint after = snapshot(g);
        for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].second == after[i].second);
    }
    SUBCASE("runs are deterministic") {
        Graph a = build_network(spec, 1), b = build_network(spec, 1);
        const RunReport ra = train(a, data, data, cfg), rb = train(b, data, data, cfg);
        REQUIRE(ra.rows.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(csv_row(ra.rows[i]) == csv_row(rb.rows[i]));
            CHECK(ra.rows[i].lr == lr_at(i, cfg));
        }
        const Checkpoint ca = snapshot(a), cb = snapshot(b);
        for (std::size_t i = 0; i < ca.size(); ++i) CHECK(ca[i].second == cb[i].second);
    }
    SUBCASE("one step on one batch lowers its loss for every block family") {
        const Dataset batch = image_batch(6, 3);
        for (const char* block : {"kind=residual1", "kind=se2", "kind=sk2", "kind=pinet degree=2", "kind=pdc degree=3",
                                  "kind=nl3", "kind=dnl3", "kind=pdcnl3", "kind=pdcnl4"}) {
            const std::string text =
                std::string("input 2x4x4\nconv k=1 out=4\nblock ") + block + " channels=4\npool kind=avg\nhead classes=3\n";
            Graph g = build_network(parse_arch(text), 5);
            TrainConfig one;
            one.epochs = 1;
            one.batch = 6;
            one.lr0 = 1e-3;
            one.milestones = {};
            const double before = batch_loss(g, batch);
            train(g, batch, batch, one);
            CAPTURE(block);
            CHECK(batch_loss(g, batch) < before);
        }
    }
    SUBCASE("a small step along the negative gradient never raises the loss") {
        const Dataset batch = image_batch(4, 8);
        for (const char* block : {"kind=se2 mode=identity", "kind=pdc degree=2 mode=identity", "kind=nl3 mode=identity",
                                  "kind=pdcnl4 mode=identity"}) {
            Graph g = build_network(
                parse_arch(std::string("input 2x4x4\nblock ") + block + "\npool kind=avg\nhead classes=3\n"), 6,
                InitScheme::random);
            const double before = batch_loss(g, batch);
            VelocityState v;
            TrainConfig step;
            step.weight_decay = 0.0;
            sgd_step(g, batch_gradient(g, batch), v, 1e-4, step);
            CAPTURE(block);
            CHECK(batch_loss(g, batch) <= before + 1e-8);
        }
    }
    SUBCASE("input shape must match") {
        Graph g = build_network(load_arch("vec3-affine"), 1);
        CHECK_THROWS_AS(train(g, data, data, cfg), ShapeError);
    }
}

TEST_CASE("checkpoints") {
    const std::string path = (fs::temp_directory_path() / "polynet_test.pdck").string();
    const ArchSpec spec = parse_arch("input 2x4x4\nconv k=3 out=3\nbn\nblock kind=pdc degree=2 channels=3\npool kind=avg\nhead classes=2\n");
    Graph a = build_network(spec, 1, InitScheme::random);
    save_checkpoint(path, a);
    Graph b = build_network(spec, 2, InitScheme::random);
    apply_checkpoint(b, load_checkpoint(path));
    const Checkpoint ca = snapshot(a), cb = snapshot(b);
    REQUIRE(ca.size() == cb.size());
    for (std::size_t i = 0; i < ca.size(); ++i) {
        CHECK(ca[i].first == cb[i].first);
        CHECK(ca[i].second == cb[i].second);
    }
    Graph other = build_network(load_arch("vec4-affine"), 1);
    CHECK_THROWS(apply_checkpoint(other, load_checkpoint(path)));
    fs::remove(path);
}
