// Acceptance gate: one PASS/FAIL line per criterion, exit 1 if any fails.

#include "polynet/cli.hpp"
#include "polynet/data.hpp"
#include "polynet/netzoo.hpp"
#include "polynet/trainer.hpp"
#include "polynet/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

using namespace polynet;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
    std::printf("criterion %d: %s %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    failures += !pass;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[200];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// Checks from `suite` whose name starts with `prefix`; reports the worst.
bool suite_passes(const std::string& suite, const std::string& prefix, std::uint64_t seed, std::string& detail) {
    bool pass = true;
    std::size_t n = 0;
    double worst = 0.0;
    for (const auto& c : run_suite(suite, seed)) {
        if (c.name.rfind(prefix, 0) != 0) continue;
        ++n;
        pass = pass && c.passed;
        worst = std::max(worst, c.measured);
        if (!c.passed) detail += " failed:" + c.name;
    }
    detail = fmt("%.0f checks, worst %.3g", static_cast<double>(n), worst) + detail;
    return pass && n > 0;
}

void criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto checks = degree_suite(1, 20);
    double wrong = 0.0;
    for (const auto& c : checks) wrong += c.measured;
    const double t = seconds_since(t0);
    report(1, wrong == 0.0 && checks.size() == 11 && t < 60.0,
           fmt("%.0f configurations x 20 seeds, %.0f wrong degrees, %.2fs", static_cast<double>(checks.size()), wrong, t));
}

void criterion2() {
    std::string detail;
    const bool ok = suite_passes("oracle", "oracle.pdc_vs_full_tensor", 1, detail);
    report(2, ok, detail + " (bound 1e-10)");
}

void criterion3() {
    std::string detail;
    const bool ok = suite_passes("se-identity", "se.superdiagonal_form", 1, detail);
    report(3, ok, detail + " (bound 1e-12)");
}

void criterion4() {
    std::string fold, sparse;
    const bool a = suite_passes("fold", "fold.", 1, fold);
    const bool b = suite_passes("oracle", "oracle.nl_no_low_degree_terms", 1, sparse);
    report(4, a && b, "fold: " + fold + " (bound 1e-12); NL degree<=2 coefficients: " + sparse + " (bound 1e-8)");
}

void criterion5() {
    const auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    const bool ok = suite_passes("grad", "grad.", 1, detail);
    const double t = seconds_since(t0);
    report(5, ok && t < 120.0, detail + fmt(" (bound 1e-4), %.2fs", t));
}

void criterion6() {
    struct Row {
        const char* arch;
        double table, tol;
    };
    bool ok = true;
    std::string detail;
    for (const Row& r : {Row{"resnet18-cifar100", 11.2, 0.02}, Row{"resnet34-cifar100", 21.3, 0.02},
                         Row{"senet18-cifar100", 11.6, 0.03}, Row{"resnet18-imagenet", 11.7, 0.02}}) {
        const double rounded = std::round(static_cast<double>(count_params(load_arch(r.arch))) / 1e5) / 10.0;
        const double rel = std::abs(rounded - r.table) / r.table;
        ok = ok && rel <= r.tol;
        detail += std::string(" ") + r.arch + fmt("=%.1f (%.1f, %.1f%%)", rounded, r.table, 100.0 * rel);
    }
    report(6, ok, detail.substr(1));
}

void criterion7() {
    std::string detail;
    const bool ok = suite_passes("netzoo", "netzoo.compose_", 1, detail);
    report(7, ok, "degree 2 on 2 certifies 4, degree 2 on 3 certifies 6: " + detail);
}

void criterion8() {
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset ds = synth_quadratic(8, 500, 1);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch = 32;
    cfg.lr0 = 0.05;
    cfg.milestones = {100, 150};
    cfg.seed = 1;

    Graph pdc = build_network(load_arch("vec8-pdc2-w8"), 1);
    const double pdc_acc = train(pdc, ds, ds, cfg).rows.back().train_acc;

    // Affine baseline: best of a learning-rate sweep at the same epoch budget.
    double affine_acc = 0.0;
    for (double lr : {0.005, 0.05, 0.5}) {
        TrainConfig a = cfg;
        a.lr0 = lr;
        Graph affine = build_network(load_arch("vec8-affine"), 1);
        affine_acc = std::max(affine_acc, train(affine, ds, ds, a).rows.back().train_acc);
    }
    const double t = seconds_since(t0);
    report(8, pdc_acc >= 0.95 && affine_acc <= 0.70 && t < 300.0,
           fmt("degree-2 PDC train acc %.4f (>= 0.95), best affine %.4f (<= 0.70), %.1fs", pdc_acc, affine_acc, t));
}

Dataset ten_class_pool(std::size_t per_class) {
    std::vector<double> x;
    std::vector<std::size_t> y;
    for (std::size_t k = 0; k < 10; ++k)
        for (std::size_t i = 0; i < per_class; ++i) {
            x.push_back(static_cast<double>(k * per_class + i));
            y.push_back(k);
        }
    return Dataset({1}, 10, x, y);
}

void criterion9() {
    const Dataset pool = ten_class_pool(5000);
    bool ok = true;
    double worst_dev = 0.0;
    for (double imbalance : {10.0, 20.0, 50.0, 100.0, 200.0}) {
        const Dataset a = longtail_resample(pool, imbalance, 11), b = longtail_resample(pool, imbalance, 11);
        ok = ok && a == b && !(a == longtail_resample(pool, imbalance, 12));
        const auto hist = class_histogram(a);
        for (std::size_t i = 0; i < hist.size(); ++i) {
            const double exact = 5000.0 * std::pow(imbalance, -static_cast<double>(i) / 9.0);
            worst_dev = std::max(worst_dev, std::abs(static_cast<double>(hist[i]) - exact));
        }
        ok = ok && hist.front() == 5000 && std::abs(5000.0 / imbalance - static_cast<double>(hist.back())) <= 1.0;
    }
    ok = ok && worst_dev <= 1.0;

    std::string counts;
    for (std::size_t m : {50, 500, 5000}) {
        const Dataset a = subsample_per_class(pool, m, 3), b = subsample_per_class(pool, m, 3);
        ok = ok && a == b;
        if (m < 5000) ok = ok && !(a == subsample_per_class(pool, m, 4));
        for (std::size_t h : class_histogram(a)) ok = ok && h == m;
        counts += " " + std::to_string(m);
    }
    report(9, ok, fmt("long-tail IF {10,20,50,100,200}: max |count - exact| %.3f (<= 1); per-class m", worst_dev) +
                      counts + " exact; repeated seeds bit-identical");
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void criterion10() {
    const fs::path root = fs::temp_directory_path() / "polynet_acceptance_det";
    fs::remove_all(root);
    fs::create_directories(root);
    std::ostringstream sink;
    const std::string data = (root / "d.pdcd").string();
    bool ok = run_cli({"make-dataset", "--synth", "6", "40", "5", "--out", data}, sink, sink) == 0;
    for (const char* dir : {"a", "b"}) {
        const std::vector<std::string> args{"train", "--arch", "vec6-pdc2-w6", "--data", data, "--epochs", "4",
                                            "--batch", "16", "--lr", "0.05", "--seed", "9", "--out-dir",
                                            (root / dir).string()};
        ok = run_cli(args, sink, sink) == 0 && ok;
    }
    std::size_t compared = 0;
    for (const char* f : {"vec6-pdc2-w6_d_s9.csv", "vec6-pdc2-w6_d_s9.pdck", "manifest.csv"}) {
        const std::string a = file_bytes(root / "a" / f), b = file_bytes(root / "b" / f);
        ok = ok && !a.empty() && a == b;
        ++compared;
    }
    fs::remove_all(root);
    report(10, ok, fmt("%.0f output files of two identical train commands compared byte for byte",
                       static_cast<double>(compared)));
}

}  // namespace

int main() {
    const std::vector<void (*)()> criteria{criterion1, criterion2, criterion3, criterion4, criterion5,
                                           criterion6, criterion7, criterion8, criterion9, criterion10};
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        try {
            criteria[i]();
        } catch (const std::exception& e) {
            report(static_cast<int>(i + 1), false, std::string("threw: ") + e.what());
        }
    }
    std::printf("acceptance: %d of %zu criteria failed\n", failures, criteria.size());
    return failures ? 1 : 0;
}
