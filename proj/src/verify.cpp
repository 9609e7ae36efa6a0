#include "polynet/verify.hpp"

#include "polynet/blocks.hpp"
#include "polynet/netzoo.hpp"
#include "polynet/oracle.hpp"
#include "polynet/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>

namespace polynet {

namespace {

CheckResult at_most(std::string name, double measured, double bound, std::string detail = {}) {
    return {std::move(name), measured <= bound, measured, bound, std::move(detail)};
}

CheckResult below(std::string name, double measured, double bound, std::string detail = {}) {
    return {std::move(name), measured < bound, measured, bound, std::move(detail)};
}

BlockSpec probe_spec(BlockKind kind, std::size_t degree = 2, ActivationMode mode = ActivationMode::identity) {
    BlockSpec s;
    s.kind = kind;
    s.in_channels = 4;
    s.spatial = 3;
    s.degree = degree;
    s.ratio = (kind == BlockKind::nl3 || kind == BlockKind::dnl3 || kind == BlockKind::pdcnl3 ||
               kind == BlockKind::pdcnl4)
                  ? 2
                  : 0;
    s.mode = mode;
    return s;
}

VectorFunction block_function(const BlockSpec& spec, const BlockParams& params) {
    return [spec, params](const Tensor& z) {
        const Tensor y = block_forward(spec, params, z.reshaped({spec.spatial, spec.in_channels}));
        return y.reshaped({y.size()});
    };
}

Tensor unit(Rng& rng, std::size_t n) {
    const Tensor v = rng.normal_tensor({n}, 1.0);
    return scale(v, 1.0 / std::sqrt(dot(v, v)));
}

PolyParams random_poly(Rng& rng, std::size_t d, std::size_t o, std::size_t degree) {
    PolyParams p;
    p.beta = rng.normal_tensor({o}, 1.0);
    for (std::size_t n = 1; n <= degree; ++n) {
        std::vector<Tensor> f;
        for (std::size_t k = 0; k < n; ++k)
            f.push_back(rng.normal_tensor({d, o}, 1.0 / std::sqrt(static_cast<double>(d))));
        p.factors.push_back(std::move(f));
    }
    return p;
}

std::vector<CheckResult> tensor_suite(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<CheckResult> out;
    double assoc = 0.0, hada = 0.0, mode = 0.0, rows = 0.0, shift = 0.0, superdiag = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = rng.uniform_tensor({3, 4}, -1, 1), b = rng.uniform_tensor({4, 5}, -1, 1),
                     c = rng.uniform_tensor({5, 2}, -1, 1);
        assoc = std::max(assoc, max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))));

        const Tensor x = rng.normal_tensor({3, 3}, 1), y = rng.normal_tensor({3, 3}, 1), z = rng.normal_tensor({3, 3}, 1);
        hada = std::max({hada, max_abs_diff(hadamard(x, y), hadamard(y, x)),
                         max_abs_diff(hadamard(x, y + z), hadamard(x, y) + hadamard(x, z))});

        // Full contraction against the brute-force multi-index sum.
        const std::size_t r = 1 + static_cast<std::size_t>(trial % 4), n = 2 + static_cast<std::size_t>(trial % 4);
        const Tensor w = rng.normal_tensor(Shape(r, n), 1.0), v = rng.normal_tensor({n}, 1.0);
        Tensor acc = w;
        while (acc.rank() > 1) acc = mode_n_vector_product(acc, v, acc.rank());
        double brute = 0.0;
        std::vector<std::size_t> idx(r, 0);
        for (std::size_t flat = 0; flat < w.size(); ++flat) {
            double term = w[flat];
            for (std::size_t i : idx) term *= v[i];
            brute += term;
            for (std::size_t k = r; k-- > 0;) {
                if (++idx[k] < n) break;
                idx[k] = 0;
            }
        }
        mode = std::max(mode, std::abs(dot(acc, v) - brute));

        const Tensor logits = rng.normal_tensor({4, 6}, 3.0);
        const Tensor s = softmax_rows(logits);
        Tensor shifted = logits;
        for (std::size_t i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                sum += s(i, j);
                shifted(i, j) += 5.0 * static_cast<double>(i) - 3.0;
            }
            rows = std::max(rows, std::abs(sum - 1.0));
        }
        shift = std::max(shift, max_abs_diff(s, softmax_rows(shifted)));

        const Tensor feat = rng.normal_tensor({5, 4}, 1.0), gate = rng.normal_tensor({4}, 1.0);
        superdiag = std::max(superdiag, max_abs_diff(matmul(feat, superdiag_mode3(gate)),
                                                     hadamard(feat, replicate_rows(gate.reshaped({1, 4}), 5))));
    }
    out.push_back(below("tensor.matmul_associativity", assoc, 1e-10));
    out.push_back(below("tensor.hadamard_commutes_distributes", hada, 1e-12));
    out.push_back(below("tensor.mode_product_vs_index_sum", mode, 1e-10));
    out.push_back(below("tensor.softmax_rows_sum", rows, 1e-12));
    out.push_back(below("tensor.softmax_shift_invariance", shift, 1e-12));
    out.push_back(below("tensor.superdiag_gating_identity", superdiag, 1e-12));
    return out;
}

std::vector<CheckResult> autodiff_suite(std::uint64_t seed) {
    Rng rng(seed);
    Graph g;
    Var x = g.input({3, 4});
    Var c1 = g.parameter("C1", rng.normal_tensor({4, 2}, 0.5));
    Var c2 = g.parameter("C2", rng.normal_tensor({2, 4}, 0.5));
    Var att = softmax_rows(matmul(matmul(x, c1), transpose(matmul(x, transpose(c2)))));
    Var c3 = g.parameter("C3", rng.normal_tensor({4, 4}, 0.5));
    Var y = matmul(att, matmul(x, c3));
    g.set_output(hadamard(y, replicate_rows(global_avg_pool(y), 3)) + scale(x, 0.5));
    g.forward(rng.normal_tensor({3, 4}, 1.0));
    const Tensor u1 = rng.normal_tensor({3, 4}, 1.0), u2 = rng.normal_tensor({3, 4}, 1.0);
    const GradientSet g1 = g.backward(u1), g2 = g.backward(u2), g12 = g.backward(u1 + u2);
    double linear = 0.0;
    for (const auto& [name, t] : g12) linear = std::max(linear, max_abs_diff(t, g1.at(name) + g2.at(name)));
    double zero = 0.0;
    for (const auto& [name, t] : g.backward(Tensor::zeros({3, 4}))) zero = std::max(zero, max_abs(t));

    Graph lin;
    lin.set_output(matmul(lin.input({2, 3}), lin.parameter("C", rng.normal_tensor({3, 2}, 1.0))));
    return {below("autodiff.backward_linearity", linear, 1e-12), at_most("autodiff.zero_upstream", zero, 0.0),
            below("autodiff.grad_check_linear", grad_check(lin, rng.normal_tensor({2, 3}, 1.0)), 1e-9)};
}

std::vector<CheckResult> oracle_suite(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<CheckResult> out;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + rng.index(5), o = 1 + rng.index(3), n = 1 + rng.index(4);
        const PolyParams p = random_poly(rng, d, o, n);
        const Tensor z = rng.normal_tensor({d}, 1.0);
        worst = std::max(worst, max_abs_diff(pdc_forward(z, p), poly_eval_full(cp_expand(p), z)));
    }
    out.push_back(below("oracle.pdc_vs_full_tensor", worst, 1e-10, "100 instances, d<=5 o<=3 N<=4"));

    BlockSpec nl;
    nl.kind = BlockKind::nl3;
    nl.in_channels = 2;
    nl.spatial = 2;
    nl.ratio = 1;
    nl.mode = ActivationMode::identity;
    const BlockParams nl_params = sample_block_params(nl, rng, InitScheme::random);
    const CoefficientTable table = extract_coefficients(block_function(nl, nl_params), 4, 3);
    double low = 0.0;
    for (unsigned deg = 0; deg <= 2; ++deg) low = std::max(low, max_coefficient(table, deg));
    out.push_back(below("oracle.nl_no_low_degree_terms", low, 1e-8));

    nl.mode = ActivationMode::standard;
    bool rejected = false;
    try {
        extract_coefficients(block_function(nl, nl_params), 4, 3);
    } catch (const NotPolynomial&) {
        rejected = true;
    }
    out.push_back({"oracle.softmax_nl_not_polynomial", rejected, rejected ? 0.0 : 1.0, 0.0, ""});

    BlockSpec pdcnl3 = nl;
    pdcnl3.kind = BlockKind::pdcnl3;
    pdcnl3.mode = ActivationMode::identity;
    const CoefficientTable mixed =
        extract_coefficients(block_function(pdcnl3, sample_block_params(pdcnl3, rng, InitScheme::random)), 4, 3);
    double weakest = std::min({max_coefficient(mixed, 1), max_coefficient(mixed, 2), max_coefficient(mixed, 3)});
    out.push_back({"oracle.pdcnl3_has_degrees_1_2_3", weakest > 1e-3, weakest, 1e-3, "passes when measured > bound"});

    // DNL without unary term on centered inputs is the plain non-local block.
    const Tensor x = expr::center_rows(rng.normal_tensor({3, 4}, 1.0));
    const Tensor c1 = rng.normal_tensor({4, 2}, 1.0), c2 = rng.normal_tensor({2, 4}, 1.0), c3 = rng.normal_tensor({4, 4}, 1.0);
    out.push_back(below("blocks.dnl_reduces_to_nl",
                        max_abs_diff(dnl_forward(x, {c1, c2, Tensor::zeros({4, 1}), c3}, ActivationMode::identity),
                                     nl_forward(x, {c1, c2, c3}, ActivationMode::identity)),
                        1e-12));

    auto p4 = std::get<PdcNl4Params>(sample_block_params(probe_spec(BlockKind::pdcnl4), rng, InitScheme::random));
    p4.C8 = Tensor::zeros(p4.C8.shape());
    const Tensor xr = rng.normal_tensor({3, 4}, 1.0);
    const double closed = max_abs_diff(pdcnl4_forward(xr, p4, ActivationMode::standard),
                                       pdcnl3_forward(xr, p4.base, ActivationMode::standard));
    out.push_back(at_most("blocks.pdcnl4_closed_gate", closed, 0.0));
    return out;
}

std::vector<CheckResult> se_suite(std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t hw = 1 + rng.index(6), c = 1 + rng.index(5);
        const Tensor x = rng.normal_tensor({hw, c}, 1.0);
        const SeParams p{rng.normal_tensor({c, c}, 1.0), rng.normal_tensor({c, c}, 1.0), {}};
        worst = std::max(worst, max_abs_diff(se_forward(x, p), se_superdiag_form(x, p)));
    }
    return {below("se.superdiagonal_form", worst, 1e-12, "100 instances")};
}

std::vector<CheckResult> fold_suite(std::uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + rng.index(5), o = 1 + rng.index(3);
        const PolyParams p = random_poly(rng, d, o, 2);
        const Tensor z = rng.normal_tensor({d}, 1.0);
        worst = std::max(worst, max_abs_diff(eval_folded(fold_poly2(p), z), pdc_forward(z, p)));
    }
    return {below("fold.padded_degree2_tensor", worst, 1e-12, "100 instances")};
}

std::vector<CheckResult> grad_suite(std::uint64_t seed) {
    std::vector<CheckResult> out;
    for (ActivationMode mode : {ActivationMode::identity, ActivationMode::standard}) {
        for (BlockKind kind : {BlockKind::residual1, BlockKind::se2, BlockKind::sk2, BlockKind::pinet, BlockKind::pdc,
                               BlockKind::nl3, BlockKind::dnl3, BlockKind::pdcnl3, BlockKind::pdcnl4}) {
            const BlockSpec spec = probe_spec(kind, 3, mode);
            Rng rng(seed);
            const BlockParams params = sample_block_params(spec, rng, InitScheme::random);
            Graph g;
            g.set_output(block_graph(g, g.input({spec.spatial, spec.in_channels}), spec, params, "b"));
            const double err = grad_check(g, rng.normal_tensor({spec.spatial, spec.in_channels}, 1.0));
            out.push_back(at_most(std::string("grad.") + to_string(kind) +
                                      (mode == ActivationMode::identity ? ".identity" : ".standard"),
                                  err, 1e-4));
        }
    }
    return out;
}

std::vector<CheckResult> netzoo_suite(std::uint64_t seed) {
    std::vector<CheckResult> out;
    const std::map<std::string, std::pair<double, double>> tables{{"resnet18-cifar100", {11.2, 0.02}},
                                                                  {"resnet34-cifar100", {21.3, 0.02}},
                                                                  {"senet18-cifar100", {11.6, 0.03}},
                                                                  {"resnet18-imagenet", {11.7, 0.02}}};
    for (const auto& [name, target] : tables) {
        const double millions = std::round(static_cast<double>(count_params(load_arch(name))) / 1e5) / 10.0;
        const double rel = std::abs(millions - target.first) / target.first;
        char detail[64];
        std::snprintf(detail, sizeof detail, "%.1fM vs %.1fM", millions, target.first);
        out.push_back(at_most("netzoo.count." + name, rel, target.second, detail));
    }

    const ArchSpec small = parse_arch(
        "input 3x8x8\nconv k=3 out=4\nbn\nblock kind=se2 channels=6 stride=2 ratio=2 realization=conv3x3\n"
        "block kind=pdc degree=2 channels=6 realization=conv3x3\nblock kind=pdcnl4 channels=6 ratio=2\n"
        "pool kind=avg\nhead classes=3\n");
    const Graph g = build_network(small, seed);
    out.push_back(at_most("netzoo.count_equals_trainables",
                          std::abs(static_cast<double>(g.trainable_count()) - static_cast<double>(count_params(small))),
                          0.0));

    auto composed = [&](const std::string& text) {
        const ArchSpec spec = parse_arch(text);
        Graph net = build_network(spec, seed, InitScheme::random);
        Rng rng(seed + 1);
        const std::size_t n = element_count(spec.input);
        const VectorFunction f = [&](const Tensor& z) {
            const Tensor y = net.forward(z.reshaped(spec.input));
            return y.reshaped({y.size()});
        };
        return finite_diff_degree(f, rng.normal_tensor({n}, 1.0), unit(rng, n));
    };
    const std::size_t d4 = composed("input 3\nblock kind=pdc degree=2 channels=3 mode=identity\n"
                                    "block kind=pdc degree=2 channels=3 mode=identity\nhead classes=2\n");
    const std::size_t d6 = composed("input 3\nblock kind=pdc degree=3 channels=3 mode=identity\n"
                                    "block kind=pdc degree=2 channels=3 mode=identity\nhead classes=2\n");
    out.push_back(at_most("netzoo.compose_2x2_degree4", std::abs(static_cast<double>(d4) - 4.0), 0.0));
    out.push_back(at_most("netzoo.compose_3x2_degree6", std::abs(static_cast<double>(d6) - 6.0), 0.0));
    return out;
}

}  // namespace

std::vector<CheckResult> degree_suite(std::uint64_t first_seed, std::size_t count) {
    struct Config {
        std::string name;
        BlockSpec spec;
        std::size_t expected;
    };
    const std::vector<Config> configs{
        {"residual1", probe_spec(BlockKind::residual1), 1}, {"se2", probe_spec(BlockKind::se2), 2},
        {"sk2", probe_spec(BlockKind::sk2), 2},             {"pinet_N2", probe_spec(BlockKind::pinet, 2), 2},
        {"pdc_N2", probe_spec(BlockKind::pdc, 2), 2},       {"nl3", probe_spec(BlockKind::nl3), 3},
        {"dnl3", probe_spec(BlockKind::dnl3), 3},           {"pdcnl3", probe_spec(BlockKind::pdcnl3), 3},
        {"pinet_N3", probe_spec(BlockKind::pinet, 3), 3},   {"pdcnl4", probe_spec(BlockKind::pdcnl4), 4},
        {"pdc_N4", probe_spec(BlockKind::pdc, 4), 4},
    };
    std::vector<CheckResult> out;
    for (const auto& cfg : configs) {
        std::size_t failures = 0;
        std::string detail;
        for (std::uint64_t seed = first_seed; seed < first_seed + count; ++seed) {
            Rng rng(seed);
            const BlockParams params = sample_block_params(cfg.spec, rng, InitScheme::random);
            const std::size_t n = cfg.spec.spatial * cfg.spec.in_channels;
            const Tensor x0 = rng.normal_tensor({n}, 1.0);
            std::size_t got = 0;
            try {
                got = finite_diff_degree(block_function(cfg.spec, params), x0, unit(rng, n));
            } catch (const DegreeBoundExceeded&) {
                got = 99;
            }
            if (got != cfg.expected) {
                ++failures;
                if (detail.empty()) detail = "seed " + std::to_string(seed) + " gave " + std::to_string(got);
            }
        }
        out.push_back(at_most("degree." + cfg.name + "=" + std::to_string(cfg.expected),
                              static_cast<double>(failures), 0.0, detail));
    }
    return out;
}

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"degree", "oracle",   "grad",  "se-identity",
                                                "fold",   "tensor",   "autodiff", "netzoo"};
    return names;
}

std::vector<CheckResult> run_suite(const std::string& suite, std::uint64_t seed) {
    if (suite == "all") {
        std::vector<CheckResult> all;
        for (const auto& name : suite_names()) {
            auto part = run_suite(name, seed);
            all.insert(all.end(), part.begin(), part.end());
        }
        return all;
    }
    if (suite == "degree") return degree_suite(seed, 20);
    if (suite == "oracle") return oracle_suite(seed);
    if (suite == "grad") return grad_suite(seed);
    if (suite == "se-identity") return se_suite(seed);
    if (suite == "fold") return fold_suite(seed);
    if (suite == "tensor") return tensor_suite(seed);
    if (suite == "autodiff") return autodiff_suite(seed);
    if (suite == "netzoo") return netzoo_suite(seed);
    throw std::invalid_argument("unknown suite '" + suite + "'");
}

}  // namespace polynet
