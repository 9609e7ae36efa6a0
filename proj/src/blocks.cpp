#include "polynet/blocks.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace polynet {

namespace {

constexpr std::array<std::pair<BlockKind, const char*>, 9> kKindNames{{
    {BlockKind::residual1, "residual1"},
    {BlockKind::se2, "se2"},
    {BlockKind::sk2, "sk2"},
    {BlockKind::pinet, "pinet"},
    {BlockKind::pdc, "pdc"},
    {BlockKind::nl3, "nl3"},
    {BlockKind::dnl3, "dnl3"},
    {BlockKind::pdcnl3, "pdcnl3"},
    {BlockKind::pdcnl4, "pdcnl4"},
}};

bool is_nonlocal(BlockKind k) {
    return k == BlockKind::nl3 || k == BlockKind::dnl3 || k == BlockKind::pdcnl3 || k == BlockKind::pdcnl4;
}

// Trainable scalars of one linear map c -> o in the given realization.
std::size_t linear_count(std::size_t c, std::size_t o, Realization r) {
    return r == Realization::conv3x3 ? 9 * c * o + 2 * o : c * o;
}

std::size_t projection_count(const BlockSpec& s) {
    const bool needed = s.in_channels != s.out() || s.stride != 1;
    if (!needed) return 0;
    return s.in_channels * s.out() + (s.realization == Realization::conv3x3 ? 2 * s.out() : 0);
}

std::size_t gate_count(const BlockSpec& s) {
    const std::size_t o = s.out();
    return s.compression() <= 1 ? o * o : 2 * o * s.reduced();
}

std::optional<Tensor> present(const Tensor& t) {
    if (t.rank() == 0) return std::nullopt;
    return t;
}

Tensor as_vector_row(const Tensor& z, const char* op) {
    if (z.rank() != 1) throw ShapeError(std::string(op) + ": input must be a vector, got " + shape_string(z.shape()));
    return z.reshaped({1, z.size()});
}

void check_poly(const PolyParams& p) {
    if (p.degree() < 1) throw std::invalid_argument("PolyParams: degree must be at least 1");
    const Shape& ref = p.factors.at(0).at(0).shape();
    for (std::size_t n = 1; n <= p.degree(); ++n) {
        if (p.factors[n - 1].size() != n)
            throw std::invalid_argument("PolyParams: degree " + std::to_string(n) + " needs " + std::to_string(n) +
                                        " factor matrices");
        for (const auto& f : p.factors[n - 1])
            if (f.shape() != ref) throw ShapeError("PolyParams: factor matrices must share one shape");
    }
}

void check_pinet(const PiNetParams& p) {
    const std::size_t n = p.degree();
    if (n < 1) throw std::invalid_argument("PiNetParams: degree must be at least 1");
    if (p.S.size() != n - 1 || p.B.size() != n || p.b.size() != n)
        throw std::invalid_argument("PiNetParams: expected N A, N-1 S, N B and N b tensors");
}

}  // namespace

const char* to_string(BlockKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "?";
}

std::optional<BlockKind> parse_block_kind(std::string_view name) {
    for (const auto& [k, n] : kKindNames)
        if (name == n) return k;
    return std::nullopt;
}

const char* to_string(Realization r) {
    switch (r) {
    case Realization::dense: return "dense";
    case Realization::conv1x1: return "conv1x1";
    case Realization::conv3x3: return "conv3x3";
    }
    return "?";
}

std::optional<Realization> parse_realization(std::string_view name) {
    if (name == "dense") return Realization::dense;
    if (name == "conv1x1") return Realization::conv1x1;
    if (name == "conv3x3") return Realization::conv3x3;
    return std::nullopt;
}

std::size_t BlockSpec::compression() const {
    if (ratio) return ratio;
    return is_nonlocal(kind) ? 4 : 1;
}

std::size_t BlockSpec::reduced() const { return std::max<std::size_t>(1, out() / compression()); }

void validate(const BlockSpec& s) {
    auto fail = [&](const std::string& why) {
        throw std::invalid_argument(std::string("block ") + to_string(s.kind) + ": " + why);
    };
    if (s.in_channels == 0) fail("channels must be positive");
    if (s.spatial == 0) fail("spatial size must be positive");
    if (s.stride == 0) fail("stride must be positive");
    if ((s.kind == BlockKind::pdc || s.kind == BlockKind::pinet) && s.degree < 1) fail("degree must be at least 1");
    if (s.realization != Realization::conv3x3 && s.stride != 1) fail("only the conv3x3 realization can stride");
    if (is_nonlocal(s.kind)) {
        if (s.realization == Realization::conv3x3) fail("non-local blocks support dense or conv1x1 maps only");
        if (s.out() != s.in_channels) fail("non-local blocks keep the channel count");
    }
}

std::size_t block_degree(const BlockSpec& spec) {
    switch (spec.kind) {
    case BlockKind::residual1: return 1;
    case BlockKind::se2:
    case BlockKind::sk2: return 2;
    case BlockKind::nl3:
    case BlockKind::dnl3:
    case BlockKind::pdcnl3: return 3;
    case BlockKind::pdcnl4: return 4;
    case BlockKind::pinet:
    case BlockKind::pdc: return spec.degree;
    }
    throw std::invalid_argument("block_degree: unknown block kind");
}

std::size_t block_param_count(const BlockSpec& s) {
    validate(s);
    const std::size_t c = s.in_channels, o = s.out(), k = s.reduced();
    const Realization r = s.realization;
    const bool conv3 = r == Realization::conv3x3;
    const bool dense_bias = s.bias && r == Realization::dense;
    switch (s.kind) {
    case BlockKind::residual1: {
        const std::size_t body = conv3 ? linear_count(c, o, r) + linear_count(o, o, r) : c * o;
        return body + projection_count(s) + (dense_bias ? o : 0);
    }
    case BlockKind::se2: {
        const std::size_t body = conv3 ? linear_count(c, o, r) + linear_count(o, o, r) : c * o;
        return body + gate_count(s) + (conv3 ? projection_count(s) : 0);
    }
    case BlockKind::sk2: {
        const std::size_t u = conv3 ? linear_count(c, c, r) + (c * c + 2 * c) : 2 * c * c;
        return u + linear_count(c, o, r) + gate_count(s) + (conv3 ? projection_count(s) : 0);
    }
    case BlockKind::pinet: {
        const std::size_t n = s.degree, omega = s.omega ? s.omega : o;
        return n * linear_count(c, o, r) + (n - 1) * linear_count(o, o, r) + n * (omega * o + omega);
    }
    case BlockKind::pdc: return s.degree * (s.degree + 1) / 2 * linear_count(c, o, r) + (dense_bias ? o : 0);
    case BlockKind::nl3: return 2 * c * k + c * c;
    case BlockKind::dnl3: return 2 * c * k + c * c + c;
    case BlockKind::pdcnl3: return 2 * c * k + 3 * c * c + c * s.spatial;
    case BlockKind::pdcnl4: return 4 * c * k + 3 * c * c + c * s.spatial;
    }
    throw std::invalid_argument("block_param_count: unknown block kind");
}

std::vector<std::pair<std::string, const Tensor*>> named_tensors(const BlockParams& params) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    auto add = [&](std::string name, const Tensor& t) {
        if (t.rank() != 0) out.emplace_back(std::move(name), &t);
    };
    auto add_se = [&](const SeParams& p) {
        add("C1", p.C1);
        add("C2", p.C2);
        if (p.C2_expand) add("C2_expand", *p.C2_expand);
    };
    auto add_nl3 = [&](const PdcNl3Params& p) {
        add("C1", p.C1);
        add("C2", p.C2);
        add("C3", p.C3);
        add("C4", p.C4);
        add("C5", p.C5);
        add("C6", p.C6);
    };
    std::visit(
        [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, ResidualParams>) {
                add("C", p.C);
                add("beta", p.beta);
                if (p.projection) add("projection", *p.projection);
            } else if constexpr (std::is_same_v<P, SeParams>) {
                add_se(p);
            } else if constexpr (std::is_same_v<P, SkParams>) {
                add("U1", p.U1);
                add("U2", p.U2);
                add_se(p.se);
            } else if constexpr (std::is_same_v<P, PiNetParams>) {
                for (std::size_t n = 1; n <= p.degree(); ++n) {
                    const auto sfx = std::to_string(n);
                    add("A" + sfx, p.A[n - 1]);
                    if (n >= 2) add("S" + sfx, p.S[n - 2]);
                    add("B" + sfx, p.B[n - 1]);
                    add("b" + sfx, p.b[n - 1]);
                }
            } else if constexpr (std::is_same_v<P, PolyParams>) {
                add("beta", p.beta);
                for (std::size_t n = 1; n <= p.degree(); ++n)
                    for (std::size_t k = 1; k <= n; ++k)
                        add("C" + std::to_string(k) + "_" + std::to_string(n), p.factors[n - 1][k - 1]);
            } else if constexpr (std::is_same_v<P, NlParams>) {
                add("C1", p.C1);
                add("C2", p.C2);
                add("C3", p.C3);
            } else if constexpr (std::is_same_v<P, DnlParams>) {
                add("C1", p.C1);
                add("C2", p.C2);
                add("c4", p.c4);
                add("C3", p.C3);
            } else if constexpr (std::is_same_v<P, PdcNl3Params>) {
                add_nl3(p);
            } else {
                add_nl3(p.base);
                add("C7", p.C7);
                add("C8", p.C8);
            }
        },
        params);
    return out;
}

BlockParams sample_block_params(const BlockSpec& s, Rng& rng, InitScheme scheme) {
    validate(s);
    if (s.realization == Realization::conv3x3)
        throw std::invalid_argument("sample_block_params: conv3x3 blocks are assembled by the network builder");
    const bool training = scheme == InitScheme::training;
    const std::size_t c = s.in_channels, o = s.out(), k = s.reduced(), hw = s.spatial;

    auto mat = [&](std::size_t rows, std::size_t cols) {
        return rng.normal_tensor({rows, cols}, 1.0 / std::sqrt(static_cast<double>(rows)));
    };
    // Gate factors start at zero under the training scheme.
    auto gate = [&](std::size_t rows, std::size_t cols) {
        return training ? Tensor::zeros({rows, cols}) : mat(rows, cols);
    };
    auto vec = [&](std::size_t n) { return rng.normal_tensor({n}, 1.0); };
    auto bias = [&](std::size_t n) {
        if (!(s.bias && s.realization == Realization::dense)) return Tensor();
        return training ? Tensor::zeros({n}) : vec(n);
    };
    auto se_params = [&](std::size_t cin) {
        SeParams p;
        p.C1 = mat(cin, o);
        if (s.compression() <= 1) {
            p.C2 = mat(o, o);
        } else {
            p.C2 = mat(o, k);
            p.C2_expand = mat(k, o);
        }
        return p;
    };
    auto pdcnl3_params = [&] {
        PdcNl3Params p;
        p.C1 = mat(c, k);
        p.C2 = mat(k, c);
        p.C3 = gate(c, c);
        p.C4 = mat(c, hw);
        p.C5 = gate(c, c);
        p.C6 = mat(c, c);
        return p;
    };

    switch (s.kind) {
    case BlockKind::residual1: {
        ResidualParams p;
        p.C = mat(c, o);
        p.beta = bias(o);
        if (c != o) p.projection = mat(c, o);
        return p;
    }
    case BlockKind::se2: return se_params(c);
    case BlockKind::sk2: {
        SkParams p;
        p.U1 = mat(c, c);
        p.U2 = mat(c, c);
        p.se = se_params(c);
        return p;
    }
    case BlockKind::pinet: {
        PiNetParams p;
        const std::size_t omega = s.omega ? s.omega : o;
        for (std::size_t n = 1; n <= s.degree; ++n) {
            p.A.push_back(mat(c, o));
            if (n >= 2) p.S.push_back(gate(o, o));
            p.B.push_back(mat(omega, o));
            p.b.push_back(training && n >= 2 ? Tensor::zeros({omega}) : vec(omega));
        }
        return p;
    }
    case BlockKind::pdc: {
        PolyParams p;
        p.beta = bias(o);
        for (std::size_t n = 1; n <= s.degree; ++n) {
            std::vector<Tensor> f;
            for (std::size_t j = 1; j <= n; ++j) f.push_back(n >= 2 && j == n ? gate(c, o) : mat(c, o));
            p.factors.push_back(std::move(f));
        }
        return p;
    }
    case BlockKind::nl3: return NlParams{mat(c, k), mat(k, c), mat(c, c)};
    case BlockKind::dnl3: return DnlParams{mat(c, k), mat(k, c), mat(c, 1), mat(c, c)};
    case BlockKind::pdcnl3: return pdcnl3_params();
    case BlockKind::pdcnl4: {
        PdcNl4Params p;
        p.base = pdcnl3_params();
        p.C7 = mat(c, k);
        p.C8 = gate(k, c);
        return p;
    }
    }
    throw std::invalid_argument("sample_block_params: unknown block kind");
}

// ---------------------------------------------------------------------------

Tensor residual_forward(const Tensor& x, const ResidualParams& p) {
    return expr::residual<Tensor>(x, p.C, present(p.beta), p.projection);
}

Tensor se_forward(const Tensor& x, const SeParams& p, ActivationMode) {
    return expr::se<Tensor>(x, p.C1, p.C2, p.C2_expand);
}

Tensor sk_forward(const Tensor& x, const SkParams& p, ActivationMode) {
    return expr::sk<Tensor>(x, p.U1, p.U2, p.se.C1, p.se.C2, p.se.C2_expand);
}

Tensor pinet_forward_rows(const Tensor& x, const PiNetParams& p) {
    check_pinet(p);
    return expr::pinet<Tensor>(x, p.A, p.S, p.B, p.b);
}

Tensor pinet_forward(const Tensor& z, const PiNetParams& p) {
    const Tensor y = pinet_forward_rows(as_vector_row(z, "pinet_forward"), p);
    return y.reshaped({y.size()});
}

Tensor pdc_forward_rows(const Tensor& x, const PolyParams& p) {
    check_poly(p);
    return expr::pdc<Tensor>(x, p.factors, present(p.beta));
}

Tensor pdc_forward(const Tensor& z, const PolyParams& p) {
    const Tensor y = pdc_forward_rows(as_vector_row(z, "pdc_forward"), p);
    return y.reshaped({y.size()});
}

Tensor nl_forward(const Tensor& x, const NlParams& p, ActivationMode mode) {
    return expr::nl<Tensor>(x, p.C1, p.C2, p.C3, mode);
}

Tensor dnl_forward(const Tensor& x, const DnlParams& p, ActivationMode mode) {
    return expr::dnl<Tensor>(x, p.C1, p.C2, p.c4, p.C3, mode);
}

Tensor pdcnl3_forward(const Tensor& x, const PdcNl3Params& p, ActivationMode mode) {
    return expr::pdcnl3<Tensor>(x, p.C1, p.C2, p.C3, p.C4, p.C5, p.C6, mode);
}

Tensor pdcnl4_forward(const Tensor& x, const PdcNl4Params& p, ActivationMode mode) {
    return expr::pdcnl4<Tensor>(pdcnl3_forward(x, p.base, mode), x, p.C7, p.C8);
}

Tensor se_superdiag_form(const Tensor& x, const SeParams& p) {
    if (p.C2_expand) throw std::invalid_argument("se_superdiag_form: expects a single gate matrix");
    const std::size_t hw = x.extent(0);
    const Tensor ones = Tensor::ones({hw, 1});
    // (1/hw) C2^T C1^T X^T 1
    const Tensor v = scale(matmul(transpose(p.C2), matmul(transpose(p.C1), matmul(transpose(x), ones))),
                           1.0 / static_cast<double>(hw));
    return matmul(matmul(x, p.C1), superdiag_mode3(v.reshaped({v.size()})));
}

Tensor block_forward(const BlockSpec& spec, const BlockParams& params, const Tensor& x) {
    const ActivationMode mode = spec.mode;
    return std::visit(
        [&](const auto& p) -> Tensor {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, ResidualParams>) return residual_forward(x, p);
            else if constexpr (std::is_same_v<P, SeParams>) return se_forward(x, p, mode);
            else if constexpr (std::is_same_v<P, SkParams>) return sk_forward(x, p, mode);
            else if constexpr (std::is_same_v<P, PiNetParams>) return pinet_forward_rows(x, p);
            else if constexpr (std::is_same_v<P, PolyParams>) return pdc_forward_rows(x, p);
            else if constexpr (std::is_same_v<P, NlParams>) return nl_forward(x, p, mode);
            else if constexpr (std::is_same_v<P, DnlParams>) return dnl_forward(x, p, mode);
            else if constexpr (std::is_same_v<P, PdcNl3Params>) return pdcnl3_forward(x, p, mode);
            else return pdcnl4_forward(x, p, mode);
        },
        params);
}

Var block_graph(Graph& graph, const Var& x, const BlockSpec& spec, const BlockParams& params,
                const std::string& prefix) {
    auto reg = [&](const std::string& name, const Tensor& t) { return graph.parameter(prefix + "." + name, t); };
    auto opt = [&](const std::string& name, const Tensor& t) -> std::optional<Var> {
        if (t.rank() == 0) return std::nullopt;
        return reg(name, t);
    };
    auto opt_expand = [&](const std::optional<Tensor>& t) -> std::optional<Var> {
        if (!t) return std::nullopt;
        return reg("C2_expand", *t);
    };
    const ActivationMode mode = spec.mode;

    auto nl3_vars = [&](const PdcNl3Params& p) {
        return std::array<Var, 6>{reg("C1", p.C1), reg("C2", p.C2), reg("C3", p.C3),
                                  reg("C4", p.C4), reg("C5", p.C5), reg("C6", p.C6)};
    };

    return std::visit(
        [&](const auto& p) -> Var {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, ResidualParams>) {
                const Var c = reg("C", p.C);
                const auto beta = opt("beta", p.beta);
                std::optional<Var> proj;
                if (p.projection) proj = reg("projection", *p.projection);
                return expr::residual<Var>(x, c, beta, proj);
            } else if constexpr (std::is_same_v<P, SeParams>) {
                const Var c1 = reg("C1", p.C1), c2 = reg("C2", p.C2);
                return expr::se<Var>(x, c1, c2, opt_expand(p.C2_expand));
            } else if constexpr (std::is_same_v<P, SkParams>) {
                const Var u1 = reg("U1", p.U1), u2 = reg("U2", p.U2);
                const Var c1 = reg("C1", p.se.C1), c2 = reg("C2", p.se.C2);
                return expr::sk<Var>(x, u1, u2, c1, c2, opt_expand(p.se.C2_expand));
            } else if constexpr (std::is_same_v<P, PiNetParams>) {
                check_pinet(p);
                std::vector<Var> a, s, bb, b;
                for (std::size_t n = 1; n <= p.degree(); ++n) {
                    const auto sfx = std::to_string(n);
                    a.push_back(reg("A" + sfx, p.A[n - 1]));
                    if (n >= 2) s.push_back(reg("S" + sfx, p.S[n - 2]));
                    bb.push_back(reg("B" + sfx, p.B[n - 1]));
                    b.push_back(reg("b" + sfx, p.b[n - 1]));
                }
                return expr::pinet<Var>(x, a, s, bb, b);
            } else if constexpr (std::is_same_v<P, PolyParams>) {
                check_poly(p);
                const auto beta = opt("beta", p.beta);
                std::vector<std::vector<Var>> factors(p.degree());
                for (std::size_t n = 1; n <= p.degree(); ++n)
                    for (std::size_t k = 1; k <= n; ++k)
                        factors[n - 1].push_back(
                            reg("C" + std::to_string(k) + "_" + std::to_string(n), p.factors[n - 1][k - 1]));
                return expr::pdc<Var>(x, factors, beta);
            } else if constexpr (std::is_same_v<P, NlParams>) {
                const Var c1 = reg("C1", p.C1), c2 = reg("C2", p.C2), c3 = reg("C3", p.C3);
                return expr::nl<Var>(x, c1, c2, c3, mode);
            } else if constexpr (std::is_same_v<P, DnlParams>) {
                const Var c1 = reg("C1", p.C1), c2 = reg("C2", p.C2), c4 = reg("c4", p.c4), c3 = reg("C3", p.C3);
                return expr::dnl<Var>(x, c1, c2, c4, c3, mode);
            } else if constexpr (std::is_same_v<P, PdcNl3Params>) {
                const auto v = nl3_vars(p);
                return expr::pdcnl3<Var>(x, v[0], v[1], v[2], v[3], v[4], v[5], mode);
            } else {
                const auto v = nl3_vars(p.base);
                const Var c7 = reg("C7", p.C7), c8 = reg("C8", p.C8);
                const Var y3 = expr::pdcnl3<Var>(x, v[0], v[1], v[2], v[3], v[4], v[5], mode);
                return expr::pdcnl4<Var>(y3, x, c7, c8);
            }
        },
        params);
}

}  // namespace polynet
