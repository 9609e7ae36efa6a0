// blocks.hpp - the block zoo, one forward operator per architecture family.
//
// Every block acts on a feature matrix X in [hw x c] (a vector input is the
// single row [1 x d]) and is a polynomial of known degree in X once the
// attention softmax is switched off (ActivationMode::identity).
//
// The formulas below are templates over the value type T, instantiated for
// Tensor (direct evaluation) and Var (taped evaluation, see autodiff.hpp).
// Both paths therefore share one definition of each block.

#ifndef POLYNET_BLOCKS_HPP
#define POLYNET_BLOCKS_HPP

#include "polynet/autodiff.hpp"
#include "polynet/random.hpp"
#include "polynet/tensor.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace polynet {

enum class ActivationMode { identity, standard };

enum class BlockKind { residual1, se2, sk2, pinet, pdc, nl3, dnl3, pdcnl3, pdcnl4 };

// How each linear map C_i of a block is realized inside a network. dense and
// conv1x1 are the same matrix product on [hw x c] (conv1x1 carries no bias);
// conv3x3 replaces each map by a 3x3 convolution followed by a per-channel
// affine normalization.
enum class Realization { dense, conv1x1, conv3x3 };

struct BlockSpec {
    BlockKind kind = BlockKind::residual1;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;  // 0: same as in_channels
    std::size_t spatial = 1;       // hw rows seen by the block
    std::size_t degree = 2;        // pinet and pdc only
    std::size_t ratio = 0;         // channel compression; 0: kind default
    std::size_t omega = 0;         // pinet rows of B; 0: out channels
    std::size_t stride = 1;
    Realization realization = Realization::dense;
    ActivationMode mode = ActivationMode::standard;
    bool bias = true;              // beta of residual1 / pdc in dense realization

    std::size_t out() const { return out_channels ? out_channels : in_channels; }
    std::size_t compression() const;  // resolved ratio
    std::size_t reduced() const;      // out() / compression(), at least 1
};

const char* to_string(BlockKind kind);
std::optional<BlockKind> parse_block_kind(std::string_view name);
const char* to_string(Realization r);
std::optional<Realization> parse_realization(std::string_view name);

// Throws std::invalid_argument if the spec cannot describe a block.
void validate(const BlockSpec& spec);

// Declared polynomial degree: residual1 -> 1, se2/sk2 -> 2,
// nl3/dnl3/pdcnl3 -> 3, pdcnl4 -> 4, pinet/pdc -> spec.degree.
std::size_t block_degree(const BlockSpec& spec);

// Exact number of trainable scalars of the block in its realization.
std::size_t block_param_count(const BlockSpec& spec);

// ---------------------------------------------------------------------------
// Parameter sets. Vectors (beta, b) are rank-1; everything else is a matrix
// applied on the right of X.

struct ResidualParams {
    Tensor C;                         // [c x o]
    Tensor beta;                      // [o]; empty (rank 0) for no bias
    std::optional<Tensor> projection; // [c x o] shortcut when c != o
};

struct SeParams {
    Tensor C1;                        // [c x o]
    Tensor C2;                        // [o x o], or [o x o/r] with C2_expand
    std::optional<Tensor> C2_expand;  // [o/r x o]
};

struct SkParams {
    Tensor U1, U2;  // [c x c]
    SeParams se;
};

struct PiNetParams {
    std::vector<Tensor> A;  // N x [d x o]
    std::vector<Tensor> S;  // N-1 x [o x o], for n = 2..N
    std::vector<Tensor> B;  // N x [omega x o]
    std::vector<Tensor> b;  // N x [omega]

    std::size_t degree() const { return A.size(); }
};

struct PolyParams {
    Tensor beta;                              // [o]; empty (rank 0) for no bias
    std::vector<std::vector<Tensor>> factors; // factors[n-1] holds n matrices [d x o]

    std::size_t degree() const { return factors.size(); }
};

struct NlParams {
    Tensor C1;  // [c x k]
    Tensor C2;  // [k x c]
    Tensor C3;  // [c x c]
};

struct DnlParams {
    Tensor C1, C2;
    Tensor c4;  // [c x 1]
    Tensor C3;
};

struct PdcNl3Params {
    Tensor C1, C2, C3;
    Tensor C4;  // [c x hw]
    Tensor C5, C6;
};

struct PdcNl4Params {
    PdcNl3Params base;
    Tensor C7;  // [c x k]
    Tensor C8;  // [k x c]
};

using BlockParams = std::variant<ResidualParams, SeParams, SkParams, PiNetParams, PolyParams, NlParams, DnlParams,
                                 PdcNl3Params, PdcNl4Params>;

// Named view of a parameter set, in a fixed order. Names are relative
// ("C1", "C2_3", ...).
std::vector<std::pair<std::string, const Tensor*>> named_tensors(const BlockParams& params);

enum class InitScheme {
    // Every entry ~ N(0, 1/fan_in), vectors ~ N(0, 1). Used by the oracles.
    random,
    // Training start: beta and the last factor of each higher-degree term
    // are zero, so each block begins as its first-degree part.
    training,
};

// Dense-realization parameters for spec. Throws for conv3x3 specs; those are
// assembled by the network builder.
BlockParams sample_block_params(const BlockSpec& spec, Rng& rng, InitScheme scheme);

// ---------------------------------------------------------------------------
// Formula templates.

namespace expr {

template <class T>
std::size_t rows(const T& x) {
    return x.shape()[0];
}

template <class T>
T as_row(const T& v) {
    return reshape(v, Shape{1, element_count(v.shape())});
}

template <class T>
T broadcast_rows(const T& v, std::size_t m) {
    return replicate_rows(as_row(v), m);
}

// Y = u * r(gate(p(u)))
template <class T, class Gate>
T se_apply(const T& u, Gate&& gate) {
    return hadamard(u, replicate_rows(gate(global_avg_pool(u)), rows(u)));
}

// proj(n, k) returns the k-th projection of the degree-n term.
template <class T, class Proj>
T pdc_apply(std::size_t degree, Proj&& proj, const std::optional<T>& beta_rows) {
    T y = proj(1, 1);
    for (std::size_t n = 2; n <= degree; ++n) {
        T term = proj(n, 1);
        for (std::size_t k = 2; k <= n; ++k) term = hadamard(term, proj(n, k));
        y = y + term;
    }
    if (beta_rows) y = *beta_rows + y;
    return y;
}

// x_1 = a(1) * bias(1);  x_n = a(n) * (s(n, x_{n-1}) + bias(n)) + x_{n-1}
template <class T, class AProj, class SMap, class Bias>
T pinet_apply(std::size_t degree, AProj&& a, SMap&& s, Bias&& bias) {
    T x = hadamard(a(1), bias(1));
    for (std::size_t n = 2; n <= degree; ++n) x = hadamard(a(n), s(n, x) + bias(n)) + x;
    return x;
}

template <class T>
T center_rows(const T& q) {
    return q - replicate_rows(global_avg_pool(q), rows(q));
}

// X C1 C2 X^T, factored as Q K^T with Q = X C1 and K = X C2^T.
template <class T>
T pairwise_attention(const T& x, const T& c1, const T& c2) {
    return matmul(matmul(x, c1), transpose(matmul(x, transpose(c2))));
}

template <class T>
T maybe_softmax(const T& a, ActivationMode mode) {
    return mode == ActivationMode::standard ? softmax_rows(a) : a;
}

template <class T>
T residual(const T& x, const T& c, const std::optional<T>& beta, const std::optional<T>& projection) {
    T y = (projection ? matmul(x, *projection) : x) + matmul(x, c);
    if (beta) y = y + broadcast_rows(*beta, rows(x));
    return y;
}

template <class T>
T se(const T& x, const T& c1, const T& c2, const std::optional<T>& c2_expand) {
    return se_apply(matmul(x, c1), [&](const T& pooled) {
        T g = matmul(pooled, c2);
        return c2_expand ? matmul(g, *c2_expand) : g;
    });
}

template <class T>
T sk(const T& x, const T& u1, const T& u2, const T& c1, const T& c2, const std::optional<T>& c2_expand) {
    return se(matmul(x, u1) + matmul(x, u2), c1, c2, c2_expand);
}

template <class T>
T pdc(const T& x, const std::vector<std::vector<T>>& factors, const std::optional<T>& beta) {
    std::optional<T> beta_rows;
    if (beta) beta_rows = broadcast_rows(*beta, rows(x));
    return pdc_apply<T>(factors.size(), [&](std::size_t n, std::size_t k) { return matmul(x, factors[n - 1][k - 1]); },
                        beta_rows);
}

template <class T>
T pinet(const T& x, const std::vector<T>& a, const std::vector<T>& s, const std::vector<T>& big_b,
        const std::vector<T>& small_b) {
    const std::size_t m = rows(x);
    return pinet_apply<T>(
        a.size(), [&](std::size_t n) { return matmul(x, a[n - 1]); },
        [&](std::size_t n, const T& prev) { return matmul(prev, s[n - 2]); },
        [&](std::size_t n) { return replicate_rows(matmul(as_row(small_b[n - 1]), big_b[n - 1]), m); });
}

template <class T>
T nl(const T& x, const T& c1, const T& c2, const T& c3, ActivationMode mode) {
    return matmul(maybe_softmax(pairwise_attention(x, c1, c2), mode), matmul(x, c3));
}

// ((X C1 - mu_q)(X C2^T - mu_k)^T + X c4 1^T) X C3; in standard mode each of
// the two attention summands gets its own row softmax.
template <class T>
T dnl(const T& x, const T& c1, const T& c2, const T& c4, const T& c3, ActivationMode mode) {
    const std::size_t m = rows(x);
    const T q = center_rows(matmul(x, c1));
    const T k = center_rows(matmul(x, transpose(c2)));
    const T pair = maybe_softmax(matmul(q, transpose(k)), mode);
    const T unary = maybe_softmax(transpose(replicate_rows(transpose(matmul(x, c4)), m)), mode);
    return matmul(pair + unary, matmul(x, c3));
}

template <class T>
T pdcnl3(const T& x, const T& c1, const T& c2, const T& c3, const T& c4, const T& c5, const T& c6,
         ActivationMode mode) {
    const T third = matmul(maybe_softmax(pairwise_attention(x, c1, c2), mode), matmul(x, c3));
    const T second = matmul(matmul(maybe_softmax(matmul(x, c4), mode), x), c5);
    return third + second + matmul(x, c6);
}

template <class T>
T pdcnl4(const T& y3, const T& x, const T& c7, const T& c8) {
    return y3 + hadamard(y3, replicate_rows(matmul(global_avg_pool(matmul(x, c7)), c8), rows(x)));
}

}  // namespace expr

// ---------------------------------------------------------------------------
// Direct evaluation on tensors.

// Y = X + X C + beta (X P instead of X when a projection is present).
Tensor residual_forward(const Tensor& x, const ResidualParams& p);
// Y = (X C1) * r(p(X C1) C2)
Tensor se_forward(const Tensor& x, const SeParams& p, ActivationMode mode = ActivationMode::identity);
// se_forward applied to X U1 + X U2.
Tensor sk_forward(const Tensor& x, const SkParams& p, ActivationMode mode = ActivationMode::identity);
// z is [d]; returns x_N of the recursion as [o].
Tensor pinet_forward(const Tensor& z, const PiNetParams& p);
// z is [d]; returns beta + sum_n (C_{1,n}^T z) * ... * (C_{n,n}^T z) as [o].
Tensor pdc_forward(const Tensor& z, const PolyParams& p);
Tensor nl_forward(const Tensor& x, const NlParams& p, ActivationMode mode);
Tensor dnl_forward(const Tensor& x, const DnlParams& p, ActivationMode mode);
Tensor pdcnl3_forward(const Tensor& x, const PdcNl3Params& p, ActivationMode mode);
Tensor pdcnl4_forward(const Tensor& x, const PdcNl4Params& p, ActivationMode mode);

// Row-wise versions of the vector blocks, X in [m x d].
Tensor pinet_forward_rows(const Tensor& x, const PiNetParams& p);
Tensor pdc_forward_rows(const Tensor& x, const PolyParams& p);

// (X C1) . superdiag_mode3((1/hw) C2^T C1^T X^T 1): the SE block written as
// an explicit second-degree term. Requires a single C2 (no expand matrix).
Tensor se_superdiag_form(const Tensor& x, const SeParams& p);

// Dispatch on the parameter set; x is [spatial x in_channels].
Tensor block_forward(const BlockSpec& spec, const BlockParams& params, const Tensor& x);

// Registers the parameters as "<prefix>.<name>" and records the block.
Var block_graph(Graph& graph, const Var& x, const BlockSpec& spec, const BlockParams& params,
                const std::string& prefix);

}  // namespace polynet

#endif  // POLYNET_BLOCKS_HPP
