#include "polynet/oracle.hpp"

#include "polynet/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace polynet {

namespace {

std::size_t ipow(std::size_t base, std::size_t exp) {
    std::size_t r = 1;
    while (exp--) r *= base;
    return r;
}

double binomial(std::size_t n, std::size_t k) {
    double r = 1.0;
    for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    return r;
}

Tensor beta_or_zero(const Tensor& beta, std::size_t o) {
    return beta.rank() == 0 ? Tensor::zeros({o}) : beta;
}

}  // namespace

FullPolyTensors cp_expand(const PolyParams& params, std::size_t cap) {
    if (params.degree() < 1) throw std::invalid_argument("cp_expand: degree must be at least 1");
    const Shape& fshape = params.factors[0][0].shape();
    if (fshape.size() != 2) throw ShapeError("cp_expand: factor matrices must be [d x o]");
    const std::size_t d = fshape[0], o = fshape[1], degree = params.degree();
    if (static_cast<double>(o) * std::pow(static_cast<double>(d), static_cast<double>(degree)) >
        static_cast<double>(cap))
        throw CapacityError("cp_expand: d^N * o exceeds " + std::to_string(cap));

    FullPolyTensors out;
    out.beta = beta_or_zero(params.beta, o);
    for (std::size_t n = 1; n <= degree; ++n) {
        const auto& factors = params.factors.at(n - 1);
        if (factors.size() != n) throw std::invalid_argument("cp_expand: degree-n term needs n factors");
        Shape shape{o};
        shape.insert(shape.end(), n, d);
        Tensor w(shape);
        const std::size_t block = ipow(d, n);
        std::vector<std::size_t> idx(n);
        for (std::size_t r = 0; r < block; ++r) {
            std::size_t rem = r;
            for (std::size_t k = n; k-- > 0;) {
                idx[k] = rem % d;
                rem /= d;
            }
            for (std::size_t oo = 0; oo < o; ++oo) {
                double prod = 1.0;
                for (std::size_t k = 0; k < n; ++k) prod *= factors[k](idx[k], oo);
                w[oo * block + r] = prod;
            }
        }
        out.weights.push_back(std::move(w));
    }
    return out;
}

Tensor poly_eval_full(const FullPolyTensors& tensors, const Tensor& z) {
    if (z.rank() != 1) throw ShapeError("poly_eval_full: z must be a vector");
    Tensor y = tensors.beta;
    for (const auto& w : tensors.weights) {
        Tensor t = w;
        // Contract the trailing mode until only the output mode is left.
        while (t.rank() > 1) t = mode_n_vector_product(t, z, t.rank());
        y = y + t;
    }
    return y;
}

Tensor fold_poly2(const PolyParams& params) {
    if (params.degree() != 2) throw std::invalid_argument("fold_poly2: requires a degree-2 parameter set");
    const Tensor& c11 = params.factors[0][0];
    const Tensor& c12 = params.factors[1][0];
    const Tensor& c22 = params.factors[1][1];
    const std::size_t d = c11.extent(0), o = c11.extent(1);
    const Tensor beta = beta_or_zero(params.beta, o);
    const std::size_t p = d + 1;
    Tensor w({o, p, p});
    for (std::size_t oo = 0; oo < o; ++oo) {
        double* slab = w.data() + oo * p * p;
        slab[0] = beta[oo];
        for (std::size_t i = 0; i < d; ++i) {
            slab[(i + 1) * p] = c11(i, oo);
            for (std::size_t j = 0; j < d; ++j) slab[(i + 1) * p + j + 1] = c12(i, oo) * c22(j, oo);
        }
    }
    return w;
}

Tensor eval_folded(const Tensor& folded, const Tensor& z) {
    if (z.rank() != 1 || folded.rank() != 3 || folded.extent(1) != z.size() + 1 || folded.extent(2) != z.size() + 1)
        throw ShapeError("eval_folded: folded tensor must be [o x (d+1) x (d+1)]");
    Tensor padded({z.size() + 1});
    padded[0] = 1.0;
    for (std::size_t i = 0; i < z.size(); ++i) padded[i + 1] = z[i];
    return mode_n_vector_product(mode_n_vector_product(folded, padded, 3), padded, 2);
}

// ---------------------------------------------------------------------------

std::vector<double> relative_differences(const VectorFunction& f, const Tensor& x0, const Tensor& v,
                                         std::size_t max_k, double h) {
    if (x0.shape() != v.shape()) throw ShapeError("finite differences: direction shape differs from x0");
    std::vector<Tensor> g;
    double scale = 0.0;
    for (std::size_t j = 0; j <= max_k; ++j) {
        g.push_back(f(x0 + (static_cast<double>(j) * h) * v));
        if (!all_finite(g.back())) throw std::domain_error("finite differences: non-finite function value");
        scale = std::max(scale, max_abs(g.back()));
    }
    std::vector<double> out(max_k + 1, 0.0);
    if (scale == 0.0) return out;
    for (std::size_t k = 0; k <= max_k; ++k) {
        Tensor acc = Tensor::zeros(g[0].shape());
        for (std::size_t j = 0; j <= k; ++j) {
            const double sign = (j % 2 == 0) ? 1.0 : -1.0;
            acc.array() += sign * binomial(k, j) * g[k - j].array();
        }
        out[k] = max_abs(acc) / scale;
    }
    return out;
}

std::size_t finite_diff_degree(const VectorFunction& f, const Tensor& x0, const Tensor& v,
                               const DegreeProbeOptions& options) {
    if (options.h < 0.1 || options.h > 1.0) throw std::invalid_argument("finite_diff_degree: h must lie in [0.1, 1]");
    if (options.max_degree > 6) throw std::invalid_argument("finite_diff_degree: max degree is 6");
    const auto diff = relative_differences(f, x0, v, options.max_degree + 1, options.h);
    if (std::all_of(diff.begin(), diff.end(), [](double d) { return d == 0.0; })) return 0;
    for (std::size_t n = 0; n <= options.max_degree; ++n)
        if (diff[n + 1] < options.vanish_tol && diff[n] > options.present_tol) return n;
    throw DegreeBoundExceeded("degree exceeds bound " + std::to_string(options.max_degree));
}

// ---------------------------------------------------------------------------

unsigned total_degree(const Exponent& e) { return std::accumulate(e.begin(), e.end(), 0u); }

std::vector<Exponent> monomials(std::size_t d, std::size_t n) {
    std::vector<Exponent> out;
    for (unsigned total = 0; total <= n; ++total) {
        // Enumerate compositions of `total` into d parts, first variable highest.
        Exponent e(d, 0);
        std::function<void(std::size_t, unsigned)> rec = [&](std::size_t pos, unsigned left) {
            if (pos + 1 == d) {
                e[pos] = left;
                out.push_back(e);
                return;
            }
            for (unsigned a = left + 1; a-- > 0;) {
                e[pos] = a;
                rec(pos + 1, left - a);
            }
        };
        if (d == 0) {
            if (total == 0) out.emplace_back();
        } else {
            rec(0, total);
        }
    }
    return out;
}

CoefficientTable extract_coefficients(const VectorFunction& f, std::size_t d, std::size_t degree,
                                      std::uint64_t seed) {
    if (d < 1 || d > 4 || degree > 4) throw std::invalid_argument("extract_coefficients: requires 1 <= d <= 4, N <= 4");
    const auto basis = monomials(d, degree);
    const std::size_t terms = basis.size();
    const std::size_t points = 2 * terms;

    Rng rng(seed);
    Eigen::MatrixXd design(points, terms);
    Eigen::MatrixXd values;
    for (std::size_t p = 0; p < points; ++p) {
        const Tensor z = rng.uniform_tensor({d}, -1.0, 1.0);
        const Tensor y = f(z);
        if (y.rank() != 1) throw ShapeError("extract_coefficients: f must return a vector");
        if (p == 0) values.resize(points, static_cast<Eigen::Index>(y.size()));
        for (std::size_t t = 0; t < terms; ++t) {
            double m = 1.0;
            for (std::size_t i = 0; i < d; ++i) m *= std::pow(z[i], basis[t][i]);
            design(p, t) = m;
        }
        for (std::size_t o = 0; o < y.size(); ++o) values(p, o) = y[o];
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < static_cast<Eigen::Index>(terms)) throw DegeneratePoints("extract_coefficients: points degenerate");
    const Eigen::MatrixXd coeffs = qr.solve(values);

    const double residual = (design * coeffs - values).cwiseAbs().maxCoeff();
    const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
    if (residual > 1e-8 * scale)
        throw NotPolynomial("extract_coefficients: f is not a polynomial of degree <= " + std::to_string(degree) +
                            " (refit residual " + std::to_string(residual / scale) + ")");

    CoefficientTable table;
    for (std::size_t t = 0; t < terms; ++t) {
        Tensor c({static_cast<std::size_t>(coeffs.cols())});
        for (Eigen::Index o = 0; o < coeffs.cols(); ++o) c[static_cast<std::size_t>(o)] = coeffs(t, o);
        table.emplace(basis[t], std::move(c));
    }
    return table;
}

double max_coefficient(const CoefficientTable& table, unsigned degree) {
    double m = 0.0;
    for (const auto& [e, c] : table)
        if (total_degree(e) == degree) m = std::max(m, max_abs(c));
    return m;
}

}  // namespace polynet
