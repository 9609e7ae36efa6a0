// oracle.hpp - decomposition-free evaluators and polynomial probes.
//
// None of these routines share code with the block formulas: the full
// coefficient tensors are contracted mode by mode, degrees are read off
// directional finite differences, and coefficients come from a least-squares
// fit over all monomials.

#ifndef POLYNET_ORACLE_HPP
#define POLYNET_ORACLE_HPP

#include "polynet/blocks.hpp"
#include "polynet/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

namespace polynet {

// y = beta + sum_n W^(n) x_2 z x_3 z ... x_{n+1} z
struct FullPolyTensors {
    Tensor beta;                 // [o]
    std::vector<Tensor> weights; // weights[n-1] is [o x d x ... x d] with n trailing modes

    std::size_t degree() const { return weights.size(); }
};

class CapacityError : public std::length_error {
public:
    using std::length_error::length_error;
};

// W^(n)[o, i1..in] = prod_k C_{k,[n]}[i_k, o]. Throws CapacityError when
// d^N * o exceeds `cap`.
FullPolyTensors cp_expand(const PolyParams& params, std::size_t cap = 1'000'000);

Tensor poly_eval_full(const FullPolyTensors& tensors, const Tensor& z);

// Second-degree parameters folded into one [o x (d+1) x (d+1)] tensor acting
// on the padded input [1; z]:
//   W[o,0,0] = beta_o, W[o,i+1,0] = C_{1,[1]}[i,o], W[o,0,j+1] = 0,
//   W[o,i+1,j+1] = C_{1,[2]}[i,o] * C_{2,[2]}[j,o].
Tensor fold_poly2(const PolyParams& params);

// folded x_2 [1; z] x_3 [1; z]
Tensor eval_folded(const Tensor& folded, const Tensor& z);

using VectorFunction = std::function<Tensor(const Tensor&)>;

class DegreeBoundExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DegreeProbeOptions {
    std::size_t max_degree = 6;
    double h = 0.5;
    double vanish_tol = 1e-6;   // (N+1)-th difference, relative
    double present_tol = 1e-8;  // N-th difference, relative
};

// k-th forward differences of g(t) = f(x0 + t v) at 0 for k = 0..max_k,
// each reduced to max over output coordinates and divided by max |g(t_j)|.
std::vector<double> relative_differences(const VectorFunction& f, const Tensor& x0, const Tensor& v,
                                         std::size_t max_k, double h);

// Smallest N whose (N+1)-th difference vanishes while the N-th does not.
std::size_t finite_diff_degree(const VectorFunction& f, const Tensor& x0, const Tensor& v,
                               const DegreeProbeOptions& options = {});

using Exponent = std::vector<unsigned>;
using CoefficientTable = std::map<Exponent, Tensor>;

class DegeneratePoints : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotPolynomial : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

unsigned total_degree(const Exponent& e);

// All exponent vectors of d variables with total degree <= n, graded.
std::vector<Exponent> monomials(std::size_t d, std::size_t n);

// Coefficients of f: R^d -> R^o over all monomials of total degree <= N, fit
// on a fixed seeded point set. Requires d <= 4 and N <= 4.
CoefficientTable extract_coefficients(const VectorFunction& f, std::size_t d, std::size_t degree,
                                      std::uint64_t seed = 0x5eedULL);

// Largest coefficient magnitude among monomials of the given total degree.
double max_coefficient(const CoefficientTable& table, unsigned degree);

}  // namespace polynet

#endif  // POLYNET_ORACLE_HPP
