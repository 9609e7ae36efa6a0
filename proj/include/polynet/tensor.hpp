// tensor.hpp - dense row-major tensors and the multilinear primitives the
// polynomial blocks are built from.
//
// BasicTensor<Scalar> owns a flat Eigen vector plus a shape. Rank-2 tensors
// expose an Eigen row-major Map, so matrix kernels are plain Eigen
// expressions; everything else is a free function taking tensors by const
// reference and returning a new tensor.

#ifndef POLYNET_TENSOR_HPP
#define POLYNET_TENSOR_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace polynet {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename Scalar>
class BasicTensor {
public:
    using value_type = Scalar;
    using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MatrixMap = Eigen::Map<RowMatrix>;
    using ConstMatrixMap = Eigen::Map<const RowMatrix>;
    using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
    using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

    // Rank-0 scalar holding zero.
    BasicTensor() : data_(Storage::Zero(1)) {}

    explicit BasicTensor(Shape shape) : shape_(std::move(shape)) {
        check_extents();
        data_ = Storage::Zero(static_cast<Eigen::Index>(element_count(shape_)));
    }

    BasicTensor(Shape shape, std::vector<Scalar> values) : shape_(std::move(shape)) {
        check_extents();
        if (values.size() != element_count(shape_))
            throw ShapeError("tensor: " + std::to_string(values.size()) +
                             " values do not fill shape " + shape_string(shape_));
        data_ = Eigen::Map<const Storage>(values.data(), static_cast<Eigen::Index>(values.size()));
    }

    static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }

    static BasicTensor filled(Shape shape, Scalar value) {
        BasicTensor t(std::move(shape));
        t.data_.setConstant(value);
        return t;
    }

    static BasicTensor ones(Shape shape) { return filled(std::move(shape), Scalar(1)); }

    static BasicTensor identity(std::size_t n) {
        BasicTensor t({n, n});
        t.matrix().setIdentity();
        return t;
    }

    static BasicTensor vector(std::initializer_list<Scalar> values) {
        return BasicTensor({values.size()}, std::vector<Scalar>(values));
    }

    static BasicTensor from_rows(std::initializer_list<std::initializer_list<Scalar>> rows) {
        const std::size_t m = rows.size();
        const std::size_t n = m ? rows.begin()->size() : 0;
        std::vector<Scalar> values;
        values.reserve(m * n);
        for (const auto& row : rows) {
            if (row.size() != n) throw ShapeError("from_rows: ragged rows");
            values.insert(values.end(), row.begin(), row.end());
        }
        return BasicTensor({m, n}, std::move(values));
    }

    static BasicTensor from_matrix(const RowMatrix& m) {
        BasicTensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
        t.matrix() = m;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return static_cast<std::size_t>(data_.size()); }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }
    std::span<Scalar> values() { return {data_.data(), size()}; }
    std::span<const Scalar> values() const { return {data_.data(), size()}; }

    Scalar& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
    const Scalar& operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

    Scalar& operator()(std::size_t i, std::size_t j) { return data_[flat2(i, j)]; }
    const Scalar& operator()(std::size_t i, std::size_t j) const { return data_[flat2(i, j)]; }

    Scalar& at(std::span<const std::size_t> index) { return data_[flat(index)]; }
    const Scalar& at(std::span<const std::size_t> index) const { return data_[flat(index)]; }

    MatrixMap matrix() {
        require_rank2("matrix view");
        return MatrixMap(data_.data(), rows(), cols());
    }
    ConstMatrixMap matrix() const {
        require_rank2("matrix view");
        return ConstMatrixMap(data_.data(), rows(), cols());
    }

    ArrayMap array() { return ArrayMap(data_.data(), data_.size()); }
    ConstArrayMap array() const { return ConstArrayMap(data_.data(), data_.size()); }

    // Same data, new shape. Throws if the element count differs.
    BasicTensor reshaped(Shape shape) const {
        if (element_count(shape) != size())
            throw ShapeError("reshape: " + shape_string(shape_) + " -> " + shape_string(shape) +
                             " changes the element count");
        BasicTensor t;
        t.shape_ = std::move(shape);
        t.check_extents();
        t.data_ = data_;
        return t;
    }

    bool operator==(const BasicTensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    void check_extents() const {
        for (auto e : shape_)
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
    }

    void require_rank2(const char* what) const {
        if (rank() != 2) throw ShapeError(std::string(what) + " needs a rank-2 tensor, got " + shape_string(shape_));
    }

    Eigen::Index rows() const { return static_cast<Eigen::Index>(shape_[0]); }
    Eigen::Index cols() const { return static_cast<Eigen::Index>(shape_[1]); }

    Eigen::Index flat2(std::size_t i, std::size_t j) const {
        return static_cast<Eigen::Index>(i * shape_[1] + j);
    }

    Eigen::Index flat(std::span<const std::size_t> index) const {
        if (index.size() != rank()) throw ShapeError("index rank does not match tensor rank");
        std::size_t offset = 0;
        for (std::size_t a = 0; a < rank(); ++a) {
            if (index[a] >= shape_[a]) throw ShapeError("index out of range");
            offset = offset * shape_[a] + index[a];
        }
        return static_cast<Eigen::Index>(offset);
    }

    Shape shape_;
    Storage data_;
};

using Tensor = BasicTensor<double>;

namespace detail {

inline void require(bool ok, const std::string& message) {
    if (!ok) throw ShapeError(message);
}

template <typename Scalar>
void require_same_shape(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                        " vs " + shape_string(b.shape()));
}

template <typename Scalar>
void require_rank(const BasicTensor<Scalar>& a, std::size_t rank, const char* op) {
    require(a.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                  shape_string(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
BasicTensor<Scalar> operator+(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    detail::require_same_shape(a, b, "add");
    BasicTensor<Scalar> out(a);
    out.array() += b.array();
    return out;
}

template <typename Scalar>
BasicTensor<Scalar> operator-(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    detail::require_same_shape(a, b, "sub");
    BasicTensor<Scalar> out(a);
    out.array() -= b.array();
    return out;
}

template <typename Scalar>
BasicTensor<Scalar> operator*(Scalar s, const BasicTensor<Scalar>& a) {
    BasicTensor<Scalar> out(a);
    out.array() *= s;
    return out;
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar s) {
    return s * a;
}

// Elementwise (Hadamard) product of equally shaped tensors.
template <typename Scalar>
BasicTensor<Scalar> hadamard(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    detail::require_same_shape(a, b, "hadamard");
    BasicTensor<Scalar> out(a);
    out.array() *= b.array();
    return out;
}

// Frobenius inner product.
template <typename Scalar>
Scalar dot(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    detail::require_same_shape(a, b, "dot");
    return (a.array() * b.array()).sum();
}

template <typename Scalar>
Scalar max_abs(const BasicTensor<Scalar>& a) {
    return a.array().abs().maxCoeff();
}

template <typename Scalar>
Scalar max_abs_diff(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    detail::require_same_shape(a, b, "max_abs_diff");
    return (a.array() - b.array()).abs().maxCoeff();
}

template <typename Scalar>
bool all_finite(const BasicTensor<Scalar>& a) {
    return a.array().isFinite().all();
}

// ---------------------------------------------------------------------------
// Linear and multilinear maps

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    detail::require(a.extent(1) == b.extent(0), "matmul: inner extents differ " + shape_string(a.shape()) +
                                                     " x " + shape_string(b.shape()));
    BasicTensor<Scalar> out({a.extent(0), b.extent(1)});
    out.matrix().noalias() = a.matrix() * b.matrix();
    return out;
}

template <typename Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& a, Shape shape) {
    return a.reshaped(std::move(shape));
}

template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& a) {
    detail::require_rank(a, 2, "transpose");
    BasicTensor<Scalar> out({a.extent(1), a.extent(0)});
    out.matrix() = a.matrix().transpose();
    return out;
}

// General axis permutation: out.extent(i) == a.extent(perm[i]).
template <typename Scalar>
BasicTensor<Scalar> permute(const BasicTensor<Scalar>& a, const std::vector<std::size_t>& perm) {
    const std::size_t r = a.rank();
    detail::require(perm.size() == r, "permute: permutation length differs from rank");
    std::vector<bool> seen(r, false);
    for (auto p : perm) {
        detail::require(p < r && !seen[p], "permute: not a permutation");
        seen[p] = true;
    }
    Shape shape(r);
    for (std::size_t i = 0; i < r; ++i) shape[i] = a.extent(perm[i]);
    BasicTensor<Scalar> out(shape);

    std::vector<std::size_t> src_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) src_stride[i - 1] = src_stride[i] * a.extent(i);

    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < r; ++i) src += idx[i] * src_stride[perm[i]];
        out[flat] = a[src];
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < shape[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

// Contract mode `mode` (1-based) of w against v; the result drops that mode.
template <typename Scalar>
BasicTensor<Scalar> mode_n_vector_product(const BasicTensor<Scalar>& w, const BasicTensor<Scalar>& v,
                                          std::size_t mode) {
    detail::require_rank(v, 1, "mode_n_vector_product");
    detail::require(mode >= 1 && mode <= w.rank(), "mode_n_vector_product: mode " + std::to_string(mode) +
                                                       " out of range for " + shape_string(w.shape()));
    const std::size_t axis = mode - 1;
    detail::require(w.extent(axis) == v.size(), "mode_n_vector_product: extent of mode " +
                                                    std::to_string(mode) + " differs from vector length");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= w.extent(i);
    for (std::size_t i = axis + 1; i < w.rank(); ++i) inner *= w.extent(i);
    const std::size_t n = w.extent(axis);

    Shape shape;
    for (std::size_t i = 0; i < w.rank(); ++i)
        if (i != axis) shape.push_back(w.extent(i));
    if (shape.empty()) shape.push_back(1);
    BasicTensor<Scalar> out(shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k) {
            const Scalar vk = v[k];
            const Scalar* src = w.data() + (o * n + k) * inner;
            Scalar* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * vk;
        }
    return out;
}

// Row-wise softmax, computed after subtracting each row's maximum.
template <typename Scalar>
BasicTensor<Scalar> softmax_rows(const BasicTensor<Scalar>& a) {
    detail::require_rank(a, 2, "softmax_rows");
    BasicTensor<Scalar> out(a);
    auto m = out.matrix();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        auto row = m.row(i);
        row.array() = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
    }
    return out;
}

// Column means of a [hw x c] matrix, as a [1 x c] row.
template <typename Scalar>
BasicTensor<Scalar> global_avg_pool(const BasicTensor<Scalar>& x) {
    detail::require_rank(x, 2, "global_avg_pool");
    BasicTensor<Scalar> out({1, x.extent(1)});
    out.matrix() = x.matrix().colwise().mean();
    return out;
}

// Stack m copies of a [1 x c] row.
template <typename Scalar>
BasicTensor<Scalar> replicate_rows(const BasicTensor<Scalar>& v, std::size_t m) {
    detail::require_rank(v, 2, "replicate_rows");
    detail::require(v.extent(0) == 1, "replicate_rows: expected a single row, got " + shape_string(v.shape()));
    detail::require(m >= 1, "replicate_rows: count must be positive");
    BasicTensor<Scalar> out({m, v.extent(1)});
    out.matrix() = v.matrix().replicate(static_cast<Eigen::Index>(m), 1);
    return out;
}

// The c x c x c super-diagonal unit tensor contracted with v along mode 3,
// which is diag(v).
template <typename Scalar>
BasicTensor<Scalar> superdiag_mode3(const BasicTensor<Scalar>& v) {
    detail::require_rank(v, 1, "superdiag_mode3");
    const std::size_t c = v.size();
    BasicTensor<Scalar> out({c, c});
    for (std::size_t i = 0; i < c; ++i) out(i, i) = v[i];
    return out;
}

// ---------------------------------------------------------------------------
// 2-D cross-correlation over [c x h x w] maps with square kernels.

struct ConvGeometry {
    std::size_t channels, height, width;
    std::size_t out_channels, kernel, stride, pad;

    std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

template <typename Scalar>
ConvGeometry conv_geometry(const Shape& x, const Shape& k, std::size_t stride, std::size_t pad) {
    detail::require(x.size() == 3, "conv2d: input must be [c x h x w], got " + shape_string(x));
    detail::require(k.size() == 4, "conv2d: kernel must be [c_out x c_in x k x k], got " + shape_string(k));
    detail::require(k[2] == k[3], "conv2d: kernel must be square");
    detail::require(k[1] == x[0], "conv2d: kernel expects " + std::to_string(k[1]) + " input channels, got " +
                                      std::to_string(x[0]));
    detail::require(stride >= 1, "conv2d: stride must be positive");
    detail::require(k[2] <= x[1] + 2 * pad && k[2] <= x[2] + 2 * pad, "conv2d: kernel larger than padded input");
    return {x[0], x[1], x[2], k[0], k[2], stride, pad};
}

namespace detail {

// [c*k*k x h'*w'] patch matrix.
template <typename Scalar>
typename BasicTensor<Scalar>::RowMatrix im2col(const BasicTensor<Scalar>& x, const ConvGeometry& g) {
    const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
    typename BasicTensor<Scalar>::RowMatrix cols =
        BasicTensor<Scalar>::RowMatrix::Zero(static_cast<Eigen::Index>(g.channels * k * k),
                                             static_cast<Eigen::Index>(oh * ow));
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
                const auto row = static_cast<Eigen::Index>((c * k + ki) * k + kj);
                for (std::size_t oi = 0; oi < oh; ++oi) {
                    const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(oi * g.stride + ki) -
                                             static_cast<std::ptrdiff_t>(g.pad);
                    if (i < 0 || i >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    for (std::size_t oj = 0; oj < ow; ++oj) {
                        const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(oj * g.stride + kj) -
                                                 static_cast<std::ptrdiff_t>(g.pad);
                        if (j < 0 || j >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        cols(row, static_cast<Eigen::Index>(oi * ow + oj)) =
                            x[(c * g.height + static_cast<std::size_t>(i)) * g.width + static_cast<std::size_t>(j)];
                    }
                }
            }
    return cols;
}

template <typename Scalar>
BasicTensor<Scalar> col2im(const typename BasicTensor<Scalar>::RowMatrix& cols, const ConvGeometry& g) {
    const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
    BasicTensor<Scalar> x({g.channels, g.height, g.width});
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
                const auto row = static_cast<Eigen::Index>((c * k + ki) * k + kj);
                for (std::size_t oi = 0; oi < oh; ++oi) {
                    const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(oi * g.stride + ki) -
                                             static_cast<std::ptrdiff_t>(g.pad);
                    if (i < 0 || i >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    for (std::size_t oj = 0; oj < ow; ++oj) {
                        const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(oj * g.stride + kj) -
                                                 static_cast<std::ptrdiff_t>(g.pad);
                        if (j < 0 || j >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        x[(c * g.height + static_cast<std::size_t>(i)) * g.width + static_cast<std::size_t>(j)] +=
                            cols(row, static_cast<Eigen::Index>(oi * ow + oj));
                    }
                }
            }
    return x;
}

template <typename Scalar>
typename BasicTensor<Scalar>::ConstMatrixMap kernel_matrix(const BasicTensor<Scalar>& kernel) {
    const auto rows = static_cast<Eigen::Index>(kernel.extent(0));
    return typename BasicTensor<Scalar>::ConstMatrixMap(kernel.data(), rows,
                                                       static_cast<Eigen::Index>(kernel.size()) / rows);
}

}  // namespace detail

template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& kernel, std::size_t stride,
                           std::size_t pad) {
    const ConvGeometry g = conv_geometry<Scalar>(x.shape(), kernel.shape(), stride, pad);
    const auto cols = detail::im2col(x, g);
    BasicTensor<Scalar> out({g.out_channels, g.out_height(), g.out_width()});
    typename BasicTensor<Scalar>::MatrixMap(out.data(), static_cast<Eigen::Index>(g.out_channels),
                                            static_cast<Eigen::Index>(g.out_height() * g.out_width()))
        .noalias() = detail::kernel_matrix(kernel) * cols;
    return out;
}

// Adjoint of conv2d with respect to its input.
template <typename Scalar>
BasicTensor<Scalar> conv2d_input_grad(const BasicTensor<Scalar>& upstream, const BasicTensor<Scalar>& kernel,
                                      const Shape& input_shape, std::size_t stride, std::size_t pad) {
    const ConvGeometry g = conv_geometry<Scalar>(input_shape, kernel.shape(), stride, pad);
    typename BasicTensor<Scalar>::ConstMatrixMap up(upstream.data(), static_cast<Eigen::Index>(g.out_channels),
                                                    static_cast<Eigen::Index>(g.out_height() * g.out_width()));
    typename BasicTensor<Scalar>::RowMatrix cols = detail::kernel_matrix(kernel).transpose() * up;
    return detail::col2im<Scalar>(cols, g);
}

// Adjoint of conv2d with respect to its kernel.
template <typename Scalar>
BasicTensor<Scalar> conv2d_kernel_grad(const BasicTensor<Scalar>& upstream, const BasicTensor<Scalar>& x,
                                       const Shape& kernel_shape, std::size_t stride, std::size_t pad) {
    const ConvGeometry g = conv_geometry<Scalar>(x.shape(), kernel_shape, stride, pad);
    typename BasicTensor<Scalar>::ConstMatrixMap up(upstream.data(), static_cast<Eigen::Index>(g.out_channels),
                                                    static_cast<Eigen::Index>(g.out_height() * g.out_width()));
    BasicTensor<Scalar> grad(kernel_shape);
    typename BasicTensor<Scalar>::MatrixMap(grad.data(), static_cast<Eigen::Index>(g.out_channels),
                                            static_cast<Eigen::Index>(grad.size() / g.out_channels))
        .noalias() = up * detail::im2col(x, g).transpose();
    return grad;
}

}  // namespace polynet

#endif  // POLYNET_TENSOR_HPP
