#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_map>
#include <vector>

namespace sfpnet {

using Index = Eigen::Index;

/// Dense row-major matrix. Batched activations keep one sample per row.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class LookupError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Inconsistent model / experiment configuration detected before any computation.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string shape_string(Index rows, Index cols);

template <typename A>
std::string shape_string(const Eigen::EigenBase<A>& m)
{
    return shape_string(m.rows(), m.cols());
}

/// Throws ShapeError naming both operands when `ok` is false.
void require_shapes(bool ok, std::string_view op, std::string_view lhs_name, Index lhs_rows,
                    Index lhs_cols, std::string_view rhs_name, Index rhs_rows, Index rhs_cols);

// ---------------------------------------------------------------------------
// Elementwise math
// ---------------------------------------------------------------------------

template <typename T>
constexpr T sigmoid_floor()
{
    return std::numeric_limits<T>::min();
}

template <typename T>
constexpr T sigmoid_ceiling()
{
    return T(1) - std::numeric_limits<T>::epsilon() / T(2);
}

template <typename T>
    requires std::is_floating_point_v<T>
T sigmoid(T x)
{
    const T s = T(1) / (T(1) + std::exp(-x));
    return std::min(std::max(s, sigmoid_floor<T>()), sigmoid_ceiling<T>());
}

/// Logistic function; saturated outputs are clamped so the result stays inside (0, 1).
template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& x)
{
    using T = typename Derived::Scalar;
    return (T(1) / (T(1) + (-x.array()).exp()))
        .max(sigmoid_floor<T>())
        .min(sigmoid_ceiling<T>())
        .matrix();
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x)
{
    using T = typename Derived::Scalar;
    return x.cwiseMax(T(0));
}

/// dL/dz for s = sigmoid(z), given dL/ds and s.
template <typename DerivedD, typename DerivedS>
auto sigmoid_backward(const Eigen::MatrixBase<DerivedD>& d_out, const Eigen::MatrixBase<DerivedS>& s)
{
    using T = typename DerivedS::Scalar;
    return (d_out.array() * s.array() * (T(1) - s.array())).matrix();
}

/// 1 where x > 0, else 0 (ReLU derivative, subgradient 0 at the kink).
template <typename Derived>
auto relu_mask(const Eigen::MatrixBase<Derived>& x)
{
    using T = typename Derived::Scalar;
    return (x.array() > T(0)).template cast<T>().matrix();
}

// ---------------------------------------------------------------------------
// Linear layer y = W x + b, batched over rows: Y = X W^T + 1 b.
// ---------------------------------------------------------------------------

template <typename T>
RowVector<T> linear(const RowVector<T>& x, const Matrix<T>& w, const RowVector<T>& b)
{
    require_shapes(w.cols() == x.cols(), "linear", "W", w.rows(), w.cols(), "x", x.rows(),
                   x.cols());
    require_shapes(b.cols() == w.rows(), "linear", "W", w.rows(), w.cols(), "b", b.rows(),
                   b.cols());
    return x * w.transpose() + b;
}

/// Y = X W^T + b for a batch X (one sample per row); `b` is a 1 x out matrix.
template <typename T, typename Derived>
void linear_rows(const Eigen::MatrixBase<Derived>& x, const Matrix<T>& w, const Matrix<T>& b,
                 Matrix<T>& y)
{
    require_shapes(w.cols() == x.cols(), "linear", "W", w.rows(), w.cols(), "X", x.rows(),
                   x.cols());
    require_shapes(b.rows() == 1 && b.cols() == w.rows(), "linear", "W", w.rows(), w.cols(),
                   "b", b.rows(), b.cols());
    y.resize(x.rows(), w.rows());
    y.noalias() = x * w.transpose();
    y.rowwise() += b.row(0);
}

/// Accumulates dW += dY^T X and db += colsum(dY).
template <typename T, typename DerivedX, typename DerivedY>
void linear_rows_param_grad(const Eigen::MatrixBase<DerivedX>& x,
                            const Eigen::MatrixBase<DerivedY>& dy, Matrix<T>& dw, Matrix<T>& db)
{
    dw.noalias() += dy.transpose() * x;
    db.row(0) += dy.colwise().sum();
}

// ---------------------------------------------------------------------------
// Layer normalization (population variance over each row).
// ---------------------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct LayerNormCache {
    Matrix<T> normalized; // (x - mean) / sqrt(var + eps), before gain/bias
    Matrix<T> inv_std;    // rows x 1
};

/// Row-wise layer norm: y = gain * (x - mean) / sqrt(var + eps) + bias.
template <typename T>
Matrix<T> layer_norm_rows(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias,
                          LayerNormCache<T>* cache = nullptr);

/// Backward of layer_norm_rows; accumulates gain/bias gradients and returns dX.
template <typename T>
Matrix<T> layer_norm_rows_backward(const Matrix<T>& dy, const Matrix<T>& gain,
                                   const LayerNormCache<T>& cache, Matrix<T>& dgain,
                                   Matrix<T>& dbias);

template <typename T>
RowVector<T> layer_norm(const RowVector<T>& v, const RowVector<T>& gain, const RowVector<T>& bias);

// ---------------------------------------------------------------------------
// Parameters, gradients, optimizer
// ---------------------------------------------------------------------------

struct ParamId {
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
    std::size_t index = npos;

    bool valid() const { return index != npos; }
    friend bool operator==(ParamId, ParamId) = default;
};

template <typename T>
class Grads;

struct AdamSettings {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
class ParamStore {
public:
    /// Registers a parameter. `freeze_first_row` marks row 0 as a frozen padding row.
    ParamId add(const std::string& name, Matrix<T> value, bool freeze_first_row = false);

    ParamId id(std::string_view name) const;
    bool contains(std::string_view name) const;

    const Matrix<T>& value(ParamId id) const { return entry(id).value; }
    Matrix<T>& value(ParamId id) { return entry(id).value; }
    const Matrix<T>& operator[](std::string_view name) const { return value(id(name)); }
    Matrix<T>& operator[](std::string_view name) { return value(id(name)); }

    const std::string& name(ParamId id) const { return entry(id).name; }
    bool freezes_first_row(ParamId id) const { return entry(id).freeze_first_row; }
    const Matrix<T>& first_moment(ParamId id) const { return entry(id).m; }
    const Matrix<T>& second_moment(ParamId id) const { return entry(id).v; }

    std::size_t size() const { return entries_.size(); }
    ParamId at_index(std::size_t i) const { return ParamId{i}; }
    std::size_t scalar_count() const;
    std::int64_t step() const { return step_; }
    void set_step(std::int64_t t) { step_ = t; }

    template <typename U>
    ParamStore<U> cast() const;

private:
    template <typename U>
    friend class ParamStore;
    template <typename U>
    friend void adam_step(ParamStore<U>&, const Grads<U>&, const AdamSettings&);

    struct Entry {
        std::string name;
        Matrix<T> value;
        Matrix<T> m;
        Matrix<T> v;
        bool freeze_first_row = false;
    };

    const Entry& entry(ParamId id) const;
    Entry& entry(ParamId id);

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::int64_t step_ = 0;
};

/// Gradient buffers keyed like a ParamStore. Absent entries read as zero.
template <typename T>
class Grads {
public:
    explicit Grads(const ParamStore<T>& store) : store_(&store), grads_(store.size()) {}

    /// Accumulation buffer for `id`, zero-initialized on first access.
    Matrix<T>& operator[](ParamId id);
    Matrix<T>& operator[](std::string_view name) { return (*this)[store_->id(name)]; }

    void set(std::string_view name, Matrix<T> g);
    const Matrix<T>* find(ParamId id) const;
    const Matrix<T>* find(std::string_view name) const { return find(store_->id(name)); }

    /// Zeroes every present buffer while keeping allocations.
    void zero();
    double squared_norm() const;
    const ParamStore<T>& store() const { return *store_; }

private:
    const ParamStore<T>* store_;
    std::vector<Matrix<T>> grads_; // 0x0 means absent
};

/// One bias-corrected Adam update over every registered parameter. Missing gradients are
/// treated as zero; frozen padding rows are left untouched. Increments the step counter.
template <typename T>
void adam_step(ParamStore<T>& params, const Grads<T>& grads, const AdamSettings& settings);

/// Uniform Xavier/Glorot initialization in [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))].
Matrix<double> xavier_init(Index rows, Index cols, std::uint64_t seed);

/// Registers a Xavier-initialized parameter whose stream is derived from (seed, name), so a
/// parameter's initial value does not depend on which other parameters exist.
template <typename T>
ParamId add_xavier(ParamStore<T>& store, const std::string& name, Index rows, Index cols,
                   std::uint64_t seed, bool freeze_first_row = false);

template <typename T>
ParamId add_constant(ParamStore<T>& store, const std::string& name, Index rows, Index cols,
                     T value)
{
    return store.add(name, Matrix<T>::Constant(rows, cols, value));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (64-bit only)
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    Index worst_row = 0;
    Index worst_col = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Loss callback: returns the loss and, when `grads` is non-null, accumulates the analytic
/// gradient into it.
using LossFn = std::function<double(const ParamStore<double>&, Grads<double>*)>;

/// Forward-only loss evaluated in extended precision, used for the difference quotients.
using ReferenceLossFn = std::function<long double(const ParamStore<long double>&)>;

/// Compares analytic gradients against central differences for every parameter entry.
/// Relative error uses the denominator max(|analytic|, |numeric|, 1e-8). With `reference`
/// the differences are taken on an extended-precision copy of `params`, which keeps the
/// roundoff of the quotient well below the 1e-8 floor.
std::vector<GradCheckEntry> grad_check(const LossFn& f, ParamStore<double>& params, double h,
                                       const ReferenceLossFn& reference = {});

// ---------------------------------------------------------------------------
// Checkpoints (format documented in docs/checkpoint_format.md)
// ---------------------------------------------------------------------------

struct CheckpointData {
    std::string scalar; // "f64" or "f32"
    std::map<std::string, std::string> meta;
    ParamStore<double> params;
};

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params,
                     const std::map<std::string, std::string>& meta);

CheckpointData load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------

template <typename T>
template <typename U>
ParamStore<U> ParamStore<T>::cast() const
{
    ParamStore<U> out;
    for (const auto& e : entries_) {
        const ParamId id = out.add(e.name, e.value.template cast<U>(), e.freeze_first_row);
        auto& oe = out.entries_[id.index];
        oe.m = e.m.template cast<U>();
        oe.v = e.v.template cast<U>();
    }
    out.step_ = step_;
    return out;
}

} // namespace sfpnet
