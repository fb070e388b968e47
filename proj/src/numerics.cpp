#include "sfpnet/numerics.hpp"
#include "sfpnet/rng.hpp"

#include <cmath>
#include <sstream>

namespace sfpnet {

std::string shape_string(Index rows, Index cols)
{
    std::ostringstream os;
    os << '[' << rows << 'x' << cols << ']';
    return os.str();
}

void require_shapes(bool ok, std::string_view op, std::string_view lhs_name, Index lhs_rows,
                    Index lhs_cols, std::string_view rhs_name, Index rhs_rows, Index rhs_cols)
{
    if (ok)
        return;
    std::ostringstream os;
    os << op << ": shape mismatch between " << lhs_name << ' ' << shape_string(lhs_rows, lhs_cols)
       << " and " << rhs_name << ' ' << shape_string(rhs_rows, rhs_cols);
    throw ShapeError(os.str());
}

// ---------------------------------------------------------------------------
// Layer norm
// ---------------------------------------------------------------------------

template <typename T>
Matrix<T> layer_norm_rows(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias,
                          LayerNormCache<T>* cache)
{
    if (x.cols() < 2)
        throw ShapeError("layer_norm: unsupported shape " + shape_string(x) +
                         ", need at least 2 features for a variance");
    require_shapes(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm", "x", x.rows(),
                   x.cols(), "gain", gain.rows(), gain.cols());
    require_shapes(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm", "x", x.rows(),
                   x.cols(), "bias", bias.rows(), bias.cols());

    const T inv_n = T(1) / static_cast<T>(x.cols());
    Matrix<T> normalized(x.rows(), x.cols());
    Matrix<T> inv_std(x.rows(), 1);
    for (Index r = 0; r < x.rows(); ++r) {
        const T mean = x.row(r).sum() * inv_n;
        normalized.row(r) = x.row(r).array() - mean;
        const T var = normalized.row(r).squaredNorm() * inv_n;
        const T s = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        inv_std(r, 0) = s;
        normalized.row(r) *= s;
    }
    Matrix<T> y = normalized.array().rowwise() * gain.row(0).array();
    y.rowwise() += bias.row(0);
    if (cache) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

template <typename T>
Matrix<T> layer_norm_rows_backward(const Matrix<T>& dy, const Matrix<T>& gain,
                                   const LayerNormCache<T>& cache, Matrix<T>& dgain,
                                   Matrix<T>& dbias)
{
    const auto& xhat = cache.normalized;
    dgain.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
    dbias.row(0) += dy.colwise().sum();

    const T inv_n = T(1) / static_cast<T>(dy.cols());
    Matrix<T> dxhat = dy.array().rowwise() * gain.row(0).array();
    Matrix<T> dx(dy.rows(), dy.cols());
    for (Index r = 0; r < dy.rows(); ++r) {
        const T sum_d = dxhat.row(r).sum();
        const T sum_dx = dxhat.row(r).dot(xhat.row(r));
        dx.row(r) = (dxhat.row(r).array() - inv_n * sum_d - xhat.row(r).array() * (inv_n * sum_dx)) *
                    cache.inv_std(r, 0);
    }
    return dx;
}

template <typename T>
RowVector<T> layer_norm(const RowVector<T>& v, const RowVector<T>& gain, const RowVector<T>& bias)
{
    Matrix<T> x = v;
    Matrix<T> g = gain;
    Matrix<T> b = bias;
    return layer_norm_rows<T>(x, g, b);
}

// ---------------------------------------------------------------------------
// ParamStore / Grads
// ---------------------------------------------------------------------------

template <typename T>
ParamId ParamStore<T>::add(const std::string& name, Matrix<T> value, bool freeze_first_row)
{
    if (index_.count(name))
        throw std::invalid_argument("parameter registered twice: " + name);
    if (freeze_first_row && value.rows() > 0)
        value.row(0).setZero();
    Entry e;
    e.name = name;
    e.m = Matrix<T>::Zero(value.rows(), value.cols());
    e.v = Matrix<T>::Zero(value.rows(), value.cols());
    e.value = std::move(value);
    e.freeze_first_row = freeze_first_row;
    entries_.push_back(std::move(e));
    index_.emplace(name, entries_.size() - 1);
    return ParamId{entries_.size() - 1};
}

template <typename T>
ParamId ParamStore<T>::id(std::string_view name) const
{
    auto it = index_.find(std::string(name));
    if (it == index_.end())
        throw LookupError("unregistered parameter: " + std::string(name));
    return ParamId{it->second};
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const
{
    return index_.count(std::string(name)) != 0;
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& e : entries_)
        n += static_cast<std::size_t>(e.value.size());
    return n;
}

template <typename T>
const typename ParamStore<T>::Entry& ParamStore<T>::entry(ParamId id) const
{
    if (id.index >= entries_.size())
        throw LookupError("invalid parameter id");
    return entries_[id.index];
}

template <typename T>
typename ParamStore<T>::Entry& ParamStore<T>::entry(ParamId id)
{
    if (id.index >= entries_.size())
        throw LookupError("invalid parameter id");
    return entries_[id.index];
}

template <typename T>
Matrix<T>& Grads<T>::operator[](ParamId id)
{
    auto& g = grads_.at(id.index);
    if (g.size() == 0) {
        const auto& v = store_->value(id);
        g = Matrix<T>::Zero(v.rows(), v.cols());
    }
    return g;
}

template <typename T>
void Grads<T>::set(std::string_view name, Matrix<T> g)
{
    const ParamId id = store_->id(name);
    const auto& v = store_->value(id);
    require_shapes(g.rows() == v.rows() && g.cols() == v.cols(), "grads.set",
                   "param " + std::string(name), v.rows(), v.cols(), "gradient", g.rows(),
                   g.cols());
    grads_.at(id.index) = std::move(g);
}

template <typename T>
const Matrix<T>* Grads<T>::find(ParamId id) const
{
    const auto& g = grads_.at(id.index);
    return g.size() == 0 ? nullptr : &g;
}

template <typename T>
void Grads<T>::zero()
{
    for (auto& g : grads_)
        if (g.size() != 0)
            g.setZero();
}

template <typename T>
double Grads<T>::squared_norm() const
{
    double s = 0.0;
    for (const auto& g : grads_)
        if (g.size() != 0)
            s += static_cast<double>(g.squaredNorm());
    return s;
}

template <typename T>
void adam_step(ParamStore<T>& params, const Grads<T>& grads, const AdamSettings& settings)
{
    if (!(settings.lr >= 0.0))
        throw std::invalid_argument("adam_step: learning rate must be non-negative");
    if (&grads.store() != &params)
        throw std::invalid_argument("adam_step: gradients belong to a different parameter store");

    params.step_ += 1;
    const double t = static_cast<double>(params.step_);
    const T b1 = static_cast<T>(settings.beta1);
    const T b2 = static_cast<T>(settings.beta2);
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(settings.beta1, t)));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(settings.beta2, t)));
    const T lr = static_cast<T>(settings.lr);
    const T eps = static_cast<T>(settings.eps);

    for (std::size_t i = 0; i < params.entries_.size(); ++i) {
        auto& e = params.entries_[i];
        const Matrix<T>* g = grads.find(ParamId{i});
        if (g) {
            require_shapes(g->rows() == e.value.rows() && g->cols() == e.value.cols(), "adam_step",
                           "param " + e.name, e.value.rows(), e.value.cols(), "gradient",
                           g->rows(), g->cols());
        }
        const Index first = e.freeze_first_row ? 1 : 0;
        const Index rows = e.value.rows() - first;
        if (rows <= 0)
            continue;
        auto w = e.value.middleRows(first, rows).array();
        auto m = e.m.middleRows(first, rows).array();
        auto v = e.v.middleRows(first, rows).array();
        if (g) {
            auto gg = g->middleRows(first, rows).array();
            m = b1 * m + (T(1) - b1) * gg;
            v = b2 * v + (T(1) - b2) * gg.square();
        } else {
            m = b1 * m;
            v = b2 * v;
        }
        w -= lr * (m * c1) / ((v * c2).sqrt() + eps);
    }
}

// ---------------------------------------------------------------------------

Matrix<double> xavier_init(Index rows, Index cols, std::uint64_t seed)
{
    if (rows < 1 || cols < 1)
        throw std::invalid_argument("xavier_init: rows and cols must be >= 1");
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Rng rng(seed);
    Matrix<double> w(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c)
            w(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
    return w;
}

template <typename T>
ParamId add_xavier(ParamStore<T>& store, const std::string& name, Index rows, Index cols,
                   std::uint64_t seed, bool freeze_first_row)
{
    return store.add(name, xavier_init(rows, cols, derive_seed(seed, name)).cast<T>(),
                     freeze_first_row);
}

std::vector<GradCheckEntry> grad_check(const LossFn& f, ParamStore<double>& params, double h,
                                       const ReferenceLossFn& reference)
{
    if (!(h >= 1e-7 && h <= 1e-3))
        throw std::invalid_argument("grad_check: step h must lie in [1e-7, 1e-3]");

    Grads<double> analytic(params);
    const double base = f(params, &analytic);
    if (!std::isfinite(base))
        throw NumericError("grad_check: non-finite loss at the unperturbed point");

    ParamStore<long double> wide;
    if (reference)
        wide = params.cast<long double>();

    std::vector<GradCheckEntry> out;
    out.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ParamId id{i};
        GradCheckEntry entry;
        entry.name = params.name(id);
        const Matrix<double>* g = analytic.find(id);
        Matrix<double>& w = params.value(id);
        for (Index r = 0; r < w.rows(); ++r) {
            for (Index c = 0; c < w.cols(); ++c) {
                long double plus = 0, minus = 0;
                if (reference) {
                    long double& x = wide.value(id)(r, c);
                    const long double saved = x;
                    x = saved + h;
                    plus = reference(wide);
                    x = saved - h;
                    minus = reference(wide);
                    x = saved;
                } else {
                    const double saved = w(r, c);
                    w(r, c) = saved + h;
                    plus = f(params, nullptr);
                    w(r, c) = saved - h;
                    minus = f(params, nullptr);
                    w(r, c) = saved;
                }
                if (!std::isfinite(plus) || !std::isfinite(minus)) {
                    std::ostringstream os;
                    os << "grad_check: non-finite loss while perturbing " << entry.name << '(' << r
                       << ',' << c << ')';
                    throw NumericError(os.str());
                }
                const double numeric = static_cast<double>((plus - minus) / (2.0L * h));
                const double a = g ? (*g)(r, c) : 0.0;
                const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
                const double rel = std::abs(a - numeric) / denom;
                if (rel > entry.max_rel_error || (r == 0 && c == 0)) {
                    entry.max_rel_error = rel;
                    entry.worst_row = r;
                    entry.worst_col = c;
                    entry.analytic = a;
                    entry.numeric = numeric;
                }
            }
        }
        out.push_back(std::move(entry));
    }
    return out;
}

#define SFPNET_INSTANTIATE(T)                                                                    \
    template class ParamStore<T>;                                                                \
    template class Grads<T>;                                                                     \
    template void adam_step<T>(ParamStore<T>&, const Grads<T>&, const AdamSettings&);           \
    template Matrix<T> layer_norm_rows<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,  \
                                          LayerNormCache<T>*);                                   \
    template Matrix<T> layer_norm_rows_backward<T>(const Matrix<T>&, const Matrix<T>&,           \
                                                   const LayerNormCache<T>&, Matrix<T>&,         \
                                                   Matrix<T>&);                                  \
    template RowVector<T> layer_norm<T>(const RowVector<T>&, const RowVector<T>&,                \
                                        const RowVector<T>&);                                    \
    template ParamId add_xavier<T>(ParamStore<T>&, const std::string&, Index, Index,             \
                                   std::uint64_t, bool);

SFPNET_INSTANTIATE(float)
SFPNET_INSTANTIATE(double)
SFPNET_INSTANTIATE(long double)

#undef SFPNET_INSTANTIATE

} // namespace sfpnet
