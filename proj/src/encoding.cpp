#include "sfpnet/encoding.hpp"

#include <sstream>

namespace sfpnet {

void Vocab::check(std::int32_t id) const
{
    if (id < 0 || id >= size) {
        std::ostringstream os;
        os << "field '" << field << "': id " << id << " outside vocabulary [0, " << size << ')';
        throw VocabError(os.str());
    }
}

void FeatureSchema::validate(const Instance& inst) const
{
    if (inst.feature_ids.size() != context_fields.size()) {
        std::ostringstream os;
        os << "instance has " << inst.feature_ids.size() << " context features, schema expects "
           << context_fields.size();
        throw std::invalid_argument(os.str());
    }
    for (std::size_t i = 0; i < context_fields.size(); ++i)
        context_fields[i].check(inst.feature_ids[i]);
    if (static_cast<std::int32_t>(inst.behaviors.size()) > max_behaviors) {
        std::ostringstream os;
        os << "instance has " << inst.behaviors.size() << " behaviors, maximum is "
           << max_behaviors;
        throw std::invalid_argument(os.str());
    }
    auto check_item = [&](const ItemRef& ref) {
        item.check(ref.item);
        for (auto a : ref.attrs)
            attr.check(a);
    };
    for (const auto& b : inst.behaviors)
        check_item(b);
    check_item(inst.target);
    if (inst.scenario_id < 0 || inst.scenario_id >= n_scenarios) {
        std::ostringstream os;
        os << "scenario id " << inst.scenario_id << " outside [0, " << n_scenarios << ')';
        throw VocabError(os.str());
    }
    if (inst.label != 0 && inst.label != 1)
        throw std::invalid_argument("label must be 0 or 1");
}

bool operator==(const FeatureSchema& a, const FeatureSchema& b)
{
    if (a.context_fields.size() != b.context_fields.size())
        return false;
    for (std::size_t i = 0; i < a.context_fields.size(); ++i)
        if (a.context_fields[i].field != b.context_fields[i].field ||
            a.context_fields[i].size != b.context_fields[i].size)
            return false;
    return a.item.size == b.item.size && a.attr.size == b.attr.size &&
           a.n_scenarios == b.n_scenarios && a.max_behaviors == b.max_behaviors;
}

template <typename T>
EncodedBatch<T> EncodedBatch<T>::from_instance(const EncodedInstance<T>& e)
{
    EncodedBatch<T> b;
    b.size = 1;
    b.n_fields = e.features.rows();
    b.max_seq = e.behaviors.rows();
    b.dim = e.features.cols();
    b.features = Eigen::Map<const Matrix<T>>(e.features.data(), 1, e.features.size());
    b.behaviors = e.behaviors;
    b.seq_len = {e.seq_len};
    b.target = e.target;
    b.scenario = e.scenario;
    return b;
}

template <typename T>
EmbeddingTables<T> EmbeddingTables<T>::register_tables(ParamStore<T>& store,
                                                       const FeatureSchema& schema, Index dim,
                                                       std::uint64_t seed)
{
    if (dim < 1)
        throw std::invalid_argument("embedding dimension must be >= 1");
    EmbeddingTables t;
    t.schema_ = schema;
    t.dim_ = dim;
    for (const auto& f : schema.context_fields)
        t.context_.push_back(add_xavier(store, "emb/" + f.field, f.size, dim, seed, true));
    t.item_ = add_xavier(store, "emb/item", schema.item.size, dim, seed, true);
    t.attr_ = add_xavier(store, "emb/attr", schema.attr.size, dim, seed, true);
    t.scenario_ = add_xavier(store, "emb/scenario", schema.n_scenarios + 1, dim, seed, true);
    return t;
}

template <typename T>
template <typename Row>
void EmbeddingTables<T>::write_item(const ParamStore<T>& store, const ItemRef& ref,
                                    Row&& out) const
{
    out = store.value(item_).row(ref.item);
    if (!ref.attrs.empty()) {
        const auto& attrs = store.value(attr_);
        RowVector<T> acc = RowVector<T>::Zero(dim_);
        for (auto a : ref.attrs)
            acc += attrs.row(a);
        out += acc / static_cast<T>(ref.attrs.size());
    }
}

template <typename T>
template <typename Row>
void EmbeddingTables<T>::scatter_item(const ItemRef& ref, const Row& g, Matrix<T>& item_grad,
                                      Matrix<T>& attr_grad) const
{
    item_grad.row(ref.item) += g;
    if (!ref.attrs.empty()) {
        const T scale = T(1) / static_cast<T>(ref.attrs.size());
        for (auto a : ref.attrs)
            attr_grad.row(a) += scale * g;
    }
}

template <typename T>
RowVector<T> EmbeddingTables<T>::embed_behavior(const ParamStore<T>& store,
                                                const ItemRef& ref) const
{
    schema_.item.check(ref.item);
    for (auto a : ref.attrs)
        schema_.attr.check(a);
    RowVector<T> out(dim_);
    write_item(store, ref, out);
    return out;
}

template <typename T>
EncodedInstance<T> EmbeddingTables<T>::encode(const ParamStore<T>& store,
                                              const Instance& inst) const
{
    const Instance* one[] = {&inst};
    const EncodedBatch<T> b = encode_batch(store, one);
    EncodedInstance<T> e;
    e.features = Eigen::Map<const Matrix<T>>(b.features.data(), b.n_fields, dim_);
    e.behaviors = b.behaviors;
    e.seq_len = b.seq_len[0];
    e.target = b.target.row(0);
    e.scenario = b.scenario.row(0);
    return e;
}

template <typename T>
EncodedBatch<T> EmbeddingTables<T>::encode_batch(const ParamStore<T>& store,
                                                 std::span<const Instance* const> batch) const
{
    const Index B = static_cast<Index>(batch.size());
    const Index n = schema_.feature_rows();
    const Index nb = schema_.max_behaviors;
    const Index d = dim_;

    EncodedBatch<T> out;
    out.size = B;
    out.n_fields = n;
    out.max_seq = nb;
    out.dim = d;
    out.features.setZero(B, n * d);
    out.behaviors.setZero(B * nb, d);
    out.target.setZero(B, d);
    out.scenario.setZero(B, d);
    out.seq_len.resize(static_cast<std::size_t>(B));

    const auto& scen = store.value(scenario_);
    for (Index k = 0; k < B; ++k) {
        const Instance& inst = *batch[static_cast<std::size_t>(k)];
        schema_.validate(inst);
        for (std::size_t f = 0; f < context_.size(); ++f)
            out.features.row(k).segment(static_cast<Index>(f) * d, d) =
                store.value(context_[f]).row(inst.feature_ids[f]);
        write_item(store, inst.target, out.target.row(k));
        out.features.row(k).segment((n - 1) * d, d) = out.target.row(k);
        const Index len = static_cast<Index>(inst.behaviors.size());
        out.seq_len[static_cast<std::size_t>(k)] = len;
        for (Index r = 0; r < len; ++r)
            write_item(store, inst.behaviors[static_cast<std::size_t>(r)],
                       out.behaviors.row(k * nb + r));
        out.scenario.row(k) = scen.row(inst.scenario_id + 1);
    }
    return out;
}

template <typename T>
void EmbeddingTables<T>::backward(std::span<const Instance* const> batch,
                                  const EncodedBatchGrad<T>& grad, Grads<T>& grads) const
{
    const Index n = schema_.feature_rows();
    const Index nb = schema_.max_behaviors;
    const Index d = dim_;

    Matrix<T>& item_grad = grads[item_];
    Matrix<T>& attr_grad = grads[attr_];
    Matrix<T>& scen_grad = grads[scenario_];
    std::vector<Matrix<T>*> ctx_grads;
    for (auto id : context_)
        ctx_grads.push_back(&grads[id]);

    for (std::size_t k = 0; k < batch.size(); ++k) {
        const Instance& inst = *batch[k];
        const Index row = static_cast<Index>(k);
        for (std::size_t f = 0; f < context_.size(); ++f)
            ctx_grads[f]->row(inst.feature_ids[f]) +=
                grad.features.row(row).segment(static_cast<Index>(f) * d, d);
        RowVector<T> target_grad = grad.features.row(row).segment((n - 1) * d, d);
        if (grad.target.size() != 0)
            target_grad += grad.target.row(row);
        scatter_item(inst.target, target_grad, item_grad, attr_grad);
        for (std::size_t r = 0; r < inst.behaviors.size(); ++r)
            scatter_item(inst.behaviors[r], grad.behaviors.row(row * nb + static_cast<Index>(r)),
                         item_grad, attr_grad);
        if (grad.scenario.size() != 0)
            scen_grad.row(inst.scenario_id + 1) += grad.scenario.row(row);
    }
    // padding rows never learn
    item_grad.row(0).setZero();
    attr_grad.row(0).setZero();
    scen_grad.row(0).setZero();
    for (auto* g : ctx_grads)
        g->row(0).setZero();
}

template struct EncodedBatch<float>;
template struct EncodedBatch<double>;
template class EmbeddingTables<float>;
template class EmbeddingTables<double>;
template struct EncodedBatch<long double>;
template class EmbeddingTables<long double>;

} // namespace sfpnet
