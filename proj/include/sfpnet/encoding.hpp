#pragma once

#include "sfpnet/numerics.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sfpnet {

class VocabError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Id space of one categorical field. Id 0 is reserved for padding / unknown.
struct Vocab {
    std::string field;
    std::int32_t size = 1;

    void check(std::int32_t id) const;
};

struct ItemRef {
    std::int32_t item = 0;
    std::vector<std::int32_t> attrs;

    friend bool operator==(const ItemRef&, const ItemRef&) = default;
};

/// One impression.
struct Instance {
    std::vector<std::int32_t> feature_ids; // one id per context field (user first)
    std::vector<ItemRef> behaviors;        // oldest first
    ItemRef target;
    std::int32_t scenario_id = 0;
    int label = 0;
    std::string session_id;
    std::int64_t timestamp = 0;

    friend bool operator==(const Instance&, const Instance&) = default;
};

/// Field layout shared by a dataset and the models trained on it.
///
/// The encoded feature matrix has one row per context field followed by one row for the
/// target item, so the number of non-sequence feature rows is `context_fields.size() + 1`.
struct FeatureSchema {
    std::vector<Vocab> context_fields;
    Vocab item{"item", 1};
    Vocab attr{"attr", 1};
    std::int32_t n_scenarios = 1;
    std::int32_t max_behaviors = 20;

    Index feature_rows() const { return static_cast<Index>(context_fields.size()) + 1; }

    /// Throws std::invalid_argument / VocabError when `inst` violates the schema.
    void validate(const Instance& inst) const;

    friend bool operator==(const FeatureSchema& a, const FeatureSchema& b);
};

template <typename T>
struct EncodedInstance {
    Matrix<T> features;  // feature_rows x d
    Matrix<T> behaviors; // max_behaviors x d, rows >= seq_len are zero
    Index seq_len = 0;
    RowVector<T> target;
    RowVector<T> scenario;
};

/// A batch in flattened form: one instance per row of `features`, `target`, `scenario`;
/// behaviors of instance k occupy rows [k * max_seq, (k + 1) * max_seq).
template <typename T>
struct EncodedBatch {
    Index size = 0;
    Index n_fields = 0;
    Index max_seq = 0;
    Index dim = 0;
    Matrix<T> features;  // B x (n_fields * d)
    Matrix<T> behaviors; // (B * max_seq) x d
    std::vector<Index> seq_len;
    Matrix<T> target;   // B x d
    Matrix<T> scenario; // B x d

    static EncodedBatch from_instance(const EncodedInstance<T>& e);
};

template <typename T>
struct EncodedBatchGrad {
    Matrix<T> features;
    Matrix<T> behaviors;
    Matrix<T> target;
    Matrix<T> scenario;
};

/// One embedding table per field; row 0 of every table is a frozen zero padding row.
template <typename T>
class EmbeddingTables {
public:
    EmbeddingTables() = default;

    /// Registers tables named "emb/<field>", "emb/item", "emb/attr" and "emb/scenario".
    static EmbeddingTables register_tables(ParamStore<T>& store, const FeatureSchema& schema,
                                           Index dim, std::uint64_t seed);

    Index dim() const { return dim_; }
    const FeatureSchema& schema() const { return schema_; }

    /// Item embedding plus the elementwise mean of its attribute embeddings.
    RowVector<T> embed_behavior(const ParamStore<T>& store, const ItemRef& ref) const;

    EncodedInstance<T> encode(const ParamStore<T>& store, const Instance& inst) const;
    EncodedBatch<T> encode_batch(const ParamStore<T>& store,
                                 std::span<const Instance* const> batch) const;

    /// Scatters gradients of an encoded batch back into the embedding tables.
    void backward(std::span<const Instance* const> batch, const EncodedBatchGrad<T>& grad,
                  Grads<T>& grads) const;

private:
    template <typename Row>
    void write_item(const ParamStore<T>& store, const ItemRef& ref, Row&& out) const;
    template <typename Row>
    void scatter_item(const ItemRef& ref, const Row& g, Matrix<T>& item_grad,
                      Matrix<T>& attr_grad) const;

    FeatureSchema schema_;
    Index dim_ = 0;
    std::vector<ParamId> context_;
    ParamId item_;
    ParamId attr_;
    ParamId scenario_;
};

} // namespace sfpnet
