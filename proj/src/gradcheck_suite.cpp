#include "sfpnet/gradcheck_suite.hpp"

#include "sfpnet/metrics.hpp"
#include "sfpnet/rng.hpp"

#include <chrono>
#include <cstdio>

namespace sfpnet {

ModelConfig tiny_model_config()
{
    ModelConfig c;
    c.d = 4;
    c.L = 2;
    c.sdnn_hidden = {8, 4};
    c.att_hidden = 6;
    return c;
}

FeatureSchema tiny_schema()
{
    FeatureSchema s;
    s.context_fields = {{"user", 7}, {"segment", 4}};
    s.item = {"item", 12};
    s.attr = {"attr", 6};
    s.n_scenarios = 3;
    s.max_behaviors = 5;
    return s;
}

std::vector<Instance> tiny_batch(const FeatureSchema& schema, std::uint64_t seed)
{
    Rng rng(seed);
    const std::vector<int> lengths{5, 3, 2, 4, 0, 5, 2};
    std::vector<Instance> out;
    auto item = [&](std::int32_t id) {
        ItemRef ref;
        ref.item = id;
        const auto n_attrs = rng.below(3);
        for (std::uint64_t a = 0; a < n_attrs; ++a)
            ref.attrs.push_back(static_cast<std::int32_t>(rng.range(1, schema.attr.size - 1)));
        return ref;
    };
    for (std::size_t k = 0; k < lengths.size(); ++k) {
        Instance inst;
        for (const auto& f : schema.context_fields)
            inst.feature_ids.push_back(static_cast<std::int32_t>(rng.range(1, f.size - 1)));
        const auto ids = rng.sample_without_replacement(schema.item.size - 1, lengths[k]);
        for (int id : ids)
            inst.behaviors.push_back(item(id + 1));
        inst.target = item(static_cast<std::int32_t>(rng.range(1, schema.item.size - 1)));
        inst.scenario_id = static_cast<std::int32_t>(k % static_cast<std::size_t>(schema.n_scenarios));
        inst.label = static_cast<int>(k % 2);
        inst.session_id = "g" + std::to_string(k);
        inst.timestamp = static_cast<std::int64_t>(k);
        out.push_back(std::move(inst));
    }
    return out;
}

GradCheckReport run_model_gradcheck(const ModelConfig& cfg, const FeatureSchema& schema,
                                    std::uint64_t seed, double h, double tolerance)
{
    const auto t0 = std::chrono::steady_clock::now();
    Model<double> model = Model<double>::build(cfg, schema, seed);
    // Move every trainable entry off its initial value: zero biases would otherwise put
    // ReLU inputs exactly on the kink for all-zero feature slices.
    Rng jitter(derive_seed(seed, "jitter"));
    auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ParamId id{i};
        auto& w = params.value(id);
        for (Index r = params.freezes_first_row(id) ? 1 : 0; r < w.rows(); ++r)
            for (Index c = 0; c < w.cols(); ++c)
                w(r, c) += jitter.uniform(-0.1, 0.1);
    }
    const std::vector<Instance> batch = tiny_batch(schema, derive_seed(seed, "batch"));
    std::vector<const Instance*> ptrs;
    for (const auto& inst : batch)
        ptrs.push_back(&inst);

    const LossFn f = [&](const ParamStore<double>& p, Grads<double>* g) {
        return model.loss(p, ptrs, g);
    };
    // Same architecture in extended precision; only its forward pass is used.
    const Model<long double> wide = Model<long double>::build(cfg, schema, seed);
    const ReferenceLossFn ref = [&](const ParamStore<long double>& p) {
        return wide.objective(p, ptrs);
    };
    GradCheckReport r;
    r.tolerance = tolerance;
    r.entries = grad_check(f, model.params(), h, ref);
    for (const auto& e : r.entries)
        r.max_rel_error = std::max(r.max_rel_error, e.max_rel_error);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

std::string gradcheck_csv(const GradCheckReport& r)
{
    std::string out = "param,max_rel_error,analytic,numeric\n";
    char buf[128];
    for (const auto& e : r.entries) {
        std::snprintf(buf, sizeof buf, ",%.3e,%.6e,%.6e\n", e.max_rel_error, e.analytic, e.numeric);
        out += e.name + buf;
    }
    return out;
}

} // namespace sfpnet
