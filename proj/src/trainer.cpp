#include "sfpnet/trainer.hpp"

#include "sfpnet/rng.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>

namespace sfpnet {

void TrainConfig::validate() const
{
    if (!(lr >= 0) || !std::isfinite(lr))
        throw ConfigError("lr must be a finite value >= 0");
    if (!(lr_decay > 0))
        throw ConfigError("lr_decay must be > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps > 0))
        throw ConfigError("eps must be > 0");
    if (batch_size < 1)
        throw ConfigError("batch_size must be >= 1");
    if (epochs < 0)
        throw ConfigError("epochs must be >= 0");
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg)
{
    cfg.require_known({"lr", "lr_decay", "beta1", "beta2", "eps", "batch_size", "epochs", "seed",
                       "precision", "scenario_filter"});
    TrainConfig c;
    c.seed = default_seed();
    c.lr = cfg.get_double("lr", c.lr);
    c.lr_decay = cfg.get_double("lr_decay", c.lr_decay);
    c.beta1 = cfg.get_double("beta1", c.beta1);
    c.beta2 = cfg.get_double("beta2", c.beta2);
    c.eps = cfg.get_double("eps", c.eps);
    c.batch_size = static_cast<int>(cfg.get_int("batch_size", c.batch_size));
    c.epochs = static_cast<int>(cfg.get_int("epochs", c.epochs));
    c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<std::int64_t>(c.seed)));
    const std::string p = cfg.get_string("precision", "f32");
    if (p == "f32")
        c.precision = Precision::f32;
    else if (p == "f64")
        c.precision = Precision::f64;
    else
        cfg.fail("precision", "expected f32 or f64, got '" + p + "'");
    c.scenario_filter = static_cast<int>(cfg.get_int("scenario_filter", -1));
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigParseError(cfg.source(), 0, e.what());
    }
    return c;
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_pairs() const
{
    return {
        {"lr", exact_double(lr)},
        {"lr_decay", exact_double(lr_decay)},
        {"beta1", exact_double(beta1)},
        {"beta2", exact_double(beta2)},
        {"eps", exact_double(eps)},
        {"batch_size", std::to_string(batch_size)},
        {"epochs", std::to_string(epochs)},
        {"seed", std::to_string(seed)},
        {"precision", precision == Precision::f32 ? "f32" : "f64"},
        {"scenario_filter", std::to_string(scenario_filter)},
    };
}

std::uint64_t default_seed()
{
    if (const char* env = std::getenv("SFPNET_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end != env && *end == '\0')
            return v;
        throw std::invalid_argument(std::string("SFPNET_SEED is not an unsigned integer: '") + env + "'");
    }
    return 1;
}

template <typename T>
TrainLog train(Model<T>& model, const std::vector<Instance>& data, const TrainConfig& cfg)
{
    cfg.validate();
    if (data.empty())
        throw std::invalid_argument("train: no training instances");
    TrainLog log;
    Rng rng(derive_seed(cfg.seed, "shuffle"));
    std::vector<std::size_t> order(data.size());
    std::vector<const Instance*> batch;
    AdamSettings adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};
    Grads<T> grads(model.params());
    const auto bs = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);
        double sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            batch.clear();
            for (std::size_t i = start; i < end; ++i)
                batch.push_back(&data[order[i]]);
            if (epoch == 0 && start == 0)
                for (const auto* inst : batch)
                    log.first_batch.push_back(inst->timestamp);
            grads.zero();
            const double l = model.loss(model.params(), batch, &grads);
            if (!std::isfinite(l)) {
                std::ostringstream os;
                os << "non-finite loss at epoch " << epoch << ", batch " << n_batches
                   << " (gradient norm " << std::sqrt(grads.squared_norm()) << ")";
                throw NumericError(os.str());
            }
            adam_step(model.params(), grads, adam);
            ++log.steps;
            sum += l;
            ++n_batches;
        }
        log.epoch_loss.push_back(sum / static_cast<double>(n_batches));
        adam.lr *= cfg.lr_decay;
    }
    return log;
}

template <typename T>
EvalReport evaluate(const Model<T>& model, const std::vector<Instance>& test)
{
    const std::vector<double> scores = model.predict(test);
    std::vector<ScoredImpression> items;
    items.reserve(test.size());
    for (std::size_t i = 0; i < test.size(); ++i)
        items.push_back({scores[i], test[i].label, test[i].session_id, test[i].scenario_id});
    return make_report(items);
}

namespace {

template <typename T>
RunRecord run_typed(const ModelConfig& mc, const TrainConfig& tc, const Dataset& data,
                    const std::string& checkpoint, const std::vector<Instance>& test)
{
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord r;
    r.model_config = mc;
    r.train_config = tc;
    Model<T> model = Model<T>::build(mc, data.schema, tc.seed);
    r.param_count = model.param_count();
    if (tc.scenario_filter >= 0) {
        const auto subset = filter_scenario(data.train, tc.scenario_filter);
        r.log = train(model, subset, tc);
    } else {
        r.log = train(model, data.train, tc);
    }
    r.report = evaluate(model, test);
    if (!checkpoint.empty()) {
        std::map<std::string, std::string> extra;
        for (const auto& [k, v] : tc.to_pairs())
            extra["train." + k] = v;
        model.save(checkpoint, extra);
        r.checkpoint = checkpoint;
    }
    r.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

} // namespace

RunRecord run_training(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                       const Dataset& data, const std::string& checkpoint_path,
                       const std::vector<Instance>* test)
{
    const auto& t = test ? *test : data.test;
    if (train_cfg.precision == Precision::f64)
        return run_typed<double>(model_cfg, train_cfg, data, checkpoint_path, t);
    return run_typed<float>(model_cfg, train_cfg, data, checkpoint_path, t);
}

EvalReport evaluate_checkpoint(const std::string& path, const std::vector<Instance>& test)
{
    const CheckpointData ckpt = load_checkpoint(path);
    if (ckpt.scalar == "f64")
        return evaluate(Model<double>::from_checkpoint(ckpt), test);
    return evaluate(Model<float>::from_checkpoint(ckpt), test);
}

std::string loss_csv(const TrainLog& log)
{
    std::string out = "epoch,loss\n";
    for (std::size_t e = 0; e < log.epoch_loss.size(); ++e)
        out += std::to_string(e + 1) + "," + format_metric(log.epoch_loss[e]) + "\n";
    return out;
}

template TrainLog train<float>(Model<float>&, const std::vector<Instance>&, const TrainConfig&);
template TrainLog train<double>(Model<double>&, const std::vector<Instance>&, const TrainConfig&);
template EvalReport evaluate<float>(const Model<float>&, const std::vector<Instance>&);
template EvalReport evaluate<double>(const Model<double>&, const std::vector<Instance>&);

} // namespace sfpnet
