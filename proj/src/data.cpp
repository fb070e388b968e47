#include "sfpnet/data.hpp"

#include "sfpnet/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace sfpnet {

// ---------------------------------------------------------------------------
// SynthConfig
// ---------------------------------------------------------------------------

void SynthConfig::validate() const
{
    auto need = [](bool ok, const std::string& what) {
        if (!ok)
            throw ConfigError("synthetic config: " + what);
    };
    need(n_users >= 1, "n_users must be >= 1");
    need(n_topics >= 1, "n_topics must be >= 1");
    need(n_items >= n_topics, "n_items must be >= n_topics");
    need(n_scenarios >= 1, "n_scenarios must be >= 1");
    need(topics_per_scenario >= 1 && topics_per_scenario <= n_topics,
         "topics_per_scenario must be in [1, n_topics]");
    need(scenario_topic_stride >= 0, "scenario_topic_stride must be >= 0");
    need(history_min >= 0 && history_max >= history_min, "history range must satisfy 0 <= min <= max");
    need(history_max >= 1, "history_max must be >= 1");
    need(impressions_per_user_scenario >= 1, "impressions_per_user_scenario must be >= 1");
    need(latent_dim >= 1, "latent_dim must be >= 1");
    need(n_brands >= 1, "n_brands must be >= 1");
    need(sigma_noise >= 0, "sigma_noise must be >= 0");
    need(label_noise >= 0 && label_noise <= 1, "label_noise must be in [0, 1]");
    need(preferred_target_prob >= 0 && preferred_target_prob <= 1,
         "preferred_target_prob must be in [0, 1]");
    need(!base_rates.empty(), "base_rates must not be empty");
    need(test_fraction > 0 && test_fraction < 1, "test_fraction must be in (0, 1)");
    need(scenario_scale.empty() || static_cast<std::int32_t>(scenario_scale.size()) == n_scenarios,
         "scenario_scale needs one entry per scenario");
    for (double s : scenario_scale)
        need(s > 0 && s <= 1, "scenario_scale entries must be in (0, 1]");

    std::vector<bool> covered(static_cast<std::size_t>(n_topics), false);
    for (std::int32_t m = 0; m < n_scenarios; ++m)
        for (auto t : scenario_topics(m))
            covered[static_cast<std::size_t>(t)] = true;
    need(std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }),
         "scenario topic sets must cover every topic");
}

std::vector<std::int32_t> SynthConfig::scenario_topics(std::int32_t scenario) const
{
    const std::int32_t stride = scenario_topic_stride > 0 ? scenario_topic_stride : topics_per_scenario;
    std::vector<std::int32_t> out;
    for (std::int32_t j = 0; j < topics_per_scenario; ++j)
        out.push_back((scenario * stride + j) % n_topics);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

double SynthConfig::base_rate(std::int32_t scenario) const
{
    return base_rates[static_cast<std::size_t>(scenario) % base_rates.size()];
}

double SynthConfig::scale(std::int32_t scenario) const
{
    return scenario_scale.empty() ? 1.0 : scenario_scale[static_cast<std::size_t>(scenario)];
}

SynthConfig SynthConfig::from_config(const KeyValueConfig& cfg)
{
    cfg.require_known({"n_users", "n_items", "n_topics", "n_scenarios", "topics_per_scenario",
                       "scenario_topic_stride", "history_min", "history_max",
                       "impressions_per_user_scenario", "latent_dim", "n_brands", "sigma_noise",
                       "alpha", "label_noise", "preferred_target_prob", "base_rates",
                       "scenario_scale", "test_fraction", "seed"});
    SynthConfig c;
    auto i32 = [&](const char* key, std::int32_t fallback) {
        return static_cast<std::int32_t>(cfg.get_int(key, fallback));
    };
    c.n_users = i32("n_users", c.n_users);
    c.n_items = i32("n_items", c.n_items);
    c.n_topics = i32("n_topics", c.n_topics);
    c.n_scenarios = i32("n_scenarios", c.n_scenarios);
    c.topics_per_scenario = i32("topics_per_scenario", c.topics_per_scenario);
    c.scenario_topic_stride = i32("scenario_topic_stride", c.scenario_topic_stride);
    c.history_min = i32("history_min", c.history_min);
    c.history_max = i32("history_max", c.history_max);
    c.impressions_per_user_scenario =
        i32("impressions_per_user_scenario", c.impressions_per_user_scenario);
    c.latent_dim = i32("latent_dim", c.latent_dim);
    c.n_brands = i32("n_brands", c.n_brands);
    c.sigma_noise = cfg.get_double("sigma_noise", c.sigma_noise);
    c.alpha = cfg.get_double("alpha", c.alpha);
    c.label_noise = cfg.get_double("label_noise", c.label_noise);
    c.preferred_target_prob = cfg.get_double("preferred_target_prob", c.preferred_target_prob);
    c.base_rates = cfg.get_double_list("base_rates", c.base_rates);
    c.scenario_scale = cfg.get_double_list("scenario_scale", c.scenario_scale);
    c.test_fraction = cfg.get_double("test_fraction", c.test_fraction);
    c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<std::int64_t>(c.seed)));
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigParseError(cfg.source(), 0, e.what());
    }
    return c;
}

std::string SynthConfig::to_text() const
{
    return to_config_text({
        {"n_users", std::to_string(n_users)},
        {"n_items", std::to_string(n_items)},
        {"n_topics", std::to_string(n_topics)},
        {"n_scenarios", std::to_string(n_scenarios)},
        {"topics_per_scenario", std::to_string(topics_per_scenario)},
        {"scenario_topic_stride", std::to_string(scenario_topic_stride)},
        {"history_min", std::to_string(history_min)},
        {"history_max", std::to_string(history_max)},
        {"impressions_per_user_scenario", std::to_string(impressions_per_user_scenario)},
        {"latent_dim", std::to_string(latent_dim)},
        {"n_brands", std::to_string(n_brands)},
        {"sigma_noise", exact_double(sigma_noise)},
        {"alpha", exact_double(alpha)},
        {"label_noise", exact_double(label_noise)},
        {"preferred_target_prob", exact_double(preferred_target_prob)},
        {"base_rates", join_doubles(base_rates)},
        {"scenario_scale", join_doubles(scenario_scale)},
        {"test_fraction", exact_double(test_fraction)},
        {"seed", std::to_string(seed)},
    });
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b)
{
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0)
        return 0;
    return dot / std::sqrt(na * nb);
}

double logistic(double x)
{
    return 1.0 / (1.0 + std::exp(-x));
}

} // namespace

double GroundTruth::relevance(const Instance& inst) const
{
    const auto& rm = scenario_topic_set.at(static_cast<std::size_t>(inst.scenario_id));
    const auto& q = item_latent.at(static_cast<std::size_t>(inst.target.item));
    double sum = 0;
    int count = 0;
    for (const auto& b : inst.behaviors) {
        const auto topic = item_topic.at(static_cast<std::size_t>(b.item));
        if (std::find(rm.begin(), rm.end(), topic) == rm.end())
            continue;
        sum += cosine(q, item_latent[static_cast<std::size_t>(b.item)]);
        ++count;
    }
    return count ? sum / count : 0.0;
}

double GroundTruth::click_probability(const Instance& inst) const
{
    return logistic(config.alpha * relevance(inst) + config.base_rate(inst.scenario_id));
}

FeatureSchema synthetic_schema(const SynthConfig& c)
{
    FeatureSchema s;
    s.context_fields = {{"user", c.n_users + 1}, {"segment", c.n_topics + 1}};
    s.item = {"item", c.n_items + 1};
    s.attr = {"attr", c.n_topics + c.n_brands + 1};
    s.n_scenarios = c.n_scenarios;
    s.max_behaviors = c.history_max;
    return s;
}

GeneratedData generate(const SynthConfig& c)
{
    c.validate();
    GeneratedData out;
    GroundTruth& gt = out.truth;
    gt.config = c;
    out.data.schema = synthetic_schema(c);

    const auto T = static_cast<std::size_t>(c.n_topics);
    const auto D = static_cast<std::size_t>(c.latent_dim);

    Rng topic_rng(derive_seed(c.seed, "topics"));
    gt.topic_vectors.assign(T, std::vector<double>(D));
    for (auto& v : gt.topic_vectors) {
        double norm = 0;
        while (norm == 0) {
            for (auto& x : v)
                x = topic_rng.normal();
            norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        }
        for (auto& x : v)
            x /= norm;
    }

    Rng item_rng(derive_seed(c.seed, "items"));
    const auto n_items = static_cast<std::size_t>(c.n_items);
    gt.item_topic.assign(n_items + 1, -1);
    gt.item_latent.assign(n_items + 1, std::vector<double>(D, 0.0));
    std::vector<std::vector<ItemRef>> items_by_topic(T);
    std::vector<ItemRef> item_refs(n_items + 1);
    for (std::size_t i = 1; i <= n_items; ++i) {
        // the first n_topics items seed every topic so none is empty
        const auto topic = i <= T ? static_cast<std::int32_t>(i - 1)
                                  : static_cast<std::int32_t>(item_rng.below(T));
        gt.item_topic[i] = topic;
        auto& lat = gt.item_latent[i];
        for (std::size_t k = 0; k < D; ++k)
            lat[k] = gt.topic_vectors[static_cast<std::size_t>(topic)][k] +
                     c.sigma_noise * item_rng.normal();
        const auto brand = static_cast<std::int32_t>(item_rng.below(static_cast<std::uint64_t>(c.n_brands)));
        ItemRef ref{static_cast<std::int32_t>(i), {topic + 1, c.n_topics + 1 + brand}};
        item_refs[i] = ref;
        items_by_topic[static_cast<std::size_t>(topic)].push_back(ref);
    }

    for (std::int32_t m = 0; m < c.n_scenarios; ++m)
        gt.scenario_topic_set.push_back(c.scenario_topics(m));

    auto pick_item = [&](Rng& rng, std::int32_t topic) {
        const auto& pool = items_by_topic[static_cast<std::size_t>(topic)];
        return pool[rng.below(pool.size())];
    };

    std::vector<Instance> all;
    std::map<std::pair<std::int32_t, std::string>, std::vector<std::size_t>> sessions;
    gt.user_topics.assign(static_cast<std::size_t>(c.n_users) + 1, {});
    std::int64_t clock = 0;
    for (std::int32_t u = 1; u <= c.n_users; ++u) {
        Rng rng(derive_seed(c.seed, static_cast<std::uint64_t>(u)));
        const auto n_pref = static_cast<int>(rng.range(2, 4));
        auto pref = rng.sample_without_replacement(c.n_topics, std::min(n_pref, c.n_topics));
        auto& topics = gt.user_topics[static_cast<std::size_t>(u)];
        topics.assign(pref.begin(), pref.end());
        const std::int32_t segment = topics.front() + 1;

        std::vector<ItemRef> history;
        const auto len = rng.range(c.history_min, c.history_max);
        for (std::int64_t k = 0; k < len; ++k)
            history.push_back(pick_item(rng, topics[rng.below(topics.size())]));

        for (std::int32_t m = 0; m < c.n_scenarios; ++m) {
            const double scale = c.scale(m);
            if (scale < 1.0 && !rng.bernoulli(scale))
                continue;
            const std::string session = "u" + std::to_string(u) + "-s" + std::to_string(m);
            for (std::int32_t k = 0; k < c.impressions_per_user_scenario; ++k) {
                Instance inst;
                inst.feature_ids = {u, segment};
                inst.behaviors = history;
                const std::int32_t topic =
                    rng.bernoulli(c.preferred_target_prob)
                        ? topics[rng.below(topics.size())]
                        : static_cast<std::int32_t>(rng.below(T));
                inst.target = pick_item(rng, topic);
                inst.scenario_id = m;
                inst.session_id = session;
                inst.timestamp = clock++;
                int label = rng.bernoulli(gt.click_probability(inst)) ? 1 : 0;
                if (rng.bernoulli(c.label_noise))
                    label = 1 - label;
                inst.label = label;
                sessions[{m, session}].push_back(all.size());
                all.push_back(std::move(inst));
            }
        }
    }

    // hold out a fixed fraction of each scenario's sessions
    Rng split_rng(derive_seed(c.seed, "split"));
    std::vector<bool> is_test(all.size(), false);
    for (std::int32_t m = 0; m < c.n_scenarios; ++m) {
        std::vector<const std::vector<std::size_t>*> group;
        for (auto it = sessions.lower_bound({m, ""}); it != sessions.end() && it->first.first == m; ++it)
            group.push_back(&it->second);
        split_rng.shuffle(group);
        const auto n_test = static_cast<std::size_t>(
            std::llround(c.test_fraction * static_cast<double>(group.size())));
        for (std::size_t g = 0; g < n_test && g < group.size(); ++g)
            for (auto idx : *group[g])
                is_test[idx] = true;
    }
    for (std::size_t i = 0; i < all.size(); ++i)
        (is_test[i] ? out.data.test : out.data.train).push_back(std::move(all[i]));
    return out;
}

std::vector<Instance> filter_scenario(const std::vector<Instance>& data, std::int32_t scenario)
{
    std::vector<Instance> out;
    for (const auto& inst : data)
        if (inst.scenario_id == scenario)
            out.push_back(inst);
    return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

DataParseError::DataParseError(const std::string& path, int line, int column,
                               const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " +
                         what),
      line_(line), column_(column)
{
}

namespace {

std::vector<std::string> header_columns(const FeatureSchema& schema)
{
    if (schema.context_fields.empty())
        throw std::invalid_argument("schema needs at least the user context field");
    std::vector<std::string> cols{"session_id", "scenario_id", "label",       "timestamp",
                                  "user_id",    "target_item", "target_attrs"};
    for (std::size_t f = 1; f < schema.context_fields.size(); ++f)
        cols.push_back(schema.context_fields[f].field);
    cols.push_back("behaviors");
    return cols;
}

void append_attrs(std::string& out, const std::vector<std::int32_t>& attrs, char sep)
{
    for (std::size_t i = 0; i < attrs.size(); ++i) {
        if (i)
            out += sep;
        out += std::to_string(attrs[i]);
    }
}

} // namespace

std::string to_csv(const std::vector<Instance>& instances, const FeatureSchema& schema)
{
    const auto cols = header_columns(schema);
    std::string out;
    for (std::size_t i = 0; i < cols.size(); ++i)
        out += (i ? "," : "") + cols[i];
    out += '\n';
    for (const auto& inst : instances) {
        if (inst.session_id.find_first_of(",\n\r") != std::string::npos)
            throw std::invalid_argument("session id may not contain commas or newlines: " +
                                        inst.session_id);
        if (inst.feature_ids.size() != schema.context_fields.size())
            throw std::invalid_argument("instance does not match schema context fields");
        out += inst.session_id;
        out += ',' + std::to_string(inst.scenario_id);
        out += ',' + std::to_string(inst.label);
        out += ',' + std::to_string(inst.timestamp);
        out += ',' + std::to_string(inst.feature_ids[0]);
        out += ',' + std::to_string(inst.target.item);
        out += ',';
        append_attrs(out, inst.target.attrs, '|');
        for (std::size_t f = 1; f < inst.feature_ids.size(); ++f)
            out += ',' + std::to_string(inst.feature_ids[f]);
        out += ',';
        for (std::size_t b = 0; b < inst.behaviors.size(); ++b) {
            if (b)
                out += ';';
            out += std::to_string(inst.behaviors[b].item);
            if (!inst.behaviors[b].attrs.empty()) {
                out += ':';
                append_attrs(out, inst.behaviors[b].attrs, ',');
            }
        }
        out += '\n';
    }
    return out;
}

void write_csv(const std::vector<Instance>& instances, const FeatureSchema& schema,
               const std::string& path)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw std::runtime_error("cannot open for writing: " + path);
    f << to_csv(instances, schema);
    if (!f)
        throw std::runtime_error("failed writing " + path);
}

namespace {

struct RowParser {
    const std::string& source;
    int line;

    [[noreturn]] void fail(int column, const std::string& what) const
    {
        throw DataParseError(source, line, column, what);
    }

    template <typename I>
    I integer(std::string_view s, int column, const char* name) const
    {
        I v{};
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || ec != std::errc() || p != s.data() + s.size())
            fail(column, std::string("bad ") + name + " '" + std::string(s) + "'");
        return v;
    }

    std::vector<std::int32_t> id_list(std::string_view s, char sep, int column,
                                      const char* name) const
    {
        std::vector<std::int32_t> out;
        if (s.empty())
            return out;
        std::size_t start = 0;
        while (true) {
            const auto pos = s.find(sep, start);
            out.push_back(integer<std::int32_t>(s.substr(start, pos - start), column, name));
            if (pos == std::string_view::npos)
                break;
            start = pos + 1;
        }
        return out;
    }

    std::int32_t in_vocab(const Vocab& v, std::int32_t id, int column) const
    {
        try {
            v.check(id);
        } catch (const VocabError& e) {
            fail(column, e.what());
        }
        return id;
    }

    void in_vocab(const Vocab& v, const std::vector<std::int32_t>& ids, int column) const
    {
        for (auto id : ids)
            in_vocab(v, id, column);
    }
};

} // namespace

std::vector<Instance> parse_csv(const std::string& text, const FeatureSchema& schema,
                                const std::string& source)
{
    const auto cols = header_columns(schema);
    const std::size_t n_fixed = cols.size() - 1; // behaviors is the open-ended last column

    std::vector<Instance> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    if (!std::getline(in, line))
        throw DataParseError(source, 1, 1, "missing header row");
    ++lineno;
    if (!line.empty() && line.back() == '\r')
        line.pop_back();
    {
        std::string expected;
        for (std::size_t i = 0; i < cols.size(); ++i)
            expected += (i ? "," : "") + cols[i];
        if (line != expected)
            throw DataParseError(source, 1, 1, "header does not match schema; expected '" + expected + "'");
    }

    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        RowParser rp{source, lineno};
        std::vector<std::string_view> cells;
        std::string_view rest(line);
        for (std::size_t i = 0; i < n_fixed; ++i) {
            const auto pos = rest.find(',');
            if (pos == std::string_view::npos)
                rp.fail(static_cast<int>(i + 1), "expected " + std::to_string(cols.size()) +
                                                     " columns, row ends at column " +
                                                     std::to_string(i + 1));
            cells.push_back(rest.substr(0, pos));
            rest.remove_prefix(pos + 1);
        }
        cells.push_back(rest);

        Instance inst;
        inst.session_id = std::string(cells[0]);
        if (inst.session_id.empty())
            rp.fail(1, "empty session_id");
        inst.scenario_id = rp.integer<std::int32_t>(cells[1], 2, "scenario_id");
        if (inst.scenario_id < 0 || inst.scenario_id >= schema.n_scenarios)
            rp.fail(2, "unknown scenario id " + std::to_string(inst.scenario_id));
        inst.label = rp.integer<int>(cells[2], 3, "label");
        if (inst.label != 0 && inst.label != 1)
            rp.fail(3, "label must be 0 or 1");
        inst.timestamp = rp.integer<std::int64_t>(cells[3], 4, "timestamp");
        inst.feature_ids.push_back(rp.in_vocab(schema.context_fields.at(0),
                                               rp.integer<std::int32_t>(cells[4], 5, "user_id"), 5));
        inst.target.item = rp.in_vocab(schema.item, rp.integer<std::int32_t>(cells[5], 6, "target_item"), 6);
        inst.target.attrs = rp.id_list(cells[6], '|', 7, "target attribute");
        rp.in_vocab(schema.attr, inst.target.attrs, 7);
        for (std::size_t f = 1; f < schema.context_fields.size(); ++f) {
            const int col = static_cast<int>(7 + f);
            inst.feature_ids.push_back(rp.in_vocab(
                schema.context_fields[f], rp.integer<std::int32_t>(cells[6 + f], col, cols[6 + f].c_str()),
                col));
        }

        const int bcol = static_cast<int>(cols.size());
        std::string_view b = cells.back();
        if (!b.empty()) {
            std::size_t start = 0;
            while (true) {
                const auto pos = b.find(';', start);
                const auto rec = b.substr(start, pos - start);
                ItemRef ref;
                const auto colon = rec.find(':');
                ref.item = rp.in_vocab(
                    schema.item, rp.integer<std::int32_t>(rec.substr(0, colon), bcol, "behavior item"), bcol);
                if (colon != std::string_view::npos)
                    ref.attrs = rp.id_list(rec.substr(colon + 1), ',', bcol, "behavior attribute");
                rp.in_vocab(schema.attr, ref.attrs, bcol);
                inst.behaviors.push_back(std::move(ref));
                if (pos == std::string_view::npos)
                    break;
                start = pos + 1;
            }
        }
        if (static_cast<std::int32_t>(inst.behaviors.size()) > schema.max_behaviors)
            rp.fail(bcol, std::to_string(inst.behaviors.size()) + " behaviors, maximum is " +
                              std::to_string(schema.max_behaviors));
        out.push_back(std::move(inst));
    }
    return out;
}

std::vector<Instance> read_csv(const std::string& path, const FeatureSchema& schema)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot open data file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_csv(ss.str(), schema, path);
}

// ---------------------------------------------------------------------------
// Schema and dataset directories
// ---------------------------------------------------------------------------

std::string schema_to_text(const FeatureSchema& s)
{
    std::vector<std::pair<std::string, std::string>> kv;
    std::string names;
    for (std::size_t i = 0; i < s.context_fields.size(); ++i)
        names += (i ? "," : "") + s.context_fields[i].field;
    kv.emplace_back("context_fields", names);
    for (const auto& f : s.context_fields)
        kv.emplace_back("vocab." + f.field, std::to_string(f.size));
    kv.emplace_back("vocab.item", std::to_string(s.item.size));
    kv.emplace_back("vocab.attr", std::to_string(s.attr.size));
    kv.emplace_back("n_scenarios", std::to_string(s.n_scenarios));
    kv.emplace_back("max_behaviors", std::to_string(s.max_behaviors));
    return to_config_text(kv);
}

FeatureSchema schema_from_config(const KeyValueConfig& cfg)
{
    FeatureSchema s;
    const std::string names = cfg.get_string("context_fields", "");
    if (names.empty())
        cfg.fail("context_fields", "missing or empty");
    std::istringstream is(names);
    std::string name;
    while (std::getline(is, name, ',')) {
        const std::string key = "vocab." + name;
        if (!cfg.has(key))
            cfg.fail("context_fields", "no " + key + " entry for field '" + name + "'");
        s.context_fields.push_back({name, static_cast<std::int32_t>(cfg.get_int(key, 1))});
    }
    auto size = [&](const std::string& key) {
        if (!cfg.has(key))
            cfg.fail(key, "missing");
        const auto v = cfg.get_int(key, 1);
        if (v < 1)
            cfg.fail(key, "must be >= 1");
        return static_cast<std::int32_t>(v);
    };
    s.item = {"item", size("vocab.item")};
    s.attr = {"attr", size("vocab.attr")};
    s.n_scenarios = size("n_scenarios");
    s.max_behaviors = size("max_behaviors");
    return s;
}

void save_dataset(const Dataset& data, const std::string& dir, const SynthConfig* config)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path d(dir);
    write_csv(data.train, data.schema, (d / "train.csv").string());
    write_csv(data.test, data.schema, (d / "test.csv").string());
    auto write_text = [](const fs::path& p, const std::string& text) {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!(f << text))
            throw std::runtime_error("failed writing " + p.string());
    };
    write_text(d / "schema.txt", schema_to_text(data.schema));
    if (config)
        write_text(d / "synth_config.txt", config->to_text());
}

Dataset load_dataset(const std::string& dir)
{
    namespace fs = std::filesystem;
    const fs::path d(dir);
    if (!fs::is_directory(d))
        throw std::runtime_error("data directory not found: " + dir);
    Dataset data;
    data.schema = schema_from_config(KeyValueConfig::load((d / "schema.txt").string()));
    data.train = read_csv((d / "train.csv").string(), data.schema);
    data.test = read_csv((d / "test.csv").string(), data.schema);
    return data;
}

} // namespace sfpnet
