#include "sfpnet/cli.hpp"

#include "sfpnet/experiments.hpp"
#include "sfpnet/gradcheck_suite.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace sfpnet {

namespace fs = std::filesystem;

namespace {

// Error raised by a command after parsing; carries its exit code.
struct CommandError : std::runtime_error {
    CommandError(int code, std::string kind, const std::string& what)
        : std::runtime_error(what), code(code), kind(std::move(kind))
    {
    }
    int code;
    std::string kind;
};

std::string one_line(std::string s)
{
    for (char& c : s)
        if (c == '\n' || c == '\r')
            c = ' ';
    return s;
}

void write_file(const fs::path& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f)
        throw std::runtime_error("write failed: " + path.string());
}

void ensure_dir(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw std::runtime_error("cannot create directory " + dir + ": " + ec.message());
}

// CSV, a blank line, then the same rows as an aligned table.
void emit(std::ostream& out, const std::string& csv)
{
    out << csv << '\n' << csv_to_table(csv);
}

std::vector<std::uint64_t> parse_seeds(const std::string& text)
{
    std::vector<std::uint64_t> seeds;
    for (auto v : parse_int_list(text)) {
        if (v < 0)
            throw CommandError(2, "usage", "--seeds: negative seed " + std::to_string(v));
        seeds.push_back(static_cast<std::uint64_t>(v));
    }
    if (seeds.empty())
        throw CommandError(2, "usage", "--seeds: empty list");
    return seeds;
}

struct ExperimentOptions {
    std::string data;
    std::string model_config;
    std::string train_config;
    std::string seeds;
    std::string out;
    bool verbose = false;
};

void add_experiment_options(CLI::App* cmd, ExperimentOptions& o)
{
    cmd->add_option("--model-config", o.model_config, "model config file (default: full-size model)");
    cmd->add_option("--train-config", o.train_config, "train config file (default: 2 epochs)");
    cmd->add_option("--seeds", o.seeds, "comma-separated seeds (default: 5 from SFPNET_SEED)");
    cmd->add_flag("--verbose", o.verbose, "report every finished run on stderr");
}

ExperimentConfig experiment_config(const ExperimentOptions& o)
{
    ExperimentConfig cfg = ExperimentConfig::defaults();
    if (!o.model_config.empty())
        cfg.model = ModelConfig::from_config(KeyValueConfig::load(o.model_config));
    if (!o.train_config.empty()) {
        cfg.train = TrainConfig::from_config(KeyValueConfig::load(o.train_config));
        cfg.train.scenario_filter = -1;
    }
    if (!o.seeds.empty())
        cfg.seeds = parse_seeds(o.seeds);
    return cfg;
}

RunObserver progress(const ExperimentOptions& o, std::ostream& err)
{
    if (!o.verbose)
        return {};
    return [&err](const RunRecord& r) {
        err << "run " << r.label << " auc=" << format_metric(r.report.overall.auc.value_or(std::nan("")))
            << " wall_s=" << format_metric(r.wall_seconds) << '\n';
    };
}

// Dataset from --data, or the default synthetic dataset when the option is optional and unset.
Dataset experiment_data(const std::string& dir)
{
    if (!dir.empty())
        return load_dataset(dir);
    return generate(SynthConfig{}).data;
}

std::string runs_csv(const std::vector<RunRecord>& runs)
{
    std::string out = "label,seed,params,auc,s_gauc,final_loss,wall_s,first_batch\n";
    for (const auto& r : runs) {
        std::string first;
        for (std::size_t i = 0; i < r.log.first_batch.size() && i < 8; ++i)
            first += (i ? "|" : "") + std::to_string(r.log.first_batch[i]);
        const auto metric = [](const std::optional<double>& v) {
            return v ? format_metric(*v) : std::string("NA");
        };
        out += r.label + "," + std::to_string(r.train_config.seed) + "," +
               std::to_string(r.param_count) + "," + metric(r.report.overall.auc) + "," +
               metric(r.report.overall.s_gauc) + "," +
               (r.log.epoch_loss.empty() ? std::string("NA") : format_metric(r.log.epoch_loss.back())) +
               "," + format_metric(r.wall_seconds) + "," + first + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& config, const std::string& out_dir, std::ostream& out)
{
    SynthConfig sc;
    if (!config.empty())
        sc = SynthConfig::from_config(KeyValueConfig::load(config));
    const GeneratedData g = generate(sc);
    save_dataset(g.data, out_dir, &sc);

    std::string csv = "split,scenario_id,impressions,sessions,ctr\n";
    const auto summarize = [&](const std::string& split, const std::vector<Instance>& rows) {
        std::map<std::int32_t, std::pair<std::size_t, std::size_t>> counts; // impressions, clicks
        std::map<std::int32_t, std::map<std::string, int>> sessions;
        for (const auto& r : rows) {
            auto& c = counts[r.scenario_id];
            ++c.first;
            c.second += static_cast<std::size_t>(r.label);
            sessions[r.scenario_id][r.session_id] = 1;
        }
        for (const auto& [m, c] : counts)
            csv += split + "," + std::to_string(m) + "," + std::to_string(c.first) + "," +
                   std::to_string(sessions[m].size()) + "," +
                   format_metric(static_cast<double>(c.second) / static_cast<double>(c.first)) + "\n";
    };
    summarize("train", g.data.train);
    summarize("test", g.data.test);
    emit(out, csv);
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& model_config,
              const std::string& train_config, const std::string& out_dir, std::ostream& out)
{
    const ModelConfig mc = model_config.empty()
                               ? ModelConfig{}
                               : ModelConfig::from_config(KeyValueConfig::load(model_config));
    TrainConfig tc;
    tc.seed = default_seed();
    if (!train_config.empty())
        tc = TrainConfig::from_config(KeyValueConfig::load(train_config));
    const Dataset data = load_dataset(data_dir);

    ensure_dir(out_dir);
    const fs::path dir(out_dir);
    const RunRecord r = run_training(mc, tc, data, (dir / "model.ckpt").string());
    write_file(dir / "model_config.txt", mc.to_text());
    write_file(dir / "train_config.txt", tc.to_text());
    write_file(dir / "loss.csv", loss_csv(r.log));
    write_file(dir / "report.csv", report_csv(r.report));

    emit(out, loss_csv(r.log));
    out << '\n';
    emit(out, report_csv(r.report));
    out << "params," << r.param_count << "\nwall_s," << format_metric(r.wall_seconds) << '\n';
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& split,
             const std::string& out_file, std::ostream& out)
{
    const Dataset data = load_dataset(data_dir);
    const EvalReport rep = evaluate_checkpoint(checkpoint, split == "train" ? data.train : data.test);
    const std::string csv = report_csv(rep);
    if (!out_file.empty())
        write_file(out_file, csv);
    emit(out, csv);
    return 0;
}

int cmd_gradcheck(const std::string& dims, const std::string& variant, std::uint64_t seed,
                  double h, std::ostream& out)
{
    if (dims != "tiny")
        throw CommandError(2, "usage", "--dims: only 'tiny' is supported, got '" + dims + "'");
    ModelConfig cfg = tiny_model_config();
    if (variant == "basednn")
        cfg.kind = ModelKind::basednn;
    else
        cfg = apply_variant(cfg, variant);
    const GradCheckReport r = run_model_gradcheck(cfg, tiny_schema(), seed, h);
    emit(out, gradcheck_csv(r));
    char buf[160];
    std::snprintf(buf, sizeof buf, "max_rel_error=%.3e tolerance=%.0e seconds=%.2f %s\n",
                  r.max_rel_error, r.tolerance, r.seconds, r.pass() ? "PASS" : "FAIL");
    out << buf;
    if (!r.pass()) {
        std::snprintf(buf, sizeof buf, "max relative error %.3e is not below %.0e", r.max_rel_error,
                      r.tolerance);
        throw CommandError(1, "gradcheck", buf);
    }
    return 0;
}

int cmd_ablate(const ExperimentOptions& o, const std::string& variants, std::ostream& out,
               std::ostream& err)
{
    const ExperimentConfig cfg = experiment_config(o);
    std::vector<std::string> names = ablation_variants();
    if (!variants.empty()) {
        names.clear();
        std::stringstream ss(variants);
        std::string v;
        while (std::getline(ss, v, ','))
            names.push_back(v);
    }
    for (const auto& n : names)
        (void)apply_variant(cfg.model, n); // rejects unknown names before any training
    const Dataset data = load_dataset(o.data);
    const AblationResult r = run_ablation_grid(data, cfg, names, progress(o, err));
    ensure_dir(o.out);
    write_file(fs::path(o.out) / "ablation.csv", ablation_csv(r));
    write_file(fs::path(o.out) / "runs.csv", runs_csv(r.runs));
    emit(out, ablation_csv(r));
    return 0;
}

int cmd_sweep(const ExperimentOptions& o, const std::string& values, std::ostream& out,
              std::ostream& err)
{
    const ExperimentConfig cfg = experiment_config(o);
    std::vector<int> ls;
    for (auto v : parse_int_list(values))
        ls.push_back(static_cast<int>(v));
    const Dataset data = experiment_data(o.data);
    const auto rows = run_l_sweep(data, cfg, ls, progress(o, err));
    if (!o.out.empty()) {
        ensure_dir(o.out);
        write_file(fs::path(o.out) / "sweep_l.csv", sweep_csv(rows));
    }
    emit(out, sweep_csv(rows));
    return 0;
}

int cmd_joint(const ExperimentOptions& o, std::ostream& out, std::ostream& err)
{
    const ExperimentConfig cfg = experiment_config(o);
    const Dataset data = load_dataset(o.data);
    const JointSeparateResult r = run_joint_vs_separate(data, cfg, progress(o, err));
    if (!o.out.empty()) {
        ensure_dir(o.out);
        write_file(fs::path(o.out) / "joint_vs_separate.csv", joint_separate_csv(r));
    }
    emit(out, joint_separate_csv(r));
    return 0;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Multi-scenario CTR model: data generation, training, evaluation, experiments"};
    app.name("sfpnet");
    app.require_subcommand(1);
    app.fallthrough(false);

    std::string config, out_dir, data, model_config, train_config, checkpoint, split = "test";
    std::string eval_out, dims, variant = "full", values, variants;
    std::uint64_t gc_seed = 1;
    double gc_h = 1e-6;
    ExperimentOptions ablate_opts, sweep_opts, joint_opts;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-scenario dataset");
    gen->add_option("--config", config, "synthetic data config (default: built-in defaults)");
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "train one model and save a checkpoint");
    train->add_option("--data", data, "dataset directory")->required();
    train->add_option("--model-config", model_config, "model config file");
    train->add_option("--train-config", train_config, "train config file");
    train->add_option("--out", out_dir, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "score a dataset split with a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--data", data, "dataset directory")->required();
    eval->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
    eval->add_option("--out", eval_out, "also write the report CSV here");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every parameter");
    gc->set_help_flag("--help", "print this help and exit"); // --h is the step size
    gc->add_option("--dims", dims, "model size (tiny)")->required();
    gc->add_option("--variant", variant, "full, an ablation variant, or basednn");
    gc->add_option("--seed", gc_seed, "parameter and batch seed");
    gc->add_option("--h", gc_h, "central-difference step")->check(CLI::Range(1e-7, 1e-3));

    auto* ablate = app.add_subcommand("ablate", "ablation grid over seeds");
    ablate->add_option("--data", ablate_opts.data, "dataset directory")->required();
    ablate->add_option("--out", ablate_opts.out, "output directory")->required();
    ablate->add_option("--variants", variants, "comma-separated subset of variants");
    add_experiment_options(ablate, ablate_opts);

    auto* sweep = app.add_subcommand("sweep-l", "block-count sweep");
    sweep->add_option("--values", values, "comma-separated values of L")->required();
    sweep->add_option("--data", sweep_opts.data, "dataset directory (default: generated)");
    sweep->add_option("--out", sweep_opts.out, "also write sweep_l.csv here");
    add_experiment_options(sweep, sweep_opts);

    auto* joint = app.add_subcommand("joint-vs-separate", "joint vs per-scenario training");
    joint->add_option("--data", joint_opts.data, "dataset directory")->required();
    joint->add_option("--out", joint_opts.out, "also write joint_vs_separate.csv here");
    add_experiment_options(joint, joint_opts);

    const auto fail = [&](int code, const std::string& kind, const std::string& what) {
        err << "sfpnet: error: " << kind << ": " << one_line(what) << '\n';
        return code;
    };

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend()); // CLI11 consumes from the back
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = fail(2, "usage", e.what());
        const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return code;
    }

    try {
        if (*gen)
            return cmd_gen_data(config, out_dir, out);
        if (*train)
            return cmd_train(data, model_config, train_config, out_dir, out);
        if (*eval)
            return cmd_eval(checkpoint, data, split, eval_out, out);
        if (*gc)
            return cmd_gradcheck(dims, variant, gc_seed, gc_h, out);
        if (*ablate)
            return cmd_ablate(ablate_opts, variants, out, err);
        if (*sweep)
            return cmd_sweep(sweep_opts, values, out, err);
        if (*joint)
            return cmd_joint(joint_opts, out, err);
        return fail(2, "usage", "no subcommand");
    } catch (const CommandError& e) {
        const int code = fail(e.code, e.kind, e.what());
        if (e.code == 2)
            err << app.help();
        return code;
    } catch (const ConfigParseError& e) {
        return fail(3, "config", e.what());
    } catch (const ConfigError& e) {
        return fail(3, "config", e.what());
    } catch (const DataParseError& e) {
        return fail(1, "data", e.what());
    } catch (const NumericError& e) {
        return fail(1, "numeric", e.what());
    } catch (const std::exception& e) {
        return fail(1, "runtime", e.what());
    }
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err)
{
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i)
        args.emplace_back(argv[i]);
    return run_cli(args, out, err);
}

} // namespace sfpnet
