#include "mbpep/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "mbpep/data.hpp"
#include "mbpep/error.hpp"
#include "mbpep/model_io.hpp"
#include "mbpep/pipeline.hpp"

namespace mbpep::cli {

namespace {

using Options = std::vector<std::pair<std::string, std::string>>;

unsigned default_threads()
{
    if (const char* env = std::getenv("MBPEP_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) return static_cast<unsigned>(n);
        } catch (const std::exception&) {
        }
    }
    return 1;
}

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write '" + path + "'");
    out << text;
    if (!out) throw RuntimeFailure("write to '" + path + "' failed");
}

// Flags that map onto configuration keys. Values are captured as strings and
// applied after the config document, so flags always win.
struct ConfigFlags {
    std::string config_path;
    std::vector<std::string> sets;
    std::vector<std::pair<std::string, std::unique_ptr<std::string>>> values;
    bool no_prune = false;
    bool raw_bounds = false;
    CLI::Option* no_prune_opt = nullptr;
    CLI::Option* raw_bounds_opt = nullptr;
    std::string data;
    std::optional<unsigned> threads;

    void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help)
    {
        values.emplace_back(key, std::make_unique<std::string>());
        app->add_option(flag, *values.back().second, help + " [" + key + "]");
    }

    void attach(CLI::App* app, bool bench)
    {
        app->add_option("--config", config_path, "key = value configuration document");
        app->add_option("--set", sets, "extra key=value override (repeatable)");
        app->add_option("--data", data, "cubic, exp, or a CSV path");
        app->add_option("--threads", threads, "worker threads (default $MBPEP_THREADS or 1)");
        add(app, "--seed", "seed", "base seed");
        add(app, "--n", "data.n", "generated sample count");
        add(app, "--target-column", "data.target_column", "CSV target column name");
        add(app, "--confidence", "loss.confidence", "required coverage 1-phi");
        add(app, "--penalty-c", "loss.penalty_c", "coverage hinge weight");
        add(app, "--softness", "loss.softness", "soft indicator steepness");
        add(app, "--pool-size", "train.pool_size", "number of base learners");
        add(app, "--epochs", "train.epochs", "training epochs");
        add(app, "--batch-size", "train.batch_size", "minibatch size");
        add(app, "--learning-rate", "train.learning_rate", "optimizer step size");
        add(app, "--hidden", "model.hidden", "hidden layer sizes, comma separated");
        add(app, "--activation", "model.activation", "auto, sigmoid or relu");
        add(app, "--selection", "prune.selection", "min or knee");
        if (bench) {
            add(app, "--pool-sizes", "bench.pool_sizes", "pool sizes to sweep");
            add(app, "--repeats", "bench.repeats", "runs per pool size");
        }
        no_prune_opt = app->add_flag("--no-prune", no_prune, "skip pruning (unpruned baseline)");
        raw_bounds_opt = app->add_flag("--raw-bounds", raw_bounds, "use the two raw heads as lower/upper bounds");
    }

    pipeline::RunConfig resolve() const
    {
        pipeline::RunConfig cfg;
        cfg.threads = default_threads();
        Options options;
        if (!config_path.empty()) options = pipeline::read_config_file(config_path);
        if (!data.empty()) {
            if (data == "cubic" || data == "exp") {
                options.emplace_back("data.source", data);
            } else {
                options.emplace_back("data.source", "csv");
                options.emplace_back("data.path", data);
            }
        }
        for (const auto& [key, value] : values)
            if (!value->empty()) options.emplace_back(key, *value);
        if (no_prune_opt && no_prune_opt->count() > 0) options.emplace_back("prune.enabled", "false");
        if (raw_bounds_opt && raw_bounds_opt->count() > 0) options.emplace_back("model.bounds", "raw");
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            options.emplace_back(s.substr(0, eq), s.substr(eq + 1));
        }
        pipeline::apply_options(cfg, options);
        if (threads) cfg.threads = *threads;
        cfg.validate();
        return cfg;
    }
};

int gen_data(const std::string& name, std::size_t n, std::uint64_t seed, const std::string& out_path,
             std::optional<double> noise_std, std::optional<double> rate, std::optional<double> x_min,
             std::optional<double> x_max, std::ostream& out)
{
    data::Dataset ds;
    if (name == "cubic") {
        ds = data::gen_cubic(n, noise_std.value_or(3.0), {x_min.value_or(-4.0), x_max.value_or(4.0)}, seed);
    } else if (name == "exp") {
        ds = data::gen_exp(n, rate.value_or(1.0), {x_min.value_or(0.0), x_max.value_or(3.0)}, seed);
    } else {
        throw ConfigError("unknown generator '" + name + "' (expected cubic or exp)");
    }
    data::write_csv(ds, out_path);
    out << out_path << " " << ds.size() << " rows\n";
    return kOk;
}

void print_summary(std::ostream& out, const std::string& label, const ensemble::EvalReport& r)
{
    out << label << ": size=" << r.ensemble_size << " picp_hard=" << r.metrics.picp_hard
        << " mpiw_all=" << r.metrics.mpiw_all << " mpiw_captured=" << r.metrics.mpiw_captured
        << " loss_mbpep=" << r.metrics.loss_mbpep << "\n";
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Prediction-interval ensembles with margin-scored Pareto pruning", "mbpep"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as CSV");
    std::string gen_name, gen_out;
    std::size_t gen_n = 1000;
    std::uint64_t gen_seed = 1;
    std::optional<double> gen_noise, gen_rate, gen_xmin, gen_xmax;
    gen->add_option("generator", gen_name, "cubic or exp")->required();
    gen->add_option("--n", gen_n, "row count");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output CSV path")->required();
    gen->add_option("--noise-std", gen_noise, "Gaussian noise std (cubic)");
    gen->add_option("--rate", gen_rate, "exponential noise rate (exp)");
    gen->add_option("--x-min", gen_xmin, "lower end of the x range");
    gen->add_option("--x-max", gen_xmax, "upper end of the x range");

    // train
    auto* train = app.add_subcommand("train", "run the full pipeline and save the model");
    ConfigFlags train_flags;
    train_flags.attach(train, false);
    std::string train_out, train_report, train_trace, train_test_out;
    bool train_timings = false;
    train->add_option("--out", train_out, "model file path")->required();
    train->add_option("--report", train_report, "report path (default <out>.report.json)");
    train->add_option("--trace-out", train_trace, "per-sample test-split bounds as CSV");
    train->add_option("--test-out", train_test_out, "write the raw test split as CSV");
    train->add_flag("--timings", train_timings, "include wall-clock timings in the report");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a saved model on a CSV dataset");
    std::string eval_model, eval_data, eval_report, eval_trace, eval_target;
    std::optional<double> eval_conf, eval_c, eval_soft;
    bool eval_timings = false;
    eval->add_option("--model", eval_model, "model file")->required();
    eval->add_option("--data", eval_data, "CSV dataset")->required();
    eval->add_option("--target-column", eval_target, "target column name (default: model's target, else last)");
    eval->add_option("--out,--report", eval_report, "report path (default stdout)");
    eval->add_option("--trace-out", eval_trace, "per-sample bounds as CSV");
    eval->add_option("--confidence", eval_conf, "override required coverage");
    eval->add_option("--penalty-c", eval_c, "override hinge weight");
    eval->add_option("--softness", eval_soft, "override soft indicator steepness");
    eval->add_flag("--timings", eval_timings, "include wall-clock timings in the report");

    // bench
    auto* bench = app.add_subcommand("bench", "repeat the pipeline across pool sizes and aggregate");
    ConfigFlags bench_flags;
    bench_flags.attach(bench, true);
    std::string bench_out;
    bench->add_option("--out,--report", bench_out, "report path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kOk : kConfigError;
    }

    try {
        if (*gen) return gen_data(gen_name, gen_n, gen_seed, gen_out, gen_noise, gen_rate, gen_xmin, gen_xmax, out);

        if (*train) {
            const auto cfg = train_flags.resolve();
            const auto result = pipeline::run_pipeline(cfg);
            save_model(result.model, train_out);
            const std::string report_path = train_report.empty() ? train_out + ".report.json" : train_report;
            write_text(report_path, pipeline::train_report(cfg, result, train_timings).dump(2) + "\n");
            if (!train_test_out.empty()) data::write_csv(result.raw.test, train_test_out);
            if (!train_trace.empty()) pipeline::write_trace_csv(result.model, result.raw.test, result.test, train_trace);
            for (const auto& f : result.model.pool.failures)
                err << "learner " << f.learner_index << " failed in epoch " << f.epoch << ": " << f.message << "\n";
            if (result.prune) print_summary(out, "unpruned", result.test_unpruned);
            print_summary(out, "test", result.test);
            out << "model: " << train_out << "\nreport: " << report_path << "\n";
            return kOk;
        }

        if (*eval) {
            Model model = load_model(eval_model);
            if (eval_conf) model.pool.config.loss.confidence = *eval_conf;
            if (eval_c) model.pool.config.loss.penalty_c = *eval_c;
            if (eval_soft) model.pool.config.loss.softness = *eval_soft;
            model.pool.config.loss.validate();

            data::TargetColumn target = data::TargetColumn::last();
            if (!eval_target.empty()) {
                target = data::TargetColumn::named(eval_target);
            } else {
                std::ifstream probe(eval_data);
                std::string header;
                std::getline(probe, header);
                if (("," + header + ",").find("," + model.target_name + ",") != std::string::npos)
                    target = data::TargetColumn::named(model.target_name);
            }
            const data::Dataset raw = data::load_csv(eval_data, target);
            const data::Dataset ds = normalize_for_model(model, raw);
            const auto report = ensemble::evaluate(model.pool, ds, model.pool.config.loss);
            const auto doc = pipeline::eval_report(model, eval_data, report, ds.targets, eval_timings).dump(2) + "\n";
            if (eval_report.empty())
                out << doc;
            else
                write_text(eval_report, doc);
            if (!eval_trace.empty()) pipeline::write_trace_csv(model, raw, report, eval_trace);
            return kOk;
        }

        if (*bench) {
            const auto cfg = bench_flags.resolve();
            const auto result = pipeline::run_bench(cfg);
            const auto doc = pipeline::bench_report(cfg, result).dump(2) + "\n";
            if (bench_out.empty())
                out << doc;
            else
                write_text(bench_out, doc);
            for (const auto& pool : result.pools) {
                for (const auto& f : pool.failures) err << "pool " << pool.pool_size << ": " << f << "\n";
            }
            return kOk;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        switch (e.kind()) {
        case ErrorKind::Config:
            return kConfigError;
        case ErrorKind::Data:
            return kDataError;
        case ErrorKind::Runtime:
            return kRuntimeError;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kRuntimeError;
}

} // namespace mbpep::cli
