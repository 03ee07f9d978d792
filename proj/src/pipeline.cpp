#include "mbpep/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "mbpep/error.hpp"
#include "mbpep/random.hpp"

namespace mbpep::pipeline {

using nlohmann::json;

namespace {

std::string trim(const std::string& s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_double(const std::string& key, const std::string& v)
{
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out))
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v)
{
    Int out{};
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v)
{
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int<int>(key, trim(item)));
    if (out.empty()) throw ConfigError(key + ": expected a comma-separated list of integers");
    return out;
}

std::string join(const std::vector<int>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string fmt(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters()
{
    static const std::map<std::string, Setter> table = {
        {"seed", [](RunConfig& c, const auto& k, const auto& v) { c.seed = parse_int<std::uint64_t>(k, v); }},
        {"threads", [](RunConfig& c, const auto& k, const auto& v) { c.threads = parse_int<unsigned>(k, v); }},
        {"timing_repeats", [](RunConfig& c, const auto& k, const auto& v) { c.timing_repeats = parse_int<int>(k, v); }},
        {"data.source", [](RunConfig& c, const auto& k, const auto& v) {
             if (v != "cubic" && v != "exp" && v != "csv")
                 throw ConfigError(k + ": expected cubic, exp or csv, got '" + v + "'");
             c.data.kind = v;
         }},
        {"data.path", [](RunConfig& c, const auto&, const auto& v) { c.data.path = v; }},
        {"data.target_column", [](RunConfig& c, const auto&, const auto& v) { c.data.target_column = v; }},
        {"data.n", [](RunConfig& c, const auto& k, const auto& v) { c.data.n = parse_int<std::size_t>(k, v); }},
        {"data.noise_std", [](RunConfig& c, const auto& k, const auto& v) { c.data.noise_std = parse_double(k, v); }},
        {"data.rate", [](RunConfig& c, const auto& k, const auto& v) { c.data.rate = parse_double(k, v); }},
        {"data.x_min", [](RunConfig& c, const auto& k, const auto& v) { c.data.x_min = parse_double(k, v); }},
        {"data.x_max", [](RunConfig& c, const auto& k, const auto& v) { c.data.x_max = parse_double(k, v); }},
        {"data.normalize_targets",
         [](RunConfig& c, const auto& k, const auto& v) { c.data.normalize_targets = parse_bool(k, v); }},
        {"split.train", [](RunConfig& c, const auto& k, const auto& v) { c.split.train_fraction = parse_double(k, v); }},
        {"split.valid", [](RunConfig& c, const auto& k, const auto& v) { c.split.valid_fraction = parse_double(k, v); }},
        {"split.test", [](RunConfig& c, const auto& k, const auto& v) { c.split.test_fraction = parse_double(k, v); }},
        {"model.hidden", [](RunConfig& c, const auto& k, const auto& v) { c.train.hidden = parse_int_list(k, v); }},
        {"model.activation", [](RunConfig& c, const auto&, const auto& v) {
             if (v == "auto")
                 c.train.activation.reset();
             else
                 c.train.activation = nnet::parse_activation(v);
         }},
        {"model.bounds", [](RunConfig& c, const auto&, const auto& v) { c.train.bounds = nnet::parse_bound_mode(v); }},
        {"model.dropout_retention",
         [](RunConfig& c, const auto& k, const auto& v) { c.train.dropout_retention = parse_double(k, v); }},
        {"train.epochs", [](RunConfig& c, const auto& k, const auto& v) { c.train.epochs = parse_int<int>(k, v); }},
        {"train.batch_size", [](RunConfig& c, const auto& k, const auto& v) { c.train.batch_size = parse_int<int>(k, v); }},
        {"train.pool_size", [](RunConfig& c, const auto& k, const auto& v) { c.train.pool_size = parse_int<int>(k, v); }},
        {"train.optimizer",
         [](RunConfig& c, const auto&, const auto& v) { c.train.optimizer.kind = nnet::parse_optimizer(v); }},
        {"train.learning_rate",
         [](RunConfig& c, const auto& k, const auto& v) { c.train.optimizer.learning_rate = parse_double(k, v); }},
        {"train.beta1", [](RunConfig& c, const auto& k, const auto& v) { c.train.optimizer.beta1 = parse_double(k, v); }},
        {"train.beta2", [](RunConfig& c, const auto& k, const auto& v) { c.train.optimizer.beta2 = parse_double(k, v); }},
        {"train.epsilon",
         [](RunConfig& c, const auto& k, const auto& v) { c.train.optimizer.epsilon = parse_double(k, v); }},
        {"loss.confidence", [](RunConfig& c, const auto& k, const auto& v) { c.train.loss.confidence = parse_double(k, v); }},
        {"loss.penalty_c", [](RunConfig& c, const auto& k, const auto& v) { c.train.loss.penalty_c = parse_double(k, v); }},
        {"loss.softness", [](RunConfig& c, const auto& k, const auto& v) { c.train.loss.softness = parse_double(k, v); }},
        {"prune.enabled", [](RunConfig& c, const auto& k, const auto& v) { c.prune_enabled = parse_bool(k, v); }},
        {"prune.max_iterations",
         [](RunConfig& c, const auto& k, const auto& v) { c.prune.max_iterations = parse_int<int>(k, v); }},
        {"prune.flip_probability",
         [](RunConfig& c, const auto& k, const auto& v) { c.prune.flip_probability = parse_double(k, v); }},
        {"prune.selection",
         [](RunConfig& c, const auto&, const auto& v) { c.prune.selection_rule = ensemble::parse_selection_rule(v); }},
        {"prune.loss_term",
         [](RunConfig& c, const auto&, const auto& v) { c.prune.loss_term = ensemble::parse_loss_term(v); }},
        {"prune.objective_split", [](RunConfig& c, const auto& k, const auto& v) {
             if (v != "valid" && v != "train") throw ConfigError(k + ": expected valid or train, got '" + v + "'");
             c.prune_on_train = (v == "train");
         }},
        {"bench.pool_sizes",
         [](RunConfig& c, const auto& k, const auto& v) { c.bench_pool_sizes = parse_int_list(k, v); }},
        {"bench.repeats", [](RunConfig& c, const auto& k, const auto& v) { c.bench_repeats = parse_int<int>(k, v); }},
    };
    return table;
}

json stat_to_json(const Stat& s)
{
    json j;
    j["mean"] = s.mean;
    j["se"] = s.standard_error ? json(*s.standard_error) : json("NA");
    j["n"] = s.count;
    char buf[64];
    if (s.standard_error)
        std::snprintf(buf, sizeof(buf), "%.2f±%.2f", s.mean, *s.standard_error);
    else
        std::snprintf(buf, sizeof(buf), "%.2f±NA", s.mean);
    j["formatted"] = buf;
    return j;
}

std::optional<IntervalBatch> original_units(const Model& model, const ensemble::EvalReport& report,
                                            const Eigen::VectorXd& targets)
{
    const IntervalBatch b = make_batch(report.bounds, targets);
    if (!model.normalize_targets) return b;
    if (model.norm.target.min == model.norm.target.max) return std::nullopt;
    return data::denormalize_bounds(b, model.norm.target);
}

} // namespace

void RunConfig::validate() const
{
    std::vector<std::string> errors;
    auto check = [&](const auto& fn) {
        try {
            fn();
        } catch (const ConfigError& e) {
            errors.emplace_back(e.what());
        }
    };
    check([&] { split.validate(); });
    for (auto& e : train.errors()) errors.push_back(std::move(e));
    check([&] { prune.validate(); });
    if (data.kind == "csv" && data.path.empty()) errors.emplace_back("data.path is required when data.source = csv");
    if (data.kind != "csv" && data.n < 1) errors.emplace_back("data.n must be at least 1");
    if (data.x_min && data.x_max && !(*data.x_min < *data.x_max)) errors.emplace_back("data.x_min must be below data.x_max");
    if (threads < 1) errors.emplace_back("threads must be at least 1");
    if (timing_repeats < 1) errors.emplace_back("timing_repeats must be at least 1");
    if (bench_repeats < 1) errors.emplace_back("bench.repeats must be at least 1");
    for (int p : bench_pool_sizes)
        if (p < 1) errors.emplace_back("bench.pool_sizes entries must be positive");
    if (errors.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
}

void set_option(RunConfig& cfg, const std::string& key, const std::string& value)
{
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown configuration key '" + key + "'");
    it->second(cfg, key, trim(value));
}

void apply_options(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& options)
{
    std::vector<std::string> errors;
    for (const auto& [k, v] : options) {
        try {
            set_option(cfg, k, v);
        } catch (const ConfigError& e) {
            errors.emplace_back(e.what());
        }
    }
    if (errors.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text, const std::string& origin)
{
    std::vector<std::pair<std::string, std::string>> out;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::map<std::string, std::string> describe(const RunConfig& c)
{
    std::map<std::string, std::string> m;
    m["seed"] = std::to_string(c.seed);
    m["timing_repeats"] = std::to_string(c.timing_repeats);
    m["data.source"] = c.data.kind;
    if (c.data.kind == "csv") {
        m["data.path"] = c.data.path;
        m["data.target_column"] = c.data.target_column;
    } else {
        m["data.n"] = std::to_string(c.data.n);
        if (c.data.kind == "cubic") m["data.noise_std"] = fmt(c.data.noise_std);
        if (c.data.kind == "exp") m["data.rate"] = fmt(c.data.rate);
        if (c.data.x_min) m["data.x_min"] = fmt(*c.data.x_min);
        if (c.data.x_max) m["data.x_max"] = fmt(*c.data.x_max);
    }
    m["data.normalize_targets"] = c.data.normalize_targets ? "true" : "false";
    m["split.train"] = fmt(c.split.train_fraction);
    m["split.valid"] = fmt(c.split.valid_fraction);
    m["split.test"] = fmt(c.split.test_fraction);
    m["model.hidden"] = join(c.train.hidden);
    m["model.activation"] = nnet::to_string(c.train.resolved_activation());
    m["model.bounds"] = nnet::to_string(c.train.bounds);
    m["model.dropout_retention"] = fmt(c.train.dropout_retention);
    m["train.epochs"] = std::to_string(c.train.epochs);
    m["train.batch_size"] = std::to_string(c.train.batch_size);
    m["train.pool_size"] = std::to_string(c.train.pool_size);
    m["train.optimizer"] = nnet::to_string(c.train.optimizer.kind);
    m["train.learning_rate"] = fmt(c.train.optimizer.learning_rate);
    m["train.beta1"] = fmt(c.train.optimizer.beta1);
    m["train.beta2"] = fmt(c.train.optimizer.beta2);
    m["train.epsilon"] = fmt(c.train.optimizer.epsilon);
    m["loss.confidence"] = fmt(c.train.loss.confidence);
    m["loss.penalty_c"] = fmt(c.train.loss.penalty_c);
    m["loss.softness"] = fmt(c.train.loss.softness);
    m["prune.enabled"] = c.prune_enabled ? "true" : "false";
    m["prune.max_iterations"] = std::to_string(c.prune.max_iterations);
    m["prune.flip_probability"] = fmt(c.prune.flip_probability);
    m["prune.selection"] = ensemble::to_string(c.prune.selection_rule);
    m["prune.loss_term"] = ensemble::to_string(c.prune.loss_term);
    m["prune.objective_split"] = c.prune_on_train ? "train" : "valid";
    m["bench.pool_sizes"] = join(c.bench_pool_sizes);
    m["bench.repeats"] = std::to_string(c.bench_repeats);
    return m;
}

data::Dataset load_source(const DataSource& src, std::uint64_t seed)
{
    if (src.kind == "csv")
        return data::load_csv(src.path, src.target_column.empty() ? data::TargetColumn::last()
                                                                  : data::TargetColumn::named(src.target_column));
    if (src.kind == "cubic")
        return data::gen_cubic(src.n, src.noise_std, {src.x_min.value_or(-4.0), src.x_max.value_or(4.0)}, seed);
    if (src.kind == "exp")
        return data::gen_exp(src.n, src.rate, {src.x_min.value_or(0.0), src.x_max.value_or(3.0)}, seed);
    throw ConfigError("unknown data source '" + src.kind + "'");
}

RunSeeds derive_run_seeds(std::uint64_t seed)
{
    return {derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 3), derive_seed(seed, 4)};
}

RunResult run_pipeline(const RunConfig& cfg)
{
    cfg.validate();
    const RunSeeds seeds = derive_run_seeds(cfg.seed);
    using clock = std::chrono::steady_clock;

    RunResult r;
    const data::Dataset raw = load_source(cfg.data, seeds.data);
    data::SplitSpec spec = cfg.split;
    spec.seed = seeds.split;
    r.raw = data::split(raw, spec);

    Model& model = r.model;
    model.norm = data::fit_normalization(r.raw.train);
    model.normalize_targets = cfg.data.normalize_targets;
    model.feature_names = raw.feature_names;
    model.target_name = raw.target_name;
    r.normalized.train = normalize_for_model(model, r.raw.train);
    r.normalized.valid = normalize_for_model(model, r.raw.valid);
    r.normalized.test = normalize_for_model(model, r.raw.test);
    r.normalized.train_rows = r.raw.train_rows;
    r.normalized.valid_rows = r.raw.valid_rows;
    r.normalized.test_rows = r.raw.test_rows;

    const auto learner_seeds = ensemble::derive_learner_seeds(seeds.learners, static_cast<std::size_t>(cfg.train.pool_size));
    auto t0 = clock::now();
    model.pool = ensemble::train_pool(r.normalized.train, cfg.train, learner_seeds, cfg.threads);
    r.train_seconds = std::chrono::duration<double>(clock::now() - t0).count();

    const auto& loss = cfg.train.loss;
    r.test_unpruned = ensemble::evaluate(model.pool, r.normalized.test, loss, cfg.timing_repeats);

    if (cfg.prune_enabled) {
        ensemble::PruneConfig pc = cfg.prune;
        pc.rng_seed = seeds.prune;
        t0 = clock::now();
        r.prune = ensemble::pareto_prune(model.pool, cfg.prune_on_train ? r.normalized.train : r.normalized.valid,
                                         pc, loss);
        r.prune_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        r.test = ensemble::evaluate(model.pool, r.normalized.test, loss, cfg.timing_repeats);
    } else {
        r.test = r.test_unpruned;
    }
    return r;
}

json eval_to_json(const ensemble::EvalReport& report, bool with_timings)
{
    const auto& m = report.metrics;
    json j;
    j["ensemble_size"] = report.ensemble_size;
    j["selected"] = report.selected;
    j["samples"] = report.bounds.size();
    j["metrics"] = {{"picp_hard", m.picp_hard},
                    {"picp_soft", m.picp_soft},
                    {"mpiw_all", m.mpiw_all},
                    {"mpiw_captured", m.mpiw_captured},
                    {"mpiw_mbpep_soft", m.mpiw_mbpep_soft},
                    {"loss_mbpep", m.loss_mbpep},
                    {"loss_lube", m.loss_lube ? json(*m.loss_lube) : json(nullptr)}};
    j["lube_normalizer"] = "batch_mean_width";
    if (with_timings) j["predict_seconds"] = report.predict_seconds;
    return j;
}

namespace {

json eval_with_units(const ensemble::EvalReport& report, const Model& model, const Eigen::VectorXd& targets,
                     bool with_timings)
{
    json j = eval_to_json(report, with_timings);
    if (const auto orig = original_units(model, report, targets)) {
        j["original_units"] = {{"picp_hard", piloss::picp_hard(*orig)},
                               {"mpiw_all", piloss::mpiw_all(*orig)},
                               {"mpiw_captured", piloss::mpiw_captured(*orig)}};
    }
    return j;
}

json config_json(const RunConfig& cfg)
{
    json j = json::object();
    for (const auto& [k, v] : describe(cfg)) j[k] = v;
    return j;
}

} // namespace

json train_report(const RunConfig& cfg, const RunResult& r, bool with_timings)
{
    json j;
    j["schema"] = kReportVersion;
    j["command"] = "train";
    j["config"] = config_json(cfg);
    j["data"] = {{"rows", r.raw.train.size() + r.raw.valid.size() + r.raw.test.size()},
                 {"features", r.raw.train.dim()},
                 {"train", r.raw.train.size()},
                 {"valid", r.raw.valid.size()},
                 {"test", r.raw.test.size()},
                 {"normalized_targets", r.model.normalize_targets}};
    const auto& pool = r.model.pool;
    j["pool_size"] = cfg.train.pool_size;
    j["trained"] = pool.size();
    j["bootstrap_seeds"] = pool.bootstrap_seeds;
    j["failures"] = json::array();
    for (const auto& f : pool.failures)
        j["failures"].push_back({{"learner", f.learner_index}, {"epoch", f.epoch}, {"message", f.message}});
    j["selection_mask"] = ensemble::mask_string(pool.selection_mask);

    json prune;
    prune["enabled"] = r.prune.has_value();
    if (r.prune) {
        const auto& p = *r.prune;
        prune["objective_split"] = cfg.prune_on_train ? "train" : "valid";
        prune["selection_rule"] = ensemble::to_string(cfg.prune.selection_rule);
        prune["loss_term"] = ensemble::to_string(cfg.prune.loss_term);
        prune["chosen_mask"] = ensemble::mask_string(p.chosen);
        prune["chosen_f"] = p.chosen_f;
        prune["full_f"] = p.full_f;
        prune["iterations"] = p.archive.iterations_run;
        prune["evaluations"] = p.evaluations;
        auto front = p.archive.entries();
        std::sort(front.begin(), front.end(), [](const auto& a, const auto& b) {
            return a.size != b.size ? a.size < b.size : a.mask < b.mask;
        });
        prune["front"] = json::array();
        for (const auto& e : front)
            prune["front"].push_back({{"mask", ensemble::mask_string(e.mask)}, {"f", e.f}, {"size", e.size}});
    }
    j["prune"] = prune;
    j["test"] = eval_with_units(r.test, r.model, r.normalized.test.targets, with_timings);
    j["test_unpruned"] = eval_with_units(r.test_unpruned, r.model, r.normalized.test.targets, with_timings);
    if (with_timings) j["timings"] = {{"train_seconds", r.train_seconds}, {"prune_seconds", r.prune_seconds}};
    return j;
}

json eval_report(const Model& model, const std::string& data_path, const ensemble::EvalReport& report,
                 const Eigen::VectorXd& normalized_targets, bool with_timings)
{
    json j;
    j["schema"] = kReportVersion;
    j["command"] = "eval";
    j["data"] = {{"path", data_path}, {"rows", report.bounds.size()}};
    j["selection_mask"] = ensemble::mask_string(model.pool.selection_mask);
    j["loss"] = train_config_to_json(model.pool.config)["loss"];
    j["test"] = eval_with_units(report, model, normalized_targets, with_timings);
    return j;
}

void write_trace_csv(const Model& model, const data::Dataset& raw, const ensemble::EvalReport& report,
                     const std::string& path)
{
    const Eigen::VectorXd norm_targets = normalize_for_model(model, raw).targets;
    const auto orig = original_units(model, report, norm_targets);
    const IntervalBatch b = orig ? *orig : make_batch(report.bounds, norm_targets);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write trace file '" + path + "'");
    for (Eigen::Index c = 0; c < raw.dim(); ++c) {
        const auto idx = static_cast<std::size_t>(c);
        out << (idx < raw.feature_names.size() ? raw.feature_names[idx] : "x" + std::to_string(c)) << ',';
    }
    out << "y,y_lower,y_upper\n";
    for (Eigen::Index i = 0; i < raw.size(); ++i) {
        for (Eigen::Index c = 0; c < raw.dim(); ++c) out << fmt(raw.features(i, c)) << ',';
        out << fmt(orig ? raw.targets[i] : b.target[i]) << ',' << fmt(b.lower[i]) << ',' << fmt(b.upper[i]) << '\n';
    }
    if (!out) throw RuntimeFailure("write to '" + path + "' failed");
}

Stat summarize(const std::vector<double>& values)
{
    Stat s;
    s.count = values.size();
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() >= 2) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
        s.standard_error = sd / std::sqrt(static_cast<double>(values.size()));
    }
    return s;
}

BenchResult run_bench(const RunConfig& cfg)
{
    cfg.validate();
    BenchResult out;
    for (int pool_size : cfg.bench_pool_sizes) {
        BenchPoolResult pr;
        pr.pool_size = pool_size;
        for (int i = 0; i < cfg.bench_repeats; ++i) {
            RunConfig run = cfg;
            run.seed = cfg.seed + static_cast<std::uint64_t>(i);
            run.train.pool_size = pool_size;
            try {
                RunResult r = run_pipeline(run);
                pr.runs.push_back({run.seed, std::move(r.test), std::move(r.test_unpruned)});
            } catch (const ConfigError&) {
                throw;
            } catch (const Error& e) {
                pr.failures.push_back("seed " + std::to_string(run.seed) + ": " + e.what());
            }
        }
        out.pools.push_back(std::move(pr));
    }
    return out;
}

json bench_report(const RunConfig& cfg, const BenchResult& result)
{
    using Getter = std::function<std::optional<double>(const ensemble::EvalReport&)>;
    const std::vector<std::pair<std::string, Getter>> metrics = {
        {"loss_mbpep", [](const auto& e) { return std::optional(e.metrics.loss_mbpep); }},
        {"loss_lube", [](const auto& e) { return e.metrics.loss_lube; }},
        {"picp_hard", [](const auto& e) { return std::optional(e.metrics.picp_hard); }},
        {"picp_soft", [](const auto& e) { return std::optional(e.metrics.picp_soft); }},
        {"mpiw_all", [](const auto& e) { return std::optional(e.metrics.mpiw_all); }},
        {"mpiw_captured", [](const auto& e) { return std::optional(e.metrics.mpiw_captured); }},
        {"ensemble_size", [](const auto& e) { return std::optional(static_cast<double>(e.ensemble_size)); }},
        {"predict_seconds", [](const auto& e) { return std::optional(e.predict_seconds); }},
    };
    auto aggregate = [&](const std::vector<BenchRun>& runs, bool pruned) {
        json j;
        for (const auto& [name, get] : metrics) {
            std::vector<double> values;
            for (const auto& run : runs)
                if (auto v = get(pruned ? run.pruned : run.unpruned)) values.push_back(*v);
            j[name] = stat_to_json(summarize(values));
        }
        return j;
    };

    json j;
    j["schema"] = kReportVersion;
    j["command"] = "bench";
    j["config"] = config_json(cfg);
    j["repeats"] = cfg.bench_repeats;
    j["pools"] = json::array();
    for (const auto& pr : result.pools) {
        json p;
        p["pool_size"] = pr.pool_size;
        p["runs"] = pr.runs.size();
        p["failure_count"] = pr.failures.size();
        p["failures"] = pr.failures;
        p["pruned"] = aggregate(pr.runs, true);
        p["unpruned"] = aggregate(pr.runs, false);
        p["per_run"] = json::array();
        for (const auto& run : pr.runs) {
            auto brief = [](const ensemble::EvalReport& e) {
                return json{{"picp_hard", e.metrics.picp_hard},
                            {"mpiw_all", e.metrics.mpiw_all},
                            {"mpiw_captured", e.metrics.mpiw_captured},
                            {"loss_mbpep", e.metrics.loss_mbpep},
                            {"loss_lube", e.metrics.loss_lube ? json(*e.metrics.loss_lube) : json(nullptr)},
                            {"ensemble_size", e.ensemble_size},
                            {"selected", e.selected},
                            {"predict_seconds", e.predict_seconds}};
            };
            p["per_run"].push_back({{"seed", run.seed}, {"pruned", brief(run.pruned)}, {"unpruned", brief(run.unpruned)}});
        }
        j["pools"].push_back(std::move(p));
    }
    return j;
}

} // namespace mbpep::pipeline
