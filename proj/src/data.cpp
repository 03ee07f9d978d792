#include "mbpep/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mbpep/error.hpp"
#include "mbpep/random.hpp"

namespace mbpep::data {

namespace {

void check_range(std::pair<double, double> r)
{
    if (!std::isfinite(r.first) || !std::isfinite(r.second) || !(r.first < r.second))
        throw ConfigError("x range must be finite with lo < hi");
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view line)
{
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return cells;
}

bool is_blank(std::string_view s) { return trim(s).empty(); }

double scale(double v, const MinMax& mm)
{
    if (mm.max == mm.min) return 0.5;
    return (v - mm.min) / (mm.max - mm.min);
}

double unscale(double v, const MinMax& mm)
{
    if (mm.max == mm.min) return mm.min;
    return mm.min + v * (mm.max - mm.min);
}

std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

Dataset make_1d(std::size_t n, const char* name)
{
    if (n < 1) throw ConfigError("generator needs n >= 1");
    Dataset ds;
    ds.features.resize(static_cast<Eigen::Index>(n), 1);
    ds.targets.resize(static_cast<Eigen::Index>(n));
    ds.feature_names = {"x"};
    ds.target_name = name;
    return ds;
}

} // namespace

void validate(const Dataset& ds)
{
    if (ds.size() < 1) throw DataError("dataset has no rows");
    if (ds.dim() < 1) throw DataError("dataset has no feature columns");
    if (ds.features.rows() != ds.size()) throw DataError("feature and target row counts differ");
    if (!ds.features.allFinite() || !ds.targets.allFinite()) throw DataError("dataset contains non-finite values");
}

Dataset gen_cubic(std::size_t n, double noise_std, std::pair<double, double> x_range, std::uint64_t seed)
{
    check_range(x_range);
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("noise_std must be non-negative");
    Dataset ds = make_1d(n, "y");
    Rng rng(seed);
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        const double x = rng.uniform(x_range.first, x_range.second);
        const double eps = rng.normal();
        ds.features(i, 0) = x;
        ds.targets[i] = x * x * x + noise_std * eps;
    }
    return ds;
}

Dataset gen_exp(std::size_t n, double rate, std::pair<double, double> x_range, std::uint64_t seed)
{
    check_range(x_range);
    if (!(rate > 0.0)) throw ConfigError("exponential noise rate must be positive");
    Dataset ds = make_1d(n, "y");
    Rng rng(seed);
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        const double x = rng.uniform(x_range.first, x_range.second);
        ds.features(i, 0) = x;
        ds.targets[i] = std::exp(x) + rng.exponential(rate);
    }
    return ds;
}

Dataset load_csv(const std::string& path, const TargetColumn& target)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");

    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        for (auto cell : split_commas(line)) header.emplace_back(cell);
        break;
    }
    if (header.empty()) throw DataError(path + ": missing header row");
    if (header.size() < 2) throw DataError(path + ": need at least one feature column and a target column");

    std::size_t target_col = header.size() - 1;
    if (target.name) {
        const auto it = std::find(header.begin(), header.end(), *target.name);
        if (it == header.end()) throw DataError(path + ": no column named '" + *target.name + "'");
        target_col = static_cast<std::size_t>(it - header.begin());
    }

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        const auto cells = split_commas(line);
        if (cells.size() != header.size())
            throw DataError(path + ": row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
        std::vector<double> values(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto cell = cells[c];
            double v = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size())
                throw CsvParseError(path, line_no, c + 1, "non-numeric cell '" + std::string(cell) + "'");
            if (!std::isfinite(v)) throw CsvParseError(path, line_no, c + 1, "non-finite value");
            values[c] = v;
        }
        rows.push_back(std::move(values));
    }
    if (rows.empty()) throw DataError(path + ": no data rows");

    Dataset ds;
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = static_cast<Eigen::Index>(header.size() - 1);
    ds.features.resize(n, d);
    ds.targets.resize(n);
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c == target_col)
            ds.target_name = header[c];
        else
            ds.feature_names.push_back(header[c]);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index f = 0;
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (c == target_col)
                ds.targets[i] = rows[i][c];
            else
                ds.features(i, f++) = rows[i][c];
        }
    }
    return ds;
}

void write_csv(const Dataset& ds, const std::string& path)
{
    validate(ds);
    std::ostringstream out;
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
        const auto idx = static_cast<std::size_t>(j);
        out << (idx < ds.feature_names.size() ? ds.feature_names[idx] : "x" + std::to_string(j)) << ',';
    }
    out << ds.target_name << '\n';
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        for (Eigen::Index j = 0; j < ds.dim(); ++j) out << format_double(ds.features(i, j)) << ',';
        out << format_double(ds.targets[i]) << '\n';
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw RuntimeFailure("cannot write '" + path + "'");
    file << out.str();
    if (!file) throw RuntimeFailure("write to '" + path + "' failed");
}

Normalization fit_normalization(const Dataset& ds)
{
    validate(ds);
    Normalization norm;
    for (Eigen::Index j = 0; j < ds.dim(); ++j)
        norm.features.push_back({ds.features.col(j).minCoeff(), ds.features.col(j).maxCoeff()});
    norm.target = {ds.targets.minCoeff(), ds.targets.maxCoeff()};
    return norm;
}

Dataset apply_normalization(const Dataset& ds, const Normalization& norm)
{
    validate(ds);
    if (static_cast<Eigen::Index>(norm.features.size()) != ds.dim())
        throw DataError("normalization has " + std::to_string(norm.features.size()) + " feature columns, data has " +
                        std::to_string(ds.dim()));
    Dataset out = ds;
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
        const MinMax& mm = norm.features[static_cast<std::size_t>(j)];
        for (Eigen::Index i = 0; i < ds.size(); ++i) out.features(i, j) = scale(ds.features(i, j), mm);
    }
    for (Eigen::Index i = 0; i < ds.size(); ++i) out.targets[i] = scale(ds.targets[i], norm.target);
    out.norm = norm;
    out.normalized = true;
    return out;
}

Dataset normalize(const Dataset& ds, const Dataset& fit_on)
{
    if (fit_on.dim() != ds.dim()) throw DataError("normalize: column count mismatch");
    return apply_normalization(ds, fit_normalization(fit_on));
}

Dataset denormalize(const Dataset& ds)
{
    if (!ds.normalized) return ds;
    Dataset out = ds;
    for (Eigen::Index j = 0; j < ds.dim(); ++j) {
        const MinMax& mm = ds.norm.features[static_cast<std::size_t>(j)];
        for (Eigen::Index i = 0; i < ds.size(); ++i) out.features(i, j) = unscale(ds.features(i, j), mm);
    }
    for (Eigen::Index i = 0; i < ds.size(); ++i) out.targets[i] = unscale(ds.targets[i], ds.norm.target);
    out.normalized = false;
    return out;
}

IntervalBatch denormalize_bounds(const IntervalBatch& batch, const MinMax& target_norm)
{
    if (target_norm.max == target_norm.min)
        throw DataError("cannot denormalize bounds: target normalization is degenerate (min == max)");
    const double span = target_norm.max - target_norm.min;
    auto map = [&](const Eigen::VectorXd& v) { return Eigen::VectorXd((v.array() * span + target_norm.min).matrix()); };
    return IntervalBatch{map(batch.lower), map(batch.upper), map(batch.target)};
}

void SplitSpec::validate() const
{
    for (double f : {train_fraction, valid_fraction, test_fraction})
        if (!(f > 0.0 && f < 1.0)) throw ConfigError("split fractions must each lie in (0,1)");
    if (std::abs(train_fraction + valid_fraction + test_fraction - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
}

Dataset select_rows(const Dataset& ds, const std::vector<std::size_t>& rows)
{
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.dim());
    out.targets.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = static_cast<Eigen::Index>(rows[i]);
        if (src >= ds.size()) throw DataError("row index out of range");
        out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(src);
        out.targets[static_cast<Eigen::Index>(i)] = ds.targets[src];
    }
    out.feature_names = ds.feature_names;
    out.target_name = ds.target_name;
    out.norm = ds.norm;
    out.normalized = ds.normalized;
    return out;
}

Splits split(const Dataset& ds, const SplitSpec& spec)
{
    spec.validate();
    validate(ds);
    const auto n = static_cast<std::size_t>(ds.size());
    const auto n_valid = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.valid_fraction + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.test_fraction + 1e-9));
    if (n_valid < 1 || n_test < 1 || n_valid + n_test >= n)
        throw DataError("dataset of " + std::to_string(n) + " rows is too small to give every split a sample");
    const std::size_t n_train = n - n_valid - n_test;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(spec.seed);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    Splits s;
    s.train_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.valid_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                        order.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
    s.test_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), order.end());
    s.train = select_rows(ds, s.train_rows);
    s.valid = select_rows(ds, s.valid_rows);
    s.test = select_rows(ds, s.test_rows);
    return s;
}

} // namespace mbpep::data
