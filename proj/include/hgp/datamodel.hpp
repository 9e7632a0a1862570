#pragma once

// Dataset ingestion, standardization and fold assignment.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hgp/error.hpp"

namespace hgp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Dataset {
    std::string name;
    MatrixXd X;  // n x d
    VectorXd y;  // entries in {-1, +1}
    // Raw label strings mapped to -1 and +1, kept for reporting.
    std::string negative_label = "-1";
    std::string positive_label = "1";

    [[nodiscard]] Eigen::Index n() const { return X.rows(); }
    [[nodiscard]] Eigen::Index d() const { return X.cols(); }
};

inline void validate(const Dataset& ds) {
    if (ds.X.rows() != ds.y.size()) {
        throw InputError("dataset '" + ds.name + "': X has " + std::to_string(ds.X.rows()) +
                         " rows but y has " + std::to_string(ds.y.size()) + " labels");
    }
    if (!ds.X.allFinite()) throw InputError("dataset '" + ds.name + "': non-finite feature value");
    for (Eigen::Index i = 0; i < ds.y.size(); ++i) {
        if (ds.y[i] != 1.0 && ds.y[i] != -1.0) {
            throw InputError("dataset '" + ds.name + "': label at row " + std::to_string(i) +
                             " is not -1 or +1");
        }
    }
}

inline Dataset subset(const Dataset& ds, std::span<const Eigen::Index> rows) {
    Dataset out;
    out.name = ds.name;
    out.negative_label = ds.negative_label;
    out.positive_label = ds.positive_label;
    out.X.resize(static_cast<Eigen::Index>(rows.size()), ds.d());
    out.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.X.row(static_cast<Eigen::Index>(r)) = ds.X.row(rows[r]);
        out.y[static_cast<Eigen::Index>(r)] = ds.y[rows[r]];
    }
    return out;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n\"'");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n\"'");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.emplace_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

inline std::optional<double> parse_double(std::string_view s) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
    return value;
}

}  // namespace detail

/// Which CSV column holds the label: a 0-based index, a header name, or the last column.
struct LabelColumn {
    enum class Kind { Index, Name, Last };
    Kind kind = Kind::Last;
    std::size_t index = 0;
    std::string name;

    static LabelColumn last() { return {}; }
    static LabelColumn at(std::size_t i) { return {Kind::Index, i, {}}; }
    static LabelColumn named(std::string n) { return {Kind::Name, 0, std::move(n)}; }

    /// "last", a non-negative integer, or anything else as a header name.
    static LabelColumn parse(std::string_view text) {
        if (text == "last") return last();
        std::size_t i = 0;
        const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), i);
        if (ec == std::errc{} && ptr == text.data() + text.size()) return at(i);
        return named(std::string(text));
    }
};

struct LabelEncoding {
    VectorXd y;
    std::string negative_label;
    std::string positive_label;
};

/// Maps exactly two distinct label strings onto {-1,+1}. Numeric labels order numerically,
/// anything else lexicographically; the smaller value becomes -1.
inline LabelEncoding encode_labels(std::span<const std::string> raw) {
    std::set<std::string> distinct(raw.begin(), raw.end());
    if (distinct.size() != 2) {
        throw InputError("label column must contain exactly two distinct values, found " +
                         std::to_string(distinct.size()));
    }
    std::string lo = *distinct.begin();
    std::string hi = *std::next(distinct.begin());
    const auto a = detail::parse_double(lo);
    const auto b = detail::parse_double(hi);
    if (a && b && *b < *a) std::swap(lo, hi);

    LabelEncoding enc;
    enc.negative_label = lo;
    enc.positive_label = hi;
    enc.y.resize(static_cast<Eigen::Index>(raw.size()));
    for (std::size_t i = 0; i < raw.size(); ++i) {
        enc.y[static_cast<Eigen::Index>(i)] = raw[i] == lo ? -1.0 : 1.0;
    }
    return enc;
}

namespace detail {

struct CsvTable {
    std::vector<std::string> header;  // empty when the file has none
    std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    CsvTable table;
    std::string line;
    std::size_t width = 0;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        auto cells = split_csv_line(line);
        if (width == 0) width = cells.size();
        if (cells.size() != width) {
            throw InputError("'" + path + "' line " + std::to_string(line_no) + ": expected " +
                             std::to_string(width) + " columns, found " + std::to_string(cells.size()));
        }
        table.rows.push_back(std::move(cells));
    }
    if (table.rows.empty()) throw InputError("'" + path + "' contains no rows");
    return table;
}

inline std::string stem(const std::string& path) {
    auto base = path.substr(path.find_last_of('/') + 1);
    return base.substr(0, base.find('.'));
}

}  // namespace detail

/// Reads a CSV with one label column and numeric features. A first row whose feature cells are
/// not all numeric is taken as a header. Features are returned unstandardized.
inline Dataset load_csv(const std::string& path, const LabelColumn& label) {
    auto table = detail::read_csv_table(path);
    const std::size_t width = table.rows.front().size();
    if (width < 2) throw InputError("'" + path + "' needs at least one feature and one label column");

    std::size_t label_col = width - 1;
    bool has_header = false;
    if (label.kind == LabelColumn::Kind::Name) {
        const auto& first = table.rows.front();
        const auto it = std::find(first.begin(), first.end(), label.name);
        if (it == first.end()) throw InputError("label column '" + label.name + "' not found in header");
        label_col = static_cast<std::size_t>(it - first.begin());
        has_header = true;
    } else {
        if (label.kind == LabelColumn::Kind::Index) label_col = label.index;
        if (label_col >= width) {
            throw InputError("label column " + std::to_string(label_col) + " out of range (" +
                             std::to_string(width) + " columns)");
        }
        const auto& first = table.rows.front();
        for (std::size_t c = 0; c < width; ++c) {
            if (c != label_col && !detail::parse_double(first[c])) has_header = true;
        }
    }
    if (has_header) {
        table.header = std::move(table.rows.front());
        table.rows.erase(table.rows.begin());
    }
    if (table.rows.empty()) throw InputError("'" + path + "' has a header but no data rows");

    const auto n = static_cast<Eigen::Index>(table.rows.size());
    const auto d = static_cast<Eigen::Index>(width - 1);
    Dataset ds;
    ds.name = detail::stem(path);
    ds.X.resize(n, d);
    std::vector<std::string> raw_labels;
    raw_labels.reserve(table.rows.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = table.rows[static_cast<std::size_t>(i)];
        Eigen::Index col = 0;
        for (std::size_t c = 0; c < width; ++c) {
            if (c == label_col) {
                raw_labels.push_back(row[c]);
                continue;
            }
            const auto v = detail::parse_double(row[c]);
            if (!v || !std::isfinite(*v)) {
                throw InputError("'" + path + "' data row " + std::to_string(i + 1) + ", column " +
                                 std::to_string(c) + ": non-numeric feature '" + row[c] + "'");
            }
            ds.X(i, col++) = *v;
        }
    }
    auto enc = encode_labels(raw_labels);
    ds.y = std::move(enc.y);
    ds.negative_label = std::move(enc.negative_label);
    ds.positive_label = std::move(enc.positive_label);
    return ds;
}

/// Feature-only CSV (no label column), used for prediction inputs. Header rows are skipped.
inline MatrixXd load_features_csv(const std::string& path) {
    auto table = detail::read_csv_table(path);
    const auto& first = table.rows.front();
    if (std::any_of(first.begin(), first.end(), [](const auto& c) { return !detail::parse_double(c); })) {
        table.rows.erase(table.rows.begin());
    }
    MatrixXd X(static_cast<Eigen::Index>(table.rows.size()),
               table.rows.empty() ? 0 : static_cast<Eigen::Index>(table.rows.front().size()));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            const auto& cell = table.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            const auto v = detail::parse_double(cell);
            if (!v || !std::isfinite(*v)) throw InputError("'" + path + "': non-numeric feature '" + cell + "'");
            X(i, j) = *v;
        }
    }
    return X;
}

/// Column-wise affine map fitted on training features. Zero-variance columns are only shifted.
struct Standardizer {
    VectorXd mean;
    VectorXd scale;

    static Standardizer fit(const MatrixXd& X) {
        Standardizer s;
        s.mean = X.colwise().mean().transpose();
        s.scale.resize(X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            const double var = (X.col(j).array() - s.mean[j]).square().mean();
            const double sd = std::sqrt(var);
            s.scale[j] = sd > 0.0 ? sd : 1.0;
        }
        return s;
    }

    [[nodiscard]] MatrixXd apply(const MatrixXd& X) const {
        if (X.cols() != mean.size()) {
            throw InputError("standardize: expected " + std::to_string(mean.size()) + " features, got " +
                             std::to_string(X.cols()));
        }
        return ((X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix();
    }
};

inline std::pair<Dataset, std::vector<Dataset>> standardize(const Dataset& train,
                                                           const std::vector<Dataset>& others) {
    for (const auto& o : others) {
        if (o.d() != train.d()) {
            throw InputError("standardize: dimension mismatch (" + std::to_string(train.d()) + " vs " +
                             std::to_string(o.d()) + ")");
        }
    }
    const auto s = Standardizer::fit(train.X);
    Dataset t = train;
    t.X = s.apply(train.X);
    std::vector<Dataset> rest;
    rest.reserve(others.size());
    for (const auto& o : others) {
        Dataset c = o;
        c.X = s.apply(o.X);
        rest.push_back(std::move(c));
    }
    return {std::move(t), std::move(rest)};
}

struct FoldSplit {
    int k = 0;
    std::vector<int> assignment;
    std::uint64_t seed = 0;

    [[nodiscard]] std::vector<Eigen::Index> test_rows(int fold) const {
        std::vector<Eigen::Index> rows;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] == fold) rows.push_back(static_cast<Eigen::Index>(i));
        }
        return rows;
    }

    [[nodiscard]] std::vector<Eigen::Index> train_rows(int fold) const {
        std::vector<Eigen::Index> rows;
        for (std::size_t i = 0; i < assignment.size(); ++i) {
            if (assignment[i] != fold) rows.push_back(static_cast<Eigen::Index>(i));
        }
        return rows;
    }
};

/// Shuffled round-robin: a seeded permutation of 0..n-1, then position i goes to fold i mod k.
inline FoldSplit make_folds(std::size_t n, int k, std::uint64_t seed) {
    if (k < 2 || static_cast<std::size_t>(k) > n) {
        throw InputError("make_folds: need 2 <= k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    FoldSplit split;
    split.k = k;
    split.seed = seed;
    split.assignment.resize(n);
    for (std::size_t i = 0; i < n; ++i) split.assignment[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    return split;
}

}  // namespace hgp
