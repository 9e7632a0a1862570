#pragma once

// Command-line front end: fit, predict, grid, cv and ais subcommands.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hgp/ais.hpp"
#include "hgp/datamodel.hpp"
#include "hgp/harness.hpp"
#include "hgp/trainer.hpp"

namespace hgp {

/// A trained classifier: hyperparameters, sites, the standardized training inputs and the
/// standardization that maps raw features into their space.
struct Model {
    Objective objective = Objective::EpLike;
    Hyperparams theta;
    double relative_jitter = kDefaultRelativeJitter;
    std::string negative_label = "-1";
    std::string positive_label = "1";
    Standardizer standardizer;
    Sites sites;
    MatrixXd X;
};

inline constexpr std::string_view kModelMagic = "hgp-model";
inline constexpr int kModelVersion = 1;

namespace detail {

inline void write_row(std::ostream& os, const Eigen::Ref<const VectorXd>& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? " " : "") << format_number(v[i]);
    os << '\n';
}

inline VectorXd read_row(std::istream& is, Eigen::Index count, const char* what) {
    std::string line;
    if (!std::getline(is, line)) throw InputError(std::string("model: missing ") + what);
    std::istringstream ss(line);
    VectorXd v(count);
    std::string tok;
    for (Eigen::Index i = 0; i < count; ++i) {
        if (!(ss >> tok)) throw InputError(std::string("model: short row for ") + what);
        v[i] = parse_number(tok);
    }
    if (ss >> tok) throw InputError(std::string("model: long row for ") + what);
    return v;
}

inline std::string expect_key(std::istream& is, std::string_view key) {
    std::string line;
    if (!std::getline(is, line)) throw InputError("model: missing '" + std::string(key) + "'");
    const auto eq = line.find('=');
    if (eq == std::string::npos || std::string_view(line).substr(0, eq) != key) {
        throw InputError("model: expected '" + std::string(key) + "=', got '" + line + "'");
    }
    return line.substr(eq + 1);
}

inline void expect_marker(std::istream& is, std::string_view marker) {
    std::string line;
    if (!std::getline(is, line) || detail::trim(line) != marker) {
        throw InputError("model: expected block '" + std::string(marker) + "'");
    }
}

}  // namespace detail

inline void write_model(std::ostream& os, const Model& m) {
    os << kModelMagic << ' ' << kModelVersion << '\n';
    os << "objective=" << to_string(m.objective) << '\n';
    os << "log_lengthscale=" << format_number(m.theta.log_lengthscale) << '\n';
    os << "log_magnitude=" << format_number(m.theta.log_magnitude) << '\n';
    os << "relative_jitter=" << format_number(m.relative_jitter) << '\n';
    os << "negative_label=" << m.negative_label << '\n';
    os << "positive_label=" << m.positive_label << '\n';
    os << "n=" << m.X.rows() << '\n';
    os << "d=" << m.X.cols() << '\n';
    os << "mean\n";
    detail::write_row(os, m.standardizer.mean);
    os << "scale\n";
    detail::write_row(os, m.standardizer.scale);
    os << "lambda1\n";
    detail::write_row(os, m.sites.lambda1);
    os << "lambda2\n";
    detail::write_row(os, m.sites.lambda2);
    os << "X\n";
    for (Eigen::Index i = 0; i < m.X.rows(); ++i) detail::write_row(os, m.X.row(i).transpose());
}

inline Model read_model(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw InputError("model: empty file");
    std::istringstream head(line);
    std::string magic;
    int version = 0;
    head >> magic >> version;
    if (magic != kModelMagic) throw InputError("model: not a model file");
    if (version != kModelVersion) throw InputError("model: unsupported version " + std::to_string(version));

    Model m;
    m.objective = parse_objective(detail::expect_key(is, "objective"));
    m.theta.log_lengthscale = parse_number(detail::expect_key(is, "log_lengthscale"));
    m.theta.log_magnitude = parse_number(detail::expect_key(is, "log_magnitude"));
    m.relative_jitter = parse_number(detail::expect_key(is, "relative_jitter"));
    m.negative_label = detail::expect_key(is, "negative_label");
    m.positive_label = detail::expect_key(is, "positive_label");
    const auto n = static_cast<Eigen::Index>(parse_number(detail::expect_key(is, "n")));
    const auto d = static_cast<Eigen::Index>(parse_number(detail::expect_key(is, "d")));
    if (n < 1 || d < 1) throw InputError("model: bad dimensions");
    detail::expect_marker(is, "mean");
    m.standardizer.mean = detail::read_row(is, d, "mean");
    detail::expect_marker(is, "scale");
    m.standardizer.scale = detail::read_row(is, d, "scale");
    detail::expect_marker(is, "lambda1");
    m.sites.lambda1 = detail::read_row(is, n, "lambda1");
    detail::expect_marker(is, "lambda2");
    m.sites.lambda2 = detail::read_row(is, n, "lambda2");
    detail::expect_marker(is, "X");
    m.X.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) m.X.row(i) = detail::read_row(is, d, "X").transpose();
    validate(m.sites, n);
    return m;
}

/// Probability of the positive label at each row of raw (unstandardized) features.
inline VectorXd predict_proba(const Model& m, const MatrixXd& raw) {
    const MatrixXd Xs = m.standardizer.apply(raw);
    const auto g = gram_relative(m.X, m.theta, m.relative_jitter);
    const auto post = assemble_marginals(g, m.sites);
    const auto pred = predict_latent(post, m.X, Xs, m.theta);
    VectorXd p(static_cast<Eigen::Index>(pred.size()));
    for (std::size_t i = 0; i < pred.size(); ++i) p[static_cast<Eigen::Index>(i)] = predictive_prob(1.0, pred[i]);
    return p;
}

namespace detail {

/// Feature matrix of a CSV for prediction: "none" means every column is a feature, otherwise the
/// label column is dropped (its values are not interpreted).
inline MatrixXd load_prediction_features(const std::string& path, const std::string& label) {
    if (label == "none") return load_features_csv(path);
    auto table = read_csv_table(path);
    const std::size_t width = table.rows.front().size();
    const auto col = LabelColumn::parse(label);
    std::size_t label_col = width - 1;
    bool has_header = false;
    if (col.kind == LabelColumn::Kind::Name) {
        const auto& first = table.rows.front();
        const auto it = std::find(first.begin(), first.end(), col.name);
        if (it == first.end()) throw InputError("label column '" + col.name + "' not found in header");
        label_col = static_cast<std::size_t>(it - first.begin());
        has_header = true;
    } else if (col.kind == LabelColumn::Kind::Index) {
        label_col = col.index;
    }
    if (label_col >= width) throw InputError("label column out of range");
    const auto& first = table.rows.front();
    for (std::size_t c = 0; c < width; ++c) {
        if (c != label_col && !parse_double(first[c])) has_header = true;
    }
    if (has_header) table.rows.erase(table.rows.begin());
    MatrixXd X(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(width - 1));
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        Eigen::Index j = 0;
        for (std::size_t c = 0; c < width; ++c) {
            if (c == label_col) continue;
            const auto& cell = table.rows[static_cast<std::size_t>(i)][c];
            const auto v = parse_double(cell);
            if (!v || !std::isfinite(*v)) throw InputError("'" + path + "': non-numeric feature '" + cell + "'");
            X(i, j++) = *v;
        }
    }
    return X;
}

/// Builds the reproducible command line recorded at the top of every output file.
class ConfigLine {
public:
    explicit ConfigLine(std::string_view subcommand) : text_("hgp " + std::string(subcommand)) {}

    ConfigLine& add(std::string_view flag, const std::string& value) {
        text_ += ' ';
        text_ += flag;
        text_ += ' ';
        text_ += value;
        return *this;
    }
    ConfigLine& add(std::string_view flag, double value) { return add(flag, format_number(value)); }
    ConfigLine& add(std::string_view flag, int value) { return add(flag, std::to_string(value)); }
    ConfigLine& add(std::string_view flag, std::uint64_t value) { return add(flag, std::to_string(value)); }
    ConfigLine& positional(const std::string& value) {
        text_ += ' ';
        text_ += value;
        return *this;
    }

    [[nodiscard]] const std::string& str() const { return text_; }

private:
    std::string text_;
};

/// Where CSV output goes: the --out file, or the given stream when no path was set.
class Sink {
public:
    Sink(const std::string& path, std::ostream& fallback) : os_(&fallback) {
        if (!path.empty()) {
            file_ = std::make_unique<std::ofstream>(path);
            if (!*file_) throw InputError("cannot open '" + path + "' for writing");
            os_ = file_.get();
        }
    }
    std::ostream& operator*() { return *os_; }

private:
    std::unique_ptr<std::ofstream> file_;
    std::ostream* os_;
};

/// "a/b/model.txt" + ".trace.csv" -> "a/b/model.trace.csv"
inline std::string sibling_path(const std::string& path, std::string_view suffix) {
    const auto slash = path.find_last_of('/');
    const auto dot = path.find_last_of('.');
    const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
    return (has_ext ? path.substr(0, dot) : path) + std::string(suffix);
}

}  // namespace detail

struct CliOptions {
    std::string data;
    std::string label = "last";
    std::string out;
    std::uint64_t seed = 0;
    std::string objective = "ep_like";
    int e_iters = -1;  // -1: subcommand default
    int m_iters = 20;
    double e_step_size = 0.1;
    double m_lr = 0.001;
    int rounds = 50;
    double tol = 1e-4;
    double lo = -1.0;
    double hi = 5.0;
    int points = 21;
    std::string methods;
    int ais_T = 8000;
    int ais_repeats = 3;
    int jobs = 1;
    double jitter = kDefaultRelativeJitter;
    std::string model;                // predict
    std::vector<double> theta_args;   // ais
};

namespace detail {

inline TrainConfig train_config(const CliOptions& o) {
    TrainConfig c;
    c.objective = parse_objective(o.objective);
    c.e_iters = o.e_iters < 0 ? 20 : o.e_iters;
    c.m_iters = o.m_iters;
    c.e_step_size = o.e_step_size;
    c.m_learning_rate = o.m_lr;
    c.outer_rounds = o.rounds;
    c.outer_tol = o.tol;
    c.seed = o.seed;
    c.relative_jitter = o.jitter;
    validate(c);
    return c;
}

inline void add_train_flags(ConfigLine& line, const TrainConfig& c, bool with_objective) {
    if (with_objective) line.add("--objective", std::string(to_string(c.objective)));
    line.add("--e-iters", c.e_iters)
        .add("--m-iters", c.m_iters)
        .add("--e-step-size", c.e_step_size)
        .add("--m-lr", c.m_learning_rate)
        .add("--rounds", c.outer_rounds)
        .add("--tol", c.outer_tol)
        .add("--jitter", c.relative_jitter);
}

inline void check_positive(int v, const char* flag) {
    if (v < 1) throw InputError(std::string(flag) + " must be at least 1");
}

inline int cmd_fit(const CliOptions& o, std::ostream& out) {
    if (o.out.empty()) throw InputError("fit: --out is required (model path)");
    const auto cfg = train_config(o);
    const auto raw = load_csv(o.data, LabelColumn::parse(o.label));
    const auto scaler = Standardizer::fit(raw.X);
    Dataset ds = raw;
    ds.X = scaler.apply(raw.X);
    const auto res = fit(ds, cfg);

    ConfigLine line("fit");
    line.add("--data", o.data).add("--label", o.label).add("--seed", o.seed);
    add_train_flags(line, cfg, true);

    Model m{cfg.objective, res.theta, cfg.relative_jitter, raw.negative_label, raw.positive_label, scaler, res.sites, ds.X};
    {
        std::ofstream f(o.out);
        if (!f) throw InputError("cannot open '" + o.out + "' for writing");
        f << "# " << line.str() << '\n';
        write_model(f, m);
    }
    const auto trace_path = sibling_path(o.out, ".trace.csv");
    std::ofstream trace(trace_path);
    if (!trace) throw InputError("cannot open '" + trace_path + "' for writing");
    trace << "# " << line.str() << '\n';
    write_trace_csv(trace, res);
    out << "fit: log_lengthscale=" << format_number(res.theta.log_lengthscale)
        << " log_magnitude=" << format_number(res.theta.log_magnitude) << " rounds=" << res.rounds.size()
        << " -> " << o.out << ", " << trace_path << '\n';
    return 0;
}

inline int cmd_predict(const CliOptions& o, std::ostream& out) {
    std::ifstream f(o.model);
    if (!f) throw InputError("cannot open model '" + o.model + "'");
    // The model file starts with its own config comment.
    if (f.peek() == '#') {
        std::string skip;
        std::getline(f, skip);
    }
    const auto m = read_model(f);
    const auto raw = load_prediction_features(o.data, o.label);
    const auto p = predict_proba(m, raw);

    ConfigLine line("predict");
    line.add("--data", o.data).add("--label", o.label).positional(o.model);
    Sink sink(o.out, out);
    *sink << "# " << line.str() << '\n' << "row,prob_positive,predicted_label\n";
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        *sink << i << ',' << format_number(p[i]) << ',' << (p[i] >= 0.5 ? m.positive_label : m.negative_label) << '\n';
    }
    return 0;
}

inline int cmd_grid(const CliOptions& o, std::ostream& out) {
    GridSpec spec;
    spec.lo = o.lo;
    spec.hi = o.hi;
    spec.points = o.points;
    spec.methods = parse_methods(o.methods.empty() ? "vi,ep,ours" : o.methods);
    validate(spec);
    SurfaceConfig sc;
    sc.e_iters = o.e_iters < 0 ? 200 : o.e_iters;
    sc.e_step_size = o.e_step_size;
    sc.ais.T = o.ais_T;
    sc.ais.repeats = o.ais_repeats;
    sc.ais.seed = o.seed;
    sc.relative_jitter = o.jitter;
    sc.jobs = o.jobs;
    if (!(sc.e_step_size >= 0.0 && sc.e_step_size <= 1.0)) throw InputError("--e-step-size must lie in [0, 1]");
    if (sc.e_iters < 0) throw InputError("--e-iters must be non-negative");
    if (!(sc.relative_jitter >= 0.0)) throw InputError("--jitter must be non-negative");
    check_positive(sc.ais.T, "--ais-T");
    check_positive(sc.ais.repeats, "--ais-repeats");

    const auto ds = load_csv(o.data, LabelColumn::parse(o.label));
    const auto split = make_folds(static_cast<std::size_t>(ds.n()), 5, o.seed);
    auto [train, rest] = standardize(subset(ds, split.train_rows(0)), {subset(ds, split.test_rows(0))});
    const auto records = grid_sweep(train, rest.front(), spec, sc);

    ConfigLine line("grid");
    line.add("--data", o.data)
        .add("--label", o.label)
        .add("--seed", o.seed)
        .add("--lo", spec.lo)
        .add("--hi", spec.hi)
        .add("--points", spec.points)
        .add("--methods", join_methods(spec.methods))
        .add("--e-iters", sc.e_iters)
        .add("--e-step-size", sc.e_step_size)
        .add("--ais-T", sc.ais.T)
        .add("--ais-repeats", sc.ais.repeats)
        .add("--jitter", sc.relative_jitter);
    Sink sink(o.out, out);
    write_surface_csv(*sink, records, line.str());
    return 0;
}

inline int cmd_cv(const CliOptions& o, std::ostream& out) {
    CvConfig cfg;
    cfg.seed = o.seed;
    cfg.methods = parse_methods(o.methods.empty() ? "vi,ours" : o.methods);
    cfg.train = train_config(o);
    cfg.jobs = o.jobs;
    const auto ds = load_csv(o.data, LabelColumn::parse(o.label));
    const auto report = cross_validate(ds, cfg);

    ConfigLine line("cv");
    line.add("--data", o.data).add("--label", o.label).add("--seed", o.seed).add("--methods", join_methods(cfg.methods));
    add_train_flags(line, cfg.train, false);
    if (o.out.empty()) {
        write_cv_csv(out, report, line.str());
        write_cv_summary_csv(out, report, line.str());
        return 0;
    }
    {
        Sink sink(o.out, out);
        write_cv_csv(*sink, report, line.str());
    }
    Sink summary(sibling_path(o.out, ".summary.csv"), out);
    write_cv_summary_csv(*summary, report, line.str());
    return 0;
}

inline int cmd_ais(const CliOptions& o, std::ostream& out) {
    if (o.theta_args.size() != 2) throw InputError("ais: expected LOG_LENGTHSCALE LOG_MAGNITUDE");
    check_positive(o.ais_T, "--ais-T");
    check_positive(o.ais_repeats, "--ais-repeats");
    if (!(o.jitter >= 0.0)) throw InputError("--jitter must be non-negative");
    const Hyperparams theta{o.theta_args[0], o.theta_args[1]};
    const auto raw = load_csv(o.data, LabelColumn::parse(o.label));
    const auto [ds, unused] = standardize(raw, {});
    const auto g = gram_relative(ds.X, theta, o.jitter);
    const auto est = ais_lml(g, ds.y, {o.ais_T, o.ais_repeats, o.seed, 4.0});

    ConfigLine line("ais");
    line.add("--data", o.data)
        .add("--label", o.label)
        .add("--seed", o.seed)
        .add("--ais-T", o.ais_T)
        .add("--ais-repeats", o.ais_repeats)
        .add("--jitter", o.jitter)
        .add("--", format_number(theta.log_lengthscale))
        .positional(format_number(theta.log_magnitude));
    Sink sink(o.out, out);
    *sink << "# " << line.str() << '\n'
          << "log_lengthscale,log_magnitude,log_ml,lml_per_n,std_error\n"
          << format_number(theta.log_lengthscale) << ',' << format_number(theta.log_magnitude) << ','
          << format_number(est.log_ml) << ',' << format_number(est.log_ml / static_cast<double>(ds.n())) << ','
          << format_number(est.standard_error()) << '\n';
    return 0;
}

}  // namespace detail

/// Parses argv and runs one subcommand. Returns 0 on success, 1 on usage or input errors and 2 on
/// numerical failures.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Gaussian process classification with CVI inference and EP-like hyperparameter learning", "hgp"};
    app.require_subcommand(1);
    CliOptions o;

    auto data_flags = [&](CLI::App* sub) {
        sub->add_option("--data", o.data, "CSV file with features and a label column")->required()->check(CLI::ExistingFile);
        sub->add_option("--label", o.label, "label column: 'last', 0-based index or header name")->capture_default_str();
        sub->add_option("--out", o.out, "output path (stdout when omitted)");
        sub->add_option("--seed", o.seed, "random seed")->capture_default_str();
        sub->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
        sub->add_option("--jitter", o.jitter, "diagonal jitter relative to the kernel variance")->capture_default_str();
    };
    auto train_flags = [&](CLI::App* sub, bool with_objective) {
        if (with_objective) {
            sub->add_option("--objective", o.objective, "hyperparameter objective")
                ->check(CLI::IsMember({"elbo", "ep_like"}))
                ->capture_default_str();
        }
        sub->add_option("--e-iters", o.e_iters, "CVI iterations per E-step (default 20)");
        sub->add_option("--m-iters", o.m_iters, "gradient steps per M-step")->capture_default_str();
        sub->add_option("--e-step-size", o.e_step_size, "CVI step size")->capture_default_str();
        sub->add_option("--m-lr", o.m_lr, "M-step learning rate")->capture_default_str();
        sub->add_option("--rounds", o.rounds, "maximum VEM rounds")->capture_default_str();
        sub->add_option("--tol", o.tol, "stop when a round moves log-theta less than this")->capture_default_str();
    };
    auto ais_flags = [&](CLI::App* sub) {
        sub->add_option("--ais-T", o.ais_T, "AIS temperature steps")->capture_default_str();
        sub->add_option("--ais-repeats", o.ais_repeats, "independent AIS runs")->capture_default_str();
    };

    auto* fit_cmd = app.add_subcommand("fit", "train a classifier and write the model plus a trace CSV");
    data_flags(fit_cmd);
    train_flags(fit_cmd, true);

    auto* predict_cmd = app.add_subcommand("predict", "per-row positive-class probabilities from a model");
    predict_cmd->add_option("model", o.model, "model file written by fit")->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--data", o.data, "CSV of inputs")->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--label", o.label, "label column to drop, or 'none'")->capture_default_str();
    predict_cmd->add_option("--out", o.out, "output path (stdout when omitted)");
    predict_cmd->add_option("--jobs", o.jobs, "accepted for uniformity; prediction runs on one thread")
        ->check(CLI::PositiveNumber);

    auto* grid_cmd = app.add_subcommand("grid", "log marginal likelihood and predictive surfaces over a grid");
    data_flags(grid_cmd);
    grid_cmd->add_option("--lo", o.lo, "lowest log hyperparameter")->capture_default_str();
    grid_cmd->add_option("--hi", o.hi, "highest log hyperparameter")->capture_default_str();
    grid_cmd->add_option("--points", o.points, "grid points per axis")->capture_default_str();
    grid_cmd->add_option("--methods", o.methods, "comma-separated subset of vi,ep,ours,mcmc (default vi,ep,ours)");
    grid_cmd->add_option("--e-iters", o.e_iters, "CVI iterations per cell (default 200)");
    grid_cmd->add_option("--e-step-size", o.e_step_size, "CVI step size")->capture_default_str();
    ais_flags(grid_cmd);

    auto* cv_cmd = app.add_subcommand("cv", "5-fold cross-validated accuracy and log predictive density");
    data_flags(cv_cmd);
    train_flags(cv_cmd, false);
    cv_cmd->add_option("--methods", o.methods, "comma-separated subset of vi,ours (default vi,ours)");

    auto* ais_cmd = app.add_subcommand("ais", "AIS estimate of the log marginal likelihood at fixed hyperparameters");
    data_flags(ais_cmd);
    ais_flags(ais_cmd);
    ais_cmd->add_option("theta", o.theta_args, "LOG_LENGTHSCALE LOG_MAGNITUDE")->expected(2)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (fit_cmd->parsed()) return detail::cmd_fit(o, out);
        if (predict_cmd->parsed()) return detail::cmd_predict(o, out);
        if (grid_cmd->parsed()) return detail::cmd_grid(o, out);
        if (cv_cmd->parsed()) return detail::cmd_cv(o, out);
        if (ais_cmd->parsed()) return detail::cmd_ais(o, out);
    } catch (const NumericError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    err << app.help();
    return 1;
}

}  // namespace hgp
