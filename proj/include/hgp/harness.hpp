#pragma once

// Experiment drivers: hyperparameter grid surfaces and k-fold cross-validation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <istream>
#include <limits>
#include <mutex>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "hgp/ais.hpp"
#include "hgp/cvi.hpp"
#include "hgp/datamodel.hpp"
#include "hgp/ep.hpp"
#include "hgp/kernel.hpp"
#include "hgp/likelihood.hpp"
#include "hgp/posterior.hpp"
#include "hgp/trainer.hpp"

namespace hgp {

enum class Method { Vi, Ep, Ours, Mcmc };

inline std::string_view to_string(Method m) {
    switch (m) {
        case Method::Vi: return "vi";
        case Method::Ep: return "ep";
        case Method::Ours: return "ours";
        case Method::Mcmc: return "mcmc";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    if (s == "vi") return Method::Vi;
    if (s == "ep") return Method::Ep;
    if (s == "ours") return Method::Ours;
    if (s == "mcmc") return Method::Mcmc;
    throw InputError("unknown method '" + std::string(s) + "' (expected vi, ep, ours or mcmc)");
}

/// Comma-separated list, duplicates rejected.
inline std::vector<Method> parse_methods(std::string_view list) {
    std::vector<Method> out;
    std::size_t start = 0;
    while (start <= list.size()) {
        const auto comma = list.find(',', start);
        const auto item = detail::trim(list.substr(start, comma == std::string_view::npos ? comma : comma - start));
        if (!item.empty()) {
            const auto m = parse_method(item);
            if (std::find(out.begin(), out.end(), m) != out.end()) {
                throw InputError("method '" + std::string(item) + "' listed twice");
            }
            out.push_back(m);
        }
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    if (out.empty()) throw InputError("no methods given");
    return out;
}

inline std::string join_methods(const std::vector<Method>& ms) {
    std::string s;
    for (std::size_t i = 0; i < ms.size(); ++i) {
        if (i) s += ',';
        s += to_string(ms[i]);
    }
    return s;
}

/// Runs fn(0..count-1) on up to `jobs` threads. Each index is handled exactly once; callers write
/// results into per-index slots, so output does not depend on scheduling.
template <typename F>
void parallel_for(std::size_t count, int jobs, F&& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, count); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(failure_mu);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

/// splitmix64 finalizer; derives independent per-job seeds from (seed, job index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_number(std::string_view s) {
    s = detail::trim(s);
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    const auto v = detail::parse_double(s);
    if (!v) throw InputError("not a number: '" + std::string(s) + "'");
    return *v;
}

/// Mean log predictive probability of the true labels.
inline double mean_log_predictive(const std::vector<MarginalMoments>& pred, const VectorXd& y) {
    if (pred.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += log_predictive_prob(y[static_cast<Eigen::Index>(i)], pred[i]);
    return s / static_cast<double>(pred.size());
}

/// Fraction of points whose more probable label (ties go to +1) matches y.
inline double accuracy(const std::vector<MarginalMoments>& pred, const VectorXd& y) {
    if (pred.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double guess = predictive_prob(1.0, pred[i]) >= 0.5 ? 1.0 : -1.0;
        hits += guess == y[static_cast<Eigen::Index>(i)];
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// Latent predictive moments at the rows of Xstar for a posterior built on X at theta.
inline std::vector<MarginalMoments> predict_latent(const GaussianPosterior& post, const MatrixXd& X,
                                                   const MatrixXd& Xstar, const Hyperparams& theta) {
    const MatrixXd ks = cross_gram(X, Xstar, theta);
    const VectorXd kss = VectorXd::Constant(Xstar.rows(), theta.variance());
    return latent_predict(post, ks, kss);
}

// ---------------------------------------------------------------------------------------------
// Grid surfaces

struct GridSpec {
    double lo = -1.0;
    double hi = 5.0;
    int points = 21;
    std::vector<Method> methods{Method::Vi, Method::Ep, Method::Ours};
};

inline void validate(const GridSpec& g) {
    if (!(g.lo < g.hi)) throw InputError("grid: lo must be below hi");
    if (g.points < 2) throw InputError("grid: need at least 2 points per axis");
    if (g.methods.empty()) throw InputError("grid: no methods");
}

inline std::vector<double> axis_values(const GridSpec& g) {
    validate(g);
    std::vector<double> v(static_cast<std::size_t>(g.points));
    for (int i = 0; i < g.points; ++i) v[static_cast<std::size_t>(i)] = g.lo + (g.hi - g.lo) * i / (g.points - 1);
    return v;
}

struct SurfaceConfig {
    int e_iters = 200;  // surfaces need the CVI fixed point, not the VEM budget
    double e_step_size = 0.1;
    EpConfig ep{};
    AisConfig ais{};
    double relative_jitter = kDefaultRelativeJitter;
    int quadrature_order = kDefaultQuadratureOrder;
    int jobs = 1;
};

struct SurfaceRecord {
    double log_lengthscale = 0.0;
    double log_magnitude = 0.0;
    Method method = Method::Vi;
    double lml_per_n = 0.0;
    double lpd_per_n = 0.0;
};

/// Evaluates every requested method on every (log lengthscale, log magnitude) cell. "vi" and "ours"
/// share one CVI run per cell and therefore report the same predictive density. Failed cells are
/// recorded as NaN. Records are ordered by lengthscale, then magnitude, then method as listed.
inline std::vector<SurfaceRecord> grid_sweep(const Dataset& train, const Dataset& test, const GridSpec& spec,
                                             const SurfaceConfig& cfg) {
    validate(train);
    if (test.n() > 0) validate(test);
    const auto axis = axis_values(spec);
    const std::size_t pts = axis.size();
    const std::size_t per_cell = spec.methods.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const auto n = static_cast<double>(train.n());
    const bool want_cvi = std::any_of(spec.methods.begin(), spec.methods.end(),
                                      [](Method m) { return m == Method::Vi || m == Method::Ours; });

    std::vector<SurfaceRecord> out(pts * pts * per_cell);
    parallel_for(pts * pts, cfg.jobs, [&](std::size_t cell) {
        const Hyperparams theta{axis[cell / pts], axis[cell % pts]};
        auto slot = [&](Method m) -> SurfaceRecord& {
            const auto k = static_cast<std::size_t>(std::find(spec.methods.begin(), spec.methods.end(), m) -
                                                    spec.methods.begin());
            return out[cell * per_cell + k];
        };
        for (Method m : spec.methods) slot(m) = {theta.log_lengthscale, theta.log_magnitude, m, nan, nan};

        GramMatrix g;
        try {
            g = gram_relative(train.X, theta, cfg.relative_jitter);
        } catch (const std::exception&) {
            return;
        }
        if (want_cvi) {
            try {
                const ProbitLikelihood lik(train.y, cfg.quadrature_order);
                const auto sites = e_step(g, lik, Sites::zeros(train.n()), cfg.e_step_size, cfg.e_iters).sites;
                const auto post = assemble_marginals(g, sites);
                const double lpd = test.n() > 0 ? mean_log_predictive(predict_latent(post, train.X, test.X, theta), test.y)
                                                : nan;
                for (Method m : spec.methods) {
                    if (m == Method::Vi) slot(m) = {theta.log_lengthscale, theta.log_magnitude, m, elbo(post, lik) / n, lpd};
                    if (m == Method::Ours) slot(m) = {theta.log_lengthscale, theta.log_magnitude, m, ep_like_energy(post, sites) / n, lpd};
                }
            } catch (const std::exception&) {
            }
        }
        for (Method m : spec.methods) {
            try {
                if (m == Method::Ep) {
                    const auto res = ep_inference(g, train.y, cfg.ep);
                    const double lpd = test.n() > 0
                                           ? mean_log_predictive(predict_latent(res.posterior, train.X, test.X, theta), test.y)
                                           : nan;
                    slot(m) = {theta.log_lengthscale, theta.log_magnitude, m, ep_energy(g, res.ep_sites) / n, lpd};
                } else if (m == Method::Mcmc) {
                    AisConfig ais = cfg.ais;
                    ais.seed = mix_seed(cfg.ais.seed, cell);
                    slot(m) = {theta.log_lengthscale, theta.log_magnitude, m, ais_lml(g, train.y, ais).log_ml / n, nan};
                }
            } catch (const std::exception&) {
            }
        }
    });
    return out;
}

inline constexpr std::string_view kSurfaceHeader = "log_lengthscale,log_magnitude,method,lml_per_n,lpd_per_n";

inline void write_surface_csv(std::ostream& os, const std::vector<SurfaceRecord>& records,
                              const std::string& comment = {}) {
    if (!comment.empty()) os << "# " << comment << '\n';
    os << kSurfaceHeader << '\n';
    for (const auto& r : records) {
        os << format_number(r.log_lengthscale) << ',' << format_number(r.log_magnitude) << ',' << to_string(r.method)
           << ',' << format_number(r.lml_per_n) << ',' << format_number(r.lpd_per_n) << '\n';
    }
}

inline std::vector<SurfaceRecord> read_surface_csv(std::istream& is) {
    std::vector<SurfaceRecord> out;
    std::string line;
    bool header_seen = false;
    while (std::getline(is, line)) {
        const auto body = detail::trim(line);
        if (body.empty() || body.front() == '#') continue;
        if (!header_seen) {
            if (body != kSurfaceHeader) throw InputError("surface CSV: unexpected header '" + std::string(body) + "'");
            header_seen = true;
            continue;
        }
        const auto cells = detail::split_csv_line(body);
        if (cells.size() != 5) throw InputError("surface CSV: expected 5 columns");
        out.push_back({parse_number(cells[0]), parse_number(cells[1]), parse_method(cells[2]), parse_number(cells[3]),
                       parse_number(cells[4])});
    }
    return out;
}

/// Grid cell (lengthscale index, magnitude index) of the largest finite lml_per_n for `method`.
inline std::pair<int, int> surface_argmax(const std::vector<SurfaceRecord>& records, Method method,
                                          const GridSpec& spec) {
    const auto axis = axis_values(spec);
    auto index_of = [&](double v) {
        const auto it = std::min_element(axis.begin(), axis.end(),
                                         [v](double a, double b) { return std::abs(a - v) < std::abs(b - v); });
        return static_cast<int>(it - axis.begin());
    };
    double best = -std::numeric_limits<double>::infinity();
    std::pair<int, int> arg{-1, -1};
    for (const auto& r : records) {
        if (r.method != method || !std::isfinite(r.lml_per_n) || r.lml_per_n <= best) continue;
        best = r.lml_per_n;
        arg = {index_of(r.log_lengthscale), index_of(r.log_magnitude)};
    }
    return arg;
}

// ---------------------------------------------------------------------------------------------
// Cross-validation

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
};

/// Two-sided paired t-test on a - b with k - 1 degrees of freedom. Identical samples give (0, 1);
/// a constant non-zero difference gives an infinite t and p = 0.
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InputError("paired_t_test: length mismatch");
    if (a.size() < 2) throw InputError("paired_t_test: need at least two pairs");
    const auto k = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= k;
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
    const double sd = std::sqrt(ss / (k - 1.0));
    if (sd == 0.0) {
        if (mean == 0.0) return {0.0, 1.0};
        return {std::copysign(std::numeric_limits<double>::infinity(), mean), 0.0};
    }
    const double t = mean / (sd / std::sqrt(k));
    const boost::math::students_t dist(k - 1.0);
    const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    return {t, std::min(1.0, p)};
}

struct CvConfig {
    int k = 5;
    std::uint64_t seed = 0;
    std::vector<Method> methods{Method::Vi, Method::Ours};
    TrainConfig train{};
    int jobs = 1;
};

struct FoldResult {
    int fold = 0;
    Method method = Method::Vi;
    double accuracy = 0.0;
    double lpd = 0.0;
    Hyperparams theta;
};

struct MethodSummary {
    Method method = Method::Vi;
    double accuracy_mean = 0.0, accuracy_sd = 0.0;
    double lpd_mean = 0.0, lpd_sd = 0.0;
};

/// Method b compared against method a on one metric; t is computed on (b - a).
struct Comparison {
    std::string metric;
    Method a = Method::Vi;
    Method b = Method::Ours;
    TTestResult test;
};

struct CvReport {
    std::string dataset;
    int k = 0;
    std::vector<FoldResult> folds;  // ordered by fold, then method
    std::vector<MethodSummary> summary;
    std::vector<Comparison> comparisons;

    [[nodiscard]] const MethodSummary& summary_for(Method m) const {
        for (const auto& s : summary) {
            if (s.method == m) return s;
        }
        throw InputError("no summary for method " + std::string(to_string(m)));
    }
};

inline Objective training_objective(Method m) {
    if (m == Method::Vi) return Objective::Elbo;
    if (m == Method::Ours) return Objective::EpLike;
    throw InputError("cross-validation supports the trained methods vi and ours, not " + std::string(to_string(m)));
}

namespace detail {

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return {mean, sd};
}

}  // namespace detail

/// Per fold: standardize with training statistics, fit each method, score the held-out fold.
inline CvReport cross_validate(const Dataset& ds, const CvConfig& cfg) {
    validate(ds);
    for (Method m : cfg.methods) training_objective(m);
    const auto split = make_folds(static_cast<std::size_t>(ds.n()), cfg.k, cfg.seed);
    const std::size_t nm = cfg.methods.size();

    CvReport report;
    report.dataset = ds.name;
    report.k = cfg.k;
    report.folds.resize(static_cast<std::size_t>(cfg.k) * nm);
    parallel_for(report.folds.size(), cfg.jobs, [&](std::size_t job) {
        const int fold = static_cast<int>(job / nm);
        const Method method = cfg.methods[job % nm];
        try {
            const auto train_rows = split.train_rows(fold);
            const auto test_rows = split.test_rows(fold);
            auto [train, rest] = standardize(subset(ds, train_rows), {subset(ds, test_rows)});
            const auto& test = rest.front();
            TrainConfig tc = cfg.train;
            tc.objective = training_objective(method);
            const auto res = fit(train, tc);
            const auto g = gram_relative(train.X, res.theta, tc.relative_jitter);
            const auto post = assemble_marginals(g, res.sites);
            const auto pred = predict_latent(post, train.X, test.X, res.theta);
            report.folds[job] = {fold, method, accuracy(pred, test.y), mean_log_predictive(pred, test.y), res.theta};
        } catch (const std::exception& e) {
            throw NumericError("cross-validation fold " + std::to_string(fold) + " method " +
                               std::string(to_string(method)) + " failed: " + e.what());
        }
    });

    std::vector<std::vector<double>> acc(nm), lpd(nm);
    for (const auto& f : report.folds) {
        const auto k = static_cast<std::size_t>(std::find(cfg.methods.begin(), cfg.methods.end(), f.method) -
                                                cfg.methods.begin());
        acc[k].push_back(f.accuracy);
        lpd[k].push_back(f.lpd);
    }
    for (std::size_t k = 0; k < nm; ++k) {
        const auto [am, as] = detail::mean_sd(acc[k]);
        const auto [lm, ls] = detail::mean_sd(lpd[k]);
        report.summary.push_back({cfg.methods[k], am, as, lm, ls});
    }
    for (std::size_t a = 0; a < nm; ++a) {
        for (std::size_t b = a + 1; b < nm; ++b) {
            report.comparisons.push_back({"accuracy", cfg.methods[a], cfg.methods[b], paired_t_test(acc[b], acc[a])});
            report.comparisons.push_back({"lpd", cfg.methods[a], cfg.methods[b], paired_t_test(lpd[b], lpd[a])});
        }
    }
    return report;
}

inline constexpr std::string_view kCvHeader = "dataset,fold,method,accuracy,lpd";
inline constexpr std::string_view kCvSummaryHeader = "dataset,metric,method,mean,sd,baseline,t,p";

inline void write_cv_csv(std::ostream& os, const CvReport& r, const std::string& comment = {}) {
    if (!comment.empty()) os << "# " << comment << '\n';
    os << kCvHeader << '\n';
    for (const auto& f : r.folds) {
        os << r.dataset << ',' << f.fold << ',' << to_string(f.method) << ',' << format_number(f.accuracy) << ','
           << format_number(f.lpd) << '\n';
    }
}

/// One row per (metric, method); t and p compare the method against the first listed method
/// ("baseline") and are nan on the baseline's own row.
inline void write_cv_summary_csv(std::ostream& os, const CvReport& r, const std::string& comment = {}) {
    if (!comment.empty()) os << "# " << comment << '\n';
    os << kCvSummaryHeader << '\n';
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (r.summary.empty()) return;
    const Method baseline = r.summary.front().method;
    for (std::string_view metric : {"accuracy", "lpd"}) {
        for (const auto& s : r.summary) {
            TTestResult tt{nan, nan};
            for (const auto& c : r.comparisons) {
                if (c.metric == metric && c.a == baseline && c.b == s.method) tt = c.test;
            }
            const bool is_acc = metric == "accuracy";
            os << r.dataset << ',' << metric << ',' << to_string(s.method) << ','
               << format_number(is_acc ? s.accuracy_mean : s.lpd_mean) << ','
               << format_number(is_acc ? s.accuracy_sd : s.lpd_sd) << ',' << to_string(baseline) << ','
               << format_number(tt.t) << ',' << format_number(tt.p) << '\n';
        }
    }
}

}  // namespace hgp
