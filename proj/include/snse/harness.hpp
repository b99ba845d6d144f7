/// @file harness.hpp
/// Experiment orchestration: JSON configuration, deterministic seeding,
/// a worker pool over path jobs with order-independent merge, and report
/// emission (CSV tables plus NDJSON run records that embed the full
/// config, so any run can be replayed byte-identically).

#pragma once

#include "snse/anticipating.hpp"
#include "snse/basis.hpp"
#include "snse/direct.hpp"
#include "snse/galerkin.hpp"
#include "snse/io.hpp"
#include "snse/tangent.hpp"
#include "snse/wiener.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace snse {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr const char* config_schema = "snse-config/1";

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> kinds = {
        "transform-check", "energy-audit",  "malliavin-check", "anticipating-check",
        "convergence",     "b-audit",       "ensemble"};
    return kinds;
}

/// One experiment: model parameters, initial data (deterministic `f`
/// and/or a random field `Y`), and per-experiment knobs.  Everything a
/// run needs is in here; reports embed the normalized form.
struct ExperimentConfig {
    std::string experiment;
    std::uint64_t seed = 1;
    double nu = 1.0;
    double T = 1.0;
    double sigma = 1.0;
    std::size_t N = 1024;
    int K = 2;
    std::string basis_file; ///< overrides K when nonempty
    std::string scheme = "exponential-euler";
    std::size_t n_paths = 1;
    std::size_t partition_k = 8;
    std::size_t samples = 1000; ///< b-audit sample count
    std::vector<double> f;
    std::vector<double> taus; ///< random-field observation times
    std::vector<std::pair<std::size_t, std::string>> field; ///< (mode, phi source)
    std::vector<std::size_t> n_sweep; ///< refinement levels for `convergence`
    std::string study = "transform";  ///< convergence target
    std::string out = "runs";

    /// Normalized form; round-trips through config_from_json.  The output
    /// directory is invocation state, not experiment state, so it is not
    /// embedded: reports must not depend on where they are written.
    nlohmann::json to_json() const {
        nlohmann::json j;
        j["schema"] = config_schema;
        j["experiment"] = experiment;
        j["seed"] = seed;
        j["nu"] = nu;
        j["sigma"] = sigma;
        j["T"] = T;
        j["N"] = N;
        if (basis_file.empty())
            j["K"] = K;
        else
            j["basis_file"] = basis_file;
        j["scheme"] = scheme;
        j["n_paths"] = n_paths;
        j["partition_k"] = partition_k;
        j["samples"] = samples;
        j["study"] = study;
        if (!f.empty()) j["f"] = f;
        if (!field.empty()) {
            nlohmann::json y;
            y["taus"] = taus;
            y["components"] = nlohmann::json::array();
            for (const auto& [mode, phi] : field)
                y["components"].push_back({{"mode", mode}, {"phi", phi}});
            j["Y"] = y;
        }
        if (!n_sweep.empty()) j["n_sweep"] = n_sweep;
        return j;
    }
};

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
}

inline bool is_pow2(std::size_t x) { return x > 0 && (x & (x - 1)) == 0; }

} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    detail::require(j.is_object(), "top level must be a JSON object");
    detail::require(j.contains("schema") && j.at("schema").is_string() &&
                        j.at("schema").get<std::string>() == config_schema,
                    std::string("missing or unsupported schema key (expected \"") + config_schema +
                        "\")");

    static const std::vector<std::string> allowed = {
        "schema", "experiment", "seed",   "nu",          "sigma",   "sigmas",  "T",
        "N",      "K",          "basis_file", "scheme",  "n_paths", "partition_k",
        "samples", "f",         "Y",      "n_sweep",     "study",   "out"};
    for (auto it = j.begin(); it != j.end(); ++it)
        detail::require(std::find(allowed.begin(), allowed.end(), it.key()) != allowed.end(),
                        "unknown key '" + it.key() + "'");

    auto num = [&](const char* k, double dflt) {
        if (!j.contains(k)) return dflt;
        detail::require(j.at(k).is_number(), std::string("'") + k + "' must be a number");
        return j.at(k).get<double>();
    };
    auto uns = [&](const char* k, std::uint64_t dflt) {
        if (!j.contains(k)) return dflt;
        detail::require(j.at(k).is_number_integer() && j.at(k).get<std::int64_t>() >= 0,
                        std::string("'") + k + "' must be a nonnegative integer");
        return j.at(k).get<std::uint64_t>();
    };
    auto str = [&](const char* k, std::string dflt) {
        if (!j.contains(k)) return dflt;
        detail::require(j.at(k).is_string(), std::string("'") + k + "' must be a string");
        return j.at(k).get<std::string>();
    };

    ExperimentConfig cfg;
    cfg.experiment = str("experiment", "");
    if (!cfg.experiment.empty()) {
        const auto& kinds = experiment_kinds();
        detail::require(std::find(kinds.begin(), kinds.end(), cfg.experiment) != kinds.end(),
                        "unknown experiment '" + cfg.experiment + "'");
    }
    cfg.seed = uns("seed", 1);
    cfg.nu = num("nu", 1.0);
    cfg.T = num("T", 1.0);
    cfg.N = uns("N", 1024);
    cfg.K = int(uns("K", 2));
    cfg.basis_file = str("basis_file", "");
    cfg.scheme = str("scheme", "exponential-euler");
    try {
        scheme_from_name(cfg.scheme); // galerkin owns the list of valid names
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    cfg.n_paths = uns("n_paths", 1);
    cfg.partition_k = uns("partition_k", 8);
    cfg.samples = uns("samples", 1000);
    cfg.study = str("study", "transform");
    cfg.out = str("out", "runs");

    detail::require(cfg.nu > 0 && cfg.T > 0, "need nu > 0 and T > 0");
    detail::require(cfg.N >= 1, "need N >= 1");
    detail::require(cfg.basis_file.empty() ? cfg.K >= 1 : true, "need K >= 1");
    detail::require(cfg.n_paths >= 1, "need n_paths >= 1");
    detail::require(cfg.partition_k >= 1, "need partition_k >= 1");
    detail::require(cfg.samples >= 1, "need samples >= 1");
    detail::require(cfg.study == "transform" || cfg.study == "anticipating",
                    "study must be 'transform' or 'anticipating'");

    detail::require(!(j.contains("sigma") && j.contains("sigmas")),
                    "give either 'sigma' or 'sigmas', not both");
    if (j.contains("sigmas")) {
        detail::require(j.at("sigmas").is_array(), "'sigmas' must be an array of numbers");
        NoiseSpec spec;
        for (const auto& v : j.at("sigmas")) {
            detail::require(v.is_number(), "'sigmas' must be an array of numbers");
            spec.sigmas.push_back(v.get<double>());
        }
        try {
            cfg.sigma = collapse_noise(spec);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    } else {
        cfg.sigma = num("sigma", 1.0);
        detail::require(cfg.sigma >= 0, "'sigma' must be >= 0");
    }

    if (j.contains("f")) {
        detail::require(j.at("f").is_array(), "'f' must be an array of numbers");
        for (const auto& v : j.at("f")) {
            detail::require(v.is_number(), "'f' must be an array of numbers");
            cfg.f.push_back(v.get<double>());
        }
    }

    if (j.contains("Y")) {
        const auto& y = j.at("Y");
        detail::require(y.is_object() && y.contains("taus") && y.contains("components"),
                        "'Y' must be an object with 'taus' and 'components'");
        for (auto it = y.begin(); it != y.end(); ++it)
            detail::require(it.key() == "taus" || it.key() == "components",
                            "unknown key 'Y." + it.key() + "'");
        detail::require(y.at("taus").is_array(), "'Y.taus' must be an array of numbers");
        for (const auto& v : y.at("taus")) {
            detail::require(v.is_number(), "'Y.taus' must be an array of numbers");
            cfg.taus.push_back(v.get<double>());
            detail::require(cfg.taus.back() > 0 && cfg.taus.back() <= cfg.T,
                            "'Y.taus' entries must lie in (0, T]");
        }
        detail::require(y.at("components").is_array(), "'Y.components' must be an array");
        for (const auto& comp : y.at("components")) {
            detail::require(comp.is_object() && comp.contains("mode") && comp.contains("phi") &&
                                comp.at("mode").is_number_integer() && comp.at("phi").is_string(),
                            "'Y.components' entries must be {mode, phi}");
            cfg.field.emplace_back(comp.at("mode").get<std::size_t>(),
                                   comp.at("phi").get<std::string>());
        }
        detail::require(!cfg.field.empty(), "'Y.components' must be nonempty");
    }

    if (j.contains("n_sweep")) {
        detail::require(j.at("n_sweep").is_array(), "'n_sweep' must be an array of integers");
        for (const auto& v : j.at("n_sweep")) {
            detail::require(v.is_number_integer() && v.get<std::int64_t>() >= 1,
                            "'n_sweep' must be an array of positive integers");
            cfg.n_sweep.push_back(v.get<std::size_t>());
        }
    }
    for (std::size_t i = 0; i + 1 < cfg.n_sweep.size(); ++i)
        detail::require(cfg.n_sweep[i] < cfg.n_sweep[i + 1], "'n_sweep' must be increasing");
    for (std::size_t v : cfg.n_sweep)
        detail::require(detail::is_pow2(v), "refinement levels must be powers of two");
    return cfg;
}

/// Bind a CLI subcommand to the config; a config that names a different
/// experiment is rejected rather than silently overridden.
inline void select_experiment(ExperimentConfig& cfg, const std::string& kind) {
    const auto& kinds = experiment_kinds();
    if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
        throw ConfigError("unknown experiment '" + kind + "'");
    if (!cfg.experiment.empty() && cfg.experiment != kind)
        throw ConfigError("config: experiment '" + cfg.experiment +
                          "' does not match subcommand '" + kind + "'");
    cfg.experiment = kind;
}

inline ExperimentConfig load_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::vector<std::string> lines;
    try {
        lines = read_lines(path);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    std::string text;
    for (const auto& line : lines) {
        text += line;
        text += '\n';
    }
    return load_config(text);
}

// ---------------------------------------------------------------- workers

/// SNSE_WORKERS is the only environment knob; absent means serial.
inline std::size_t worker_count() {
    const char* env = std::getenv("SNSE_WORKERS");
    if (!env || !*env) return 1;
    long v = 0;
    try {
        v = parse_long(env);
    } catch (const std::exception&) {
        throw ConfigError("SNSE_WORKERS must be a positive integer");
    }
    if (v < 1 || v > 256) throw ConfigError("SNSE_WORKERS must be in [1, 256]");
    return std::size_t(v);
}

/// Worker pool over jobs 0..n-1; fn(i) must write only into slot i of
/// preallocated storage, so the merged output is independent of both
/// scheduling and worker count.
template <class Fn>
inline void run_jobs(std::size_t n_jobs, Fn&& fn) {
    const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(n_jobs, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n_jobs; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n_jobs) return;
                fn(i);
            }
        });
    for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------- reports

struct JobOut {
    bool ok = true;
    std::string error;
    std::vector<std::string> csv;
    std::vector<nlohmann::json> records;
    std::map<std::string, double> stats; ///< per-job scalars for the summary
};

struct ExperimentTable {
    std::string header;
    std::vector<JobOut> jobs;
    nlohmann::json summary;
    bool numerical_failure = false; ///< beyond the per-path skip policy
};

struct RunReport {
    std::string csv;
    std::string ndjson;
    std::string summary_line;
    int exit_code = 0;
};

namespace detail {

template <class PerJob>
inline ExperimentTable run_path_jobs(std::size_t n_jobs, PerJob per_job) {
    ExperimentTable tab;
    tab.jobs.resize(n_jobs);
    run_jobs(n_jobs, [&](std::size_t i) {
        try {
            per_job(i, tab.jobs[i]);
        } catch (const std::exception& e) {
            tab.jobs[i] = JobOut{};
            tab.jobs[i].ok = false;
            tab.jobs[i].error = e.what();
        }
    });
    return tab;
}

inline double stat_max(const ExperimentTable& tab, const std::string& key) {
    double m = 0;
    for (const auto& job : tab.jobs)
        if (job.ok && job.stats.count(key)) m = std::max(m, job.stats.at(key));
    return m;
}

inline double stat_mean(const ExperimentTable& tab, const std::string& key) {
    double s = 0;
    std::size_t n = 0;
    for (const auto& job : tab.jobs)
        if (job.ok && job.stats.count(key)) {
            s += job.stats.at(key);
            ++n;
        }
    return n ? s / double(n) : 0.0;
}

inline std::size_t stat_count(const ExperimentTable& tab, const std::string& key) {
    std::size_t c = 0;
    for (const auto& job : tab.jobs)
        if (job.ok && job.stats.count(key) && job.stats.at(key) != 0) ++c;
    return c;
}

inline void check_finite(double x, const char* what) {
    if (!std::isfinite(x)) throw std::runtime_error(std::string("non-finite ") + what);
}

} // namespace detail

// ----------------------------------------------------- config -> model

inline SpectralBasis config_basis(const ExperimentConfig& cfg) {
    try {
        return cfg.basis_file.empty() ? build_torus_basis(cfg.K) : load_basis(cfg.basis_file);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: basis: ") + e.what());
    }
}

inline SolverConfig config_solver(const ExperimentConfig& cfg, const SpectralBasis& basis,
                                  std::size_t N) {
    SolverConfig sol;
    sol.nu = cfg.nu;
    sol.T = cfg.T;
    sol.N = N;
    sol.scheme = scheme_from_name(cfg.scheme);
    sol.n = basis.n_modes();
    return sol;
}

inline VelocityCoeffs config_f(const ExperimentConfig& cfg, std::size_t n) {
    if (cfg.f.empty()) throw ConfigError("config: this experiment needs initial data 'f'");
    if (cfg.f.size() > n)
        throw ConfigError("config: 'f' has " + std::to_string(cfg.f.size()) +
                          " entries but the basis has " + std::to_string(n) + " modes");
    VelocityCoeffs out(n);
    for (std::size_t i = 0; i < cfg.f.size(); ++i) out[i] = cfg.f[i];
    return out;
}

/// The initial field for anticipating runs: the config's Y spec, or the
/// deterministic `f` lifted to a constant field.
inline RandomInitialField config_Y(const ExperimentConfig& cfg, std::size_t n) {
    if (!cfg.field.empty()) {
        try {
            return RandomInitialField::parse(n, cfg.taus, cfg.field);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config: 'Y': ") + e.what());
        }
    }
    const VelocityCoeffs f = config_f(cfg, n);
    std::vector<std::pair<std::size_t, std::string>> comps;
    for (std::size_t i = 0; i < n; ++i)
        if (f[i] != 0) comps.emplace_back(i, fmt_double(f[i]));
    if (comps.empty()) comps.emplace_back(0, "0");
    return RandomInitialField::parse(n, {}, comps);
}

// ----------------------------------------------------- experiments

inline ExperimentTable exp_transform(const ExperimentConfig& cfg, const SpectralBasis& basis) {
    const SolverConfig sol = config_solver(cfg, basis, cfg.N);
    const VelocityCoeffs f = config_f(cfg, sol.n);
    const double fh = h_norm(f);
    auto tab = detail::run_path_jobs(cfg.n_paths, [&](std::size_t p, JobOut& out) {
        const WienerPath path = sample_path(cfg.T, cfg.N, cfg.seed, p);
        const double gap = transform_check(basis, f, path, cfg.sigma, sol);
        detail::check_finite(gap, "transform gap");
        const double rel = fh > 0 ? gap / fh : gap;
        out.csv.push_back(std::to_string(p) + "," + fmt_double(gap) + "," + fmt_double(rel));
        out.records.push_back({{"record", "row"}, {"path", p}, {"gap", gap}, {"rel_gap", rel}});
        out.stats["rel_gap"] = rel;
    });
    tab.header = "path,gap,rel_gap";
    tab.summary["max_rel_gap"] = detail::stat_max(tab, "rel_gap");
    return tab;
}

inline ExperimentTable exp_energy(const ExperimentConfig& cfg, const SpectralBasis& basis) {
    const SolverConfig sol = config_solver(cfg, basis, cfg.N);
    const VelocityCoeffs f = config_f(cfg, sol.n);
    const double slack = 5 * sol.dt();
    auto tab = detail::run_path_jobs(cfg.n_paths, [&](std::size_t p, JobOut& out) {
        const WienerPath path = sample_path(cfg.T, cfg.N, cfg.seed, p);
        const GrowthPath Q = growth_process(path, cfg.sigma);
        const Trajectory traj = integrate_random_nse(basis, f, Q, sol);
        const EnergyAudit ea = energy_audit(traj, f, cfg.nu);
        const VNormAudit va = v_norm_audit(traj, f, Q, cfg.nu, basis);
        detail::check_finite(ea.sup_h, "energy audit");
        const bool within = ea.margin_h <= slack && ea.margin_v2 <= slack;
        out.csv.push_back(std::to_string(p) + "," + fmt_double(ea.sup_h) + "," +
                          fmt_double(ea.margin_h) + "," + fmt_double(ea.integral_v2) + "," +
                          fmt_double(ea.margin_v2) + "," + fmt_double(Q.sup_norm) + "," +
                          fmt_double(va.c_min) + "," + (within ? "1" : "0"));
        out.records.push_back({{"record", "row"},
                               {"path", p},
                               {"sup_h", ea.sup_h},
                               {"margin_h", ea.margin_h},
                               {"integral_v2", ea.integral_v2},
                               {"margin_v2", ea.margin_v2},
                               {"sup_Q", Q.sup_norm},
                               {"v_norm_c_min", va.c_min},
                               {"within", within}});
        out.stats["margin_h"] = ea.margin_h;
        out.stats["margin_v2"] = ea.margin_v2;
        out.stats["violation"] = within ? 0.0 : 1.0;
    });
    tab.header = "path,sup_h,margin_h,integral_v2,margin_v2,sup_Q,v_norm_c_min,within";
    tab.summary["max_margin_h"] = detail::stat_max(tab, "margin_h");
    tab.summary["max_margin_v2"] = detail::stat_max(tab, "margin_v2");
    const std::size_t viol = detail::stat_count(tab, "violation");
    tab.summary["violations"] = viol;
    tab.numerical_failure = viol * 10 > cfg.n_paths;
    return tab;
}

inline ExperimentTable exp_malliavin(const ExperimentConfig& cfg, const SpectralBasis& basis) {
    if (cfg.N % 2 != 0) throw ConfigError("config: malliavin-check needs even N");
    const SolverConfig sol = config_solver(cfg, basis, cfg.N);
    const VelocityCoeffs f = config_f(cfg, sol.n);
    const double eps_cm = 1e-3, eps_fr = 1e-4;

    auto tab = detail::run_path_jobs(cfg.n_paths, [&](std::size_t p, JobOut& out) {
        const WienerPath path = sample_path(cfg.T, cfg.N, cfg.seed, p);
        const GrowthPath Q = growth_process(path, cfg.sigma);
        const Trajectory v = integrate_random_nse(basis, f, Q, sol);
        const VelocityCoeffs& vT = v.states[cfg.N];

        auto push = [&](const char* check, double value, bool ok) {
            out.csv.push_back(std::to_string(p) + "," + check + "," + fmt_double(value) + "," +
                              (ok ? "1" : "0"));
            out.records.push_back(
                {{"record", "row"}, {"path", p}, {"check", check}, {"value", value}, {"ok", ok}});
            if (!ok) out.stats["violation"] = 1.0;
        };

        std::vector<std::vector<double>> hs(3, std::vector<double>(cfg.N, 0.0));
        hs[0].assign(cfg.N, 1.0);
        std::fill(hs[1].begin(), hs[1].begin() + cfg.N / 2, 1.0);
        std::fill(hs[2].begin() + cfg.N / 2, hs[2].end(), 1.0);
        const char* names[3] = {"duality_full", "duality_early", "duality_late"};
        double worst = 0;
        for (int d = 0; d < 3; ++d) {
            const VelocityCoeffs lambda = malliavin_direction_integral(
                basis, v, Q, cfg.sigma, hs[d], cfg.N, sol, UQuadRule::trapezoid);
            const WienerPath shifted = cameron_martin_shift(path, hs[d], eps_cm);
            const Trajectory vs =
                integrate_random_nse(basis, f, growth_process(shifted, cfg.sigma), sol);
            const VelocityCoeffs fd = (1.0 / eps_cm) * (vs.states[cfg.N] - vT);
            const double scale = std::max(h_norm(fd), 1e-300);
            const double rel = h_norm(fd - lambda) / scale;
            detail::check_finite(rel, "duality error");
            push(names[d], rel, rel <= 0.02);
            worst = std::max(worst, rel);
        }
        out.stats["duality_rel"] = worst;

        VelocityCoeffs hdir(sol.n);
        for (std::size_t i = 0; i < sol.n; ++i) hdir[i] = 1.0 / double(1 + i);
        const VelocityCoeffs eta = frechet_tangent(basis, v, Q, hdir, sol).states[cfg.N];
        VelocityCoeffs f2 = f;
        axpy(eps_fr, hdir, f2);
        const Trajectory v2 = integrate_random_nse(basis, f2, Q, sol);
        const VelocityCoeffs fd2 = (1.0 / eps_fr) * (v2.states[cfg.N] - vT);
        const double rel_fr = h_norm(fd2 - eta) / std::max(h_norm(eta), 1e-300);
        detail::check_finite(rel_fr, "directional derivative error");
        push("frechet_fd", rel_fr, rel_fr <= 1e-3);
        out.stats["frechet_rel"] = rel_fr;

        // D_u v(t) = 0 for u >= t, exactly.
        const TangentTrajectory late = malliavin_tangent(basis, v, Q, cfg.sigma, cfg.T, sol);
        double adapted = 0;
        for (const auto& state : late.states) adapted = std::max(adapted, h_norm(state));
        push("adapted", adapted, adapted == 0.0);

        std::size_t M = std::min<std::size_t>(16, cfg.N);
        while (cfg.N % M != 0) --M;
        const MalliavinGrid grid = malliavin_grid(basis, v, Q, cfg.sigma, M, sol);
        double recomb = 0;
        for (std::size_t m = 0; m < grid.u_nodes.size(); ++m) {
            const TangentTrajectory direct =
                malliavin_tangent(basis, v, Q, cfg.sigma, grid.u_nodes[m], sol);
            recomb = std::max(recomb, h_norm(grid.at(m).states[cfg.N] - direct.states[cfg.N]));
        }
        push("recombination", recomb, recomb <= 1e-10);
        out.stats["recomb"] = recomb;
    });
    tab.header = "path,check,value,ok";
    tab.summary["max_duality_rel"] = detail::stat_max(tab, "duality_rel");
    tab.summary["max_frechet_rel"] = detail::stat_max(tab, "frechet_rel");
    tab.summary["max_recombination"] = detail::stat_max(tab, "recomb");
    const std::size_t viol = detail::stat_count(tab, "violation");
    tab.summary["violations"] = viol;
    tab.numerical_failure = viol * 10 > cfg.n_paths;
    return tab;
}

inline ExperimentTable exp_anticipating(const ExperimentConfig& cfg, const SpectralBasis& basis) {
    if (cfg.N % 4 != 0) throw ConfigError("config: anticipating-check needs N divisible by 4");
    if (cfg.partition_k > cfg.N / 4)
        throw ConfigError("config: partition_k too coarse for the t-sweep");
    const SolverConfig sol = config_solver(cfg, basis, cfg.N);
    const RandomInitialField Y = config_Y(cfg, basis.n_modes());

    auto tab = detail::run_path_jobs(cfg.n_paths, [&](std::size_t p, JobOut& out) {
        const WienerPath path = sample_path(cfg.T, cfg.N, cfg.seed, p);
        const AnticipatingRun run = solve_anticipating(basis, Y, path, cfg.sigma, sol);
        for (std::size_t t_idx : {cfg.N / 4, cfg.N / 2, cfg.N}) {
            const auto part = make_partition(t_idx, cfg.partition_k);
            const AnticipatingResidual res = residual_anticipating(run, part);
            detail::check_finite(res.ito_form, "residual");
            const double scale = std::max(res.scale, 1e-300);
            const double forms_gap = std::abs(res.ito_form - res.strat_form) / scale;
            const double rel = res.ito_form / scale;
            out.csv.push_back(std::to_string(p) + "," + fmt_double(res.t) + "," +
                              fmt_double(res.ito_form) + "," + fmt_double(res.strat_form) + "," +
                              fmt_double(res.ablated) + "," + fmt_double(res.scale) + "," +
                              fmt_double(rel) + "," + fmt_double(forms_gap));
            out.records.push_back({{"record", "row"},
                                   {"path", p},
                                   {"t", res.t},
                                   {"ito_form", res.ito_form},
                                   {"strat_form", res.strat_form},
                                   {"ablated", res.ablated},
                                   {"scale", res.scale},
                                   {"rel_residual", rel},
                                   {"forms_gap", forms_gap}});
            out.stats["forms_gap"] = std::max(out.stats["forms_gap"], forms_gap);
            out.stats["rel_residual"] = std::max(out.stats["rel_residual"], rel);
            if (t_idx == cfg.N)
                out.stats["ablation_ratio"] =
                    res.ablated / std::max(res.ito_form, 1e-300);
        }
    });
    tab.header = "path,t,ito_form,strat_form,ablated,scale,rel_residual,forms_gap";
    tab.summary["max_forms_gap"] = detail::stat_max(tab, "forms_gap");
    tab.summary["max_rel_residual"] = detail::stat_max(tab, "rel_residual");
    double min_abl = 0;
    bool first = true;
    for (const auto& job : tab.jobs)
        if (job.ok && job.stats.count("ablation_ratio")) {
            const double r = job.stats.at("ablation_ratio");
            min_abl = first ? r : std::min(min_abl, r);
            first = false;
        }
    tab.summary["min_ablation_ratio"] = min_abl;
    tab.numerical_failure = detail::stat_max(tab, "forms_gap") > 1e-12;
    return tab;
}

inline ExperimentTable exp_convergence(const ExperimentConfig& cfg, const SpectralBasis& basis) {
    const std::vector<std::size_t> sweep =
        cfg.n_sweep.empty() ? std::vector<std::size_t>{1024, 2048, 4096, 8192} : cfg.n_sweep;
    const std::size_t finest = sweep.back();
    const bool transform_study = cfg.study == "transform";
    const RandomInitialField Y =
        transform_study ? RandomInitialField{} : config_Y(cfg, basis.n_modes());
    const VelocityCoeffs f =
        transform_study ? config_f(cfg, basis.n_modes()) : VelocityCoeffs(basis.n_modes());

    auto tab = detail::run_path_jobs(cfg.n_paths, [&](std::size_t p, JobOut& out) {
        const WienerPath fine = sample_path(cfg.T, finest, cfg.seed, p);
        std::vector<double> values;
        for (std::size_t N : sweep) {
            const WienerPath path = coarsen(fine, finest / N);
            const SolverConfig sol = config_solver(cfg, basis, N);
            double value = 0;
            if (transform_study) {
                value = transform_check(basis, f, path, cfg.sigma, sol);
            } else {
                const AnticipatingRun run = solve_anticipating(basis, Y, path, cfg.sigma, sol);
                const auto part = make_partition(N, cfg.partition_k);
                value = residual_anticipating(run, part).ito_form;
            }
            detail::check_finite(value, "refinement value");
            values.push_back(value);
            out.csv.push_back(std::to_string(p) + "," + std::to_string(N) + "," +
                              fmt_double(value));
            out.records.push_back(
                {{"record", "row"}, {"path", p}, {"N", N}, {"value", value}});
        }
        nlohmann::json orders = nlohmann::json::array();
        double min_order = 0;
        bool have = false;
        for (std::size_t i = 0; i + 1 < values.size(); ++i) {
            if (values[i] <= 0 || values[i + 1] <= 0) {
                orders.push_back(nullptr);
                continue;
            }
            const double o = std::log(values[i] / values[i + 1]) /
                             std::log(double(sweep[i + 1]) / double(sweep[i]));
            orders.push_back(o);
            min_order = have ? std::min(min_order, o) : o;
            have = true;
        }
        out.records.push_back({{"record", "orders"}, {"path", p}, {"orders", orders}});
        if (have) out.stats["min_order"] = min_order;
        out.stats["final_value"] = values.back();
    });
    tab.header = "path,N,value";
    double min_order = 0;
    bool have = false;
    for (const auto& job : tab.jobs)
        if (job.ok && job.stats.count("min_order")) {
            const double o = job.stats.at("min_order");
            min_order = have ? std::min(min_order, o) : o;
            have = true;
        }
    if (have) tab.summary["min_order"] = min_order;
    tab.summary["max_final_value"] = detail::stat_max(tab, "final_value");
    return tab;
}

inline ExperimentTable exp_b_audit(const ExperimentConfig& cfg, const SpectralBasis& basis) {
    auto tab = detail::run_path_jobs(1, [&](std::size_t, JobOut& out) {
        const BEstimateAudit rep = audit_b_estimates(basis, cfg.samples, cfg.seed);
        for (const auto& item : rep.items) {
            detail::check_finite(item.max_ratio, "estimate ratio");
            out.csv.push_back(item.name + "," + fmt_double(item.max_ratio) + "," +
                              fmt_double(item.cap) + "," + (item.within_cap ? "1" : "0"));
            out.records.push_back({{"record", "row"},
                                   {"inequality", item.name},
                                   {"max_ratio", item.max_ratio},
                                   {"cap", item.cap},
                                   {"within_cap", item.within_cap}});
        }
        out.stats["duality_gap"] = rep.duality_gap;
        out.stats["within"] = rep.all_within_caps ? 1.0 : 0.0;
    });
    tab.header = "inequality,max_ratio,cap,within_cap";
    tab.summary["duality_gap"] = detail::stat_max(tab, "duality_gap");
    const bool within = tab.jobs.size() == 1 && tab.jobs[0].ok &&
                        tab.jobs[0].stats.count("within") && tab.jobs[0].stats.at("within") == 1.0;
    tab.summary["all_within_caps"] = within;
    tab.numerical_failure = !within;
    return tab;
}

inline ExperimentTable exp_ensemble(const ExperimentConfig& cfg, const SpectralBasis& basis) {
    const SolverConfig sol = config_solver(cfg, basis, cfg.N);
    const VelocityCoeffs f = config_f(cfg, sol.n);
    auto tab = detail::run_path_jobs(cfg.n_paths, [&](std::size_t p, JobOut& out) {
        const WienerPath path = sample_path(cfg.T, cfg.N, cfg.seed, p);
        const GrowthPath Q = growth_process(path, cfg.sigma);
        const Trajectory traj = integrate_random_nse(basis, f, Q, sol);
        double sup_h = 0, int_v2 = 0;
        for (std::size_t i = 0; i < traj.states.size(); ++i) {
            sup_h = std::max(sup_h, traj.h_norms[i]);
            if (i > 0)
                int_v2 += 0.5 * traj.dt() *
                          (traj.v_norms[i - 1] * traj.v_norms[i - 1] +
                           traj.v_norms[i] * traj.v_norms[i]);
        }
        const double final_h = traj.h_norms.back();
        detail::check_finite(sup_h, "trajectory");
        out.csv.push_back(std::to_string(p) + "," + fmt_double(Q.sup_norm) + "," +
                          fmt_double(sup_h) + "," + fmt_double(int_v2) + "," +
                          fmt_double(final_h));
        out.records.push_back({{"record", "row"},
                               {"path", p},
                               {"sup_Q", Q.sup_norm},
                               {"sup_h", sup_h},
                               {"integral_v2", int_v2},
                               {"final_h", final_h}});
        out.stats["sup_Q"] = Q.sup_norm;
        out.stats["sup_h"] = sup_h;
        out.stats["final_h"] = final_h;
    });
    tab.header = "path,sup_Q,sup_h,integral_v2,final_h";
    tab.summary["mean_sup_Q"] = detail::stat_mean(tab, "sup_Q");
    tab.summary["max_sup_h"] = detail::stat_max(tab, "sup_h");
    tab.summary["mean_final_h"] = detail::stat_mean(tab, "final_h");
    return tab;
}

// ----------------------------------------------------- orchestration

inline RunReport run_experiment(const ExperimentConfig& cfg) {
    if (cfg.experiment.empty()) throw ConfigError("config: no experiment selected");
    const SpectralBasis basis = config_basis(cfg);

    ExperimentTable tab;
    if (cfg.experiment == "transform-check")
        tab = exp_transform(cfg, basis);
    else if (cfg.experiment == "energy-audit")
        tab = exp_energy(cfg, basis);
    else if (cfg.experiment == "malliavin-check")
        tab = exp_malliavin(cfg, basis);
    else if (cfg.experiment == "anticipating-check")
        tab = exp_anticipating(cfg, basis);
    else if (cfg.experiment == "convergence")
        tab = exp_convergence(cfg, basis);
    else if (cfg.experiment == "b-audit")
        tab = exp_b_audit(cfg, basis);
    else if (cfg.experiment == "ensemble")
        tab = exp_ensemble(cfg, basis);
    else
        throw ConfigError("config: unknown experiment '" + cfg.experiment + "'");

    std::size_t failed = 0;
    for (const auto& job : tab.jobs)
        if (!job.ok) ++failed;
    const bool policy_fail = failed * 10 > tab.jobs.size();

    RunReport rep;
    rep.exit_code = (policy_fail || tab.numerical_failure) ? 2 : 0;

    rep.csv = tab.header + "\n";
    for (const auto& job : tab.jobs)
        for (const auto& row : job.csv) {
            rep.csv += row;
            rep.csv += '\n';
        }

    rep.ndjson = nlohmann::json{{"record", "config"}, {"config", cfg.to_json()}}.dump() + "\n";
    for (std::size_t i = 0; i < tab.jobs.size(); ++i) {
        if (!tab.jobs[i].ok) {
            rep.ndjson +=
                nlohmann::json{{"record", "path-error"}, {"job", i}, {"error", tab.jobs[i].error}}
                    .dump() +
                "\n";
            continue;
        }
        for (const auto& r : tab.jobs[i].records) {
            rep.ndjson += r.dump();
            rep.ndjson += '\n';
        }
    }
    nlohmann::json summary = tab.summary;
    summary["record"] = "summary";
    summary["experiment"] = cfg.experiment;
    summary["jobs"] = tab.jobs.size();
    summary["failed_jobs"] = failed;
    summary["status"] = rep.exit_code == 0 ? "ok" : "failed";
    rep.ndjson += summary.dump() + "\n";

    rep.summary_line = cfg.experiment + ": " + (rep.exit_code == 0 ? "ok" : "FAILED") + "; jobs " +
                       std::to_string(tab.jobs.size() - failed) + "/" +
                       std::to_string(tab.jobs.size());
    for (auto it = tab.summary.begin(); it != tab.summary.end(); ++it) {
        rep.summary_line += "; " + it.key() + "=";
        rep.summary_line +=
            it.value().is_number() ? fmt_double(it.value().get<double>()) : it.value().dump();
    }
    return rep;
}

/// Run and write `<out>/<experiment>.csv` and `.ndjson`; returns the exit
/// code (0 ok, 2 numerical failure beyond policy).
inline int run_experiment_files(const ExperimentConfig& cfg) {
    const RunReport rep = run_experiment(cfg);
    std::filesystem::create_directories(cfg.out);
    const std::string base = cfg.out + "/" + cfg.experiment;
    write_text(base + ".csv", rep.csv);
    write_text(base + ".ndjson", rep.ndjson);
    return rep.exit_code;
}

} // namespace snse
