/// @file anticipating.hpp
/// The anticipating solution u(t,Y) = v(t,Y)Q(t) for initial fields Y that
/// look into the future of the driving noise, the Skorohod/Stratonovich
/// integral estimators built on the partition step-process construction,
/// and the residual of the anticipating Stratonovich equation.
///
/// The identity under test, in integral form at time t:
///
///   u(t,Y) - Y + int_0^t Au ds + int_0^t B(u) ds
///     = sigma*delta(u 1_[0,t]) + (sigma^2/2) int_0^t u ds
///       + sigma * int_0^t Q(s) Dv(s,Y)(D_sY) ds,
///
/// where delta is the Skorohod integral and the last term is the
/// substitution correction: it vanishes for deterministic Y and is exactly
/// what closes the identity when Y anticipates the noise.  The equivalent
/// Stratonovich form replaces the right side by sigma * int u o dW with
/// int u o dW = delta(u 1) + (1/2) int (D^+ + D^-)(s) ds.  Both residual
/// forms are assembled from the same quadratures, so they agree to
/// rounding; their size measures how well the discrete objects satisfy the
/// continuous identity.

#pragma once

#include "snse/basis.hpp"
#include "snse/expr.hpp"
#include "snse/galerkin.hpp"
#include "snse/tangent.hpp"
#include "snse/wiener.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace snse {

/// Cylindrical initial field Y = sum_j phi_j(W(tau_1), ..., W(tau_m)) e_j
/// with symbolic gradients, so D_sY is exact and piecewise constant in s.
struct RandomInitialField {
    std::vector<double> taus;
    std::vector<std::size_t> mode_index;
    std::vector<Expr> phi;
    std::vector<std::string> phi_source; ///< original expressions, for reports
    std::size_t dim = 0;

    std::size_t n_times() const { return taus.size(); }

    /// Build from expression strings; rejects anything outside the closed
    /// expression set or referencing variables beyond w1..wm.
    static RandomInitialField parse(std::size_t dim, std::vector<double> taus,
                                    const std::vector<std::pair<std::size_t, std::string>>& specs) {
        RandomInitialField Y;
        Y.dim = dim;
        Y.taus = std::move(taus);
        for (std::size_t l = 0; l + 1 < Y.taus.size(); ++l)
            if (!(Y.taus[l] < Y.taus[l + 1]))
                throw std::invalid_argument("initial field: taus must be strictly increasing");
        for (double tau : Y.taus)
            if (!(tau > 0)) throw std::invalid_argument("initial field: taus must be positive");
        for (const auto& [mode, source] : specs) {
            if (mode >= dim) throw std::invalid_argument("initial field: mode index out of range");
            Y.mode_index.push_back(mode);
            Y.phi.push_back(Expr::parse(source, Y.taus.size()));
            Y.phi_source.push_back(source);
        }
        return Y;
    }

    std::vector<double> observe(const WienerPath& path) const {
        std::vector<double> w;
        for (double tau : taus) w.push_back(path.values[path.node(tau)]);
        return w;
    }
};

/// Y(omega) as a coefficient vector.
inline VelocityCoeffs evaluate_Y(const RandomInitialField& Y, const WienerPath& path) {
    const auto w = Y.observe(path);
    VelocityCoeffs out(Y.dim);
    for (std::size_t c = 0; c < Y.phi.size(); ++c) out[Y.mode_index[c]] += Y.phi[c].eval(w);
    return out;
}

/// D_sY = sum_j sum_l d(phi_j)/d(w_l) * 1_{s <= tau_l} e_j; the indicator is
/// closed at tau_l, so the value is constant on each (tau_{l-1}, tau_l].
inline VelocityCoeffs malliavin_Y(const RandomInitialField& Y, const WienerPath& path, double s) {
    if (s < 0 || s > path.horizon) throw std::invalid_argument("malliavin_Y: s outside [0, T]");
    const auto w = Y.observe(path);
    VelocityCoeffs out(Y.dim);
    for (std::size_t c = 0; c < Y.phi.size(); ++c)
        for (std::size_t l = 0; l < Y.taus.size(); ++l)
            if (s <= Y.taus[l]) out[Y.mode_index[c]] += Y.phi[c].diff(l).eval(w);
    return out;
}

/// One anticipating solve: the path, the growth process, the trajectory
/// from f = Y(omega), the Malliavin grid of v at that (frozen) f, and the
/// Frechet tangents along each constant segment of D_sY.
struct AnticipatingRun {
    const SpectralBasis* basis = nullptr; ///< not owned; must outlive the run
    WienerPath path;
    GrowthPath Q;
    double sigma = 0;
    SolverConfig cfg;
    VelocityCoeffs f; ///< Y(omega)
    Trajectory v;
    MalliavinGrid grid;
    std::vector<std::size_t> tau_nodes;          ///< grid indices of the breakpoints
    std::vector<VelocityCoeffs> segment_dirs;    ///< h_r = D_sY on segment r, r = 0..m-1
    std::vector<TangentTrajectory> segment_tangents; ///< Dv(., Y)h_r

    /// u(t_i, Y) = v(t_i) Q(t_i).
    VelocityCoeffs u_at(std::size_t i) const { return Q.values[i] * v.states[i]; }

    /// Segment index of node s: the number of breakpoints strictly below
    /// t_s, so D_sY = segment_dirs[r] for r < m and 0 for r = m.
    std::size_t segment_of(std::size_t s_idx) const {
        std::size_t r = 0;
        while (r < tau_nodes.size() && tau_nodes[r] < s_idx) ++r;
        return r;
    }

    VelocityCoeffs dY_at(std::size_t s_idx) const {
        const std::size_t r = segment_of(s_idx);
        return r < segment_dirs.size() ? segment_dirs[r] : VelocityCoeffs(cfg.n);
    }

    /// Dv(t_i, Y)(D_sY): the segment tangent of s evaluated at t_i.
    VelocityCoeffs frechet_of_dY(std::size_t s_idx, std::size_t t_idx) const {
        const std::size_t r = segment_of(s_idx);
        return r < segment_tangents.size() ? segment_tangents[r].states[t_idx]
                                           : VelocityCoeffs(cfg.n);
    }

    /// D_s v(t_i, f) at frozen f: zero for s >= t_i by adaptedness
    /// (including the diagonal), otherwise one tangent solve on demand.
    VelocityCoeffs malliavin_v(std::size_t s_idx, std::size_t t_idx) const {
        if (s_idx >= t_idx) return VelocityCoeffs(cfg.n);
        return malliavin_tangent(*basis, v, Q, sigma, v.time(s_idx), cfg).states[t_idx];
    }
};

/// Evaluate f = Y(omega) and assemble the run.  grid_points requests the
/// u-resolution of the stored Malliavin grid; it is clamped to a divisor
/// of N (the grid is reported state, not an input to the residuals).
inline AnticipatingRun solve_anticipating(const SpectralBasis& basis, const RandomInitialField& Y,
                                          const WienerPath& path, double sigma,
                                          const SolverConfig& cfg, std::size_t grid_points = 16) {
    cfg.validate(basis);
    if (Y.dim != cfg.n) throw std::invalid_argument("solve_anticipating: Y dimension mismatch");
    if (path.values.size() != cfg.N + 1)
        throw std::invalid_argument("solve_anticipating: path grid differs from solver grid");

    AnticipatingRun run;
    run.basis = &basis;
    run.path = path;
    run.sigma = sigma;
    run.cfg = cfg;
    run.Q = growth_process(path, sigma);
    run.f = evaluate_Y(Y, path);
    run.v = integrate_random_nse(basis, run.f, run.Q, cfg);

    std::size_t M = std::max<std::size_t>(1, std::min(grid_points, cfg.N));
    while (cfg.N % M != 0) --M;
    run.grid = malliavin_grid(basis, run.v, run.Q, sigma, M, cfg);

    const auto w = Y.observe(path);
    for (double tau : Y.taus) run.tau_nodes.push_back(path.node(tau));

    // g_l = sum_j d(phi_j)/d(w_l) e_j; segment r carries sum_{l >= r} g_l.
    std::vector<VelocityCoeffs> g(Y.n_times(), VelocityCoeffs(cfg.n));
    for (std::size_t c = 0; c < Y.phi.size(); ++c)
        for (std::size_t l = 0; l < Y.n_times(); ++l)
            g[l][Y.mode_index[c]] += Y.phi[c].diff(l).eval(w);
    VelocityCoeffs tail(cfg.n);
    run.segment_dirs.assign(Y.n_times(), VelocityCoeffs(cfg.n));
    for (std::size_t r = Y.n_times(); r-- > 0;) {
        axpy(1.0, g[r], tail);
        run.segment_dirs[r] = tail;
    }
    for (const auto& h : run.segment_dirs)
        run.segment_tangents.push_back(frechet_tangent(basis, run.v, run.Q, h, cfg));
    return run;
}

namespace detail {

inline void validate_partition(const std::vector<std::size_t>& partition, std::size_t N) {
    if (partition.size() < 2 || partition.front() != 0)
        throw std::invalid_argument("partition must start at node 0 and contain the endpoint");
    for (std::size_t i = 0; i + 1 < partition.size(); ++i)
        if (!(partition[i] < partition[i + 1]))
            throw std::invalid_argument("partition nodes must be strictly increasing");
    if (partition.back() > N) throw std::invalid_argument("partition exceeds the grid");
}

/// Trapezoid weights over fine nodes a..b.
inline double trapz_weight(std::size_t i, std::size_t a, std::size_t b) {
    return (i == a || i == b) ? 0.5 : 1.0;
}

} // namespace detail

/// Partition {0, k, 2k, ...} up to the endpoint; the last cell may be
/// shorter when k does not divide t_idx.
inline std::vector<std::size_t> make_partition(std::size_t t_idx, std::size_t k) {
    if (k == 0 || t_idx == 0) throw std::invalid_argument("make_partition: need k >= 1, t_idx >= 1");
    std::vector<std::size_t> p;
    for (std::size_t i = 0; i < t_idx; i += k) p.push_back(i);
    p.push_back(t_idx);
    return p;
}

/// Skorohod integral of a step process with deterministic cell values:
/// delta reduces to the Wiener integral sum_i F_i (W(t_{i+1}) - W(t_i)).
inline VelocityCoeffs skorohod_integral_step(const std::vector<VelocityCoeffs>& cell_values,
                                             const WienerPath& path,
                                             const std::vector<std::size_t>& partition) {
    detail::validate_partition(partition, path.n_steps);
    if (cell_values.size() + 1 != partition.size())
        throw std::invalid_argument("skorohod_integral_step: one value per partition cell");
    VelocityCoeffs acc(cell_values.empty() ? 0 : cell_values[0].size());
    for (std::size_t c = 0; c + 1 < partition.size(); ++c)
        axpy(path.values[partition[c + 1]] - path.values[partition[c]], cell_values[c], acc);
    return acc;
}

/// Skorohod integral estimate of delta(u 1_[0,t]) via the step-process
/// factorization u ~ sum_i v(t_i,Y) Q 1_(t_i, t_{i+1}]:
///
///   sum_i v(t_i,Y) * (Ito sums of int Q dW over the cell)
///   - sum_i trapz int_cell [D_s v(t_i, f)|_{f=Y} + Dv(t_i,Y)(D_sY)] Q(s) ds.
///
/// The first bracket term is zero at every quadrature node by adaptedness
/// (the cell lies at or beyond t_i); it is kept in the assembly via the
/// run's accessor so the formula stays literal.
inline VelocityCoeffs skorohod_integral(const AnticipatingRun& run,
                                        const std::vector<std::size_t>& partition) {
    detail::validate_partition(partition, run.cfg.N);
    const double dt = run.cfg.dt();
    VelocityCoeffs acc(run.cfg.n);
    for (std::size_t c = 0; c + 1 < partition.size(); ++c) {
        const std::size_t a = partition[c], b = partition[c + 1];
        double cell_ito = 0;
        for (std::size_t j = a; j < b; ++j)
            cell_ito += run.Q.values[j] * (run.path.values[j + 1] - run.path.values[j]);
        axpy(cell_ito, run.v.states[a], acc);

        for (std::size_t s = a; s <= b; ++s) {
            const double w = detail::trapz_weight(s, a, b) * dt * run.Q.values[s];
            VelocityCoeffs d = run.malliavin_v(s, a); // zero: s >= t_i on the cell
            axpy(1.0, run.frechet_of_dY(s, a), d);
            axpy(-w, d, acc);
        }
    }
    return acc;
}

/// One-sided Malliavin traces of u at a node:
///   D^- = Q(s) Dv(s,Y)(D_sY),   D^+ = D^- + sigma*u(s,Y).
inline std::pair<VelocityCoeffs, VelocityCoeffs> one_sided(const AnticipatingRun& run,
                                                           std::size_t s_idx) {
    if (s_idx >= run.v.states.size()) throw std::invalid_argument("one_sided: node out of range");
    VelocityCoeffs dminus = run.Q.values[s_idx] * run.frechet_of_dY(s_idx, s_idx);
    VelocityCoeffs dplus = dminus;
    axpy(run.sigma, run.u_at(s_idx), dplus);
    return {std::move(dminus), std::move(dplus)};
}

/// (nabla u)(s) = D^+ + D^-; the Stratonovich correction density.
inline VelocityCoeffs nabla_u(const AnticipatingRun& run, std::size_t s_idx) {
    auto [dminus, dplus] = one_sided(run, s_idx);
    axpy(1.0, dminus, dplus);
    return dplus;
}

/// int_0^t u o dW = delta(u 1_[0,t]) + (1/2) trapz int_0^t (nabla u)(s) ds.
inline VelocityCoeffs stratonovich_integral(const AnticipatingRun& run,
                                            const std::vector<std::size_t>& partition) {
    VelocityCoeffs acc = skorohod_integral(run, partition);
    const std::size_t t_idx = partition.back();
    const double dt = run.cfg.dt();
    for (std::size_t s = 0; s <= t_idx; ++s)
        axpy(0.5 * detail::trapz_weight(s, 0, t_idx) * dt, nabla_u(run, s), acc);
    return acc;
}

/// Residual of the anticipating equation at the partition endpoint, in
/// both forms, plus the ablated residual with the substitution-correction
/// term deleted (it plateaus for genuinely anticipating Y).
struct AnticipatingResidual {
    std::size_t t_index = 0;
    double t = 0;
    double ito_form = 0;
    double strat_form = 0;
    double ablated = 0;
    double scale = 0; ///< sup_{t_i <= t} |u(t_i)|_H
    VelocityCoeffs skorohod;
    VelocityCoeffs correction; ///< int_0^t Q(s) Dv(s,Y)(D_sY) ds
};

inline AnticipatingResidual residual_anticipating(const AnticipatingRun& run,
                                                  const std::vector<std::size_t>& partition) {
    detail::validate_partition(partition, run.cfg.N);
    const std::size_t t_idx = partition.back();
    const double dt = run.cfg.dt();
    const double sigma = run.sigma;

    VelocityCoeffs drift(run.cfg.n);   // trapz int Au + B(u)
    VelocityCoeffs i_u(run.cfg.n);     // trapz int u
    VelocityCoeffs i_corr(run.cfg.n);  // trapz int Q Dv(D_sY)
    double scale = 0;
    for (std::size_t s = 0; s <= t_idx; ++s) {
        const double w = detail::trapz_weight(s, 0, t_idx) * dt;
        const VelocityCoeffs u = run.u_at(s);
        scale = std::max(scale, h_norm(u));
        axpy(w, run.basis->apply_A(u, run.cfg.nu), drift);
        run.basis->accumulate_B(u, u, w, drift);
        axpy(w, u, i_u);
        axpy(w * run.Q.values[s], run.frechet_of_dY(s, s), i_corr);
    }

    AnticipatingResidual rep;
    rep.t_index = t_idx;
    rep.t = run.v.time(t_idx);
    rep.scale = scale;
    rep.skorohod = skorohod_integral(run, partition);
    rep.correction = i_corr;

    VelocityCoeffs lhs = run.u_at(t_idx) - run.f;
    axpy(1.0, drift, lhs);

    VelocityCoeffs ito = lhs;
    axpy(-sigma, rep.skorohod, ito);
    axpy(-0.5 * sigma * sigma, i_u, ito);
    rep.ablated = h_norm(ito); // correction term deleted
    axpy(-sigma, i_corr, ito);
    rep.ito_form = h_norm(ito);

    VelocityCoeffs strat = lhs;
    axpy(-sigma, stratonovich_integral(run, partition), strat);
    rep.strat_form = h_norm(strat);
    return rep;
}

} // namespace snse
