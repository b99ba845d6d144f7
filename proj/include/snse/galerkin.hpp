/// @file galerkin.hpp
/// Pathwise integration of the random NSE dv = -Av dt - Q(t) B(v) dt on the
/// truncated basis, plus the energy monitors.
///
/// The exponential-Euler step treats the stiff Stokes part exactly, so
/// single-mode data reproduces e^{-nu*mu*t} decay to machine precision and
/// the H-norm can only grow through the O(dt^2) nonlinear quadrature error.

#pragma once

#include "snse/basis.hpp"
#include "snse/io.hpp"
#include "snse/wiener.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace snse {

enum class Scheme { exponential_euler, imex_euler };

inline const char* scheme_name(Scheme s) {
    return s == Scheme::exponential_euler ? "exponential-euler" : "imex-euler";
}

inline Scheme scheme_from_name(const std::string& s) {
    if (s == "exponential-euler") return Scheme::exponential_euler;
    if (s == "imex-euler") return Scheme::imex_euler;
    throw std::invalid_argument("unknown scheme '" + s + "'");
}

struct SolverConfig {
    double nu = 1.0;
    double T = 1.0;
    std::size_t N = 1024;
    Scheme scheme = Scheme::exponential_euler;
    std::size_t n = 0; ///< basis dimension

    double dt() const { return T / double(N); }

    void validate(const SpectralBasis& basis) const {
        if (!(nu > 0) || !(T > 0) || N < 1) throw std::invalid_argument("SolverConfig: need nu, T > 0, N >= 1");
        if (n != basis.n_modes()) throw std::invalid_argument("SolverConfig: n != basis mode count");
    }
};

/// Time-indexed solution with per-node norms.
struct Trajectory {
    double T = 0;
    double nu = 0;
    std::vector<VelocityCoeffs> states; ///< v(t_0..t_N)
    std::vector<double> h_norms;
    std::vector<double> v_norms;
    std::vector<double> a_norms;

    std::size_t n_steps() const { return states.empty() ? 0 : states.size() - 1; }
    double dt() const { return T / double(n_steps()); }
    double time(std::size_t i) const { return T * double(i) / double(n_steps()); }
};

namespace detail {

/// Record one node into the trajectory and apply the instability guard.
inline void push_state(Trajectory& traj, const SpectralBasis& basis, const VelocityCoeffs& v,
                       double nu, double guard) {
    const double h = h_norm(v);
    if (!(h <= guard) || !std::isfinite(h))
        throw std::runtime_error("scheme instability; reduce dt (|state|_H=" + fmt_double(h) +
                                 " exceeded guard " + fmt_double(guard) + ")");
    traj.states.push_back(v);
    traj.h_norms.push_back(h);
    traj.v_norms.push_back(basis.v_norm(v));
    traj.a_norms.push_back(basis.a_norm(v, nu));
}

} // namespace detail

/// Integrate dv = -Av dt - Q(t) B(v) dt from v(0) = f along one growth path.
/// Deterministic in (f, Q, cfg).  The exact flow contracts |v|_H, so any
/// excursion of |v|_H above 10|f|_H is numerical and raises an error.
inline Trajectory integrate_random_nse(const SpectralBasis& basis, const VelocityCoeffs& f,
                                       const GrowthPath& Q, const SolverConfig& cfg) {
    cfg.validate(basis);
    if (Q.values.size() != cfg.N + 1)
        throw std::invalid_argument("integrate_random_nse: growth path grid differs from solver grid");
    for (double x : f.c)
        if (!std::isfinite(x)) throw std::invalid_argument("integrate_random_nse: non-finite initial data");

    const double dt = cfg.dt();
    const std::size_t n = cfg.n;
    std::vector<double> lin(n); // per-mode linear-step factor
    for (std::size_t i = 0; i < n; ++i)
        lin[i] = cfg.scheme == Scheme::exponential_euler
                     ? std::exp(-cfg.nu * basis.eigenvalue(i) * dt)
                     : 1.0 / (1.0 + cfg.nu * basis.eigenvalue(i) * dt);

    Trajectory traj;
    traj.T = cfg.T;
    traj.nu = cfg.nu;
    traj.states.reserve(cfg.N + 1);
    const double guard = 10.0 * h_norm(f) + 1e-300; // f = 0 stays pinned at 0

    VelocityCoeffs v = f;
    detail::push_state(traj, basis, v, cfg.nu, guard);
    VelocityCoeffs stage(n);
    for (std::size_t step = 0; step < cfg.N; ++step) {
        stage = v;
        basis.accumulate_B(v, v, -dt * Q.values[step], stage);
        for (std::size_t i = 0; i < n; ++i) v[i] = lin[i] * stage[i];
        detail::push_state(traj, basis, v, cfg.nu, guard);
    }
    return traj;
}

/// Margins for sup_t |v|_H <= |f|_H and trapz int ||v||_V^2 <= |f|_H^2/(2 nu).
/// Margins are relative overshoots, clamped at zero; the assertion against
/// the scheme tolerance lives in the tests.
struct EnergyAudit {
    double sup_h = 0;
    double bound_h = 0;
    double margin_h = 0;
    double integral_v2 = 0;
    double bound_v2 = 0;
    double margin_v2 = 0;
};

inline EnergyAudit energy_audit(const Trajectory& traj, const VelocityCoeffs& f, double nu) {
    EnergyAudit rep;
    rep.bound_h = h_norm(f);
    rep.bound_v2 = rep.bound_h * rep.bound_h / (2.0 * nu);
    const double dt = traj.dt();
    for (std::size_t i = 0; i < traj.states.size(); ++i) {
        rep.sup_h = std::max(rep.sup_h, traj.h_norms[i]);
        const double w = (i == 0 || i + 1 == traj.states.size()) ? 0.5 : 1.0;
        rep.integral_v2 += w * dt * traj.v_norms[i] * traj.v_norms[i];
    }
    rep.margin_h = rep.bound_h > 0 ? std::max(0.0, rep.sup_h / rep.bound_h - 1.0) : 0.0;
    rep.margin_v2 = rep.bound_v2 > 0 ? std::max(0.0, rep.integral_v2 / rep.bound_v2 - 1.0) : 0.0;
    return rep;
}

/// V-norm a-priori estimate: the running combination
///   g(t) = ||v(t)||_V^2 + nu * trapz int_0^t |Av|_H^2 ds
/// must satisfy sup_t g(t) <= ||f||_V^2 * exp(c |f|_H^4 sup Q^4).  Reports
/// the smallest admissible c (clamped at 0; the bound's c is generic).
struct VNormAudit {
    double lhs_sup = 0;
    double base = 0;     ///< ||f||_V^2
    double exponent = 0; ///< |f|_H^4 * sup Q^4
    double c_min = 0;
};

inline VNormAudit v_norm_audit(const Trajectory& traj, const VelocityCoeffs& f, const GrowthPath& Q,
                               double nu, const SpectralBasis& basis) {
    VNormAudit rep;
    const double fv = basis.v_norm(f);
    rep.base = fv * fv;
    const double fh = h_norm(f);
    rep.exponent = fh * fh * fh * fh * std::pow(Q.sup_norm, 4);
    const double dt = traj.dt();
    double running = 0; // trapz of |Av|^2 over [0, t_i]
    for (std::size_t i = 0; i < traj.states.size(); ++i) {
        if (i > 0)
            running += 0.5 * dt *
                       (traj.a_norms[i - 1] * traj.a_norms[i - 1] + traj.a_norms[i] * traj.a_norms[i]);
        rep.lhs_sup = std::max(rep.lhs_sup, traj.v_norms[i] * traj.v_norms[i] + nu * running);
    }
    rep.c_min = (rep.base > 0 && rep.exponent > 0 && rep.lhs_sup > rep.base)
                    ? std::log(rep.lhs_sup / rep.base) / rep.exponent
                    : 0.0;
    return rep;
}

/// sup_t |v(t,f1) - v(t,f2)|_H / |f1 - f2|_H along a shared growth path.
/// The flow is Lipschitz on bounded sets, so the ratio is finite; it is
/// recorded, not asserted against a theory value.
inline double flow_lipschitz_probe(const SpectralBasis& basis, const VelocityCoeffs& f1,
                                   const VelocityCoeffs& f2, const GrowthPath& Q,
                                   const SolverConfig& cfg, double R = 1e6) {
    if (h_norm(f1) > R || h_norm(f2) > R)
        throw std::invalid_argument("flow_lipschitz_probe: initial data outside the bounded set R");
    const double gap = h_norm(f1 - f2);
    if (gap == 0) throw std::invalid_argument("flow_lipschitz_probe: f1 = f2, ratio undefined");
    const Trajectory a = integrate_random_nse(basis, f1, Q, cfg);
    const Trajectory b = integrate_random_nse(basis, f2, Q, cfg);
    double sup = 0;
    for (std::size_t i = 0; i < a.states.size(); ++i)
        sup = std::max(sup, h_norm(a.states[i] - b.states[i]) / gap);
    if (!std::isfinite(sup)) throw std::runtime_error("flow_lipschitz_probe: non-finite ratio");
    return sup;
}

/// CSV with per-node norms (t, |v|_H, ||v||_V, |Av|_H).
inline std::string trajectory_to_csv(const Trajectory& traj) {
    std::string out = "t,h_norm,v_norm,a_norm\n";
    for (std::size_t i = 0; i < traj.states.size(); ++i) {
        out += fmt_double(traj.time(i)) + ',' + fmt_double(traj.h_norms[i]) + ',' +
               fmt_double(traj.v_norms[i]) + ',' + fmt_double(traj.a_norms[i]) + '\n';
    }
    return out;
}

/// Full-state NDJSON for oracle replay: header, then one record per node.
inline std::string trajectory_to_ndjson(const Trajectory& traj) {
    std::string out = R"({"format":"snse-trajectory-1","T":)" + fmt_double(traj.T) +
                      ",\"nu\":" + fmt_double(traj.nu) + ",\"n\":" +
                      std::to_string(traj.states.empty() ? 0 : traj.states[0].size()) +
                      ",\"steps\":" + std::to_string(traj.n_steps()) + "}\n";
    for (std::size_t i = 0; i < traj.states.size(); ++i) {
        out += "{\"t\":" + fmt_double(traj.time(i)) + ",\"coeffs\":[";
        for (std::size_t j = 0; j < traj.states[i].size(); ++j) {
            if (j) out += ',';
            out += fmt_double(traj.states[i][j]);
        }
        out += "]}\n";
    }
    return out;
}

} // namespace snse
