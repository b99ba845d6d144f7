/// @file wiener.hpp
/// Brownian driving paths, the growth process Q = exp(sigma*W), Cameron-
/// Martin shifts, and the Malliavin derivative of Q.
///
/// All randomness in the project enters through sample_path; everything
/// downstream is a deterministic function of the path.

#pragma once

#include "snse/io.hpp"
#include "snse/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace snse {

/// Noise intensities sigma_k of the driving cylindrical noise.
struct NoiseSpec {
    std::vector<double> sigmas;

    /// Root-sum-square reduction to a single scalar intensity.  The
    /// multi-noise model with intensities sigma_k driving one solution is
    /// equivalent in law to a single Brownian motion with this sigma.
    double collapsed_sigma() const {
        double s2 = 0;
        for (double s : sigmas) {
            if (!std::isfinite(s)) throw std::invalid_argument("non-finite noise intensity");
            s2 += s * s;
        }
        return std::sqrt(s2);
    }
};

/// Reduce a NoiseSpec to the scalar sigma used by all dynamics.
inline double collapse_noise(const NoiseSpec& spec) {
    const double s = spec.collapsed_sigma();
    if (spec.sigmas.empty() || s == 0.0)
        throw std::invalid_argument("degenerate noise: empty or all-zero intensities "
                                    "(use sigma=0 mode explicitly for the deterministic equation)");
    return s;
}

/// A scalar Brownian path sampled on the uniform grid t_i = i*T/N.
struct WienerPath {
    double horizon = 0;          ///< T
    std::size_t n_steps = 0;     ///< N
    std::vector<double> values;  ///< W(t_0..t_N), W(t_0) = 0
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;    ///< path index within an ensemble

    double dt() const { return horizon / double(n_steps); }
    double time(std::size_t i) const { return horizon * double(i) / double(n_steps); }

    /// Node index of time t; t must sit on the grid to within rounding.
    std::size_t node(double t) const {
        const double x = t / dt();
        const auto i = std::size_t(std::llround(x));
        if (i > n_steps || std::abs(x - double(i)) > 1e-9 * double(std::max<std::size_t>(n_steps, 1)))
            throw std::invalid_argument("time " + fmt_double(t) + " is not a grid node");
        return i;
    }
};

/// Sample a Brownian path.  Increments are i.i.d. N(0, T/N) drawn from a
/// counter-based stream, so equal (T, N, seed, stream) is bit-reproducible
/// and distinct streams may be generated concurrently in any order.
inline WienerPath sample_path(double T, std::size_t N, std::uint64_t seed, std::uint64_t stream = 0) {
    if (!(T > 0) || N < 1) throw std::invalid_argument("sample_path: need T > 0 and N >= 1");
    WienerPath p;
    p.horizon = T;
    p.n_steps = N;
    p.seed = seed;
    p.stream = stream;
    p.values.resize(N + 1);
    const GaussianStream g(seed, stream);
    const double root_dt = std::sqrt(T / double(N));
    double w = 0;
    p.values[0] = 0;
    for (std::size_t i = 0; i < N; ++i) {
        w += root_dt * g.normal(i);
        p.values[i + 1] = w;
    }
    return p;
}

/// Keep every `factor`-th node of a path (factor divides N).  The result is
/// the same Brownian path observed on a coarser grid, which is what nested
/// refinement studies need.
inline WienerPath coarsen(const WienerPath& p, std::size_t factor) {
    if (factor == 0 || p.n_steps % factor != 0)
        throw std::invalid_argument("coarsen: factor must divide N");
    WienerPath q;
    q.horizon = p.horizon;
    q.n_steps = p.n_steps / factor;
    q.seed = p.seed;
    q.stream = p.stream;
    q.values.resize(q.n_steps + 1);
    for (std::size_t i = 0; i <= q.n_steps; ++i) q.values[i] = p.values[i * factor];
    return q;
}

/// The multiplicative growth process Q(t) = exp(sigma*W(t)).
struct GrowthPath {
    std::vector<double> values; ///< Q(t_0..t_N), Q(t_0) = 1
    double sup_norm = 1;        ///< max_i Q(t_i)
};

/// Exact growth process at the grid nodes.
inline GrowthPath growth_process(const WienerPath& path, double sigma) {
    if (sigma < 0) throw std::invalid_argument("growth_process: sigma must be >= 0");
    GrowthPath q;
    q.values.resize(path.values.size());
    q.sup_norm = 0;
    for (std::size_t i = 0; i < path.values.size(); ++i) {
        q.values[i] = std::exp(sigma * path.values[i]);
        q.sup_norm = std::max(q.sup_norm, q.values[i]);
    }
    return q;
}

/// Heun (Stratonovich midpoint) integration of dQ = sigma*Q o dW on the
/// path's own grid.  Reference scheme for strong-order studies against the
/// exact exponential; not used by the dynamics.
inline GrowthPath heun_growth(const WienerPath& path, double sigma) {
    GrowthPath q;
    q.values.resize(path.values.size());
    double Q = 1;
    q.values[0] = 1;
    q.sup_norm = 1;
    for (std::size_t i = 0; i + 1 < path.values.size(); ++i) {
        const double dW = path.values[i + 1] - path.values[i];
        const double pred = Q + sigma * Q * dW;
        Q = Q + 0.5 * sigma * (Q + pred) * dW;
        q.values[i + 1] = Q;
        q.sup_norm = std::max(q.sup_norm, Q);
    }
    return q;
}

/// Shift a path by eps times the primitive of a cell-wise constant h:
/// W(t_i) -> W(t_i) + eps * sum_{j<i} h_j dt.  h has one value per grid cell.
inline WienerPath cameron_martin_shift(const WienerPath& path, const std::vector<double>& h, double eps) {
    if (h.size() != path.n_steps)
        throw std::invalid_argument("cameron_martin_shift: h needs one value per grid cell");
    WienerPath out = path;
    const double dt = path.dt();
    double integral = 0;
    for (std::size_t i = 0; i < path.n_steps; ++i) {
        out.values[i + 1] = path.values[i + 1] + eps * (integral += h[i] * dt);
    }
    return out;
}

/// Malliavin derivative of the growth process: D_u Q(t) = sigma*Q(t) for
/// u <= t and 0 otherwise (Q(t) depends on the noise only through W(t)).
inline double malliavin_Q(const GrowthPath& Q, const WienerPath& path, double sigma, double u, double t) {
    if (u < 0 || t < 0 || u > path.horizon || t > path.horizon)
        throw std::invalid_argument("malliavin_Q: times outside [0, T]");
    if (u > t) return 0.0;
    return sigma * Q.values[path.node(t)];
}

/// CSV with columns (t, W), shortest round-trip decimals.
inline std::string path_to_csv(const WienerPath& p) {
    std::string out = "t,W\n";
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        out += fmt_double(p.time(i));
        out += ',';
        out += fmt_double(p.values[i]);
        out += '\n';
    }
    return out;
}

/// Inverse of path_to_csv.  The grid must be uniform from 0; seed provenance
/// is not recoverable from CSV and is left zero.
inline WienerPath path_from_csv(const std::vector<std::string>& lines) {
    if (lines.empty() || split_csv(lines[0]) != std::vector<std::string>{"t", "W"})
        throw std::invalid_argument("path CSV: bad header");
    WienerPath p;
    std::vector<double> ts;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = split_csv(lines[i]);
        if (f.size() != 2) throw std::invalid_argument("path CSV: bad row");
        ts.push_back(parse_double(f[0]));
        p.values.push_back(parse_double(f[1]));
    }
    if (ts.size() < 2 || ts.front() != 0 || p.values.front() != 0)
        throw std::invalid_argument("path CSV: must start at (0, 0)");
    p.n_steps = ts.size() - 1;
    p.horizon = ts.back();
    const double dt = p.horizon / double(p.n_steps);
    for (std::size_t i = 0; i < ts.size(); ++i)
        if (std::abs(ts[i] - double(i) * dt) > 1e-9 * p.horizon)
            throw std::invalid_argument("path CSV: grid not uniform");
    return p;
}

} // namespace snse
