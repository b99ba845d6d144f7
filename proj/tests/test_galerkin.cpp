/// @file test_galerkin.cpp
/// Pathwise integrator for the transformed equation: exact linear cases,
/// energy audits, scheme refinement, the instability guard, and the
/// Lipschitz probe.

#include "snse/galerkin.hpp"
#include "snse/rng.hpp"
#include "snse/wiener.hpp"

#include "catch2/catch_amalgamated.hpp"

#include <cmath>

using namespace snse;

namespace {

SolverConfig make_cfg(const SpectralBasis& b, double nu, double T, std::size_t N,
                      Scheme s = Scheme::exponential_euler) {
    SolverConfig cfg;
    cfg.nu = nu;
    cfg.T = T;
    cfg.N = N;
    cfg.scheme = s;
    cfg.n = b.n_modes();
    return cfg;
}

GrowthPath unit_growth(std::size_t N) {
    GrowthPath Q;
    Q.values.assign(N + 1, 1.0);
    Q.sup_norm = 1.0;
    return Q;
}

} // namespace

TEST_CASE("zero initial data stays zero") {
    const SpectralBasis b = build_torus_basis(2);
    const auto cfg = make_cfg(b, 1.0, 1.0, 64);
    const Trajectory t = integrate_random_nse(b, VelocityCoeffs(b.n_modes()), unit_growth(64), cfg);
    for (const auto& state : t.states)
        for (std::size_t i = 0; i < state.size(); ++i) CHECK(state[i] == 0.0);
}

TEST_CASE("single-mode data decays exactly and excites nothing") {
    const SpectralBasis b = build_torus_basis(2);
    const double nu = 0.8;
    const auto cfg = make_cfg(b, nu, 1.0, 256);
    const WienerPath p = sample_path(1.0, 256, 21);
    const GrowthPath Q = growth_process(p, 1.0);
    VelocityCoeffs f(b.n_modes());
    f[0] = 1.25;
    const Trajectory t = integrate_random_nse(b, f, Q, cfg);
    for (std::size_t i = 0; i <= 256; ++i) {
        // B vanishes along a single mode, so the flow is the pure decay.
        CHECK(std::abs(t.states[i][0] - f[0] * std::exp(-nu * b.eigenvalue(0) * t.time(i))) <=
              1e-12 * f[0]);
        for (std::size_t m = 1; m < b.n_modes(); ++m) CHECK(t.states[i][m] == 0.0);
    }
}

TEST_CASE("implicit-explicit scheme applies the resolvent factor") {
    const SpectralBasis b = build_torus_basis(1);
    const double nu = 2.0;
    const std::size_t N = 16;
    const auto cfg = make_cfg(b, nu, 1.0, N, Scheme::imex_euler);
    VelocityCoeffs f(b.n_modes());
    f[2] = 1.0;
    const Trajectory t = integrate_random_nse(b, f, unit_growth(N), cfg);
    const double factor = 1.0 / (1.0 + nu * b.eigenvalue(2) * cfg.dt());
    double expect = f[2];
    for (std::size_t i = 0; i <= N; ++i) {
        CHECK(t.states[i][2] == Catch::Approx(expect).epsilon(1e-14));
        expect *= factor;
    }
    CHECK(scheme_from_name("imex-euler") == Scheme::imex_euler);
    CHECK_THROWS_AS(scheme_from_name("rk4"), std::invalid_argument);
}

TEST_CASE("energy audit on an ensemble of two-mode trajectories") {
    const SpectralBasis b = build_torus_basis(2);
    const double nu = 1.0, T = 1.0;
    VelocityCoeffs f(b.n_modes());
    f[0] = 1.0;
    f[5] = 0.6;
    const double fh = h_norm(f);

    for (std::size_t N : {std::size_t(512), std::size_t(1024)}) {
        const auto cfg = make_cfg(b, nu, T, N);
        for (std::uint64_t path = 0; path < 8; ++path) {
            const WienerPath p = sample_path(T, N, 404, path);
            const GrowthPath Q = growth_process(p, 1.0);
            const Trajectory t = integrate_random_nse(b, f, Q, cfg);
            const EnergyAudit ea = energy_audit(t, f, nu);
            CHECK(ea.sup_h <= fh * (1 + 5 * cfg.dt()));
            CHECK(ea.integral_v2 <= fh * fh / (2 * nu) * (1 + 5 * cfg.dt()));
            CHECK(ea.margin_h <= 5 * cfg.dt());
            CHECK(ea.margin_v2 <= 5 * cfg.dt());
            CHECK(ea.bound_h == fh);
            CHECK(ea.bound_v2 == fh * fh / (2 * nu));
        }
    }
}

TEST_CASE("running energy bound: single-mode case needs no exponential slack") {
    const SpectralBasis b = build_torus_basis(2);
    const double nu = 1.0;
    const auto cfg = make_cfg(b, nu, 1.0, 512);
    const WienerPath p = sample_path(1.0, 512, 31);
    const GrowthPath Q = growth_process(p, 0.5);
    VelocityCoeffs f(b.n_modes());
    f[0] = 2.0;
    const Trajectory t = integrate_random_nse(b, f, Q, cfg);
    const VNormAudit va = v_norm_audit(t, f, Q, nu, b);
    CHECK(va.base == b.v_norm(f) * b.v_norm(f));
    CHECK(va.c_min == 0.0);
    CHECK(va.lhs_sup <= va.base * (1 + 1e-12));
}

TEST_CASE("running energy bound: empirical constant is stable under refinement") {
    const SpectralBasis b = build_torus_basis(2);
    VelocityCoeffs f(b.n_modes());
    f[0] = 1.0;
    f[4] = 0.8;
    f[9] = 0.5;
    double prev = -1;
    for (std::size_t N : {std::size_t(256), std::size_t(512), std::size_t(1024)}) {
        const auto cfg = make_cfg(b, 1.0, 1.0, N);
        const WienerPath p = coarsen(sample_path(1.0, 1024, 11), 1024 / N);
        const GrowthPath Q = growth_process(p, 1.0);
        const VNormAudit va = v_norm_audit(integrate_random_nse(b, f, Q, cfg), f, Q, 1.0, b);
        CHECK(va.c_min >= 0.0);
        CHECK(std::isfinite(va.c_min));
        if (prev >= 0) CHECK(std::abs(va.c_min - prev) <= std::max(prev, 1e-6));
        prev = va.c_min;
    }
}

TEST_CASE("deterministic refinement: first order in the step size") {
    const SpectralBasis b = build_torus_basis(2);
    VelocityCoeffs f(b.n_modes());
    f[0] = 1.0;
    f[5] = 0.9;
    f[8] = 0.4;
    const auto ref_cfg = make_cfg(b, 0.5, 1.0, 4096);
    const Trajectory ref = integrate_random_nse(b, f, unit_growth(4096), ref_cfg);

    std::vector<double> errs;
    for (std::size_t N : {std::size_t(256), std::size_t(512), std::size_t(1024)}) {
        const auto cfg = make_cfg(b, 0.5, 1.0, N);
        const Trajectory t = integrate_random_nse(b, f, unit_growth(N), cfg);
        errs.push_back(h_norm(t.states[N] - ref.states[4096]));
    }
    CHECK(errs[0] / errs[1] > 1.8);
    CHECK(errs[1] / errs[2] > 1.8);
}

TEST_CASE("same inputs give bitwise-identical trajectories") {
    const SpectralBasis b = build_torus_basis(2);
    const auto cfg = make_cfg(b, 1.0, 1.0, 128);
    const WienerPath p = sample_path(1.0, 128, 77, 5);
    const GrowthPath Q = growth_process(p, 1.0);
    VelocityCoeffs f(b.n_modes());
    f[0] = 1.0;
    f[7] = -0.3;
    const Trajectory a = integrate_random_nse(b, f, Q, cfg);
    const Trajectory c = integrate_random_nse(b, f, Q, cfg);
    for (std::size_t i = 0; i <= 128; ++i) CHECK(a.states[i].c == c.states[i].c);
}

TEST_CASE("instability guard reports blow-up instead of overflowing") {
    const SpectralBasis b = build_torus_basis(2);
    const auto cfg = make_cfg(b, 1e-9, 1.0, 2);
    VelocityCoeffs f(b.n_modes());
    for (std::size_t i = 0; i < b.n_modes(); ++i) f[i] = 400.0 + double(i);
    CHECK_THROWS_WITH(integrate_random_nse(b, f, unit_growth(2), cfg),
                      Catch::Matchers::ContainsSubstring("instability"));
}

TEST_CASE("flow lipschitz probe") {
    const SpectralBasis b = build_torus_basis(2);
    const auto cfg = make_cfg(b, 1.0, 1.0, 128);
    VelocityCoeffs f1(b.n_modes()), f2(b.n_modes());
    f1[0] = 1.0;
    f2[0] = 1.0 + 1e-3;
    f2[5] = 1e-3;
    const GrowthPath Q = unit_growth(128);
    const double ratio = flow_lipschitz_probe(b, f1, f2, Q, cfg);
    CHECK(ratio >= 1.0); // the sup includes t = 0
    CHECK(ratio < 10.0);
    CHECK_THROWS_AS(flow_lipschitz_probe(b, f1, f1, Q, cfg), std::invalid_argument);
    VelocityCoeffs huge(b.n_modes());
    huge[0] = 2e6;
    CHECK_THROWS_AS(flow_lipschitz_probe(b, huge, f1, Q, cfg), std::invalid_argument);
}

TEST_CASE("trajectory serialization") {
    const SpectralBasis b = build_torus_basis(1);
    const auto cfg = make_cfg(b, 1.0, 0.5, 8);
    VelocityCoeffs f(b.n_modes());
    f[1] = 0.7;
    const Trajectory t = integrate_random_nse(b, f, unit_growth(8), cfg);
    const std::string csv = trajectory_to_csv(t);
    CHECK(csv.rfind("t,h_norm,v_norm,a_norm\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 10); // header + 9 nodes

    const std::string nd = trajectory_to_ndjson(t);
    CHECK(nd.find("snse-trajectory-1") != std::string::npos);
    CHECK(std::count(nd.begin(), nd.end(), '\n') == 10);
}
