/// @file test_anticipating.cpp
/// Random initial fields, the Skorohod/Stratonovich estimators, and the
/// residual of the anticipating equation in both forms.

#include "snse/anticipating.hpp"

#include "catch2/catch_amalgamated.hpp"

#include <cmath>

using namespace snse;

namespace {

SolverConfig make_cfg(const SpectralBasis& b, double nu, double T, std::size_t N) {
    SolverConfig cfg;
    cfg.nu = nu;
    cfg.T = T;
    cfg.N = N;
    cfg.n = b.n_modes();
    return cfg;
}

} // namespace

TEST_CASE("initial field evaluation and its noise derivative") {
    const double T = 1.0;
    const WienerPath p = sample_path(T, 64, 7);

    SECTION("one observation time") {
        const auto Y = RandomInitialField::parse(4, {T}, {{0, "1 + 0.5*sin(w1)"}});
        const double wT = p.values.back();
        const VelocityCoeffs y = evaluate_Y(Y, p);
        CHECK(y[0] == Catch::Approx(1 + 0.5 * std::sin(wT)).epsilon(1e-15));
        CHECK(y[1] == 0.0);

        // D_sY = 0.5 cos(W(T)) e_0 for every s in [0, T], including s = T.
        for (double s : {0.0, 0.5, 1.0}) {
            const VelocityCoeffs d = malliavin_Y(Y, p, s);
            CHECK(d[0] == Catch::Approx(0.5 * std::cos(wT)).epsilon(1e-15));
            CHECK(d[1] == 0.0);
        }
        CHECK_THROWS_AS(malliavin_Y(Y, p, 1.5), std::invalid_argument);
    }

    SECTION("two observation times, two segments") {
        const auto Y = RandomInitialField::parse(4, {0.25, 0.75}, {{1, "w1 + w2^2"}});
        const auto w = Y.observe(p);
        CHECK(w[0] == p.values[16]);
        CHECK(w[1] == p.values[48]);
        CHECK(evaluate_Y(Y, p)[1] == Catch::Approx(w[0] + w[1] * w[1]).epsilon(1e-15));

        CHECK(malliavin_Y(Y, p, 0.1)[1] == Catch::Approx(1 + 2 * w[1]).epsilon(1e-14));
        CHECK(malliavin_Y(Y, p, 0.25)[1] == Catch::Approx(1 + 2 * w[1]).epsilon(1e-14));
        CHECK(malliavin_Y(Y, p, 0.5)[1] == Catch::Approx(2 * w[1]).epsilon(1e-14));
        CHECK(malliavin_Y(Y, p, 0.75)[1] == Catch::Approx(2 * w[1]).epsilon(1e-14));
        CHECK(malliavin_Y(Y, p, 0.9)[1] == 0.0);
    }

    SECTION("parse rejections") {
        CHECK_THROWS_AS(RandomInitialField::parse(4, {0.5, 0.5}, {{0, "w1"}}),
                        std::invalid_argument);
        CHECK_THROWS_AS(RandomInitialField::parse(4, {0.0}, {{0, "w1"}}), std::invalid_argument);
        CHECK_THROWS_AS(RandomInitialField::parse(4, {0.5}, {{4, "w1"}}), std::invalid_argument);
        CHECK_THROWS_AS(RandomInitialField::parse(4, {0.5}, {{0, "w2"}}), std::invalid_argument);
        CHECK_THROWS_AS(RandomInitialField::parse(4, {0.5}, {{0, "log(w1)"}}),
                        std::invalid_argument);
    }
}

TEST_CASE("deterministic field reduces to the pathwise solve") {
    const SpectralBasis b = build_torus_basis(2);
    const std::size_t N = 512;
    const auto cfg = make_cfg(b, 1.0, 1.0, N);
    const WienerPath p = sample_path(1.0, N, 19);
    const auto Y = RandomInitialField::parse(b.n_modes(), {}, {{0, "1"}, {5, "0.5"}});

    const AnticipatingRun run = solve_anticipating(b, Y, p, 1.0, cfg);
    VelocityCoeffs f(b.n_modes());
    f[0] = 1.0;
    f[5] = 0.5;
    const Trajectory v = integrate_random_nse(b, f, growth_process(p, 1.0), cfg);
    for (std::size_t i = 0; i <= N; ++i) CHECK(run.v.states[i].c == v.states[i].c);
    for (std::size_t s : {std::size_t(0), N / 2, N}) {
        const VelocityCoeffs d = run.dY_at(s);
        for (std::size_t m = 0; m < d.size(); ++m) CHECK(d[m] == 0.0);
    }
}

TEST_CASE("deterministic sigma = 0 residual is pure quadrature error, first order") {
    const SpectralBasis b = build_torus_basis(2);
    const auto Y = RandomInitialField::parse(b.n_modes(), {}, {{0, "1"}, {4, "0.7"}, {9, "0.4"}});
    double prev = -1;
    for (std::size_t N : {std::size_t(512), std::size_t(1024)}) {
        const auto cfg = make_cfg(b, 1.0, 1.0, N);
        const WienerPath p = sample_path(1.0, N, 1);
        const AnticipatingRun run = solve_anticipating(b, Y, p, 0.0, cfg);
        const auto rep = residual_anticipating(run, make_partition(N, 8));
        CHECK(rep.ito_form == rep.strat_form); // every noise term carries sigma = 0
        CHECK(rep.ito_form <= 0.05 * rep.scale);
        if (prev > 0) CHECK(rep.ito_form <= 0.6 * prev);
        prev = rep.ito_form;
    }
}

TEST_CASE("step-process skorohod integral with deterministic cells") {
    const WienerPath p = sample_path(1.0, 32, 23);
    VelocityCoeffs c(3);
    c[0] = 2.5;

    SECTION("single cell is c * W(T)") {
        const VelocityCoeffs r = skorohod_integral_step({c}, p, {0, 32});
        CHECK(std::abs(r[0] - 2.5 * p.values[32]) <= 1e-13);
        CHECK(r[1] == 0.0);
    }
    SECTION("constant cells telescope") {
        const VelocityCoeffs r = skorohod_integral_step({c, c, c, c}, p, {0, 8, 16, 24, 32});
        CHECK(std::abs(r[0] - 2.5 * p.values[32]) <= 1e-13);
    }
    SECTION("partition validation") {
        CHECK_THROWS_AS(skorohod_integral_step({c}, p, {1, 32}), std::invalid_argument);
        CHECK_THROWS_AS(skorohod_integral_step({c}, p, {0, 40}), std::invalid_argument);
        CHECK_THROWS_AS(skorohod_integral_step({c, c}, p, {0, 16, 16}), std::invalid_argument);
        CHECK_THROWS_AS(skorohod_integral_step({c, c}, p, {0, 32}), std::invalid_argument);
        CHECK_THROWS_AS(make_partition(16, 0), std::invalid_argument);
    }
}

TEST_CASE("adapted data: skorohod estimate collapses to the left Ito sums") {
    const SpectralBasis b = build_torus_basis(2);
    const std::size_t N = 128;
    const auto cfg = make_cfg(b, 1.0, 1.0, N);
    const WienerPath p = sample_path(1.0, N, 37);
    const auto Y = RandomInitialField::parse(b.n_modes(), {}, {{0, "1"}, {6, "-0.4"}});
    const AnticipatingRun run = solve_anticipating(b, Y, p, 1.0, cfg);

    const VelocityCoeffs sk = skorohod_integral(run, make_partition(N, 1));
    VelocityCoeffs ito(b.n_modes());
    for (std::size_t i = 0; i < N; ++i)
        axpy(run.Q.values[i] * (p.values[i + 1] - p.values[i]), run.v.states[i], ito);
    CHECK(h_norm(sk - ito) <= 1e-14 * (h_norm(ito) + 1.0));
}

TEST_CASE("single-mode anticipating field: correction matches the closed form") {
    // Y = W(T/2) e_0: v(t) = W(T/2) e^{-nu mu t} e_0 and Dv(t,Y)e_0 = e^{-nu mu t} e_0,
    // so the substitution correction is e_0 * trapz int_0^t Q(s) e^{-nu mu s} 1_{s<=T/2} ds.
    const SpectralBasis b = build_torus_basis(2);
    const double nu = 1.0, sigma = 1.0;
    const std::size_t N = 256;
    const auto cfg = make_cfg(b, nu, 1.0, N);
    const WienerPath p = sample_path(1.0, N, 55);
    const auto Y = RandomInitialField::parse(b.n_modes(), {0.5}, {{0, "w1"}});
    const AnticipatingRun run = solve_anticipating(b, Y, p, sigma, cfg);

    CHECK(run.f[0] == p.values[N / 2]);
    const double mu = b.eigenvalue(0);
    const auto rep = residual_anticipating(run, make_partition(N, 8));

    double manual = 0;
    for (std::size_t s = 0; s <= N / 2; ++s) {
        const double w = (s == 0 ? 0.5 : 1.0) * cfg.dt(); // s = N/2 is interior to [0, N]
        manual += w * run.Q.values[s] * std::exp(-nu * mu * run.v.time(s));
    }
    CHECK(rep.correction[0] == Catch::Approx(manual).epsilon(1e-12));
    for (std::size_t m = 1; m < b.n_modes(); ++m) CHECK(rep.correction[m] == 0.0);
}

TEST_CASE("one-sided traces differ by sigma u") {
    const SpectralBasis b = build_torus_basis(2);
    const std::size_t N = 128;
    const auto cfg = make_cfg(b, 1.0, 1.0, N);
    const WienerPath p = sample_path(1.0, N, 71);
    const auto Y = RandomInitialField::parse(b.n_modes(), {1.0}, {{0, "1 + 0.5*sin(w1)"}});
    for (double sigma : {0.5, 1.0}) {
        const AnticipatingRun run = solve_anticipating(b, Y, p, sigma, cfg);
        for (std::size_t s : {std::size_t(0), N / 4, N / 2, N}) {
            const auto [dm, dp] = one_sided(run, s);
            const VelocityCoeffs u = run.u_at(s);
            CHECK(h_norm(dp - dm - sigma * u) <= 1e-14 * (h_norm(u) + h_norm(dm) + 1.0));
            const VelocityCoeffs grad = nabla_u(run, s);
            CHECK(h_norm(grad - (dm + dp)) == 0.0);
        }
    }
    CHECK_THROWS_AS(one_sided(solve_anticipating(b, Y, p, 1.0, cfg), N + 1),
                    std::invalid_argument);
}

TEST_CASE("anticipating residual: both forms agree and shrink under refinement") {
    const SpectralBasis b = build_torus_basis(2);
    const double T = 1.0;
    const std::size_t N_fine = 1 << 11;
    const WienerPath fine = sample_path(T, N_fine, 2024, 3);

    const std::vector<std::pair<const char*, RandomInitialField>> fields = {
        {"sin", RandomInitialField::parse(b.n_modes(), {T}, {{0, "1 + 0.5*sin(w1)"}})},
        {"mid", RandomInitialField::parse(b.n_modes(), {T / 2}, {{0, "w1"}})},
    };

    for (const auto& [name, Y] : fields) {
        INFO(name);
        for (double sigma : {0.5, 1.0}) {
            INFO(sigma);
            double prev = -1;
            double final_res = 0, final_scale = 0, final_ablated = 0;
            for (std::size_t N : {std::size_t(1) << 9, std::size_t(1) << 10, N_fine}) {
                const auto cfg = make_cfg(b, 1.0, T, N);
                const WienerPath p = coarsen(fine, N_fine / N);
                const AnticipatingRun run = solve_anticipating(b, Y, p, sigma, cfg);
                const auto rep = residual_anticipating(run, make_partition(N, 8));
                CHECK(std::abs(rep.ito_form - rep.strat_form) <= 1e-12 * rep.scale);
                if (prev > 0) CHECK(rep.ito_form <= prev / 1.25);
                prev = rep.ito_form;
                final_res = rep.ito_form;
                final_scale = rep.scale;
                final_ablated = rep.ablated;
            }
            CHECK(final_res <= 0.10 * final_scale);
            CHECK(final_ablated >= 3.0 * final_res);
        }
    }
}

TEST_CASE("solve validation") {
    const SpectralBasis b = build_torus_basis(1);
    const auto cfg = make_cfg(b, 1.0, 1.0, 64);
    const WienerPath p = sample_path(1.0, 64, 4);
    const auto bad_dim = RandomInitialField::parse(2, {}, {{0, "1"}});
    CHECK_THROWS_AS(solve_anticipating(b, bad_dim, p, 1.0, cfg), std::invalid_argument);
    const auto ok = RandomInitialField::parse(b.n_modes(), {}, {{0, "1"}});
    const WienerPath p32 = sample_path(1.0, 32, 4);
    CHECK_THROWS_AS(solve_anticipating(b, ok, p32, 1.0, cfg), std::invalid_argument);
    const AnticipatingRun run = solve_anticipating(b, ok, p, 1.0, cfg);
    CHECK_THROWS_AS(residual_anticipating(run, {0, 70}), std::invalid_argument);
    CHECK_THROWS_AS(residual_anticipating(run, {4, 64}), std::invalid_argument);
}
