#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dualdiff/schedule.hpp"
#include "test_support.hpp"

using namespace dualdiff;

namespace {

GammaField random_field(Rng& rng, int t_fut = 12, int steps = 50) {
    std::vector<double> a1(t_fut), a2(t_fut), a3(t_fut);
    for (int t = 0; t < t_fut; ++t) {
        a1[t] = rng.uniform(0.01, 2.0);
        a2[t] = rng.uniform(0.01, 2.0);
        a3[t] = rng.uniform(0.01, 2.0);
    }
    return GammaField(std::move(a1), std::move(a2), std::move(a3), -13.30, 5.0, steps);
}

}  // namespace

TEST_CASE("linear_schedule endpoints and one-step value") {
    // oracle: alpha_1 = sqrt(1 - 0.05), sigma_1 = sqrt(0.05)
    auto s = linear_schedule(1, 0.05, 0.05);
    CHECK(s.alpha[0] == 1.0);
    CHECK(s.sigma[0] == 0.0);
    CHECK(s.alpha[1] == doctest::Approx(0.9746794344808963).epsilon(1e-15));
    CHECK(s.sigma[1] == doctest::Approx(0.22360679774997896).epsilon(1e-15));
}

TEST_CASE("linear_schedule monotone SNR and variance preservation") {
    auto s = linear_schedule(100, 1e-4, 0.05);
    for (int m = 1; m <= 100; ++m) {
        CHECK(s.snr(m) < s.snr(m - 1));
        CHECK(s.alpha[m] <= s.alpha[m - 1]);
        CHECK(s.sigma[m] >= s.sigma[m - 1]);
        CHECK(std::fabs(s.alpha[m] * s.alpha[m] + s.sigma[m] * s.sigma[m] - 1.0) <= 1e-12);
    }
}

TEST_CASE("linear_schedule rejects bad bounds") {
    CHECK_THROWS_AS(linear_schedule(10, 0.0, 0.05), ConfigError);
    CHECK_THROWS_AS(linear_schedule(10, 0.1, 0.05), ConfigError);
    CHECK_THROWS_AS(linear_schedule(10, 1e-4, 1.0), ConfigError);
    CHECK_THROWS_AS(linear_schedule(0, 1e-4, 0.05), ConfigError);
}

TEST_CASE("transition_params identities") {
    auto s = linear_schedule(100, 1e-4, 0.05);
    SUBCASE("n = 0 collapses to marginal") {
        for (int m : {1, 17, 100}) {
            auto tr = transition_params(s, 0, m);
            CHECK(tr.alpha_cond == doctest::Approx(s.alpha[m]).epsilon(1e-15));
            CHECK(tr.sigma2_cond == doctest::Approx(s.sigma2(m)).epsilon(1e-12));
        }
    }
    SUBCASE("adjacent conditional variances nonnegative") {
        for (int m = 1; m <= 100; ++m) {
            CHECK(transition_params(s, m - 1, m).sigma2_cond >= 0.0);
        }
    }
    SUBCASE("chain identity alpha_{m|n} * alpha_n = alpha_m") {
        Rng rng(4);
        for (int k = 0; k < 50; ++k) {
            const int n = rng.uniform_int(0, 99);
            const int m = rng.uniform_int(n + 1, 100);
            auto tr = transition_params(s, n, m);
            CHECK(tr.alpha_cond * s.alpha[n] == doctest::Approx(s.alpha[m]).epsilon(1e-14));
        }
    }
    SUBCASE("contract violations") {
        CHECK_THROWS_AS(transition_params(s, 5, 5), ContractError);
        CHECK_THROWS_AS(transition_params(s, 6, 5), ContractError);
    }
}

TEST_CASE("gamma_eval boundaries and the linear-term field") {
    SUBCASE("m = 0 pins gamma_min, m = M pins gamma_max") {
        Rng rng(21);
        for (int i = 0; i < 20; ++i) {
            auto g = random_field(rng);
            for (double v : gamma_eval(g, 0)) CHECK(v == -13.30);
            for (double v : gamma_eval(g, g.steps)) CHECK(v == 5.0);
        }
    }
    SUBCASE("a3-only field is linear in m") {
        // f(s) = s when a1 = a2 = 0, a3 = 1; at m = M/2 the ratio is 0.5
        GammaField g({0.0}, {0.0}, {1.0}, -13.30, 5.0, 10);
        auto mid = gamma_eval(g, 5);
        CHECK(mid[0] == doctest::Approx(-13.30 + 18.3 * 0.5).epsilon(1e-15));
    }
    SUBCASE("nondecreasing in m") {
        Rng rng(22);
        auto g = random_field(rng);
        auto prev = gamma_eval(g, 0);
        for (int m = 1; m <= g.steps; ++m) {
            auto cur = gamma_eval(g, m);
            for (std::size_t t = 0; t < cur.size(); ++t) CHECK(cur[t] >= prev[t]);
            prev = cur;
        }
    }
    SUBCASE("degenerate field rejected at construction") {
        CHECK_THROWS_AS(GammaField({0.0}, {0.0}, {0.0}, -13.30, 5.0, 10), ScheduleError);
    }
    SUBCASE("step out of range") {
        GammaField g({0.0}, {0.0}, {1.0}, -13.30, 5.0, 10);
        CHECK_THROWS_AS(gamma_eval(g, 11), ContractError);
        CHECK_THROWS_AS(gamma_eval(g, -1), ContractError);
    }
}

TEST_CASE("adaptive_params normalization and endpoints") {
    SUBCASE("gamma = 0 gives the symmetric point") {
        // symmetric bounds make the a3-only field cross zero at the midpoint
        GammaField g({0.0}, {0.0}, {1.0}, -4.0, 4.0, 10);
        auto p = adaptive_params(g, 5);
        CHECK(p.alpha2[0] == doctest::Approx(0.5).epsilon(1e-14));
        CHECK(p.sigma2[0] == doctest::Approx(0.5).epsilon(1e-14));
        CHECK(p.snr[0] == doctest::Approx(1.0).epsilon(1e-14));
    }
    SUBCASE("sigma2 at m = 0 equals sigmoid(gamma_min)") {
        // oracle: sigmoid(-13.30) = 1.6744904055114539e-6
        Rng rng(31);
        auto g = random_field(rng);
        auto p = adaptive_params(g, 0);
        for (double v : p.sigma2) CHECK(std::fabs(v - 1.6744904055114539e-6) < 1e-12);
    }
    SUBCASE("alpha2 + sigma2 = 1 and snr strictly decreasing in m") {
        Rng rng(32);
        for (int i = 0; i < 100; ++i) {
            auto g = random_field(rng, 8, 20);
            const int m = rng.uniform_int(0, g.steps);
            auto p = adaptive_params(g, m);
            for (int t = 0; t < g.horizon(); ++t) {
                CHECK(std::fabs(p.alpha2[t] + p.sigma2[t] - 1.0) <= 1e-12);
            }
            if (m > 0) {
                auto prev = adaptive_params(g, m - 1);
                for (int t = 0; t < g.horizon(); ++t) CHECK(prev.snr[t] > p.snr[t]);
            }
        }
    }
}

TEST_CASE("snr_gap values and positivity") {
    SUBCASE("adjacent gap of the a3-only field") {
        GammaField g({0.0}, {0.0}, {1.0}, -13.30, 5.0, 10);
        for (int m = 1; m <= 10; ++m) {
            auto gap = snr_gap(g, m - 1, m);
            const auto gn = gamma_eval(g, m - 1);
            const auto gm = gamma_eval(g, m);
            CHECK(gap[0] == doctest::Approx(std::exp(-gn[0]) - std::exp(-gm[0])).epsilon(1e-13));
            CHECK(gap[0] > 0.0);
        }
    }
    SUBCASE("full-range gap equals exp(13.30) - exp(-5.0)") {
        // oracle: 597195.6070548693
        Rng rng(41);
        auto g = random_field(rng);
        auto gap = snr_gap(g, 0, g.steps);
        for (double v : gap) CHECK(v == doctest::Approx(597195.6070548693).epsilon(1e-12));
    }
    SUBCASE("positivity over random pairs and fields") {
        Rng rng(42);
        for (int i = 0; i < 100; ++i) {
            auto g = random_field(rng, 6, 25);
            const int n = rng.uniform_int(0, g.steps - 1);
            const int m = rng.uniform_int(n + 1, g.steps);
            for (double v : snr_gap(g, n, m)) CHECK(v > 0.0);
        }
    }
    SUBCASE("n >= m rejected") {
        Rng rng(43);
        auto g = random_field(rng);
        CHECK_THROWS_AS(snr_gap(g, 3, 3), ContractError);
    }
}

TEST_CASE("adaptive transition consistent with variance preservation") {
    Rng rng(51);
    auto g = random_field(rng, 6, 30);
    for (int m = 1; m <= g.steps; ++m) {
        auto tr = adaptive_transition(g, m - 1, m);
        auto pn = adaptive_params(g, m - 1);
        auto pm = adaptive_params(g, m);
        for (int t = 0; t < g.horizon(); ++t) {
            CHECK(tr.sigma2_cond[t] >= 0.0);
            // marginal composition: alpha_{m|n}^2 sigma_n^2 + sigma_{m|n}^2 = sigma_m^2
            const double lhs =
                tr.alpha_cond[t] * tr.alpha_cond[t] * pn.sigma2[t] + tr.sigma2_cond[t];
            CHECK(lhs == doctest::Approx(pm.sigma2[t]).epsilon(1e-12));
        }
    }
}

TEST_CASE("tensor gamma route agrees with the plain route") {
    Rng rng(61);
    const int t_fut = 7;
    const int steps = 40;
    auto g = random_field(rng, t_fut, steps);
    GammaCoeffs c{Tensor::from_data({1, t_fut}, g.a1), Tensor::from_data({1, t_fut}, g.a2),
                  Tensor::from_data({1, t_fut}, g.a3)};
    for (int m : {0, 1, 13, 27, steps}) {
        auto s_norm = Tensor::full({1, 1}, double(m) / steps);
        auto gt = gamma_at_t(c, s_norm, g.gamma_min, g.gamma_max);
        auto gp = gamma_eval(g, m);
        for (int t = 0; t < t_fut; ++t) {
            CHECK(std::fabs(gt.values()[t] - gp[t]) <= 1e-12);
        }
    }
}

TEST_CASE("tensor gamma route is differentiable") {
    Rng rng(62);
    const int t_fut = 4;
    auto raw1 = Tensor::rand_uniform({1, t_fut}, 0.1, 1.5, rng, true);
    auto raw2 = Tensor::rand_uniform({1, t_fut}, 0.1, 1.5, rng, true);
    auto raw3 = Tensor::rand_uniform({1, t_fut}, 0.1, 1.5, rng, true);
    auto forward = [&]() {
        GammaCoeffs c{softplus(raw1), softplus(raw2), softplus(raw3)};
        auto s = Tensor::full({1, 1}, 0.4);
        auto gamma = gamma_at_t(c, s, -13.30, 5.0);
        return mean(exp(neg(scale(gamma, 0.2))));
    };
    test_support::check_param_gradients(forward, {raw1, raw2, raw3}, 1e-5, 1e-4);
}
