#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "crsma/sca.hpp"

using namespace crsma;

namespace {

Structure single_pair() {
    PairingPolicy pol;
    pol.pairs = {{1, 2}};
    SplitPlan plan;
    plan.subs = {{1, 2}, {2, 1}};
    plan.cooperative = true;
    return make_structure(pol, plan);
}

Structure three_pairs() {
    PairingPolicy pol;
    pol.pairs = {{1, 4}, {2, 5}, {3, 6}};
    SplitPlan plan;
    plan.cooperative = true;
    for (int u : {1, 2, 3}) plan.subs[u] = 2;
    for (int v : {4, 5, 6}) plan.subs[v] = 1;
    return make_structure(pol, plan);
}

SystemConfig pair_config(unsigned long long seed) {
    SystemConfig cfg;
    cfg.K = 2;
    cfg.N = 8;
    cfg.seed = seed;
    return cfg;
}

// All-ones length-2 vectors with sigma2 = 0.01: self_gain 1, noise_gain 0.005
// for both users, unit D2D link.
ChannelSet toy_channels() {
    ChannelSet ch;
    ch.h[1] = cvec::Ones(2);
    ch.h[2] = cvec::Ones(2);
    ch.tau[1] = ch.tau[2] = 1.0;
    ch.h_cross[{1, 2}] = 1.0;
    return ch;
}

SystemConfig toy_config() {
    SystemConfig cfg;
    cfg.K = 2;
    cfg.N = 2;
    cfg.sigma2 = 0.01;
    cfg.p_u_max = 30.0; // 1 W
    cfg.p_v_max = 30.0;
    cfg.r_th_u = 0.0;
    cfg.r_th_v = 0.0;
    return cfg;
}

int count_prefix(const std::vector<std::string>& names, const std::string& prefix) {
    int n = 0;
    for (const auto& s : names)
        if (s.rfind(prefix, 0) == 0) ++n;
    return n;
}

} // namespace

TEST_CASE("agm upper bound matches hand values and rejects bad multipliers") {
    CHECK(agm_upper_bound(3.0, 3.0, 1.0) == Catch::Approx(18.0).epsilon(1e-15));
    CHECK(agm_upper_bound(3.0, 3.0, 1.0) == Catch::Approx(2.0 * 3.0 * 3.0).epsilon(1e-15));
    CHECK(agm_upper_bound(1.0, 4.0, 1.0) == Catch::Approx(17.0).epsilon(1e-15));
    CHECK(agm_upper_bound(1.0, 4.0, 1.0) >= 2.0 * 1.0 * 4.0);
    CHECK_THROWS_AS(agm_upper_bound(1.0, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(agm_upper_bound(1.0, 1.0, -2.0), std::invalid_argument);
}

TEST_CASE("agm upper bound dominates twice the product") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> uni(1e-3, 10.0);
    for (int i = 0; i < 10000; ++i) {
        double x = uni(rng), y = uni(rng);
        // Every tenth triple uses the tight multiplier exactly.
        double a = i % 10 == 0 ? std::sqrt(y / x) : uni(rng);
        double bound = agm_upper_bound(x, y, a);
        REQUIRE(bound >= 2.0 * x * y - 1e-12 * bound);
        if (std::abs(a - std::sqrt(y / x)) < 1e-9) {
            REQUIRE(bound == Catch::Approx(2.0 * x * y).epsilon(1e-12));
        } else if (bound <= 2.0 * x * y * (1.0 + 1e-12)) {
            REQUIRE(std::abs(a - std::sqrt(y / x)) < 1e-9);
        }
    }
}

TEST_CASE("single-pair program carries the expected variable census") {
    auto ch = toy_channels();
    auto cfg = toy_config();
    auto mc = mrc_coefficients(ch, cfg);
    auto st = single_pair();
    SurrogateState surr;
    surr.phi.assign(5, 1.0);

    auto bld = build_socp(st, mc, ch, cfg, 0.5, surr);
    const auto& names = bld.prog.var_names;
    CHECK(count_prefix(names, "Lu:") == 1);
    CHECK(count_prefix(names, "Lv:") == 1);
    CHECK(count_prefix(names, "p:") + count_prefix(names, "pr:") + count_prefix(names, "q:") == 4);
    CHECK(count_prefix(names, "alpha:") == 2);
    CHECK(count_prefix(names, "beta_u:") + count_prefix(names, "beta_v:") == 2);
    CHECK(count_prefix(names, "omega:") == 1);
    CHECK(count_prefix(names, "gamma:") == 2);
    CHECK(count_prefix(names, "mu_u:") + count_prefix(names, "mu_v:") == 2);
    CHECK(count_prefix(names, "eta:") == 1);
    // One envelope value per log term is the only addition on top of that.
    CHECK(count_prefix(names, "t_") == 5);
    CHECK((int)names.size() == 2 + 4 + 10 + 5);
    CHECK(bld.margin_col == -1);

    auto bld1 = build_socp(st, mc, ch, cfg, 0.5, surr, true);
    CHECK(bld1.margin_col >= 0);
    CHECK((int)bld1.prog.var_names.size() == (int)names.size() + 1);
}

TEST_CASE("program rows hold at a hand-built feasible point") {
    auto ch = toy_channels();
    auto cfg = toy_config();
    auto mc = mrc_coefficients(ch, cfg);
    auto st = single_pair();
    SurrogateState surr;
    surr.phi.assign(5, 1.0);
    auto bld = build_socp(st, mc, ch, cfg, 0.4, surr);

    // 0.1 W per stream, exact interference denominators, SINR variables at
    // 90% of what the phi = 1 product cone admits, envelope values at 90% of
    // the chord minimum, both rate bounds left at zero.
    std::map<std::string, double> point;
    point["p:1:1"] = point["p:1:2"] = point["pr:1"] = point["q:2:1"] = 0.1;
    point["Lu:1"] = point["Lv:2"] = 0.0;
    for (const auto& ps : bld.products) {
        double y = ps.noise;
        for (const auto& t : ps.intf) y += t.coeff * point.at(t.var);
        double gp = ps.gain * point.at(ps.power);
        double x = 0.9 * std::sqrt(std::max(0.0, 2.0 * gp - y * y));
        auto env = socp_detail::make_envelope(ps.xmax);
        double tv = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < env.slope.size(); ++i)
            tv = std::min(tv, env.slope[i] * x + env.intercept[i]);
        point[ps.x_name] = x;
        point[ps.y_name] = y;
        point[ps.t_name] = 0.9 * std::max(0.0, tv);
    }

    Eigen::VectorXd xhat = Eigen::VectorXd::Zero(bld.prog.G.cols());
    for (const auto& [name, col] : bld.index) xhat(col) = point.at(name);
    Eigen::VectorXd s = bld.prog.h - bld.prog.G * xhat;

    for (int r = 0; r < bld.prog.dims.lp; ++r) REQUIRE(s(r) >= -1e-12);
    int r = bld.prog.dims.lp;
    for (int blk : bld.prog.dims.soc) {
        REQUIRE(s(r) >= s.segment(r + 1, blk - 1).norm() - 1e-12);
        r += blk;
    }
}

TEST_CASE("build rejects slot fractions outside the unit interval") {
    auto ch = toy_channels();
    auto cfg = toy_config();
    auto mc = mrc_coefficients(ch, cfg);
    auto st = single_pair();
    SurrogateState surr;
    surr.phi.assign(5, 1.0);
    CHECK_THROWS_AS(build_socp(st, mc, ch, cfg, 0.0, surr), std::invalid_argument);
    CHECK_THROWS_AS(build_socp(st, mc, ch, cfg, -0.2, surr), std::invalid_argument);
    CHECK_THROWS_AS(build_socp(st, mc, ch, cfg, 1.2, surr), std::invalid_argument);
    CHECK_NOTHROW(build_socp(st, mc, ch, cfg, 1.0, surr));
}

TEST_CASE("zero budgets give a zero objective in one iteration") {
    auto cfg = pair_config(7);
    cfg.p_u_max = -200.0;
    cfg.p_v_max = -200.0;
    cfg.r_th_u = 0.0;
    cfg.r_th_v = 0.0;
    auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
    auto mc = mrc_coefficients(ch, cfg);
    auto st = single_pair();

    auto out = sca_solve(st, mc, ch, cfg, 0.5);
    REQUIRE(out.status == SocpStatus::optimal);
    CHECK(out.objective == 0.0);
    CHECK(out.iterations == 1);
    for (const auto& [key, p] : out.powers.p_ub) CHECK(p == 0.0);

    cfg.r_th_u = 0.5;
    auto bad = sca_solve(st, mc, ch, cfg, 0.5);
    CHECK(bad.status == SocpStatus::infeasible);
}

TEST_CASE("sca converges fast with a nondecreasing objective") {
    for (unsigned long long seed : {3ull, 11ull, 21ull, 33ull, 47ull}) {
        auto cfg = pair_config(seed);
        auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
        auto mc = mrc_coefficients(ch, cfg);
        auto st = single_pair();
        for (double delta : {0.3, 0.6}) {
            auto out = sca_solve(st, mc, ch, cfg, delta);
            if (out.status != SocpStatus::optimal) continue;
            CHECK(out.iterations <= 10);
            REQUIRE_FALSE(out.trace.empty());
            CHECK(out.objective == Catch::Approx(out.trace.back()).margin(1e-12));
            for (size_t j = 1; j < out.trace.size(); ++j)
                REQUIRE(out.trace[j] >= out.trace[j - 1] - 1e-7);
            double lambda_sum = 0;
            for (const auto& [name, val] : out.aux)
                if (name.rfind("Lu:", 0) == 0 || name.rfind("Lv:", 0) == 0) lambda_sum += val;
            CHECK(out.objective == Catch::Approx(lambda_sum).margin(1e-6));
        }
    }
}

TEST_CASE("converged points satisfy the original problem") {
    auto check_outcome = [](const Structure& st, const MrcCoefficients& mc, const ChannelSet& ch,
                            const SystemConfig& cfg, const SocpOutcome& out) {
        auto ord = make_decoding_order(OrderLabel::order3, st);
        auto rep = rates_at_bs(st, out.powers, mc, ch, cfg, ord, RateMode::static_ipi);
        for (auto& [u, v] : st.pairs) {
            CHECK(rep.r_u.at(u) >= cfg.r_th_u - 1e-4);
            CHECK(rep.r_v.at(v) >= cfg.r_th_v - 1e-4);
            CHECK(out.powers.p_u_total(u) <= cfg.p_u_max_w() + 1e-9);
            CHECK(out.powers.p_v(v) <= cfg.p_v_max_w() + 1e-9);
        }
        CHECK(rep.sum_rate >= out.objective - 1e-3);
    };

    int solved = 0;
    for (unsigned long long seed : {3ull, 11ull, 21ull, 33ull, 47ull}) {
        auto cfg = pair_config(seed);
        auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
        auto mc = mrc_coefficients(ch, cfg);
        auto st = single_pair();
        auto out = sca_solve(st, mc, ch, cfg, 0.4);
        if (out.status != SocpStatus::optimal) continue;
        ++solved;
        check_outcome(st, mc, ch, cfg, out);
    }
    REQUIRE(solved >= 3);

    SystemConfig cfg;
    cfg.seed = 404;
    auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
    auto mc = mrc_coefficients(ch, cfg);
    auto st = three_pairs();
    auto out = sca_solve(st, mc, ch, cfg, 0.3);
    REQUIRE(out.status == SocpStatus::optimal);
    check_outcome(st, mc, ch, cfg, out);
}

TEST_CASE("final surrogate multipliers are tight at the solution") {
    auto cfg = pair_config(11);
    auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
    auto mc = mrc_coefficients(ch, cfg);
    auto st = single_pair();
    auto out = sca_solve(st, mc, ch, cfg, 0.5);
    REQUIRE(out.status == SocpStatus::optimal);

    auto products = socp_detail::enumerate_products(st, mc, ch, cfg);
    REQUIRE(products.size() == out.surrogate.phi.size());
    for (size_t i = 0; i < products.size(); ++i) {
        const auto& ps = products[i];
        if (ps.degenerate) continue;
        double x = out.aux.at(ps.x_name);
        double y = out.aux.at(ps.y_name);
        if (2.0 * x * y < 1e-12) continue;
        double bound = agm_upper_bound(x, y, out.surrogate.phi[i]);
        CHECK(bound >= 2.0 * x * y * (1.0 - 1e-12));
        CHECK(bound <= 2.0 * x * y * (1.0 + 1e-4));
    }
}

TEST_CASE("sca objective matches an exhaustive power grid on a single pair") {
    auto cfg = pair_config(11);
    auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
    auto mc = mrc_coefficients(ch, cfg);
    auto st = single_pair();
    const double delta = 0.5;

    auto out = sca_solve(st, mc, ch, cfg, delta);
    REQUIRE(out.status == SocpStatus::optimal);

    // Closed-form rates for one pair: CCU subs decode in index order ahead of
    // the relay stream, the CEU rate is the min of its BS path and the D2D
    // decode limit. 50 points per power axis.
    const double su = mc.self_gain.at(1), nu = mc.noise_gain.at(1);
    const double sv = mc.self_gain.at(2), nv = mc.noise_gain.at(2);
    const double gd = std::norm(ch.cross(1, 2));
    const double pu = cfg.p_u_max_w(), pv = cfg.p_v_max_w();
    const int n = 50;
    double best = -1.0;
    for (int i1 = 0; i1 < n; ++i1) {
        const double p1 = pu * i1 / (n - 1);
        for (int i2 = 0; i2 + i1 < n; ++i2) {
            const double p2 = pu * i2 / (n - 1);
            for (int i3 = 0; i3 + i2 + i1 < n; ++i3) {
                const double pr = pu * i3 / (n - 1);
                const double ru = (1 - delta) * (std::log2(1 + su * p1 / (su * (p2 + pr) + nu)) +
                                                 std::log2(1 + su * p2 / (su * pr + nu)));
                if (ru < cfg.r_th_u) continue;
                const double relay = (1 - delta) * std::log2(1 + su * pr / nu);
                for (int i4 = 0; i4 < n; ++i4) {
                    const double q = pv * i4 / (n - 1);
                    const double rv =
                        std::min(delta * std::log2(1 + sv * q / nv) + relay,
                                 delta * std::log2(1 + gd * q / cfg.sigma2));
                    if (rv < cfg.r_th_v) continue;
                    best = std::max(best, ru + rv);
                }
            }
        }
    }
    REQUIRE(best > 0.0);
    CHECK(out.objective >= 0.98 * best);
    CHECK(out.objective <= 1.02 * best);
}

TEST_CASE("delta search on a singleton grid is one sca solve") {
    auto cfg = pair_config(5);
    cfg.delta_grid = {0.5};
    auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
    auto mc = mrc_coefficients(ch, cfg);
    auto st = single_pair();
    auto [d, out] = delta_search(st, mc, ch, cfg);
    auto direct = sca_solve(st, mc, ch, cfg, 0.5);
    CHECK(d == 0.5);
    CHECK(out.status == direct.status);
    CHECK(out.objective == direct.objective);
}

TEST_CASE("a full-length direct phase cannot serve the ccu threshold") {
    auto cfg = pair_config(5);
    cfg.delta_grid = {1.0};
    REQUIRE(cfg.r_th_u > 0);
    auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
    auto mc = mrc_coefficients(ch, cfg);
    auto st = single_pair();
    auto [d, out] = delta_search(st, mc, ch, cfg);
    CHECK(out.status == SocpStatus::infeasible);
}

TEST_CASE("delta search equals an independent per-point rerun") {
    auto cfg = pair_config(23);
    auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
    auto mc = mrc_coefficients(ch, cfg);
    auto st = single_pair();

    auto [d, out] = delta_search(st, mc, ch, cfg);
    REQUIRE(out.status == SocpStatus::optimal);

    double best_d = -1.0, best_obj = -std::numeric_limits<double>::infinity();
    for (double g : cfg.delta_grid) {
        auto o = sca_solve(st, mc, ch, cfg, g);
        if (o.status != SocpStatus::optimal) continue;
        if (o.objective > best_obj) { // ties keep the earlier, smaller delta
            best_obj = o.objective;
            best_d = g;
        }
    }
    CHECK(d == best_d);
    CHECK(out.objective == best_obj);
}

TEST_CASE("an unreachable threshold reports instance infeasibility") {
    auto cfg = pair_config(5);
    cfg.r_th_u = 50.0;
    auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
    auto mc = mrc_coefficients(ch, cfg);
    auto st = single_pair();
    auto [d, out] = delta_search(st, mc, ch, cfg);
    CHECK(out.status == SocpStatus::infeasible);
    CHECK(out.objective == 0.0);
}
