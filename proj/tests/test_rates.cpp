#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "crsma/rates.hpp"

using namespace crsma;

namespace {

// self_gain = 1 and noise_gain = 1 for every user: all-ones length-4 vectors
// with sigma2 = 4. Cross links are unit scalars.
ChannelSet flat_channels(int K) {
    ChannelSet ch;
    for (int k = 1; k <= K; ++k) {
        ch.h[k] = cvec::Ones(4);
        ch.tau[k] = 1.0;
    }
    for (int a = 1; a <= K; ++a)
        for (int b = a + 1; b <= K; ++b) ch.h_cross[{a, b}] = 1.0;
    return ch;
}

SystemConfig flat_config(int K) {
    SystemConfig cfg;
    cfg.K = K;
    cfg.N = 4;
    cfg.sigma2 = 4.0;
    return cfg;
}

Structure crsma_pair_structure() {
    PairingPolicy pol;
    pol.pairs = {{1, 2}};
    SplitPlan plan;
    plan.subs = {{1, 2}, {2, 1}};
    plan.cooperative = true;
    return make_structure(pol, plan);
}

PowerAllocation unit_powers(const Structure& st, double delta) {
    PowerAllocation pa;
    pa.delta = delta;
    for (const auto& s : st.streams) {
        if (s.kind == StreamKind::ccu_sub) pa.p_ub[{s.tx, s.b}] = 1.0;
        else if (s.kind == StreamKind::ccu_relay) pa.p_relay[s.tx] = 1.0;
        else pa.p_vb[{s.tx, s.b}] = 1.0;
    }
    return pa;
}

PowerAllocation random_powers(const Structure& st, double delta, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.05, 1.0);
    PowerAllocation pa;
    pa.delta = delta;
    for (const auto& s : st.streams) {
        double p = uni(rng);
        if (s.kind == StreamKind::ccu_sub) pa.p_ub[{s.tx, s.b}] = p;
        else if (s.kind == StreamKind::ccu_relay) pa.p_relay[s.tx] = p;
        else pa.p_vb[{s.tx, s.b}] = p;
    }
    return pa;
}

Structure k6_structure(bool cooperative) {
    PairingPolicy pol;
    pol.pairs = {{1, 4}, {2, 5}, {3, 6}};
    SplitPlan plan;
    plan.cooperative = cooperative;
    for (int u : {1, 2, 3}) plan.subs[u] = 2;
    for (int v : {4, 5, 6}) plan.subs[v] = 1;
    return make_structure(pol, plan);
}

} // namespace

TEST_CASE("canonical single-pair stream SINRs are 1/3, 1/2, 1") {
    auto ch = flat_channels(2);
    auto cfg = flat_config(2);
    auto mc = mrc_coefficients(ch, cfg);
    REQUIRE(mc.self_gain.at(1) == Catch::Approx(1.0));
    REQUIRE(mc.noise_gain.at(1) == Catch::Approx(1.0));

    auto st = crsma_pair_structure();
    auto pa = unit_powers(st, 0.5);
    auto ord = make_decoding_order(OrderLabel::order3, st);
    auto sinr = stream_sinrs(st, pa, mc, ord, RateMode::static_ipi);

    auto u_subs = st.find(0, StreamKind::ccu_sub);
    auto relay = st.find(0, StreamKind::ccu_relay);
    CHECK(sinr[u_subs[0]] == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(sinr[u_subs[1]] == Catch::Approx(0.5).epsilon(1e-12));
    CHECK(sinr[relay[0]] == Catch::Approx(1.0).epsilon(1e-12));

    auto rep = rates_at_bs(st, pa, mc, ch, cfg, ord, RateMode::static_ipi);
    // R_u = (1-delta)(log2(1+1/3) + log2(1+1/2)) = 0.5 log2(2)
    CHECK(rep.r_u.at(1) == Catch::Approx(0.5).epsilon(1e-12));
    double r_u1 = 0.5 * std::log2(1.0 + 1.0 / 3.0);
    CHECK(rep.r_u.at(1) - 0.5 * std::log2(1.5) == Catch::Approx(r_u1).epsilon(1e-9));
}

TEST_CASE("delta = 1 kills every CT-phase rate") {
    auto ch = flat_channels(2);
    auto cfg = flat_config(2);
    auto mc = mrc_coefficients(ch, cfg);
    auto st = crsma_pair_structure();
    auto pa = unit_powers(st, 1.0);
    auto ord = make_decoding_order(OrderLabel::order3, st);
    auto rep = rates_at_bs(st, pa, mc, ch, cfg, ord, RateMode::static_ipi);
    CHECK(rep.r_u.at(1) == 0.0);
    // CEU keeps only the DT-phase direct rate; relay contribution is zero.
    CHECK(rep.r_v_tot.at(2) == Catch::Approx(std::log2(2.0)).epsilon(1e-12));
}

TEST_CASE("relay-link rate matches the closed form on a single pair") {
    ChannelSet ch;
    ch.h[1] = cvec::Ones(2);
    ch.h[2] = cvec::Ones(2);
    ch.tau[1] = ch.tau[2] = 1.0;
    ch.h_cross[{1, 2}] = 1.0;
    SystemConfig cfg;
    cfg.K = 2;
    cfg.N = 2;
    cfg.sigma2 = 1.0;
    auto st = crsma_pair_structure();
    auto pa = unit_powers(st, 0.5);
    CHECK(rate_ceu_at_ccu(1, 2, st, pa, ch, cfg.sigma2) == Catch::Approx(0.5).epsilon(1e-12));
    pa.p_vb[{2, 1}] = 0.0;
    CHECK(rate_ceu_at_ccu(1, 2, st, pa, ch, cfg.sigma2) == 0.0);
}

TEST_CASE("relay-link rate on three pairs matches a scalar summation oracle") {
    SystemConfig cfg;
    cfg.K = 6;
    cfg.N = 8;
    cfg.seed = 5150;
    cfg.sigma2 = 1.3;
    auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
    auto st = k6_structure(true);
    std::mt19937_64 rng(7);
    auto pa = random_powers(st, 0.4, rng);

    for (auto& [u, v] : st.pairs) {
        double g = std::norm(ch.cross(u, v));
        double intf = cfg.sigma2;
        for (auto& [u2, v2] : st.pairs)
            if (v2 != v) intf += std::norm(ch.cross(u, v2)) * pa.p_v(v2);
        double want = pa.delta * std::log2(1.0 + g * pa.p_v(v) / intf);
        CHECK(rate_ceu_at_ccu(u, v, st, pa, ch, cfg.sigma2) == Catch::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("decoding order layouts match the published patterns") {
    auto kinds = [](const Structure& st, const DecodingOrder& ord) {
        std::vector<std::pair<char, int>> out; // (kind letter, pair)
        for (int i : ord.sequence) {
            const Stream& s = st.streams[i];
            char c = s.kind == StreamKind::ccu_relay ? 'r'
                     : s.kind == StreamKind::ceu_direct ? 'd'
                     : (s.b == 1 ? '1' : '2');
            out.push_back({c, s.pair});
        }
        return out;
    };
    using V = std::vector<std::pair<char, int>>;

    { // single pair: order-2 and order-3 both give (u1, u2, relay+direct)
        auto st = crsma_pair_structure();
        auto o2 = kinds(st, make_decoding_order(OrderLabel::order2, st));
        auto o3 = kinds(st, make_decoding_order(OrderLabel::order3, st));
        V want{{'1', 0}, {'2', 0}, {'r', 0}, {'d', 0}};
        CHECK(o2 == want);
        CHECK(o3 == want);
        auto o1 = kinds(st, make_decoding_order(OrderLabel::order1, st));
        CHECK(o1 == V{{'r', 0}, {'d', 0}, {'1', 0}, {'2', 0}});
    }
    { // three pairs, order-3: u1 x3, u2 x3, groups x3
        auto st = k6_structure(true);
        auto o3 = kinds(st, make_decoding_order(OrderLabel::order3, st));
        V want{{'1', 0}, {'1', 1}, {'1', 2}, {'2', 0}, {'2', 1}, {'2', 2},
               {'r', 0}, {'d', 0}, {'r', 1}, {'d', 1}, {'r', 2}, {'d', 2}};
        CHECK(o3 == want);
    }
    { // two pairs, order-2: pairwise sequential
        PairingPolicy pol;
        pol.pairs = {{1, 3}, {2, 4}};
        SplitPlan plan;
        plan.cooperative = true;
        plan.subs = {{1, 2}, {2, 2}, {3, 1}, {4, 1}};
        auto st = make_structure(pol, plan);
        auto o2 = kinds(st, make_decoding_order(OrderLabel::order2, st));
        V want{{'1', 0}, {'2', 0}, {'r', 0}, {'d', 0},
               {'1', 1}, {'2', 1}, {'r', 1}, {'d', 1}};
        CHECK(o2 == want);
    }
}

TEST_CASE("noma order sorts streams by transmitter self gain") {
    SystemConfig cfg;
    cfg.K = 4;
    cfg.N = 4;
    cfg.seed = 11;
    auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
    auto mc = mrc_coefficients(ch, cfg);
    PairingPolicy pol;
    pol.pairs = {{1, 3}, {2, 4}};
    SplitPlan plan;
    plan.cooperative = false;
    auto st = make_structure(pol, plan);
    auto ord = make_noma_order(st, mc);
    REQUIRE(ord.sequence.size() == st.streams.size());
    for (size_t i = 1; i < ord.sequence.size(); ++i) {
        double a = mc.self_gain.at(st.streams[ord.sequence[i - 1]].tx);
        double b = mc.self_gain.at(st.streams[ord.sequence[i]].tx);
        CHECK(a >= b);
    }
}

TEST_CASE("sic-global equals a sequential interference-ledger simulation") {
    SystemConfig cfg;
    cfg.K = 6;
    cfg.N = 8;
    cfg.sigma2 = 0.9;
    for (int s = 0; s < 25; ++s) {
        cfg.seed = 7000 + s;
        auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
        auto mc = mrc_coefficients(ch, cfg);
        for (bool coop : {true, false}) {
            auto st = k6_structure(coop);
            std::mt19937_64 rng(100 + s);
            auto pa = random_powers(st, 0.35, rng);
            auto ord = make_decoding_order(OrderLabel::order1, st);
            auto got = stream_sinrs(st, pa, mc, ord, RateMode::sic_global);

            // Ledger oracle: walk the order, track which same-phase streams are
            // still undecoded; cooperative DT streams stay static.
            auto phase = [&](const Stream& x) {
                if (!coop) return 0;
                return x.kind == StreamKind::ceu_direct ? 0 : 1;
            };
            std::set<int> decoded;
            for (int idx : ord.sequence) {
                const Stream& s0 = st.streams[idx];
                double intf = mc.noise_gain.at(s0.tx);
                for (int j = 0; j < (int)st.streams.size(); ++j) {
                    if (j == idx) continue;
                    const Stream& o = st.streams[j];
                    if (phase(o) != phase(s0)) continue;
                    bool counts;
                    if (coop && s0.kind == StreamKind::ceu_direct) {
                        // DT phase: other CEUs stay whatever was decoded.
                        counts = (o.tx != s0.tx) || !decoded.count(j);
                    } else {
                        counts = !decoded.count(j);
                    }
                    if (counts) intf += mc.cross(s0.tx, o.tx) * pa.power_of(o);
                }
                double want = mc.self_gain.at(s0.tx) * pa.power_of(s0) / intf;
                CHECK(got[idx] == Catch::Approx(want).epsilon(1e-12));
                decoded.insert(idx);
            }
        }
    }
}

TEST_CASE("a stream's rate rises in its own power") {
    SystemConfig cfg;
    cfg.K = 6;
    cfg.N = 8;
    cfg.seed = 654;
    auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
    auto mc = mrc_coefficients(ch, cfg);
    auto st = k6_structure(true);
    std::mt19937_64 rng(3);
    auto pa = random_powers(st, 0.5, rng);
    auto ord = make_decoding_order(OrderLabel::order2, st);
    for (auto mode : {RateMode::static_ipi, RateMode::sic_global}) {
        auto base = stream_sinrs(st, pa, mc, ord, mode);
        for (int i = 0; i < (int)st.streams.size(); ++i) {
            PowerAllocation bumped = pa;
            const Stream& s = st.streams[i];
            if (s.kind == StreamKind::ccu_sub) bumped.p_ub[{s.tx, s.b}] += 0.1;
            else if (s.kind == StreamKind::ccu_relay) bumped.p_relay[s.tx] += 0.1;
            else bumped.p_vb[{s.tx, s.b}] += 0.1;
            auto after = stream_sinrs(st, bumped, mc, ord, mode);
            CHECK(after[i] > base[i]);
        }
    }
}

TEST_CASE("moving a stream later in a sic-global order never lowers its rate") {
    SystemConfig cfg;
    cfg.K = 6;
    cfg.N = 8;
    for (int s = 0; s < 10; ++s) {
        cfg.seed = 8800 + s;
        auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
        auto mc = mrc_coefficients(ch, cfg);
        auto st = k6_structure(true);
        std::mt19937_64 rng(200 + s);
        auto pa = random_powers(st, 0.5, rng);
        auto ord = make_decoding_order(OrderLabel::order3, st);
        auto base = stream_sinrs(st, pa, mc, ord, RateMode::sic_global);
        for (size_t k = 0; k + 1 < ord.sequence.size(); ++k) {
            DecodingOrder swapped = ord;
            swapped.label = OrderLabel::custom;
            std::swap(swapped.sequence[k], swapped.sequence[k + 1]);
            int moved_later = ord.sequence[k];
            auto after = stream_sinrs(st, pa, mc, swapped, RateMode::sic_global);
            CHECK(after[moved_later] >= base[moved_later] - 1e-15);
        }
    }
}

TEST_CASE("report respects the min composition and zero powers") {
    SystemConfig cfg;
    cfg.K = 6;
    cfg.N = 8;
    cfg.seed = 17;
    auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
    auto mc = mrc_coefficients(ch, cfg);
    auto st = k6_structure(true);
    std::mt19937_64 rng(9);
    auto pa = random_powers(st, 0.6, rng);
    auto ord = make_decoding_order(OrderLabel::order3, st);
    auto rep = rates_at_bs(st, pa, mc, ch, cfg, ord, RateMode::static_ipi);
    for (auto& [u, v] : st.pairs) {
        CHECK(rep.r_v.at(v) ==
              Catch::Approx(std::min(rep.r_v_tot.at(v), rep.r_v_relay_limit.at(v))));
        CHECK(rep.r_u.at(u) >= 0.0);
        CHECK(rep.r_v.at(v) >= 0.0);
    }

    PowerAllocation zero;
    zero.delta = 0.5;
    for (const auto& s : st.streams) {
        if (s.kind == StreamKind::ccu_sub) zero.p_ub[{s.tx, s.b}] = 0.0;
        else if (s.kind == StreamKind::ccu_relay) zero.p_relay[s.tx] = 0.0;
        else zero.p_vb[{s.tx, s.b}] = 0.0;
    }
    auto zrep = rates_at_bs(st, zero, mc, ch, cfg, ord, RateMode::static_ipi);
    CHECK(zrep.sum_rate == 0.0);
    CHECK_FALSE(zrep.all_feasible());
}

TEST_CASE("static-ipi and sic-global coincide on a single pair") {
    SystemConfig cfg;
    cfg.K = 2;
    cfg.N = 8;
    for (int s = 0; s < 20; ++s) {
        cfg.seed = 300 + s;
        auto ch = generate_channels(cfg, ChannelMode::exponential_mean);
        auto mc = mrc_coefficients(ch, cfg);
        auto st = crsma_pair_structure();
        std::mt19937_64 rng(s);
        auto pa = random_powers(st, 0.45, rng);
        for (auto label : {OrderLabel::order1, OrderLabel::order2, OrderLabel::order3}) {
            auto ord = make_decoding_order(label, st);
            auto a = rates_at_bs(st, pa, mc, ch, cfg, ord, RateMode::static_ipi);
            auto b = rates_at_bs(st, pa, mc, ch, cfg, ord, RateMode::sic_global);
            CHECK(a.r_u.at(1) == Catch::Approx(b.r_u.at(1)).epsilon(1e-14));
            CHECK(a.r_v.at(2) == Catch::Approx(b.r_v.at(2)).epsilon(1e-14));
        }
    }
}

TEST_CASE("power allocation helpers sum per user") {
    PowerAllocation pa;
    pa.p_ub[{1, 1}] = 0.4;
    pa.p_ub[{1, 2}] = 0.25;
    pa.p_relay[1] = 0.1;
    pa.p_vb[{2, 1}] = 0.05;
    pa.p_vb[{2, 2}] = 0.02;
    CHECK(pa.p_u_total(1) == Catch::Approx(0.75));
    CHECK(pa.p_v(2) == Catch::Approx(0.07));
}
