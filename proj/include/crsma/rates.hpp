#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "crsma/pairing.hpp"

namespace crsma {

enum class StreamKind { ccu_sub, ccu_relay, ceu_direct };

// One BS-decoded stream. CCU streams (subs + relay) occupy the CT phase, CEU
// direct streams the DT phase; non-cooperative plans place everything in a
// single full-frame phase. Streams interfere only within their phase.
struct Stream {
    StreamKind kind;
    int tx = 0;   // transmitting user
    int b = 1;    // sub-message index (1-based), 1 for relay
    int pair = 0; // pair index, 0-based
};

// Which users split into how many sub-messages, and whether CCUs relay.
struct SplitPlan {
    std::map<int, int> subs; // user id -> 1 or 2
    bool cooperative = true;

    int subs_of(int id) const {
        auto it = subs.find(id);
        return it == subs.end() ? 1 : it->second;
    }
};

struct Structure {
    std::vector<Stream> streams;
    std::vector<std::pair<int, int>> pairs; // (ccu, ceu), index = Stream::pair
    bool cooperative = true;

    std::vector<int> find(int pair, StreamKind kind) const {
        std::vector<int> out;
        for (int i = 0; i < (int)streams.size(); ++i)
            if (streams[i].pair == pair && streams[i].kind == kind) out.push_back(i);
        return out;
    }
};

inline Structure make_structure(const PairingPolicy& pol, const SplitPlan& plan) {
    Structure st;
    st.pairs = pol.pairs;
    st.cooperative = plan.cooperative;
    for (int l = 0; l < (int)pol.pairs.size(); ++l) {
        auto [u, v] = pol.pairs[l];
        for (int b = 1; b <= plan.subs_of(u); ++b)
            st.streams.push_back({StreamKind::ccu_sub, u, b, l});
        if (plan.cooperative) st.streams.push_back({StreamKind::ccu_relay, u, 1, l});
        for (int b = 1; b <= plan.subs_of(v); ++b)
            st.streams.push_back({StreamKind::ceu_direct, v, b, l});
    }
    return st;
}

enum class OrderLabel { order1, order2, order3, noma_gain, custom };

inline const char* to_string(OrderLabel l) {
    switch (l) {
        case OrderLabel::order1: return "order-1";
        case OrderLabel::order2: return "order-2";
        case OrderLabel::order3: return "order-3";
        case OrderLabel::noma_gain: return "noma-gain";
        default: return "custom";
    }
}

struct DecodingOrder {
    std::vector<int> sequence; // indices into Structure::streams
    OrderLabel label = OrderLabel::custom;
};

// order-1: relay/direct groups pair by pair, then all first sub-messages, then
// all second ones. order-2: pairwise sequential (subs then relay/direct).
// order-3: first sub-messages across pairs, second ones, then relay/direct
// groups. For plans without relays the direct streams stand in for the group.
inline DecodingOrder make_decoding_order(OrderLabel label, const Structure& st) {
    DecodingOrder ord;
    ord.label = label;
    const int L = (int)st.pairs.size();
    auto push = [&](std::vector<int> ids) {
        for (int i : ids) ord.sequence.push_back(i);
    };
    auto sub_b = [&](int pair, int b) {
        std::vector<int> out;
        for (int i : st.find(pair, StreamKind::ccu_sub))
            if (st.streams[i].b == b) out.push_back(i);
        return out;
    };
    auto group = [&](int pair) { // relay + direct, decoded together
        std::vector<int> out = st.find(pair, StreamKind::ccu_relay);
        for (int i : st.find(pair, StreamKind::ceu_direct)) out.push_back(i);
        return out;
    };
    switch (label) {
        case OrderLabel::order1:
            for (int l = 0; l < L; ++l) push(group(l));
            for (int l = 0; l < L; ++l) push(sub_b(l, 1));
            for (int l = 0; l < L; ++l) push(sub_b(l, 2));
            break;
        case OrderLabel::order2:
            for (int l = 0; l < L; ++l) {
                push(sub_b(l, 1));
                push(sub_b(l, 2));
                push(group(l));
            }
            break;
        case OrderLabel::order3:
            for (int l = 0; l < L; ++l) push(sub_b(l, 1));
            for (int l = 0; l < L; ++l) push(sub_b(l, 2));
            for (int l = 0; l < L; ++l) push(group(l));
            break;
        case OrderLabel::noma_gain:
        case OrderLabel::custom:
            break;
    }
    return ord;
}

// Uplink NOMA convention: streams sorted by descending transmitter BS gain.
inline DecodingOrder make_noma_order(const Structure& st, const MrcCoefficients& mc) {
    DecodingOrder ord;
    ord.label = OrderLabel::noma_gain;
    for (int i = 0; i < (int)st.streams.size(); ++i) ord.sequence.push_back(i);
    std::stable_sort(ord.sequence.begin(), ord.sequence.end(), [&](int a, int b) {
        double ga = mc.self_gain.at(st.streams[a].tx);
        double gb = mc.self_gain.at(st.streams[b].tx);
        if (ga != gb) return ga > gb;
        return a < b;
    });
    return ord;
}

struct PowerAllocation {
    std::map<std::pair<int, int>, double> p_ub; // (ccu, b) -> W
    std::map<int, double> p_relay;              // ccu -> W
    std::map<std::pair<int, int>, double> p_vb; // (ceu, b) -> W
    double delta = 0.5;

    double p_v(int v) const {
        double s = 0;
        for (const auto& [key, p] : p_vb)
            if (key.first == v) s += p;
        return s;
    }
    double p_u_total(int u) const {
        double s = 0;
        for (const auto& [key, p] : p_ub)
            if (key.first == u) s += p;
        auto it = p_relay.find(u);
        return s + (it == p_relay.end() ? 0.0 : it->second);
    }
    double power_of(const Stream& s) const {
        switch (s.kind) {
            case StreamKind::ccu_sub: return p_ub.at({s.tx, s.b});
            case StreamKind::ccu_relay: return p_relay.at(s.tx);
            default: return p_vb.at({s.tx, s.b});
        }
    }
};

struct RateReport {
    std::map<int, double> r_u;             // per-CCU own rate
    std::map<int, double> r_v_tot;         // BS-path CEU rate
    std::map<int, double> r_v_relay_limit; // CEU->CCU decode limit
    std::map<int, double> r_v;             // min of the two
    std::map<int, bool> feasible;          // QoS flag per user
    double sum_rate = 0;

    bool all_feasible() const {
        for (const auto& [k, f] : feasible)
            if (!f) return false;
        return true;
    }
};

enum class RateMode { static_ipi, sic_global };

inline const char* to_string(RateMode m) {
    return m == RateMode::static_ipi ? "static-ipi" : "sic-global";
}

namespace detail {

inline double log2p1(double sinr) { return std::log2(1.0 + sinr); }

// DT-phase rate of CEU sub-message b decoded at the paired CCU (per-pair D2D
// link). Interference: the CEU's own later sub-messages plus every other CEU's
// full DT power, never SIC-staged.
inline double d2d_sinr(int u, int v, int b, const PowerAllocation& pa, const ChannelSet& ch,
                       double sigma2) {
    double g = std::norm(ch.cross(u, v));
    double intf = sigma2;
    for (const auto& [key, p] : pa.p_vb) {
        if (key.first == v) {
            if (key.second > b) intf += g * p;
        } else {
            intf += std::norm(ch.cross(u, key.first)) * p;
        }
    }
    return g * pa.p_vb.at({v, b}) / intf;
}

} // namespace detail

// Relay decode limit: what the paired CCU can decode from its CEU during the
// DT phase, summed over the CEU's sub-messages.
inline double rate_ceu_at_ccu(int u, int v, const Structure& st, const PowerAllocation& pa,
                              const ChannelSet& ch, double sigma2) {
    double r = 0;
    for (const auto& [key, p] : pa.p_vb)
        if (key.first == v) r += detail::log2p1(detail::d2d_sinr(u, v, key.second, pa, ch, sigma2));
    return (st.cooperative ? pa.delta : 1.0) * r;
}

// Per-stream SINRs at the BS under a decoding order.
//
// static-ipi: cross-pair interference always counts every other pair's full
// phase power (the closed-form rate expressions); within a pair only streams
// decoded later interfere. sic-global: any already-decoded stream of the same
// phase is removed, regardless of pair. Cooperative DT streams are static in
// both modes (no staged SIC inside the DT phase).
inline std::map<int, double> stream_sinrs(const Structure& st, const PowerAllocation& pa,
                                          const MrcCoefficients& mc, const DecodingOrder& ord,
                                          RateMode mode) {
    const int n = (int)st.streams.size();
    auto phase_of = [&](const Stream& s) {
        if (!st.cooperative) return 0;
        return s.kind == StreamKind::ceu_direct ? 0 : 1;
    };
    std::map<int, int> pos;
    for (int i = 0; i < n; ++i) pos[ord.sequence[i]] = i;

    std::map<int, double> sinr;
    for (int i = 0; i < n; ++i) {
        const Stream& s = st.streams[i];
        const bool dt_static = st.cooperative && s.kind == StreamKind::ceu_direct;
        double intf = mc.noise_gain.at(s.tx);
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const Stream& o = st.streams[j];
            if (phase_of(o) != phase_of(s)) continue;
            bool counted;
            if (dt_static || (st.cooperative && o.kind == StreamKind::ceu_direct)) {
                // DT phase: other CEUs always interfere; own later subs interfere.
                counted = (o.tx != s.tx) || pos[j] > pos[i];
            } else if (mode == RateMode::static_ipi) {
                counted = (o.pair != s.pair) || pos[j] > pos[i];
            } else {
                counted = pos[j] > pos[i];
            }
            if (counted) intf += mc.cross(s.tx, o.tx) * pa.power_of(o);
        }
        sinr[i] = mc.self_gain.at(s.tx) * pa.power_of(s) / intf;
    }
    return sinr;
}

inline RateReport rates_at_bs(const Structure& st, const PowerAllocation& pa,
                              const MrcCoefficients& mc, const ChannelSet& ch,
                              const SystemConfig& cfg, const DecodingOrder& ord,
                              RateMode mode) {
    RateReport rep;
    auto sinr = stream_sinrs(st, pa, mc, ord, mode);
    const double w_dt = st.cooperative ? pa.delta : 1.0;
    const double w_ct = st.cooperative ? 1.0 - pa.delta : 1.0;

    for (int l = 0; l < (int)st.pairs.size(); ++l) {
        auto [u, v] = st.pairs[l];
        double ru = 0;
        for (int i : st.find(l, StreamKind::ccu_sub)) ru += w_ct * detail::log2p1(sinr[i]);
        rep.r_u[u] = ru;

        double rv1 = 0;
        for (int i : st.find(l, StreamKind::ceu_direct)) rv1 += w_dt * detail::log2p1(sinr[i]);
        double rv2 = 0;
        for (int i : st.find(l, StreamKind::ccu_relay)) rv2 += w_ct * detail::log2p1(sinr[i]);
        rep.r_v_tot[v] = rv1 + rv2;

        if (st.cooperative) {
            rep.r_v_relay_limit[v] = rate_ceu_at_ccu(u, v, st, pa, ch, cfg.sigma2);
            rep.r_v[v] = std::min(rep.r_v_tot[v], rep.r_v_relay_limit[v]);
        } else {
            rep.r_v[v] = rep.r_v_tot[v];
        }
        rep.feasible[u] = rep.r_u[u] >= cfg.r_th_u - 1e-9;
        rep.feasible[v] = rep.r_v[v] >= cfg.r_th_v - 1e-9;
        rep.sum_rate += rep.r_u[u] + rep.r_v[v];
    }
    return rep;
}

} // namespace crsma
