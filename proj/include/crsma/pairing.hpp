#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "crsma/channel.hpp"

namespace crsma {

enum class PairingMethod { sus_mg, random };

struct PairingPolicy {
    std::vector<std::pair<int, int>> pairs; // (ccu, ceu)
    PairingMethod method = PairingMethod::sus_mg;

    int ccu_of(int ceu) const {
        for (auto& [u, v] : pairs)
            if (v == ceu) return u;
        return -1;
    }
    int ceu_of(int ccu) const {
        for (auto& [u, v] : pairs)
            if (u == ccu) return v;
        return -1;
    }
};

struct PreferenceProfile {
    std::map<int, std::vector<int>> lists;           // ceu -> ccus, best first
    std::map<std::pair<int, int>, double> utility;   // (ccu, ceu) -> |h_{v,u}|
};

// Greedy semi-orthogonal selection: each round picks the largest residual after
// Gram-Schmidt against the already chosen directions, then drops pool members
// whose projection ratio on the latest direction is >= theta. If the pool dries
// up early, the remaining CCU slots go to the largest raw norms left over.
inline std::pair<std::vector<int>, std::vector<int>> sus_select(const ChannelSet& ch,
                                                                const SystemConfig& cfg,
                                                                int* fallback_filled = nullptr) {
    const int want = cfg.K / 2;
    std::vector<int> pool;
    for (const auto& [k, hk] : ch.h) pool.push_back(k);
    std::sort(pool.begin(), pool.end());

    std::vector<int> ccus;
    std::vector<cvec> basis; // residual directions g_j of selected users
    while ((int)ccus.size() < want && !pool.empty()) {
        int best = -1;
        double best_norm = -1.0;
        cvec best_g;
        for (int u : pool) {
            cvec g = ch.h.at(u);
            for (const cvec& gj : basis) g -= (gj.dot(g) / gj.squaredNorm()) * gj;
            double nrm = g.norm();
            if (nrm > best_norm + 1e-15) {
                best_norm = nrm;
                best = u;
                best_g = g;
            }
        }
        if (best < 0 || best_norm <= 1e-300) break; // nothing usable left
        ccus.push_back(best);
        basis.push_back(best_g);
        std::vector<int> next_pool;
        for (int u : pool) {
            if (u == best) continue;
            double ratio = std::abs(ch.h.at(u).dot(best_g)) /
                           (ch.h.at(u).norm() * best_g.norm());
            if (ratio < cfg.theta) next_pool.push_back(u);
        }
        pool = std::move(next_pool);
    }
    if (fallback_filled) *fallback_filled = want - (int)ccus.size();
    if ((int)ccus.size() < want) {
        std::vector<int> rest;
        for (const auto& [k, hk] : ch.h)
            if (std::find(ccus.begin(), ccus.end(), k) == ccus.end()) rest.push_back(k);
        std::stable_sort(rest.begin(), rest.end(), [&](int a, int b) {
            double na = ch.h.at(a).norm(), nb = ch.h.at(b).norm();
            if (na != nb) return na > nb;
            return a < b;
        });
        for (int u : rest) {
            if ((int)ccus.size() >= want) break;
            ccus.push_back(u);
        }
    }
    std::vector<int> ceus;
    for (const auto& [k, hk] : ch.h)
        if (std::find(ccus.begin(), ccus.end(), k) == ccus.end()) ceus.push_back(k);
    std::sort(ceus.begin(), ceus.end());
    return {ccus, ceus};
}

inline PreferenceProfile build_preferences(const ChannelSet& ch, const std::vector<int>& ccus,
                                           const std::vector<int>& ceus) {
    PreferenceProfile prefs;
    for (int v : ceus) {
        for (int u : ccus) prefs.utility[{u, v}] = std::abs(ch.cross(u, v));
        std::vector<int> list(ccus.begin(), ccus.end());
        std::sort(list.begin(), list.end(), [&](int a, int b) {
            double ua = prefs.utility[{a, v}], ub = prefs.utility[{b, v}];
            if (ua != ub) return ua > ub;
            return a < b;
        });
        prefs.lists[v] = std::move(list);
    }
    return prefs;
}

// Deferred acceptance, CEUs proposing. A CCU holds its best offer so far and
// trades up only for strictly higher utility.
inline PairingPolicy matching_game(const PreferenceProfile& prefs) {
    std::map<int, int> next_proposal; // ceu -> index into its list
    std::map<int, int> held;          // ccu -> ceu
    std::vector<int> free_ceus;
    for (const auto& [v, list] : prefs.lists) {
        free_ceus.push_back(v);
        next_proposal[v] = 0;
    }
    std::sort(free_ceus.begin(), free_ceus.end());

    while (!free_ceus.empty()) {
        int v = free_ceus.front();
        free_ceus.erase(free_ceus.begin());
        const auto& list = prefs.lists.at(v);
        if (next_proposal[v] >= (int)list.size()) continue; // exhausted (never with equal sides)
        int u = list[next_proposal[v]++];
        auto it = held.find(u);
        if (it == held.end()) {
            held[u] = v;
        } else if (prefs.utility.at({u, v}) > prefs.utility.at({u, it->second})) {
            int bumped = it->second;
            it->second = v;
            free_ceus.insert(std::lower_bound(free_ceus.begin(), free_ceus.end(), bumped),
                             bumped);
        } else {
            free_ceus.insert(std::lower_bound(free_ceus.begin(), free_ceus.end(), v), v);
        }
    }

    PairingPolicy pol;
    pol.method = PairingMethod::sus_mg;
    for (const auto& [u, v] : held) pol.pairs.emplace_back(u, v);
    std::sort(pol.pairs.begin(), pol.pairs.end());
    return pol;
}

inline PairingPolicy random_pairing(const ChannelSet& ch, const SystemConfig& cfg,
                                    std::mt19937_64& rng) {
    std::vector<int> ids;
    for (const auto& [k, hk] : ch.h) ids.push_back(k);
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    PairingPolicy pol;
    pol.method = PairingMethod::random;
    const int half = cfg.K / 2;
    for (int i = 0; i < half; ++i) pol.pairs.emplace_back(ids[i], ids[i + half]);
    std::sort(pol.pairs.begin(), pol.pairs.end());
    return pol;
}

// True when some unmatched-in-policy combination (u,v) would be preferred by both
// sides over their assigned partners.
inline bool has_blocking_pair(const PreferenceProfile& prefs, const PairingPolicy& pol) {
    for (const auto& [u, v] : pol.pairs) {
        for (const auto& [u2, v2] : pol.pairs) {
            if (u == u2) continue;
            // would (u, v2) block? v2 prefers u over its partner u2, u prefers v2 over v.
            if (prefs.utility.at({u, v2}) > prefs.utility.at({u2, v2}) &&
                prefs.utility.at({u, v2}) > prefs.utility.at({u, v}))
                return true;
        }
    }
    return false;
}

} // namespace crsma
