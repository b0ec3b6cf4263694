#pragma once

#include <optional>
#include <string>
#include <vector>

#include "crsma/pairing.hpp"
#include "crsma/sca.hpp"

namespace crsma {

enum class DeltaPolicy { optimized, fixed_half, not_applicable };

// One splitting scheme: who splits into two sub-messages, whether the CT phase
// exists, and how the slot fraction is chosen.
struct SchemeSpec {
    std::string id;
    int ccu_subs = 2;
    int ceu_subs = 1;
    bool unsplit_last_ceu = false; // the "2K-1" variants keep one CEU whole
    bool cooperative = true;
    DeltaPolicy delta_policy = DeltaPolicy::optimized;
    PairingMethod pairing = PairingMethod::sus_mg;
    OrderLabel default_order = OrderLabel::order3;

    SplitPlan split_plan(const PairingPolicy& pol) const {
        SplitPlan plan;
        plan.cooperative = cooperative;
        for (size_t l = 0; l < pol.pairs.size(); ++l) {
            auto [u, v] = pol.pairs[l];
            plan.subs[u] = ccu_subs;
            plan.subs[v] = (unsplit_last_ceu && l + 1 == pol.pairs.size()) ? 1 : ceu_subs;
        }
        return plan;
    }
};

inline std::vector<std::string> known_schemes() {
    return {"crsma-susmg", "crsma-random", "cnoma-susmg-fixed-delta", "rsma-susmg",
            "noma-susmg",  "scheme-1",     "scheme-2",                "scheme-3",
            "scheme-4",    "scheme-5",     "scheme-6"};
}

inline SchemeSpec scheme_by_id(const std::string& id) {
    SchemeSpec s;
    s.id = id;
    if (id == "crsma-susmg" || id == "scheme-3") {
        // proposed: split CCUs only, cooperative, delta optimized
    } else if (id == "crsma-random") {
        s.pairing = PairingMethod::random;
    } else if (id == "scheme-2") {
        s.ceu_subs = 2;
    } else if (id == "scheme-1") {
        s.ceu_subs = 2;
        s.unsplit_last_ceu = true;
    } else if (id == "scheme-4") {
        s.ccu_subs = 1;
    } else if (id == "cnoma-susmg-fixed-delta") {
        s.ccu_subs = 1;
        s.delta_policy = DeltaPolicy::fixed_half;
    } else if (id == "rsma-susmg" || id == "scheme-5") {
        s.ceu_subs = 2;
        s.cooperative = false;
        s.delta_policy = DeltaPolicy::not_applicable;
    } else if (id == "scheme-6") {
        s.ceu_subs = 2;
        s.unsplit_last_ceu = true;
        s.cooperative = false;
        s.delta_policy = DeltaPolicy::not_applicable;
    } else if (id == "noma-susmg") {
        s.ccu_subs = 1;
        s.cooperative = false;
        s.delta_policy = DeltaPolicy::not_applicable;
        s.default_order = OrderLabel::noma_gain;
    } else {
        throw config_error("unknown scheme id: " + id);
    }
    return s;
}

struct SchemeEvaluation {
    RateReport report; // true rates at the optimized powers
    SocpOutcome outcome;
    PairingPolicy pairing;
    Structure structure;
    double delta = 1.0;
};

inline PairingPolicy pair_users(const SchemeSpec& spec, const ChannelSet& ch,
                                const SystemConfig& cfg) {
    if (spec.pairing == PairingMethod::random) {
        std::mt19937_64 rng(derive_seed(cfg.seed, 0x9a17));
        return random_pairing(ch, cfg, rng);
    }
    auto [ccus, ceus] = sus_select(ch, cfg);
    return matching_game(build_preferences(ch, ccus, ceus));
}

inline SchemeEvaluation evaluate_scheme(const SchemeSpec& spec, const ChannelSet& ch,
                                        const SystemConfig& cfg,
                                        std::optional<OrderLabel> order = std::nullopt,
                                        RateMode mode = RateMode::static_ipi) {
    SchemeEvaluation ev;
    ev.pairing = pair_users(spec, ch, cfg);
    ev.structure = make_structure(ev.pairing, spec.split_plan(ev.pairing));
    const MrcCoefficients mc = mrc_coefficients(ch, cfg);

    switch (spec.delta_policy) {
        case DeltaPolicy::optimized: {
            auto [d, o] = delta_search(ev.structure, mc, ch, cfg);
            ev.delta = d;
            ev.outcome = std::move(o);
            break;
        }
        case DeltaPolicy::fixed_half:
            ev.delta = 0.5;
            ev.outcome = sca_solve(ev.structure, mc, ch, cfg, 0.5);
            break;
        case DeltaPolicy::not_applicable:
            ev.delta = 1.0;
            ev.outcome = sca_solve(ev.structure, mc, ch, cfg, 1.0);
            break;
    }

    if (ev.outcome.status == SocpStatus::optimal) {
        OrderLabel label = order.value_or(spec.default_order);
        DecodingOrder ord = label == OrderLabel::noma_gain
                                ? make_noma_order(ev.structure, mc)
                                : make_decoding_order(label, ev.structure);
        ev.report = rates_at_bs(ev.structure, ev.outcome.powers, mc, ch, cfg, ord, mode);
    } else {
        for (auto& [u, v] : ev.structure.pairs) {
            ev.report.r_u[u] = 0;
            ev.report.r_v[v] = 0;
            ev.report.feasible[u] = false;
            ev.report.feasible[v] = false;
        }
        ev.report.sum_rate = 0;
    }
    return ev;
}

} // namespace crsma
