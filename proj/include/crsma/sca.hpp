#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "crsma/rates.hpp"
#include "crsma/socp.hpp"

namespace crsma {

// One surrogate multiplier per product constraint x*y <= gain*P, enumerated in
// the deterministic order of enumerate_products.
struct SurrogateState {
    std::vector<double> phi;
    int iteration = 0;
};

enum class SocpStatus { optimal, infeasible, numerical_failure };

inline const char* to_string(SocpStatus s) {
    switch (s) {
        case SocpStatus::optimal: return "optimal";
        case SocpStatus::infeasible: return "infeasible";
        default: return "numerical-failure";
    }
}

struct SocpOutcome {
    SocpStatus status = SocpStatus::numerical_failure;
    double objective = 0; // sum of Lambda at the last optimal solve
    PowerAllocation powers;
    std::map<std::string, double> aux; // named variable values
    SurrogateState surrogate;          // multipliers used by the last solve
    int iterations = 0;                // SCA outer iterations
    std::vector<double> trace;         // objective after each outer iteration
};

inline double agm_upper_bound(double x, double y, double a) {
    if (a <= 0) throw std::invalid_argument("agm_upper_bound: multiplier must be positive");
    return (a * x) * (a * x) + (y / a) * (y / a);
}

namespace socp_detail {

inline std::string pname(int u, int b) { return "p:" + std::to_string(u) + ":" + std::to_string(b); }
inline std::string rname(int u) { return "pr:" + std::to_string(u); }
inline std::string qname(int v, int b) { return "q:" + std::to_string(v) + ":" + std::to_string(b); }

struct LinTerm {
    std::string var;
    double coeff;
};

// One SINR product constraint x*y <= gain * (power var), with its linear
// interference expression defining the lower bound on y.
struct ProductSpec {
    enum class Kind { ccu_sub, relay, direct, d2d } kind;
    int user = 0, b = 1, pair = 0;
    double gain = 0;   // channel gain in front of the power
    double noise = 0;  // constant part of the interference bound
    double xmax = 0;   // budget-derived SINR upper bound
    bool degenerate = false;
    std::string power;         // power variable name
    std::vector<LinTerm> intf; // interference terms (power var, coeff)
    std::string x_name, y_name, t_name;
};

inline std::vector<ProductSpec> enumerate_products(const Structure& st,
                                                   const MrcCoefficients& mc,
                                                   const ChannelSet& ch,
                                                   const SystemConfig& cfg) {
    std::vector<ProductSpec> out;
    const double pu = cfg.p_u_max_w();
    const double pv = cfg.p_v_max_w();
    const int L = (int)st.pairs.size();

    auto ct_powers_of = [&](int l) { // all BS-phase powers of pair l's members
        std::vector<std::string> names;
        auto [u, v] = st.pairs[l];
        for (int i : st.find(l, StreamKind::ccu_sub))
            names.push_back(pname(u, st.streams[i].b));
        for (int i : st.find(l, StreamKind::ccu_relay)) names.push_back(rname(u));
        if (!st.cooperative)
            for (int i : st.find(l, StreamKind::ceu_direct))
                names.push_back(qname(v, st.streams[i].b));
        return names;
    };

    auto cross_pair_intf = [&](int l, int self) {
        std::vector<LinTerm> terms;
        for (int l2 = 0; l2 < L; ++l2) {
            if (l2 == l) continue;
            auto [u2, v2] = st.pairs[l2];
            for (int i : st.find(l2, StreamKind::ccu_sub))
                terms.push_back({pname(u2, st.streams[i].b), mc.cross(self, u2)});
            for (int i : st.find(l2, StreamKind::ccu_relay))
                terms.push_back({rname(u2), mc.cross(self, u2)});
            if (!st.cooperative)
                for (int i : st.find(l2, StreamKind::ceu_direct))
                    terms.push_back({qname(v2, st.streams[i].b), mc.cross(self, v2)});
        }
        return terms;
    };

    for (int l = 0; l < L; ++l) {
        auto [u, v] = st.pairs[l];
        const auto usubs = st.find(l, StreamKind::ccu_sub);
        const auto vsubs = st.find(l, StreamKind::ceu_direct);
        const bool relay = st.cooperative;

        for (int i : usubs) {
            ProductSpec ps;
            ps.kind = ProductSpec::Kind::ccu_sub;
            ps.user = u;
            ps.b = st.streams[i].b;
            ps.pair = l;
            ps.gain = mc.self_gain.at(u);
            ps.noise = mc.noise_gain.at(u);
            ps.power = pname(u, ps.b);
            for (int j : usubs)
                if (st.streams[j].b > ps.b)
                    ps.intf.push_back({pname(u, st.streams[j].b), ps.gain});
            if (relay) ps.intf.push_back({rname(u), ps.gain});
            if (!st.cooperative)
                for (int j : vsubs)
                    ps.intf.push_back({qname(v, st.streams[j].b), mc.cross(u, v)});
            for (auto& t : cross_pair_intf(l, u)) ps.intf.push_back(t);
            ps.xmax = ps.gain * pu / ps.noise;
            ps.x_name = "alpha:" + std::to_string(u) + ":" + std::to_string(ps.b);
            ps.y_name = "gamma:" + std::to_string(u) + ":" + std::to_string(ps.b);
            ps.t_name = "t_a:" + std::to_string(u) + ":" + std::to_string(ps.b);
            out.push_back(std::move(ps));
        }
        if (relay) {
            ProductSpec ps;
            ps.kind = ProductSpec::Kind::relay;
            ps.user = u;
            ps.pair = l;
            ps.gain = mc.self_gain.at(u);
            ps.noise = mc.noise_gain.at(u);
            ps.power = rname(u);
            ps.intf = cross_pair_intf(l, u);
            ps.xmax = ps.gain * pu / ps.noise;
            ps.x_name = "beta_u:" + std::to_string(u);
            ps.y_name = "mu_u:" + std::to_string(u);
            ps.t_name = "t_r:" + std::to_string(u);
            out.push_back(std::move(ps));
        }
        for (int i : vsubs) {
            ProductSpec ps;
            ps.kind = ProductSpec::Kind::direct;
            ps.user = v;
            ps.b = st.streams[i].b;
            ps.pair = l;
            ps.gain = mc.self_gain.at(v);
            ps.noise = mc.noise_gain.at(v);
            ps.power = qname(v, ps.b);
            for (int j : vsubs)
                if (st.streams[j].b > ps.b)
                    ps.intf.push_back({qname(v, st.streams[j].b), ps.gain});
            if (st.cooperative) {
                // DT phase: every other CEU interferes with its full power.
                for (int l2 = 0; l2 < L; ++l2) {
                    if (l2 == l) continue;
                    int v2 = st.pairs[l2].second;
                    for (int j : st.find(l2, StreamKind::ceu_direct))
                        ps.intf.push_back({qname(v2, st.streams[j].b), mc.cross(v, v2)});
                }
            } else {
                for (auto& t : cross_pair_intf(l, v)) ps.intf.push_back(t);
            }
            ps.xmax = ps.gain * pv / ps.noise;
            ps.x_name = "beta_v:" + std::to_string(v) + ":" + std::to_string(ps.b);
            ps.y_name = "mu_v:" + std::to_string(v) + ":" + std::to_string(ps.b);
            ps.t_name = "t_d:" + std::to_string(v) + ":" + std::to_string(ps.b);
            out.push_back(std::move(ps));
        }
        if (st.cooperative) {
            for (int i : vsubs) {
                ProductSpec ps;
                ps.kind = ProductSpec::Kind::d2d;
                ps.user = v;
                ps.b = st.streams[i].b;
                ps.pair = l;
                ps.gain = std::norm(ch.cross(u, v));
                ps.noise = cfg.sigma2;
                ps.power = qname(v, ps.b);
                for (int j : vsubs)
                    if (st.streams[j].b > ps.b)
                        ps.intf.push_back({qname(v, st.streams[j].b), ps.gain});
                for (int l2 = 0; l2 < L; ++l2) {
                    if (l2 == l) continue;
                    int v2 = st.pairs[l2].second;
                    double g2 = std::norm(ch.cross(u, v2));
                    for (int j : st.find(l2, StreamKind::ceu_direct))
                        ps.intf.push_back({qname(v2, st.streams[j].b), g2});
                }
                ps.xmax = ps.gain * pv / ps.noise;
                ps.x_name = "omega:" + std::to_string(v) + ":" + std::to_string(ps.b);
                ps.y_name = "eta:" + std::to_string(v) + ":" + std::to_string(ps.b);
                ps.t_name = "t_w:" + std::to_string(v) + ":" + std::to_string(ps.b);
                out.push_back(std::move(ps));
            }
        }
    }
    for (auto& ps : out) ps.degenerate = !(ps.xmax > 1e-12);
    return out;
}

constexpr int kPwlSegments = 64;

// Chord envelope of log2(1+x) on [0, xmax]: breakpoints geometric in 1+x so the
// function value is sampled uniformly. Chords of a concave function sit below
// it, so "t <= every chord" keeps t a valid lower bound; the x <= xmax cap is
// required because past the last breakpoint the chords cross above the curve.
struct PwlEnvelope {
    std::vector<double> slope, intercept;
    double xmax = 0;
};

inline PwlEnvelope make_envelope(double xmax) {
    PwlEnvelope env;
    env.xmax = xmax;
    double x_prev = 0, f_prev = 0;
    for (int i = 1; i <= kPwlSegments; ++i) {
        double x = std::pow(1.0 + xmax, double(i) / kPwlSegments) - 1.0;
        double f = std::log2(1.0 + x);
        double m = (f - f_prev) / (x - x_prev);
        env.slope.push_back(m);
        env.intercept.push_back(f_prev - m * x_prev);
        x_prev = x;
        f_prev = f;
    }
    return env;
}

} // namespace socp_detail

struct SocpBuild {
    ConeProgram prog;
    std::map<std::string, int> index;
    std::vector<socp_detail::ProductSpec> products;
    std::vector<std::pair<std::string, int>> lambdas; // (var name, user id)
    int margin_col = -1;
};

// Assemble the convex per-delta subproblem: maximize sum of per-user rate
// lower bounds Lambda subject to QoS, power budgets, interference bookkeeping
// (y >= I + noise), AGM-relaxed SINR products, and chord envelopes for the log
// terms. With phase1=true the QoS rows gain a common margin variable and the
// objective switches to maximizing that margin.
inline SocpBuild build_socp(const Structure& st, const MrcCoefficients& mc, const ChannelSet& ch,
                            const SystemConfig& cfg, double delta, const SurrogateState& surr,
                            bool phase1 = false) {
    using namespace socp_detail;
    if (st.cooperative && !(delta > 0 && delta < 1) && delta != 1.0)
        throw std::invalid_argument("build_socp: delta outside (0,1]");

    SocpBuild bld;
    bld.products = enumerate_products(st, mc, ch, cfg);

    std::vector<std::string> names;
    auto var = [&](const std::string& name) {
        auto it = bld.index.find(name);
        if (it != bld.index.end()) return it->second;
        int col = (int)names.size();
        names.push_back(name);
        bld.index.emplace(name, col);
        return col;
    };

    struct LinRow {
        std::vector<std::pair<int, double>> terms;
        double rhs;
    };
    std::vector<LinRow> lp;
    std::vector<std::vector<LinRow>> socs;
    auto le = [&](std::vector<std::pair<int, double>> terms, double rhs) {
        lp.push_back({std::move(terms), rhs});
    };

    const double w_dt = st.cooperative ? delta : 1.0;
    const double w_ct = st.cooperative ? 1.0 - delta : 1.0;

    // Variables first so the census is stable: Lambdas, powers, then per-product aux.
    for (auto& [u, v] : st.pairs) {
        bld.lambdas.push_back({"Lu:" + std::to_string(u), u});
        bld.lambdas.push_back({"Lv:" + std::to_string(v), v});
        var("Lu:" + std::to_string(u));
        var("Lv:" + std::to_string(v));
    }
    for (const auto& s : st.streams) {
        if (s.kind == StreamKind::ccu_sub) var(pname(s.tx, s.b));
        else if (s.kind == StreamKind::ccu_relay) var(rname(s.tx));
        else var(qname(s.tx, s.b));
    }
    for (auto& ps : bld.products) {
        var(ps.x_name);
        var(ps.y_name);
        var(ps.t_name);
    }
    if (phase1) bld.margin_col = var("margin");

    // Power nonnegativity and budgets.
    for (int l = 0; l < (int)st.pairs.size(); ++l) {
        auto [u, v] = st.pairs[l];
        std::vector<std::pair<int, double>> bu;
        for (int i : st.find(l, StreamKind::ccu_sub)) {
            int c = var(pname(u, st.streams[i].b));
            le({{c, -1.0}}, 0.0);
            bu.push_back({c, 1.0});
        }
        for (int i : st.find(l, StreamKind::ccu_relay)) {
            int c = var(rname(u));
            le({{c, -1.0}}, 0.0);
            bu.push_back({c, 1.0});
        }
        le(std::move(bu), cfg.p_u_max_w());
        std::vector<std::pair<int, double>> bv;
        for (int i : st.find(l, StreamKind::ceu_direct)) {
            int c = var(qname(v, st.streams[i].b));
            le({{c, -1.0}}, 0.0);
            bv.push_back({c, 1.0});
        }
        le(std::move(bv), cfg.p_v_max_w());
    }

    // Per-product rows: y lower bound, chord envelope for t, SOC product bound.
    for (size_t pi = 0; pi < bld.products.size(); ++pi) {
        const auto& ps = bld.products[pi];
        const int x = var(ps.x_name);
        const int y = var(ps.y_name);
        const int t = var(ps.t_name);
        const double phi =
            pi < surr.phi.size() ? surr.phi[pi] : 1.0;

        std::vector<std::pair<int, double>> ydef{{y, -1.0}};
        for (auto& term : ps.intf) ydef.push_back({var(term.var), term.coeff});
        le(std::move(ydef), -ps.noise);

        le({{x, -1.0}}, 0.0);
        le({{t, -1.0}}, 0.0);
        if (ps.degenerate) {
            le({{x, 1.0}}, 0.0);
            le({{t, 1.0}}, 0.0);
            continue;
        }
        le({{x, 1.0}}, ps.xmax);
        auto env = make_envelope(ps.xmax);
        for (size_t i = 0; i < env.slope.size(); ++i)
            le({{t, 1.0}, {x, -env.slope[i]}}, env.intercept[i]);

        // (phi x)^2 + (y/phi)^2 + (g P - 1/2)^2 <= (g P + 1/2)^2  <=>  x y <= g P (AGM)
        const int p = var(ps.power);
        std::vector<LinRow> block(4);
        block[0] = {{{p, -ps.gain}}, 0.5};
        block[1] = {{{x, -phi}}, 0.0};
        block[2] = {{{y, -1.0 / phi}}, 0.0};
        block[3] = {{{p, -ps.gain}}, -0.5};
        socs.push_back(std::move(block));
    }

    // Rate caps and QoS per pair.
    for (int l = 0; l < (int)st.pairs.size(); ++l) {
        auto [u, v] = st.pairs[l];
        const int lu = var("Lu:" + std::to_string(u));
        const int lv = var("Lv:" + std::to_string(v));

        std::vector<std::pair<int, double>> ru{{lu, 1.0}};
        std::vector<std::pair<int, double>> rv_bs{{lv, 1.0}};
        std::vector<std::pair<int, double>> rv_d2d{{lv, 1.0}};
        bool has_d2d = false;
        for (const auto& ps : bld.products) {
            if (ps.pair != l) continue;
            const int t = var(ps.t_name);
            switch (ps.kind) {
                case socp_detail::ProductSpec::Kind::ccu_sub:
                    ru.push_back({t, -w_ct});
                    break;
                case socp_detail::ProductSpec::Kind::relay:
                    rv_bs.push_back({t, -w_ct});
                    break;
                case socp_detail::ProductSpec::Kind::direct:
                    rv_bs.push_back({t, -w_dt});
                    break;
                case socp_detail::ProductSpec::Kind::d2d:
                    rv_d2d.push_back({t, -w_dt});
                    has_d2d = true;
                    break;
            }
        }
        le(std::move(ru), 0.0);
        le(std::move(rv_bs), 0.0);
        if (has_d2d) le(std::move(rv_d2d), 0.0);

        std::vector<std::pair<int, double>> qu{{lu, -1.0}};
        std::vector<std::pair<int, double>> qv{{lv, -1.0}};
        if (phase1) {
            qu.push_back({bld.margin_col, 1.0});
            qv.push_back({bld.margin_col, 1.0});
        }
        le(std::move(qu), -cfg.r_th_u);
        le(std::move(qv), -cfg.r_th_v);
    }

    // Materialize.
    const int n = (int)names.size();
    int m = (int)lp.size();
    ConeDims dims;
    dims.lp = (int)lp.size();
    for (auto& b : socs) {
        dims.soc.push_back((int)b.size());
        m += (int)b.size();
    }
    ConeProgram& prog = bld.prog;
    prog.var_names = names;
    prog.dims = dims;
    prog.G = Eigen::MatrixXd::Zero(m, n);
    prog.h = Eigen::VectorXd::Zero(m);
    prog.c = Eigen::VectorXd::Zero(n);
    int r = 0;
    for (auto& row : lp) {
        for (auto& [col, coef] : row.terms) prog.G(r, col) += coef;
        prog.h(r) = row.rhs;
        ++r;
    }
    for (auto& block : socs)
        for (auto& row : block) {
            for (auto& [col, coef] : row.terms) prog.G(r, col) += coef;
            prog.h(r) = row.rhs;
            ++r;
        }
    if (phase1) {
        prog.c(bld.margin_col) = -1.0;
    } else {
        for (auto& [name, user] : bld.lambdas) prog.c(bld.index.at(name)) = -1.0;
    }
    return bld;
}

namespace socp_detail {

inline PowerAllocation extract_powers(const SocpBuild& bld, const Structure& st,
                                      const Eigen::VectorXd& x, const SystemConfig& cfg,
                                      double delta) {
    PowerAllocation pa;
    pa.delta = st.cooperative ? delta : 1.0;
    auto val = [&](const std::string& name) {
        auto it = bld.index.find(name);
        return it == bld.index.end() ? 0.0 : std::max(0.0, x(it->second));
    };
    for (int l = 0; l < (int)st.pairs.size(); ++l) {
        auto [u, v] = st.pairs[l];
        double usum = 0;
        for (int i : st.find(l, StreamKind::ccu_sub)) {
            int b = st.streams[i].b;
            pa.p_ub[{u, b}] = val(pname(u, b));
            usum += pa.p_ub[{u, b}];
        }
        if (st.cooperative) {
            pa.p_relay[u] = val(rname(u));
            usum += pa.p_relay[u];
        }
        if (usum > cfg.p_u_max_w() && usum > 0) {
            double f = cfg.p_u_max_w() / usum;
            for (auto& [key, p] : pa.p_ub)
                if (key.first == u) p *= f;
            if (st.cooperative) pa.p_relay[u] *= f;
        }
        double vsum = 0;
        for (int i : st.find(l, StreamKind::ceu_direct)) {
            int b = st.streams[i].b;
            pa.p_vb[{v, b}] = val(qname(v, b));
            vsum += pa.p_vb[{v, b}];
        }
        if (vsum > cfg.p_v_max_w() && vsum > 0) {
            double f = cfg.p_v_max_w() / vsum;
            for (auto& [key, p] : pa.p_vb)
                if (key.first == v) p *= f;
        }
    }
    return pa;
}

inline SurrogateState initial_phi(const std::vector<ProductSpec>& products,
                                  const std::map<std::string, double>& p0) {
    SurrogateState s;
    for (const auto& ps : products) {
        if (ps.degenerate) {
            s.phi.push_back(1.0);
            continue;
        }
        double y = ps.noise;
        for (const auto& t : ps.intf) {
            auto it = p0.find(t.var);
            if (it != p0.end()) y += t.coeff * it->second;
        }
        double p = 0;
        if (auto it = p0.find(ps.power); it != p0.end()) p = it->second;
        // phi = sqrt(y/x) with x = gain*p/y, i.e. y / sqrt(gain*p)
        double phi = p > 0 ? y / std::sqrt(ps.gain * p) : 1e6;
        s.phi.push_back(std::clamp(phi, 1e-8, 1e12));
    }
    return s;
}

inline std::map<std::string, double> initial_powers(const Structure& st,
                                                    const SystemConfig& cfg) {
    std::map<std::string, double> p0;
    for (int l = 0; l < (int)st.pairs.size(); ++l) {
        auto [u, v] = st.pairs[l];
        int nu = (int)st.find(l, StreamKind::ccu_sub).size() + (st.cooperative ? 1 : 0);
        for (int i : st.find(l, StreamKind::ccu_sub))
            p0[pname(u, st.streams[i].b)] = 0.25 * cfg.p_u_max_w() / nu;
        if (st.cooperative) p0[rname(u)] = 0.25 * cfg.p_u_max_w() / nu;
        int nv = (int)st.find(l, StreamKind::ceu_direct).size();
        for (int i : st.find(l, StreamKind::ceu_direct))
            p0[qname(v, st.streams[i].b)] = 0.25 * cfg.p_v_max_w() / nv;
    }
    return p0;
}

} // namespace socp_detail

inline SocpOutcome sca_solve(const Structure& st, const MrcCoefficients& mc, const ChannelSet& ch,
                             const SystemConfig& cfg, double delta) {
    using namespace socp_detail;
    constexpr int kMaxIter = 30;
    SocpOutcome out;
    out.powers.delta = st.cooperative ? delta : 1.0;

    // Interference-free full-budget bounds. When even these miss a QoS
    // threshold no allocation can reach it, so skip the solver entirely;
    // this is what kills most of the delta grid for a pairing whose D2D
    // link is too weak, and the short-phase edges of the grid.
    {
        const double w_dt = st.cooperative ? delta : 1.0;
        const double w_ct = st.cooperative ? 1.0 - delta : 1.0;
        for (int l = 0; l < (int)st.pairs.size(); ++l) {
            const auto [u, v] = st.pairs[l];
            const double bu_sub =
                std::log2(1.0 + mc.self_gain.at(u) * cfg.p_u_max_w() / mc.noise_gain.at(u));
            if (w_ct * bu_sub * st.find(l, StreamKind::ccu_sub).size() < cfg.r_th_u - 1e-12) {
                out.status = SocpStatus::infeasible;
                return out;
            }
            const double nv = st.find(l, StreamKind::ceu_direct).size();
            double bv = w_dt * nv *
                        std::log2(1.0 + mc.self_gain.at(v) * cfg.p_v_max_w() / mc.noise_gain.at(v));
            if (st.cooperative) {
                bv += w_ct * bu_sub;
                const double g = std::norm(ch.cross(u, v));
                bv = std::min(bv, delta * nv * std::log2(1.0 + g * cfg.p_v_max_w() / cfg.sigma2));
            }
            if (bv < cfg.r_th_v - 1e-12) {
                out.status = SocpStatus::infeasible;
                return out;
            }
        }
    }

    const auto p0 = initial_powers(st, cfg);
    auto products = enumerate_products(st, mc, ch, cfg);
    const SurrogateState phi0 = initial_phi(products, p0);

    auto alloc_map = [&](const PowerAllocation& pa) {
        std::map<std::string, double> m;
        for (const auto& [key, p] : pa.p_ub) m[pname(key.first, key.second)] = p;
        for (const auto& [u, p] : pa.p_relay) m[rname(u)] = p;
        for (const auto& [key, p] : pa.p_vb) m[qname(key.first, key.second)] = p;
        return m;
    };
    // Anchor the surrogate at a power point: phi = sqrt(gamma/alpha) etc. with
    // the ratio variables evaluated there. Aux values read straight off the
    // solver drift when their constraint is slack (the interior point centers
    // them), so the power point is the reliable place to retighten.
    auto anchor = [&](const PowerAllocation& pa, int iter) {
        SurrogateState s = initial_phi(products, alloc_map(pa));
        s.iteration = iter;
        return s;
    };

    // Everything below scores candidate power points with the surrogate
    // problem's own objective: the envelope rate terms evaluated at the
    // point, capped and QoS-checked exactly as the conic rows are. A point
    // with nonnegative surrogate margin is a feasible point of every future
    // solve anchored at it, which is what makes the objective sequence
    // nondecreasing by construction rather than by solver tolerance.
    std::vector<PwlEnvelope> envs;
    envs.reserve(products.size());
    for (const auto& ps : products)
        envs.push_back(ps.degenerate ? PwlEnvelope{} : make_envelope(ps.xmax));
    auto env_val = [](const PwlEnvelope& env, double x) {
        if (env.slope.empty()) return 0.0;
        x = std::clamp(x, 0.0, env.xmax);
        double t = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < env.slope.size(); ++i)
            t = std::min(t, env.slope[i] * x + env.intercept[i]);
        return std::max(0.0, t);
    };

    const double w_dt = st.cooperative ? delta : 1.0;
    const double w_ct = st.cooperative ? 1.0 - delta : 1.0;
    // Margin slack for accepting candidate points: extracting powers from a
    // solver iterate and re-evaluating shifts the QoS rows by the solver's
    // own feasibility tolerance, so exact-zero gating would reject the
    // solver's best points whenever a threshold is active.
    constexpr double kMarginTol = 1e-6;
    struct SurrEval {
        double sum = 0;
        double margin = 0;
    };
    auto product_point = [&](const ProductSpec& ps, const std::map<std::string, double>& vals)
        -> std::pair<double, double> {
        double den = ps.noise;
        for (const auto& t : ps.intf) {
            auto it = vals.find(t.var);
            if (it != vals.end()) den += t.coeff * it->second;
        }
        double p = 0;
        if (auto it = vals.find(ps.power); it != vals.end()) p = it->second;
        return {ps.degenerate ? 0.0 : ps.gain * p / den, den};
    };
    auto surr_eval = [&](const PowerAllocation& pa) {
        const auto vals = alloc_map(pa);
        SurrEval e;
        e.margin = std::numeric_limits<double>::infinity();
        for (int l = 0; l < (int)st.pairs.size(); ++l) {
            double ru = 0, rv_bs = 0, rv_d2d = 0;
            bool has_d2d = false;
            for (size_t i = 0; i < products.size(); ++i) {
                const auto& ps = products[i];
                if (ps.pair != l) continue;
                const double term = env_val(envs[i], product_point(ps, vals).first);
                switch (ps.kind) {
                    case ProductSpec::Kind::ccu_sub: ru += w_ct * term; break;
                    case ProductSpec::Kind::relay: rv_bs += w_ct * term; break;
                    case ProductSpec::Kind::direct: rv_bs += w_dt * term; break;
                    case ProductSpec::Kind::d2d:
                        rv_d2d += w_dt * term;
                        has_d2d = true;
                        break;
                }
            }
            const double rv = has_d2d ? std::min(rv_bs, rv_d2d) : rv_bs;
            e.sum += ru + rv;
            e.margin = std::min({e.margin, ru - cfg.r_th_u, rv - cfg.r_th_v});
        }
        return e;
    };
    auto anchored_aux = [&](const PowerAllocation& pa) {
        const auto vals = alloc_map(pa);
        std::map<std::string, double> aux = vals;
        std::map<int, double> ru, rv_bs, rv_d2d;
        std::map<int, bool> has_d2d;
        for (size_t i = 0; i < products.size(); ++i) {
            const auto& ps = products[i];
            const auto [x, den] = product_point(ps, vals);
            aux[ps.x_name] = x;
            aux[ps.y_name] = den;
            const double term = env_val(envs[i], x);
            switch (ps.kind) {
                case ProductSpec::Kind::ccu_sub: ru[ps.pair] += w_ct * term; break;
                case ProductSpec::Kind::relay: rv_bs[ps.pair] += w_ct * term; break;
                case ProductSpec::Kind::direct: rv_bs[ps.pair] += w_dt * term; break;
                case ProductSpec::Kind::d2d:
                    rv_d2d[ps.pair] += w_dt * term;
                    has_d2d[ps.pair] = true;
                    break;
            }
        }
        for (int l = 0; l < (int)st.pairs.size(); ++l) {
            const auto [u, v] = st.pairs[l];
            aux["Lu:" + std::to_string(u)] = ru[l];
            aux["Lv:" + std::to_string(v)] =
                has_d2d[l] ? std::min(rv_bs[l], rv_d2d[l]) : rv_bs[l];
        }
        return aux;
    };

    // A stream the optimum abandons decays only geometrically under the AGM
    // update (the retightened cone lower-bounds each power by a quarter of
    // its previous value), so snap near-zero powers straight to zero whenever
    // the surrogate stays feasible and its objective does not drop.
    auto polish = [&](PowerAllocation pa) {
        SurrEval base = surr_eval(pa);
        auto try_zero = [&](double& slot, double budget) {
            if (slot <= 0 || slot > 1e-3 * budget) return;
            const double keep = slot;
            slot = 0;
            SurrEval e = surr_eval(pa);
            if (e.margin < -kMarginTol || e.sum < base.sum - 1e-12)
                slot = keep;
            else
                base = e;
        };
        for (auto& [u, p] : pa.p_relay) try_zero(p, cfg.p_u_max_w());
        for (auto& [key, p] : pa.p_ub) try_zero(p, cfg.p_u_max_w());
        for (auto& [key, p] : pa.p_vb) try_zero(p, cfg.p_v_max_w());
        return pa;
    };

    // Scalar knobs the AGM step moves slowest: a CCU's relay share (the
    // cooperative rate saturates at the D2D cap or the QoS floor), a CCU's
    // total level, and a CEU's total level (the cross-pair interference
    // trade). Line-search each against the surrogate objective.
    auto axis_tune = [&](PowerAllocation pa) {
        double base = surr_eval(pa).sum;
        auto improve = [&](const std::function<void(PowerAllocation&, double)>& apply,
                           double lo, double hi, double cur) {
            double best = cur, best_sum = base;
            for (int probe = 0; probe <= 13; ++probe) {
                double x = lo + (hi - lo) * probe / 13.0;
                apply(pa, x);
                SurrEval e = surr_eval(pa);
                if (e.margin >= -kMarginTol && e.sum > best_sum + 1e-15) {
                    best_sum = e.sum;
                    best = x;
                }
            }
            apply(pa, best);
            base = std::max(base, best_sum);
        };
        for (int round = 0; round < 2; ++round) {
            for (auto& [u, v] : st.pairs) {
                std::map<std::pair<int, int>, double> own;
                double own_sum = 0;
                for (auto& [key, p] : pa.p_ub)
                    if (key.first == u) {
                        own[key] = p;
                        own_sum += p;
                    }
                const bool has_relay = pa.p_relay.count(u) > 0;
                const double relay = has_relay ? pa.p_relay.at(u) : 0.0;
                const double tot = own_sum + relay;
                if (tot > 0 && own_sum > 0) {
                    // total level at fixed internal proportions
                    improve(
                        [&, own, relay, tot](PowerAllocation& a, double x) {
                            const double s = x / tot;
                            for (auto& [key, p] : own) a.p_ub[key] = p * s;
                            if (has_relay) a.p_relay[u] = relay * s;
                        },
                        0.05 * cfg.p_u_max_w(), cfg.p_u_max_w(), tot);
                }
                if (has_relay && own_sum > 0) {
                    const double tot2 = pa.p_u_total(u);
                    std::map<std::pair<int, int>, double> own2;
                    double osum2 = 0;
                    for (auto& [key, p] : pa.p_ub)
                        if (key.first == u) {
                            own2[key] = p;
                            osum2 += p;
                        }
                    if (tot2 > 0 && osum2 > 0) {
                        // relay share of the total
                        improve(
                            [&, own2, osum2, tot2](PowerAllocation& a, double x) {
                                a.p_relay[u] = x * tot2;
                                const double s = (1.0 - x) * tot2 / osum2;
                                for (auto& [key, p] : own2) a.p_ub[key] = p * s;
                            },
                            0.0, 0.9, pa.p_relay.at(u) / tot2);
                    }
                }
                std::map<std::pair<int, int>, double> vsubs;
                double vsum = 0;
                for (auto& [key, p] : pa.p_vb)
                    if (key.first == v) {
                        vsubs[key] = p;
                        vsum += p;
                    }
                if (vsum > 0) {
                    improve(
                        [&, vsubs, vsum](PowerAllocation& a, double x) {
                            const double s = x / vsum;
                            for (auto& [key, p] : vsubs) a.p_vb[key] = p * s;
                        },
                        0.05 * cfg.p_v_max_w(), cfg.p_v_max_w(), vsum);
                }
            }
        }
        return pa;
    };

    auto cap_budgets = [&](PowerAllocation& pa) {
        for (auto& [u, v] : st.pairs) {
            double usum = pa.p_u_total(u);
            if (usum > cfg.p_u_max_w() && usum > 0) {
                double f = cfg.p_u_max_w() / usum;
                for (auto& [key, p] : pa.p_ub)
                    if (key.first == u) p *= f;
                if (auto it = pa.p_relay.find(u); it != pa.p_relay.end()) it->second *= f;
            }
            double vsum = pa.p_v(v);
            if (vsum > cfg.p_v_max_w() && vsum > 0) {
                double f = cfg.p_v_max_w() / vsum;
                for (auto& [key, p] : pa.p_vb)
                    if (key.first == v) p *= f;
            }
        }
    };

    // The AGM cone is a trust region: one resolve moves each power ratio by a
    // bounded factor, so when the optimum needs a large rebalancing the plain
    // iteration inches toward it. Extrapolating the last move in log space
    // (longest feasible step wins) jumps that crawl without giving up
    // monotonicity, since a candidate is accepted only when its true rates
    // are feasible and no worse.
    auto extrapolate = [&](const PowerAllocation& from, const PowerAllocation& to,
                           double kappa) {
        PowerAllocation pa = to;
        auto stretch = [&](double& p, double prv) {
            if (p > 1e-12 && prv > 1e-12) p *= std::pow(p / prv, kappa);
        };
        for (auto& [key, p] : pa.p_ub)
            if (auto it = from.p_ub.find(key); it != from.p_ub.end()) stretch(p, it->second);
        for (auto& [u, p] : pa.p_relay)
            if (auto it = from.p_relay.find(u); it != from.p_relay.end()) stretch(p, it->second);
        for (auto& [key, p] : pa.p_vb)
            if (auto it = from.p_vb.find(key); it != from.p_vb.end()) stretch(p, it->second);
        cap_budgets(pa);
        return pa;
    };

    PowerAllocation pa0;
    pa0.delta = out.powers.delta;
    for (int l = 0; l < (int)st.pairs.size(); ++l) {
        auto [u, v] = st.pairs[l];
        for (int i : st.find(l, StreamKind::ccu_sub))
            pa0.p_ub[{u, st.streams[i].b}] = p0.at(pname(u, st.streams[i].b));
        if (st.cooperative) pa0.p_relay[u] = p0.at(rname(u));
        for (int i : st.find(l, StreamKind::ceu_direct))
            pa0.p_vb[{v, st.streams[i].b}] = p0.at(qname(v, st.streams[i].b));
    }

    // Zero-budget corner: with every product degenerate all rates are pinned
    // to zero and the certificate above has already rejected positive
    // thresholds, so the all-zero point is optimal. The conic program would
    // have no interior here, so do not hand it to the solver.
    if (std::all_of(products.begin(), products.end(),
                    [](const ProductSpec& ps) { return ps.degenerate; })) {
        for (auto& [key, p] : pa0.p_ub) p = 0;
        for (auto& [u, p] : pa0.p_relay) p = 0;
        for (auto& [key, p] : pa0.p_vb) p = 0;
        out.status = SocpStatus::optimal;
        out.objective = 0.0;
        out.aux = anchored_aux(pa0);
        out.surrogate = initial_phi(products, alloc_map(pa0));
        out.powers = std::move(pa0);
        out.iterations = 1;
        out.trace = {0.0};
        return out;
    }

    // Feasibility phase, skipped when the equal-split start already meets the
    // thresholds: maximize the common QoS margin, retightening the surrogate
    // at each solution. The margin is nondecreasing under that update (the
    // previous point stays feasible), so a stalled negative margin means the
    // surrogate family cannot reach the thresholds.
    SurrogateState phi = phi0;
    PowerAllocation pa_anchor = pa0;
    // The envelope model is itself a 1e-3-scale approximation of the true
    // rates, so solving each iterate to 1e-8 buys nothing; stop the interior
    // point earlier and let the margin slack absorb the residual.
    SolverSettings ipm;
    ipm.feastol = 1e-7;
    ipm.abstol = 1e-8;
    ipm.reltol = 5e-8;
    // Acceptance can be loose: iterates only anchor the next linearization,
    // and every candidate point is re-validated against the exact surrogate.
    // The dual residual floors near 1e-6 on some full-frame programs while
    // the primal stays at 1e-10, which is all the anchoring needs.
    ipm.accept_slack = 100.0;

    if (surr_eval(pa0).margin < 0) {
        double margin = -std::numeric_limits<double>::infinity();
        PowerAllocation pa_last;
        bool have_last = false;
        for (int j = 1; j <= kMaxIter; ++j) {
            SocpBuild bld = build_socp(st, mc, ch, cfg, delta, phi, true);
            SolverResult r = solve_cone_program(bld.prog, ipm);
            if (!r.optimal) {
                out.status = SocpStatus::numerical_failure;
                return out;
            }
            double m = r.x(bld.margin_col);
            PowerAllocation pa = extract_powers(bld, st, r.x, cfg, delta);
            double mp = surr_eval(pa).margin;
            if (have_last) {
                for (double kappa : {8.0, 4.0, 2.0, 1.0}) {
                    PowerAllocation cand = extrapolate(pa_last, pa, kappa);
                    double mc2 = surr_eval(cand).margin;
                    if (mc2 >= mp - 1e-12) {
                        pa = std::move(cand);
                        mp = std::max(mp, mc2);
                        break;
                    }
                }
            }
            phi = anchor(pa, j);
            pa_anchor = pa;
            if (std::max(m, mp) >= -1e-9) break;
            if (j == kMaxIter || std::abs(m - margin) < 0.1 * cfg.eps) {
                out.status = SocpStatus::infeasible;
                out.surrogate = phi;
                return out;
            }
            margin = m;
            pa_last = std::move(pa);
            have_last = true;
        }
    }

    const SurrogateState phi_feasible = phi;
    double prev = -std::numeric_limits<double>::infinity();
    bool reset_used = false;
    PowerAllocation pa_prev = pa_anchor, pa_prev2 = pa_anchor;
    for (int j = 1; j <= kMaxIter; ++j) {
        SocpBuild bld = build_socp(st, mc, ch, cfg, delta, phi, false);
        SolverResult r = solve_cone_program(bld.prog, ipm);
        if (!r.optimal) {
            if (!reset_used && j > 1) {
                reset_used = true;
                phi = phi_feasible;
                continue;
            }
            out.status = SocpStatus::numerical_failure;
            out.iterations = j;
            return out;
        }
        PowerAllocation pa = polish(extract_powers(bld, st, r.x, cfg, delta));
        {
            // The optimum usually sits on a QoS floor, so a fixed step ladder
            // keeps overshooting it; bisect the step instead and keep the best
            // candidate that stays feasible. Two rays: the last move, and the
            // move over the last two iterations (smoother when zigzagging).
            double best_sum = surr_eval(pa).sum;
            PowerAllocation best = pa;
            for (const PowerAllocation* from : {&pa_prev, &pa_prev2}) {
                double lo = 0.0, hi = 8.0;
                for (int probe = 0; probe < 6; ++probe) {
                    double kappa = probe == 0 ? hi : 0.5 * (lo + hi);
                    PowerAllocation cand = extrapolate(*from, pa, kappa);
                    SurrEval ec = surr_eval(cand);
                    if (ec.margin >= -kMarginTol && ec.sum >= best_sum - 1e-12) {
                        if (ec.sum > best_sum) {
                            best_sum = ec.sum;
                            best = std::move(cand);
                        }
                        lo = kappa;
                    } else {
                        hi = kappa;
                    }
                }
            }
            pa = polish(axis_tune(polish(std::move(best))));
        }
        // Carry forward the best surrogate-feasible power point, never the
        // raw solver iterate; since the previous point stays a candidate,
        // the reported objective cannot decrease.
        SurrEval e = surr_eval(pa);
        {
            const SurrEval e_inc = surr_eval(pa_prev);
            if (e_inc.margin >= -kMarginTol &&
                (e.margin < -kMarginTol || e.sum < e_inc.sum)) {
                pa = pa_prev;
                e = e_inc;
            }
        }
        out.status = SocpStatus::optimal;
        out.objective = e.sum;
        out.powers = std::move(pa);
        out.aux = anchored_aux(out.powers);
        out.surrogate = anchor(out.powers, j);
        out.iterations = j;
        out.trace.push_back(e.sum);
        if (std::abs(e.sum - prev) < cfg.eps) {
            // the last solve only confirmed the value reached one step earlier
            if (j > 1) out.iterations = j - 1;
            break;
        }
        prev = e.sum;
        pa_prev2 = std::move(pa_prev);
        pa_prev = out.powers;
        phi = anchor(out.powers, j);
    }
    return out;
}

// Exhaustive slot-fraction search: independent SCA run per grid point, best
// objective wins, ties to the smaller delta.
inline std::pair<double, SocpOutcome> delta_search(const Structure& st,
                                                   const MrcCoefficients& mc,
                                                   const ChannelSet& ch,
                                                   const SystemConfig& cfg) {
    double best_delta = cfg.delta_grid.front();
    SocpOutcome best;
    bool any_optimal = false;
    bool any_numfail = false;
    for (double d : cfg.delta_grid) {
        SocpOutcome o = sca_solve(st, mc, ch, cfg, d);
        if (o.status == SocpStatus::numerical_failure) any_numfail = true;
        if (o.status != SocpStatus::optimal) continue;
        if (!any_optimal || o.objective > best.objective) {
            best = std::move(o);
            best_delta = d;
            any_optimal = true;
        }
    }
    if (!any_optimal) {
        best.status = any_numfail ? SocpStatus::numerical_failure : SocpStatus::infeasible;
    }
    return {best_delta, best};
}

} // namespace crsma
