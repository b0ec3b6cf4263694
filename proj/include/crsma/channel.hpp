#pragma once

#include <algorithm>
#include <complex>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "crsma/common.hpp"

namespace crsma {

struct SystemConfig {
    int K = 6;              // user count, even
    int N = 8;              // BS antennas
    double sigma2 = 1.0;    // noise variance, linear W
    double p_u_max = 23.0;  // CCU budget, dBm
    double p_v_max = 20.0;  // CEU budget, dBm
    double r_th_u = 0.5;    // CCU QoS, bps/Hz
    double r_th_v = 0.1;    // CEU QoS, bps/Hz
    double theta = 0.4;     // SUS factor
    std::vector<double> delta_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    double eps = 1e-3;      // SCA stop tolerance
    std::uint64_t seed = 1;
    double lambda_u = 15.0;  // mean CCU-BS gain, dB
    double lambda_v = 7.0;   // mean CEU-BS gain, dB
    double lambda_vu = 12.0; // mean CEU-CCU gain, dB

    double p_u_max_w() const { return dbm_to_watt(p_u_max); }
    double p_v_max_w() const { return dbm_to_watt(p_v_max); }

    void validate() const {
        if (K < 2 || K % 2 != 0) throw config_error("K must be even and >= 2");
        if (N < 1) throw config_error("N must be >= 1");
        if (sigma2 <= 0) throw config_error("sigma2 must be positive");
        if (theta <= 0 || theta >= 1) throw config_error("theta must lie in (0,1)");
        if (eps <= 0) throw config_error("eps must be positive");
        if (delta_grid.empty()) throw config_error("delta_grid must be nonempty");
        for (double d : delta_grid)
            if (d <= 0 || d > 1) throw config_error("delta_grid values must lie in (0,1]");
        if (!std::isfinite(p_u_max) || !std::isfinite(p_v_max))
            throw config_error("power budgets must be finite");
    }
};

enum class ChannelMode { disparity_ladder, exponential_mean };

inline const char* to_string(ChannelMode m) {
    return m == ChannelMode::disparity_ladder ? "disparity-ladder" : "exponential-mean";
}

using cvec = Eigen::VectorXcd;

// One network drop: BS links h_k, CCU-CEU cross links h_{v,u}, path-loss factors tau.
// User ids are 1..K, ordered by descending tau (ladder mode) or descending ||h||.
struct ChannelSet {
    std::map<int, cvec> h;
    std::map<std::pair<int, int>, std::complex<double>> h_cross; // (ccu, ceu) and (ceu, ccu)
    std::map<int, double> tau;

    std::complex<double> cross(int u, int v) const {
        auto it = h_cross.find({u, v});
        if (it == h_cross.end()) it = h_cross.find({v, u});
        return it->second;
    }

    std::string debug_dump() const {
        std::ostringstream os;
        for (const auto& [id, hk] : h) {
            os << id << " tau=" << tau.at(id) << " |h|2=" << hk.squaredNorm() << "\n";
        }
        return os.str();
    }
};

struct MrcCoefficients {
    std::map<int, double> self_gain;                  // (||h_k||^2 / N)^2
    std::map<std::pair<int, int>, double> cross_gain; // |h_k^H h_k'|^2 / N^2
    std::map<int, double> noise_gain;                 // ||h_k||^2 sigma^2 / N^2

    double cross(int a, int b) const { return cross_gain.at({std::min(a, b), std::max(a, b)}); }
};

namespace detail {

inline std::complex<double> draw_cn(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, std::sqrt(0.5));
    double re = n(rng);
    double im = n(rng);
    return {re, im};
}

} // namespace detail

// disparity-ladder: tau_k steps down from 1 by ~1/K; h_{k,n} = sqrt(tau_k) CN(0,1),
// cross links scaled by sqrt(tau_v tau_u).
// exponential-mean: per-antenna gains |h_{k,n}|^2 are Exp with dB means lambda_u/v
// (Rayleigh fading, so E||h_k||^2 = N lambda); scalar cross gains |h_{v,u}|^2 are
// Exp with mean lambda_vu.
inline ChannelSet generate_channels(const SystemConfig& cfg, ChannelMode mode) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const int K = cfg.K;
    const int N = cfg.N;
    ChannelSet ch;

    if (mode == ChannelMode::disparity_ladder) {
        // The published ladder subtracts 1/K rounded to two decimals (K=6 gives
        // 1, 0.83, 0.66, 0.49, 0.32, 0.15); fall back to the exact step when
        // rounding would push the last tau to zero or below.
        double step = std::round(100.0 / K) / 100.0;
        if (1.0 - (K - 1) * step <= 0.0) step = 1.0 / K;
        for (int k = 1; k <= K; ++k) {
            ch.tau[k] = 1.0 - double(k - 1) * step;
            cvec hk(N);
            for (int n = 0; n < N; ++n) hk(n) = std::sqrt(ch.tau[k]) * detail::draw_cn(rng);
            ch.h[k] = std::move(hk);
        }
        for (int a = 1; a <= K; ++a)
            for (int b = a + 1; b <= K; ++b)
                ch.h_cross[{a, b}] =
                    std::sqrt(std::sqrt(ch.tau[a] * ch.tau[b])) * detail::draw_cn(rng);
    } else {
        std::exponential_distribution<double> exp1(1.0);
        // First half of the draws gets CCU-grade mean gains, second half CEU-grade;
        // ids are then assigned by descending total gain so id 1 is the strongest link.
        std::vector<cvec> hs(K);
        for (int i = 0; i < K; ++i) {
            double mean = db_to_linear(i < K / 2 ? cfg.lambda_u : cfg.lambda_v);
            cvec hk(N);
            for (int n = 0; n < N; ++n) hk(n) = std::sqrt(mean) * detail::draw_cn(rng);
            hs[i] = std::move(hk);
        }
        std::vector<int> idx(K);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
            return hs[a].squaredNorm() > hs[b].squaredNorm();
        });
        for (int k = 1; k <= K; ++k) {
            ch.h[k] = std::move(hs[idx[k - 1]]);
            ch.tau[k] = 1.0;
        }
        double mean_vu = db_to_linear(cfg.lambda_vu);
        for (int a = 1; a <= K; ++a)
            for (int b = a + 1; b <= K; ++b) {
                double g = mean_vu * exp1(rng);
                double phase = std::uniform_real_distribution<double>(0.0, 2 * M_PI)(rng);
                ch.h_cross[{a, b}] = std::sqrt(g) * std::polar(1.0, phase);
            }
    }
    return ch;
}

inline MrcCoefficients mrc_coefficients(const ChannelSet& ch, const SystemConfig& cfg) {
    MrcCoefficients mc;
    const double n2 = double(cfg.N) * cfg.N;
    for (const auto& [k, hk] : ch.h) {
        double h2 = hk.squaredNorm();
        mc.self_gain[k] = (h2 / cfg.N) * (h2 / cfg.N);
        mc.noise_gain[k] = h2 * cfg.sigma2 / n2;
    }
    for (auto a = ch.h.begin(); a != ch.h.end(); ++a)
        for (auto b = a; b != ch.h.end(); ++b) {
            double ip = std::norm(a->second.dot(b->second));
            mc.cross_gain[{a->first, b->first}] = ip / n2;
        }
    return mc;
}

} // namespace crsma
