#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace crsma {

// Cone layout for the rows of G: the first `lp` rows are componentwise
// inequalities, followed by second-order cone blocks of the given dimensions.
struct ConeDims {
    int lp = 0;
    std::vector<int> soc;

    int rows() const {
        int m = lp;
        for (int d : soc) m += d;
        return m;
    }
    // degree: number of LP rows plus number of SOC blocks (barrier parameter count)
    int degree() const { return lp + (int)soc.size(); }
};

// min c'x  s.t.  Gx + s = h,  s in K.
struct ConeProgram {
    Eigen::VectorXd c;
    Eigen::MatrixXd G;
    Eigen::VectorXd h;
    ConeDims dims;
    std::vector<std::string> var_names; // named roles, index-aligned with columns

    int n() const { return (int)c.size(); }
    int m() const { return (int)h.size(); }
};

struct SolverSettings {
    double feastol = 1e-8;
    double abstol = 1e-9;
    double reltol = 1e-8;
    // A stalled run still counts as solved if its best iterate is within
    // slack * the target tolerances.
    double accept_slack = 100.0;
    int max_iter = 60;
    double step_frac = 0.99;
};

struct SolverResult {
    bool optimal = false;
    int iterations = 0;
    double objective = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd x, s, z;
    double pres = 0, dres = 0, gap = 0;
};

namespace ipm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SocScaling {
    double eta = 1;
    double a = 1;       // first entry of the NT point wbar
    VectorXd q;         // tail of wbar; a^2 - |q|^2 = 1
};

struct Scalings {
    VectorXd lp_w2;     // s_i / z_i per LP row
    std::vector<SocScaling> soc;
};

// lambda = W z; with flip=true computes W^{-1} z (wbar inverse is (a, -q), eta -> 1/eta).
inline void scale_vec(const ConeDims& dims, const Scalings& sc, const VectorXd& v, VectorXd& out,
                      bool inverse) {
    out.resize(v.size());
    for (int i = 0; i < dims.lp; ++i) {
        double w = std::sqrt(sc.lp_w2(i));
        out(i) = inverse ? v(i) / w : v(i) * w;
    }
    int k = dims.lp;
    for (size_t b = 0; b < dims.soc.size(); ++b) {
        const int d = dims.soc[b];
        const SocScaling& w = sc.soc[b];
        const double eta = inverse ? 1.0 / w.eta : w.eta;
        const double sgn = inverse ? -1.0 : 1.0;
        const auto v1 = v.segment(k + 1, d - 1);
        const double zeta = sgn * w.q.dot(v1);
        const double factor = v(k) + zeta / (1.0 + w.a);
        out(k) = eta * (w.a * v(k) + zeta);
        out.segment(k + 1, d - 1) = eta * (v1 + sgn * factor * w.q);
        k += d;
    }
}

// w = u o v (Jordan product); returns sum of cone-block traces.
inline void conic_product(const ConeDims& dims, const VectorXd& u, const VectorXd& v,
                          VectorXd& w) {
    w.resize(u.size());
    w.head(dims.lp) = u.head(dims.lp).cwiseProduct(v.head(dims.lp));
    int k = dims.lp;
    for (int d : dims.soc) {
        w(k) = u.segment(k, d).dot(v.segment(k, d));
        w.segment(k + 1, d - 1) =
            u(k) * v.segment(k + 1, d - 1) + v(k) * u.segment(k + 1, d - 1);
        k += d;
    }
}

// v = u \ w, the inverse of the Jordan product by u.
inline void conic_division(const ConeDims& dims, const VectorXd& u, const VectorXd& w,
                           VectorXd& v) {
    v.resize(u.size());
    v.head(dims.lp) = w.head(dims.lp).cwiseQuotient(u.head(dims.lp));
    int k = dims.lp;
    for (int d : dims.soc) {
        const double u0 = u(k);
        const double w0 = w(k);
        const auto u1 = u.segment(k + 1, d - 1);
        const auto w1 = w.segment(k + 1, d - 1);
        const double rho = u0 * u0 - u1.squaredNorm();
        const double zeta = u1.dot(w1);
        v(k) = (u0 * w0 - zeta) / rho;
        v.segment(k + 1, d - 1) = ((zeta / u0 - w0) / rho) * u1 + w1 / u0;
        k += d;
    }
}

// Shift r into the interior of K along the unit element when needed.
inline VectorXd bring_to_cone(const ConeDims& dims, const VectorXd& r) {
    double alpha = -1e30;
    for (int i = 0; i < dims.lp; ++i) alpha = std::max(alpha, -r(i));
    int k = dims.lp;
    for (int d : dims.soc) {
        alpha = std::max(alpha, r.segment(k + 1, d - 1).norm() - r(k));
        k += d;
    }
    VectorXd s = r;
    if (alpha >= 0) {
        const double shift = 1.0 + alpha;
        s.head(dims.lp).array() += shift;
        k = dims.lp;
        for (int d : dims.soc) {
            s(k) += shift;
            k += d;
        }
    }
    return s;
}

inline VectorXd unit_element(const ConeDims& dims) {
    VectorXd e = VectorXd::Zero(dims.rows());
    e.head(dims.lp).setOnes();
    int k = dims.lp;
    for (int d : dims.soc) {
        e(k) = 1.0;
        k += d;
    }
    return e;
}

inline bool update_scalings(const ConeDims& dims, const VectorXd& s, const VectorXd& z,
                            Scalings& sc, VectorXd& lambda) {
    sc.lp_w2 = s.head(dims.lp).cwiseQuotient(z.head(dims.lp));
    if (dims.lp > 0 && !(sc.lp_w2.minCoeff() > 0)) return false;
    sc.soc.resize(dims.soc.size());
    int k = dims.lp;
    for (size_t b = 0; b < dims.soc.size(); ++b) {
        const int d = dims.soc[b];
        const double sres = s(k) * s(k) - s.segment(k + 1, d - 1).squaredNorm();
        const double zres = z(k) * z(k) - z.segment(k + 1, d - 1).squaredNorm();
        if (sres <= 0 || zres <= 0) return false;
        const double snorm = std::sqrt(sres);
        const double znorm = std::sqrt(zres);
        VectorXd sbar = s.segment(k, d) / snorm;
        VectorXd zbar = z.segment(k, d) / znorm;
        double gamma = std::sqrt(0.5 * (1.0 + sbar.dot(zbar)));
        SocScaling& w = sc.soc[b];
        w.eta = std::sqrt(snorm / znorm);
        w.a = (0.5 / gamma) * (sbar(0) + zbar(0));
        w.q = (0.5 / gamma) * (sbar.tail(d - 1) - zbar.tail(d - 1));
        k += d;
    }
    scale_vec(dims, sc, z, lambda, false);
    return true;
}

// Largest step along (ds, dz) keeping lambda + t*W^{-1}ds and lambda + t*W dz in K.
// ds_by_w and dz_w are the already-scaled directions.
inline double max_step(const ConeDims& dims, const VectorXd& lambda, const VectorXd& ds_by_w,
                       const VectorXd& dz_w) {
    double bound = 0.0; // 1/alpha lower bound; 0 means unlimited
    for (int i = 0; i < dims.lp; ++i) {
        bound = std::max(bound, -ds_by_w(i) / lambda(i));
        bound = std::max(bound, -dz_w(i) / lambda(i));
    }
    int k = dims.lp;
    for (int d : dims.soc) {
        const double res = lambda(k) * lambda(k) - lambda.segment(k + 1, d - 1).squaredNorm();
        if (res > 0) {
            const double nrm = std::sqrt(res);
            VectorXd lbar = lambda.segment(k, d) / nrm;
            auto step_of = [&](const VectorXd& dv) {
                const auto d1 = dv.segment(k + 1, d - 1);
                const double lbar_dv = lbar(0) * dv(k) - lbar.tail(d - 1).dot(d1);
                const double f = (lbar_dv + dv(k)) / (lbar(0) + 1.0);
                VectorXd rho_tail = (d1 - f * lbar.tail(d - 1)) / nrm;
                return rho_tail.norm() - lbar_dv / nrm;
            };
            bound = std::max(bound, step_of(ds_by_w));
            bound = std::max(bound, step_of(dz_w));
        }
        k += d;
    }
    if (bound <= 0) return 1.0;
    return std::min(1.0, 1.0 / bound);
}

} // namespace ipm

// Primal-dual interior-point method with Nesterov-Todd scaling and Mehrotra
// predictor-corrector, reduced to dense normal equations (the programs built
// here have a few dozen columns). Handles LP and second-order cones.
inline SolverResult solve_cone_program(const ConeProgram& prob,
                                       const SolverSettings& settings = {}) {
    using namespace ipm;
    SolverResult res;
    const int n = prob.n();
    const int m = prob.m();
    const ConeDims& dims = prob.dims;
    if (m != dims.rows() || n == 0 || m == 0) return res;

    // Ruiz-style equilibration; SOC blocks share one row scale to stay cones.
    MatrixXd G = prob.G;
    VectorXd h = prob.h;
    VectorXd c = prob.c;
    VectorXd row_scale = VectorXd::Ones(m);
    VectorXd col_scale = VectorXd::Ones(n);
    for (int pass = 0; pass < 3; ++pass) {
        VectorXd r = G.cwiseAbs().rowwise().maxCoeff();
        int k = dims.lp;
        for (int d : dims.soc) {
            r.segment(k, d).setConstant(r.segment(k, d).maxCoeff());
            k += d;
        }
        for (int i = 0; i < m; ++i) {
            double f = r(i) > 0 ? 1.0 / std::sqrt(r(i)) : 1.0;
            G.row(i) *= f;
            row_scale(i) *= f;
        }
        VectorXd cmax = G.cwiseAbs().colwise().maxCoeff();
        for (int j = 0; j < n; ++j) {
            double f = cmax(j) > 0 ? 1.0 / std::sqrt(cmax(j)) : 1.0;
            G.col(j) *= f;
            col_scale(j) *= f;
        }
    }
    h = h.cwiseProduct(row_scale);
    c = c.cwiseProduct(col_scale);

    // Initial point: regularized least squares for x, shifted residuals for s, z.
    MatrixXd GtG = G.transpose() * G;
    double reg0 = 1e-10 * (1.0 + GtG.trace() / n);
    GtG.diagonal().array() += reg0;
    Eigen::LLT<MatrixXd> llt0(GtG);
    VectorXd x = llt0.solve(G.transpose() * h);
    VectorXd s = bring_to_cone(dims, h - G * x);
    VectorXd z = bring_to_cone(dims, G * llt0.solve(-c));

    const VectorXd e = unit_element(dims);
    const double deg = dims.degree();
    const double hnorm = std::max(1.0, h.norm());
    const double cnorm = std::max(1.0, c.norm());

    Scalings sc;
    VectorXd lambda;
    int tiny_steps = 0;

    // Near the optimum the scaled normal equations lose accuracy and the dual
    // residual can deteriorate again; remember the cleanest iterate seen.
    double best_merit = std::numeric_limits<double>::infinity();
    VectorXd best_x = x, best_s = s, best_z = z;
    double best_pres = 0, best_dres = 0, best_gap = 0;

    for (int it = 0; it < settings.max_iter; ++it) {
        res.iterations = it;
        VectorXd rd = c + G.transpose() * z;       // dual residual
        VectorXd rp = G * x + s - h;               // primal residual
        const double gap = s.dot(z);
        const double mu = gap / deg;
        const double pobj = c.dot(x);

        res.pres = rp.norm() / hnorm;
        res.dres = rd.norm() / cnorm;
        res.gap = gap;
        const double relgap = gap / std::max(1.0, std::abs(pobj));
        const double merit = std::max({res.pres, res.dres,
                                       std::min(relgap, mu / settings.abstol *
                                                            settings.reltol)});
        if (merit < best_merit) {
            best_merit = merit;
            best_x = x;
            best_s = s;
            best_z = z;
            best_pres = res.pres;
            best_dres = res.dres;
            best_gap = gap;
        }
        if (res.pres < settings.feastol && res.dres < settings.feastol &&
            (relgap < settings.reltol || mu < settings.abstol)) {
            res.optimal = true;
            break;
        }

        if (!update_scalings(dims, s, z, sc, lambda)) break;

        // Normal matrix M = G' W^-2 G assembled as a pure sum of squares: LP
        // row i contributes g_i g_i' / w2_i, and each SOC block contributes
        // (W^-1 G_b)'(W^-1 G_b) with W^-1 = eta^-1 [a, -q'; -q, I + qq'/(1+a)]
        // written out row by row. Keeping every term a square keeps M
        // numerically positive semidefinite; a subtractive form loses that to
        // cancellation once the scaling turns extreme near convergence.
        MatrixXd A(m, n);
        int arow = 0;
        for (int i = 0; i < dims.lp; ++i)
            A.row(arow++) = G.row(i) / std::sqrt(sc.lp_w2(i));
        int k = dims.lp;
        for (size_t b = 0; b < dims.soc.size(); ++b) {
            const int d = dims.soc[b];
            const SocScaling& w = sc.soc[b];
            const double ie = 1.0 / w.eta;
            Eigen::RowVectorXd g0 = G.row(k);
            Eigen::RowVectorXd qg1 = w.q.transpose() * G.middleRows(k + 1, d - 1);
            A.row(arow++) = ie * (w.a * g0 - qg1);
            for (int i = 1; i < d; ++i)
                A.row(arow++) =
                    ie * (G.row(k + i) + w.q(i - 1) * (qg1 / (1.0 + w.a) - g0));
            k += d;
        }
        MatrixXd M = MatrixXd::Zero(n, n);
        M.selfadjointView<Eigen::Lower>().rankUpdate(A.transpose());
        M = M.selfadjointView<Eigen::Lower>();
        double reg = 1e-12 * (1.0 + M.trace() / n);
        Eigen::LLT<MatrixXd> llt;
        for (int attempt = 0; attempt < 8; ++attempt) {
            MatrixXd Mr = M;
            Mr.diagonal().array() += reg;
            llt.compute(Mr);
            if (llt.info() == Eigen::Success) break;
            reg *= 100;
        }
        if (llt.info() != Eigen::Success) break;

        auto solve_direction = [&](const VectorXd& d_comb, const VectorXd& rd_t,
                                   const VectorXd& rp_t, VectorXd& dx, VectorXd& ds,
                                   VectorXd& dz) {
            VectorXd ldiv, wldiv;
            conic_division(dims, lambda, d_comb, ldiv);
            scale_vec(dims, sc, ldiv, wldiv, false); // W (lambda \ d)
            VectorXd rhs_vec = rp_t + wldiv;
            // W^-2 v implemented as W^-1 (W^-1 v)
            VectorXd tmp, w2rhs;
            scale_vec(dims, sc, rhs_vec, tmp, true);
            scale_vec(dims, sc, tmp, w2rhs, true);
            VectorXd rhs = -rd_t - G.transpose() * w2rhs;
            dx = llt.solve(rhs);
            // Iterative refinement against the exact operator G' W^-2 G;
            // keeps G'dz accurate once the scaling turns ill conditioned and
            // absorbs cancellation in the assembled normal matrix.
            for (int ir = 0; ir < 3; ++ir) {
                VectorXd gdx = G * dx;
                scale_vec(dims, sc, gdx, tmp, true);
                scale_vec(dims, sc, tmp, gdx, true);
                VectorXd rres = rhs - G.transpose() * gdx;
                if (rres.norm() <= 1e-13 * (1.0 + rhs.norm())) break;
                dx += llt.solve(rres);
            }
            VectorXd gv = G * dx + rhs_vec;
            scale_vec(dims, sc, gv, tmp, true);
            scale_vec(dims, sc, tmp, dz, true);
            ds = -rp_t - G * dx;
        };

        // Predictor.
        VectorXd d_aff;
        conic_product(dims, lambda, lambda, d_aff);
        d_aff = -d_aff;
        VectorXd dx_a, ds_a, dz_a;
        solve_direction(d_aff, rd, rp, dx_a, ds_a, dz_a);

        VectorXd ds_by_w, dz_w;
        scale_vec(dims, sc, ds_a, ds_by_w, true);
        scale_vec(dims, sc, dz_a, dz_w, false);
        const double alpha_aff = max_step(dims, lambda, ds_by_w, dz_w);
        const double mu_aff =
            (s + alpha_aff * ds_a).dot(z + alpha_aff * dz_a) / deg;
        double sigma = std::pow(std::max(0.0, mu_aff / mu), 3.0);
        sigma = std::min(1.0, sigma);

        // Corrector.
        VectorXd corr;
        conic_product(dims, ds_by_w, dz_w, corr);
        VectorXd d_comb = d_aff - corr + sigma * mu * e;
        VectorXd dx, ds, dz;
        solve_direction(d_comb, VectorXd((1.0 - sigma) * rd), VectorXd((1.0 - sigma) * rp),
                        dx, ds, dz);

        scale_vec(dims, sc, ds, ds_by_w, true);
        scale_vec(dims, sc, dz, dz_w, false);
        const double alpha = settings.step_frac * max_step(dims, lambda, ds_by_w, dz_w);
        x += alpha * dx;
        s += alpha * ds;
        z += alpha * dz;

        if (alpha < 1e-7) {
            if (++tiny_steps >= 3) break;
        } else {
            tiny_steps = 0;
        }
    }

    if (!res.optimal) {
        x = best_x;
        s = best_s;
        z = best_z;
        res.pres = best_pres;
        res.dres = best_dres;
        res.gap = best_gap;
        const double slack = settings.accept_slack;
        if (best_pres < slack * settings.feastol && best_dres < slack * settings.feastol &&
            best_merit < slack * settings.reltol)
            res.optimal = true;
    }

    res.x = x.cwiseProduct(col_scale);
    res.s = s.cwiseQuotient(row_scale);
    res.z = z.cwiseProduct(row_scale);
    res.objective = prob.c.dot(res.x);
    return res;
}

} // namespace crsma
