#pragma once

// Charging-price policies. The three adaptive policies are computed from the
// programs whose optimum they induce; static prices get an explicit
// piecewise-affine description and a feasibility search for prices under
// which no road-capacity paradox remains.

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "gue/equilibrium.hpp"
#include "gue/metrics.hpp"
#include "gue/model.hpp"
#include "gue/qp.hpp"

namespace gue {

enum class PolicyKind { LmpPassThrough, Static, OptT, OptP, OptC };

struct PricingPolicy {
    PolicyKind kind = PolicyKind::LmpPassThrough;
    Vec pi;  // Static only

    static PricingPolicy lmp() { return {}; }
    static PricingPolicy fixed(const Vec& p) { return {PolicyKind::Static, p}; }
    static PricingPolicy opt_t() { return {PolicyKind::OptT, {}}; }
    static PricingPolicy opt_p() { return {PolicyKind::OptP, {}}; }
    static PricingPolicy opt_c() { return {PolicyKind::OptC, {}}; }

    std::string name() const {
        switch (kind) {
        case PolicyKind::LmpPassThrough: return "lmp";
        case PolicyKind::Static: return "static";
        case PolicyKind::OptT: return "opt_t";
        case PolicyKind::OptP: return "opt_p";
        case PolicyKind::OptC: return "opt_c";
        }
        return "?";
    }

    static PricingPolicy parse(const std::string& s, const Vec& pi = {}) {
        if (s == "lmp") return lmp();
        if (s == "static") return fixed(pi);
        if (s == "opt_t" || s == "optt") return opt_t();
        if (s == "opt_p" || s == "optp") return opt_p();
        if (s == "opt_c" || s == "optc") return opt_c();
        throw Error("INVALID_POLICY", "unknown policy '" + s + "'");
    }
};

namespace detail {

// A policy solution together with the route program it came from when the
// policy decouples traffic from the grid (OptT and Static).
struct PolicySolve {
    GueSolution gue;
    std::optional<UeResult> ue;
    double alpha_weight = 1.0;  // multiple of Ã in the program's quadratic term
};

inline void check_static(const CoupledSystem& s, const PricingPolicy& pol) {
    if (pol.pi.size() != s.n_routes()) throw Error("DIMENSION_MISMATCH", "static price length differs from route count");
    if (!pol.pi.allFinite()) throw Error("VALIDATION_ERROR", "static prices must be finite");
}

inline PolicySolve solve_policy(const CoupledSystem& s, const PricingPolicy& pol, double tol) {
    require_valid(s);
    PolicySolve out;
    const Mat At = route_alpha(s);
    const Vec bt = route_beta(s);
    switch (pol.kind) {
    case PolicyKind::LmpPassThrough:
        out.gue = solve_gue(s, tol);
        out.gue.policy_price = route_prices(s, out.gue.dispatch.lambda);
        return out;
    case PolicyKind::Static:
    case PolicyKind::OptT: {
        const bool stat = pol.kind == PolicyKind::Static;
        if (stat) check_static(s, pol);
        out.alpha_weight = stat ? 1.0 : 2.0;
        UeResult ue = stat ? transport_ue(s, pol.pi, tol) : solve_route_qp(2.0 * At, bt, od_groups(s), tol);
        Vec x = ue.x.cwiseMax(0.0);
        Vec price = stat ? pol.pi : Vec(At * x);
        out.gue = finish_solution(s, x, ue.nu, ue.xi, travel_cost(s, x) + price, tol);
        out.gue.policy_price = price;
        out.ue = ue;
        break;
    }
    case PolicyKind::OptP:
    case PolicyKind::OptC: {
        const bool p_only = pol.kind == PolicyKind::OptP;
        out.alpha_weight = p_only ? 0.0 : 2.0;
        auto J = p_only ? build_joint_qp(s, Mat::Zero(s.n_routes(), s.n_routes()), Vec::Zero(s.n_routes()))
                        : build_joint_qp(s, 2.0 * At, bt);
        out.gue = solve_joint(s, J, tol);
        const Vec& x = out.gue.x;
        const Vec pl = route_prices(s, out.gue.dispatch.lambda);
        out.gue.policy_price = p_only ? Vec(pl - At * x - bt) : Vec(At * x + pl);
        break;
    }
    }
    auto& g = out.gue;
    g.route_cost = travel_cost(s, g.x) + g.policy_price;
    g.binding = congestion_pattern(s, g);
    if (g.binding.degenerate && !has_warning(g, "DEGENERATE")) g.warnings.push_back("DEGENERATE");
    if (!uniform_cost_holds(s, g.x, g.route_cost)) g.warnings.push_back("FIXED_POINT_VIOLATION");
    return out;
}

} // namespace detail

inline GueSolution gue_under_policy(const CoupledSystem& s, const PricingPolicy& pol, double tol = kDefaultQpTol) {
    return detail::solve_policy(s, pol, tol).gue;
}

inline Vec policy_prices(const CoupledSystem& s, const GueSolution& g, const PricingPolicy& pol) {
    const Mat At = route_alpha(s);
    const Vec pl = route_prices(s, g.dispatch.lambda);
    switch (pol.kind) {
    case PolicyKind::LmpPassThrough: return pl;
    case PolicyKind::Static: detail::check_static(s, pol); return pol.pi;
    case PolicyKind::OptT: return At * g.x;
    case PolicyKind::OptP: return pl - At * g.x - route_beta(s);
    case PolicyKind::OptC: return At * g.x + pl;
    }
    return pl;
}

inline GueSolver policy_solver(const PricingPolicy& pol, double tol = kDefaultQpTol) {
    return [pol, tol](const CoupledSystem& s) { return gue_under_policy(s, pol, tol); };
}

// Implicit-function derivative of Φ_T and Φ_P under a policy. For the
// decoupled policies the route program is differentiated and the dispatch
// enters through its envelope (π(λ)ᵀ∂x for road slopes, −η for lines).
inline SensitivityRow policy_derivative_kkt(const CoupledSystem& s, const detail::PolicySolve& ps,
                                            const PricingPolicy& pol, const Parameter& p) {
    check_parameter(s, p);
    if (p.kind != ParamKind::Alpha && p.kind != ParamKind::Fbar)
        throw Error("INVALID_PARAMETER", "KKT derivatives cover alpha and fbar only");
    if (pol.kind == PolicyKind::LmpPassThrough) return derivative_kkt(s, ps.gue, p);
    const auto& g = ps.gue;
    const int nR = s.n_routes();
    const Mat& A = s.transport.link_route;
    const Mat B = bus_route(s);
    const Mat At = route_alpha(s);
    const Vec bt = route_beta(s);
    Vec a = p.kind == ParamKind::Alpha ? Vec(A.row(p.index).transpose()) : Vec::Zero(nR);
    int twin = p.kind == ParamKind::Fbar ? twin_row(s.power, p.index) : -1;

    auto check_kernel = [&](const Mat& ker, int n) {
        for (int k = 0; k < ker.cols(); ++k) {
            Vec kx = ker.col(k).head(nR);
            Vec rest = ker.col(k).tail(n - nR);
            double scale = 1.0 + ker.col(k).norm();
            if ((A * kx).lpNorm<Eigen::Infinity>() > 1e-9 * scale || (B * kx).lpNorm<Eigen::Infinity>() > 1e-9 * scale ||
                (rest.size() && rest.lpNorm<Eigen::Infinity>() > 1e-9 * scale))
                throw Error("DEGENERATE_PATTERN", "equilibrium response is not unique for " + p.label());
        }
    };

    Vec dx = Vec::Zero(nR);
    std::optional<double> dphi_p;
    if (ps.ue) {
        // Lines do not enter the route program.
        if (p.kind == ParamKind::Alpha) {
            const auto& u = *ps.ue;
            Mat dP = ps.alpha_weight * a * a.transpose();
            auto sens = qp_sensitivity(u.problem, u.solution, dP, Vec::Zero(nR), Vec::Zero(u.problem.p()),
                                       Vec::Zero(u.problem.m()));
            check_kernel(sens.primal_kernel, nR);
            dx = sens.dz;
        }
        if (g.binding.degenerate) throw Error("DEGENERATE_PATTERN", "dispatch multipliers are not unique");
    } else if (ps.alpha_weight != 0.0 || p.kind == ParamKind::Fbar) {
        const auto& pr = g.joint.problem;
        const auto& L = g.joint.layout;
        const int n = pr.n();
        Mat dP = Mat::Zero(n, n);
        Vec db_in = Vec::Zero(pr.m());
        if (p.kind == ParamKind::Alpha) {
            dP.topLeftCorner(nR, nR) = ps.alpha_weight * a * a.transpose();
        } else {
            db_in(L.line0() + p.index) = 1.0;
            if (twin >= 0) db_in(L.line0() + twin) = 1.0;
        }
        auto sens = qp_sensitivity(pr, g.joint_solution, dP, Vec::Zero(n), Vec::Zero(pr.p()), db_in);
        check_kernel(sens.primal_kernel, n);
        dx = sens.dz.head(nR);
        Vec dg = sens.dz.segment(L.g0(), L.nP);
        dphi_p = (s.power.q_diag.cwiseProduct(g.dispatch.g) + s.power.mu).dot(dg);
    } else {
        // α does not enter the dispatch-cost program, so nothing moves.
        dphi_p = 0.0;
    }

    SensitivityRow r;
    r.parameter = p;
    r.theta = get_param(s, p);
    r.method = Method::KKT;
    r.phi = social_costs(s, g);
    r.dphi_t = (2.0 * At * g.x + bt).dot(dx);
    if (p.kind == ParamKind::Alpha) r.dphi_t += std::pow(a.dot(g.x), 2);
    if (dphi_p) {
        r.dphi_p = *dphi_p;
    } else {
        r.dphi_p = s.coupling.rho * g.dispatch.lambda.dot(B * dx);
        if (p.kind == ParamKind::Fbar) {
            r.dphi_p -= g.dispatch.eta(p.index);
            if (twin >= 0) r.dphi_p -= g.dispatch.eta(twin);
        }
    }
    r.dphi_c = r.dphi_t + r.dphi_p;
    r.side_condition = std::abs(g.route_cost.dot(dx));
    return r;
}

inline BpReport screen_under_policy(const CoupledSystem& s, const PricingPolicy& pol,
                                    ScreenMethod method = ScreenMethod::KKT, double fd_step = -1.0,
                                    double tol = kDefaultQpTol) {
    if (pol.kind == PolicyKind::LmpPassThrough) return screen_bp(s, method, default_solver(tol), fd_step);
    BpReport rep;
    std::optional<detail::PolicySolve> ps;
    try {
        ps = detail::solve_policy(s, pol, tol);
    } catch (const Error& e) {
        rep.failures.push_back(std::string("base: ") + e.what());
        collect_verdicts(rep);
        return rep;
    }
    const GueSolver solver = policy_solver(pol, tol);
    for (auto& p : capacity_parameters(s)) {
        bool want_fd = method != ScreenMethod::KKT;
        if (method != ScreenMethod::FD) {
            try {
                rep.rows.push_back(policy_derivative_kkt(s, *ps, pol, p));
            } catch (const Error& e) {
                rep.failures.push_back(p.label() + ": " + e.what());
                want_fd = true;
            }
        }
        if (want_fd) {
            try {
                rep.rows.push_back(derivative_fd(s, p, fd_step, solver));
            } catch (const Error& e) {
                SensitivityRow r;
                r.parameter = p;
                r.theta = get_param(s, p);
                r.error = e.code();
                rep.rows.push_back(r);
                rep.failures.push_back(p.label() + ": " + e.what());
            }
        }
    }
    collect_verdicts(rep);
    return rep;
}

// ---- static prices: critical regions -------------------------------------

struct AffineMap {
    Mat M;
    Vec c;
    Vec at(const Vec& t) const { return M * t + c; }
};

// Solution of a QP with a fixed working set W, as an affine function of a
// parameter t that enters linearly through q, b_eq and b_in.
struct FixedSetKkt {
    AffineMap z;
    AffineMap lambda_eq;
    AffineMap mu_w;  // one row per entry of W
};

inline FixedSetKkt fixed_set_kkt(const QpProblem& pr, const std::vector<int>& W, const Mat& dq, const Mat& db_eq,
                                 const Mat& db_in) {
    const int n = pr.n(), pe = pr.p(), w = static_cast<int>(W.size());
    const int k = static_cast<int>(dq.cols());
    const int N = n + pe + w;
    Mat Kkt = Mat::Zero(N, N);
    Kkt.topLeftCorner(n, n) = pr.P;
    Vec r0 = Vec::Zero(N);
    Mat r1 = Mat::Zero(N, k);
    r0.head(n) = -pr.q;
    r1.topRows(n) = -dq;
    for (int j = 0; j < pe; ++j) {
        Kkt.block(0, n + j, n, 1) = pr.A_eq.row(j).transpose();
        Kkt.block(n + j, 0, 1, n) = pr.A_eq.row(j);
        r0(n + j) = pr.b_eq(j);
        r1.row(n + j) = db_eq.row(j);
    }
    for (int j = 0; j < w; ++j) {
        Kkt.block(0, n + pe + j, n, 1) = pr.A_in.row(W[j]).transpose();
        Kkt.block(n + pe + j, 0, 1, n) = pr.A_in.row(W[j]);
        r0(n + pe + j) = pr.b_in(W[j]);
        r1.row(n + pe + j) = db_in.row(W[j]);
    }
    Eigen::FullPivLU<Mat> lu(Kkt);
    if (!lu.isInvertible()) throw Error("DEGENERATE_PATTERN", "reduced KKT system is singular for this pattern");
    Vec s0 = lu.solve(r0);
    Mat s1 = lu.solve(r1);
    FixedSetKkt out;
    out.z = {s1.topRows(n), s0.head(n)};
    out.lambda_eq = {s1.middleRows(n, pe), s0.segment(n, pe)};
    out.mu_w = {s1.bottomRows(w), s0.tail(w)};
    return out;
}

struct CriticalRegion {
    BindingPattern pattern;
    std::vector<int> dispatch_working_set;  // rows of the dispatch program held at equality
    Mat K;                                  // x(Π) = KΠ + v
    Vec v;
    Mat C;  // λ(Π) = CΠ + w
    Vec w;
    Mat region_A;  // region_A Π ≤ region_b describes the closure of the region
    Vec region_b;
    Vec pi;              // the price vector the region was built from
    double residual = 0.0;  // worst validation residual, relative

    Vec x_at(const Vec& p) const { return K * p + v; }
    Vec lambda_at(const Vec& p) const { return C * p + w; }
    // Smallest margin to the region boundary; positive strictly inside.
    double margin(const Vec& p) const {
        double m = std::numeric_limits<double>::infinity();
        for (int i = 0; i < region_A.rows(); ++i) {
            double nrm = region_A.row(i).norm();
            if (nrm == 0) continue;
            m = std::min(m, (region_b(i) - region_A.row(i).dot(p)) / nrm);
        }
        return m;
    }
    std::string key() const {
        std::string s = "R";
        for (int r : pattern.zero_routes) s += ":" + std::to_string(r);
        s += "|D";
        for (int r : dispatch_working_set) s += ":" + std::to_string(r);
        return s;
    }
};

namespace detail {

constexpr double kStrictRel = 1e-9;

inline void add_rows(Mat& A, Vec& b, const Mat& An, const Vec& bn) {
    Mat A2(A.rows() + An.rows(), An.cols());
    Vec b2(b.size() + bn.size());
    if (A.rows()) A2.topRows(A.rows()) = A;
    A2.bottomRows(An.rows()) = An;
    b2 << b, bn;
    A = A2;
    b = b2;
}

inline Mat od_incidence(const CoupledSystem& s) {
    auto ods = od_groups(s);
    Mat E = Mat::Zero(static_cast<int>(ods.size()), s.n_routes());
    for (int k = 0; k < static_cast<int>(ods.size()); ++k)
        for (int r : ods[k].routes) E(k, r) = 1.0;
    return E;
}

struct DirectStatic {
    UeResult ue;
    JointQp dq;
    QpSolution ds;
};

inline DirectStatic direct_static(const CoupledSystem& s, const Vec& pi, double tol) {
    DirectStatic d;
    d.ue = transport_ue(s, pi, tol);
    d.dq = build_dispatch_qp(s.power, charging_load(s, d.ue.x.cwiseMax(0.0), true));
    d.ds = solve_qp(d.dq.problem, tol);
    if (d.ds.status == QpStatus::Infeasible) throw Error("INFEASIBLE_DISPATCH", "load cannot be served within line limits");
    if (d.ds.status != QpStatus::Optimal) throw Error("SOLVER_FAILURE", "dispatch QP did not converge");
    return d;
}

} // namespace detail

inline CriticalRegion critical_region(const CoupledSystem& s, const Vec& pi, double tol = kDefaultQpTol,
                                      unsigned seed = 1) {
    require_valid(s);
    const int nR = s.n_routes(), nP = s.n_buses();
    if (pi.size() != nR) throw Error("DIMENSION_MISMATCH", "price length differs from route count");
    if (!pi.allFinite()) throw Error("VALIDATION_ERROR", "prices must be finite");
    auto d = detail::direct_static(s, pi, tol);
    const double N = total_demand(s);

    // Route side: the UE program with its zero routes held at zero.
    const auto& upr = d.ue.problem;
    std::vector<int> Wu = d.ue.solution.working_set;
    const double cscale = 1.0 + (route_beta(s) + pi).lpNorm<Eigen::Infinity>() + route_alpha(s).lpNorm<Eigen::Infinity>() * N;
    for (int r = 0; r < nR; ++r) {
        bool held = std::find(Wu.begin(), Wu.end(), r) != Wu.end();
        if (held && d.ue.xi(r) <= detail::kStrictRel * cscale)
            throw Error("DEGENERATE_PATTERN", "route " + std::to_string(r) + " is unused at zero reduced cost");
        if (!held && d.ue.x(r) <= detail::kStrictRel * (1.0 + N))
            throw Error("DEGENERATE_PATTERN", "route " + std::to_string(r) + " sits at zero without being held");
    }
    QpProblem upr0 = upr;  // prices enter linearly, so build the map around Π = 0
    upr0.q = route_beta(s);
    auto ku = fixed_set_kkt(upr0, Wu, Mat::Identity(nR, nR), Mat::Zero(upr.p(), nR), Mat::Zero(upr.m(), nR));

    // Dispatch side, with the load ρB x(Π) + base entering the balance rows.
    const auto& dpr = d.dq.problem;
    const auto& DL = d.dq.layout;
    std::vector<int> Wd = d.ds.working_set;
    const double mscale = 1.0 + d.ds.lambda_eq.lpNorm<Eigen::Infinity>();
    for (int i = 0; i < dpr.m(); ++i) {
        bool held = std::find(Wd.begin(), Wd.end(), i) != Wd.end();
        double slack = dpr.b_in(i) - dpr.A_in.row(i).dot(d.ds.z);
        if (held && d.ds.mu_in(i) <= detail::kStrictRel * mscale)
            throw Error("DEGENERATE_PATTERN", "dispatch row " + std::to_string(i) + " binds with a zero multiplier");
        if (!held && slack <= detail::kStrictRel * (1.0 + std::abs(dpr.b_in(i))))
            throw Error("DEGENERATE_PATTERN", "dispatch row " + std::to_string(i) + " is tight but not held");
    }
    const Mat B = bus_route(s);
    const double rho = s.coupling.rho;
    Mat dbeq = Mat::Zero(dpr.p(), nR);
    dbeq.topRows(nP) = -rho * B * ku.z.M;
    QpProblem dpr0 = dpr;
    dpr0.b_eq.head(nP) = -(rho * B * ku.z.c + s.power.base_load);
    auto kd = fixed_set_kkt(dpr0, Wd, Mat::Zero(dpr.n(), nR), dbeq, Mat::Zero(dpr.m(), nR));

    CriticalRegion cr;
    cr.pi = pi;
    cr.K = 0.5 * (ku.z.M + ku.z.M.transpose());
    cr.v = ku.z.c;
    cr.C = kd.lambda_eq.M.topRows(nP);
    cr.w = kd.lambda_eq.c.head(nP);
    for (int r : Wu) cr.pattern.zero_routes.push_back(r);
    for (int i : Wd)
        if (i < DL.mP) cr.pattern.congested_lines.push_back(i);
    cr.dispatch_working_set = Wd;

    // Region: active routes stay positive, held routes keep ξ ≥ 0, slack
    // dispatch rows stay slack and held ones keep their multipliers.
    Mat RA(0, nR);
    Vec Rb(0);
    for (int r = 0; r < nR; ++r) {
        if (std::find(Wu.begin(), Wu.end(), r) != Wu.end()) continue;
        detail::add_rows(RA, Rb, -ku.z.M.row(r), Vec::Constant(1, ku.z.c(r)));
    }
    for (int j = 0; j < static_cast<int>(Wu.size()); ++j)
        detail::add_rows(RA, Rb, -ku.mu_w.M.row(j), Vec::Constant(1, ku.mu_w.c(j)));
    for (int i = 0; i < dpr.m(); ++i) {
        if (std::find(Wd.begin(), Wd.end(), i) != Wd.end()) continue;
        Mat row = dpr.A_in.row(i) * kd.z.M;
        detail::add_rows(RA, Rb, row, Vec::Constant(1, dpr.b_in(i) - dpr.A_in.row(i).dot(kd.z.c)));
    }
    for (int j = 0; j < static_cast<int>(Wd.size()); ++j)
        detail::add_rows(RA, Rb, -kd.mu_w.M.row(j), Vec::Constant(1, kd.mu_w.c(j)));
    cr.region_A = RA;
    cr.region_b = Rb;

    // Validate against direct solves at Π and at one interior perturbation.
    auto residual = [&](const Vec& p, const detail::DirectStatic& dd) {
        Vec x = dd.ue.x;
        Vec lam = dd.ds.lambda_eq.head(nP);
        double rx = (cr.x_at(p) - x).lpNorm<Eigen::Infinity>() / (1.0 + x.lpNorm<Eigen::Infinity>());
        double rl = (cr.lambda_at(p) - lam).lpNorm<Eigen::Infinity>() / (1.0 + lam.lpNorm<Eigen::Infinity>());
        return std::max(rx, rl);
    };
    cr.residual = residual(pi, d);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Vec dir(nR);
    for (int r = 0; r < nR; ++r) dir(r) = nd(rng);
    dir /= dir.norm();
    double tmax = 1.0 + pi.lpNorm<Eigen::Infinity>();
    for (int i = 0; i < RA.rows(); ++i) {
        double ad = RA.row(i).dot(dir);
        if (ad > 0) tmax = std::min(tmax, (Rb(i) - RA.row(i).dot(pi)) / ad);
    }
    if (tmax > 0) {
        Vec p2 = pi + 0.5 * tmax * dir;
        try {
            cr.residual = std::max(cr.residual, residual(p2, detail::direct_static(s, p2, tol)));
        } catch (const Error&) {
            cr.residual = std::numeric_limits<double>::infinity();
        }
    }
    if (!(cr.residual <= 1e-7))
        throw Error("DEGENERATE_PATTERN", "affine description disagrees with direct solves (residual " +
                                              std::to_string(cr.residual) + ")");
    return cr;
}

// ---- static prices: paradox elimination -----------------------------------

struct PiBox {
    Vec lo, hi;
};

enum class MitigationStatus { Found, InfeasibleInRegion, Indeterminate };

inline const char* to_string(MitigationStatus m) {
    switch (m) {
    case MitigationStatus::Found: return "Found";
    case MitigationStatus::InfeasibleInRegion: return "InfeasibleInRegion";
    case MitigationStatus::Indeterminate: return "Indeterminate";
    }
    return "?";
}

struct MitigationResult {
    MitigationStatus status = MitigationStatus::Indeterminate;
    Vec pi;                                   // best point found (the feasible one when Found)
    std::vector<std::string> certified_constraints;
    std::vector<double> constraint_slacks;    // normalized values at pi, same order
    double revenue = 0.0;
    double min_slack = 0.0;    // min normalized slack at pi
    double upper_bound = 0.0;  // bound on the maximal min-slack from the concave constraints
    bool all_concave = true;
    int iterations = 0;
};

// ½ΠᵀHΠ + gᵀΠ + c, required to be ≥ 0.
struct QuadConstraint {
    std::string name;
    Mat H;
    Vec g;
    double c = 0.0;
    double scale = 1.0;
    bool concave = true;

    double value(const Vec& p) const { return (0.5 * p.dot(H * p) + g.dot(p) + c) / scale; }
    Vec grad(const Vec& p) const { return (H * p + g) / scale; }
};

// ∂Φ_T/∂α_ℓ and ∂Φ_P/∂α_ℓ as functions of Π inside the region, plus the
// revenue floor. Links that carry no flow anywhere in the region give
// identically zero derivatives and are left out.
inline std::vector<QuadConstraint> static_bp_constraints(const CoupledSystem& s, const CriticalRegion& cr,
                                                         double revenue_floor) {
    const int nR = s.n_routes();
    const Mat& A = s.transport.link_route;
    const Mat At = route_alpha(s);
    const Vec bt = route_beta(s);
    const Mat B = bus_route(s);
    const double rho = s.coupling.rho;
    const Vec x0 = cr.x_at(cr.pi);
    const double phi_t = x0.dot(At * x0 + bt);
    const Vec lam0 = cr.lambda_at(cr.pi);
    const double pay = rho * lam0.dot(B * x0);
    std::vector<QuadConstraint> out;
    auto concavity = [](QuadConstraint& q) {
        Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (q.H + q.H.transpose()), Eigen::EigenvaluesOnly);
        double top = es.eigenvalues().maxCoeff();
        q.concave = top <= 1e-9 * (1.0 + es.eigenvalues().cwiseAbs().maxCoeff());
    };
    for (int l = 0; l < s.transport.n_links(); ++l) {
        Vec a = A.row(l).transpose();
        Vec Ka = cr.K * a;
        Vec u = Ka;  // ∇s, s = aᵀx
        double s0 = a.dot(cr.v);
        if (u.lpNorm<Eigen::Infinity>() <= 1e-14 && std::abs(s0) <= 1e-14) continue;
        // m = (Ka)ᵀ(2Ãx + β̃), n = ρ λᵀ B K a
        Vec mv = 2.0 * cr.K * At * Ka;
        double m0 = Ka.dot(2.0 * At * cr.v + bt);
        Vec nv = rho * cr.C.transpose() * (B * Ka);
        double n0 = rho * cr.w.dot(B * Ka);
        QuadConstraint t;
        t.name = "dphi_t/alpha:" + std::to_string(l);
        t.H = 2.0 * u * u.transpose() + u * mv.transpose() + mv * u.transpose();
        t.g = 2.0 * s0 * u + s0 * mv + m0 * u;
        t.c = s0 * s0 + s0 * m0;
        t.scale = 1.0 + std::abs(phi_t);
        concavity(t);
        out.push_back(t);
        QuadConstraint q;
        q.name = "dphi_p/alpha:" + std::to_string(l);
        q.H = u * nv.transpose() + nv * u.transpose();
        q.g = s0 * nv + n0 * u;
        q.c = s0 * n0;
        q.scale = 1.0 + std::abs(pay);
        concavity(q);
        out.push_back(q);
    }
    if (std::isfinite(revenue_floor)) {
        QuadConstraint r;
        r.name = "revenue";
        r.H = cr.K + cr.K.transpose();
        r.g = cr.v;
        r.c = -revenue_floor;
        r.scale = 1.0 + std::abs(revenue_floor) + std::abs(cr.pi.dot(x0));
        concavity(r);
        out.push_back(r);
    }
    (void)nR;
    return out;
}

namespace detail {

constexpr double kMitigationTol = 1e-7;

// max t s.t. t ≤ cut_j(Π), Π in the shrunken region and the box, t ≤ 1.
inline std::optional<std::pair<Vec, double>> cut_lp(const std::vector<std::pair<Vec, double>>& cuts, const Mat& RA,
                                                    const Vec& Rb, const PiBox& box) {
    const int n = static_cast<int>(box.lo.size());
    QpProblem lp;
    lp.P = Mat::Zero(n + 1, n + 1);
    lp.q = Vec::Zero(n + 1);
    lp.q(n) = -1.0;
    lp.A_eq = Mat::Zero(0, n + 1);
    lp.b_eq = Vec::Zero(0);
    const int m = static_cast<int>(cuts.size()) + static_cast<int>(RA.rows()) + 2 * n + 2;
    lp.A_in = Mat::Zero(m, n + 1);
    lp.b_in = Vec::Zero(m);
    int row = 0;
    // cut: t − gᵀΠ ≤ c where cut value is gᵀΠ + c
    for (auto& [g, c] : cuts) {
        lp.A_in.row(row).head(n) = -g.transpose();
        lp.A_in(row, n) = 1.0;
        lp.b_in(row++) = c;
    }
    for (int i = 0; i < RA.rows(); ++i) {
        lp.A_in.row(row).head(n) = RA.row(i);
        lp.b_in(row++) = Rb(i);
    }
    for (int j = 0; j < n; ++j) {
        lp.A_in(row, j) = 1.0;
        lp.b_in(row++) = box.hi(j);
        lp.A_in(row, j) = -1.0;
        lp.b_in(row++) = -box.lo(j);
    }
    lp.A_in(row, n) = 1.0;
    lp.b_in(row++) = 1.0;
    lp.A_in(row, n) = -1.0;
    lp.b_in(row++) = 1e6;
    auto sol = solve_qp(lp, 1e-10);
    if (sol.status != QpStatus::Optimal) return std::nullopt;
    return std::make_pair(Vec(sol.z.head(n)), sol.z(n));
}

} // namespace detail

inline MitigationResult eliminate_bp_static(const CoupledSystem& s, const CriticalRegion& cr, double revenue_floor,
                                            const PiBox& box, int max_iter = 300) {
    const int nR = s.n_routes();
    if (box.lo.size() != nR || box.hi.size() != nR) throw Error("DIMENSION_MISMATCH", "price bounds length");
    if (!box.lo.allFinite() || !box.hi.allFinite() || (box.hi - box.lo).minCoeff() < 0)
        throw Error("INVALID_RANGE", "price bounds must be a finite nonempty box");
    const double tol = detail::kMitigationTol;
    auto cons = static_bp_constraints(s, cr, revenue_floor);
    MitigationResult res;
    for (auto& c : cons) res.all_concave = res.all_concave && c.concave;

    auto min_slack = [&](const Vec& p) {
        double m = std::numeric_limits<double>::infinity();
        for (auto& c : cons) m = std::min(m, c.value(p));
        return cons.empty() ? 1.0 : m;
    };
    auto finish = [&](const Vec& p, MitigationStatus st) {
        res.status = st;
        res.pi = p;
        res.min_slack = min_slack(p);
        res.certified_constraints.clear();
        res.constraint_slacks.clear();
        for (auto& c : cons) {
            res.certified_constraints.push_back(c.name);
            res.constraint_slacks.push_back(c.value(p));
        }
        res.revenue = p.dot(cr.x_at(p));
        return res;
    };

    // Shrink the region a little so returned prices sit strictly inside it.
    Mat RA = cr.region_A;
    Vec Rb = cr.region_b;
    for (int i = 0; i < RA.rows(); ++i) {
        double nrm = RA.row(i).norm();
        Rb(i) -= 1e-9 * (1.0 + std::abs(Rb(i)) + nrm * (1.0 + cr.pi.norm()));
    }
    bool pi0_inside = (cr.pi.array() >= box.lo.array()).all() && (cr.pi.array() <= box.hi.array()).all();
    if (pi0_inside && min_slack(cr.pi) >= -tol) {
        res.upper_bound = 1.0;
        return finish(cr.pi, MitigationStatus::Found);
    }

    // Cutting planes from every constraint drive the search; the bound only
    // trusts the cuts of concave constraints.
    std::vector<std::pair<Vec, double>> cuts, sound;
    auto add_cuts = [&](const Vec& p) {
        for (auto& c : cons) {
            Vec g = c.grad(p);
            std::pair<Vec, double> cut{g, c.value(p) - g.dot(p)};
            cuts.push_back(cut);
            if (c.concave) sound.push_back(cut);
        }
    };
    Vec best = pi0_inside ? cr.pi : Vec((0.5 * (box.lo + box.hi)).eval());
    double best_val = pi0_inside ? min_slack(cr.pi) : -std::numeric_limits<double>::infinity();
    add_cuts(best);
    double ub = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iter; ++it) {
        res.iterations = it + 1;
        auto lp = detail::cut_lp(cuts, RA, Rb, box);
        if (!lp) {
            // Region and box do not meet.
            res.upper_bound = -std::numeric_limits<double>::infinity();
            return finish(best, MitigationStatus::InfeasibleInRegion);
        }
        auto [p, t] = *lp;
        double val = min_slack(p);
        if (val > best_val) {
            best_val = val;
            best = p;
        }
        if (res.all_concave) ub = std::min(ub, t);
        if (best_val >= -tol && (best_val >= 0.5 * std::min(ub, 1.0) || ub - best_val <= tol)) break;
        if (res.all_concave && ub < -tol) break;
        if (ub - best_val <= tol) break;
        add_cuts(p);
    }
    if (!res.all_concave) {
        auto lp = detail::cut_lp(sound, RA, Rb, box);
        ub = lp ? lp->second : -std::numeric_limits<double>::infinity();
    }
    res.upper_bound = ub;
    if (best_val >= -tol) return finish(best, MitigationStatus::Found);
    if (ub < -tol) return finish(best, MitigationStatus::InfeasibleInRegion);
    return finish(best, MitigationStatus::Indeterminate);
}

struct RegionProbe {
    CriticalRegion region;
    MitigationResult result;
    int sample = 0;
};

struct WalkResult {
    std::vector<RegionProbe> probes;
    MitigationStatus status = MitigationStatus::Indeterminate;
    int samples = 0;
    int degenerate_samples = 0;
};

namespace detail {

inline double radical_inverse(unsigned long long i, int base) {
    double f = 1.0, r = 0.0;
    while (i > 0) {
        f /= base;
        r += f * static_cast<double>(i % base);
        i /= base;
    }
    return r;
}

inline int nth_prime(int k) {
    int count = 0;
    for (int c = 2;; ++c) {
        bool prime = true;
        for (int d = 2; d * d <= c; ++d)
            if (c % d == 0) {
                prime = false;
                break;
            }
        if (prime && count++ == k) return c;
    }
}

} // namespace detail

// Halton points of the box; `skip` shifts the sequence.
inline Vec halton_point(const PiBox& box, unsigned long long index) {
    const int n = static_cast<int>(box.lo.size());
    Vec p(n);
    for (int j = 0; j < n; ++j)
        p(j) = box.lo(j) + (box.hi(j) - box.lo(j)) * detail::radical_inverse(index, detail::nth_prime(j));
    return p;
}

// Probe sampled prices, examine each new region once, stop at the first
// region that admits paradox-free prices. Probes run concurrently in
// batches; results are consumed in sample order.
inline WalkResult region_walk(const CoupledSystem& s, const PiBox& box, int budget, double revenue_floor = -INFINITY,
                              unsigned long long skip = 1) {
    if (budget < 1) throw Error("INVALID_RANGE", "budget must be at least 1");
    if (box.lo.size() != s.n_routes() || box.hi.size() != s.n_routes())
        throw Error("DIMENSION_MISMATCH", "price bounds length");
    WalkResult out;
    std::map<std::string, int> seen;
    const int batch = std::max(1u, std::thread::hardware_concurrency());
    int next = 0;
    while (next < budget * 20 && static_cast<int>(out.probes.size()) < budget) {
        const int nb = std::min(batch, budget * 20 - next);
        std::vector<std::future<std::optional<CriticalRegion>>> fut;
        for (int b = 0; b < nb; ++b) {
            Vec p = halton_point(box, skip + next + b);
            fut.push_back(std::async(std::launch::async, [&s, p]() -> std::optional<CriticalRegion> {
                try {
                    return critical_region(s, p);
                } catch (const Error&) {
                    return std::nullopt;
                }
            }));
        }
        std::vector<std::optional<CriticalRegion>> got;
        for (auto& f : fut) got.push_back(f.get());
        for (int b = 0; b < nb; ++b) {
            ++out.samples;
            if (!got[b]) {
                ++out.degenerate_samples;
                continue;
            }
            std::string key = got[b]->key();
            if (seen.count(key)) continue;
            seen[key] = next + b;
            RegionProbe pr;
            pr.region = *got[b];
            pr.sample = next + b;
            pr.result = eliminate_bp_static(s, pr.region, revenue_floor, box);
            out.probes.push_back(pr);
            if (pr.result.status == MitigationStatus::Found) {
                out.status = MitigationStatus::Found;
                return out;
            }
            if (static_cast<int>(out.probes.size()) >= budget) break;
        }
        next += nb;
    }
    return out;
}

} // namespace gue
