#pragma once

// Economic dispatch, transportation UE under given route prices, and the
// joint convex program whose optimum is the generalized user equilibrium.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gue/model.hpp"
#include "gue/qp.hpp"

namespace gue {

struct DispatchSolution {
    Vec g;
    Vec p;
    Vec lambda;  // LMPs: multipliers of the nodal balance rows
    double gamma = 0.0;
    Vec eta;  // line-limit multipliers, one per shift-factor row
    double cost = 0.0;
    std::vector<int> congested_lines;
};

struct BindingPattern {
    std::vector<int> zero_routes;
    std::vector<int> congested_lines;
    bool degenerate = false;

    bool operator==(const BindingPattern& o) const {
        return zero_routes == o.zero_routes && congested_lines == o.congested_lines;
    }
    bool operator!=(const BindingPattern& o) const { return !(*this == o); }
};

// Layout of the joint program in z = [x; g; p].
struct JointLayout {
    int nR = 0, nP = 0, mP = 0;
    int n_od = 0, n_mask = 0;
    std::vector<int> masked_buses;  // rows g_i = 0
    std::vector<int> nonneg_buses;  // rows −g_i ≤ 0
    int x0() const { return 0; }
    int g0() const { return nR; }
    int p0() const { return nR + nP; }
    // equality rows
    int bal0() const { return 0; }
    int sum_row() const { return nP; }
    int od0() const { return nP + 1; }
    int mask0() const { return nP + 1 + n_od; }
    // inequality rows
    int line0() const { return 0; }
    int xlb0() const { return mP; }
    int glb0() const { return mP + nR; }
};

struct JointQp {
    QpProblem problem;
    JointLayout layout;
};

struct GueSolution {
    Vec x;
    DispatchSolution dispatch;
    Vec nu;  // common equilibrium cost, one entry per O-D pair
    Vec xi;  // route-bound multipliers
    Vec route_cost;
    Vec policy_price;  // route charge that entered the route cost
    BindingPattern binding;
    std::vector<std::string> warnings;
    // Joint program and its optimum, kept for sensitivity analysis.
    JointQp joint;
    QpSolution joint_solution;
    bool has_joint = false;
};

struct UeResult {
    Vec x;
    Vec nu;
    Vec xi;
    QpProblem problem;
    QpSolution solution;
};

constexpr double kCostTolRel = 1e-6;

// ---- economic dispatch ---------------------------------------------------

inline JointLayout dispatch_layout(const PowerNetwork& pw, int nR, int n_od) {
    JointLayout L;
    L.nR = nR;
    L.nP = pw.n_buses();
    L.mP = pw.n_rows();
    L.n_od = n_od;
    for (int i = 0; i < L.nP; ++i) {
        if (!pw.generator_mask[i]) L.masked_buses.push_back(i);
        else if (pw.enforce_nonneg_gen) L.nonneg_buses.push_back(i);
    }
    L.n_mask = static_cast<int>(L.masked_buses.size());
    return L;
}

// Joint program over [x; g; p]. Hx and qx give the traffic part of the
// objective; the generation part is always ½gᵀQg + μᵀg.
inline JointQp build_joint_qp(const CoupledSystem& s, const Mat& Hx, const Vec& qx) {
    const auto& pw = s.power;
    auto ods = od_groups(s);
    JointQp J;
    J.layout = dispatch_layout(pw, s.n_routes(), static_cast<int>(ods.size()));
    const auto& L = J.layout;
    const int n = L.nR + 2 * L.nP;
    auto& pr = J.problem;
    pr.P = Mat::Zero(n, n);
    pr.q = Vec::Zero(n);
    pr.P.topLeftCorner(L.nR, L.nR) = Hx;
    pr.q.head(L.nR) = qx;
    pr.P.block(L.g0(), L.g0(), L.nP, L.nP) = pw.q_diag.asDiagonal();
    pr.q.segment(L.g0(), L.nP) = pw.mu;

    const int neq = L.nP + 1 + L.n_od + L.n_mask;
    pr.A_eq = Mat::Zero(neq, n);
    pr.b_eq = Vec::Zero(neq);
    Mat B = bus_route(s);
    for (int i = 0; i < L.nP; ++i) {
        pr.A_eq(i, L.p0() + i) = 1.0;
        pr.A_eq(i, L.g0() + i) = -1.0;
        pr.A_eq.block(i, 0, 1, L.nR) = s.coupling.rho * B.row(i);
        pr.b_eq(i) = -pw.base_load(i);
    }
    pr.A_eq.block(L.sum_row(), L.p0(), 1, L.nP).setOnes();
    for (int k = 0; k < L.n_od; ++k) {
        for (int r : ods[k].routes) pr.A_eq(L.od0() + k, r) = 1.0;
        pr.b_eq(L.od0() + k) = ods[k].demand;
    }
    for (int j = 0; j < L.n_mask; ++j) pr.A_eq(L.mask0() + j, L.g0() + L.masked_buses[j]) = 1.0;

    const int nin = L.mP + L.nR + static_cast<int>(L.nonneg_buses.size());
    pr.A_in = Mat::Zero(nin, n);
    pr.b_in = Vec::Zero(nin);
    pr.A_in.block(0, L.p0(), L.mP, L.nP) = pw.shift_factor;
    pr.b_in.head(L.mP) = pw.f_cap;
    for (int r = 0; r < L.nR; ++r) pr.A_in(L.xlb0() + r, r) = -1.0;
    for (int j = 0; j < static_cast<int>(L.nonneg_buses.size()); ++j)
        pr.A_in(L.glb0() + j, L.g0() + L.nonneg_buses[j]) = -1.0;
    return J;
}

// Dispatch-only program over [g; p] for a fixed total load d.
inline JointQp build_dispatch_qp(const PowerNetwork& pw, const Vec& d) {
    JointQp J;
    J.layout = dispatch_layout(pw, 0, 0);
    const auto& L = J.layout;
    const int n = 2 * L.nP;
    auto& pr = J.problem;
    pr.P = Mat::Zero(n, n);
    pr.P.topLeftCorner(L.nP, L.nP) = pw.q_diag.asDiagonal();
    pr.q = Vec::Zero(n);
    pr.q.head(L.nP) = pw.mu;
    const int neq = L.nP + 1 + L.n_mask;
    pr.A_eq = Mat::Zero(neq, n);
    pr.b_eq = Vec::Zero(neq);
    for (int i = 0; i < L.nP; ++i) {
        pr.A_eq(i, L.p0() + i) = 1.0;
        pr.A_eq(i, L.g0() + i) = -1.0;
        pr.b_eq(i) = -d(i);
    }
    pr.A_eq.block(L.sum_row(), L.p0(), 1, L.nP).setOnes();
    for (int j = 0; j < L.n_mask; ++j) pr.A_eq(L.mask0() + j, L.masked_buses[j]) = 1.0;
    const int nin = L.mP + static_cast<int>(L.nonneg_buses.size());
    pr.A_in = Mat::Zero(nin, n);
    pr.b_in = Vec::Zero(nin);
    pr.A_in.block(0, L.p0(), L.mP, L.nP) = pw.shift_factor;
    pr.b_in.head(L.mP) = pw.f_cap;
    for (int j = 0; j < static_cast<int>(L.nonneg_buses.size()); ++j) pr.A_in(L.mP + j, L.nonneg_buses[j]) = -1.0;
    return J;
}

inline DispatchSolution unpack_dispatch(const PowerNetwork& pw, const JointQp& J, const QpSolution& s) {
    const auto& L = J.layout;
    DispatchSolution D;
    D.g = s.z.segment(L.g0(), L.nP);
    D.p = s.z.segment(L.p0(), L.nP);
    D.lambda = s.lambda_eq.segment(L.bal0(), L.nP);
    D.gamma = -s.lambda_eq(L.sum_row());
    D.eta = s.mu_in.segment(L.line0(), L.mP);
    D.cost = 0.5 * D.g.dot(pw.q_diag.cwiseProduct(D.g)) + pw.mu.dot(D.g);
    Vec flow = pw.shift_factor * D.p;
    for (int l = 0; l < L.mP; ++l)
        if (is_binding(pw.f_cap(l) - flow(l), pw.f_cap(l))) D.congested_lines.push_back(l);
    return D;
}

inline DispatchSolution economic_dispatch(const PowerNetwork& pw, const Vec& d, double tol = kDefaultQpTol) {
    if (d.size() != pw.n_buses()) throw Error("DIMENSION_MISMATCH", "load vector length differs from bus count");
    auto J = build_dispatch_qp(pw, d);
    auto s = solve_qp(J.problem, tol);
    if (s.status == QpStatus::Infeasible) throw Error("INFEASIBLE_DISPATCH", "load cannot be served within line limits");
    if (s.status != QpStatus::Optimal) throw Error("SOLVER_FAILURE", std::string("dispatch QP ended ") + to_string(s.status));
    return unpack_dispatch(pw, J, s);
}

// ---- transportation UE ---------------------------------------------------

// min ½xᵀHx + qᵀx  s.t. 1ᵀx = N per O-D pair, x ≥ 0.
inline UeResult solve_route_qp(const Mat& H, const Vec& q, const std::vector<OdPair>& ods, double tol = kDefaultQpTol) {
    const int nR = static_cast<int>(q.size());
    UeResult u;
    auto& pr = u.problem;
    pr.P = H;
    pr.q = q;
    pr.A_eq = Mat::Zero(static_cast<int>(ods.size()), nR);
    pr.b_eq = Vec::Zero(static_cast<int>(ods.size()));
    for (int k = 0; k < static_cast<int>(ods.size()); ++k) {
        for (int r : ods[k].routes) pr.A_eq(k, r) = 1.0;
        pr.b_eq(k) = ods[k].demand;
    }
    pr.A_in = -Mat::Identity(nR, nR);
    pr.b_in = Vec::Zero(nR);
    u.solution = solve_qp(pr, tol);
    if (u.solution.status != QpStatus::Optimal)
        throw Error("SOLVER_FAILURE", std::string("route QP ended ") + to_string(u.solution.status));
    u.x = u.solution.z;
    u.nu = -u.solution.lambda_eq;
    u.xi = u.solution.mu_in;
    return u;
}

inline UeResult transport_ue(const CoupledSystem& s, const Vec& prices, double tol = kDefaultQpTol) {
    if (prices.size() != s.n_routes()) throw Error("DIMENSION_MISMATCH", "price vector length differs from route count");
    if (!prices.allFinite()) throw Error("VALIDATION_ERROR", "route prices must be finite");
    return solve_route_qp(route_alpha(s), route_beta(s) + prices, od_groups(s), tol);
}

inline UeResult transport_ue(const TransportationNetwork& t, const Vec& prices, double demand, double tol = kDefaultQpTol) {
    const Mat& A = t.link_route;
    OdPair od;
    od.demand = demand;
    for (int r = 0; r < t.n_routes(); ++r) od.routes.push_back(r);
    return solve_route_qp(A.transpose() * t.alpha.asDiagonal() * A, A.transpose() * t.beta + prices, {od}, tol);
}

// ---- GUE -----------------------------------------------------------------

inline BindingPattern congestion_pattern(const CoupledSystem& s, const GueSolution& sol) {
    BindingPattern b;
    const auto& pw = s.power;
    Vec flow = pw.shift_factor * sol.dispatch.p;
    const double lscale = 1.0 + (sol.dispatch.lambda.size() ? sol.dispatch.lambda.lpNorm<Eigen::Infinity>() : 0.0);
    const double cscale = 1.0 + (sol.route_cost.size() ? sol.route_cost.lpNorm<Eigen::Infinity>() : 0.0);
    for (int l = 0; l < pw.n_rows(); ++l) {
        bool bind = is_binding(pw.f_cap(l) - flow(l), pw.f_cap(l));
        if (bind) b.congested_lines.push_back(l);
        if (bind && sol.dispatch.eta(l) <= 1e-8 * lscale) b.degenerate = true;
    }
    for (int r = 0; r < s.n_routes(); ++r) {
        bool zero = is_binding(sol.x(r), 0.0);
        if (zero) b.zero_routes.push_back(r);
        if (zero && sol.xi(r) <= 1e-8 * cscale) b.degenerate = true;
    }
    return b;
}

namespace detail {

inline double cost_tol(const Vec& c) { return kCostTolRel * (1.0 + (c.size() ? c.cwiseAbs().maxCoeff() : 0.0)); }

// Uniform cost among active routes of each O-D pair.
inline bool uniform_cost_holds(const CoupledSystem& s, const Vec& x, const Vec& cost) {
    const double tol = cost_tol(cost);
    for (auto& od : od_groups(s)) {
        double mn = 1e300;
        for (int r : od.routes) mn = std::min(mn, cost(r));
        for (int r : od.routes)
            if (x(r) > kBindingTol * (1.0 + od.demand) && cost(r) - mn > tol) return false;
    }
    return true;
}

inline bool traffic_unique(const CoupledSystem& s) {
    // Ã restricted to the directions that keep every O-D total fixed.
    auto ods = od_groups(s);
    const int nR = s.n_routes();
    Mat E = Mat::Zero(static_cast<int>(ods.size()), nR);
    for (int k = 0; k < static_cast<int>(ods.size()); ++k)
        for (int r : ods[k].routes) E(k, r) = 1.0;
    Eigen::FullPivLU<Mat> lu(E);
    Mat Z = lu.kernel();
    if (Z.cols() == 0 || (Z.cols() == 1 && Z.norm() == 0)) return true;
    Mat H = Z.transpose() * route_alpha(s) * Z;
    Eigen::SelfAdjointEigenSolver<Mat> es(H);
    return es.eigenvalues().minCoeff() > 1e-12 * std::max(1.0, H.cwiseAbs().maxCoeff());
}

} // namespace detail

// Fill dispatch, route costs, duals and pattern for flows x under route
// charges `price`. Dispatch is re-solved at the induced load.
inline GueSolution finish_solution(const CoupledSystem& s, const Vec& x, const Vec& nu, const Vec& xi,
                                   const Vec& travel_and_price, double tol) {
    GueSolution g;
    g.x = x;
    g.dispatch = economic_dispatch(s.power, charging_load(s, x, true), tol);
    g.nu = nu;
    g.xi = xi;
    g.route_cost = travel_and_price;
    g.binding = congestion_pattern(s, g);
    if (g.binding.degenerate) g.warnings.push_back("DEGENERATE");
    return g;
}

inline bool has_warning(const GueSolution& g, const std::string& code) {
    return std::find(g.warnings.begin(), g.warnings.end(), code) != g.warnings.end();
}

// Solve a joint program over [x; g; p] and unpack it. Route costs are left
// to the caller; the dispatch multipliers are the joint ones whenever the
// dispatch at x admits several.
inline GueSolution solve_joint(const CoupledSystem& s, const JointQp& J, double tol = kDefaultQpTol) {
    auto qs = solve_qp(J.problem, tol);
    if (qs.status == QpStatus::Infeasible) throw Error("INFEASIBLE_DISPATCH", "no dispatch serves the coupled load");
    if (qs.status != QpStatus::Optimal) throw Error("SOLVER_FAILURE", std::string("joint QP ended ") + to_string(qs.status));
    const auto& L = J.layout;
    Vec x = qs.z.head(L.nR).cwiseMax(0.0);
    Vec nu = -qs.lambda_eq.segment(L.od0(), L.n_od);
    Vec xi = qs.mu_in.segment(L.xlb0(), L.nR);
    Vec lam_joint = qs.lambda_eq.segment(L.bal0(), L.nP);

    GueSolution g = finish_solution(s, x, nu, xi, Vec::Zero(L.nR), tol);
    g.policy_price = Vec::Zero(L.nR);
    g.joint = J;
    g.joint_solution = qs;
    g.has_joint = true;
    const double lam_scale = 1.0 + lam_joint.lpNorm<Eigen::Infinity>();
    if ((lam_joint - g.dispatch.lambda).lpNorm<Eigen::Infinity>() > 1e-6 * lam_scale) {
        g.dispatch.lambda = lam_joint;
        g.dispatch.gamma = -qs.lambda_eq(L.sum_row());
        g.dispatch.eta = qs.mu_in.segment(L.line0(), L.mP);
        g.warnings.push_back("NONUNIQUE_WARNING");
    }
    return g;
}

inline GueSolution solve_gue(const CoupledSystem& s, double tol = kDefaultQpTol) {
    require_valid(s);
    auto J = build_joint_qp(s, route_alpha(s), route_beta(s));
    GueSolution g = solve_joint(s, J, tol);
    g.route_cost = travel_cost(s, g.x) + route_prices(s, g.dispatch.lambda);
    g.binding = congestion_pattern(s, g);
    if (g.binding.degenerate && !has_warning(g, "DEGENERATE")) g.warnings.push_back("DEGENERATE");
    if (!detail::uniform_cost_holds(s, g.x, g.route_cost)) g.warnings.push_back("FIXED_POINT_VIOLATION");
    bool q_ok = true;
    for (int i = 0; i < s.n_buses(); ++i)
        if (s.power.generator_mask[i] && s.power.q_diag(i) <= 0) q_ok = false;
    if ((!q_ok || !detail::traffic_unique(s)) && !has_warning(g, "NONUNIQUE_WARNING"))
        g.warnings.push_back("NONUNIQUE_WARNING");
    return g;
}

inline GueSolution solve_gue_multi_od(CoupledSystem s, const std::vector<OdPair>& ods, double tol = kDefaultQpTol) {
    s.od_demands = ods;
    return solve_gue(s, tol);
}

} // namespace gue
