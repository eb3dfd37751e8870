#pragma once

// Coupled power–transportation system: the road side (links, routes), the
// grid side (shift factors, line limits, quadratic generation costs) and the
// charger incidence that turns route flows into bus loads.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gue/errors.hpp"
#include "gue/qp.hpp"

namespace gue {

struct TransportationNetwork {
    Vec alpha;                            // congestion slope per link
    Vec beta;                             // free-flow cost per link
    Mat link_route;                       // A^LR, m_T × n_R
    std::vector<int> zero_length_routes;  // routes allowed to have no links

    int n_links() const { return static_cast<int>(alpha.size()); }
    int n_routes() const { return static_cast<int>(link_route.cols()); }
};

struct PowerNetwork {
    Mat shift_factor;  // H, one row per directed flow constraint
    Vec f_cap;
    Vec q_diag;
    Vec mu;
    Vec base_load;
    std::vector<int> generator_mask;  // 1 where the bus may generate
    bool enforce_nonneg_gen = false;
    // Optional topology: the (from, to) bus pair each constraint row limits.
    std::vector<std::array<int, 2>> lines;

    int n_buses() const { return static_cast<int>(shift_factor.cols()); }
    int n_rows() const { return static_cast<int>(shift_factor.rows()); }
};

struct Coupling {
    Mat charger_route;  // A^CR, n_C × n_R
    Mat charger_bus;    // A^CB, n_C × n_P
    double rho = 1.0;
    double demand = 1.0;

    int n_chargers() const { return static_cast<int>(charger_route.rows()); }
};

struct OdPair {
    std::vector<int> routes;
    double demand = 0.0;
};

struct CoupledSystem {
    TransportationNetwork transport;
    PowerNetwork power;
    Coupling coupling;
    std::vector<OdPair> od_demands;  // empty: one pair over every route

    int n_routes() const { return transport.n_routes(); }
    int n_buses() const { return power.n_buses(); }
};

struct ValidationIssue {
    std::string code;
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationIssue> errors;
    std::vector<ValidationIssue> warnings;

    bool ok() const { return errors.empty(); }
    std::string summary() const {
        std::string s;
        for (auto& e : errors) s += (s.empty() ? "" : "; ") + e.code + " (" + e.message + ")";
        return s;
    }
};

namespace detail {

inline bool is_binary(double v) { return v == 0.0 || v == 1.0; }

inline bool all_finite(const Mat& m) { return m.size() == 0 || m.allFinite(); }

} // namespace detail

inline ValidationReport validate_system(const CoupledSystem& sys) {
    ValidationReport rep;
    auto err = [&](const std::string& c, const std::string& m) { rep.errors.push_back({c, m}); };
    auto warn = [&](const std::string& c, const std::string& m) { rep.warnings.push_back({c, m}); };
    const auto& T = sys.transport;
    const auto& P = sys.power;
    const auto& C = sys.coupling;
    const int mT = T.n_links(), nR = T.n_routes(), nP = P.n_buses(), mP = P.n_rows(), nC = C.n_chargers();

    if (T.beta.size() != mT || T.link_route.rows() != mT) err("DIMENSION_MISMATCH", "transport vectors and A^LR disagree");
    if (P.f_cap.size() != mP) err("DIMENSION_MISMATCH", "f_cap length differs from shift_factor rows");
    if (P.q_diag.size() != nP || P.mu.size() != nP || P.base_load.size() != nP)
        err("DIMENSION_MISMATCH", "bus vectors differ from shift_factor columns");
    if (static_cast<int>(P.generator_mask.size()) != nP) err("DIMENSION_MISMATCH", "generator_mask length");
    if (!P.lines.empty() && static_cast<int>(P.lines.size()) != mP) err("DIMENSION_MISMATCH", "lines length");
    if (C.charger_route.cols() != nR) err("DIMENSION_MISMATCH", "A^CR columns differ from route count");
    if (C.charger_bus.rows() != nC || C.charger_bus.cols() != nP) err("DIMENSION_MISMATCH", "A^CB shape");
    if (!rep.errors.empty()) return rep;

    if (!detail::all_finite(T.alpha) || !detail::all_finite(T.beta) || !detail::all_finite(P.shift_factor) ||
        !detail::all_finite(P.f_cap) || !detail::all_finite(P.q_diag) || !detail::all_finite(P.mu) ||
        !detail::all_finite(P.base_load) || !std::isfinite(C.rho) || !std::isfinite(C.demand))
        err("NONFINITE", "non-finite number in system");
    for (int l = 0; l < mT; ++l) {
        if (T.alpha(l) < 0) err("NEGATIVE_ALPHA", "alpha[" + std::to_string(l) + "] < 0");
        if (T.beta(l) < 0) err("NEGATIVE_BETA", "beta[" + std::to_string(l) + "] < 0");
    }
    bool lr_binary = true;
    for (int l = 0; l < mT; ++l)
        for (int r = 0; r < nR; ++r) lr_binary = lr_binary && detail::is_binary(T.link_route(l, r));
    if (!lr_binary) err("NONBINARY_INCIDENCE", "A^LR entries must be 0 or 1");
    for (int r = 0; r < nR; ++r) {
        bool declared = std::find(T.zero_length_routes.begin(), T.zero_length_routes.end(), r) != T.zero_length_routes.end();
        if (mT == 0 || T.link_route.col(r).sum() == 0.0) {
            if (!declared) err("EMPTY_ROUTE", "route " + std::to_string(r) + " has no links");
        }
    }
    for (int r : T.zero_length_routes)
        if (r < 0 || r >= nR) err("DIMENSION_MISMATCH", "zero_length_routes index out of range");
    for (int l = 0; l < mP; ++l)
        if (!(P.f_cap(l) > 0)) err("NONPOSITIVE_CAPACITY", "f_cap[" + std::to_string(l) + "] <= 0");
    for (int i = 0; i < nP; ++i) {
        if (P.q_diag(i) < 0) err("NEGATIVE_Q", "q_diag[" + std::to_string(i) + "] < 0");
        if (P.base_load(i) < 0) err("NEGATIVE_BASE_LOAD", "base_load[" + std::to_string(i) + "] < 0");
        if (P.generator_mask[i] != 0 && P.generator_mask[i] != 1) err("NONBINARY_INCIDENCE", "generator_mask entries must be 0 or 1");
    }
    for (auto& ln : P.lines)
        if (ln[0] < 0 || ln[0] >= nP || ln[1] < 0 || ln[1] >= nP || ln[0] == ln[1])
            err("BAD_LINE", "line endpoints out of range");
    for (int r = 0; r < nR; ++r) {
        int ones = 0;
        for (int c = 0; c < nC; ++c) {
            if (!detail::is_binary(C.charger_route(c, r))) err("NONBINARY_INCIDENCE", "A^CR entries must be 0 or 1");
            ones += C.charger_route(c, r) == 1.0;
        }
        if (ones != 1) err("CHARGER_MULTIPLICITY", "route " + std::to_string(r) + " uses " + std::to_string(ones) + " chargers");
    }
    for (int c = 0; c < nC; ++c) {
        int ones = 0;
        for (int i = 0; i < nP; ++i) {
            if (!detail::is_binary(C.charger_bus(c, i))) err("NONBINARY_INCIDENCE", "A^CB entries must be 0 or 1");
            ones += C.charger_bus(c, i) == 1.0;
        }
        if (ones != 1) err("CHARGER_BUS", "charger " + std::to_string(c) + " attaches to " + std::to_string(ones) + " buses");
    }
    if (!(C.rho > 0)) err("NONPOSITIVE_RHO", "rho must be positive");
    if (C.demand < 0) err("NEGATIVE_DEMAND", "demand must be nonnegative");
    if (!sys.od_demands.empty()) {
        std::vector<int> seen(nR, 0);
        for (auto& od : sys.od_demands) {
            if (od.demand < 0) err("NEGATIVE_DEMAND", "O-D demand must be nonnegative");
            for (int r : od.routes) {
                if (r < 0 || r >= nR) err("OD_PARTITION", "route index out of range");
                else ++seen[r];
            }
        }
        for (int r = 0; r < nR; ++r)
            if (seen[r] != 1) err("OD_PARTITION", "route " + std::to_string(r) + " is not in exactly one O-D pair");
    }
    for (int l = 0; l < mT; ++l)
        if (T.alpha(l) == 0 && T.link_route.row(l).sum() > 0) {
            warn("ZERO_ALPHA", "link " + std::to_string(l) + " has zero congestion slope");
            break;
        }
    for (int i = 0; i < nP; ++i)
        if (P.generator_mask[i] && P.q_diag(i) == 0) {
            warn("ZERO_Q", "bus " + std::to_string(i) + " generates at zero quadratic cost");
            break;
        }
    return rep;
}

inline void require_valid(const CoupledSystem& sys) {
    auto rep = validate_system(sys);
    if (!rep.ok()) throw Error("VALIDATION_ERROR", rep.summary());
}

// ---- derived matrices --------------------------------------------------

// Ã = (A^LR)ᵀ diag(α) A^LR
inline Mat route_alpha(const CoupledSystem& s) {
    const auto& A = s.transport.link_route;
    return A.transpose() * s.transport.alpha.asDiagonal() * A;
}

// β̃ = (A^LR)ᵀ β
inline Vec route_beta(const CoupledSystem& s) { return s.transport.link_route.transpose() * s.transport.beta; }

// B = (A^CB)ᵀ A^CR, bus × route
inline Mat bus_route(const CoupledSystem& s) { return s.coupling.charger_bus.transpose() * s.coupling.charger_route; }

inline std::vector<int> route_bus_index(const CoupledSystem& s) {
    Mat B = bus_route(s);
    std::vector<int> out(s.n_routes(), -1);
    for (int r = 0; r < s.n_routes(); ++r)
        for (int i = 0; i < s.n_buses(); ++i)
            if (B(i, r) != 0.0) out[r] = i;
    return out;
}

inline std::vector<OdPair> od_groups(const CoupledSystem& s) {
    if (!s.od_demands.empty()) return s.od_demands;
    OdPair od;
    od.demand = s.coupling.demand;
    for (int r = 0; r < s.n_routes(); ++r) od.routes.push_back(r);
    return {od};
}

inline double total_demand(const CoupledSystem& s) {
    double t = 0;
    for (auto& od : od_groups(s)) t += od.demand;
    return t;
}

inline Vec charging_load(const CoupledSystem& s, const Vec& x, bool include_base = false) {
    if (x.size() != s.n_routes()) throw Error("DIMENSION_MISMATCH", "x length differs from route count");
    Vec d = s.coupling.rho * (bus_route(s) * x);
    if (include_base) d += s.power.base_load;
    return d;
}

// π(λ) = ρ (A^CR)ᵀ A^CB λ
inline Vec route_prices(const CoupledSystem& s, const Vec& lambda) {
    if (lambda.size() != s.n_buses()) throw Error("DIMENSION_MISMATCH", "lambda length differs from bus count");
    return s.coupling.rho * (bus_route(s).transpose() * lambda);
}

inline Vec travel_cost(const CoupledSystem& s, const Vec& x) { return route_alpha(s) * x + route_beta(s); }

// Row that limits the same physical line in the opposite direction, if any.
inline int twin_row(const PowerNetwork& p, int row) {
    for (int j = 0; j < p.n_rows(); ++j) {
        if (j == row) continue;
        if (!p.lines.empty()) {
            if (p.lines[j][0] == p.lines[row][1] && p.lines[j][1] == p.lines[row][0]) return j;
        } else if ((p.shift_factor.row(j) + p.shift_factor.row(row)).cwiseAbs().maxCoeff() == 0.0) {
            return j;
        }
    }
    return -1;
}

// Lowest-index representative of each physical line.
inline std::vector<int> canonical_rows(const PowerNetwork& p) {
    std::vector<int> out;
    for (int l = 0; l < p.n_rows(); ++l) {
        int t = twin_row(p, l);
        if (t < 0 || t > l) out.push_back(l);
    }
    return out;
}

// ---- built-in systems --------------------------------------------------

namespace detail {

inline Mat incidence_from_paths(int n_links, const std::vector<std::vector<int>>& paths) {
    Mat A = Mat::Zero(n_links, static_cast<int>(paths.size()));
    for (int r = 0; r < static_cast<int>(paths.size()); ++r)
        for (int l : paths[r]) A(l, r) = 1.0;
    return A;
}

inline Mat one_hot_rows(const std::vector<int>& cols, int n) {
    Mat M = Mat::Zero(static_cast<int>(cols.size()), n);
    for (int i = 0; i < static_cast<int>(cols.size()); ++i) M(i, cols[i]) = 1.0;
    return M;
}

// DC shift factors with bus `slack` as the angle reference.
inline Mat dc_ptdf(int n_bus, const std::vector<std::array<int, 2>>& branches, const std::vector<double>& x, int slack) {
    const int nb = static_cast<int>(branches.size());
    Mat Bbus = Mat::Zero(n_bus, n_bus);
    Mat Bf = Mat::Zero(nb, n_bus);
    for (int k = 0; k < nb; ++k) {
        int a = branches[k][0], b = branches[k][1];
        double y = 1.0 / x[k];
        Bbus(a, a) += y;
        Bbus(b, b) += y;
        Bbus(a, b) -= y;
        Bbus(b, a) -= y;
        Bf(k, a) += y;
        Bf(k, b) -= y;
    }
    std::vector<int> keep;
    for (int i = 0; i < n_bus; ++i)
        if (i != slack) keep.push_back(i);
    Mat Br(n_bus - 1, n_bus - 1);
    for (int i = 0; i < n_bus - 1; ++i)
        for (int j = 0; j < n_bus - 1; ++j) Br(i, j) = Bbus(keep[i], keep[j]);
    Mat Binv = Br.inverse();
    Mat H = Mat::Zero(nb, n_bus);
    for (int k = 0; k < nb; ++k)
        for (int j = 0; j < n_bus - 1; ++j) {
            double v = 0;
            for (int i = 0; i < n_bus - 1; ++i) v += Bf(k, keep[i]) * Binv(i, j);
            H(k, keep[j]) = v;
        }
    return H;
}

inline PowerNetwork both_directions(const Mat& Hhat, const Vec& fbar, const std::vector<std::array<int, 2>>& lines) {
    PowerNetwork p;
    const int m = static_cast<int>(Hhat.rows());
    p.shift_factor = Mat(2 * m, Hhat.cols());
    p.shift_factor << Hhat, -Hhat;
    p.f_cap = Vec(2 * m);
    p.f_cap << fbar, fbar;
    for (auto& l : lines) p.lines.push_back(l);
    for (auto& l : lines) p.lines.push_back({l[1], l[0]});
    return p;
}

} // namespace detail

inline CoupledSystem two_route_two_bus() {
    CoupledSystem s;
    s.transport.alpha = Vec(2);
    s.transport.alpha << 100.0, 1.0;
    s.transport.beta = Vec::Zero(2);
    s.transport.link_route = Mat::Identity(2, 2);
    auto& p = s.power;
    p.shift_factor = Mat(1, 2);
    p.shift_factor << 1.0, 0.0;
    p.f_cap = Vec::Constant(1, 0.2);
    p.q_diag = Vec::Ones(2);
    p.mu = Vec::Zero(2);
    p.base_load = Vec::Zero(2);
    p.generator_mask = {1, 1};
    p.lines = {{0, 1}};
    s.coupling.charger_route = Mat::Identity(2, 2);
    s.coupling.charger_bus = Mat::Identity(2, 2);
    s.coupling.rho = 4.0;
    s.coupling.demand = 1.0;
    return s;
}

inline Mat three_bus_hhat() {
    Mat H(3, 3);
    H << 0, -0.8, -0.6, 0, 0.2, 0.4, 0, -0.2, 0.6;
    return H;
}

inline CoupledSystem two_route_three_bus() {
    CoupledSystem s;
    s.transport.alpha = Vec(2);
    s.transport.alpha << 1.0, 10.0;
    s.transport.beta = Vec::Zero(2);
    s.transport.link_route = Mat::Identity(2, 2);
    Vec fbar(3);
    fbar << 0.1, 0.3, 0.1;
    s.power = detail::both_directions(three_bus_hhat(), fbar, {{{0, 1}}, {{2, 0}}, {{2, 1}}});
    s.power.q_diag = Vec(3);
    s.power.q_diag << 2.0, 1.0, 1.0;
    s.power.mu = Vec::Zero(3);
    s.power.base_load = Vec::Zero(3);
    s.power.generator_mask = {1, 1, 1};
    s.coupling.charger_route = Mat::Identity(2, 2);
    s.coupling.charger_bus = detail::one_hot_rows({0, 1}, 3);
    s.coupling.rho = 6.0;
    s.coupling.demand = 1.0;
    return s;
}

inline CoupledSystem wheatstone_two_bus() {
    CoupledSystem s;
    s.transport.alpha = Vec(6);
    s.transport.alpha << 1, 2, 2, 2, 1, 1;
    s.transport.beta = Vec::Zero(6);
    s.transport.link_route = detail::incidence_from_paths(6, {{0, 1}, {0, 2, 4}, {3, 4}, {5}});
    Mat Hhat(1, 2);
    Hhat << 1.0, 0.0;
    s.power = detail::both_directions(Hhat, Vec::Constant(1, 0.01), {{{0, 1}}});
    s.power.q_diag = Vec(2);
    s.power.q_diag << 2.0, 1.0;
    s.power.mu = Vec::Zero(2);
    s.power.base_load = Vec::Zero(2);
    s.power.generator_mask = {1, 1};
    s.coupling.charger_route = Mat(2, 4);
    s.coupling.charger_route << 1, 1, 1, 0, 0, 0, 0, 1;
    s.coupling.charger_bus = Mat::Identity(2, 2);
    s.coupling.rho = 1.0;
    s.coupling.demand = 1.0;
    return s;
}

// Road nodes of the bay-area network.
enum BayNode { Davis, Winters, Fairfield, Fremont, MtnView, SanJose };

// Links 0..6 in the order of the parameter table; link 7 (Fremont→Mtn.View)
// exists only in the shortcut variant.
inline const std::vector<std::array<int, 2>>& bay_area_links() {
    static const std::vector<std::array<int, 2>> L = {{Davis, Winters},   {Winters, Fairfield}, {Davis, Fairfield},
                                                      {Fairfield, MtnView}, {Fairfield, Fremont}, {MtnView, SanJose},
                                                      {Fremont, SanJose},  {Fremont, MtnView}};
    return L;
}

inline const std::vector<std::array<int, 2>>& ieee9_branches() {
    static const std::vector<std::array<int, 2>> B = {{0, 3}, {3, 4}, {4, 5}, {2, 5}, {5, 6},
                                                      {6, 7}, {7, 1}, {7, 8}, {8, 3}};
    return B;
}

// Chargers: Winters, Fairfield, Mtn.View, Fremont on buses 4, 5, 6, 8 (1-based).
inline CoupledSystem bay_area_ieee9(bool with_shortcut = false) {
    CoupledSystem s;
    const int n_links = with_shortcut ? 8 : 7;
    s.transport.alpha = Vec::Zero(n_links);
    s.transport.beta = Vec::Zero(n_links);
    s.transport.alpha.head(7) << 3.2e-3, 3.2e-3, 3.2e-3, 6.4e-3, 9.6e-3, 6.4e-3, 9.6e-3;
    s.transport.beta.head(7) << 1.6, 20.8, 22.4, 19.2, 12.8, 12.8, 19.2;
    if (with_shortcut) s.transport.alpha(7) = 1e-3;
    // Paths D→S, each paired with every charger town it passes.
    const std::vector<int> p_wfms = {0, 1, 3, 5}, p_wffs = {0, 1, 4, 6}, p_fms = {2, 3, 5}, p_ffs = {2, 4, 6};
    enum { cW, cF, cM, cFr };
    std::vector<std::vector<int>> paths = {p_wfms, p_wfms, p_wfms, p_wffs, p_wffs, p_wffs, p_fms, p_fms, p_ffs, p_ffs};
    std::vector<int> charger = {cW, cF, cM, cW, cF, cFr, cF, cM, cF, cFr};
    if (with_shortcut) {
        paths.push_back({0, 1, 4, 7, 5});
        charger.push_back(cW);
    }
    s.transport.link_route = detail::incidence_from_paths(n_links, paths);
    const int nR = static_cast<int>(paths.size());
    s.coupling.charger_route = Mat::Zero(4, nR);
    for (int r = 0; r < nR; ++r) s.coupling.charger_route(charger[r], r) = 1.0;
    s.coupling.charger_bus = detail::one_hot_rows({3, 4, 5, 7}, 9);
    s.coupling.rho = 0.02;
    s.coupling.demand = 15000.0;

    const std::vector<double> x = {0.0576, 0.092, 0.17, 0.0586, 0.1008, 0.072, 0.0625, 0.161, 0.085};
    Mat H = detail::dc_ptdf(9, ieee9_branches(), x, 0);
    Vec fbar(9);
    fbar << 250, 250, 25, 300, 10, 250, 250, 250, 250;
    s.power = detail::both_directions(H, fbar, ieee9_branches());
    s.power.q_diag = Vec::Zero(9);
    s.power.q_diag.head(3) << 0.11, 0.085, 0.1225;
    s.power.mu = Vec::Zero(9);
    s.power.mu.head(3) << 5, 1.2, 1;
    s.power.base_load = Vec(9);
    s.power.base_load << 0, 480, 0, 10, 160, 80, 0, 40, 120;
    s.power.generator_mask = {1, 1, 1, 0, 0, 0, 0, 0, 0};
    s.power.enforce_nonneg_gen = true;
    return s;
}

inline std::vector<std::string> builtin_case_names() {
    return {"two_route_two_bus", "two_route_three_bus", "wheatstone_two_bus", "bay_area_ieee9"};
}

inline CoupledSystem builtin_case(const std::string& name) {
    if (name == "two_route_two_bus") return two_route_two_bus();
    if (name == "two_route_three_bus") return two_route_three_bus();
    if (name == "wheatstone_two_bus") return wheatstone_two_bus();
    if (name == "bay_area_ieee9") return bay_area_ieee9();
    throw Error("UNKNOWN_CASE", "no built-in case named '" + name + "'");
}

} // namespace gue
