#pragma once

// Social costs, their derivatives with respect to road and line capacities,
// Braess-paradox verdicts, and parameter sweeps.

#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gue/equilibrium.hpp"
#include "gue/model.hpp"

namespace gue {

struct SocialCosts {
    double phi_t = 0.0;
    double phi_p = 0.0;
    double phi_c = 0.0;
};

inline SocialCosts social_costs(const CoupledSystem& s, const GueSolution& g) {
    SocialCosts c;
    c.phi_t = g.x.dot(travel_cost(s, g.x));
    c.phi_p = g.dispatch.cost;
    c.phi_c = c.phi_t + c.phi_p;
    return c;
}

enum class ParamKind { Alpha, Fbar, Rho, QScale };

struct Parameter {
    ParamKind kind = ParamKind::Alpha;
    int index = 0;

    static Parameter alpha(int l) { return {ParamKind::Alpha, l}; }
    static Parameter fbar(int l) { return {ParamKind::Fbar, l}; }

    std::string label() const {
        switch (kind) {
        case ParamKind::Alpha: return "alpha:" + std::to_string(index);
        case ParamKind::Fbar: return "fbar:" + std::to_string(index);
        case ParamKind::Rho: return "rho";
        case ParamKind::QScale: return "qscale";
        }
        return "?";
    }

    static Parameter parse(const std::string& text) {
        auto colon = text.find(':');
        std::string head = text.substr(0, colon);
        if (colon == std::string::npos) {
            if (head == "rho") return {ParamKind::Rho, 0};
            if (head == "qscale") return {ParamKind::QScale, 0};
            throw Error("INVALID_PARAMETER", "unknown parameter '" + text + "'");
        }
        std::string tail = text.substr(colon + 1);
        int idx = 0;
        try {
            size_t used = 0;
            idx = std::stoi(tail, &used);
            if (used != tail.size()) throw std::invalid_argument(tail);
        } catch (const std::exception&) {
            throw Error("INVALID_PARAMETER", "bad index in '" + text + "'");
        }
        if (head == "alpha") return {ParamKind::Alpha, idx};
        if (head == "fbar") return {ParamKind::Fbar, idx};
        throw Error("INVALID_PARAMETER", "unknown parameter '" + text + "'");
    }
};

inline void check_parameter(const CoupledSystem& s, const Parameter& p) {
    if (p.kind == ParamKind::Alpha && (p.index < 0 || p.index >= s.transport.n_links()))
        throw Error("INVALID_PARAMETER", "link index out of range in " + p.label());
    if (p.kind == ParamKind::Fbar && (p.index < 0 || p.index >= s.power.n_rows()))
        throw Error("INVALID_PARAMETER", "line index out of range in " + p.label());
}

inline double get_param(const CoupledSystem& s, const Parameter& p) {
    check_parameter(s, p);
    switch (p.kind) {
    case ParamKind::Alpha: return s.transport.alpha(p.index);
    case ParamKind::Fbar: return s.power.f_cap(p.index);
    case ParamKind::Rho: return s.coupling.rho;
    case ParamKind::QScale: return 1.0;
    }
    return 0.0;
}

// A line capacity moves both directions of the same physical line; QScale
// multiplies the cost curvature of the given system.
inline CoupledSystem with_param(CoupledSystem s, const Parameter& p, double v) {
    check_parameter(s, p);
    switch (p.kind) {
    case ParamKind::Alpha: s.transport.alpha(p.index) = v; break;
    case ParamKind::Fbar: {
        s.power.f_cap(p.index) = v;
        int t = twin_row(s.power, p.index);
        if (t >= 0) s.power.f_cap(t) = v;
        break;
    }
    case ParamKind::Rho: s.coupling.rho = v; break;
    case ParamKind::QScale: s.power.q_diag *= v; break;
    }
    return s;
}

enum class Method { FD, KKT };

inline const char* to_string(Method m) { return m == Method::FD ? "fd" : "kkt"; }

struct SensitivityRow {
    Parameter parameter;
    double theta = 0.0;
    SocialCosts phi;
    double dphi_t = 0.0, dphi_p = 0.0, dphi_c = 0.0;
    Method method = Method::FD;
    bool at_region_boundary = false;
    double side_condition = 0.0;  // |cᵀ∂x/∂θ| on the KKT path
    std::string error;            // empty when the row is valid
};

enum class BpType { TT, TP, TC, PT, PP, PC };

inline const char* to_string(BpType t) {
    static const char* n[] = {"TT", "TP", "TC", "PT", "PP", "PC"};
    return n[static_cast<int>(t)];
}

struct BpReport {
    std::vector<SensitivityRow> rows;
    std::map<BpType, std::vector<std::string>> verdicts;
    std::vector<std::string> failures;

    bool has(BpType t) const {
        auto it = verdicts.find(t);
        return it != verdicts.end() && !it->second.empty();
    }
    bool has(BpType t, const std::string& param) const {
        auto it = verdicts.find(t);
        if (it == verdicts.end()) return false;
        return std::find(it->second.begin(), it->second.end(), param) != it->second.end();
    }
};

using GueSolver = std::function<GueSolution(const CoupledSystem&)>;

inline GueSolver default_solver(double tol = kDefaultQpTol) {
    return [tol](const CoupledSystem& s) { return solve_gue(s, tol); };
}

inline double default_fd_step(double theta) { return 1e-5 * (1.0 + std::abs(theta)); }

inline double verdict_tol(double phi) { return 1e-6 * (1.0 + std::abs(phi)); }

// BP types raised by one row, per the strict-sign definition.
inline std::vector<BpType> row_verdicts(const SensitivityRow& r) {
    std::vector<BpType> out;
    if (!r.error.empty() || r.at_region_boundary) return out;
    if (r.parameter.kind == ParamKind::Alpha) {
        if (r.dphi_t < -verdict_tol(r.phi.phi_t)) out.push_back(BpType::TT);
        if (r.dphi_p < -verdict_tol(r.phi.phi_p)) out.push_back(BpType::TP);
        if (r.dphi_c < -verdict_tol(r.phi.phi_c)) out.push_back(BpType::TC);
    } else if (r.parameter.kind == ParamKind::Fbar) {
        if (r.dphi_t > verdict_tol(r.phi.phi_t)) out.push_back(BpType::PT);
        if (r.dphi_p > verdict_tol(r.phi.phi_p)) out.push_back(BpType::PP);
        if (r.dphi_c > verdict_tol(r.phi.phi_c)) out.push_back(BpType::PC);
    }
    return out;
}

inline SensitivityRow derivative_fd(const CoupledSystem& s, const Parameter& p, double step = -1.0,
                                    const GueSolver& solver = default_solver()) {
    const double th = get_param(s, p);
    const double h = step > 0 ? step : default_fd_step(th);
    SensitivityRow r;
    r.parameter = p;
    r.theta = th;
    r.method = Method::FD;
    auto g0 = solver(s);
    r.phi = social_costs(s, g0);
    auto sp = with_param(s, p, th + h);
    auto sm = with_param(s, p, th - h);
    auto gp = solver(sp);
    auto gm = solver(sm);
    auto cp = social_costs(sp, gp), cm = social_costs(sm, gm);
    r.dphi_t = (cp.phi_t - cm.phi_t) / (2 * h);
    r.dphi_p = (cp.phi_p - cm.phi_p) / (2 * h);
    r.dphi_c = r.dphi_t + r.dphi_p;
    r.at_region_boundary = gp.binding != gm.binding;
    return r;
}

// Implicit-function derivative of the joint program with the binding
// pattern frozen.
inline SensitivityRow derivative_kkt(const CoupledSystem& s, const GueSolution& g, const Parameter& p) {
    check_parameter(s, p);
    if (!g.has_joint) throw Error("PRECONDITION", "solution does not carry the joint program");
    if (p.kind != ParamKind::Alpha && p.kind != ParamKind::Fbar)
        throw Error("INVALID_PARAMETER", "KKT derivatives cover alpha and fbar only");
    const auto& pr = g.joint.problem;
    const auto& L = g.joint.layout;
    const int n = pr.n();
    Mat dP = Mat::Zero(n, n);
    Vec dq = Vec::Zero(n), db_eq = Vec::Zero(pr.p()), db_in = Vec::Zero(pr.m());
    Vec a;
    if (p.kind == ParamKind::Alpha) {
        a = s.transport.link_route.row(p.index).transpose();
        dP.topLeftCorner(L.nR, L.nR) = a * a.transpose();
    } else {
        db_in(L.line0() + p.index) = 1.0;
        int t = twin_row(s.power, p.index);
        if (t >= 0) db_in(L.line0() + t) = 1.0;
    }
    auto sens = qp_sensitivity(pr, g.joint_solution, dP, dq, db_eq, db_in);
    const Mat& A = s.transport.link_route;
    const Mat B = bus_route(s);
    for (int k = 0; k < sens.primal_kernel.cols(); ++k) {
        // Undetermined route splits are harmless when they move no link
        // flow, no bus load and no generation.
        Vec kx = sens.primal_kernel.col(k).head(L.nR);
        Vec rest = sens.primal_kernel.col(k).tail(n - L.nR);
        double scale = 1.0 + sens.primal_kernel.col(k).norm();
        if ((A * kx).lpNorm<Eigen::Infinity>() > 1e-9 * scale || (B * kx).lpNorm<Eigen::Infinity>() > 1e-9 * scale ||
            (rest.size() && rest.lpNorm<Eigen::Infinity>() > 1e-9 * scale))
            throw Error("DEGENERATE_PATTERN", "equilibrium response is not unique for " + p.label());
    }
    Vec dx = sens.dz.head(L.nR);
    const Vec& x = g.x;
    const Mat At = route_alpha(s);
    const Vec bt = route_beta(s);
    SensitivityRow r;
    r.parameter = p;
    r.theta = get_param(s, p);
    r.method = Method::KKT;
    r.phi = social_costs(s, g);
    r.dphi_t = (2.0 * At * x + bt).dot(dx);
    if (p.kind == ParamKind::Alpha) r.dphi_t += std::pow(a.dot(x), 2);
    const Vec& lam = g.dispatch.lambda;
    r.dphi_p = s.coupling.rho * lam.dot(B * dx);
    if (p.kind == ParamKind::Fbar) {
        r.dphi_p -= g.dispatch.eta(p.index);
        int t = twin_row(s.power, p.index);
        if (t >= 0) r.dphi_p -= g.dispatch.eta(t);
    }
    r.dphi_c = r.dphi_t + r.dphi_p;
    r.side_condition = std::abs(g.route_cost.dot(dx));
    if (r.side_condition > 1e-6 * g.route_cost.norm() * dx.norm() + 1e-12)
        throw Error("INTERNAL", "derivative side condition fails for " + p.label());
    return r;
}

// Every capacity parameter of the system: each link slope and each physical line.
inline std::vector<Parameter> capacity_parameters(const CoupledSystem& s) {
    std::vector<Parameter> out;
    for (int l = 0; l < s.transport.n_links(); ++l) out.push_back(Parameter::alpha(l));
    for (int l : canonical_rows(s.power)) out.push_back(Parameter::fbar(l));
    return out;
}

enum class ScreenMethod { FD, KKT, Both };

inline void collect_verdicts(BpReport& rep) {
    for (auto t : {BpType::TT, BpType::TP, BpType::TC, BpType::PT, BpType::PP, BpType::PC}) rep.verdicts[t];
    // Prefer the KKT row of a parameter when both methods ran.
    std::map<std::string, const SensitivityRow*> pick;
    for (auto& r : rep.rows) {
        if (!r.error.empty()) continue;
        auto& slot = pick[r.parameter.label()];
        if (!slot || (slot->method == Method::FD && r.method == Method::KKT)) slot = &r;
    }
    for (auto& r : rep.rows) {
        auto it = pick.find(r.parameter.label());
        if (it == pick.end() || it->second != &r) continue;
        for (auto t : row_verdicts(r)) rep.verdicts[t].push_back(r.parameter.label());
    }
}

inline BpReport screen_bp(const CoupledSystem& s, ScreenMethod method = ScreenMethod::KKT,
                          const GueSolver& solver = default_solver(), double fd_step = -1.0) {
    BpReport rep;
    std::optional<GueSolution> g;
    try {
        g = solver(s);
    } catch (const Error& e) {
        rep.failures.push_back(std::string("base: ") + e.what());
        collect_verdicts(rep);
        return rep;
    }
    for (auto& p : capacity_parameters(s)) {
        bool want_fd = method != ScreenMethod::KKT;
        if (method != ScreenMethod::FD) {
            try {
                rep.rows.push_back(derivative_kkt(s, *g, p));
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

struct SweepRow {
    double theta = 0.0;
    Vec x, lambda;
    SocialCosts phi;
    BindingPattern pattern;
    SensitivityRow derivative;
    bool pattern_switch = false;  // pattern differs from the previous row
    std::string error;
};

struct SweepTable {
    Parameter parameter;
    std::vector<SweepRow> rows;
};

inline SweepTable sweep(const CoupledSystem& s, const Parameter& p, double lo, double hi, int n_steps,
                        const GueSolver& solver = default_solver(), double fd_step = -1.0) {
    if (!(std::isfinite(lo) && std::isfinite(hi)) || !(lo < hi) || n_steps < 2)
        throw Error("INVALID_RANGE", "sweep needs lo < hi and at least two steps");
    check_parameter(s, p);
    SweepTable t;
    t.parameter = p;
    std::optional<BindingPattern> prev;
    for (int i = 0; i < n_steps; ++i) {
        SweepRow row;
        row.theta = lo + (hi - lo) * i / (n_steps - 1);
        try {
            auto si = with_param(s, p, row.theta);
            auto g = solver(si);
            row.x = g.x;
            row.lambda = g.dispatch.lambda;
            row.phi = social_costs(si, g);
            row.pattern = g.binding;
            row.derivative = derivative_fd(si, p, fd_step, solver);
        } catch (const Error& e) {
            row.error = e.code();
        }
        t.rows.push_back(row);
        const auto& cur = t.rows.back();
        if (cur.error.empty()) {
            if (prev && *prev != cur.pattern) t.rows.back().pattern_switch = true;
            prev = cur.pattern;
        }
    }
    return t;
}

namespace detail {

inline std::string fmt12(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

inline std::string verdict_field(const SensitivityRow& r) {
    std::string s;
    for (auto t : row_verdicts(r)) s += (s.empty() ? "" : ";") + std::string(to_string(t));
    return s;
}

} // namespace detail

inline const char* kCsvHeader = "param,theta,phi_t,phi_p,phi_c,dphi_t,dphi_p,dphi_c,method,boundary,verdicts";

inline std::string csv_row(const SensitivityRow& r, bool boundary) {
    using detail::fmt12;
    std::ostringstream o;
    o << r.parameter.label() << ',' << fmt12(r.theta) << ',';
    if (!r.error.empty()) {
        o << "nan,nan,nan,nan,nan,nan," << to_string(r.method) << ",0,ERROR:" << r.error << '\n';
        return o.str();
    }
    o << fmt12(r.phi.phi_t) << ',' << fmt12(r.phi.phi_p) << ',' << fmt12(r.phi.phi_c) << ',' << fmt12(r.dphi_t) << ','
      << fmt12(r.dphi_p) << ',' << fmt12(r.dphi_c) << ',' << to_string(r.method) << ',' << (boundary ? 1 : 0) << ','
      << detail::verdict_field(r) << '\n';
    return o.str();
}

inline std::string report_csv(const BpReport& rep) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (auto& r : rep.rows) out += csv_row(r, r.at_region_boundary);
    return out;
}

inline std::string sweep_csv(const SweepTable& t) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (auto& row : t.rows) {
        SensitivityRow r = row.derivative;
        r.parameter = t.parameter;
        r.theta = row.theta;
        r.phi = row.phi;
        if (!row.error.empty()) r.error = row.error;
        bool boundary = r.at_region_boundary || row.pattern_switch;
        SensitivityRow shown = r;
        shown.at_region_boundary = boundary;
        out += csv_row(shown, boundary);
    }
    return out;
}

} // namespace gue
