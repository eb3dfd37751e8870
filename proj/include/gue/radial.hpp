#pragma once

// Radial grids: subnetworks joined by congested tie lines, the route bundles
// they induce, the aggregated bundle-level system, and the closed-form
// Braess conditions evaluated on it. Every condition value is reported as
// the derivative it stands for, so its sign can be cross-checked against
// the sensitivity module.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "gue/equilibrium.hpp"
#include "gue/metrics.hpp"
#include "gue/model.hpp"

namespace gue {

enum class Verdict { False, True, Indeterminate };

inline const char* to_string(Verdict v) {
    switch (v) {
    case Verdict::False: return "false";
    case Verdict::True: return "true";
    case Verdict::Indeterminate: return "indeterminate";
    }
    return "?";
}

// Values within tol of zero are not strict enough to call either way.
inline Verdict decide(double value, double tol, bool bp_if_negative) {
    if (!(std::abs(value) > tol)) return Verdict::Indeterminate;
    return ((value < 0.0) == bp_if_negative) ? Verdict::True : Verdict::False;
}

struct Subnetwork {
    std::vector<int> buses;
    std::vector<int> internal_lines;  // canonical rows inside the group
    double lmp = 0.0;
};

struct RouteBundle {
    int subnetwork = -1;
    std::vector<int> routes;  // active routes only
    double aggregate_flow = 0.0;
    double common_cost = 0.0;  // travel cost shared by the members
};

// A congested line between two subnetworks; power flows from → to.
struct TieLine {
    int row = -1;  // canonical row
    int from = -1, to = -1;
    double cap = 0.0;
};

struct AggregatedSystem {
    int K = 0;
    std::vector<Subnetwork> subnetworks;
    std::vector<RouteBundle> bundles;     // bundle k lives on subnetworks[bundles[k].subnetwork]
    std::vector<int> empty_subnetworks;   // subnetworks with no active route
    std::vector<TieLine> tie_lines;
    Mat alpha_hat;
    Vec beta_hat, q_hat, mu_hat, base_hat;
    Mat s_hat;        // K × tie lines
    Mat s_hat_empty;  // empty subnetworks × tie lines
    Vec f_hat;
    Mat gamma;
    double D = 0.0;
    Mat b_ul_inv;
    Mat c_hat;  // n_R × K; x = Ĉ x̂ + q̂
    Vec q_vec;
    Vec x_hat, lambda_hat, lambda_empty;
    double eta = 0.0;
    double rho = 0.0, demand = 0.0;
    double phi_t = 0.0, phi_p = 0.0;
    double residual = 0.0;

    // ∂Φ_T/∂x̂ along the aggregate cost model.
    Vec travel_gradient() const { return (alpha_hat + alpha_hat.transpose()) * x_hat + beta_hat; }
};

struct ConditionEntry {
    BpType type = BpType::TT;
    std::string target;  // "route:r", "bundle:k", "alpha:l" or "fbar:l"
    Verdict verdict = Verdict::Indeterminate;
    double value = 0.0;  // the derivative whose sign decides the verdict
    int from = -1, to = -1;  // line entries: endpoints in flow direction
};

struct ConditionVerdicts {
    Vec omega, omega_tilde, psi, varsigma;
    std::vector<ConditionEntry> entries;
    std::vector<int> route_at;  // per bus or subnetwork: active route or bundle, else -1
    bool beta_homogeneous = false;
    bool forms_agree = true;  // closed and general forms gave the same signs

    const ConditionEntry* find(BpType t, const std::string& target) const {
        for (auto& e : entries)
            if (e.type == t && e.target == target) return &e;
        return nullptr;
    }
    Verdict get(BpType t, const std::string& target) const {
        auto e = find(t, target);
        return e ? e->verdict : Verdict::Indeterminate;
    }
};

namespace detail {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    }
    bool unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent[std::max(a, b)] = std::min(a, b);
        return true;
    }
};

// Endpoints of every constraint row. Without declared topology a tree is
// recovered from its shift factors: each row then takes two values one
// apart, splitting the buses along the line, and the line joins the only
// pair of buses no other cut separates.
inline std::vector<std::array<int, 2>> row_ends(const PowerNetwork& pw) {
    if (!pw.lines.empty()) return pw.lines;
    const int n = pw.n_buses(), m = pw.n_rows();
    const Mat& H = pw.shift_factor;
    std::vector<std::vector<int>> side(m, std::vector<int>(n));
    for (int l = 0; l < m; ++l) {
        const double hi = H.row(l).maxCoeff(), lo = H.row(l).minCoeff();
        if (std::abs(hi - lo - 1.0) > 1e-9) throw Error("NOT_RADIAL", "row " + std::to_string(l) + " is not a tree cut");
        for (int i = 0; i < n; ++i) {
            if (std::abs(H(l, i) - hi) <= 1e-9) side[l][i] = 1;
            else if (std::abs(H(l, i) - lo) <= 1e-9) side[l][i] = 0;
            else throw Error("NOT_RADIAL", "row " + std::to_string(l) + " is not a tree cut");
        }
    }
    auto same_cut = [&](int a, int b) {
        bool eq = true, comp = true;
        for (int i = 0; i < n; ++i) {
            eq = eq && side[a][i] == side[b][i];
            comp = comp && side[a][i] != side[b][i];
        }
        return eq || comp;
    };
    std::vector<std::array<int, 2>> ends(m);
    for (int l = 0; l < m; ++l) {
        std::vector<std::array<int, 2>> cand;
        for (int a = 0; a < n; ++a) {
            if (side[l][a] != 1) continue;
            for (int b = 0; b < n; ++b) {
                if (side[l][b] != 0) continue;
                bool separated = false;
                for (int k = 0; k < m && !separated; ++k)
                    if (k != l && !same_cut(k, l) && side[k][a] != side[k][b]) separated = true;
                if (!separated) cand.push_back({a, b});
            }
        }
        if (cand.size() != 1) throw Error("NOT_RADIAL", "row " + std::to_string(l) + " does not identify one line");
        ends[l] = cand[0];
    }
    return ends;
}

inline bool line_congested(const PowerNetwork& pw, const std::vector<char>& cong, int row) {
    int t = twin_row(pw, row);
    return cong[row] || (t >= 0 && cong[t]);
}

inline std::vector<char> congested_flags(const CoupledSystem& s, const GueSolution& g) {
    std::vector<char> cong(s.power.n_rows(), 0);
    for (int l : g.binding.congested_lines) cong[l] = 1;
    return cong;
}

inline double active_tol(const CoupledSystem& s) { return 1e-7 * total_demand(s); }

inline void require_radial_setting(const CoupledSystem& s) {
    const auto& pw = s.power;
    if (od_groups(s).size() != 1) throw Error("PRECONDITION", "radial analysis covers a single O-D pair");
    for (int i = 0; i < pw.n_buses(); ++i) {
        if (!(pw.q_diag(i) > 0.0)) throw Error("PRECONDITION", "radial analysis needs Q > 0 on every bus");
        if (pw.generator_mask[i] == 0) throw Error("PRECONDITION", "radial analysis needs every bus to generate");
    }
    if (pw.enforce_nonneg_gen) throw Error("PRECONDITION", "radial analysis needs unbounded generation");
    for (int r = 0; r < s.n_routes(); ++r)
        if (route_bus_index(s)[r] < 0) throw Error("PRECONDITION", "route " + std::to_string(r) + " has no charger");
}

} // namespace detail

inline void assert_radial(const PowerNetwork& pw) {
    auto ends = detail::row_ends(pw);
    detail::UnionFind uf(pw.n_buses());
    for (int l : canonical_rows(pw)) {
        auto [a, b] = ends[l];
        if (a == b || !uf.unite(a, b))
            throw Error("NOT_RADIAL", "line " + std::to_string(a) + "-" + std::to_string(b) + " closes a cycle");
    }
}

inline std::vector<Subnetwork> partition_subnetworks(const CoupledSystem& s, const GueSolution& g) {
    const auto& pw = s.power;
    assert_radial(pw);
    auto ends = detail::row_ends(pw);
    auto cong = detail::congested_flags(s, g);
    const auto canon = canonical_rows(pw);
    detail::UnionFind uf(pw.n_buses());
    for (int l : canon)
        if (!detail::line_congested(pw, cong, l)) uf.unite(ends[l][0], ends[l][1]);
    std::map<int, int> index;
    std::vector<Subnetwork> out;
    for (int i = 0; i < pw.n_buses(); ++i) {
        int root = uf.find(i);
        auto it = index.find(root);
        if (it == index.end()) {
            it = index.emplace(root, static_cast<int>(out.size())).first;
            out.emplace_back();
        }
        out[it->second].buses.push_back(i);
    }
    for (int l : canon)
        if (!detail::line_congested(pw, cong, l)) out[index[uf.find(ends[l][0])]].internal_lines.push_back(l);
    const Vec& lam = g.dispatch.lambda;
    const double tol = 1e-6 * (1.0 + lam.cwiseAbs().maxCoeff());
    for (auto& sn : out) {
        double lo = 1e300, hi = -1e300, sum = 0.0;
        for (int i : sn.buses) {
            lo = std::min(lo, lam(i));
            hi = std::max(hi, lam(i));
            sum += lam(i);
        }
        if (hi - lo > tol) throw Error("DEGENERACY", "LMPs differ inside a subnetwork by " + std::to_string(hi - lo));
        sn.lmp = sum / sn.buses.size();
    }
    return out;
}

inline std::vector<int> subnetwork_of_bus(const std::vector<Subnetwork>& subnets, int n_buses) {
    std::vector<int> of(n_buses, -1);
    for (int k = 0; k < static_cast<int>(subnets.size()); ++k)
        for (int i : subnets[k].buses) of[i] = k;
    return of;
}

// One bundle per subnetwork that hosts an active route; subnetworks without
// one are left out here and carried separately by the aggregation.
inline std::vector<RouteBundle> route_bundles(const CoupledSystem& s, const GueSolution& g,
                                              const std::vector<Subnetwork>& subnets) {
    auto of = subnetwork_of_bus(subnets, s.n_buses());
    auto bus = route_bus_index(s);
    const Vec tc = travel_cost(s, g.x);
    std::vector<RouteBundle> per(subnets.size());
    for (int k = 0; k < static_cast<int>(subnets.size()); ++k) per[k].subnetwork = k;
    for (int r = 0; r < s.n_routes(); ++r) {
        if (g.x(r) <= detail::active_tol(s)) continue;
        if (bus[r] < 0) throw Error("PRECONDITION", "route " + std::to_string(r) + " has no charger");
        per[of[bus[r]]].routes.push_back(r);
    }
    const double tol = detail::cost_tol(g.route_cost);
    std::vector<RouteBundle> out;
    for (auto& b : per) {
        if (b.routes.empty()) continue;
        double lo = 1e300, hi = -1e300;
        for (int r : b.routes) {
            b.aggregate_flow += g.x(r);
            lo = std::min(lo, tc(r));
            hi = std::max(hi, tc(r));
        }
        if (hi - lo > tol) throw Error("DEGENERACY", "travel costs differ inside a route bundle");
        b.common_cost = 0.5 * (lo + hi);
        out.push_back(b);
    }
    return out;
}

namespace detail {

struct BundleMaps {
    Mat c_act;  // n_a × K
    Vec q_act;
    Mat alpha_hat;
    Vec beta_hat;
    std::vector<int> act;
};

// Equal-cost rows inside each bundle plus one flow-sum row per bundle give
// a square system M x_act = b + [0; x̂].
inline BundleMaps bundle_maps(const CoupledSystem& s, const std::vector<RouteBundle>& bundles) {
    BundleMaps bm;
    for (auto& b : bundles) bm.act.insert(bm.act.end(), b.routes.begin(), b.routes.end());
    const int na = static_cast<int>(bm.act.size()), K = static_cast<int>(bundles.size());
    std::map<int, int> pos;
    for (int j = 0; j < na; ++j) pos[bm.act[j]] = j;
    const Mat At = route_alpha(s);
    const Vec bt = route_beta(s);
    Mat Aact(na, na);
    for (int i = 0; i < na; ++i)
        for (int j = 0; j < na; ++j) Aact(i, j) = At(bm.act[i], bm.act[j]);
    Mat M = Mat::Zero(na, na);
    Vec b = Vec::Zero(na);
    std::vector<int> sum_row(K);
    int row = 0;
    for (int k = 0; k < K; ++k) {
        const auto& rs = bundles[k].routes;
        for (size_t j = 1; j < rs.size(); ++j) {
            M.row(row) = Aact.row(pos[rs[j - 1]]) - Aact.row(pos[rs[j]]);
            b(row) = -(bt(rs[j - 1]) - bt(rs[j]));
            ++row;
        }
        for (int r : rs) M(row, pos[r]) = 1.0;
        sum_row[k] = row++;
    }
    Eigen::JacobiSVD<Mat> svd(M);
    const Vec sv = svd.singularValues();
    if (na == 0 || !(sv(na - 1) > 0.0) || sv(0) / sv(na - 1) > 1e12)
        throw Error("SINGULAR_M", "bundle flow map is singular at this equilibrium");
    const Mat Minv = M.fullPivLu().inverse();
    bm.c_act = Mat(na, K);
    for (int k = 0; k < K; ++k) bm.c_act.col(k) = Minv.col(sum_row[k]);
    bm.q_act = Minv * b;
    bm.alpha_hat = Mat::Zero(K, K);
    bm.beta_hat = Vec::Zero(K);
    for (int k = 0; k < K; ++k) {
        const auto& rs = bundles[k].routes;
        for (int r : rs) {
            bm.alpha_hat.row(k) += Aact.row(pos[r]) * bm.c_act;
            bm.beta_hat(k) += Aact.row(pos[r]).dot(bm.q_act) + bt(r);
        }
        bm.alpha_hat.row(k) /= static_cast<double>(rs.size());
        bm.beta_hat(k) /= static_cast<double>(rs.size());
    }
    return bm;
}

} // namespace detail

inline AggregatedSystem aggregate(const CoupledSystem& s, const GueSolution& g, const std::vector<Subnetwork>& subnets,
                                  const std::vector<RouteBundle>& bundles) {
    detail::require_radial_setting(s);
    const auto& pw = s.power;
    AggregatedSystem a;
    a.subnetworks = subnets;
    a.bundles = bundles;
    a.K = static_cast<int>(bundles.size());
    a.rho = s.coupling.rho;
    a.demand = total_demand(s);
    const int K = a.K, nR = s.n_routes();
    if (K == 0) throw Error("PRECONDITION", "no active route");

    auto bm = detail::bundle_maps(s, bundles);
    a.alpha_hat = bm.alpha_hat;
    a.beta_hat = bm.beta_hat;
    a.c_hat = Mat::Zero(nR, K);
    a.q_vec = Vec::Zero(nR);
    for (size_t j = 0; j < bm.act.size(); ++j) {
        a.c_hat.row(bm.act[j]) = bm.c_act.row(j);
        a.q_vec(bm.act[j]) = bm.q_act(j);
    }

    // Subnetwork index → bundle slot (k) or empty slot (e).
    std::vector<int> slot(subnets.size(), -1), eslot(subnets.size(), -1);
    for (int k = 0; k < K; ++k) slot[bundles[k].subnetwork] = k;
    for (int j = 0; j < static_cast<int>(subnets.size()); ++j)
        if (slot[j] < 0) {
            eslot[j] = static_cast<int>(a.empty_subnetworks.size());
            a.empty_subnetworks.push_back(j);
        }
    const int E = static_cast<int>(a.empty_subnetworks.size());

    a.x_hat = Vec(K);
    a.q_hat = Vec(K);
    a.mu_hat = Vec(K);
    a.base_hat = Vec(K);
    a.lambda_hat = Vec(K);
    for (int k = 0; k < K; ++k) {
        a.x_hat(k) = bundles[k].aggregate_flow;
        double inv = 0.0, mq = 0.0, base = 0.0;
        for (int i : subnets[bundles[k].subnetwork].buses) {
            inv += 1.0 / pw.q_diag(i);
            mq += pw.mu(i) / pw.q_diag(i);
            base += pw.base_load(i);
        }
        a.q_hat(k) = 1.0 / inv;
        a.mu_hat(k) = a.q_hat(k) * mq;
        a.base_hat(k) = base;
        a.lambda_hat(k) = subnets[bundles[k].subnetwork].lmp;
    }
    a.lambda_empty = Vec(E);
    for (int e = 0; e < E; ++e) a.lambda_empty(e) = subnets[a.empty_subnetworks[e]].lmp;

    // Tie lines, oriented by the dispatched flow.
    auto ends = detail::row_ends(pw);
    auto cong = detail::congested_flags(s, g);
    auto of = subnetwork_of_bus(subnets, s.n_buses());
    const Vec flow = pw.shift_factor * g.dispatch.p;
    for (int l : canonical_rows(pw)) {
        if (!detail::line_congested(pw, cong, l)) continue;
        TieLine t;
        t.row = l;
        int tw = twin_row(pw, l);
        if (flow(l) >= 0.0 || tw < 0) {
            t.from = of[ends[l][0]];
            t.to = of[ends[l][1]];
            t.cap = flow(l) >= 0.0 ? pw.f_cap(l) : -pw.f_cap(l);
        } else {
            t.from = of[ends[tw][0]];
            t.to = of[ends[tw][1]];
            t.cap = pw.f_cap(tw);
        }
        a.tie_lines.push_back(t);
    }
    const int T = static_cast<int>(a.tie_lines.size());
    a.s_hat = Mat::Zero(K, T);
    a.s_hat_empty = Mat::Zero(E, T);
    Vec caps(T);
    for (int j = 0; j < T; ++j) {
        const auto& t = a.tie_lines[j];
        caps(j) = t.cap;
        if (slot[t.from] >= 0) a.s_hat(slot[t.from], j) += 1.0;
        else a.s_hat_empty(eslot[t.from], j) += 1.0;
        if (slot[t.to] >= 0) a.s_hat(slot[t.to], j) -= 1.0;
        else a.s_hat_empty(eslot[t.to], j) -= 1.0;
    }
    a.f_hat = a.s_hat * caps;

    const double rho = a.rho;
    a.gamma = a.alpha_hat;
    a.gamma.diagonal() += rho * rho * a.q_hat;
    const Mat Gi = a.gamma.fullPivLu().inverse();
    const Vec g1 = Gi * Vec::Ones(K);
    const Vec h1 = Gi.transpose() * Vec::Ones(K);
    a.D = g1.sum();
    a.b_ul_inv = Gi - g1 * h1.transpose() / a.D;

    a.eta = g.nu(0);
    a.phi_t = a.x_hat.dot(a.alpha_hat * a.x_hat + a.beta_hat);
    a.phi_p = g.dispatch.cost;

    // The aggregate equilibrium equations must hold at the snapshot.
    const Vec G = rho * a.x_hat + a.base_hat + a.f_hat;
    const Vec v = -a.beta_hat - rho * (a.q_hat.cwiseProduct(a.base_hat + a.f_hat) + a.mu_hat);
    const Vec r1 = a.gamma * a.x_hat - a.eta * Vec::Ones(K) - v;
    const Vec r2 = a.lambda_hat - (a.q_hat.cwiseProduct(G) + a.mu_hat);
    const double scale = 1.0 + std::abs(a.eta) + a.lambda_hat.cwiseAbs().maxCoeff();
    a.residual = std::max({r1.lpNorm<Eigen::Infinity>(), r2.lpNorm<Eigen::Infinity>(),
                           std::abs(a.x_hat.sum() - a.demand) / (1.0 + a.demand)}) / scale;
    Vec xr = Vec::Zero(nR);
    for (int r : bm.act) xr(r) = g.x(r);
    const double recon = (a.c_hat * a.x_hat + a.q_vec - xr).lpNorm<Eigen::Infinity>() / (1.0 + a.demand);
    a.residual = std::max(a.residual, recon);
    if (a.residual > 1e-6) throw Error("DEGENERACY", "aggregate equilibrium residual " + std::to_string(a.residual));
    return a;
}

inline AggregatedSystem aggregate(const CoupledSystem& s, const GueSolution& g) {
    detail::require_radial_setting(s);
    auto subnets = partition_subnetworks(s, g);
    auto bundles = route_bundles(s, g, subnets);
    return aggregate(s, g, subnets, bundles);
}

// Solves the K-dimensional aggregate equilibrium directly.
inline Vec solve_aggregate(const AggregatedSystem& a) {
    const int K = a.K;
    Mat B = Mat::Zero(K + 1, K + 1);
    B.topLeftCorner(K, K) = a.gamma;
    B.block(0, K, K, 1) = -Vec::Ones(K);
    B.block(K, 0, 1, K) = Vec::Ones(K).transpose();
    Vec rhs(K + 1);
    rhs.head(K) = -a.beta_hat - a.rho * (a.q_hat.cwiseProduct(a.base_hat + a.f_hat) + a.mu_hat);
    rhs(K) = a.demand;
    return B.fullPivLu().solve(rhs).head(K);
}

struct AggregateSensitivities {
    Mat dx_dbeta;   // column k: ∂x̂/∂β̂_k
    Mat dx_dalpha;  // column k·K + k': ∂x̂/∂α̂_{k,k'}
    Mat dx_dfbar;   // column j: ∂x̂/∂f̄ of tie line j
};

inline AggregateSensitivities aggregate_sensitivities(const AggregatedSystem& a) {
    const int K = a.K;
    AggregateSensitivities d;
    d.dx_dbeta = -a.b_ul_inv;
    d.dx_dalpha = Mat(K, K * K);
    for (int k = 0; k < K; ++k)
        for (int kk = 0; kk < K; ++kk) d.dx_dalpha.col(k * K + kk) = -a.x_hat(kk) * a.b_ul_inv.col(k);
    d.dx_dfbar = -a.rho * a.b_ul_inv * a.q_hat.asDiagonal() * a.s_hat;
    return d;
}

namespace detail {

struct DiagonalForms {
    Vec omega, omega_tilde, psi, varsigma_hat;
};

inline DiagonalForms diagonal_forms(const AggregatedSystem& a) {
    DiagonalForms f;
    f.omega = a.gamma.diagonal().cwiseInverse();
    f.omega_tilde = f.omega / f.omega.sum();
    const Vec c = a.travel_gradient();
    f.psi = Vec(a.K);
    f.varsigma_hat = Vec(a.K);
    for (int k = 0; k < a.K; ++k) {
        f.psi(k) = f.omega(k) * (c(k) - f.omega_tilde.dot(c));
        double spread = 0.0;
        for (int j = 0; j < a.K; ++j) spread += f.omega_tilde(j) * (a.lambda_hat(k) - a.lambda_hat(j));
        f.varsigma_hat(k) = a.lambda_hat(k) - a.rho * a.rho * a.q_hat(k) * f.omega(k) * spread;
    }
    return f;
}

inline bool is_diagonal(const Mat& m) {
    const double scale = 1e-12 * (1.0 + m.cwiseAbs().maxCoeff());
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j)
            if (i != j && std::abs(m(i, j)) > scale) return false;
    return true;
}

inline bool signs_match(double a, double b, double tol) {
    if (std::abs(a) <= tol || std::abs(b) <= tol) return true;
    return (a < 0) == (b < 0);
}

// ∂Φ_T/∂β̂_k and ∂Φ_P/∂β̂_k; the α̂_{k,k'} derivatives are these scaled by x̂_{k'}.
inline std::pair<Vec, Vec> beta_hat_derivatives(const AggregatedSystem& a) {
    const Vec c = a.travel_gradient();
    Vec dT(a.K), dP(a.K);
    for (int k = 0; k < a.K; ++k) {
        const Vec dx = -a.b_ul_inv.col(k);
        dT(k) = a.x_hat(k) + c.dot(dx);
        dP(k) = a.rho * a.lambda_hat.dot(dx);
    }
    return {dT, dP};
}

} // namespace detail

// Bundle-level paradoxes of the aggregated system.
inline ConditionVerdicts check_atbp(const AggregatedSystem& a) {
    ConditionVerdicts v;
    auto f = detail::diagonal_forms(a);
    v.omega = f.omega;
    v.omega_tilde = f.omega_tilde;
    v.psi = f.psi;
    v.varsigma = f.varsigma_hat;
    auto [dT, dP] = detail::beta_hat_derivatives(a);
    const bool diag = detail::is_diagonal(a.alpha_hat);
    const double tT = verdict_tol(a.phi_t), tP = verdict_tol(a.phi_p);
    for (int k = 0; k < a.K; ++k) {
        const std::string tgt = "bundle:" + std::to_string(k);
        ConditionEntry tt{BpType::TT, tgt, Verdict::False, a.x_hat(k) * dT(k)};
        ConditionEntry tp{BpType::TP, tgt, Verdict::False, a.x_hat(k) * dP(k)};
        if (a.K > 1) {
            tt.verdict = decide(tt.value, tT, true);
            tp.verdict = decide(tp.value, tP, true);
        }
        if (diag && a.K > 1) {
            double spread = 0.0;
            for (int j = 0; j < a.K; ++j) spread += f.omega_tilde(j) * (a.lambda_hat(k) - a.lambda_hat(j));
            v.forms_agree = v.forms_agree && detail::signs_match(a.x_hat(k) - f.psi(k), dT(k), tT) &&
                            detail::signs_match(-spread, dP(k), tP);
        }
        v.entries.push_back(tt);
        v.entries.push_back(tp);
    }
    v.route_at.resize(a.subnetworks.size(), -1);
    for (int k = 0; k < a.K; ++k) v.route_at[a.bundles[k].subnetwork] = k;
    return v;
}

// Line paradoxes of the aggregated system, one entry pair per tie line.
inline ConditionVerdicts check_pbp_aggregated(const AggregatedSystem& a) {
    ConditionVerdicts v;
    auto f = detail::diagonal_forms(a);
    v.omega = f.omega;
    v.omega_tilde = f.omega_tilde;
    v.psi = f.psi;
    v.varsigma = f.varsigma_hat;
    const Vec c = a.travel_gradient();
    const bool diag = detail::is_diagonal(a.alpha_hat);
    const double tT = verdict_tol(a.phi_t), tP = verdict_tol(a.phi_p);
    for (int j = 0; j < static_cast<int>(a.tie_lines.size()); ++j) {
        const auto& tl = a.tie_lines[j];
        const Vec e = a.s_hat.col(j);
        const Vec dx = -a.rho * a.b_ul_inv * a.q_hat.cwiseProduct(e);
        const double dT = c.dot(dx);
        double dP = a.lambda_hat.dot(a.rho * dx + e);
        if (a.lambda_empty.size()) dP += a.lambda_empty.dot(a.s_hat_empty.col(j));
        const std::string tgt = "fbar:" + std::to_string(tl.row);
        ConditionEntry pt{BpType::PT, tgt, decide(dT, tT, false), dT, tl.from, tl.to};
        ConditionEntry pp{BpType::PP, tgt, decide(dP, tP, false), dP, tl.from, tl.to};
        if (a.K == 1) pt.verdict = Verdict::False;
        if (diag) {
            double cT = 0.0, cP = 0.0;
            for (int k = 0; k < a.K; ++k) {
                cT += a.q_hat(k) * f.psi(k) * e(k);
                cP += f.varsigma_hat(k) * e(k);
            }
            if (a.lambda_empty.size()) cP += a.lambda_empty.dot(a.s_hat_empty.col(j));
            v.forms_agree = v.forms_agree && detail::signs_match(-a.rho * cT, dT, tT) && detail::signs_match(cP, dP, tP);
        }
        v.entries.push_back(pt);
        v.entries.push_back(pp);
    }
    v.route_at.resize(a.subnetworks.size(), -1);
    for (int k = 0; k < a.K; ++k) v.route_at[a.bundles[k].subnetwork] = k;
    return v;
}

// Total travel cost of the bundle's own routes at fixed inflow x̂, perturbed
// link by link. Flow of routes outside the bundle stays as background.
inline ConditionVerdicts classical_bp_in_bundle(const CoupledSystem& s, const RouteBundle& bundle, double x_hat,
                                                const Vec& background = Vec()) {
    if (bundle.routes.empty()) throw Error("PRECONDITION", "empty route bundle");
    const auto& A = s.transport.link_route;
    Vec base_flow = Vec::Zero(A.rows());
    if (background.size() == s.n_routes()) {
        Vec xb = background;
        for (int r : bundle.routes) xb(r) = 0.0;
        base_flow = A * xb;
    }
    TransportationNetwork t;
    t.link_route = Mat(A.rows(), static_cast<int>(bundle.routes.size()));
    for (size_t j = 0; j < bundle.routes.size(); ++j) t.link_route.col(j) = A.col(bundle.routes[j]);
    auto total = [&](const Vec& alpha) {
        t.alpha = alpha;
        t.beta = s.transport.beta + alpha.cwiseProduct(base_flow);
        auto u = transport_ue(t, Vec::Zero(t.n_routes()), x_hat);
        const Vec lf = t.link_route * u.x;
        return lf.dot(alpha.cwiseProduct(lf) + t.beta);
    };
    ConditionVerdicts v;
    const Vec alpha = s.transport.alpha;
    const double phi = total(alpha);
    const double tol = verdict_tol(phi);
    for (int l = 0; l < A.rows(); ++l) {
        bool used = false;
        for (int r : bundle.routes) used = used || A(l, r) != 0.0;
        if (!used) continue;
        const double h = 1e-6 * (1.0 + alpha(l));
        Vec ap = alpha, am = alpha;
        ap(l) += h;
        double d;
        if (alpha(l) - h >= 0.0) {
            am(l) -= h;
            d = (total(ap) - total(am)) / (2 * h);
        } else {
            d = (total(ap) - phi) / h;
        }
        v.entries.push_back({BpType::TT, "alpha:" + std::to_string(l), decide(d, tol, true), d});
    }
    return v;
}

inline ConditionVerdicts check_uncongested(const CoupledSystem& s, const GueSolution& g) {
    detail::require_radial_setting(s);
    assert_radial(s.power);
    if (!g.binding.congested_lines.empty()) throw Error("PRECONDITION", "the grid is congested at this equilibrium");
    auto subnets = partition_subnetworks(s, g);
    if (subnets.size() != 1) throw Error("PRECONDITION", "the grid is not connected");
    auto bundles = route_bundles(s, g, subnets);
    ConditionVerdicts v;
    if (!bundles.empty()) {
        auto c = classical_bp_in_bundle(s, bundles[0], bundles[0].aggregate_flow, g.x);
        for (auto e : c.entries) {
            if (bundles[0].routes.size() == 1) e.verdict = Verdict::False;
            v.entries.push_back(e);
            v.entries.push_back({BpType::TP, e.target, Verdict::False, 0.0});
        }
    }
    for (int l : canonical_rows(s.power)) {
        v.entries.push_back({BpType::PT, "fbar:" + std::to_string(l), Verdict::False, 0.0});
        v.entries.push_back({BpType::PP, "fbar:" + std::to_string(l), Verdict::False, 0.0});
    }
    v.route_at.assign(1, bundles.empty() ? -1 : 0);
    return v;
}

// Every line congested and active routes sharing neither links nor buses:
// subnetworks are single buses and bundles single routes.
inline ConditionVerdicts check_fully_congested(const CoupledSystem& s, const GueSolution& g) {
    detail::require_radial_setting(s);
    assert_radial(s.power);
    const auto& pw = s.power;
    auto cong = detail::congested_flags(s, g);
    for (int l : canonical_rows(pw))
        if (!detail::line_congested(pw, cong, l))
            throw Error("PRECONDITION", "not every line is congested (line row " + std::to_string(l) + ")");
    std::vector<int> act;
    for (int r = 0; r < s.n_routes(); ++r)
        if (g.x(r) > detail::active_tol(s)) act.push_back(r);
    const auto bus = route_bus_index(s);
    const Mat& A = s.transport.link_route;
    for (size_t i = 0; i < act.size(); ++i)
        for (size_t j = i + 1; j < act.size(); ++j) {
            if (A.col(act[i]).dot(A.col(act[j])) != 0.0)
                throw Error("PRECONDITION", "active routes share a link");
            if (bus[act[i]] == bus[act[j]]) throw Error("PRECONDITION", "active routes share a bus");
        }
    auto subnets = partition_subnetworks(s, g);
    auto bundles = route_bundles(s, g, subnets);
    auto a = aggregate(s, g, subnets, bundles);
    auto atbp = check_atbp(a);
    auto pbp = check_pbp_aggregated(a);

    ConditionVerdicts v;
    v.omega = atbp.omega;
    v.omega_tilde = atbp.omega_tilde;
    v.psi = atbp.psi;
    v.forms_agree = atbp.forms_agree && pbp.forms_agree;
    for (int k = 0; k < a.K; ++k) {
        const int r = bundles[k].routes[0];
        for (auto t : {BpType::TT, BpType::TP}) {
            ConditionEntry e = *atbp.find(t, "bundle:" + std::to_string(k));
            e.target = "route:" + std::to_string(r);
            v.entries.push_back(e);
        }
    }
    for (auto e : pbp.entries) {
        e.from = subnets[e.from].buses[0];
        e.to = subnets[e.to].buses[0];
        v.entries.push_back(e);
    }
    // ς per bus; a bus without an active route keeps its bare LMP.
    v.varsigma = g.dispatch.lambda;
    v.route_at.assign(s.n_buses(), -1);
    for (int k = 0; k < a.K; ++k) {
        const int i = subnets[bundles[k].subnetwork].buses[0];
        v.varsigma(i) = atbp.varsigma(k);
        v.route_at[i] = bundles[k].routes[0];
    }
    Vec bh = a.beta_hat;
    v.beta_homogeneous = a.K > 0 && (bh.maxCoeff() - bh.minCoeff()) <= 1e-9 * (1.0 + bh.cwiseAbs().maxCoeff());
    return v;
}

struct RadialReport {
    AggregatedSystem agg;
    ConditionVerdicts atbp, pbp, links;
    std::vector<ConditionVerdicts> classical;  // one per bundle
    bool separate_bundles = true;  // no link is shared across bundles
    std::vector<std::string> inconsistencies;
};

// Link-level verdicts through the aggregate: ∂Φ/∂α_ℓ = Σ ∂Φ/∂α̂ ∂α̂/∂α_ℓ +
// Σ ∂Φ/∂β̂ ∂β̂/∂α_ℓ, with the bundle coefficients differentiated numerically.
inline RadialReport check_radial(const CoupledSystem& s, const GueSolution& g) {
    RadialReport rep;
    rep.agg = aggregate(s, g);
    const auto& a = rep.agg;
    rep.atbp = check_atbp(a);
    rep.pbp = check_pbp_aggregated(a);
    const int K = a.K;
    const Mat& A = s.transport.link_route;

    std::vector<int> owner(A.rows(), -1);
    for (int k = 0; k < K; ++k)
        for (int r : a.bundles[k].routes)
            for (int l = 0; l < A.rows(); ++l) {
                if (A(l, r) == 0.0) continue;
                if (owner[l] >= 0 && owner[l] != k) rep.separate_bundles = false;
                owner[l] = k;
            }

    auto [dT, dP] = detail::beta_hat_derivatives(a);
    const double tT = verdict_tol(a.phi_t), tP = verdict_tol(a.phi_p);
    for (int l = 0; l < A.rows(); ++l) {
        if (owner[l] < 0) continue;
        const double h = 1e-6 * (1.0 + s.transport.alpha(l));
        CoupledSystem sp = s, sm = s;
        sp.transport.alpha(l) += h;
        double denom = 2 * h;
        if (s.transport.alpha(l) - h >= 0.0) sm.transport.alpha(l) -= h;
        else denom = h;
        auto bp = detail::bundle_maps(sp, a.bundles);
        auto bmn = detail::bundle_maps(sm, a.bundles);
        const Mat da = (bp.alpha_hat - bmn.alpha_hat) / denom;
        const Vec db = (bp.beta_hat - bmn.beta_hat) / denom;
        double vT = 0.0, vP = 0.0;
        for (int k = 0; k < K; ++k) {
            vT += dT(k) * db(k);
            vP += dP(k) * db(k);
            for (int kk = 0; kk < K; ++kk) {
                vT += a.x_hat(kk) * dT(k) * da(k, kk);
                vP += a.x_hat(kk) * dP(k) * da(k, kk);
            }
        }
        const std::string tgt = "alpha:" + std::to_string(l);
        rep.links.entries.push_back({BpType::TT, tgt, decide(vT, tT, true), vT});
        rep.links.entries.push_back({BpType::TP, tgt, decide(vP, tP, true), vP});
    }

    for (int k = 0; k < K; ++k) rep.classical.push_back(classical_bp_in_bundle(s, a.bundles[k], a.x_hat(k), g.x));

    // With separate bundles a link paradox needs exactly one of: the bundle
    // paradox, or a classical paradox inside the bundle.
    if (rep.separate_bundles && K > 1) {
        for (auto& e : rep.links.entries) {
            if (e.type != BpType::TT || e.verdict != Verdict::True) continue;
            const int l = std::stoi(e.target.substr(6));
            const int k = owner[l];
            Verdict a1 = rep.atbp.get(BpType::TT, "bundle:" + std::to_string(k));
            Verdict a2 = rep.classical[k].get(BpType::TT, e.target);
            if (a1 == Verdict::Indeterminate || a2 == Verdict::Indeterminate) continue;
            if ((a1 == Verdict::True) == (a2 == Verdict::True))
                rep.inconsistencies.push_back("link paradox at " + e.target + " without exactly one bundle-level cause");
        }
    }
    return rep;
}

struct ImplicationReport {
    int checked = 0;
    std::vector<std::string> violations;
};

// Runtime check of the relations among fully congested verdicts. Each rule
// is skipped when one of its verdicts is indeterminate.
inline ImplicationReport bp_relations(const ConditionVerdicts& v) {
    ImplicationReport rep;
    auto route_tgt = [](int r) { return "route:" + std::to_string(r); };
    auto rule = [&](bool applies, Verdict premise, Verdict want_premise, Verdict concl, Verdict want_concl,
                    const std::string& name, const std::string& where) {
        if (!applies || premise == Verdict::Indeterminate || concl == Verdict::Indeterminate) return;
        if (premise != want_premise) return;
        ++rep.checked;
        if (concl != want_concl) rep.violations.push_back(name + " at " + where);
    };
    std::map<std::string, std::pair<const ConditionEntry*, const ConditionEntry*>> lines;
    for (auto& e : v.entries) {
        if (e.type == BpType::PT) lines[e.target].first = &e;
        if (e.type == BpType::PP) lines[e.target].second = &e;
    }
    for (auto& [tgt, pr] : lines) {
        if (!pr.first || !pr.second) continue;
        const int from = pr.first->from, to = pr.first->to;
        const int ra = from >= 0 ? v.route_at[from] : -1;
        const int rb = to >= 0 ? v.route_at[to] : -1;
        const Verdict pt = pr.first->verdict, pp = pr.second->verdict;
        const bool out_of_active = ra >= 0 && rb < 0, into_active = ra < 0 && rb >= 0;
        using V = Verdict;
        rule(out_of_active, pt, V::True, out_of_active ? v.get(BpType::TT, route_tgt(ra)) : V::False, V::False,
             "pt-on-export-excludes-tt", tgt);
        rule(into_active, pt, V::False, into_active ? v.get(BpType::TT, route_tgt(rb)) : V::False, V::False,
             "no-pt-on-import-excludes-tt", tgt);
        rule(out_of_active, pp, V::False, out_of_active ? v.get(BpType::TP, route_tgt(ra)) : V::True, V::True,
             "no-pp-on-export-implies-tp", tgt);
        rule(into_active, pp, V::True, into_active ? v.get(BpType::TP, route_tgt(rb)) : V::True, V::True,
             "pp-on-import-implies-tp", tgt);
        if (ra < 0 && rb < 0) {
            rule(true, V::True, V::True, pt, V::False, "idle-line-has-no-pt", tgt);
            rule(true, V::True, V::True, pp, V::False, "idle-line-has-no-pp", tgt);
        }
        if (v.beta_homogeneous) {
            rule(out_of_active, pt, V::False, pp, V::True, "homogeneous-no-pt-on-export-implies-pp", tgt);
            rule(into_active, pt, V::True, pp, V::False, "homogeneous-pt-on-import-excludes-pp", tgt);
            rule(ra >= 0 && rb >= 0, pt, V::True, pp, V::False, "homogeneous-pt-between-active-excludes-pp", tgt);
        }
    }
    if (v.beta_homogeneous) {
        for (auto& e : v.entries) {
            if (e.type != BpType::TT || e.target.rfind("route:", 0) != 0) continue;
            rule(true, e.verdict, Verdict::True, v.get(BpType::TP, e.target), Verdict::False, "homogeneous-tt-excludes-tp",
                 e.target);
        }
    }
    return rep;
}

} // namespace gue
