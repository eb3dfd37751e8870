#pragma once

// Independent reference computations used by the test suites. None of these
// routines share code paths with the library solvers beyond Eigen itself.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "gue/model.hpp"
#include "gue/qp.hpp"

namespace oracle {

using gue::Mat;
using gue::Vec;

struct KktPoint {
    Vec z, lambda, mu;
    double objective;
    std::vector<int> active;
};

// Enumerate every subset of inequality rows, solve the equality-constrained
// KKT system for it and keep the feasible, dual-feasible points.
inline std::vector<KktPoint> enumerate_active_sets(const gue::QpProblem& pr, double tol = 1e-10) {
    const int n = pr.n(), p = pr.p(), m = pr.m();
    std::vector<KktPoint> out;
    for (unsigned mask = 0; mask < (1u << m); ++mask) {
        std::vector<int> S;
        for (int i = 0; i < m; ++i)
            if (mask & (1u << i)) S.push_back(i);
        const int k = p + static_cast<int>(S.size());
        Mat K = Mat::Zero(n + k, n + k);
        Vec rhs(n + k);
        K.topLeftCorner(n, n) = pr.P;
        rhs.head(n) = -pr.q;
        for (int j = 0; j < p; ++j) {
            K.block(0, n + j, n, 1) = pr.A_eq.row(j).transpose();
            K.block(n + j, 0, 1, n) = pr.A_eq.row(j);
            rhs(n + j) = pr.b_eq(j);
        }
        for (int j = 0; j < static_cast<int>(S.size()); ++j) {
            K.block(0, n + p + j, n, 1) = pr.A_in.row(S[j]).transpose();
            K.block(n + p + j, 0, 1, n) = pr.A_in.row(S[j]);
            rhs(n + p + j) = pr.b_in(S[j]);
        }
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(K);
        Vec s = cod.solve(rhs);
        if ((K * s - rhs).norm() > 1e-9 * (1 + rhs.norm())) continue;
        Vec z = s.head(n);
        bool ok = true;
        for (int i = 0; i < m; ++i)
            if (pr.A_in.row(i).dot(z) > pr.b_in(i) + tol * (1 + std::abs(pr.b_in(i)))) ok = false;
        for (int j = 0; j < static_cast<int>(S.size()); ++j)
            if (s(n + p + j) < -tol) ok = false;
        if (!ok) continue;
        KktPoint kp;
        kp.z = z;
        kp.lambda = s.segment(n, p);
        kp.mu = Vec::Zero(m);
        for (int j = 0; j < static_cast<int>(S.size()); ++j) kp.mu(S[j]) = s(n + p + j);
        kp.objective = 0.5 * z.dot(pr.P * z) + pr.q.dot(z);
        kp.active = S;
        out.push_back(kp);
    }
    return out;
}

// Random bounded, feasible QP: box rows plus a few general rows through an
// interior point. rank < n gives a PSD but singular Hessian.
inline gue::QpProblem random_qp(std::mt19937_64& rng, int n, int m, int p, int rank) {
    std::normal_distribution<double> N01(0.0, 1.0);
    std::uniform_real_distribution<double> U(0.2, 1.5);
    gue::QpProblem pr;
    Mat L(n, rank);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < rank; ++j) L(i, j) = N01(rng);
    pr.P = L * L.transpose();
    pr.q = Vec(n);
    for (int i = 0; i < n; ++i) pr.q(i) = 2.0 * N01(rng);
    Vec z0(n);
    for (int i = 0; i < n; ++i) z0(i) = 0.3 * N01(rng);
    pr.A_eq = Mat(p, n);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < n; ++j) pr.A_eq(i, j) = N01(rng);
    pr.b_eq = pr.A_eq * z0;
    pr.A_in = Mat(m, n);
    pr.b_in = Vec(m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) pr.A_in(i, j) = N01(rng);
        pr.b_in(i) = pr.A_in.row(i).dot(z0) + U(rng);
    }
    // When the Hessian is singular, box the free directions so the problem stays bounded.
    if (rank < n) {
        Mat A2(m + 2 * n, n);
        Vec b2(m + 2 * n);
        A2.topRows(m) = pr.A_in;
        b2.head(m) = pr.b_in;
        for (int j = 0; j < n; ++j) {
            A2.row(m + 2 * j) = Vec::Unit(n, j).transpose();
            b2(m + 2 * j) = z0(j) + U(rng);
            A2.row(m + 2 * j + 1) = -Vec::Unit(n, j).transpose();
            b2(m + 2 * j + 1) = -z0(j) + U(rng);
        }
        pr.A_in = A2;
        pr.b_in = b2;
    }
    return pr;
}

// Central difference with one Richardson step.
inline double richardson(const std::function<double(double)>& f, double theta, double h) {
    double d1 = (f(theta + h) - f(theta - h)) / (2 * h);
    double d2 = (f(theta + h / 2) - f(theta - h / 2)) / h;
    return (4 * d2 - d1) / 3;
}

// Random tree grid with one single-link route per charging bus. The shift
// factors are built from subtree membership: a unit injection at bus i
// reaches the slack (bus 0) through every line above it. Buses listed in
// idle carry no charger.
inline gue::CoupledSystem random_radial(std::mt19937_64& rng, int n_bus, const std::vector<int>& idle, bool flat_beta,
                                        double cap_lo, double cap_hi) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<int> parent(n_bus, -1);
    for (int i = 1; i < n_bus; ++i) parent[i] = static_cast<int>(U(rng) * i);
    Mat Hhat = Mat::Zero(n_bus - 1, n_bus);
    std::vector<std::array<int, 2>> lines;
    for (int c = 1; c < n_bus; ++c) {
        lines.push_back({c, parent[c]});
        for (int i = 0; i < n_bus; ++i)
            for (int a = i; a > 0; a = parent[a])
                if (a == c) Hhat(c - 1, i) = 1.0;
    }
    Vec fbar(n_bus - 1);
    for (int l = 0; l < n_bus - 1; ++l) fbar(l) = cap_lo + (cap_hi - cap_lo) * U(rng);

    std::vector<int> chargers;
    for (int i = 0; i < n_bus; ++i)
        if (std::find(idle.begin(), idle.end(), i) == idle.end()) chargers.push_back(i);
    const int R = static_cast<int>(chargers.size());

    gue::CoupledSystem s;
    s.transport.alpha = Vec(R);
    s.transport.beta = Vec(R);
    const double kappa = 0.5 * U(rng);
    for (int r = 0; r < R; ++r) {
        s.transport.alpha(r) = 0.5 + 2.5 * U(rng);
        s.transport.beta(r) = flat_beta ? kappa : U(rng);
    }
    s.transport.link_route = Mat::Identity(R, R);
    s.power = gue::detail::both_directions(Hhat, fbar, lines);
    s.power.q_diag = Vec(n_bus);
    s.power.mu = Vec(n_bus);
    s.power.base_load = Vec(n_bus);
    for (int i = 0; i < n_bus; ++i) {
        s.power.q_diag(i) = 0.5 + 1.5 * U(rng);
        s.power.mu(i) = 0.3 * U(rng);
        s.power.base_load(i) = 0.5 * U(rng);
    }
    s.power.generator_mask.assign(n_bus, 1);
    s.coupling.charger_route = Mat::Identity(R, R);
    s.coupling.charger_bus = Mat::Zero(R, n_bus);
    for (int r = 0; r < R; ++r) s.coupling.charger_bus(r, chargers[r]) = 1.0;
    s.coupling.rho = 0.5 + 1.5 * U(rng);
    s.coupling.demand = 1.0;
    return s;
}

} // namespace oracle
