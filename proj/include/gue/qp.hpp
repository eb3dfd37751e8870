#pragma once

// Dense convex QP:  min ½zᵀPz + qᵀz  s.t.  A_eq z = b_eq,  A_in z ≤ b_in.
// Primal active-set method. The working set at termination is the binding
// pattern consumed by the sensitivity and critical-region code.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gue/errors.hpp"

namespace gue {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct QpProblem {
    Mat P;
    Vec q;
    Mat A_eq;
    Vec b_eq;
    Mat A_in;
    Vec b_in;

    int n() const { return static_cast<int>(q.size()); }
    int p() const { return static_cast<int>(b_eq.size()); }
    int m() const { return static_cast<int>(b_in.size()); }
};

enum class QpStatus { Optimal, Infeasible, Unbounded, MaxIter };

inline const char* to_string(QpStatus s) {
    switch (s) {
    case QpStatus::Optimal: return "Optimal";
    case QpStatus::Infeasible: return "Infeasible";
    case QpStatus::Unbounded: return "Unbounded";
    case QpStatus::MaxIter: return "MaxIter";
    }
    return "?";
}

struct QpSolution {
    Vec z;
    Vec lambda_eq;
    Vec mu_in;
    double objective = 0.0;
    QpStatus status = QpStatus::MaxIter;
    std::vector<int> active_set;   // binding rows by the classification tolerance
    std::vector<int> working_set;  // rows the solver held as equalities at exit
    int iterations = 0;
};

struct KktReport {
    double stationarity_inf_norm = 0.0;
    double primal_eq_inf_norm = 0.0;
    double primal_in_violation = 0.0;
    double comp_slack_inf_norm = 0.0;
    double dual_feas_violation = 0.0;

    double max() const {
        return std::max({stationarity_inf_norm, primal_eq_inf_norm, primal_in_violation,
                         comp_slack_inf_norm, dual_feas_violation});
    }
};

constexpr double kDefaultQpTol = 1e-9;
constexpr double kBindingTol = 1e-7;

inline bool is_binding(double residual, double b) { return residual <= kBindingTol * (1.0 + std::abs(b)); }

inline void check_qp_dims(const QpProblem& pr) {
    const int n = pr.n();
    bool ok = pr.P.rows() == n && pr.P.cols() == n;
    ok = ok && pr.A_eq.rows() == pr.p() && (pr.p() == 0 || pr.A_eq.cols() == n);
    ok = ok && pr.A_in.rows() == pr.m() && (pr.m() == 0 || pr.A_in.cols() == n);
    if (!ok) throw Error("DIMENSION_MISMATCH", "QP matrices disagree with vector lengths");
}

inline KktReport verify_kkt(const QpProblem& pr, const QpSolution& s) {
    check_qp_dims(pr);
    if (s.z.size() != pr.n() || s.lambda_eq.size() != pr.p() || s.mu_in.size() != pr.m())
        throw Error("DIMENSION_MISMATCH", "solution vectors disagree with problem");
    KktReport r;
    Vec st = pr.P * s.z + pr.q;
    if (pr.p() > 0) st += pr.A_eq.transpose() * s.lambda_eq;
    if (pr.m() > 0) st += pr.A_in.transpose() * s.mu_in;
    r.stationarity_inf_norm = st.size() ? st.lpNorm<Eigen::Infinity>() : 0.0;
    if (pr.p() > 0) r.primal_eq_inf_norm = (pr.A_eq * s.z - pr.b_eq).lpNorm<Eigen::Infinity>();
    for (int i = 0; i < pr.m(); ++i) {
        double slack = pr.b_in(i) - pr.A_in.row(i).dot(s.z);
        r.primal_in_violation = std::max(r.primal_in_violation, -slack);
        r.comp_slack_inf_norm = std::max(r.comp_slack_inf_norm, std::abs(s.mu_in(i) * slack));
        r.dual_feas_violation = std::max(r.dual_feas_violation, -s.mu_in(i));
    }
    return r;
}

namespace detail {

struct CoreResult {
    Vec z;
    std::vector<int> W;
    Vec y;  // multipliers for [eq rows; W rows]
    QpStatus status = QpStatus::MaxIter;
    int iterations = 0;
};

// Active-set loop from a feasible start. Equality rows in Aeq are assumed
// linearly independent.
inline CoreResult active_set_core(const Mat& P, const Vec& q, const Mat& Aeq, const Mat& Ain,
                                  const Vec& bin, Vec z, std::vector<int> W, double tol, int max_iter) {
    const int n = static_cast<int>(q.size());
    const int pe = static_cast<int>(Aeq.rows());
    const int m = static_cast<int>(Ain.rows());
    const double pnorm = P.size() ? P.cwiseAbs().maxCoeff() : 0.0;
    const double curv_tol = 1e-11 * std::max(1.0, pnorm);
    bool bland = false;
    CoreResult res;
    std::vector<char> inW(m, 0);
    for (int i : W) inW[i] = 1;

    for (int it = 0; it < max_iter; ++it) {
        res.iterations = it + 1;
        const int k = pe + static_cast<int>(W.size());
        Mat AW(k, n);
        if (pe) AW.topRows(pe) = Aeq;
        for (int j = 0; j < static_cast<int>(W.size()); ++j) AW.row(pe + j) = Ain.row(W[j]);
        Vec g = P * z + q;
        const double gscale = 1.0 + (g.size() ? g.lpNorm<Eigen::Infinity>() : 0.0);

        Vec d = Vec::Zero(n);
        bool ray = false;
        Eigen::HouseholderQR<Mat> qr;
        Mat Qf;
        if (k > 0) {
            qr.compute(AW.transpose());
            Qf = qr.householderQ() * Mat::Identity(n, n);
        } else {
            Qf = Mat::Identity(n, n);
        }
        const int nz = n - k;
        if (nz > 0) {
            Mat Z = Qf.rightCols(nz);
            Mat Hr = Z.transpose() * P * Z;
            Hr = 0.5 * (Hr + Hr.transpose());
            Vec gr = Z.transpose() * g;
            Eigen::SelfAdjointEigenSolver<Mat> es(Hr);
            const Vec& ev = es.eigenvalues();
            const Mat& V = es.eigenvectors();
            Vec flat = Vec::Zero(nz);
            Vec newton = Vec::Zero(nz);
            for (int j = 0; j < nz; ++j) {
                double c = V.col(j).dot(gr);
                if (ev(j) <= curv_tol) flat += c * V.col(j);
                else newton -= (c / ev(j)) * V.col(j);
            }
            if (flat.lpNorm<Eigen::Infinity>() > 1e-10 * gscale) {
                d = -(Z * flat);
                ray = true;
            } else {
                d = Z * newton;
            }
        }

        const double zscale = 1.0 + z.lpNorm<Eigen::Infinity>();
        if (!ray && d.lpNorm<Eigen::Infinity>() <= 1e-13 * zscale) {
            Vec y = Vec::Zero(k);
            if (k > 0) {
                Vec rhs = -(Qf.leftCols(k).transpose() * g);
                y = qr.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(rhs);
            }
            int drop = -1;
            double worst = -tol * gscale;
            for (int j = 0; j < static_cast<int>(W.size()); ++j) {
                double mu = y(pe + j);
                if (bland) {
                    if (mu < -tol * gscale && (drop < 0 || W[j] < W[drop])) drop = j;
                } else if (mu < worst) {
                    worst = mu;
                    drop = j;
                }
            }
            if (drop < 0) {
                res.z = z;
                res.W = W;
                res.y = y;
                res.status = QpStatus::Optimal;
                return res;
            }
            inW[W[drop]] = 0;
            W.erase(W.begin() + drop);
            continue;
        }

        double step = ray ? std::numeric_limits<double>::infinity() : 1.0;
        int block = -1;
        for (int i = 0; i < m; ++i) {
            if (inW[i]) continue;
            double ad = Ain.row(i).dot(d);
            if (ad <= 1e-14 * (1.0 + Ain.row(i).lpNorm<Eigen::Infinity>()) * d.lpNorm<Eigen::Infinity>()) continue;
            double slack = std::max(0.0, bin(i) - Ain.row(i).dot(z));
            double t = slack / ad;
            if (t < step) {
                step = t;
                block = i;
            }
        }
        if (block < 0 && ray) {
            res.z = z;
            res.W = W;
            res.status = QpStatus::Unbounded;
            return res;
        }
        z += step * d;
        if (block >= 0) {
            W.push_back(block);
            inW[block] = 1;
            bland = step == 0.0;
        } else {
            bland = false;
        }
    }
    res.z = z;
    res.W = W;
    res.status = QpStatus::MaxIter;
    return res;
}

} // namespace detail

inline QpSolution solve_qp(const QpProblem& pr, double tol = kDefaultQpTol) {
    check_qp_dims(pr);
    const int n = pr.n(), pe = pr.p(), m = pr.m();
    const double pnorm = n ? pr.P.cwiseAbs().maxCoeff() : 0.0;
    if ((pr.P - pr.P.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, pnorm))
        throw Error("INVALID_PROBLEM", "P is not symmetric");
    if (n > 0) {
        Eigen::SelfAdjointEigenSolver<Mat> es(pr.P, Eigen::EigenvaluesOnly);
        const double opnorm = es.eigenvalues().cwiseAbs().maxCoeff();
        if (es.eigenvalues().minCoeff() < -1e-9 * opnorm)
            throw Error("INVALID_PROBLEM", "P is not positive semidefinite");
    }
    QpSolution sol;
    sol.z = Vec::Zero(n);
    sol.lambda_eq = Vec::Zero(pe);
    sol.mu_in = Vec::Zero(m);
    const int max_iter = 50 * (n + m) + 10;
    const double bscale = 1.0 + std::max(pe ? pr.b_eq.lpNorm<Eigen::Infinity>() : 0.0,
                                         m ? pr.b_in.lpNorm<Eigen::Infinity>() : 0.0);

    // Independent equality rows and a least-norm point on them.
    std::vector<int> eq_rows;
    Vec z0 = Vec::Zero(n);
    if (pe > 0) {
        Eigen::ColPivHouseholderQR<Mat> cq(pr.A_eq.transpose());
        cq.setThreshold(1e-12);
        const int rank = static_cast<int>(cq.rank());
        for (int j = 0; j < rank; ++j) eq_rows.push_back(cq.colsPermutation().indices()(j));
        std::sort(eq_rows.begin(), eq_rows.end());
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(pr.A_eq);
        z0 = cod.solve(pr.b_eq);
        if ((pr.A_eq * z0 - pr.b_eq).lpNorm<Eigen::Infinity>() > tol * bscale * 10) {
            sol.status = QpStatus::Infeasible;
            return sol;
        }
    }
    Mat Aeq(eq_rows.size(), n);
    for (int j = 0; j < static_cast<int>(eq_rows.size()); ++j) Aeq.row(j) = pr.A_eq.row(eq_rows[j]);

    double viol = 0.0;
    for (int i = 0; i < m; ++i) viol = std::max(viol, pr.A_in.row(i).dot(z0) - pr.b_in(i));
    std::vector<int> W0;
    int iters = 0;
    if (viol > 0.0) {
        // Phase I: min t over (z, t) with A_in z − t ≤ b_in, t ≥ 0.
        Mat P1 = Mat::Zero(n + 1, n + 1);
        Vec q1 = Vec::Zero(n + 1);
        q1(n) = 1.0;
        Mat Aeq1 = Mat::Zero(Aeq.rows(), n + 1);
        if (Aeq.rows()) Aeq1.leftCols(n) = Aeq;
        Mat Ain1 = Mat::Zero(m + 1, n + 1);
        Vec bin1 = Vec::Zero(m + 1);
        Ain1.topLeftCorner(m, n) = pr.A_in;
        Ain1.col(n).head(m).setConstant(-1.0);
        bin1.head(m) = pr.b_in;
        Ain1(m, n) = -1.0;
        Vec s0(n + 1);
        s0 << z0, viol;
        auto r1 = detail::active_set_core(P1, q1, Aeq1, Ain1, bin1, s0, {}, tol, 50 * (n + m + 1) + 10);
        iters += r1.iterations;
        if (r1.status != QpStatus::Optimal || r1.z(n) > tol * bscale) {
            sol.status = QpStatus::Infeasible;
            sol.iterations = iters;
            return sol;
        }
        z0 = r1.z.head(n);
        // Keep only rows that stay independent of the equalities.
        Mat span = Aeq;
        int rank = static_cast<int>(Aeq.rows());
        for (int i : r1.W) {
            if (i >= m) continue;
            Mat trial(span.rows() + 1, n);
            trial << span, pr.A_in.row(i);
            Eigen::ColPivHouseholderQR<Mat> cq(trial.transpose());
            cq.setThreshold(1e-12);
            if (cq.rank() > rank) {
                span = trial;
                ++rank;
                W0.push_back(i);
            }
        }
    }

    auto r = detail::active_set_core(pr.P, pr.q, Aeq, pr.A_in, pr.b_in, z0, W0, tol, max_iter);
    iters += r.iterations;
    sol.iterations = iters;
    sol.status = r.status;
    sol.z = r.z;
    sol.working_set = r.W;
    std::sort(sol.working_set.begin(), sol.working_set.end());
    if (r.status == QpStatus::Optimal) {
        const int pk = static_cast<int>(eq_rows.size());
        // Polish on the final working set with one bordered solve.
        const int k = pk + static_cast<int>(r.W.size());
        Mat AW(k, n);
        Vec bW(k);
        for (int j = 0; j < pk; ++j) {
            AW.row(j) = Aeq.row(j);
            bW(j) = pr.b_eq(eq_rows[j]);
        }
        for (int j = 0; j < static_cast<int>(r.W.size()); ++j) {
            AW.row(pk + j) = pr.A_in.row(r.W[j]);
            bW(pk + j) = pr.b_in(r.W[j]);
        }
        Mat Kkt = Mat::Zero(n + k, n + k);
        Kkt.topLeftCorner(n, n) = pr.P;
        Kkt.topRightCorner(n, k) = AW.transpose();
        Kkt.bottomLeftCorner(k, n) = AW;
        Vec rhs(n + k);
        rhs << -pr.q, bW;
        Eigen::FullPivLU<Mat> lu(Kkt);
        Vec y = r.y;
        if (lu.isInvertible()) {
            Vec s = lu.solve(rhs);
            Vec zp = s.head(n);
            bool feas = true;
            for (int i = 0; i < m; ++i)
                if (pr.A_in.row(i).dot(zp) - pr.b_in(i) > tol * (1.0 + std::abs(pr.b_in(i)))) feas = false;
            bool dual_ok = true;
            for (int j = 0; j < static_cast<int>(r.W.size()); ++j)
                if (s(n + pk + j) < -tol * (1.0 + pr.q.lpNorm<Eigen::Infinity>())) dual_ok = false;
            if (feas && dual_ok && (zp - r.z).lpNorm<Eigen::Infinity>() <= 1e-6 * (1.0 + r.z.lpNorm<Eigen::Infinity>())) {
                sol.z = zp;
                y = s.tail(k);
            }
        } else {
            // Rank-deficient curvature: refit multipliers by least squares at z.
            Vec g = pr.P * sol.z + pr.q;
            if (k > 0) y = AW.transpose().colPivHouseholderQr().solve(-g);
        }
        for (int j = 0; j < pk; ++j) sol.lambda_eq(eq_rows[j]) = y(j);
        for (int j = 0; j < static_cast<int>(r.W.size()); ++j) sol.mu_in(r.W[j]) = std::max(0.0, y(pk + j));
    }
    sol.objective = 0.5 * sol.z.dot(pr.P * sol.z) + pr.q.dot(sol.z);
    for (int i = 0; i < m; ++i)
        if (is_binding(pr.b_in(i) - pr.A_in.row(i).dot(sol.z), pr.b_in(i))) sol.active_set.push_back(i);
    return sol;
}

// First-order response of a solved QP to a perturbation of (P, q, b_eq, b_in)
// with the binding pattern held fixed. A_eq and A_in are not perturbed.
struct QpSensitivity {
    Vec dz;
    Vec dlambda_eq;
    Vec dmu_in;
    Mat primal_kernel;  // directions along which dz is not determined (usually empty)
};

inline QpSensitivity qp_sensitivity(const QpProblem& pr, const QpSolution& sol, const Mat& dP, const Vec& dq,
                                    const Vec& db_eq, const Vec& db_in) {
    const int n = pr.n(), pe = pr.p(), m = pr.m();
    const double mscale = 1.0 + std::max(pe ? sol.lambda_eq.lpNorm<Eigen::Infinity>() : 0.0,
                                         m ? sol.mu_in.lpNorm<Eigen::Infinity>() : 0.0);
    std::vector<int> act;
    for (int i : sol.active_set) {
        if (sol.mu_in(i) <= 1e-8 * mscale)
            throw Error("DEGENERATE_PATTERN", "binding row " + std::to_string(i) + " has a vanishing multiplier");
        act.push_back(i);
    }
    for (int i = 0; i < m; ++i)
        if (sol.mu_in(i) > 1e-8 * mscale && std::find(act.begin(), act.end(), i) == act.end())
            throw Error("DEGENERATE_PATTERN", "row " + std::to_string(i) + " carries a multiplier but is slack");
    const int k = pe + static_cast<int>(act.size());
    Mat Kkt = Mat::Zero(n + k, n + k);
    Kkt.topLeftCorner(n, n) = pr.P;
    Vec rhs = Vec::Zero(n + k);
    rhs.head(n) = -(dq + dP * sol.z);
    for (int j = 0; j < pe; ++j) {
        Kkt.block(0, n + j, n, 1) = pr.A_eq.row(j).transpose();
        Kkt.block(n + j, 0, 1, n) = pr.A_eq.row(j);
        rhs(n + j) = db_eq(j);
    }
    for (int j = 0; j < static_cast<int>(act.size()); ++j) {
        Kkt.block(0, n + pe + j, n, 1) = pr.A_in.row(act[j]).transpose();
        Kkt.block(n + pe + j, 0, 1, n) = pr.A_in.row(act[j]);
        rhs(n + pe + j) = db_in(act[j]);
    }
    Eigen::FullPivLU<Mat> lu(Kkt);
    Vec s;
    Mat primal_kernel(n, 0);
    if (lu.isInvertible()) {
        s = lu.solve(rhs);
    } else {
        Mat ker = lu.kernel();
        if (ker.topRows(n).cwiseAbs().maxCoeff() > 1e-9) primal_kernel = ker.topRows(n);
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(Kkt);
        s = cod.solve(rhs);
        if ((Kkt * s - rhs).lpNorm<Eigen::Infinity>() > 1e-8 * (1.0 + rhs.lpNorm<Eigen::Infinity>()))
            throw Error("DEGENERATE_PATTERN", "reduced KKT system is inconsistent");
    }
    QpSensitivity out;
    out.dz = s.head(n);
    out.dlambda_eq = s.segment(n, pe);
    out.dmu_in = Vec::Zero(m);
    for (int j = 0; j < static_cast<int>(act.size()); ++j) out.dmu_in(act[j]) = s(n + pe + j);
    out.primal_kernel = primal_kernel;
    return out;
}

} // namespace gue
