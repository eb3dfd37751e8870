#pragma once

// Command-line front end. Exit codes: 0 success, 1 domain error (one code on
// stderr), 2 usage error. Files are written to a temporary name and renamed.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gue/equilibrium.hpp"
#include "gue/io.hpp"
#include "gue/metrics.hpp"
#include "gue/model.hpp"
#include "gue/pricing.hpp"
#include "gue/radial.hpp"

namespace gue {

// Sweep CSV to gnuplot data: one block per social-cost metric, blocks
// separated by two blank lines, columns located by header name.
inline std::string render_plot_data(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    auto split = [](const std::string& l) {
        std::vector<std::string> out;
        std::string cell;
        std::istringstream ls(l);
        while (std::getline(ls, cell, ',')) out.push_back(cell);
        if (!l.empty() && l.back() == ',') out.push_back("");
        return out;
    };
    if (!std::getline(in, line) || line.empty()) throw Error("MALFORMED_CSV", "missing header");
    if (line.back() == '\r') line.pop_back();
    auto header = split(line);
    std::map<std::string, int> col;
    for (int i = 0; i < static_cast<int>(header.size()); ++i) col[header[i]] = i;
    const std::vector<std::string> metrics = {"phi_t", "phi_p", "phi_c"};
    for (auto name : {"theta", "phi_t", "phi_p", "phi_c"})
        if (!col.count(name)) throw Error("MALFORMED_CSV", std::string("missing column '") + name + "'");
    std::vector<std::vector<double>> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != header.size())
            throw Error("MALFORMED_CSV", "line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                                             " fields, header has " + std::to_string(header.size()));
        std::vector<double> r;
        for (auto name : {"theta", "phi_t", "phi_p", "phi_c"}) {
            const std::string& c = cells[col[name]];
            char* end = nullptr;
            double v = std::strtod(c.c_str(), &end);
            if (c.empty() || end != c.c_str() + c.size())
                throw Error("MALFORMED_CSV", "line " + std::to_string(lineno) + ": '" + c + "' is not a number");
            r.push_back(v);
        }
        rows.push_back(r);
    }
    if (rows.empty()) throw Error("MALFORMED_CSV", "no data rows");
    std::string out;
    for (int m = 0; m < 3; ++m) {
        if (m) out += "\n\n";
        out += "# theta " + metrics[m] + "\n";
        for (auto& r : rows) out += detail::fmt12(r[0]) + " " + detail::fmt12(r[m + 1]) + "\n";
    }
    return out;
}

namespace cli {

struct Options {
    double tol = kDefaultQpTol;
    double fd_step = -1.0;
    bool quiet = false;
    std::string system_path, case_name, out_path;
    std::string policy = "lmp", prices;
    std::string method = "kkt";
    std::string param;
    double from = 0.0, to = 1.0;
    int steps = 50;
    double revenue_floor = -INFINITY;
    std::string pi_lo, pi_hi;
    int budget = 20;
    unsigned long long seed = 1;
    std::string in_path;
};

inline void write_atomic(const std::string& path, const std::string& text) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("IO_ERROR", "cannot write '" + path + "'");
        f << text;
        f.flush();
        if (!f) throw Error("IO_ERROR", "write failed for '" + path + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error("IO_ERROR", "cannot move output into '" + path + "'");
    }
}

inline void emit(const Options& o, const std::string& text) {
    if (o.out_path.empty()) {
        std::cout << text;
    } else {
        write_atomic(o.out_path, text);
        if (!o.quiet) std::cerr << "wrote " << o.out_path << "\n";
    }
}

inline Vec parse_list(const std::string& s, const std::string& what) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        char* end = nullptr;
        double d = std::strtod(cell.c_str(), &end);
        if (cell.empty() || end != cell.c_str() + cell.size())
            throw Error("INVALID_ARGUMENT", what + ": '" + cell + "' is not a number");
        v.push_back(d);
    }
    if (v.empty()) throw Error("INVALID_ARGUMENT", what + " is empty");
    return Eigen::Map<Vec>(v.data(), static_cast<int>(v.size()));
}

inline Vec broadcast(const Vec& v, int n, const std::string& what) {
    if (v.size() == 1) return Vec::Constant(n, v(0));
    if (v.size() != n) throw Error("DIMENSION_MISMATCH", what + " needs 1 or " + std::to_string(n) + " values");
    return v;
}

inline CoupledSystem load(const Options& o) {
    if (!o.case_name.empty()) return builtin_case(o.case_name);
    if (o.system_path.empty()) throw Error("INVALID_ARGUMENT", "one of --system or --case is required");
    return load_system_file(o.system_path);
}

inline PricingPolicy policy(const Options& o, const CoupledSystem& s) {
    if (o.policy == "static") {
        if (o.prices.empty()) throw Error("INVALID_ARGUMENT", "--policy static needs --prices");
        return PricingPolicy::fixed(broadcast(parse_list(o.prices, "--prices"), s.n_routes(), "--prices"));
    }
    if (!o.prices.empty()) throw Error("INVALID_ARGUMENT", "--prices applies to --policy static only");
    return PricingPolicy::parse(o.policy);
}

inline void warn(const Options& o, const GueSolution& g) {
    if (o.quiet) return;
    for (auto& w : g.warnings) std::cerr << "warning: " << w << "\n";
}

inline int cmd_solve(const Options& o) {
    auto s = load(o);
    auto pol = policy(o, s);
    auto g = gue_under_policy(s, pol, o.tol);
    warn(o, g);
    emit(o, gue_to_json(s, g).dump(2) + "\n");
    return 0;
}

inline ScreenMethod screen_method(const std::string& m) {
    if (m == "fd") return ScreenMethod::FD;
    if (m == "kkt") return ScreenMethod::KKT;
    if (m == "both") return ScreenMethod::Both;
    throw Error("INVALID_ARGUMENT", "unknown method '" + m + "'");
}

inline int cmd_screen(const Options& o) {
    auto s = load(o);
    auto pol = policy(o, s);
    auto rep = screen_under_policy(s, pol, screen_method(o.method), o.fd_step, o.tol);
    if (!o.quiet)
        for (auto& f : rep.failures) std::cerr << "note: " << f << "\n";
    if (!rep.failures.empty() && rep.failures.front().rfind("base: ", 0) == 0) {
        // The base equilibrium itself failed; surface its code.
        const std::string& f = rep.failures.front();
        std::string rest = f.substr(6);
        auto c2 = rest.find(':');
        throw Error(rest.substr(0, c2), c2 == std::string::npos ? rest : rest.substr(c2 + 2));
    }
    emit(o, report_csv(rep));
    return 0;
}

inline int cmd_sweep(const Options& o) {
    auto s = load(o);
    auto pol = policy(o, s);
    if (o.param.empty()) throw Error("INVALID_ARGUMENT", "--param is required");
    auto p = Parameter::parse(o.param);
    auto t = sweep(s, p, o.from, o.to, o.steps, policy_solver(pol, o.tol), o.fd_step);
    emit(o, sweep_csv(t));
    return 0;
}

namespace detail {

using gue::detail::ints_json;
using gue::detail::mat_json;
using gue::detail::vec_json;

inline json verdicts_json(const ConditionVerdicts& v) {
    json j;
    j["omega"] = vec_json(v.omega);
    j["omega_tilde"] = vec_json(v.omega_tilde);
    j["psi"] = vec_json(v.psi);
    j["varsigma"] = vec_json(v.varsigma);
    j["beta_homogeneous"] = v.beta_homogeneous;
    j["forms_agree"] = v.forms_agree;
    j["route_at"] = v.route_at;
    json e = json::array();
    for (auto& c : v.entries) {
        json row = {{"type", to_string(c.type)}, {"target", c.target}, {"verdict", to_string(c.verdict)}, {"value", c.value}};
        if (c.from >= 0) {
            row["from"] = c.from;
            row["to"] = c.to;
        }
        e.push_back(row);
    }
    j["entries"] = e;
    return j;
}

inline json implications_json(const ImplicationReport& r) {
    return {{"checked", r.checked}, {"violations", r.violations}};
}

} // namespace detail

inline int cmd_reduce(const Options& o) {
    auto s = load(o);
    auto g = solve_gue(s, o.tol);
    warn(o, g);
    auto rep = check_radial(s, g);
    const auto& a = rep.agg;
    using namespace detail;
    json j;
    json subs = json::array();
    for (auto& sn : a.subnetworks)
        subs.push_back({{"buses", sn.buses}, {"internal_lines", sn.internal_lines}, {"lmp", sn.lmp}});
    j["subnetworks"] = subs;
    json bs = json::array();
    for (auto& b : a.bundles)
        bs.push_back({{"subnetwork", b.subnetwork}, {"routes", b.routes}, {"flow", b.aggregate_flow}, {"cost", b.common_cost}});
    j["bundles"] = bs;
    j["empty_subnetworks"] = a.empty_subnetworks;
    json ties = json::array();
    for (auto& t : a.tie_lines) ties.push_back({{"row", t.row}, {"from", t.from}, {"to", t.to}, {"cap", t.cap}});
    j["tie_lines"] = ties;
    j["alpha_hat"] = mat_json(a.alpha_hat);
    j["beta_hat"] = vec_json(a.beta_hat);
    j["q_hat"] = vec_json(a.q_hat);
    j["mu_hat"] = vec_json(a.mu_hat);
    j["s_hat"] = mat_json(a.s_hat);
    j["f_hat"] = vec_json(a.f_hat);
    j["gamma"] = mat_json(a.gamma);
    j["D"] = a.D;
    j["b_ul_inv"] = mat_json(a.b_ul_inv);
    j["x_hat"] = vec_json(a.x_hat);
    j["lambda_hat"] = vec_json(a.lambda_hat);
    j["residual"] = a.residual;
    j["atbp"] = verdicts_json(rep.atbp);
    j["pbp"] = verdicts_json(rep.pbp);
    j["links"] = verdicts_json(rep.links);
    json cl = json::array();
    for (auto& c : rep.classical) cl.push_back(verdicts_json(c));
    j["classical"] = cl;
    j["separate_bundles"] = rep.separate_bundles;
    j["inconsistencies"] = rep.inconsistencies;
    try {
        auto fc = check_fully_congested(s, g);
        j["fully_congested"] = verdicts_json(fc);
        j["implications"] = implications_json(bp_relations(fc));
    } catch (const Error& e) {
        j["fully_congested"] = {{"skipped", e.what()}};
    }
    emit(o, j.dump(2) + "\n");
    return 0;
}

inline int cmd_mitigate(const Options& o) {
    auto s = load(o);
    const int nR = s.n_routes();
    PiBox box;
    if (o.pi_lo.empty() || o.pi_hi.empty()) {
        auto g = solve_gue(s, o.tol);
        double top = route_prices(s, g.dispatch.lambda).cwiseAbs().maxCoeff();
        box.lo = Vec::Zero(nR);
        box.hi = Vec::Constant(nR, 2.0 * top + 1.0);
    }
    if (!o.pi_lo.empty()) box.lo = broadcast(parse_list(o.pi_lo, "--pi-lo"), nR, "--pi-lo");
    if (!o.pi_hi.empty()) box.hi = broadcast(parse_list(o.pi_hi, "--pi-hi"), nR, "--pi-hi");
    if ((box.hi - box.lo).minCoeff() < 0) throw Error("INVALID_RANGE", "--pi-lo exceeds --pi-hi");
    auto walk = region_walk(s, box, o.budget, o.revenue_floor, o.seed);
    using namespace detail;
    json j;
    j["status"] = to_string(walk.status);
    j["samples"] = walk.samples;
    j["degenerate_samples"] = walk.degenerate_samples;
    j["regions_visited"] = static_cast<int>(walk.probes.size());
    const RegionProbe* pick = nullptr;
    for (auto& p : walk.probes)
        if (!pick || p.result.status == MitigationStatus::Found || p.result.min_slack > pick->result.min_slack) {
            if (pick && pick->result.status == MitigationStatus::Found) break;
            pick = &p;
        }
    if (pick) {
        const auto& r = pick->result;
        const auto& cr = pick->region;
        j["pi"] = vec_json(r.pi);
        j["region"] = {{"zero_routes", cr.pattern.zero_routes},
                       {"congested_lines", cr.pattern.congested_lines},
                       {"K", mat_json(cr.K)},
                       {"v", vec_json(cr.v)},
                       {"C", mat_json(cr.C)},
                       {"w", vec_json(cr.w)},
                       {"region_status", to_string(r.status)}};
        j["revenue"] = r.revenue;
        j["constraints"] = r.certified_constraints;
        j["constraint_slacks"] = r.constraint_slacks;
        j["min_slack"] = r.min_slack;
        j["upper_bound"] = std::isfinite(r.upper_bound) ? json(r.upper_bound) : json(nullptr);
    } else {
        j["pi"] = nullptr;
        j["region"] = nullptr;
        j["revenue"] = nullptr;
        j["constraint_slacks"] = json::array();
    }
    json probes = json::array();
    for (auto& p : walk.probes)
        probes.push_back({{"sample", p.sample}, {"zero_routes", p.region.pattern.zero_routes},
                          {"congested_lines", p.region.pattern.congested_lines},
                          {"status", to_string(p.result.status)}, {"min_slack", p.result.min_slack}});
    j["probes"] = probes;
    emit(o, j.dump(2) + "\n");
    return 0;
}

inline int cmd_case(const Options& o) {
    if (o.case_name.empty()) {
        std::string out;
        for (auto& n : builtin_case_names()) out += n + "\n";
        emit(o, out);
        return 0;
    }
    emit(o, save_system(builtin_case(o.case_name)));
    return 0;
}

inline int cmd_plot(const Options& o) {
    emit(o, render_plot_data(read_file(o.in_path)));
    return 0;
}

inline int run(int argc, const char* const* argv) {
    CLI::App app{"Generalized user equilibrium of coupled power and transportation networks"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    Options o;
    app.add_option("--tol", o.tol, "QP tolerance")->check(CLI::PositiveNumber);
    app.add_option("--fd-step", o.fd_step, "finite-difference step (default scales with the parameter)");
    app.add_flag("--quiet", o.quiet, "suppress notes and warnings on stderr");

    auto add_system = [&](CLI::App* c) {
        auto sys = c->add_option("--system", o.system_path, "system JSON file");
        auto cs = c->add_option("--case", o.case_name, "built-in case name");
        sys->excludes(cs);
        cs->excludes(sys);
    };
    auto add_policy = [&](CLI::App* c) {
        c->add_option("--policy", o.policy, "lmp, static, opt_t, opt_p or opt_c")
            ->check(CLI::IsMember({"lmp", "static", "opt_t", "opt_p", "opt_c"}));
        c->add_option("--prices", o.prices, "static route prices, comma separated");
    };

    auto solve = app.add_subcommand("solve", "solve the equilibrium and dump it as JSON");
    add_system(solve);
    add_policy(solve);
    solve->add_option("--out", o.out_path);

    auto screen = app.add_subcommand("screen", "screen every capacity parameter for paradoxes (CSV)");
    add_system(screen);
    add_policy(screen);
    screen->add_option("--method", o.method)->check(CLI::IsMember({"fd", "kkt", "both"}));
    screen->add_option("--out", o.out_path);

    auto sw = app.add_subcommand("sweep", "sweep one parameter (CSV)");
    add_system(sw);
    add_policy(sw);
    sw->add_option("--param", o.param, "alpha:<l>, fbar:<l>, rho or qscale (0-based)")->required();
    sw->add_option("--from", o.from)->required();
    sw->add_option("--to", o.to)->required();
    sw->add_option("--steps", o.steps)->check(CLI::Range(2, 1000000));
    sw->add_option("--out", o.out_path);

    auto red = app.add_subcommand("reduce", "aggregate a radial system and report paradox conditions (JSON)");
    add_system(red);
    red->add_option("--out", o.out_path);

    auto mit = app.add_subcommand("mitigate", "search static prices that remove road paradoxes (JSON)");
    add_system(mit);
    mit->add_option("--revenue-floor", o.revenue_floor);
    mit->add_option("--pi-lo", o.pi_lo, "lower price bound, scalar or per route");
    mit->add_option("--pi-hi", o.pi_hi, "upper price bound, scalar or per route");
    mit->add_option("--budget", o.budget, "regions to examine")->check(CLI::Range(1, 100000));
    mit->add_option("--seed", o.seed, "offset into the sampling sequence");
    mit->add_option("--out", o.out_path);

    auto cs = app.add_subcommand("case", "export a built-in case as system JSON (no name: list cases)");
    cs->add_option("--name", o.case_name);
    cs->add_option("--out", o.out_path);

    auto plot = app.add_subcommand("plot", "turn a sweep CSV into gnuplot data blocks");
    plot->add_option("--in", o.in_path)->required();
    plot->add_option("--out", o.out_path);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        if (*solve) return cmd_solve(o);
        if (*screen) return cmd_screen(o);
        if (*sw) return cmd_sweep(o);
        if (*red) return cmd_reduce(o);
        if (*mit) return cmd_mitigate(o);
        if (*cs) return cmd_case(o);
        if (*plot) return cmd_plot(o);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: INTERNAL: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

} // namespace cli
} // namespace gue
