#pragma once

// JSON system format and solution dumps. Matrices are dense row-major
// arrays; doubles are written with shortest round-trip precision.

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "gue/equilibrium.hpp"
#include "gue/model.hpp"

namespace gue {

using json = nlohmann::json;

namespace detail {

inline json vec_json(const Vec& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline json mat_json(const Mat& m) {
    json a = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        a.push_back(row);
    }
    return a;
}

inline json ints_json(const std::vector<int>& v) { return json(v); }

[[noreturn]] inline void schema_error(const std::string& where, const std::string& what) {
    throw Error("PARSE_ERROR", where + ": " + what);
}

inline const json& need(const json& j, const char* key, const std::string& where) {
    if (!j.is_object()) schema_error(where, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) schema_error(where, std::string("missing key \"") + key + "\"");
    return *it;
}

inline double num(const json& j, const std::string& where) {
    if (!j.is_number()) schema_error(where, "expected a number");
    return j.get<double>();
}

inline Vec vec_from(const json& j, const std::string& where) {
    if (!j.is_array()) schema_error(where, "expected an array");
    Vec v(static_cast<int>(j.size()));
    for (size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = num(j[i], where);
    return v;
}

inline Mat mat_from(const json& j, const std::string& where) {
    if (!j.is_array()) schema_error(where, "expected an array of rows");
    const int rows = static_cast<int>(j.size());
    int cols = -1;
    for (auto& r : j) {
        if (!r.is_array()) schema_error(where, "expected an array of rows");
        if (cols < 0) cols = static_cast<int>(r.size());
        else if (cols != static_cast<int>(r.size())) schema_error(where, "ragged matrix");
    }
    Mat m(rows, std::max(cols, 0));
    for (int i = 0; i < rows; ++i)
        for (int k = 0; k < cols; ++k) m(i, k) = num(j[i][k], where);
    return m;
}

inline std::vector<int> ints_from(const json& j, const std::string& where) {
    if (!j.is_array()) schema_error(where, "expected an array");
    std::vector<int> v;
    for (auto& e : j) {
        if (!e.is_number_integer() && !(e.is_number() && e.get<double>() == std::floor(e.get<double>())))
            schema_error(where, "expected integers");
        v.push_back(static_cast<int>(e.get<double>()));
    }
    return v;
}

inline std::pair<int, int> line_col(const std::string& text, size_t byte) {
    int line = 1, col = 1;
    for (size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

} // namespace detail

inline json system_to_json(const CoupledSystem& s) {
    using namespace detail;
    json j;
    j["transport"] = {{"alpha", vec_json(s.transport.alpha)},
                      {"beta", vec_json(s.transport.beta)},
                      {"link_route", mat_json(s.transport.link_route)}};
    if (!s.transport.zero_length_routes.empty()) j["transport"]["zero_length_routes"] = s.transport.zero_length_routes;
    const auto& p = s.power;
    j["power"] = {{"shift_factor", mat_json(p.shift_factor)},
                  {"f_cap", vec_json(p.f_cap)},
                  {"q_diag", vec_json(p.q_diag)},
                  {"mu", vec_json(p.mu)},
                  {"base_load", vec_json(p.base_load)},
                  {"generator_mask", ints_json(p.generator_mask)},
                  {"enforce_nonneg_gen", p.enforce_nonneg_gen}};
    if (!p.lines.empty()) {
        json ls = json::array();
        for (auto& l : p.lines) ls.push_back({l[0], l[1]});
        j["power"]["lines"] = ls;
    }
    j["coupling"] = {{"charger_route", mat_json(s.coupling.charger_route)},
                     {"charger_bus", mat_json(s.coupling.charger_bus)},
                     {"rho", s.coupling.rho},
                     {"demand", s.coupling.demand}};
    if (!s.od_demands.empty()) {
        json ods = json::array();
        for (auto& od : s.od_demands) ods.push_back({{"routes", od.routes}, {"demand", od.demand}});
        j["od_demands"] = ods;
    }
    return j;
}

inline std::string save_system(const CoupledSystem& s) { return system_to_json(s).dump(2) + "\n"; }

inline CoupledSystem system_from_json(const json& j) {
    using namespace detail;
    CoupledSystem s;
    const json& t = need(j, "transport", "root");
    s.transport.alpha = vec_from(need(t, "alpha", "transport"), "transport.alpha");
    s.transport.beta = vec_from(need(t, "beta", "transport"), "transport.beta");
    s.transport.link_route = mat_from(need(t, "link_route", "transport"), "transport.link_route");
    if (t.contains("zero_length_routes"))
        s.transport.zero_length_routes = ints_from(t["zero_length_routes"], "transport.zero_length_routes");
    if (s.transport.link_route.rows() == 0) s.transport.link_route.resize(0, 0);

    const json& p = need(j, "power", "root");
    auto& pw = s.power;
    pw.shift_factor = mat_from(need(p, "shift_factor", "power"), "power.shift_factor");
    pw.f_cap = vec_from(need(p, "f_cap", "power"), "power.f_cap");
    pw.q_diag = vec_from(need(p, "q_diag", "power"), "power.q_diag");
    pw.mu = vec_from(need(p, "mu", "power"), "power.mu");
    const int nP = static_cast<int>(pw.q_diag.size());
    if (pw.shift_factor.rows() == 0) pw.shift_factor.resize(0, nP);
    pw.base_load = p.contains("base_load") ? vec_from(p["base_load"], "power.base_load") : Vec::Zero(nP);
    pw.generator_mask = p.contains("generator_mask") ? ints_from(p["generator_mask"], "power.generator_mask")
                                                     : std::vector<int>(nP, 1);
    if (p.contains("enforce_nonneg_gen")) {
        if (!p["enforce_nonneg_gen"].is_boolean()) schema_error("power.enforce_nonneg_gen", "expected a boolean");
        pw.enforce_nonneg_gen = p["enforce_nonneg_gen"].get<bool>();
    }
    if (p.contains("lines")) {
        for (auto& l : p["lines"]) {
            auto v = ints_from(l, "power.lines");
            if (v.size() != 2) schema_error("power.lines", "each line is a [from, to] pair");
            pw.lines.push_back({v[0], v[1]});
        }
    }

    const json& c = need(j, "coupling", "root");
    s.coupling.charger_route = mat_from(need(c, "charger_route", "coupling"), "coupling.charger_route");
    s.coupling.charger_bus = mat_from(need(c, "charger_bus", "coupling"), "coupling.charger_bus");
    s.coupling.rho = num(need(c, "rho", "coupling"), "coupling.rho");
    s.coupling.demand = c.contains("demand") ? num(c["demand"], "coupling.demand") : 1.0;
    if (j.contains("od_demands")) {
        if (!j["od_demands"].is_array()) schema_error("od_demands", "expected an array");
        for (auto& od : j["od_demands"]) {
            OdPair o;
            o.routes = ints_from(need(od, "routes", "od_demands"), "od_demands.routes");
            o.demand = num(need(od, "demand", "od_demands"), "od_demands.demand");
            s.od_demands.push_back(o);
        }
    }
    return s;
}

inline CoupledSystem load_system(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        auto [line, col] = detail::line_col(text, e.byte > 0 ? e.byte - 1 : 0);
        throw Error("PARSE_ERROR", "line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + e.what());
    }
    CoupledSystem s = system_from_json(j);
    require_valid(s);
    return s;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("PARSE_ERROR", "cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline CoupledSystem load_system_file(const std::string& path) { return load_system(read_file(path)); }

inline json gue_to_json(const CoupledSystem& s, const GueSolution& g) {
    using namespace detail;
    const Vec tc = travel_cost(s, g.x);
    const double phi_t = g.x.dot(tc);
    const double phi_p = g.dispatch.cost;
    json j;
    j["x"] = vec_json(g.x);
    j["g"] = vec_json(g.dispatch.g);
    j["p"] = vec_json(g.dispatch.p);
    j["lambda"] = vec_json(g.dispatch.lambda);
    j["eta"] = vec_json(g.dispatch.eta);
    j["nu"] = g.nu.size() == 1 ? json(g.nu(0)) : vec_json(g.nu);
    j["phi_t"] = phi_t;
    j["phi_p"] = phi_p;
    j["phi_c"] = phi_t + phi_p;
    j["congested_lines"] = g.binding.congested_lines;
    j["zero_routes"] = g.binding.zero_routes;
    return j;
}

} // namespace gue
