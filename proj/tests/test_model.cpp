#include <gtest/gtest.h>

#include <cstdint>

#include "gue/io.hpp"
#include "gue/model.hpp"

using namespace gue;

namespace {

bool has_error(const ValidationReport& r, const std::string& code) {
    for (auto& e : r.errors)
        if (e.code == code) return true;
    return false;
}

} // namespace

TEST(Validate, BuiltinsAreClean) {
    for (auto& name : builtin_case_names()) {
        auto rep = validate_system(builtin_case(name));
        EXPECT_TRUE(rep.errors.empty()) << name << ": " << rep.summary();
    }
}

TEST(Validate, ChargerMultiplicity) {
    auto s = two_route_two_bus();
    s.coupling.charger_route(1, 0) = 1.0;
    EXPECT_TRUE(has_error(validate_system(s), "CHARGER_MULTIPLICITY"));
}

TEST(Validate, NonpositiveCapacity) {
    auto s = two_route_two_bus();
    s.power.f_cap(0) = 0.0;
    EXPECT_TRUE(has_error(validate_system(s), "NONPOSITIVE_CAPACITY"));
}

TEST(Validate, OtherInvariants) {
    auto s = two_route_two_bus();
    s.transport.alpha(0) = -1.0;
    EXPECT_TRUE(has_error(validate_system(s), "NEGATIVE_ALPHA"));

    s = two_route_two_bus();
    s.transport.link_route(0, 0) = 0.0;
    EXPECT_TRUE(has_error(validate_system(s), "EMPTY_ROUTE"));
    s.transport.zero_length_routes = {0};
    EXPECT_FALSE(has_error(validate_system(s), "EMPTY_ROUTE"));

    s = two_route_two_bus();
    s.coupling.charger_bus(0, 1) = 1.0;
    EXPECT_TRUE(has_error(validate_system(s), "CHARGER_BUS"));

    s = two_route_two_bus();
    s.power.q_diag = Vec::Ones(3);
    EXPECT_TRUE(has_error(validate_system(s), "DIMENSION_MISMATCH"));

    s = two_route_two_bus();
    s.od_demands = {{{0}, 0.5}};
    EXPECT_TRUE(has_error(validate_system(s), "OD_PARTITION"));

    EXPECT_THROW(require_valid(s), Error);
}

TEST(Validate, ZeroSlopeIsOnlyAWarning) {
    auto s = two_route_two_bus();
    s.transport.alpha(1) = 0.0;
    auto rep = validate_system(s);
    EXPECT_TRUE(rep.errors.empty());
    ASSERT_FALSE(rep.warnings.empty());
    EXPECT_EQ(rep.warnings[0].code, "ZERO_ALPHA");
}

TEST(Builtin, ThreeBusShiftFactor) {
    auto s = two_route_three_bus();
    Mat H(6, 3);
    H << 0, -0.8, -0.6, 0, 0.2, 0.4, 0, -0.2, 0.6, 0, 0.8, 0.6, 0, -0.2, -0.4, 0, 0.2, -0.6;
    EXPECT_EQ(s.power.shift_factor, H);
    EXPECT_EQ(twin_row(s.power, 2), 5);
    EXPECT_EQ(canonical_rows(s.power), (std::vector<int>{0, 1, 2}));
}

TEST(Builtin, BayAreaTable) {
    auto s = bay_area_ieee9();
    Vec q(9), mu(9), d0(9), f(9), a(7), b(7);
    q << 0.11, 0.085, 0.1225, 0, 0, 0, 0, 0, 0;
    mu << 5, 1.2, 1, 0, 0, 0, 0, 0, 0;
    d0 << 0, 480, 0, 10, 160, 80, 0, 40, 120;
    f << 250, 250, 25, 300, 10, 250, 250, 250, 250;
    a << 3.2e-3, 3.2e-3, 3.2e-3, 6.4e-3, 9.6e-3, 6.4e-3, 9.6e-3;
    b << 1.6, 20.8, 22.4, 19.2, 12.8, 12.8, 19.2;
    EXPECT_EQ(s.power.q_diag, q);
    EXPECT_EQ(s.power.mu, mu);
    EXPECT_EQ(s.power.base_load, d0);
    EXPECT_EQ(s.power.f_cap.head(9), f);
    EXPECT_EQ(s.power.f_cap.tail(9), f);
    EXPECT_EQ(s.transport.alpha, a);
    EXPECT_EQ(s.transport.beta, b);
    EXPECT_EQ(s.n_routes(), 10);
    EXPECT_EQ(s.coupling.n_chargers(), 4);
    EXPECT_EQ(s.coupling.demand, 15000.0);
    EXPECT_EQ(s.coupling.rho, 0.02);
    // DC flows of a balanced injection do not depend on the reference bus.
    Vec p = Vec::Zero(9);
    p(0) = 1.0;
    p(4) = -1.0;
    Vec flows = s.power.shift_factor.topRows(9) * p;
    Mat H2 = detail::dc_ptdf(9, ieee9_branches(), {0.0576, 0.092, 0.17, 0.0586, 0.1008, 0.072, 0.0625, 0.161, 0.085}, 4);
    EXPECT_LE((flows - H2 * p).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Builtin, UnknownName) {
    try {
        builtin_case("nope");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "UNKNOWN_CASE");
    }
}

TEST(ChargingLoad, TwoBus) {
    auto s = two_route_two_bus();
    s.coupling.rho = 1.0;
    Vec x(2);
    x << 0.3, 0.7;
    EXPECT_LE((charging_load(s, x) - x).norm(), 1e-15);
    s.coupling.rho = 4.0;
    Vec e1 = Vec::Unit(2, 0);
    Vec d = charging_load(s, e1);
    EXPECT_EQ(d(0), 4.0);
    EXPECT_EQ(d(1), 0.0);
    EXPECT_THROW(charging_load(s, Vec::Ones(3)), Error);
}

TEST(ChargingLoad, BayAreaMatchesIntegerProduct) {
    auto s = bay_area_ieee9();
    Vec x = Vec::Constant(10, 1500.0);
    // Integer arithmetic on the incidence entries; ρ = 2/100 applied last.
    std::vector<std::int64_t> acc(9, 0);
    for (int c = 0; c < 4; ++c)
        for (int r = 0; r < 10; ++r)
            for (int i = 0; i < 9; ++i)
                acc[i] += static_cast<std::int64_t>(s.coupling.charger_bus(c, i)) *
                          static_cast<std::int64_t>(s.coupling.charger_route(c, r)) * 1500;
    Vec d = charging_load(s, x);
    for (int i = 0; i < 9; ++i) EXPECT_NEAR(d(i), acc[i] * 2.0 / 100.0, 1e-12) << i;
    Vec with_base = charging_load(s, x, true);
    EXPECT_NEAR(with_base.sum() - s.power.base_load.sum(), 0.02 * 15000.0, 1e-9);
}

TEST(ChargingLoad, LinearInFlow) {
    auto s = bay_area_ieee9();
    Vec x1 = Vec::LinSpaced(10, 0.0, 9.0), x2 = Vec::LinSpaced(10, 5.0, -4.0);
    Vec lhs = charging_load(s, 2.5 * x1 - 0.5 * x2);
    Vec rhs = 2.5 * charging_load(s, x1) - 0.5 * charging_load(s, x2);
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Io, RoundTripIsExact) {
    for (auto& name : builtin_case_names()) {
        auto s = builtin_case(name);
        std::string text = save_system(s);
        auto back = load_system(text);
        EXPECT_EQ(save_system(back), text) << name;
        EXPECT_EQ(back.transport.link_route, s.transport.link_route);
        EXPECT_EQ(back.power.shift_factor, s.power.shift_factor);
        EXPECT_EQ(back.coupling.rho, s.coupling.rho);
    }
}

TEST(Io, MissingRho) {
    auto j = system_to_json(two_route_two_bus());
    j["coupling"].erase("rho");
    try {
        load_system(j.dump());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "PARSE_ERROR");
        EXPECT_NE(std::string(e.what()).find("rho"), std::string::npos);
    }
}

TEST(Io, SyntaxErrorReportsPosition) {
    try {
        load_system("{\n  \"transport\": [1,,2]\n}");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "PARSE_ERROR");
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
}

TEST(Io, InvalidSystemIsRejected) {
    auto j = system_to_json(two_route_two_bus());
    j["power"]["f_cap"] = {0.0};
    try {
        load_system(j.dump());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "VALIDATION_ERROR");
    }
}

TEST(Io, CaseStudyScale) {
    auto j = system_to_json(bay_area_ieee9());
    auto s = load_system(j.dump());
    EXPECT_EQ(s.coupling.demand, 15000.0);
    EXPECT_EQ(s.coupling.rho, 0.02);
    EXPECT_TRUE(s.power.enforce_nonneg_gen);
}
