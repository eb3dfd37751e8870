#include <gtest/gtest.h>

#include "gue/metrics.hpp"

using namespace gue;

namespace {

CoupledSystem pp_three_bus(double f3) {
    auto s = two_route_three_bus();
    s.transport.alpha << 1.0, 1.0;
    s.power.q_diag << 0.0, 1.0, 1.0;
    s.power.f_cap(2) = s.power.f_cap(5) = f3;
    return s;
}

void expect_rel(double a, double b, double rel) {
    EXPECT_LE(std::abs(a - b), rel * (1.0 + std::abs(b))) << a << " vs " << b;
}

} // namespace

TEST(SocialCosts, TwoBusByHand) {
    auto s = two_route_two_bus();
    auto g = solve_gue(s);
    auto c = social_costs(s, g);
    EXPECT_NEAR(c.phi_t, 100.0 * g.x(0) * g.x(0) + g.x(1) * g.x(1), 1e-12);
    EXPECT_NEAR(c.phi_p, 0.5 * g.dispatch.g.squaredNorm(), 1e-10);
    EXPECT_EQ(c.phi_c, c.phi_t + c.phi_p);
}

TEST(Parameter, ParseAndLabel) {
    EXPECT_EQ(Parameter::parse("fbar:2").label(), "fbar:2");
    EXPECT_EQ(Parameter::parse("alpha:0").kind, ParamKind::Alpha);
    EXPECT_EQ(Parameter::parse("rho").kind, ParamKind::Rho);
    for (std::string bad : {"fbar:x", "fbar:1y", "gamma:1", "beta"}) {
        try {
            Parameter::parse(bad);
            FAIL() << bad;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), "INVALID_PARAMETER");
        }
    }
    EXPECT_THROW(get_param(two_route_two_bus(), Parameter::fbar(3)), Error);
}

TEST(Parameter, LineCapacityMovesBothDirections) {
    auto s = with_param(two_route_three_bus(), Parameter::fbar(2), 0.7);
    EXPECT_EQ(s.power.f_cap(2), 0.7);
    EXPECT_EQ(s.power.f_cap(5), 0.7);
    EXPECT_EQ(s.power.f_cap(0), 0.1);
}

TEST(Derivative, KktMatchesFiniteDifference) {
    auto s = two_route_three_bus();
    auto g = solve_gue(s);
    for (auto& p : capacity_parameters(s)) {
        auto k = derivative_kkt(s, g, p);
        auto f = derivative_fd(s, p);
        ASSERT_FALSE(f.at_region_boundary) << p.label();
        expect_rel(k.dphi_t, f.dphi_t, 1e-5);
        expect_rel(k.dphi_p, f.dphi_p, 1e-5);
        expect_rel(k.dphi_c, f.dphi_c, 1e-5);
    }
}

TEST(Derivative, PowerCostLawUnderFreeGeneration) {
    // With Q₁ = 0 and lines 1, 3 binding upward, ∂Φ_P/∂f̄₃ = −g₂(α₁+α₂)/D + (4/3)g₃.
    for (double f3 : {0.05, 0.07, 0.09}) {
        auto s = pp_three_bus(f3);
        auto g = solve_gue(s);
        ASSERT_EQ(g.binding.congested_lines, (std::vector<int>{0, 2})) << f3;
        auto k = derivative_kkt(s, g, Parameter::fbar(2));
        double expect = -g.dispatch.g(1) * 2.0 / 38.0 + 4.0 / 3.0 * g.dispatch.g(2);
        EXPECT_NEAR(k.dphi_p, expect, 1e-8);
        EXPECT_NEAR(k.dphi_p, (16.0 / 9.0 + 4.0 / 1444.0) * f3 - (0.4 / 9.0 + 11.6 / 1444.0), 1e-9);
    }
}

TEST(Derivative, RowVerdictSigns) {
    SensitivityRow r;
    r.parameter = Parameter::alpha(0);
    r.phi = {1.0, 1.0, 2.0};
    r.dphi_t = -0.1;
    r.dphi_p = 0.1;
    r.dphi_c = 0.0;
    EXPECT_EQ(row_verdicts(r), std::vector<BpType>{BpType::TT});
    r.parameter = Parameter::fbar(0);
    EXPECT_EQ(row_verdicts(r), std::vector<BpType>{BpType::PP});
    r.at_region_boundary = true;
    EXPECT_TRUE(row_verdicts(r).empty());
    r.at_region_boundary = false;
    r.error = "SOLVER_FAILURE";
    EXPECT_TRUE(row_verdicts(r).empty());
}

TEST(Screen, ThreeBusPtAndPc) {
    // Lowering f̄₃ in the first pattern raises travel cost: P-T at the default point.
    auto rep = screen_bp(two_route_three_bus(), ScreenMethod::Both);
    EXPECT_TRUE(rep.failures.empty());
    EXPECT_TRUE(rep.has(BpType::PT, "fbar:2"));
    EXPECT_EQ(rep.rows.size(), 2u * capacity_parameters(two_route_three_bus()).size());
}

TEST(Screen, ReportsBaseFailure) {
    auto s = bay_area_ieee9();
    auto failing = [](const CoupledSystem&) -> GueSolution { throw Error("SOLVER_FAILURE", "stub"); };
    auto rep = screen_bp(s, ScreenMethod::KKT, failing);
    ASSERT_EQ(rep.failures.size(), 1u);
    EXPECT_EQ(rep.failures[0].rfind("base: SOLVER_FAILURE", 0), 0u);
    EXPECT_TRUE(rep.rows.empty());
}

TEST(Sweep, ThreeBusPatternShiftNearPointEight) {
    auto t = sweep(two_route_three_bus(), Parameter::fbar(2), 0.04, 2.0, 196);
    ASSERT_EQ(t.rows.size(), 196u);
    const double step = (2.0 - 0.04) / 195.0;
    std::vector<double> switches;
    for (auto& r : t.rows) {
        EXPECT_TRUE(r.error.empty()) << r.theta;
        if (r.pattern_switch) switches.push_back(r.theta);
    }
    ASSERT_FALSE(switches.empty());
    EXPECT_LE(std::abs(switches.front() - 0.8), step);
}

TEST(Sweep, RejectsBadRange) {
    EXPECT_THROW(sweep(two_route_two_bus(), Parameter::fbar(0), 1.0, 1.0, 5), Error);
    EXPECT_THROW(sweep(two_route_two_bus(), Parameter::fbar(0), 0.1, 1.0, 1), Error);
}

TEST(Csv, HeaderAndErrorRow) {
    SensitivityRow r;
    r.parameter = Parameter::fbar(1);
    r.theta = 0.5;
    r.error = "INFEASIBLE_DISPATCH";
    EXPECT_EQ(csv_row(r, false), "fbar:1,0.5,nan,nan,nan,nan,nan,nan,fd,0,ERROR:INFEASIBLE_DISPATCH\n");
    BpReport rep;
    EXPECT_EQ(report_csv(rep), std::string(kCsvHeader) + "\n");
}
