#include <cmath>
#include <limits>

#include "doctest.h"
#include "support.hpp"

#include "mbpep/error.hpp"
#include "mbpep/piloss.hpp"

using namespace mbpep;
using namespace mbpep::piloss;

namespace {

IntervalBatch batch_of(std::initializer_list<double> lo, std::initializer_list<double> up,
                       std::initializer_list<double> y)
{
    IntervalBatch b;
    b.lower = Eigen::Map<const Eigen::VectorXd>(lo.begin(), static_cast<Eigen::Index>(lo.size()));
    b.upper = Eigen::Map<const Eigen::VectorXd>(up.begin(), static_cast<Eigen::Index>(up.size()));
    b.target = Eigen::Map<const Eigen::VectorXd>(y.begin(), static_cast<Eigen::Index>(y.size()));
    return b;
}

using Vec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

// Extended-precision reference loss; bounds are passed separately so they can
// be perturbed below double resolution.
long double oracle_loss(const Vec& lo, const Vec& up, const Eigen::VectorXd& y, const LossConfig& cfg)
{
    long double width = 0.0L, cover = 0.0L;
    const long double n = static_cast<long double>(y.size());
    const long double s = cfg.softness;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const long double k = 1.0L / (1.0L + std::exp(-s * (up[i] - y[i]))) / (1.0L + std::exp(-s * (y[i] - lo[i])));
        width += (up[i] - lo[i]) * k;
        cover += k;
    }
    const long double deficit = static_cast<long double>(cfg.confidence) - cover / n;
    return width / n + static_cast<long double>(cfg.penalty_c) * std::max(0.0L, deficit);
}

double oracle_loss(const IntervalBatch& b, const LossConfig& cfg)
{
    return static_cast<double>(oracle_loss(b.lower.cast<long double>(), b.upper.cast<long double>(), b.target, cfg));
}

// Central differences of the reference loss with respect to every bound.
BoundGradient oracle_grad(const IntervalBatch& b, const LossConfig& cfg, long double h)
{
    Vec lo = b.lower.cast<long double>(), up = b.upper.cast<long double>();
    BoundGradient g{Eigen::VectorXd(b.size()), Eigen::VectorXd(b.size())};
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        for (int side = 0; side < 2; ++side) {
            Vec& v = side == 0 ? lo : up;
            const long double keep = v[i];
            v[i] = keep + h;
            const long double fp = oracle_loss(lo, up, b.target, cfg);
            v[i] = keep - h;
            const long double fm = oracle_loss(lo, up, b.target, cfg);
            v[i] = keep;
            (side == 0 ? g.lower : g.upper)[i] = static_cast<double>((fp - fm) / (2 * h));
        }
    }
    return g;
}

} // namespace

TEST_CASE("hard indicator is boundary inclusive")
{
    CHECK(hard_indicator(batch_of({0}, {2}, {1}))[0] == 1.0);
    CHECK(hard_indicator(batch_of({0}, {2}, {3}))[0] == 0.0);
    CHECK(hard_indicator(batch_of({0}, {2}, {2}))[0] == 1.0);
    CHECK(hard_indicator(batch_of({0}, {2}, {0}))[0] == 1.0);
    CHECK(hard_indicator(batch_of({1}, {1}, {1}))[0] == 1.0);
}

TEST_CASE("picp_hard is the captured fraction")
{
    CHECK(picp_hard(batch_of({0, 0}, {1, 1}, {0.5, 0.2})) == 1.0);
    CHECK(picp_hard(batch_of({0, 0}, {1, 1}, {2, -1})) == 0.0);
    CHECK(picp_hard(batch_of({0, 0, 0, 0}, {1, 1, 1, 1}, {0.5, 3, 0.1, 1})) == 0.75);
}

TEST_CASE("mpiw over all samples and over captured samples")
{
    CHECK(mpiw_all(batch_of({0, 1, 2}, {1.5, 2.5, 3.5}, {0, 0, 0})) == doctest::Approx(1.5));
    CHECK(mpiw_all(batch_of({0, 0}, {2, 4}, {0, 0})) == 3.0);
    CHECK(mpiw_all(batch_of({1, 2}, {1, 2}, {0, 0})) == 0.0);

    CHECK(mpiw_captured(batch_of({0, 0}, {2, 4}, {1, 5})) == 1.0);
    const auto all_in = batch_of({0, 0}, {2, 4}, {1, 1});
    CHECK(mpiw_captured(all_in) == mpiw_all(all_in));
    CHECK(mpiw_captured(batch_of({0, 0}, {2, 4}, {-1, 5})) == 0.0);
}

TEST_CASE("soft indicator values and limits")
{
    const double s = 7.0;
    const auto at_upper = batch_of({0}, {2}, {2});
    CHECK(soft_indicator(at_upper, s)[0] == doctest::Approx(0.5 * sigmoid(s * 2.0)));
    CHECK(soft_indicator(batch_of({-1e3}, {1e3}, {0}), s)[0] == doctest::Approx(1.0));
    CHECK(soft_indicator(batch_of({0}, {1}, {50}), s)[0] < 1e-100);
    CHECK_THROWS_AS(soft_indicator(at_upper, 0.0), ConfigError);
}

TEST_CASE("soft indicator converges to hard away from boundaries")
{
    Rng rng(11);
    double max_diff = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        auto b = testing::random_batch(rng, 16);
        for (Eigen::Index i = 0; i < b.size(); ++i) {
            if (std::abs(b.target[i] - b.lower[i]) < 1e-2 || std::abs(b.target[i] - b.upper[i]) < 1e-2)
                b.target[i] = b.upper[i] + 0.5;
        }
        max_diff = std::max(max_diff, (soft_indicator(b, 1e4) - hard_indicator(b)).cwiseAbs().maxCoeff());
    }
    CHECK(max_diff < 1e-3);
}

TEST_CASE("mpiw_mbpep arithmetic and hard reduction")
{
    // width 2 with target on the upper bound of a very wide-margin interval: k = 0.5 * ~1
    const auto b = batch_of({0}, {2}, {2});
    CHECK(mpiw_weighted(b, Eigen::VectorXd::Constant(1, 0.5)) == 1.0);
    CHECK(mpiw_mbpep(batch_of({1, 3}, {1, 3}, {0, 9}), 5.0) == 0.0);

    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const auto r = testing::random_batch(rng, 1 + static_cast<int>(rng.below(40)));
        CHECK(mpiw_weighted(r, hard_indicator(r)) == mpiw_captured(r));
    }
}

TEST_CASE("loss_mbpep hinge branches")
{
    LossConfig cfg;
    // All targets centered in wide intervals: coverage ~1, hinge inactive.
    const auto covered = batch_of({-5, -5}, {5, 5}, {0, 0});
    CHECK(loss_mbpep(covered, cfg) == mpiw_mbpep(covered, cfg.softness));

    // picp_soft = 0.90 with mpiw_mbpep = 0.4 gives 0.4 + 15 * 0.05.
    cfg.confidence = 0.95;
    cfg.penalty_c = 15.0;
    CHECK(0.4 + cfg.penalty_c * std::max(0.0, cfg.confidence - 0.90) == doctest::Approx(1.15));

    LossConfig no_penalty;
    no_penalty.penalty_c = 0.0;
    const auto uncovered = batch_of({0, 0}, {1, 1}, {4, -3});
    CHECK(loss_mbpep(uncovered, no_penalty) == mpiw_mbpep(uncovered, no_penalty.softness));

    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const auto r = testing::random_batch(rng, 10);
        CHECK(loss_mbpep(r, cfg) == doctest::Approx(oracle_loss(r, cfg)).epsilon(1e-12));
    }
}

TEST_CASE("loss_mbpep gradient limits and signs")
{
    LossConfig cfg;
    cfg.softness = 30.0;
    const auto saturated = batch_of({-5, -5}, {5, 5}, {0, 0.1});
    const auto g = loss_mbpep_grad(saturated, cfg);
    for (int i = 0; i < 2; ++i) {
        CHECK(g.upper[i] == doctest::Approx(0.5));
        CHECK(g.lower[i] == doctest::Approx(-0.5));
    }

    // Narrow intervals with every target outside: coverage ~0, hinge active.
    const auto missed = batch_of({0, 0, 0, 0}, {0.02, 0.02, 0.02, 0.02}, {0.12, -0.1, 0.15, -0.13});
    CHECK(picp_soft(missed, cfg.softness) < 0.1);
    const auto gm = loss_mbpep_grad(missed, cfg);
    const auto fd = oracle_grad(missed, cfg, 1e-7L);
    for (int i = 0; i < 4; ++i) {
        CHECK(fd.upper[i] < 0.0);
        CHECK(fd.lower[i] > 0.0);
        CHECK(gm.upper[i] < 0.0);
        CHECK(gm.lower[i] > 0.0);
    }
}

TEST_CASE("loss_mbpep gradient matches central finite differences")
{
    Rng rng(21);
    for (int trial = 0; trial < 40; ++trial) {
        const auto b = testing::random_batch(rng, 8);
        LossConfig cfg;
        cfg.softness = 1.0 + rng.uniform() * 10.0;
        const double cover = picp_soft(b, cfg.softness);
        // Keep well away from the hinge kink; alternate active and inactive.
        cfg.confidence = std::clamp(cover + (trial % 2 == 0 ? 0.1 : -0.1), 0.01, 0.99);
        if (std::abs(cfg.confidence - cover) < 1e-3) continue;

        const auto g = loss_mbpep_grad(b, cfg);
        const auto fd = oracle_grad(b, cfg, 1e-7L);
        double worst = 0.0;
        for (Eigen::Index i = 0; i < b.size(); ++i) {
            worst = std::max(worst, testing::rel_error(g.lower[i], fd.lower[i]));
            worst = std::max(worst, testing::rel_error(g.upper[i], fd.upper[i]));
        }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("hinge kink uses the zero subgradient")
{
    LossConfig cfg;
    cfg.softness = 4.0;
    const auto b = batch_of({-0.3, 0.1}, {0.4, 0.9}, {0.2, 0.15});
    cfg.confidence = picp_soft(b, cfg.softness);
    LossConfig inactive = cfg;
    inactive.penalty_c = 0.0;
    const auto g = loss_mbpep_grad(b, cfg);
    const auto g0 = loss_mbpep_grad(b, inactive);
    CHECK(g.lower == g0.lower);
    CHECK(g.upper == g0.upper);
}

TEST_CASE("lube loss")
{
    LossConfig cfg;
    cfg.confidence = 0.5;
    // Three width-2 intervals, two captured: normalizer 2, first factor 2/3.
    const auto b = batch_of({0, 0, 0}, {2, 2, 2}, {1, 1.5, 7});
    CHECK(loss_lube(b, cfg) == doctest::Approx(1.3333333333333333).epsilon(1e-14));
    CHECK(mpiw_captured(b) / mpiw_all(b) == doctest::Approx(picp_hard(b)));

    cfg.confidence = 0.95;
    cfg.penalty_c = 15.0;
    CHECK(loss_lube(b, cfg) == doctest::Approx(47.40360823112523).epsilon(1e-12));

    // No coverage: the penalty explodes monotonically in c.
    const auto none = batch_of({0, 0}, {1, 1}, {3, 4});
    double prev = -1.0;
    for (double c : {0.0, 1.0, 5.0, 20.0}) {
        cfg.penalty_c = c;
        const double v = loss_lube(none, cfg);
        CHECK(v >= prev);
        prev = v;
    }
    CHECK_THROWS_AS(loss_lube(batch_of({1, 2}, {1, 2}, {1, 2}), cfg), DataError);
}

TEST_CASE("symmetric widening never lowers coverage")
{
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const auto b = testing::random_batch(rng, 12);
        auto wide = b;
        const double d = rng.uniform(1e-3, 0.5);
        wide.lower.array() -= d;
        wide.upper.array() += d;
        CHECK(picp_hard(wide) >= picp_hard(b));
        CHECK(picp_soft(wide, 30.0) >= picp_soft(b, 30.0));
    }
}

TEST_CASE("scale covariance of widths and coverage")
{
    Rng rng(4);
    for (double lambda : {0.5, 2.0, 3.7, 1000.0}) {
        for (int trial = 0; trial < 50; ++trial) {
            const auto b = testing::random_batch(rng, 10);
            IntervalBatch s{b.lower * lambda, b.upper * lambda, b.target * lambda};
            CHECK(mpiw_all(s) == doctest::Approx(lambda * mpiw_all(b)).epsilon(1e-12));
            CHECK(mpiw_captured(s) == doctest::Approx(lambda * mpiw_captured(b)).epsilon(1e-12));
            CHECK(picp_hard(s) == picp_hard(b));
        }
    }
}

TEST_CASE("report picp equals captured count over N")
{
    Rng rng(8);
    const auto b = testing::random_batch(rng, 37);
    const auto r = report(b, LossConfig{});
    CHECK(r.picp_hard == hard_indicator(b).sum() / 37.0);
    CHECK(r.loss_lube.has_value());
}

TEST_CASE("batch and config validation")
{
    CHECK_THROWS_AS(mpiw_all(batch_of({0}, {1, 2}, {0})), DataError);
    CHECK_THROWS_AS(mpiw_all(IntervalBatch{}), DataError);
    CHECK_THROWS_AS(mpiw_all(batch_of({0}, {std::numeric_limits<double>::quiet_NaN()}, {0})), DataError);
    LossConfig bad;
    bad.confidence = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.penalty_c = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = {};
    bad.softness = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
