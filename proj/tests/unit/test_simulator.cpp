#include <doctest.h>

#include <cmath>

#include "velo/error.hpp"
#include "velo/evaluation.hpp"
#include "velo/simulator.hpp"
#include "oracles.hpp"

using namespace velo;
using namespace velo::sim;

namespace {

LineageTree single_gene_tree(const RhoSchedule& schedule, double duration) {
    LineageTree tree;
    tree.branches.push_back({"root", -1, 0.0, duration, 1.0});
    GeneSetup g;
    g.name = "a";
    g.alpha = 2;
    g.beta = 1;
    g.gamma = 0.5;
    tree.genes = {g};
    tree.schedules = {{schedule}};
    return tree;
}

}  // namespace

TEST_CASE("simulate: noiseless constant induction lies on the closed form") {
    RhoSchedule on;
    on.initial_level = 1.0;
    const auto r = simulate(single_gene_tree(on, 12.0), 300, 0.0, 1);
    GeneKinetics k;
    k.alpha = 2;
    k.beta = 1;
    k.gamma = 0.5;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < 300; ++i) {
        const auto st = solve_phase(k, r.truth.time[i]);
        worst = std::max({worst, std::abs(st.u - r.data.unspliced(i, 0)), std::abs(st.s - r.data.spliced(i, 0))});
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("simulate: noiseless bifurcation follows each branch's schedule") {
    auto preset = make_preset("S2", 4);
    const auto r = simulate(preset.tree, 40, 0.0, 4);
    const auto& tree = preset.tree;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < 40; ++i) {
        const int b = r.truth.branch[i];
        const double t = r.truth.time[i];
        for (std::size_t g = 0; g < tree.genes.size(); g += 7) {
            const auto& gene = tree.genes[g];
            oracle::UV x{gene.initial.u, gene.initial.s};
            // Walk the path from the root and integrate each branch over its own span.
            std::vector<int> path;
            for (int k = b; k >= 0; k = tree.branches[k].parent) {
                path.insert(path.begin(), k);
            }
            double now = tree.branches[path.front()].start;
            for (std::size_t p = 0; p < path.size(); ++p) {
                const double end = p + 1 < path.size() ? tree.branches[path[p + 1]].start : t;
                const auto& sched = tree.schedules[path[p]][g];
                x = oracle::integrate([&](double tt) { return gene.alpha * sched(tt); }, gene.beta, gene.gamma, x, now,
                                      end, 1e-4);
                now = end;
            }
            worst = std::max({worst, std::abs(x.u - r.data.unspliced(i, static_cast<Eigen::Index>(g))),
                              std::abs(x.s - r.data.spliced(i, static_cast<Eigen::Index>(g)))});
        }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("simulate: same seed gives identical output, different seed differs") {
    auto preset = make_preset("S1", 2);
    const auto a = simulate(preset.tree, 100, 0.1, 2);
    const auto b = simulate(preset.tree, 100, 0.1, 2);
    const auto c = simulate(preset.tree, 100, 0.1, 3);
    CHECK(a.data.unspliced == b.data.unspliced);
    CHECK(a.data.spliced == b.data.spliced);
    CHECK(a.truth.time == b.truth.time);
    CHECK(a.data.unspliced != c.data.unspliced);
    CHECK(a.data.unspliced.minCoeff() >= 0.0);
}

TEST_CASE("simulate: branches differ in marker genes and follow their weights") {
    auto preset = make_preset("S2", 6);
    const auto r = simulate(preset.tree, 3000, 0.1, 6);
    int late_a = -1, late_b = -1;
    std::vector<int> counts(3, 0);
    for (Eigen::Index i = 0; i < r.data.n_cells(); ++i) {
        counts[r.truth.branch[i]] += 1;
        if (r.truth.time[i] > 16.0 && r.truth.branch[i] == 1 && late_a < 0) late_a = static_cast<int>(i);
        if (r.truth.time[i] > 16.0 && r.truth.branch[i] == 2 && late_b < 0) late_b = static_cast<int>(i);
    }
    REQUIRE(late_a >= 0);
    REQUIRE(late_b >= 0);
    double marker_gap = 0.0;
    for (Eigen::Index g = 0; g < r.data.n_genes(); ++g) {
        if (r.truth.genes[g].kind == "branch_marker") {
            marker_gap = std::max(marker_gap, std::abs(r.truth.rho(late_a, g) - r.truth.rho(late_b, g)));
        }
    }
    CHECK(marker_gap > 0.9);
    const double p = 1.0 / 3.0, sd = std::sqrt(p * (1 - p) / 3000.0);
    for (int c : counts) {
        CHECK(std::abs(c / 3000.0 - p) < 4 * sd);
    }
}

TEST_CASE("presets contain early repression and late induction genes") {
    auto preset = make_preset("S1", 1);
    const auto r = simulate(preset.tree, 400, 0.0, 1);
    int early = 0, late = 0;
    for (Eigen::Index g = 0; g < r.data.n_genes(); ++g) {
        const auto& kind = r.truth.genes[g].kind;
        const auto& sched = preset.tree.schedules[0][g];
        if (kind == "early_repression") {
            ++early;
            CHECK(sched(0.0) > 0.5);
            CHECK(sched(preset.t_max) < 0.1);
        } else if (kind == "late_induction") {
            ++late;
            CHECK(sched(0.25 * preset.t_max) < 0.1);
            CHECK(sched(preset.t_max) > 0.5);
        }
    }
    CHECK(early == 20);
    CHECK(late == 20);
    CHECK(make_preset("S3", 1).tree.genes.size() == 110);
    CHECK_THROWS_AS(make_preset("S9", 1), DomainError);
}

TEST_CASE("boost schedule: limits, midpoint and convex rise of u") {
    const auto b = boost_gene_schedule(5.0, 0.2, 1.0, 2.0);
    CHECK(b(-1e3) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(b(1e3) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(b(5.0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK_THROWS_AS(boost_gene_schedule(5.0, 0.8, 0.2, 1.0), DomainError);
    CHECK_THROWS_AS(boost_gene_schedule(5.0, 0.2, 0.8, 0.0), DomainError);

    // Start at the steady state of the low level and integrate across the boost window.
    RhoSchedule sched = b;
    auto tree = single_gene_tree(sched, 10.0);
    tree.genes[0].initial = steady_state(2 * 0.2, 1, 0.5);
    const double h = 0.05;
    std::vector<double> u;
    oracle::UV x{tree.genes[0].initial.u, tree.genes[0].initial.s};
    double t = 0.0;
    for (int k = 0; k <= 200; ++k) {
        u.push_back(x.u);
        x = oracle::integrate([&](double tt) { return 2.0 * b(tt); }, 1.0, 0.5, x, t, t + h, 1e-4);
        t += h;
    }
    // Boost window: from one logistic width before the centre up to the centre.
    for (int k = static_cast<int>((5.0 - 0.5) / h); k < static_cast<int>(5.0 / h); ++k) {
        CHECK(u[k + 1] - 2 * u[k] + u[k - 1] > 0.0);
    }
    const auto r = simulate(tree, 50, 0.0, 8);
    for (Eigen::Index i = 0; i < 50; ++i) {
        CHECK(r.data.unspliced(i, 0) >= tree.genes[0].initial.u - 1e-9);
    }
}

TEST_CASE("capture labels: median split, monotone, rank agreement") {
    Vector t(6);
    t << 0.3, 0.1, 0.9, 0.5, 0.2, 0.8;
    const auto two = capture_time_labels(t, 2);
    CHECK(two == std::vector<int>{0, 0, 1, 1, 0, 1});

    auto preset = make_preset("S1", 3);
    const auto r = simulate(preset.tree, 2000, 0.1, 3);
    const auto labels = capture_time_labels(r.truth.time, 7);
    for (Eigen::Index i = 0; i < 2000; ++i) {
        for (Eigen::Index j = i + 1; j < std::min<Eigen::Index>(2000, i + 50); ++j) {
            if (r.truth.time[i] < r.truth.time[j]) {
                CHECK(labels[i] <= labels[j]);
            }
        }
    }
    std::vector<double> l(labels.begin(), labels.end());
    std::vector<double> tt(r.truth.time.data(), r.truth.time.data() + 2000);
    CHECK(*spearman(l, tt) >= 0.9);
    CHECK_THROWS_AS(capture_time_labels(t, 1), DomainError);
}
