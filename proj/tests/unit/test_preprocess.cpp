#include <doctest.h>

#include <random>

#include "velo/error.hpp"
#include "velo/preprocess.hpp"
#include "velo/simulator.hpp"

using namespace velo;

namespace {

ExpressionMatrix tiny(const Matrix& u, const Matrix& s) {
    ExpressionMatrix m;
    for (Eigen::Index i = 0; i < u.rows(); ++i) m.cell_ids.push_back("c" + std::to_string(i));
    for (Eigen::Index g = 0; g < u.cols(); ++g) m.gene_names.push_back("g" + std::to_string(g));
    m.unspliced = u;
    m.spliced = s;
    return m;
}

}  // namespace

TEST_CASE("preprocess: all steps off is the identity") {
    Matrix u(3, 2), s(3, 2);
    u << 1, 2, 3, 4, 5, 6;
    s << 6, 5, 4, 3, 2, 1;
    PreprocessOptions off{false, 0, 0, 30};
    const auto out = preprocess(tiny(u, s), off);
    CHECK(out.unspliced == u);
    CHECK(out.spliced == s);
    CHECK(out.provenance.empty());
}

TEST_CASE("size factors scale each cell to the median total") {
    Matrix m(3, 2);
    m << 1, 1, 2, 2, 0, 0;
    const Vector f = size_factors(m);
    // Positive totals are 2 and 4, so the target is 3.
    CHECK(f[0] == doctest::Approx(1.5));
    CHECK(f[1] == doctest::Approx(0.75));
    CHECK(f[2] == 1.0);

    Matrix u(4, 3);
    u << 1, 2, 3, 2, 4, 6, 10, 0, 0, 0, 5, 5;
    PreprocessOptions only_norm{true, 0, 0, 30};
    const auto out = preprocess(tiny(u, u), only_norm);
    const Vector totals = out.unspliced.rowwise().sum();
    CHECK((totals.array() - 10.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("gene selection keeps the most dispersed genes in original order") {
    Matrix s(4, 3);
    s << 1, 10, 5, 1, 0, 5, 1, 20, 6, 1, 0, 4;
    const RowVector d = dispersion(s);
    CHECK(d[0] == 0.0);
    CHECK(d[1] > d[2]);
    PreprocessOptions pick{false, 2, 0, 30};
    const auto out = preprocess(tiny(s, s), pick);
    CHECK(out.gene_names == std::vector<std::string>{"g1", "g2"});
    PreprocessOptions too_many{false, 4, 0, 30};
    CHECK_THROWS_AS(preprocess(tiny(s, s), too_many), DomainError);
}

TEST_CASE("knn includes the cell itself and breaks ties by index") {
    Matrix x(4, 1);
    x << 0, 1, -1, 5;
    const auto nn = knn_pca(x, 1, 3);
    CHECK(nn[0] == std::vector<Eigen::Index>{0, 1, 2});
    CHECK(nn[3][0] == 3);
    CHECK_THROWS_AS(knn_pca(x, 1, 5), DomainError);
}

TEST_CASE("smoothing reduces noise at least five-fold on simulated data") {
    auto preset = sim::make_preset("S1", 2);
    const auto noisy = sim::simulate(preset.tree, 1000, 0.1, 2);
    PreprocessOptions smooth{false, 0, 30, 30};
    const auto out = preprocess(noisy.data, smooth);
    const double before = (noisy.data.spliced - noisy.truth.s_clean).squaredNorm();
    const double after = (out.spliced - noisy.truth.s_clean).squaredNorm();
    CHECK(after * 5.0 < before);
}

TEST_CASE("replaying provenance reproduces the processed matrix exactly") {
    auto preset = sim::make_preset("S2", 1);
    const auto raw = sim::simulate(preset.tree, 300, 0.1, 1).data;
    PreprocessOptions opts{true, 40, 15, 10};
    const auto out = preprocess(raw, opts);
    // Simulated data arrives with its own record; preprocessing appends three.
    REQUIRE(out.provenance.size() == raw.provenance.size() + 3);
    const std::vector<std::string> added(out.provenance.begin() + static_cast<long>(raw.provenance.size()),
                                         out.provenance.end());
    const auto again = replay_provenance(raw, added);
    CHECK(again.unspliced == out.unspliced);
    CHECK(again.spliced == out.spliced);
    CHECK(again.gene_names == out.gene_names);
    CHECK_THROWS_AS(replay_provenance(raw, {"unknown;k=1"}), InputError);
}
