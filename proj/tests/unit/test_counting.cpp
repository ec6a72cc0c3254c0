#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "isvqa/counting.hpp"
#include "isvqa/error.hpp"
#include "isvqa/rng.hpp"

using namespace isvqa;

namespace {

MatrixXd distances(const std::vector<BBox>& boxes, const std::vector<int>& images) {
    return distance_matrix(boxes, images);
}

std::vector<BBox> disjoint_boxes(int m) {
    std::vector<BBox> out;
    for (int i = 0; i < m; ++i) out.push_back({0.02 + 0.16 * i, 0.1, 0.14 + 0.16 * i, 0.3});
    return out;
}

CountModuleParams random_params(Rng& rng) {
    auto fn = [&] {
        VectorXd w(8);
        for (auto& v : w) v = rng.normal();
        return PiecewiseLinearFn(w);
    };
    return {fn(), fn(), fn()};
}

struct Instance {
    VectorXd a;
    MatrixXd D;
};

Instance random_instance(Rng& rng, int n) {
    std::vector<BBox> boxes;
    std::vector<int> images;
    for (int i = 0; i < n; ++i) {
        if (i > 0 && rng.bernoulli(0.5)) {
            // Jittered copy of an earlier box so IoU lands strictly inside (0,1).
            const auto& b = boxes[static_cast<std::size_t>(rng.uniform_int(0, i - 1))];
            const double dx = rng.uniform(-0.03, 0.03);
            boxes.push_back({std::max(0.0, b.x1 + dx), b.y1, std::min(1.0, b.x2 + dx), b.y2});
            images.push_back(images[static_cast<std::size_t>(i - 1)]);
        } else {
            const double x = rng.uniform(0.0, 0.7);
            const double y = rng.uniform(0.0, 0.7);
            boxes.push_back({x, y, x + rng.uniform(0.1, 0.3), y + rng.uniform(0.1, 0.3)});
            images.push_back(rng.uniform_int(0, 1));
        }
    }
    Instance inst;
    inst.a = VectorXd(n);
    for (auto& v : inst.a) v = rng.uniform(0.05, 0.95);
    inst.D = distances(boxes, images);
    return inst;
}

double objective(const VectorXd& a, const MatrixXd& D, const CountModuleParams& p, const VectorXd& w, double wc,
                 std::uint64_t* sig = nullptr) {
    CountGraph g;
    const auto& out = g.forward(a, D, p);
    if (sig) *sig = g.branch_signature();
    return w.dot(out.C) + wc * out.c_hat;
}

double rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

}  // namespace

TEST_CASE("piecewise-linear maps") {
    const PiecewiseLinearFn id;
    CHECK(id(0.0) == 0.0);
    CHECK(id(1.0) == 1.0);
    for (double x : {0.05, 0.125, 0.3, 0.5, 0.77, 0.999}) CHECK(id(x) == doctest::Approx(x).epsilon(1e-15));
    CHECK(id(-0.5) == 0.0);
    CHECK(id(1.5) == 1.0);
    CHECK(id.slope(0.3) == doctest::Approx(1.0));
    CHECK(id.slope(1.0) == 0.0);
    CHECK(id.slope(-0.1) == 0.0);
    CHECK(id.interval(0.125) == 1);
    CHECK(id.interval(1.0) == 7);

    Rng rng(3);
    VectorXd w(8);
    for (auto& v : w) v = 2.0 * rng.normal();
    const PiecewiseLinearFn f(w);
    CHECK(f(0.0) == 0.0);
    CHECK(f(1.0) == doctest::Approx(1.0).epsilon(1e-15));
    double prev = 0.0;
    for (int i = 1; i <= 200; ++i) {
        const double y = f(i / 200.0);
        CHECK(y >= prev);
        prev = y;
    }
    CHECK(f.increments().sum() == doctest::Approx(1.0));
}

TEST_CASE("adjacency is the outer product of attention") {
    VectorXd a(2);
    a << 1, 0;
    CHECK(adjacency(a) == (MatrixXd(2, 2) << 1, 0, 0, 0).finished());
    a << 1, 1;
    CHECK(adjacency(a) == MatrixXd::Ones(2, 2));
    a << 0.5, 0.5;
    CHECK(adjacency(a) == MatrixXd::Constant(2, 2, 0.25));
    a << 1.2, 0.5;
    CHECK_THROWS_AS(adjacency(a), Error);
}

TEST_CASE("distance matrix") {
    const BBox b{0.1, 0.1, 0.3, 0.3};
    CHECK(distances({b, b}, {0, 0})(0, 1) == 0.0);
    CHECK(distances({b, b}, {0, 1})(0, 1) == 1.0);
    const auto D = distances({{0.0, 0.0, 0.2, 0.2}, {0.1, 0.1, 0.3, 0.3}}, {2, 2});
    CHECK(D(0, 1) == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
    CHECK(D(1, 0) == D(0, 1));
    CHECK(D(0, 0) == 0.0);
}

TEST_CASE("intra-object pruning") {
    const auto id = CountModuleParams::identity();
    const BBox b{0.1, 0.1, 0.3, 0.3};
    const VectorXd ones = VectorXd::Ones(2);
    CHECK(prune_intra(adjacency(ones), distances({b, b}, {0, 0}), id).isZero(0.0));
    const auto Ap = prune_intra(adjacency(ones), distances(disjoint_boxes(2), {0, 0}), id);
    CHECK(Ap == (MatrixXd(2, 2) << 0, 1, 1, 0).finished());
    CHECK(prune_intra(adjacency(VectorXd::Zero(2)), distances(disjoint_boxes(2), {0, 0}), id).isZero(0.0));
}

TEST_CASE("dedup scores on the hand-evaluated cases") {
    const auto id = CountModuleParams::identity();
    const BBox b{0.1, 0.1, 0.3, 0.3};
    const VectorXd ones = VectorXd::Ones(2);

    auto overlap = dedup_scores(ones, prune_intra(adjacency(ones), distances({b, b}, {0, 0}), id), id);
    CHECK(overlap.C == VectorXd::Constant(2, 0.5));
    CHECK(overlap.c_hat == 1.0);

    auto apart = dedup_scores(ones, prune_intra(adjacency(ones), distances(disjoint_boxes(2), {0, 0}), id), id);
    CHECK(apart.sim(0, 1) == 0.0);
    CHECK(apart.C == ones);
    CHECK(apart.c_hat == 2.0);

    const VectorXd one = VectorXd::Ones(1);
    CHECK(dedup_scores(one, MatrixXd::Zero(1, 1), id).c_hat == 1.0);
}

TEST_CASE("duplicates collapse and disjoint objects add up") {
    const auto id = CountModuleParams::identity();
    for (int m = 1; m <= 4; ++m) {
        CAPTURE(m);
        const VectorXd a = VectorXd::Ones(m);
        const std::vector<int> img(static_cast<std::size_t>(m), 0);
        CountGraph dup;
        CHECK(dup.forward(a, distances(std::vector<BBox>(static_cast<std::size_t>(m), {0.2, 0.2, 0.5, 0.6}), img), id)
                  .c_hat == 1.0);
        CountGraph apart;
        CHECK(apart.forward(a, distances(disjoint_boxes(m), img), id).c_hat == static_cast<double>(m));
    }
}

TEST_CASE("count-aware features scale rows") {
    MatrixXd X(2, 3);
    X << 1, 2, 3, 4, 5, 6;
    CHECK(count_aware_features(X, VectorXd::Ones(2)) == X);
    CHECK(count_aware_features(X, VectorXd::Zero(2)).isZero(0.0));
    VectorXd C(2);
    C << 0.5, 1;
    const MatrixXd Y = count_aware_features(X, C);
    CHECK(Y.row(0) == 0.5 * X.row(0));
    CHECK(Y.row(1) == X.row(1));
    CHECK_THROWS_AS(count_aware_features(X, VectorXd::Ones(3)), Error);
}

TEST_CASE("invariants on random instances") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = rng.uniform_int(1, 6);
        const auto inst = random_instance(rng, n);
        const auto p = random_params(rng);
        CountGraph g;
        const auto& out = g.forward(inst.a, inst.D, p);
        CHECK(out.A.isApprox(out.A.transpose(), 0.0));
        CHECK(out.D.isApprox(out.D.transpose(), 0.0));
        for (Eigen::Index i = 0; i < n; ++i) {
            CHECK(out.D(i, i) == 0.0);
            CHECK(out.sim(i, i) == 1.0);
            CHECK(out.C[i] >= 0.0);
            CHECK(out.C[i] <= inst.a[i] + 1e-15);
            for (Eigen::Index j = 0; j < n; ++j) {
                CHECK(out.A(i, j) == inst.a[i] * inst.a[j]);
                CHECK(out.D(i, j) >= 0.0);
                CHECK(out.D(i, j) <= 1.0);
            }
        }
        CHECK(out.c_hat == doctest::Approx(out.C.sum()).epsilon(1e-14));
    }
}

TEST_CASE("permutation equivariance") {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = rng.uniform_int(2, 6);
        const auto inst = random_instance(rng, n);
        const auto p = random_params(rng);
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        VectorXd a2(n);
        MatrixXd D2(n, n);
        for (int i = 0; i < n; ++i) {
            a2[i] = inst.a[perm[static_cast<std::size_t>(i)]];
            for (int j = 0; j < n; ++j) D2(i, j) = inst.D(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
        }
        CountGraph g1;
        CountGraph g2;
        const auto C1 = g1.forward(inst.a, inst.D, p).C;
        const auto& out2 = g2.forward(a2, D2, p);
        for (int i = 0; i < n; ++i) CHECK(out2.C[i] == doctest::Approx(C1[perm[static_cast<std::size_t>(i)]]).epsilon(1e-12));
        CHECK(out2.c_hat == doctest::Approx(g1.output().c_hat).epsilon(1e-12));
    }
}

TEST_CASE("raising one attention value never lowers the count") {
    Rng rng(29);
    const auto id = CountModuleParams::identity();
    for (int trial = 0; trial < 200; ++trial) {
        const int n = rng.uniform_int(1, 4);
        auto inst = random_instance(rng, n);
        CountGraph g;
        const double before = g.forward(inst.a, inst.D, id).c_hat;
        const auto i = rng.uniform_int(0, n - 1);
        inst.a[i] = std::min(1.0, inst.a[i] + rng.uniform(0.0, 0.5));
        CountGraph h;
        CHECK(h.forward(inst.a, inst.D, id).c_hat >= before - 1e-12);
    }
}

TEST_CASE("backward matches central differences") {
    Rng rng(31);
    constexpr double kStep = 1e-5;
    double worst = 0.0;
    int checked = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const int n = rng.uniform_int(1, 6);
        const auto inst = random_instance(rng, n);
        auto p = random_params(rng);
        VectorXd w(n);
        for (auto& v : w) v = rng.normal();
        const double wc = rng.normal();

        CountGraph g;
        g.forward(inst.a, inst.D, p);
        const auto grads = g.backward(w, wc);

        auto probe = [&](auto&& perturb, double analytic) {
            std::uint64_t s_plus = 0;
            std::uint64_t s_minus = 0;
            const double up = perturb(+kStep, &s_plus);
            const double down = perturb(-kStep, &s_minus);
            if (s_plus != s_minus) return;  // a kink lies between the probes
            worst = std::max(worst, rel_error(analytic, (up - down) / (2 * kStep)));
            ++checked;
        };
        for (int i = 0; i < n; ++i) {
            probe([&](double h, std::uint64_t* sig) {
                VectorXd a = inst.a;
                a[i] += h;
                return objective(a, inst.D, p, w, wc, sig);
            }, grads.a[i]);
        }
        for (int which = 0; which < 3; ++which) {
            const VectorXd& analytic = which == 0 ? grads.f1 : which == 1 ? grads.f2 : grads.f3;
            for (int k = 0; k < 8; ++k) {
                probe([&](double h, std::uint64_t* sig) {
                    auto q = p;
                    auto& fn = which == 0 ? q.f1 : which == 1 ? q.f2 : q.f3;
                    VectorXd raw = fn.raw_weights();
                    raw[k] += h;
                    fn = PiecewiseLinearFn(raw);
                    return objective(inst.a, inst.D, q, w, wc, sig);
                }, analytic[k]);
            }
        }
    }
    CHECK(checked > 500);
    CHECK(worst < 1e-4);
}

TEST_CASE("gradient of the count at zero attention over disjoint boxes") {
    // With a = 0 every pruned edge vanishes, so sim is all ones and C_i = a_i / n:
    // each partial derivative is 1/n (1 only for a single proposal).
    const auto id = CountModuleParams::identity();
    for (int n = 1; n <= 4; ++n) {
        CountGraph g;
        g.forward(VectorXd::Zero(n), distances(disjoint_boxes(n), std::vector<int>(static_cast<std::size_t>(n), 0)), id);
        const auto grads = g.backward(VectorXd::Zero(n), 1.0);
        for (int i = 0; i < n; ++i) CHECK(grads.a[i] == doctest::Approx(1.0 / n).epsilon(1e-12));
    }
}

TEST_CASE("zero upstream gives zero gradients; backward needs a forward") {
    Rng rng(37);
    const auto inst = random_instance(rng, 4);
    const auto p = random_params(rng);
    CountGraph g;
    g.forward(inst.a, inst.D, p);
    const auto grads = g.backward(VectorXd::Zero(4), 0.0);
    CHECK(grads.a.isZero(0.0));
    CHECK(grads.f1.isZero(0.0));
    CHECK(grads.f2.isZero(0.0));
    CHECK(grads.f3.isZero(0.0));
    CHECK_THROWS_AS(g.backward(VectorXd::Zero(4), 1.0), Error);
    CountGraph fresh;
    CHECK_THROWS_AS(fresh.backward(VectorXd::Zero(1), 1.0), Error);
}
