#include "isvqa/counting.hpp"

#include <algorithm>
#include <cmath>

#include "isvqa/error.hpp"
#include "isvqa/rng.hpp"

namespace isvqa {
namespace {

double sign_right(double x) { return x >= 0.0 ? 1.0 : -1.0; }

void mix_into(std::uint64_t& h, std::uint64_t v) { h = mix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6))); }

}  // namespace

PiecewiseLinearFn::PiecewiseLinearFn(int intervals) : raw_(VectorXd::Zero(intervals)) {
    if (intervals < 1) fail(ErrorKind::invalid_argument, "piecewise-linear map needs >= 1 interval");
    refresh();
}

PiecewiseLinearFn::PiecewiseLinearFn(VectorXd raw_weights) : raw_(std::move(raw_weights)) {
    if (raw_.size() < 1) fail(ErrorKind::invalid_argument, "piecewise-linear map needs >= 1 interval");
    refresh();
}

void PiecewiseLinearFn::refresh() {
    const double top = raw_.maxCoeff();
    inc_ = (raw_.array() - top).exp().matrix();
    inc_ /= inc_.sum();
    cum_.resize(raw_.size());
    double acc = 0.0;
    for (Eigen::Index m = 0; m < raw_.size(); ++m) {
        cum_[m] = acc;
        acc += inc_[m];
    }
}

int PiecewiseLinearFn::interval(double x) const noexcept {
    const int k = intervals();
    const int m = static_cast<int>(std::floor(x * k));
    return std::clamp(m, 0, k - 1);
}

double PiecewiseLinearFn::operator()(double x) const noexcept {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const int m = interval(x);
    return cum_[m] + inc_[m] * (x * intervals() - m);
}

double PiecewiseLinearFn::slope(double x) const noexcept {
    // f is held at 1 from x = 1 on, so the right derivative there is zero.
    if (x < 0.0 || x >= 1.0) return 0.0;
    return inc_[interval(x)] * intervals();
}

void PiecewiseLinearFn::accumulate_increment_grad(double x, double upstream, VectorXd& grad_increments) const {
    if (x <= 0.0 || upstream == 0.0) return;
    // f(1) = sum of increments; the partial wrt every increment is 1 there.
    if (x >= 1.0) {
        grad_increments.array() += upstream;
        return;
    }
    const int m = interval(x);
    grad_increments.head(m).array() += upstream;
    grad_increments[m] += upstream * (x * intervals() - m);
}

VectorXd PiecewiseLinearFn::raw_grad(const VectorXd& g) const {
    return inc_.cwiseProduct((g.array() - g.dot(inc_)).matrix());
}

CountModuleParams CountModuleParams::identity(int intervals) {
    return {PiecewiseLinearFn(intervals), PiecewiseLinearFn(intervals), PiecewiseLinearFn(intervals)};
}

MatrixXd adjacency(const VectorXd& a) {
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (!(a[i] >= 0.0 && a[i] <= 1.0)) {
            fail(ErrorKind::invalid_argument, "attention a[" + std::to_string(i) + "] outside [0,1]");
        }
    }
    return a * a.transpose();
}

MatrixXd distance_matrix(std::span<const BBox> boxes, std::span<const int> image_idx) {
    if (boxes.size() != image_idx.size()) fail(ErrorKind::invalid_argument, "boxes/image_idx size mismatch");
    const auto n = static_cast<Eigen::Index>(boxes.size());
    MatrixXd D = MatrixXd::Ones(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        D(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (image_idx[i] != image_idx[j]) continue;
            D(i, j) = D(j, i) = 1.0 - iou(boxes[i], boxes[j]);
        }
    }
    return D;
}

MatrixXd distance_matrix(std::span<const ObjectProposal> proposals) {
    std::vector<BBox> boxes;
    std::vector<int> images;
    for (const auto& p : proposals) {
        boxes.push_back(p.bbox);
        images.push_back(p.image_idx);
    }
    return distance_matrix(boxes, images);
}

MatrixXd prune_intra(const MatrixXd& A, const MatrixXd& D, const CountModuleParams& params) {
    if (A.rows() != D.rows() || A.cols() != D.cols()) fail(ErrorKind::invalid_argument, "A/D shape mismatch");
    MatrixXd out(A.rows(), A.cols());
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
        for (Eigen::Index i = 0; i < A.rows(); ++i) out(i, j) = params.f1(A(i, j)) * params.f2(D(i, j));
    }
    return out;
}

namespace {

struct DedupDetail {
    DedupScores scores;
    MatrixXd agree;
    MatrixXd rowsim;
    VectorXd mass;
};

DedupDetail dedup_detail(const VectorXd& a, const MatrixXd& Ap, const CountModuleParams& params) {
    const Eigen::Index n = a.size();
    if (Ap.rows() != n || Ap.cols() != n) fail(ErrorKind::invalid_argument, "A' shape does not match attention");
    const double inv_s = 1.0 / static_cast<double>(std::max<Eigen::Index>(n - 2, 1));
    DedupDetail d;
    d.agree = MatrixXd::Zero(n, n);
    d.rowsim = MatrixXd::Ones(n, n);
    d.scores.sim = MatrixXd::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double diff = 0.0;
            for (Eigen::Index k = 0; k < n; ++k) {
                if (k != i && k != j) diff += std::abs(Ap(i, k) - Ap(j, k));
            }
            const double r = 1.0 - inv_s * diff;
            const double g = params.f3(1.0 - std::abs(a[i] - a[j]));
            const double s = g * (1.0 - Ap(i, j)) * r;
            d.agree(i, j) = d.agree(j, i) = g;
            d.rowsim(i, j) = d.rowsim(j, i) = r;
            d.scores.sim(i, j) = d.scores.sim(j, i) = s;
        }
    }
    d.mass = d.scores.sim.rowwise().sum();
    d.scores.C = a.cwiseQuotient(d.mass);
    d.scores.c_hat = d.scores.C.sum();
    return d;
}

}  // namespace

DedupScores dedup_scores(const VectorXd& a, const MatrixXd& A_pruned, const CountModuleParams& params) {
    return dedup_detail(a, A_pruned, params).scores;
}

MatrixXd count_aware_features(const MatrixXd& features, const VectorXd& C) {
    if (features.rows() != C.size()) {
        fail(ErrorKind::invalid_argument, "count scores have " + std::to_string(C.size()) +
                                              " entries for " + std::to_string(features.rows()) + " feature rows");
    }
    return C.asDiagonal() * features;
}

const CountOutput& CountGraph::forward(const VectorXd& a, const MatrixXd& D, const CountModuleParams& params) {
    a_ = a;
    params_ = params;
    out_.A = adjacency(a);
    out_.D = D;
    out_.A_pruned = prune_intra(out_.A, D, params);
    auto detail = dedup_detail(a, out_.A_pruned, params);
    out_.sim = std::move(detail.scores.sim);
    out_.C = std::move(detail.scores.C);
    out_.c_hat = detail.scores.c_hat;
    agree_ = std::move(detail.agree);
    rowsim_ = std::move(detail.rowsim);
    mass_ = std::move(detail.mass);

    const Eigen::Index n = a.size();
    const auto& Ap = out_.A_pruned;
    std::uint64_t h = static_cast<std::uint64_t>(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            mix_into(h, static_cast<std::uint64_t>(params.f1.interval(out_.A(i, j))));
            mix_into(h, static_cast<std::uint64_t>(params.f2.interval(D(i, j))));
            if (i == j) continue;
            mix_into(h, a[i] - a[j] >= 0.0);
            mix_into(h, static_cast<std::uint64_t>(params.f3.interval(1.0 - std::abs(a[i] - a[j]))));
            for (Eigen::Index k = 0; k < n; ++k) {
                if (k != i && k != j) mix_into(h, Ap(i, k) - Ap(j, k) >= 0.0);
            }
        }
    }
    signature_ = h;
    recorded_ = true;
    return out_;
}

const CountOutput& CountGraph::output() const {
    if (!recorded_) fail(ErrorKind::state, "counting module: no forward pass recorded");
    return out_;
}

CountGradients CountGraph::backward(const VectorXd& grad_C, double grad_c_hat) {
    if (!recorded_) fail(ErrorKind::state, "counting module: backward without forward");
    const Eigen::Index n = a_.size();
    if (grad_C.size() != n) fail(ErrorKind::invalid_argument, "grad_C size mismatch");
    recorded_ = false;
    const auto& p = *params_;
    const auto& Ap = out_.A_pruned;
    const double inv_s = 1.0 / static_cast<double>(std::max<Eigen::Index>(n - 2, 1));

    CountGradients g;
    const int k = p.f1.intervals();
    VectorXd g_inc1 = VectorXd::Zero(k);
    VectorXd g_inc2 = VectorXd::Zero(p.f2.intervals());
    VectorXd g_inc3 = VectorXd::Zero(p.f3.intervals());

    const VectorXd gC = grad_C.array() + grad_c_hat;
    g.a = gC.cwiseQuotient(mass_);
    const VectorXd g_mass = -gC.cwiseProduct(a_).cwiseQuotient(mass_.cwiseProduct(mass_));

    MatrixXd g_Ap = MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double gs = g_mass[i];
            if (gs == 0.0) continue;
            const double agree = agree_(i, j);
            const double edge = 1.0 - Ap(i, j);
            const double r = rowsim_(i, j);
            // agreement term
            const double diff = a_[i] - a_[j];
            const double t = 1.0 - std::abs(diff);
            const double g_agree = gs * edge * r;
            p.f3.accumulate_increment_grad(t, g_agree, g_inc3);
            const double gt = g_agree * p.f3.slope(t);
            const double sg = sign_right(diff);
            g.a[i] -= gt * sg;
            g.a[j] += gt * sg;
            // edge term
            g_Ap(i, j) -= gs * agree * r;
            // row similarity term
            const double gr = gs * agree * edge * inv_s;
            for (Eigen::Index kk = 0; kk < n; ++kk) {
                if (kk == i || kk == j) continue;
                const double sk = sign_right(Ap(i, kk) - Ap(j, kk));
                g_Ap(i, kk) -= gr * sk;
                g_Ap(j, kk) += gr * sk;
            }
        }
    }

    MatrixXd g_A = MatrixXd::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double up = g_Ap(i, j);
            if (up == 0.0) continue;
            const double x = out_.A(i, j);
            const double dist = out_.D(i, j);
            const double f1x = p.f1(x);
            const double f2d = p.f2(dist);
            g_A(i, j) = up * f2d * p.f1.slope(x);
            p.f1.accumulate_increment_grad(x, up * f2d, g_inc1);
            p.f2.accumulate_increment_grad(dist, up * f1x, g_inc2);
        }
    }
    g.a += (g_A + g_A.transpose()) * a_;
    g.f1 = p.f1.raw_grad(g_inc1);
    g.f2 = p.f2.raw_grad(g_inc2);
    g.f3 = p.f3.raw_grad(g_inc3);
    return g;
}

}  // namespace isvqa
