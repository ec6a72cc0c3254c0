#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include <Eigen/Dense>

#include "isvqa/scenes.hpp"

namespace isvqa {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Monotone piecewise-linear map of [0,1] onto [0,1] with k equal-width
/// intervals. Interval slopes come from a softmax over the raw weights, so
/// f(0) = 0, f(1) = 1, and equal raw weights give the identity.
class PiecewiseLinearFn {
public:
    static constexpr int kDefaultIntervals = 8;

    explicit PiecewiseLinearFn(int intervals = kDefaultIntervals);
    explicit PiecewiseLinearFn(VectorXd raw_weights);

    int intervals() const noexcept { return static_cast<int>(raw_.size()); }
    const VectorXd& raw_weights() const noexcept { return raw_; }
    const VectorXd& increments() const noexcept { return inc_; }

    /// Interval containing x; breakpoints belong to the interval on their right,
    /// except x = 1 which belongs to the last interval.
    int interval(double x) const noexcept;
    double operator()(double x) const noexcept;
    /// Right derivative df/dx (zero from x = 1 on).
    double slope(double x) const noexcept;
    /// Adds upstream * df/d(increments) at x into `grad_increments`.
    void accumulate_increment_grad(double x, double upstream, VectorXd& grad_increments) const;
    /// Chain rule through the softmax from increments to raw weights.
    VectorXd raw_grad(const VectorXd& grad_increments) const;

private:
    void refresh();

    VectorXd raw_;
    VectorXd inc_;
    VectorXd cum_;  // cum_[m] = f(m / k)
};

struct CountModuleParams {
    PiecewiseLinearFn f1;  // shapes attention edges
    PiecewiseLinearFn f2;  // shapes box distances
    PiecewiseLinearFn f3;  // shapes attention agreement

    static CountModuleParams identity(int intervals = PiecewiseLinearFn::kDefaultIntervals);
};

struct CountOutput {
    MatrixXd A;
    MatrixXd D;
    MatrixXd A_pruned;
    MatrixXd sim;
    VectorXd C;
    double c_hat = 0.0;
};

/// A = a a^T. Rejects attention outside [0,1].
MatrixXd adjacency(const VectorXd& a);

/// D_ij = 1 - IoU within an image, 1 across images, 0 on the diagonal.
MatrixXd distance_matrix(std::span<const BBox> boxes, std::span<const int> image_idx);
MatrixXd distance_matrix(std::span<const ObjectProposal> proposals);

/// Elementwise f1(A) * f2(D); the diagonal vanishes because f2(0) = 0.
MatrixXd prune_intra(const MatrixXd& A, const MatrixXd& D, const CountModuleParams& params);

struct DedupScores {
    MatrixXd sim;
    VectorXd C;
    double c_hat = 0.0;
};

/// sim_ij = f3(1 - |a_i - a_j|) (1 - A'_ij) rowsim_ij for i != j, sim_ii = 1,
/// C_i = a_i / sum_j sim_ij.
DedupScores dedup_scores(const VectorXd& a, const MatrixXd& A_pruned, const CountModuleParams& params);

/// Row i of the result is C_i times row i of `features`.
MatrixXd count_aware_features(const MatrixXd& features, const VectorXd& C);

struct CountGradients {
    VectorXd a;
    VectorXd f1;
    VectorXd f2;
    VectorXd f3;
};

/// Records one forward pass of the counting module so it can be
/// differentiated. Boxes are constants. Where |.| has a kink the derivative of
/// |x| is taken as +1 (right derivative in its argument); on breakpoints of the
/// piecewise-linear maps the right-hand slope is used.
class CountGraph {
public:
    const CountOutput& forward(const VectorXd& a, const MatrixXd& D, const CountModuleParams& params);

    /// Gradients of <grad_C, C> + grad_c_hat * c_hat. Consumes the recorded pass.
    CountGradients backward(const VectorXd& grad_C, double grad_c_hat);

    const CountOutput& output() const;
    bool has_forward() const noexcept { return recorded_; }

    /// Hash of every branch the forward pass took (signs under |.|, intervals of
    /// f1/f2/f3). Equal signatures at nearby points mean no kink lies between.
    std::uint64_t branch_signature() const noexcept { return signature_; }

private:
    bool recorded_ = false;
    VectorXd a_;
    std::optional<CountModuleParams> params_;
    CountOutput out_;
    MatrixXd agree_;  // f3(1 - |a_i - a_j|)
    MatrixXd rowsim_;
    VectorXd mass_;   // d_i = sum_j sim_ij
    std::uint64_t signature_ = 0;
};

}  // namespace isvqa
