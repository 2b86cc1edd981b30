#pragma once

#include <Eigen/Core>

#include <functional>
#include <iosfwd>

namespace shapeopt {

struct MmaOptions {
    double asymptote_init = 0.5;   // fraction of the variable range
    double asymptote_increase = 1.2;
    double asymptote_decrease = 0.7;
    double move_limit = 0.5;       // fraction of the variable range per step
    double albefa = 0.1;
    double raa0 = 1e-5;
    double a0 = 1.0;
    double c = 1e4;  // cost of the elastic variables y
    double d = 1.0;
    double kkt_tolerance = 1e-9;
};

struct MmaState {
    int iteration = 0;  // completed steps
    Eigen::VectorXd xold1, xold2, low, upp;
};

/// Method of moving asymptotes for
///   min f0(x)  s.t.  g_i(x) <= 0,  xmin <= x <= xmax.
/// Each step builds the convex separable approximation and solves it with a
/// primal-dual interior point method, then polishes the multipliers on the dual.
class Mma {
public:
    Mma(Eigen::VectorXd xmin, Eigen::VectorXd xmax, MmaOptions options = {});

    /// `dg` is m x n. When the objective is cheap, pass it as `objective`:
    /// its approximation is then made conservative at the new point by
    /// raising the curvature term, which keeps the objective decreasing on
    /// problems where plain MMA oscillates.
    Eigen::VectorXd step(const Eigen::VectorXd& x, double f0, const Eigen::VectorXd& df0, const Eigen::VectorXd& g,
                         const Eigen::MatrixXd& dg,
                         const std::function<double(const Eigen::VectorXd&)>& objective = {});

    const MmaState& state() const { return state_; }
    void restore(MmaState state) { state_ = std::move(state); }
    /// KKT residual of the last subproblem solve.
    double last_residual() const { return last_residual_; }

private:
    Eigen::VectorXd xmin_, xmax_;
    MmaOptions options_;
    MmaState state_;
    double last_residual_ = 0.0;
};

void save_mma_state(std::ostream& out, const MmaState& state);
MmaState load_mma_state(std::istream& in);

}  // namespace shapeopt
