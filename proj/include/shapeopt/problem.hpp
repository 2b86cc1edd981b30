#pragma once

#include "shapeopt/manufacturability.hpp"
#include "shapeopt/modal.hpp"

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

namespace shapeopt {

struct ProblemSpec {
    double drive_window = 0.01;  // allowed relative drift of the drive frequency
    double split_min = 1900.0;   // Hz
    double split_max = 2100.0;
    double band_fraction = 0.1;
    int band_multiples = 3;
    double d_min = 2.0;  // um
    double w_min = 1.5;
    double alpha_frequency = 0.2;  // drive and split windows
    double alpha_spurious = 25.0;
    double alpha_manufacturing = 1.0;
    double alpha_objective = 0.0;  // 0 selects 0.1 / n_p

    void validate() const;
    double objective_weight(int n_parameters) const;
};

/// 1 at n * f_drive, falling linearly to 0 at +-fraction * n * f_drive.
double band_function(double f, double f_drive, int n, double fraction = 0.1);

enum class ConstraintKind { drive_low, drive_high, split_low, split_high, band, distance, width };
const char* to_string(ConstraintKind kind);

struct ConstraintInfo {
    ConstraintKind kind = ConstraintKind::drive_low;
    int mode = -1;      // tracked id for band rows
    int multiple = 0;   // n for band rows
    int node = -1;      // 2D center node for manufacturing rows
};

struct EvaluatedProblem {
    Eigen::VectorXd p;
    double objective = 0.0;       // p . p
    double objective_weight = 1.0;
    Eigen::VectorXd raw;          // c_q <= 0 form, unweighted
    Eigen::VectorXd weight;       // alpha_q
    Eigen::MatrixXd raw_grad;     // rows match raw; empty when gradients were not requested
    std::vector<ConstraintInfo> info;
    double drive_hz = 0.0;
    double split_hz = 0.0;

    int size() const { return static_cast<int>(raw.size()); }
    bool has_gradients() const { return raw_grad.rows() == raw.size() && raw.size() > 0; }
    /// What the optimizer sees: alpha_p p.p and alpha_q c_q.
    double weighted_objective() const { return objective_weight * objective; }
    Eigen::VectorXd weighted_objective_grad() const { return 2.0 * objective_weight * p; }
    Eigen::VectorXd values() const { return weight.cwiseProduct(raw); }
    Eigen::MatrixXd gradients() const { return weight.asDiagonal() * raw_grad; }

    bool feasible() const { return violated() == 0; }
    int violated() const;
    double max_violation() const;  // max(0, max_q c_q), unweighted
};

/// Assemble every constraint row for the current design. `frequency_grad`
/// holds df/dp for all merged modes (rows in merged order); pass an empty
/// matrix to skip gradients. Traces that hit nothing count as
/// `unbounded_value` with zero gradient.
EvaluatedProblem evaluate_problem(const ProblemSpec& spec, double f_drive0, const Eigen::VectorXd& p,
                                  const ModalResult& modal, const ConstraintReport& report,
                                  double unbounded_value, const Eigen::MatrixXd& frequency_grad = {});

/// alpha_p p.p + sum_q max(alpha_q c_q, 0).
double aggregate_L(const EvaluatedProblem& problem);

/// Diagonal of the axis-aligned bounding box.
double bounding_diagonal(std::span<const Vec2> xy);

}  // namespace shapeopt
