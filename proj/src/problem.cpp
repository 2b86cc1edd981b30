#include "shapeopt/problem.hpp"

#include "shapeopt/error.hpp"

#include <algorithm>
#include <cmath>

namespace shapeopt {

void ProblemSpec::validate() const {
    if (!(drive_window > 0.0)) throw ConfigError("drive window must be positive");
    if (!(split_min < split_max)) throw ConfigError("split window is empty");
    if (!(band_fraction > 0.0 && band_fraction < 1.0)) throw ConfigError("band fraction must lie in (0, 1)");
    if (band_multiples < 1) throw ConfigError("band multiples must be at least 1");
    if (!(d_min > 0.0) || !(w_min > 0.0)) throw ConfigError("d_min and w_min must be positive");
    if (!(alpha_frequency > 0.0) || !(alpha_spurious > 0.0) || !(alpha_manufacturing > 0.0))
        throw ConfigError("constraint weights must be positive");
    if (alpha_objective < 0.0) throw ConfigError("objective weight must not be negative");
}

double ProblemSpec::objective_weight(int n_parameters) const {
    if (alpha_objective > 0.0) return alpha_objective;
    return n_parameters > 0 ? 0.1 / n_parameters : 0.1;
}

double band_function(double f, double f_drive, int n, double fraction) {
    const double centre = n * f_drive;
    return 1.0 - std::abs(f - centre) / (fraction * centre);
}

const char* to_string(ConstraintKind kind) {
    switch (kind) {
        case ConstraintKind::drive_low: return "drive_low";
        case ConstraintKind::drive_high: return "drive_high";
        case ConstraintKind::split_low: return "split_low";
        case ConstraintKind::split_high: return "split_high";
        case ConstraintKind::band: return "band";
        case ConstraintKind::distance: return "distance";
        case ConstraintKind::width: return "width";
    }
    return "?";
}

int EvaluatedProblem::violated() const {
    return static_cast<int>((raw.array() > 0.0).count());
}

double EvaluatedProblem::max_violation() const {
    return raw.size() == 0 ? 0.0 : std::max(0.0, raw.maxCoeff());
}

EvaluatedProblem evaluate_problem(const ProblemSpec& spec, double f_drive0, const Eigen::VectorXd& p,
                                  const ModalResult& modal, const ConstraintReport& report,
                                  double unbounded_value, const Eigen::MatrixXd& frequency_grad) {
    if (modal.drive < 0 || modal.detection < 0)
        throw Error("drive or detection mode is missing from the tracked spectrum");
    const int n_p = static_cast<int>(p.size());
    const int n_m = static_cast<int>(modal.modes.size());
    const bool grad = frequency_grad.size() > 0;
    if (grad && (frequency_grad.rows() != n_m || frequency_grad.cols() != n_p))
        throw Error("frequency gradient has the wrong shape");
    if (report.size() > 0 && report.width_grad.cols() != n_p) throw Error("constraint report has the wrong width");

    const int n_band = spec.band_multiples * (n_m - 2);
    const int n_c = 4 + n_band + 2 * report.size();

    EvaluatedProblem ev;
    ev.p = p;
    ev.objective = p.squaredNorm();
    ev.objective_weight = spec.objective_weight(n_p);
    ev.raw.resize(n_c);
    ev.weight.resize(n_c);
    ev.info.resize(n_c);
    if (grad) ev.raw_grad = Eigen::MatrixXd::Zero(n_c, n_p);

    const double f_drv = modal.modes[modal.drive].frequency;
    const double f_det = modal.modes[modal.detection].frequency;
    ev.drive_hz = f_drv;
    ev.split_hz = f_det - f_drv;
    Eigen::RowVectorXd df_drv, df_det;
    if (grad) {
        df_drv = frequency_grad.row(modal.drive);
        df_det = frequency_grad.row(modal.detection);
    }

    int q = 0;
    auto row = [&](ConstraintKind kind, double value, double weight) {
        ev.raw[q] = value;
        ev.weight[q] = weight;
        ev.info[q].kind = kind;
        return q++;
    };

    int r = row(ConstraintKind::drive_low, (1.0 - spec.drive_window) * f_drive0 - f_drv, spec.alpha_frequency);
    if (grad) ev.raw_grad.row(r) = -df_drv;
    r = row(ConstraintKind::drive_high, f_drv - (1.0 + spec.drive_window) * f_drive0, spec.alpha_frequency);
    if (grad) ev.raw_grad.row(r) = df_drv;
    r = row(ConstraintKind::split_low, spec.split_min - ev.split_hz, spec.alpha_frequency);
    if (grad) ev.raw_grad.row(r) = df_drv - df_det;
    r = row(ConstraintKind::split_high, ev.split_hz - spec.split_max, spec.alpha_frequency);
    if (grad) ev.raw_grad.row(r) = df_det - df_drv;

    for (int i = 0; i < n_m; ++i) {
        if (i == modal.drive || i == modal.detection) continue;
        const double f = modal.modes[i].frequency;
        for (int n = 1; n <= spec.band_multiples; ++n) {
            r = row(ConstraintKind::band, band_function(f, f_drv, n, spec.band_fraction), spec.alpha_spurious);
            ev.info[r].mode = modal.modes[i].tracked_id;
            ev.info[r].multiple = n;
            if (!grad) continue;
            // H = 1 - |u| / v with u = f - n f_drv, v = fraction n f_drv
            const double u = f - n * f_drv;
            const double v = spec.band_fraction * n * f_drv;
            const double sign = u > 0.0 ? 1.0 : (u < 0.0 ? -1.0 : 0.0);
            ev.raw_grad.row(r) = -sign / v * (frequency_grad.row(i) - n * df_drv) +
                                 std::abs(u) / (v * v) * (spec.band_fraction * n) * df_drv;
        }
    }

    auto trace_row = [&](ConstraintKind kind, double minimum, const TraceResult& hit, const Eigen::MatrixXd& g, int j) {
        const int k = row(kind, minimum - (hit.found() ? hit.value() : unbounded_value), spec.alpha_manufacturing);
        ev.info[k].node = report.nodes[j];
        if (grad && hit.found()) ev.raw_grad.row(k) = -g.row(j);
    };
    for (int j = 0; j < report.size(); ++j) {
        trace_row(ConstraintKind::distance, spec.d_min, report.distance[j], report.distance_grad, j);
        trace_row(ConstraintKind::width, spec.w_min, report.width[j], report.width_grad, j);
    }
    return ev;
}

double aggregate_L(const EvaluatedProblem& problem) {
    double L = problem.weighted_objective();
    for (int q = 0; q < problem.size(); ++q) L += std::max(problem.weight[q] * problem.raw[q], 0.0);
    return L;
}

double bounding_diagonal(std::span<const Vec2> xy) {
    if (xy.empty()) return 0.0;
    Vec2 lo = xy[0], hi = xy[0];
    for (const Vec2& v : xy) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    return (hi - lo).norm();
}

}  // namespace shapeopt
