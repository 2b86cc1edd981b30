#pragma once

#include "shapeopt/fem.hpp"
#include "shapeopt/manufacturability.hpp"
#include "shapeopt/modal.hpp"
#include "shapeopt/shapeparam.hpp"

#include <Eigen/Core>

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace shapeopt {

struct ElementSensitivity {
    Mat60 dK;
    Mat60 dM;
};

/// Derivatives of the element matrices for a node-coordinate perturbation
/// `dx` (same layout as the coordinates). Explicit 60x60 form.
ElementSensitivity element_sensitivities(const ElementCoords& x, const ElementCoords& dx, const Material& material,
                                         const QuadratureRule& rule = QuadratureRule::gauss27(), int element = -1);

/// u^T (dK - lambda dM) u for an element displacement `u` (3 x 20), without
/// forming the matrices.
double element_eigen_sensitivity(const ElementCoords& x, const ElementCoords& dx, const ElementCoords& u, double lambda,
                                 const Material& material, const QuadratureRule& rule = QuadratureRule::gauss27());

/// Elements touched by each parameter and the element-local coordinate
/// derivatives. Depends only on the sparsity of dx/dp, so it is built once.
class ParameterAdjacency {
public:
    ParameterAdjacency() = default;
    ParameterAdjacency(const Mesh& mesh, const DesignParametrization& param);

    struct Link {
        int parameter = 0;
        ElementCoords dx;
    };

    int parameter_count() const { return parameter_count_; }
    const std::vector<int>& elements_of(int parameter) const { return elements_of_[parameter]; }
    /// Parameters acting on element `e`, ascending.
    const std::vector<Link>& links(int e) const { return links_[e]; }

private:
    int parameter_count_ = 0;
    std::vector<std::vector<int>> elements_of_;
    std::vector<std::vector<Link>> links_;
};

/// df_i/dp_j in Hz per unit parameter for the merged modes listed in
/// `modes` (rows) and all parameters (columns). Interior motion is ignored.
Eigen::MatrixXd frequency_sensitivities(const Mesh& mesh, const ParameterAdjacency& adjacency,
                                        const ModalResult& modal, std::span<const int> modes);

/// Serial reference built from the explicit element matrices.
Eigen::MatrixXd frequency_sensitivities_reference(const Mesh& mesh, const ParameterAdjacency& adjacency,
                                                  const ModalResult& modal, std::span<const int> modes);

struct FdSample {
    std::string quantity;
    int row = 0;  // mode or constraint index
    int col = 0;  // parameter
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct FdReport {
    double h = 1e-4;
    std::vector<FdSample> samples;

    double max_rel_error() const;
    void write_csv(std::ostream& out, bool header = true) const;
};

/// Central difference (f(+h) - f(-h)) / 2h.
double central_difference(const std::function<double(double)>& f, double h);

/// |analytic - numeric| / max(|analytic|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-12);

/// Frequency gradients against central differences through the morph
/// x0 + dx/dp p (interior nodes frozen). The perturbed mode is matched in
/// its own sector by the largest mass-weighted correlation.
FdReport check_frequency_gradients(const Mesh& mesh, const DesignParametrization& param, const Eigen::VectorXd& p,
                                   std::span<const std::pair<int, int>> pairs, double h = 1e-4,
                                   const ModalOptions& options = {});

/// Width and gap gradients against central differences of the traced
/// distances, for the parameters in `columns`. Hits that switch segment or
/// land on a segment end within +-h are skipped. Errors use a floor of 1.
FdReport check_constraint_gradients(const Surface2D& surface, const BoundaryLoops& loops,
                                    const DesignParametrization& param, const Eigen::VectorXd& p,
                                    std::span<const int> columns, double h = 1e-6);

}  // namespace shapeopt
