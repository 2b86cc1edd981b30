#pragma once

#include "shapeopt/mesh.hpp"
#include "shapeopt/shapeparam.hpp"

#include <Eigen/Core>

#include <array>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace shapeopt {

/// Parameters (s, t) of the crossing A + s n = B + t (C - B).
struct RayHit {
    double s = 0.0;
    double t = 0.0;
};

inline constexpr double kEndpointTolerance = 1e-9;

/// Crossing of the line through A along n with segment BC, or nothing when
/// they are parallel or t falls outside [-eps, 1 + eps].
std::optional<RayHit> intersect(const Vec2& A, const Vec2& n, const Vec2& B, const Vec2& C);

enum class TraceSide { outward, inward };  // s > 0 (gap) or s < 0 (width)

struct TraceResult {
    int segment = -1;  // -1 when nothing was hit
    double s = 0.0;
    double t = 0.0;
    bool endpoint = false;  // t within eps of 0 or 1

    bool found() const { return segment >= 0; }
    double value() const { return found() ? std::abs(s) : std::numeric_limits<double>::infinity(); }
};

struct Segment2 {
    Vec2 b;
    Vec2 c;
};

/// Kd-tree over segment midpoints; every tree node keeps the bounding box
/// of its segments, so ray queries prune conservatively.
class SegmentIndex {
public:
    explicit SegmentIndex(std::vector<Segment2> segments);

    /// Closest hit on the requested side, ties broken by lower segment index.
    TraceResult trace(const Vec2& A, const Vec2& n, TraceSide side, std::span<const int> excluded = {}) const;
    /// Same query testing every segment.
    TraceResult trace_brute_force(const Vec2& A, const Vec2& n, TraceSide side,
                                  std::span<const int> excluded = {}) const;

    const std::vector<Segment2>& segments() const { return segments_; }
    std::size_t size() const { return segments_.size(); }

private:
    struct Node {
        Eigen::Vector2d lo, hi;
        int left = -1, right = -1;  // children, -1 for a leaf
        int begin = 0, end = 0;     // range in order_ for a leaf
    };
    int build(int begin, int end);
    bool consider(int seg, const Vec2& A, const Vec2& n, TraceSide side, std::span<const int> excluded,
                  TraceResult& best) const;

    std::vector<Segment2> segments_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

struct ManufacturabilityOptions {
    double d_min = 2.0;   // minimum gap, um
    double w_min = 1.5;   // minimum width, um
    double margin = 0.5;  // reporting band above the minimum
};

struct ConstraintReport {
    std::vector<int> nodes;  // 2D center node of each parameter
    std::vector<TraceResult> width;
    std::vector<TraceResult> distance;
    std::vector<std::array<int, 2>> width_nodes, distance_nodes;  // corner nodes of the hit segments, -1 if none
    Eigen::MatrixXd width_grad;     // centers x parameters, d|s|/dp of the width hit
    Eigen::MatrixXd distance_grad;  // same for the gap hit

    int size() const { return static_cast<int>(nodes.size()); }
};

/// Traces the frozen normals of every parameter center against the
/// physical exterior segments at the current corner positions `xy`.
/// Segments on symmetry planes and the two segments at the center are
/// skipped. Gradients hold the hit segment fixed.
ConstraintReport evaluate_constraints(const BoundaryLoops& loops, std::span<const Vec2> xy,
                                      const DesignParametrization& param, bool brute_force = false);

/// d s / d p for one hit given the coordinate derivatives of A, B and C.
double hit_derivative(const Vec2& n, const Vec2& B, const Vec2& C, const RayHit& hit, const Vec2& dA,
                      const Vec2& dB, const Vec2& dC);

/// Constraint CSV: node_id, width_um, dist_um, w_active, d_active and the
/// corner nodes of both hit segments (-1 when none).
void write_constraints_header(std::ostream& out);
void write_constraints_rows(std::ostream& out, int iteration, const ConstraintReport& report,
                            const ManufacturabilityOptions& options);

}  // namespace shapeopt
