#include "shapeopt/manufacturability.hpp"

#include "shapeopt/error.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

namespace shapeopt {

namespace {

constexpr int kLeafSize = 8;

bool excluded_contains(std::span<const int> excluded, int seg) {
    return std::find(excluded.begin(), excluded.end(), seg) != excluded.end();
}

// Entry parameter of the ray A + u d (u >= 0) into the box, or +inf on a miss.
double box_entry(const Eigen::Vector2d& lo, const Eigen::Vector2d& hi, const Vec2& A, const Vec2& d) {
    double enter = 0.0, exit = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 2; ++i) {
        if (d(i) == 0.0) {
            if (A(i) < lo(i) || A(i) > hi(i)) return std::numeric_limits<double>::infinity();
            continue;
        }
        double u0 = (lo(i) - A(i)) / d(i), u1 = (hi(i) - A(i)) / d(i);
        if (u0 > u1) std::swap(u0, u1);
        enter = std::max(enter, u0);
        exit = std::min(exit, u1);
    }
    return enter <= exit ? enter : std::numeric_limits<double>::infinity();
}

}  // namespace

std::optional<RayHit> intersect(const Vec2& A, const Vec2& n, const Vec2& B, const Vec2& C) {
    Eigen::Matrix2d X;
    X.col(0) = n;
    X.col(1) = B - C;
    const double det = X.determinant();
    if (std::abs(det) <= 1e-14 * n.norm() * (B - C).norm()) return std::nullopt;
    const Vec2 a = B - A;
    // Cramer's rule keeps the result independent of any factorization path.
    const double s = (a.x() * X(1, 1) - a.y() * X(0, 1)) / det;
    const double t = (X(0, 0) * a.y() - X(1, 0) * a.x()) / det;
    if (t < -kEndpointTolerance || t > 1.0 + kEndpointTolerance) return std::nullopt;
    return RayHit{s, t};
}

double hit_derivative(const Vec2& n, const Vec2& B, const Vec2& C, const RayHit& hit, const Vec2& dA, const Vec2& dB,
                      const Vec2& dC) {
    Eigen::Matrix2d X;
    X.col(0) = n;
    X.col(1) = B - C;
    // d(s,t) = X^-1 (da - dX (s,t)) with a = B - A and dX = [0, dB - dC].
    const Vec2 rhs = (dB - dA) - hit.t * (dB - dC);
    return (rhs.x() * X(1, 1) - rhs.y() * X(0, 1)) / X.determinant();
}

SegmentIndex::SegmentIndex(std::vector<Segment2> segments) : segments_(std::move(segments)) {
    order_.resize(segments_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!segments_.empty()) {
        nodes_.reserve(2 * segments_.size() / kLeafSize + 2);
        build(0, static_cast<int>(segments_.size()));
    }
}

int SegmentIndex::build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    Eigen::Vector2d mlo = lo, mhi = hi;
    for (int k = begin; k < end; ++k) {
        const auto& sg = segments_[order_[k]];
        lo = lo.cwiseMin(sg.b).cwiseMin(sg.c);
        hi = hi.cwiseMax(sg.b).cwiseMax(sg.c);
        const Vec2 mid = 0.5 * (sg.b + sg.c);
        mlo = mlo.cwiseMin(mid);
        mhi = mhi.cwiseMax(mid);
    }
    // Hits may sit up to eps * length beyond a segment end.
    const double pad = 1e-8 * (hi - lo).norm() + 1e-12;
    nodes_[id].lo = lo.array() - pad;
    nodes_[id].hi = hi.array() + pad;
    if (end - begin <= kLeafSize) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    const int axis = (mhi - mlo).x() >= (mhi - mlo).y() ? 0 : 1;
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
        const double ka = segments_[a].b(axis) + segments_[a].c(axis);
        const double kb = segments_[b].b(axis) + segments_[b].c(axis);
        return ka < kb || (ka == kb && a < b);
    });
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

bool SegmentIndex::consider(int seg, const Vec2& A, const Vec2& n, TraceSide side, std::span<const int> excluded,
                            TraceResult& best) const {
    if (excluded_contains(excluded, seg)) return false;
    const auto hit = intersect(A, n, segments_[seg].b, segments_[seg].c);
    if (!hit) return false;
    const bool on_side = side == TraceSide::outward ? hit->s > 0.0 : hit->s < 0.0;
    if (!on_side) return false;
    const double v = std::abs(hit->s);
    if (best.found() && (v > best.value() || (v == best.value() && seg > best.segment))) return false;
    best.segment = seg;
    best.s = hit->s;
    best.t = hit->t;
    best.endpoint = hit->t <= kEndpointTolerance || hit->t >= 1.0 - kEndpointTolerance;
    return true;
}

TraceResult SegmentIndex::trace(const Vec2& A, const Vec2& n, TraceSide side, std::span<const int> excluded) const {
    TraceResult best;
    if (nodes_.empty()) return best;
    const Vec2 d = side == TraceSide::outward ? n : Vec2(-n);
    const double dn = d.norm();
    std::vector<int> stack{0};
    while (!stack.empty()) {
        const Node& node = nodes_[stack.back()];
        stack.pop_back();
        const double enter = box_entry(node.lo, node.hi, A, d);
        if (enter == std::numeric_limits<double>::infinity()) continue;
        if (best.found() && enter * dn > best.value() * (1 + 1e-12)) continue;
        if (node.left < 0) {
            for (int k = node.begin; k < node.end; ++k) consider(order_[k], A, n, side, excluded, best);
            continue;
        }
        // Visit the nearer child first.
        const double el = box_entry(nodes_[node.left].lo, nodes_[node.left].hi, A, d);
        const double er = box_entry(nodes_[node.right].lo, nodes_[node.right].hi, A, d);
        if (el <= er) {
            stack.push_back(node.right);
            stack.push_back(node.left);
        } else {
            stack.push_back(node.left);
            stack.push_back(node.right);
        }
    }
    return best;
}

TraceResult SegmentIndex::trace_brute_force(const Vec2& A, const Vec2& n, TraceSide side,
                                            std::span<const int> excluded) const {
    TraceResult best;
    for (int k = 0; k < static_cast<int>(segments_.size()); ++k) consider(k, A, n, side, excluded, best);
    return best;
}

ConstraintReport evaluate_constraints(const BoundaryLoops& loops, std::span<const Vec2> xy,
                                      const DesignParametrization& param, bool brute_force) {
    // Physical segments only; `global` maps back into loops.segments.
    std::vector<Segment2> segs;
    std::vector<int> global;
    std::vector<int> local_of(loops.segments.size(), -1);
    for (std::size_t k = 0; k < loops.segments.size(); ++k) {
        const auto& sg = loops.segments[k];
        if (sg.symmetry) continue;
        local_of[k] = static_cast<int>(segs.size());
        segs.push_back({xy[sg.a], xy[sg.b]});
        global.push_back(static_cast<int>(k));
    }
    const SegmentIndex index(std::move(segs));

    // Parameter coefficients of every 2D node.
    std::vector<std::vector<std::pair<int, Vec2>>> coeffs(xy.size());
    for (int j = 0; j < param.size(); ++j)
        for (const auto& e : param.columns[j]) coeffs[e.node2d].emplace_back(j, e.coeff);

    const int nc = param.size();
    ConstraintReport r;
    r.nodes = param.center_node;
    r.width.resize(nc);
    r.distance.resize(nc);
    r.width_nodes.assign(nc, {-1, -1});
    r.distance_nodes.assign(nc, {-1, -1});
    r.width_grad = Eigen::MatrixXd::Zero(nc, param.size());
    r.distance_grad = Eigen::MatrixXd::Zero(nc, param.size());

#pragma omp parallel for schedule(dynamic, 8)
    for (int c = 0; c < nc; ++c) {
        const int A = param.center_node[c];
        const Vec2 n = loops.normals0[A];
        std::vector<int> excluded;
        for (std::size_t k = 0; k < loops.segments.size(); ++k) {
            const auto& sg = loops.segments[k];
            if ((sg.a == A || sg.b == A) && local_of[k] >= 0) excluded.push_back(local_of[k]);
        }
        for (const TraceSide side : {TraceSide::inward, TraceSide::outward}) {
            TraceResult hit = brute_force ? index.trace_brute_force(xy[A], n, side, excluded)
                                          : index.trace(xy[A], n, side, excluded);
            auto& nodes = side == TraceSide::inward ? r.width_nodes[c] : r.distance_nodes[c];
            auto grad = side == TraceSide::inward ? r.width_grad.row(c) : r.distance_grad.row(c);
            if (hit.found()) {
                const auto& sg = loops.segments[global[hit.segment]];
                nodes = {sg.a, sg.b};
                const double sign = hit.s > 0.0 ? 1.0 : -1.0;
                auto coeff = [&](int node, int j) {
                    for (const auto& [jj, v] : coeffs[node])
                        if (jj == j) return v;
                    return Vec2(Vec2::Zero());
                };
                std::vector<int> touched;
                for (int node : {A, sg.a, sg.b})
                    for (const auto& [j, v] : coeffs[node]) touched.push_back(j);
                std::sort(touched.begin(), touched.end());
                touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
                for (int j : touched)
                    grad(j) = sign * hit_derivative(n, xy[sg.a], xy[sg.b], RayHit{hit.s, hit.t}, coeff(A, j),
                                                    coeff(sg.a, j), coeff(sg.b, j));
                hit.segment = global[hit.segment];
            }
            (side == TraceSide::inward ? r.width[c] : r.distance[c]) = hit;
        }
    }
    return r;
}

void write_constraints_header(std::ostream& out) {
    out << "iteration,node_id,width_um,dist_um,w_active,d_active,w_seg_a,w_seg_b,d_seg_a,d_seg_b\n";
}

void write_constraints_rows(std::ostream& out, int iteration, const ConstraintReport& report,
                            const ManufacturabilityOptions& options) {
    const auto old = out.precision(12);
    for (int c = 0; c < report.size(); ++c) {
        const double w = report.width[c].value(), d = report.distance[c].value();
        out << iteration << ',' << report.nodes[c] << ',' << w << ',' << d << ',' << (w < options.w_min + options.margin)
            << ',' << (d < options.d_min + options.margin) << ',' << report.width_nodes[c][0] << ','
            << report.width_nodes[c][1] << ',' << report.distance_nodes[c][0] << ',' << report.distance_nodes[c][1]
            << '\n';
    }
    out.precision(old);
}

}  // namespace shapeopt
