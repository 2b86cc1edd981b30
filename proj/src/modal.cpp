#include "shapeopt/modal.hpp"

#include "shapeopt/error.hpp"
#include "shapeopt/parallel.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>

namespace shapeopt {

namespace {

using Factor = Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
    Eigen::Index k = 0;
    v.cwiseAbs().maxCoeff(&k);
    if (v(k) < 0) v = -v;
}

Eigen::MatrixXd random_block(Eigen::Index n, Eigen::Index b, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Eigen::MatrixXd X(n, b);
    for (Eigen::Index j = 0; j < b; ++j)
        for (Eigen::Index i = 0; i < n; ++i) X(i, j) = std::ldexp(static_cast<double>(rng() >> 11), -52) - 1.0;
    return X;
}

// (K - lambda M) phi accumulated in extended precision.
Eigen::VectorXd residual_vector(const SparseMatrix& K, const SparseMatrix& M, const Eigen::VectorXd& phi,
                                double lambda, long double* kphi_norm = nullptr) {
    const Eigen::Index n = phi.size();
    std::vector<long double> kphi(n, 0.0L), mphi(n, 0.0L);
    for (Eigen::Index j = 0; j < n; ++j) {
        const long double pj = phi(j);
        for (SparseMatrix::InnerIterator it(K, j); it; ++it) kphi[it.row()] += static_cast<long double>(it.value()) * pj;
        for (SparseMatrix::InnerIterator it(M, j); it; ++it) mphi[it.row()] += static_cast<long double>(it.value()) * pj;
    }
    Eigen::VectorXd r(n);
    long double kn = 0.0L;
    for (Eigen::Index i = 0; i < n; ++i) {
        r(i) = static_cast<double>(kphi[i] - static_cast<long double>(lambda) * mphi[i]);
        kn += kphi[i] * kphi[i];
    }
    if (kphi_norm) *kphi_norm = std::sqrt(kn);
    return r;
}

// phi^T K phi / phi^T M phi in extended precision. Kphi is small next to
// the entries of K for stiff meshes, so double sums lose about 1e-8.
double rayleigh_quotient(const SparseMatrix& K, const SparseMatrix& M, const Eigen::VectorXd& phi) {
    long double num = 0.0L, den = 0.0L;
    for (Eigen::Index j = 0; j < phi.size(); ++j) {
        long double kj = 0.0L, mj = 0.0L;
        for (SparseMatrix::InnerIterator it(K, j); it; ++it) kj += static_cast<long double>(it.value()) * phi(it.row());
        for (SparseMatrix::InnerIterator it(M, j); it; ++it) mj += static_cast<long double>(it.value()) * phi(it.row());
        num += kj * phi(j);
        den += mj * phi(j);
    }
    return static_cast<double>(num / den);
}

void finalize(EigenSolution& sol, const SparseMatrix& K, const SparseMatrix& M) {
    for (Eigen::Index j = 0; j < sol.vectors.cols(); ++j) {
        auto v = sol.vectors.col(j);
        v /= std::sqrt(v.dot(M * v));
        fix_sign(v);
        sol.eigenvalues(j) = rayleigh_quotient(K, M, v);
    }
    // Recomputed values may swap near-degenerate neighbours.
    for (Eigen::Index j = 1; j < sol.eigenvalues.size(); ++j)
        for (Eigen::Index i = j; i > 0 && sol.eigenvalues(i) < sol.eigenvalues(i - 1); --i) {
            std::swap(sol.eigenvalues(i), sol.eigenvalues(i - 1));
            sol.vectors.col(i).swap(sol.vectors.col(i - 1));
        }
    sol.residuals.resize(sol.vectors.cols());
    for (Eigen::Index j = 0; j < sol.vectors.cols(); ++j)
        sol.residuals[j] = eigen_residual(K, M, sol.vectors.col(j), sol.eigenvalues(j), sol.shift);
}

void check_inputs(const SparseMatrix& K, const SparseMatrix& M, int m) {
    if (K.rows() != K.cols() || M.rows() != M.cols() || K.rows() != M.rows())
        throw Error("eigenproblem: K and M must be square and of equal size");
    if (m < 1) throw Error("eigenproblem: at least one mode must be requested");
    if (m > K.rows())
        throw Error("eigenproblem: " + std::to_string(m) + " modes requested but only " + std::to_string(K.rows()) +
                    " degrees of freedom");
}

// Block Lanczos on the shift-inverted operator (K - sigma M)^{-1} M, which
// is self-adjoint in the M inner product. Every new block is
// reorthogonalized twice against the whole basis.
class Lanczos {
public:
    Lanczos(const SparseMatrix& K, const SparseMatrix& M, int m, const EigenOptions& opt)
        : K_(K), M_(M), m_(m), opt_(opt), n_(K.rows()) {}

    EigenSolution run() {
        factorize();
        const Eigen::Index b = std::min<Eigen::Index>(opt_.block_size, n_);
        capacity_ = std::min<Eigen::Index>(n_, std::max<Eigen::Index>(2 * m_ + 4 * b, 40));
        V_.resize(n_, capacity_);
        MV_.resize(n_, capacity_);
        H_ = Eigen::MatrixXd::Zero(capacity_, capacity_);

        std::uint64_t seed = opt_.seed;
        append(apply(random_block(n_, b, seed++)), -1);

        Eigen::Index k = 0;  // columns whose image has been projected
        while (true) {
            if (k == cols_) {
                if (cols_ == n_) break;
                append(random_block(n_, 1, seed++), -1);
                if (k == cols_) break;
                continue;
            }
            const Eigen::Index bb = std::min(b, cols_ - k);
            Eigen::MatrixXd W = apply(V_.middleCols(k, bb));
            for (int pass = 0; pass < 2; ++pass) {
                const Eigen::MatrixXd h = MV_.leftCols(cols_).transpose() * W;
                W.noalias() -= V_.leftCols(cols_) * h;
                H_.block(0, k, cols_, bb) += h;
            }
            for (Eigen::Index q = 0; q < bb; ++q) append(W.col(q), k + q);
            k += bb;

            if (k >= m_) {
                if (auto sol = check(k)) return *sol;
            }
            if (k >= max_basis()) break;
        }
        auto sol = ritz(k);
        refine(sol);
        finalize(sol, K_, M_);
        const double worst = *std::max_element(sol.residuals.begin(), sol.residuals.end());
        if (!(worst <= opt_.accept))
            throw ConvergenceError("Lanczos did not converge: worst residual " + std::to_string(worst),
                                   sol.residuals);
        return sol;
    }

private:
    void factorize() {
        auto attempt = [&](double sigma) {
            const SparseMatrix A = K_ - sigma * M_;
            factor_.compute(A);
            return factor_.info() == Eigen::Success && (factor_.vectorD().array() > 0.0).all();
        };
        sigma_ = opt_.shift;
        if (attempt(sigma_)) return;
        sigma_ = -1e-7 * K_.diagonal().sum() / M_.diagonal().sum();
        if (!attempt(sigma_)) throw ConvergenceError("shifted stiffness matrix is not positive definite");
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const {
        const Eigen::MatrixXd MX = M_ * X;
        return factor_.solve(MX);
    }

    Eigen::Index max_basis() const { return std::min<Eigen::Index>(n_, std::max<Eigen::Index>(20 * m_, 600)); }

    void grow() {
        const Eigen::Index cap = std::min<Eigen::Index>(n_, 2 * capacity_);
        V_.conservativeResize(Eigen::NoChange, cap);
        MV_.conservativeResize(Eigen::NoChange, cap);
        H_.conservativeResize(cap, cap);
        H_.bottomRows(cap - capacity_).setZero();
        H_.rightCols(cap - capacity_).setZero();
        capacity_ = cap;
    }

    // M-orthonormalize w against the basis and append it. `source` is the
    // column whose image produced w (-1 for fresh start vectors).
    void append(Eigen::MatrixXd W, Eigen::Index source) {
        for (Eigen::Index q = 0; q < W.cols(); ++q) {
            Eigen::VectorXd w = W.col(q);
            const double before = std::sqrt(std::max(0.0, w.dot(M_ * w)));
            for (int pass = 0; pass < 2 && cols_ > 0; ++pass) {
                const Eigen::VectorXd h = MV_.leftCols(cols_).transpose() * w;
                w.noalias() -= V_.leftCols(cols_) * h;
                if (source >= 0) H_.block(0, source, cols_, 1) += h;
            }
            const Eigen::VectorXd Mw = M_ * w;
            const double norm = std::sqrt(std::max(0.0, w.dot(Mw)));
            if (!(norm > 1e-10 * before) || cols_ >= n_) continue;  // deflated
            if (cols_ == capacity_) grow();
            V_.col(cols_) = w / norm;
            MV_.col(cols_) = Mw / norm;
            if (source >= 0) H_(cols_, source) = norm;
            ++cols_;
        }
    }

    EigenSolution ritz(Eigen::Index k) {
        const Eigen::MatrixXd T = 0.5 * (H_.topLeftCorner(k, k) + H_.topLeftCorner(k, k).transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(T);
        // Largest theta = 1 / (lambda - sigma) are the wanted modes.
        EigenSolution sol;
        sol.shift = sigma_;
        sol.basis_size = static_cast<int>(k);
        sol.eigenvalues.resize(m_);
        Eigen::MatrixXd Y(k, m_);
        for (int j = 0; j < m_; ++j) {
            const Eigen::Index c = k - 1 - j;
            const double theta = eig.eigenvalues()(c);
            if (!(theta > 0.0)) throw ConvergenceError("Lanczos produced a non-positive Ritz value");
            sol.eigenvalues(j) = sigma_ + 1.0 / theta;
            Y.col(j) = eig.eigenvectors().col(c);
        }
        estimates_.resize(m_);
        for (int j = 0; j < m_; ++j) {
            const double theta = 1.0 / (sol.eigenvalues(j) - sigma_);
            estimates_[j] = cols_ > k ? (H_.block(k, 0, cols_ - k, k) * Y.col(j)).norm() / theta : 0.0;
        }
        sol.vectors = V_.leftCols(k) * Y;
        return sol;
    }

    // One inverse-iteration correction with an extended-precision residual,
    // followed by a Rayleigh-Ritz step on the corrected vectors.
    void refine(EigenSolution& sol) const {
        Eigen::MatrixXd X = sol.vectors;
        for (Eigen::Index j = 0; j < X.cols(); ++j)
            X.col(j) -= factor_.solve(residual_vector(K_, M_, X.col(j), sol.eigenvalues(j)));
        const Eigen::MatrixXd KX = K_ * X, MX = M_ * X;
        Eigen::MatrixXd Kp = X.transpose() * KX, Mp = X.transpose() * MX;
        Kp = 0.5 * (Kp + Kp.transpose()).eval();
        Mp = 0.5 * (Mp + Mp.transpose()).eval();
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> eig(Kp, Mp);
        if (eig.info() != Eigen::Success) return;
        sol.eigenvalues = eig.eigenvalues();
        sol.vectors = X * eig.eigenvectors();
    }

    std::optional<EigenSolution> check(Eigen::Index k) {
        auto sol = ritz(k);
        const double est = *std::max_element(estimates_.begin(), estimates_.end());
        if (!(est <= 1e-9) && k < n_) return std::nullopt;
        refine(sol);
        finalize(sol, K_, M_);
        const double worst = *std::max_element(sol.residuals.begin(), sol.residuals.end());
        if (worst <= opt_.tolerance) return sol;
        // The Krylov space has converged; remaining error is roundoff.
        if ((est <= 1e-14 || k >= n_) && worst <= opt_.accept) return sol;
        return std::nullopt;
    }

    const SparseMatrix& K_;
    const SparseMatrix& M_;
    const int m_;
    const EigenOptions& opt_;
    const Eigen::Index n_;
    Factor factor_;
    double sigma_ = 0.0;
    Eigen::MatrixXd V_, MV_, H_;
    Eigen::Index cols_ = 0;
    Eigen::Index capacity_ = 0;
    std::vector<double> estimates_;
};

}  // namespace

double frequency_hz(double eigenvalue) { return std::sqrt(std::max(eigenvalue, 0.0)) / (2 * std::numbers::pi); }

double eigen_residual(const SparseMatrix& K, const SparseMatrix& M, const Eigen::VectorXd& phi, double lambda,
                      double lambda_floor) {
    long double kn = 0.0L;
    const Eigen::VectorXd r = residual_vector(K, M, phi, lambda, &kn);
    const double floor = std::abs(lambda_floor) * (M * phi).norm();
    const double denom = std::max(static_cast<double>(kn), floor);
    return denom > 0.0 ? r.norm() / denom : r.norm();
}

EigenSolution solve_modes_dense(const SparseMatrix& K, const SparseMatrix& M, int m) {
    check_inputs(K, M, m);
    const Eigen::MatrixXd Kd(K), Md(M);
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> eig(Kd, Md);
    if (eig.info() != Eigen::Success) throw ConvergenceError("dense generalized eigensolver failed");
    EigenSolution sol;
    sol.eigenvalues = eig.eigenvalues().head(m);
    sol.vectors = eig.eigenvectors().leftCols(m);
    sol.basis_size = static_cast<int>(K.rows());
    finalize(sol, K, M);
    return sol;
}

EigenSolution solve_modes(const SparseMatrix& K, const SparseMatrix& M, int m, const EigenOptions& options) {
    check_inputs(K, M, m);
    if (K.rows() <= options.dense_threshold) return solve_modes_dense(K, M, m);
    return Lanczos(K, M, m, options).run();
}

Eigen::VectorXd ModalResult::free_vector(int mode) const {
    return sector_of(mode).vectors.col(modes[mode].sector_index);
}

Eigen::VectorXd ModalResult::full_vector(int mode) const { return sector_of(mode).dofs.expand(free_vector(mode)); }

int ModalResult::find(Sector sector, int sector_index) const {
    for (std::size_t i = 0; i < modes.size(); ++i)
        if (modes[i].sector == sector && modes[i].sector_index == sector_index) return static_cast<int>(i);
    return -1;
}

int ModalResult::find_tracked(int id) const {
    for (std::size_t i = 0; i < modes.size(); ++i)
        if (modes[i].tracked_id == id) return static_cast<int>(i);
    return -1;
}

ModalResult merge_sectors(std::vector<SectorSolution> sectors, int n_modes) {
    if (sectors.size() != 4) throw Error("merge_sectors: expected 4 sector results, got " + std::to_string(sectors.size()));
    std::sort(sectors.begin(), sectors.end(),
              [](const SectorSolution& a, const SectorSolution& b) { return a.sector < b.sector; });
    for (int s = 0; s < 4; ++s)
        if (sectors[s].sector != kSectors[s]) throw Error("merge_sectors: duplicate sector " + to_string(sectors[s].sector));

    ModalResult r;
    for (const auto& sec : sectors)
        for (Eigen::Index j = 0; j < sec.eigenvalues.size(); ++j) {
            Mode mode;
            mode.eigenvalue = sec.eigenvalues(j);
            mode.frequency = frequency_hz(mode.eigenvalue);
            mode.omega = 2 * std::numbers::pi * mode.frequency;
            mode.sector = sec.sector;
            mode.sector_index = static_cast<int>(j);
            if (!sec.tracked.empty()) mode.tracked_id = sec.tracked[j];
            r.modes.push_back(mode);
        }
    std::stable_sort(r.modes.begin(), r.modes.end(), [](const Mode& a, const Mode& b) {
        if (a.frequency != b.frequency) return a.frequency < b.frequency;
        return a.sector < b.sector;
    });
    if (static_cast<int>(r.modes.size()) > n_modes) r.modes.resize(n_modes);
    r.sectors = std::move(sectors);
    return r;
}

namespace {

SectorSolution solve_sector(const Mesh& mesh, Sector sector, int count, const ModalOptions& options) {
    SectorSolution s;
    s.sector = sector;
    s.dofs = sector_dofmap(mesh, sector);
    const auto sys = assemble(mesh, s.dofs);
    count = std::min(count, s.dofs.free_count());
    EigenOptions eo = options.eigen;
    eo.seed += static_cast<std::uint64_t>(sector);
    auto sol = solve_modes(sys.K, sys.M, count, eo);
    s.eigenvalues = std::move(sol.eigenvalues);
    s.vectors = std::move(sol.vectors);
    s.residuals = std::move(sol.residuals);
    if (options.weighted) {
        Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt(sys.M);
        if (llt.info() != Eigen::Success) throw Error("mass matrix Cholesky factorization failed");
        const Eigen::MatrixXd Pv = llt.permutationP() * s.vectors;
        s.weighted = llt.matrixU() * Pv;
    }
    return s;
}

}  // namespace

ModalResult solve_sectors(const Mesh& mesh, const ModalOptions& options) {
    if (options.n_modes < 1) throw Error("n_modes must be at least 1");
    const int step = (options.n_modes + 3) / 4;
    std::vector<int> count(4, step + 4);
    std::vector<SectorSolution> sectors(4);
    std::vector<bool> pending(4, true);

    while (true) {
        LoopErrors errors;
#pragma omp parallel for schedule(dynamic, 1)
        for (int s = 0; s < 4; ++s) {
            if (!pending[s]) continue;
            errors.run(s, [&] { sectors[s] = solve_sector(mesh, kSectors[s], count[s], options); });
        }
        errors.rethrow();

        std::vector<double> all;
        for (const auto& sec : sectors) all.insert(all.end(), sec.eigenvalues.begin(), sec.eigenvalues.end());
        std::sort(all.begin(), all.end());
        const double cutoff = all[std::min<std::size_t>(options.n_modes, all.size()) - 1];
        bool again = false;
        for (int s = 0; s < 4; ++s) {
            const auto& sec = sectors[s];
            const bool exhausted = sec.eigenvalues.size() >= sec.dofs.free_count();
            pending[s] = !exhausted && sec.eigenvalues.size() > 0 &&
                         sec.eigenvalues(sec.eigenvalues.size() - 1) <= cutoff;
            if (pending[s]) {
                count[s] += step;
                again = true;
            }
        }
        if (!again) break;
    }

    auto result = merge_sectors(sectors, options.n_modes);
    for (const auto& sec : result.sectors)
        for (Eigen::Index i = 0; i < sec.eigenvalues.size(); ++i)
            for (Eigen::Index j = i + 1; j < sec.eigenvalues.size(); ++j) {
                const double fi = frequency_hz(sec.eigenvalues(i)), fj = frequency_hz(sec.eigenvalues(j));
                if (fi > 0.0 && std::abs(fi - fj) < 1e-3 * fi) {
                    std::ostringstream msg;
                    msg << "near-repeated eigenvalues in sector " << to_string(sec.sector) << ": " << fi << " Hz and "
                        << fj << " Hz";
                    result.warnings.push_back(msg.str());
                }
            }
    return result;
}

Eigen::MatrixXd mac(const Eigen::MatrixXd& current_weighted, const Eigen::MatrixXd& previous_weighted) {
    if (current_weighted.rows() != previous_weighted.rows())
        throw Error("mac: eigenvector dimensions differ (" + std::to_string(current_weighted.rows()) + " vs " +
                    std::to_string(previous_weighted.rows()) + ")");
    return current_weighted.transpose() * previous_weighted;
}

Tracking track_modes(const Eigen::MatrixXd& m, double threshold) {
    struct Entry {
        double value;
        int i, j;
    };
    std::vector<Entry> entries;
    entries.reserve(m.size());
    for (int j = 0; j < m.cols(); ++j)
        for (int i = 0; i < m.rows(); ++i) entries.push_back({std::abs(m(i, j)), i, j});
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.value > b.value; });

    Tracking t;
    t.current_of_previous.assign(m.cols(), -1);
    t.value.assign(m.cols(), 0.0);
    std::vector<bool> used(m.rows(), false);
    for (const auto& e : entries) {
        if (used[e.i] || t.current_of_previous[e.j] >= 0) continue;
        used[e.i] = true;
        t.current_of_previous[e.j] = e.i;
        t.value[e.j] = e.value;
        if (e.value < threshold) t.ambiguous.push_back(e.j);
    }
    std::sort(t.ambiguous.begin(), t.ambiguous.end());
    return t;
}

void ModeTracker::initialize(ModalResult& result, Sector drive_sector, int drive_index, Sector detection_sector,
                             int detection_index) {
    next_id_ = 0;
    for (auto& sec : result.sectors) sec.tracked.assign(sec.eigenvalues.size(), -1);
    for (auto& mode : result.modes) {
        mode.tracked_id = next_id_++;
        result.sectors[static_cast<int>(mode.sector)].tracked[mode.sector_index] = mode.tracked_id;
    }
    for (auto& sec : result.sectors)
        for (auto& id : sec.tracked)
            if (id < 0) id = next_id_++;

    const int drive = result.find(drive_sector, drive_index);
    const int detection = result.find(detection_sector, detection_index);
    if (drive < 0)
        throw Error("drive mode " + to_string(drive_sector) + "[" + std::to_string(drive_index) +
                    "] is not among the retained modes");
    if (detection < 0)
        throw Error("detection mode " + to_string(detection_sector) + "[" + std::to_string(detection_index) +
                    "] is not among the retained modes");
    if (drive == detection) throw Error("drive and detection modes must differ");
    drive_id_ = result.modes[drive].tracked_id;
    detection_id_ = result.modes[detection].tracked_id;
    initialized_ = true;
    locate(result);
    remember(result);
}

std::vector<std::string> ModeTracker::update(ModalResult& result, double threshold) {
    if (!initialized_) throw Error("mode tracker used before initialization");
    std::vector<std::string> warnings;
    for (int s = 0; s < 4; ++s) {
        auto& sec = result.sectors[s];
        sec.tracked.assign(sec.eigenvalues.size(), -1);
        const auto t = track_modes(mac(sec.weighted, previous_weighted_[s]), threshold);
        for (std::size_t j = 0; j < t.current_of_previous.size(); ++j)
            if (t.current_of_previous[j] >= 0) sec.tracked[t.current_of_previous[j]] = previous_ids_[s][j];
        for (int j : t.ambiguous) {
            std::ostringstream msg;
            msg << "ambiguous mode tracking in sector " << to_string(sec.sector) << ": mode id "
                << previous_ids_[s][j] << " matched with |MAC| = " << std::setprecision(3) << t.value[j];
            warnings.push_back(msg.str());
        }
        for (auto& id : sec.tracked)
            if (id < 0) id = next_id_++;
    }
    for (auto& mode : result.modes)
        mode.tracked_id = result.sectors[static_cast<int>(mode.sector)].tracked[mode.sector_index];
    locate(result);
    remember(result);
    result.warnings.insert(result.warnings.end(), warnings.begin(), warnings.end());
    return warnings;
}

void ModeTracker::restore(ModalResult& result, const std::vector<std::vector<int>>& ids, int next_id, int drive_id,
                          int detection_id) {
    if (ids.size() != 4) throw Error("tracker restore: expected ids for 4 sectors");
    for (int s = 0; s < 4; ++s) {
        if (static_cast<Eigen::Index>(ids[s].size()) != result.sectors[s].eigenvalues.size())
            throw Error("tracker restore: mode count of sector " + to_string(kSectors[s]) + " differs");
        result.sectors[s].tracked = ids[s];
    }
    for (auto& mode : result.modes)
        mode.tracked_id = result.sectors[static_cast<int>(mode.sector)].tracked[mode.sector_index];
    next_id_ = next_id;
    drive_id_ = drive_id;
    detection_id_ = detection_id;
    initialized_ = true;
    locate(result);
    remember(result);
}

void ModeTracker::locate(ModalResult& result) const {
    result.drive = result.find_tracked(drive_id_);
    result.detection = result.find_tracked(detection_id_);
    if (result.drive < 0) throw Error("drive mode lost: tracked id " + std::to_string(drive_id_) + " not retained");
    if (result.detection < 0)
        throw Error("detection mode lost: tracked id " + std::to_string(detection_id_) + " not retained");
}

void ModeTracker::remember(const ModalResult& result) {
    previous_weighted_.clear();
    previous_ids_.clear();
    for (const auto& sec : result.sectors) {
        if (sec.weighted.size() == 0 && sec.eigenvalues.size() > 0)
            throw Error("mode tracking needs mass-weighted eigenvectors");
        previous_weighted_.push_back(sec.weighted);
        previous_ids_.push_back(sec.tracked);
    }
}

void write_spectrum_header(std::ostream& out) {
    out << "iteration,mode_index,sector,frequency_hz,tracked_id,is_drive,is_detection,in_band_n\n";
}

void write_spectrum_rows(std::ostream& out, int iteration, const ModalResult& result, double band_fraction,
                         int band_multiples) {
    const double f_drv = result.drive >= 0 ? result.modes[result.drive].frequency : 0.0;
    const auto old_flags = out.flags();
    const auto old_precision = out.precision();
    out << std::setprecision(12);
    for (std::size_t i = 0; i < result.modes.size(); ++i) {
        const auto& mode = result.modes[i];
        const bool drive = static_cast<int>(i) == result.drive;
        const bool detection = static_cast<int>(i) == result.detection;
        int band = 0;
        if (!drive && !detection && f_drv > 0.0)
            for (int n = 1; n <= band_multiples && band == 0; ++n)
                if (std::abs(mode.frequency - n * f_drv) < band_fraction * n * f_drv) band = n;
        out << iteration << ',' << i << ',' << to_string(mode.sector) << ',' << mode.frequency << ','
            << mode.tracked_id << ',' << (drive ? 1 : 0) << ',' << (detection ? 1 : 0) << ',' << band << '\n';
    }
    out.flags(old_flags);
    out.precision(old_precision);
}

}  // namespace shapeopt
