// Parallel kernels against their serial references. Thread count is the
// benchmark argument for the OpenMP paths.

#include "shapeopt/fem.hpp"
#include "shapeopt/manufacturability.hpp"
#include "shapeopt/meshupdate.hpp"
#include "shapeopt/modal.hpp"
#include "shapeopt/optimizer.hpp"
#include "shapeopt/parallel.hpp"
#include "shapeopt/sensitivity.hpp"

#include <benchmark/benchmark.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace shapeopt;

namespace {

struct Fixture {
    DesignModel model;
    ModalResult modal;
    ParameterAdjacency adjacency;
    std::vector<int> modes;
    std::vector<Vec2> xy;

    Fixture()
        : model(build_design_model(generate_demo_resonator(DemoSpec{}), sets::springs, 15.0)),
          modal(solve_sectors(model.initial, [] {
              ModalOptions o;
              o.n_modes = 8;
              return o;
          }())),
          adjacency(model.initial, model.param) {
        modes.resize(modal.modes.size());
        std::iota(modes.begin(), modes.end(), 0);
        xy.resize(model.surface.size());
        for (std::size_t i = 0; i < xy.size(); ++i)
            xy[i] = model.initial.nodes[model.surface.column_nodes[i].back()].x.head<2>();
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

class Threads {
public:
    explicit Threads(int n) : before_(thread_count()) { set_thread_count(n); }
    ~Threads() { set_thread_count(before_); }

private:
    int before_;
};

void BM_sensitivities(benchmark::State& state) {
    const Fixture& f = fixture();
    Threads t(static_cast<int>(state.range(0)));
    for (auto _ : state)
        benchmark::DoNotOptimize(frequency_sensitivities(f.model.initial, f.adjacency, f.modal, f.modes));
}
BENCHMARK(BM_sensitivities)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_sensitivities_reference(benchmark::State& state) {
    const Fixture& f = fixture();
    for (auto _ : state)
        benchmark::DoNotOptimize(frequency_sensitivities_reference(f.model.initial, f.adjacency, f.modal, f.modes));
}
BENCHMARK(BM_sensitivities_reference)->Unit(benchmark::kMillisecond);

void BM_assemble(benchmark::State& state) {
    const Fixture& f = fixture();
    Threads t(static_cast<int>(state.range(0)));
    const DofMap dofs = sector_dofmap(f.model.initial, Sector::SS);
    for (auto _ : state) benchmark::DoNotOptimize(assemble(f.model.initial, dofs));
}
BENCHMARK(BM_assemble)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_constraints(benchmark::State& state) {
    const Fixture& f = fixture();
    Threads t(static_cast<int>(state.range(0)));
    const bool brute = state.range(1) != 0;
    for (auto _ : state) benchmark::DoNotOptimize(evaluate_constraints(f.model.loops, f.xy, f.model.param, brute));
}
BENCHMARK(BM_constraints)->Args({1, 0})->Args({4, 0})->Args({1, 1})->Unit(benchmark::kMicrosecond);

void BM_distortion(benchmark::State& state) {
    const Fixture& f = fixture();
    Threads t(static_cast<int>(state.range(0)));
    const MeshUpdater updater(f.model.surface, f.model.loops);
    std::vector<Vec2> g;
    for (auto _ : state) benchmark::DoNotOptimize(updater.distortion(updater.initial_xy(), 0.0, &g));
}
BENCHMARK(BM_distortion)->Arg(1)->Arg(4)->Unit(benchmark::kMicrosecond);

// 10k short random segments, 1k rays.
struct Scene {
    SegmentIndex index;
    std::vector<std::pair<Vec2, Vec2>> rays;
};

const Scene& scene() {
    static const Scene s = [] {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> pos(0.0, 1000.0), ang(0.0, 2 * M_PI);
        std::vector<Segment2> segs;
        for (int i = 0; i < 10000; ++i) {
            const Vec2 b(pos(rng), pos(rng));
            const double a = ang(rng);
            segs.push_back({b, b + 5.0 * Vec2(std::cos(a), std::sin(a))});
        }
        Scene out{SegmentIndex(std::move(segs)), {}};
        for (int i = 0; i < 1000; ++i) {
            const double a = ang(rng);
            out.rays.emplace_back(Vec2(pos(rng), pos(rng)), Vec2(std::cos(a), std::sin(a)));
        }
        return out;
    }();
    return s;
}

void BM_trace_kdtree(benchmark::State& state) {
    const Scene& s = scene();
    for (auto _ : state)
        for (const auto& [a, n] : s.rays) benchmark::DoNotOptimize(s.index.trace(a, n, TraceSide::outward));
}
BENCHMARK(BM_trace_kdtree)->Unit(benchmark::kMillisecond);

void BM_trace_brute_force(benchmark::State& state) {
    const Scene& s = scene();
    for (auto _ : state)
        for (const auto& [a, n] : s.rays)
            benchmark::DoNotOptimize(s.index.trace_brute_force(a, n, TraceSide::outward));
}
BENCHMARK(BM_trace_brute_force)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
