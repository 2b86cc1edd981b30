#include "shapeopt/parallel.hpp"

#include <omp.h>

namespace shapeopt {

void set_thread_count(int n) {
    if (n > 0) omp_set_num_threads(n);
    omp_set_max_active_levels(1);
}

int thread_count() { return omp_get_max_threads(); }

}  // namespace shapeopt
