#pragma once

#include <climits>
#include <cstddef>
#include <exception>
#include <mutex>

namespace shapeopt {

// Thread control for the OpenMP kernels. Results never depend on the
// thread count: every parallel loop writes disjoint outputs and all
// reductions run serially in a fixed order.
void set_thread_count(int n);
int thread_count();

/// Exceptions may not leave an OpenMP region. Loop bodies run through
/// `run`; afterwards `rethrow` raises the error of the lowest failing
/// iteration, so the reported error does not depend on scheduling.
class LoopErrors {
public:
    template <class F>
    void run(long index, F&& body) noexcept {
        try {
            body();
        } catch (...) {
            std::lock_guard lock(mutex_);
            if (index < index_) {
                index_ = index;
                error_ = std::current_exception();
            }
        }
    }

    void rethrow() {
        if (error_) std::rethrow_exception(error_);
    }

private:
    std::mutex mutex_;
    long index_ = LONG_MAX;
    std::exception_ptr error_;
};

}  // namespace shapeopt
