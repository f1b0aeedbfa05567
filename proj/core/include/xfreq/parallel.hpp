#pragma once

namespace xfreq {

/// Worker threads used by the parallel render loops. Values < 1 select the
/// machine default. A no-op when built without OpenMP.
void set_thread_count(int n);
int thread_count();

}  // namespace xfreq
