#pragma once

namespace man {

// Worker count used for intra-op parallelism. Resolution order:
// set_num_threads() override, then the MAN_THREADS environment variable,
// then the hardware concurrency. MAN_THREADS=1 is the deterministic
// single-threaded mode; results are also invariant across thread counts
// because every output cell is accumulated by exactly one worker in a
// fixed order.
int num_threads();
void set_num_threads(int n);

}  // namespace man
