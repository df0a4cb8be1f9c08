#pragma once

namespace terracer {

/// Caps worker parallelism for all OpenMP kernels. n <= 0 restores the
/// default (all hardware threads). Thread count never changes results:
/// every kernel assigns each output cell to exactly one thread and keeps a
/// fixed serial summation order within it.
void set_thread_cap(int n);

int thread_cap();

/// Resolves the cap from a CLI flag with the TERRACER_THREADS environment
/// variable as fallback, then applies it.
void apply_thread_cap_from_env(int cli_threads);

}  // namespace terracer
