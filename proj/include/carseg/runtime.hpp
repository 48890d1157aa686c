// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace carseg {

/// Caps the number of worker threads used by the batch-parallel compute
/// loops. Determinism does not depend on the worker count.
void set_workers(int n);

int worker_count();

}  // namespace carseg
