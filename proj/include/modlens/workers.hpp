#pragma once

namespace modlens {

// Thread count for data-parallel loops: OpenMP's max, optionally capped by
// the MODLENS_NUM_WORKERS environment variable (positive integer).
int worker_cap();

}  // namespace modlens
