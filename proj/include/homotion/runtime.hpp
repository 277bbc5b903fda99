#pragma once

namespace homotion {

// Keeps freed heap memory mapped between forward passes so that repeated
// tensor allocations do not page-fault. Process-wide; call once from main.
void tune_allocator();

}  // namespace homotion
