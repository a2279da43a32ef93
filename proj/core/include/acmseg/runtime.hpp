#pragma once

namespace acmseg {

// Keeps large freed blocks in the heap instead of returning them to the OS.
// The backbone allocates and frees tens of megabytes per pass; without this
// glibc maps fresh pages every time and page faults dominate. No-op off glibc.
void tune_allocator();

}  // namespace acmseg
