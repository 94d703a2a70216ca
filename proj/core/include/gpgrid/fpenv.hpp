#ifndef GPGRID_FPENV_HPP
#define GPGRID_FPENV_HPP

#if defined(__SSE__) || defined(__x86_64__)
#include <xmmintrin.h>
#define GPGRID_HAVE_MXCSR 1
#endif

namespace gpgrid {

/// Flushes subnormal operands and results to zero on the calling thread for
/// the lifetime of the guard. Correlation matrices of long designs are full of
/// entries near the underflow threshold, and subnormal arithmetic is two
/// orders of magnitude slower.
class DenormalGuard {
 public:
  DenormalGuard() {
#ifdef GPGRID_HAVE_MXCSR
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040u);  // FTZ | DAZ
#endif
  }
  ~DenormalGuard() {
#ifdef GPGRID_HAVE_MXCSR
    _mm_setcsr(saved_);
#endif
  }
  DenormalGuard(const DenormalGuard&) = delete;
  DenormalGuard& operator=(const DenormalGuard&) = delete;

 private:
  unsigned int saved_ = 0;
};

}  // namespace gpgrid

#endif  // GPGRID_FPENV_HPP
