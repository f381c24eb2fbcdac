#pragma once

// Diagonal Fourier multiplier descriptors shared by the dense kernel ops.

#include "grid.hpp"

namespace gph {

enum class MultiplierKind {
  bracket,     // <grad>^alpha on every slot
  free_phase,  // exp(i t Delta_hat): exp(-it|omega|^2) unprimed, conjugate primed
};

struct MultiplierProfile {
  MultiplierKind kind = MultiplierKind::bracket;
  double alpha = 0.0;  // bracket exponent
  double t = 0.0;      // free-phase time
  GridSpec grid;
};

}  // namespace gph
