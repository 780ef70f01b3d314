#pragma once

#include <cstddef>
#include <vector>

namespace dsmil {

// Multi-hot image-level labels: labels[c] == 1 iff class c is present.
using ClassLabels = std::vector<int>;

inline bool has_positive(const ClassLabels& labels) {
  for (int y : labels) {
    if (y != 0) return true;
  }
  return false;
}

}  // namespace dsmil
