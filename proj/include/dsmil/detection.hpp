#pragma once

#include <string>
#include <vector>

#include "dsmil/geometry.hpp"

namespace dsmil {

struct Detection {
  Box box;
  double score = 0.0;
};

// Post-NMS detections of one image; per_class[c] is sorted by descending score.
struct DetectionResult {
  std::string image_id;
  std::vector<std::vector<Detection>> per_class;
};

}  // namespace dsmil
