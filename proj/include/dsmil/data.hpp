#pragma once

// Proposal bags (one per image) and the synthetic planted-object generator
// that stands in for a CNN backbone over real proposals.
//
// On-disk format: UTF-8 JSON lines. The first line is the header
//   {"format":"dsmil-bags","version":1,"classes":C,"feature_dim":D}
// and every following line is one bag:
//   {"image_id":..., "width":W, "height":H, "boxes":[[x1,y1,x2,y2],...],
//    "labels":[c,...], "features_b64":"...", "gt":[{"class":c,"box":[...]}]}
// features_b64 holds N*D little-endian float64 values, row-major. "gt" is
// optional and only ever read by evaluation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dsmil/geometry.hpp"
#include "dsmil/labels.hpp"
#include "dsmil/tensor.hpp"

namespace dsmil {

struct GroundTruthObject {
  int cls = 0;
  Box box;
  friend bool operator==(const GroundTruthObject&, const GroundTruthObject&) = default;
};

struct ProposalBag {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<Box> boxes;
  Tensor features;     // N x D
  ClassLabels labels;  // multi-hot, length C
  std::vector<GroundTruthObject> gt;

  std::size_t proposals() const { return boxes.size(); }
  ImageBounds bounds() const { return ImageBounds{double(width), double(height)}; }
};

struct DatasetHeader {
  std::size_t classes = 0;
  std::size_t feature_dim = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<ProposalBag> bags;

  const ProposalBag& find(const std::string& image_id) const;
};

// Throws ValidationError on inconsistent shapes, boxes outside the image, or
// ground truth whose class is not among the labels.
void validate_bag(const ProposalBag& bag, const DatasetHeader& header);

struct SyntheticConfig {
  std::size_t num_images = 200;
  std::size_t classes = 4;
  std::size_t feature_dim = 32;
  std::size_t proposals_per_image = 24;
  // Area share of the discriminative part inside each object box.
  double part_fraction = 0.3;
  // Weight of the class context signature in the pooled feature of a box
  // that covers the whole object.
  double context_strength = 1.0;
  double noise_sigma = 0.3;
  // Weight of the box-vs-object offset code; this is what makes box
  // regression learnable from features.
  double geometry_strength = 0.5;
  std::size_t max_objects = 3;
  std::uint64_t seed = 0;
  std::string id_prefix = "img";

  void validate() const;
};

// Deterministic for a fixed config. Image i draws from its own RNG stream
// derived from (seed, i); class signatures come from a stream derived from
// seed alone, so datasets generated with the same seed share them.
Dataset generate_dataset(const SyntheticConfig& config);

// Test set companion: same class signatures, disjoint image streams.
Dataset generate_dataset(const SyntheticConfig& config, std::uint64_t image_stream_offset);

void write_dataset(const Dataset& dataset, std::ostream& out);
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(std::istream& in);
Dataset read_dataset(const std::filesystem::path& path);

std::string encode_features(const Tensor& features);
Tensor decode_features(const std::string& b64, std::size_t rows, std::size_t cols);

}  // namespace dsmil
