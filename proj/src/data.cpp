#include "dsmil/data.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "dsmil/error.hpp"
#include "dsmil/random.hpp"
#include "json.hpp"

namespace dsmil {

using nlohmann::json;

namespace {

constexpr std::uint64_t kSignatureStream = std::numeric_limits<std::uint64_t>::max();
constexpr std::size_t kJitteredPerObject = 3;
constexpr std::size_t kPartsPerObject = 3;
constexpr std::size_t kProposalsPerObject = 1 + kJitteredPerObject + kPartsPerObject;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return iw > 0.0 && ih > 0.0 ? iw * ih : 0.0;
}

Box clip_to(const Box& b, double w, double h) {
  return Box{std::clamp(b.x1, 0.0, w), std::clamp(b.y1, 0.0, h), std::clamp(b.x2, 0.0, w),
             std::clamp(b.y2, 0.0, h)};
}

// Random box around `base`: center shifted by up to `shift` of the size,
// log-size perturbed by up to `log_scale`.
Box perturb(const Box& base, double shift, double log_scale, double w, double h, Rng& rng) {
  const double cx = base.center_x() + uniform(rng, -shift, shift) * base.width();
  const double cy = base.center_y() + uniform(rng, -shift, shift) * base.height();
  const double bw = base.width() * std::exp(uniform(rng, -log_scale, log_scale));
  const double bh = base.height() * std::exp(uniform(rng, -log_scale, log_scale));
  return clip_to(Box{cx - 0.5 * bw, cy - 0.5 * bh, cx + 0.5 * bw, cy + 0.5 * bh}, w, h);
}

struct Signatures {
  std::vector<std::vector<double>> part;     // C x D
  std::vector<std::vector<double>> context;  // C x D
  std::vector<std::vector<double>> geometry; // 4 x D
};

Signatures draw_signatures(const SyntheticConfig& cfg) {
  Rng rng = make_stream(cfg.seed, kSignatureStream);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](std::size_t count) {
    std::vector<std::vector<double>> out(count, std::vector<double>(cfg.feature_dim));
    for (auto& v : out) {
      for (double& x : v) x = normal(rng);
    }
    return out;
  };
  Signatures s;
  s.part = draw(cfg.classes);
  s.context = draw(cfg.classes);
  s.geometry = draw(4);
  return s;
}

struct PlantedObject {
  int cls;
  Box box;
  Box part;
};

ProposalBag generate_bag(const SyntheticConfig& cfg, const Signatures& sig, std::uint64_t stream,
                         std::size_t index) {
  Rng rng = make_stream(cfg.seed, stream);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = cfg.proposals_per_image;
  const std::size_t d = cfg.feature_dim;

  ProposalBag bag;
  bag.image_id = cfg.id_prefix + std::to_string(stream);
  bag.width = static_cast<int>(uniform_index(rng, 320, 480));
  bag.height = static_cast<int>(uniform_index(rng, 240, 400));
  const double w = bag.width, h = bag.height;

  const std::size_t capacity = std::max<std::size_t>(1, n / kProposalsPerObject);
  const std::size_t max_k = std::min({cfg.max_objects, capacity, cfg.classes});
  const std::size_t k = uniform_index(rng, 1, max_k);

  // The first object's class cycles through the classes, which keeps the
  // dataset balanced; further objects draw distinct classes at random.
  std::vector<int> classes{static_cast<int>(stream % cfg.classes)};
  while (classes.size() < k) {
    const int c = static_cast<int>(uniform_index(rng, 0, cfg.classes - 1));
    if (std::find(classes.begin(), classes.end(), c) == classes.end()) classes.push_back(c);
  }

  std::vector<PlantedObject> objects;
  for (int c : classes) {
    Box g;
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double bw = uniform(rng, 0.25, 0.45) * w;
      const double bh = uniform(rng, 0.25, 0.45) * h;
      const double x = uniform(rng, 0.0, w - bw);
      const double y = uniform(rng, 0.0, h - bh);
      g = Box{x, y, x + bw, y + bh};
      const bool clear = std::none_of(objects.begin(), objects.end(), [&](const PlantedObject& o) {
        return intersection_area(o.box, g) > 0.0;
      });
      if (clear) break;
    }
    const double side = std::sqrt(cfg.part_fraction);
    const double pw = g.width() * side, ph = g.height() * side;
    const double px = g.x1 + uniform(rng, 0.0, g.width() - pw);
    const double py = g.y1 + uniform(rng, 0.0, g.height() - ph);
    objects.push_back(PlantedObject{c, g, Box{px, py, px + pw, py + ph}});
  }

  struct Pending {
    Box box;
    int owner;  // index into objects, -1 for background
  };
  std::vector<Pending> pending;
  for (std::size_t o = 0; o < objects.size(); ++o) {
    const PlantedObject& obj = objects[o];
    const int owner = static_cast<int>(o);
    pending.push_back({obj.box, owner});
    for (std::size_t j = 0; j < kJitteredPerObject; ++j) {
      Box b = obj.box;
      for (int attempt = 0; attempt < 100; ++attempt) {
        Box cand = perturb(obj.box, 0.3, 0.5, w, h, rng);
        if (!cand.valid()) continue;
        const double v = iou(cand, obj.box);
        b = cand;
        if (v >= 0.3 && v <= 0.9) break;
      }
      pending.push_back({b, owner});
    }
    pending.push_back({obj.part, owner});
    for (std::size_t j = 1; j < kPartsPerObject; ++j) {
      Box b = perturb(obj.part, 0.1, 0.15, w, h, rng);
      pending.push_back({b.valid() ? b : obj.part, owner});
    }
  }
  pending.resize(std::min(pending.size(), n));
  while (pending.size() < n) {
    Box b;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double bw = uniform(rng, 0.1, 0.4) * w;
      const double bh = uniform(rng, 0.1, 0.4) * h;
      const double x = uniform(rng, 0.0, w - bw);
      const double y = uniform(rng, 0.0, h - bh);
      b = Box{x, y, x + bw, y + bh};
      const bool clear = std::all_of(objects.begin(), objects.end(),
                                     [&](const PlantedObject& o) { return iou(o.box, b) < 0.3; });
      if (clear) break;
    }
    pending.push_back({b, -1});
  }
  std::shuffle(pending.begin(), pending.end(), rng);

  std::vector<double> feats(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* f = feats.data() + i * d;
    const Pending& p = pending[i];
    bag.boxes.push_back(p.box);
    if (p.owner >= 0) {
      const PlantedObject& obj = objects[static_cast<std::size_t>(p.owner)];
      const double part_area = obj.part.area();
      const double part_seen = intersection_area(p.box, obj.part);
      const double rest_area = obj.box.area() - part_area;
      const double rest_seen = intersection_area(p.box, obj.box) - part_seen;
      const double a_part = part_seen / part_area;
      const double a_rest = rest_area > 0.0 ? std::max(0.0, rest_seen) / rest_area : 0.0;
      const RegressionTarget t = encode_target(p.box, obj.box);
      const double code[4] = {t.tx, t.ty, t.tw, t.th};
      const auto c = static_cast<std::size_t>(obj.cls);
      for (std::size_t j = 0; j < d; ++j) {
        f[j] = a_part * sig.part[c][j] + cfg.context_strength * a_rest * sig.context[c][j];
        for (std::size_t r = 0; r < 4; ++r) f[j] += cfg.geometry_strength * code[r] * sig.geometry[r][j];
      }
    }
    for (std::size_t j = 0; j < d; ++j) f[j] += cfg.noise_sigma * noise(rng);
  }
  bag.features = Tensor(n, d, std::move(feats));
  bag.labels.assign(cfg.classes, 0);
  for (const PlantedObject& o : objects) {
    bag.labels[static_cast<std::size_t>(o.cls)] = 1;
    bag.gt.push_back(GroundTruthObject{o.cls, o.box});
  }
  (void)index;
  return bag;
}

// --- JSON-lines I/O ---------------------------------------------------------

json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw ParseError(where + ": box must be an array of 4 numbers");
  for (const auto& v : j) {
    if (!v.is_number()) throw ParseError(where + ": box coordinates must be numbers");
  }
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

std::size_t size_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_number_unsigned()) {
    throw ParseError(where + ": '" + key + "' must be a non-negative integer");
  }
  return j[key].get<std::size_t>();
}

ProposalBag bag_from_json(const json& j, const DatasetHeader& header, const std::string& where) {
  static const std::set<std::string> kKnown{"image_id", "width", "height", "boxes",
                                            "labels", "features_b64", "gt"};
  if (!j.is_object()) throw ParseError(where + ": bag must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kKnown.contains(key)) throw ParseError(where + ": unknown field '" + key + "'");
  }
  for (const char* key : {"image_id", "width", "height", "boxes", "labels", "features_b64"}) {
    if (!j.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  }
  ProposalBag bag;
  if (!j["image_id"].is_string()) throw ParseError(where + ": 'image_id' must be a string");
  bag.image_id = j["image_id"].get<std::string>();
  bag.width = static_cast<int>(size_field(j, "width", where));
  bag.height = static_cast<int>(size_field(j, "height", where));
  if (!j["boxes"].is_array()) throw ParseError(where + ": 'boxes' must be an array");
  for (const auto& b : j["boxes"]) bag.boxes.push_back(box_from(b, where));
  bag.labels.assign(header.classes, 0);
  if (!j["labels"].is_array()) throw ParseError(where + ": 'labels' must be an array");
  for (const auto& l : j["labels"]) {
    if (!l.is_number_unsigned() || l.get<std::size_t>() >= header.classes) {
      throw ParseError(where + ": label out of range");
    }
    bag.labels[l.get<std::size_t>()] = 1;
  }
  if (!j["features_b64"].is_string()) throw ParseError(where + ": 'features_b64' must be a string");
  bag.features = decode_features(j["features_b64"].get<std::string>(), bag.boxes.size(), header.feature_dim);
  if (j.contains("gt")) {
    if (!j["gt"].is_array()) throw ParseError(where + ": 'gt' must be an array");
    for (const auto& g : j["gt"]) {
      if (!g.is_object() || !g.contains("class") || !g.contains("box") || g.size() != 2) {
        throw ParseError(where + ": gt entries must be {\"class\":int,\"box\":[4 floats]}");
      }
      if (!g["class"].is_number_unsigned()) throw ParseError(where + ": gt class must be an integer");
      bag.gt.push_back(GroundTruthObject{g["class"].get<int>(), box_from(g["box"], where)});
    }
  }
  return bag;
}

}  // namespace

const ProposalBag& Dataset::find(const std::string& image_id) const {
  for (const ProposalBag& b : bags) {
    if (b.image_id == image_id) return b;
  }
  throw LookupError("no image with id '" + image_id + "'");
}

void validate_bag(const ProposalBag& bag, const DatasetHeader& header) {
  const std::string where = "bag '" + bag.image_id + "'";
  if (bag.boxes.empty()) throw ValidationError(where + ": no proposals");
  if (bag.features.rows() != bag.boxes.size() || bag.features.cols() != header.feature_dim) {
    throw ShapeError(where + ": features " + bag.features.shape_string() + " for " +
                     std::to_string(bag.boxes.size()) + " proposals of dim " +
                     std::to_string(header.feature_dim));
  }
  if (bag.labels.size() != header.classes) throw ValidationError(where + ": label vector length");
  for (const Box& b : bag.boxes) {
    validate_box(b);
    if (b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > bag.width || b.y2 > bag.height) {
      throw ValidationError(where + ": proposal outside image bounds");
    }
  }
  for (const GroundTruthObject& g : bag.gt) {
    validate_box(g.box);
    if (g.cls < 0 || static_cast<std::size_t>(g.cls) >= header.classes ||
        bag.labels[static_cast<std::size_t>(g.cls)] == 0) {
      throw ValidationError(where + ": ground truth class " + std::to_string(g.cls) +
                            " is not an image label");
    }
  }
}

void SyntheticConfig::validate() const {
  if (num_images == 0) throw ValidationError("synthetic: num_images must be > 0");
  if (classes == 0) throw ValidationError("synthetic: classes must be > 0");
  if (feature_dim == 0) throw ValidationError("synthetic: feature_dim must be > 0");
  if (proposals_per_image == 0) throw ValidationError("synthetic: proposals_per_image must be > 0");
  if (max_objects == 0) throw ValidationError("synthetic: max_objects must be > 0");
  if (!(part_fraction > 0.0 && part_fraction < 1.0)) {
    throw ValidationError("synthetic: part_fraction must be in (0,1)");
  }
  if (!(context_strength >= 0.0) || !(noise_sigma >= 0.0) || !(geometry_strength >= 0.0)) {
    throw ValidationError("synthetic: strengths and noise must be >= 0");
  }
}

Dataset generate_dataset(const SyntheticConfig& config) { return generate_dataset(config, 0); }

Dataset generate_dataset(const SyntheticConfig& config, std::uint64_t image_stream_offset) {
  config.validate();
  const Signatures sig = draw_signatures(config);
  Dataset ds;
  ds.header = DatasetHeader{config.classes, config.feature_dim};
  ds.bags.reserve(config.num_images);
  for (std::size_t i = 0; i < config.num_images; ++i) {
    ds.bags.push_back(generate_bag(config, sig, image_stream_offset + i, i));
  }
  return ds;
}

std::string encode_features(const Tensor& features) {
  std::vector<unsigned char> raw(features.size() * 8);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(features.values()[i]);
    for (std::size_t b = 0; b < 8; ++b) raw[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  std::string out(4 * ((raw.size() + 2) / 3) + 1, '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), raw.data(),
                                  static_cast<int>(raw.size()));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

Tensor decode_features(const std::string& b64, std::size_t rows, std::size_t cols) {
  if (b64.size() % 4 != 0) throw ParseError("features_b64: length is not a multiple of 4");
  std::vector<unsigned char> raw(b64.size() / 4 * 3 + 1);
  const int len = EVP_DecodeBlock(raw.data(), reinterpret_cast<const unsigned char*>(b64.data()),
                                  static_cast<int>(b64.size()));
  if (len < 0) throw ParseError("features_b64: invalid base64");
  std::size_t bytes = static_cast<std::size_t>(len);
  // EVP_DecodeBlock counts padding characters as decoded zero bytes.
  if (!b64.empty() && b64.back() == '=') --bytes;
  if (b64.size() > 1 && b64[b64.size() - 2] == '=') --bytes;
  if (bytes != rows * cols * 8) {
    throw ShapeError("features_b64: " + std::to_string(bytes / 8) + " values, expected " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  std::vector<double> v(rows * cols);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < 8; ++b) bits |= std::uint64_t{raw[i * 8 + b]} << (8 * b);
    v[i] = std::bit_cast<double>(bits);
  }
  return Tensor(rows, cols, std::move(v));
}

void write_dataset(const Dataset& dataset, std::ostream& out) {
  json header = {{"format", "dsmil-bags"},
                 {"version", 1},
                 {"classes", dataset.header.classes},
                 {"feature_dim", dataset.header.feature_dim}};
  out << header.dump() << '\n';
  for (const ProposalBag& bag : dataset.bags) {
    validate_bag(bag, dataset.header);
    json j;
    j["image_id"] = bag.image_id;
    j["width"] = bag.width;
    j["height"] = bag.height;
    j["boxes"] = json::array();
    for (const Box& b : bag.boxes) j["boxes"].push_back(box_json(b));
    j["labels"] = json::array();
    for (std::size_t c = 0; c < bag.labels.size(); ++c) {
      if (bag.labels[c] != 0) j["labels"].push_back(c);
    }
    j["features_b64"] = encode_features(bag.features);
    if (!bag.gt.empty()) {
      j["gt"] = json::array();
      for (const GroundTruthObject& g : bag.gt) j["gt"].push_back({{"class", g.cls}, {"box", box_json(g.box)}});
    }
    out << j.dump() << '\n';
  }
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_dataset(dataset, out);
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Dataset read_dataset(std::istream& in) {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::size_t offset = 0;
  bool have_header = false;
  while (true) {
    const std::size_t line_start = offset;
    if (!std::getline(in, line)) break;
    ++line_no;
    const bool terminated = !in.eof();
    offset += line.size() + (terminated ? 1 : 0);
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + ", byte offset " + std::to_string(line_start + e.byte - 1) +
                       ": malformed JSON (" + e.what() + ")");
    }
    try {
      if (!have_header) {
        static const std::set<std::string> kKnown{"format", "version", "classes", "feature_dim"};
        if (!j.is_object()) throw ParseError(where + ": header must be a JSON object");
        for (const auto& [key, value] : j.items()) {
          if (!kKnown.contains(key)) throw ParseError(where + ": unknown header field '" + key + "'");
        }
        if (j.value("format", "") != "dsmil-bags") throw ParseError(where + ": not a dsmil-bags file");
        if (size_field(j, "version", where) != 1) throw ParseError(where + ": unsupported version");
        ds.header.classes = size_field(j, "classes", where);
        ds.header.feature_dim = size_field(j, "feature_dim", where);
        have_header = true;
        continue;
      }
      ProposalBag bag = bag_from_json(j, ds.header, where);
      try {
        validate_bag(bag, ds.header);
      } catch (const Error& e) {
        throw ValidationError(where + ": " + e.what());
      }
      ds.bags.push_back(std::move(bag));
    } catch (const json::exception& e) {
      throw ParseError(where + ": " + e.what());
    } catch (const ShapeError& e) {
      throw ShapeError(where + ": " + e.what());
    }
  }
  return ds;
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return read_dataset(in);
}

}  // namespace dsmil
