#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "refalign/errors.hpp"
#include "refalign/feature_io.hpp"
#include "refalign/json_util.hpp"
#include "refalign/mask.hpp"

namespace refalign {

inline constexpr int kDefaultMaxObjects = 10;

struct ObjectNode {
  int id = 0;
  std::string label;
  std::array<int, 4> bbox{};  // x, y, w, h in pixels
  Mask mask;
  std::optional<std::vector<float>> feature;
};

struct RelationEdge {
  int subject_id = 0;
  int object_id = 0;
  std::string predicate;
};

struct SceneGraph {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<ObjectNode> objects;    // sorted by id, ids are exactly 0..n-1
  std::vector<RelationEdge> relations;

  int object_count() const { return static_cast<int>(objects.size()); }
};

inline void validate_scene_graph(const SceneGraph& g, int max_objects = kDefaultMaxObjects,
                                 const std::string& path = "scene") {
  if (g.width < 1 || g.height < 1) throw DataError(path + ": image dimensions must be positive");
  const int n = g.object_count();
  if (n > max_objects) {
    throw DataError(path + ".objects: " + std::to_string(n) + " objects exceed the maximum of " +
                    std::to_string(max_objects));
  }
  for (int i = 0; i < n; ++i) {
    const auto& o = g.objects[static_cast<std::size_t>(i)];
    const std::string opath = path + ".objects[" + std::to_string(i) + "]";
    if (o.id != i) throw DataError(opath + ".id: object ids must be exactly 0.." + std::to_string(n - 1));
    const auto [x, y, w, h] = o.bbox;
    if (x < 0 || y < 0 || w < 0 || h < 0 || x + w > g.width || y + h > g.height) {
      throw DataError(opath + ".bbox: box lies outside the image bounds");
    }
    if (o.mask.height != g.height || o.mask.width != g.width) {
      throw DataError(opath + ".rle: mask dimensions differ from image dimensions");
    }
    validate_mask(o.mask, opath + ".rle");
  }
  for (std::size_t i = 0; i < g.relations.size(); ++i) {
    const auto& r = g.relations[i];
    const std::string rpath = path + ".relations[" + std::to_string(i) + "]";
    if (r.subject_id < 0 || r.subject_id >= n) throw DataError(rpath + ".sub: dangling relation id");
    if (r.object_id < 0 || r.object_id >= n) throw DataError(rpath + ".obj: dangling relation id");
    if (r.subject_id == r.object_id) throw DataError(rpath + ": relation may not be a self-loop");
    if (r.predicate.empty()) throw DataError(rpath + ".pred: empty predicate");
  }
}

// File layout:
//   {image_id, width, height,
//    objects: [{id, label, bbox:[x,y,w,h], rle:[counts...]}],
//    relations: [{sub, obj, pred}]}
inline SceneGraph load_scene_graph(const std::string& path, int max_objects = kDefaultMaxObjects) {
  const detail::json doc = detail::parse_file(path);
  SceneGraph g;
  g.image_id = detail::string_field(doc, "image_id", path);
  g.width = detail::int_field(doc, "width", path);
  g.height = detail::int_field(doc, "height", path);

  const auto& objects = detail::array_field(doc, "objects", path);
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const std::string opath = path + ".objects[" + std::to_string(i) + "]";
    const auto& jo = objects[i];
    ObjectNode o;
    o.id = detail::int_field(jo, "id", opath);
    o.label = detail::string_field(jo, "label", opath);
    const auto& bbox = detail::array_field(jo, "bbox", opath);
    if (bbox.size() != 4) throw DataError(opath + ".bbox: expected [x, y, w, h]");
    for (std::size_t k = 0; k < 4; ++k) {
      o.bbox[k] = detail::as_int(bbox[k], opath + ".bbox[" + std::to_string(k) + "]");
    }
    const auto& rle = detail::array_field(jo, "rle", opath);
    o.mask.height = g.height;
    o.mask.width = g.width;
    for (std::size_t k = 0; k < rle.size(); ++k) {
      if (!rle[k].is_number_integer()) {
        throw DataError(opath + ".rle[" + std::to_string(k) + "]: expected an integer");
      }
      o.mask.counts.push_back(rle[k].get<std::int64_t>());
    }
    g.objects.push_back(std::move(o));
  }

  std::stable_sort(g.objects.begin(), g.objects.end(),
                   [](const ObjectNode& a, const ObjectNode& b) { return a.id < b.id; });
  for (std::size_t i = 0; i + 1 < g.objects.size(); ++i) {
    if (g.objects[i].id == g.objects[i + 1].id) {
      throw DataError(path + ".objects[" + std::to_string(i + 1) + "].id: duplicate object id " +
                      std::to_string(g.objects[i].id));
    }
  }

  const auto& relations = detail::array_field(doc, "relations", path);
  for (std::size_t i = 0; i < relations.size(); ++i) {
    const std::string rpath = path + ".relations[" + std::to_string(i) + "]";
    RelationEdge r;
    r.subject_id = detail::int_field(relations[i], "sub", rpath);
    r.object_id = detail::int_field(relations[i], "obj", rpath);
    r.predicate = detail::string_field(relations[i], "pred", rpath);
    g.relations.push_back(std::move(r));
  }

  validate_scene_graph(g, max_objects, path);
  return g;
}

inline void save_scene_graph(const SceneGraph& g, const std::string& path) {
  detail::json doc;
  doc["image_id"] = g.image_id;
  doc["width"] = g.width;
  doc["height"] = g.height;
  doc["objects"] = detail::json::array();
  for (const auto& o : g.objects) {
    detail::json jo;
    jo["id"] = o.id;
    jo["label"] = o.label;
    jo["bbox"] = o.bbox;
    jo["rle"] = o.mask.counts;
    doc["objects"].push_back(std::move(jo));
  }
  doc["relations"] = detail::json::array();
  for (const auto& r : g.relations) {
    doc["relations"].push_back({{"sub", r.subject_id}, {"obj", r.object_id}, {"pred", r.predicate}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open file for writing");
  out << doc.dump() << '\n';
}

// Attaches one feature row per object; row count must equal the object count.
inline void attach_object_features(SceneGraph& g, const FeatureMatrix& fm) {
  if (static_cast<int>(fm.rows) != g.object_count()) {
    throw DataError("features for image " + g.image_id + ": row count " + std::to_string(fm.rows) +
                    " does not match object count " + std::to_string(g.object_count()));
  }
  for (auto& o : g.objects) {
    const auto* begin = fm.data.data() + static_cast<std::size_t>(o.id) * fm.cols;
    o.feature = std::vector<float>(begin, begin + fm.cols);
  }
}

}  // namespace refalign
