#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "refalign/errors.hpp"
#include "refalign/json_util.hpp"
#include "refalign/mask.hpp"
#include "refalign/scene_graph.hpp"

namespace refalign {

inline constexpr int kMaxQueriesPerImage = 10;

struct QueryRecord {
  std::string query_id;
  std::string image_id;
  std::string text;
  std::optional<int> target_object_id;
  std::optional<Mask> gt_mask;
};

inline Mask mask_from_json(const detail::json& j, const std::string& path) {
  Mask m;
  m.height = detail::int_field(j, "h", path);
  m.width = detail::int_field(j, "w", path);
  const auto& rle = detail::array_field(j, "rle", path);
  for (std::size_t k = 0; k < rle.size(); ++k) {
    if (!rle[k].is_number_integer()) throw DataError(path + ".rle[" + std::to_string(k) + "]: expected an integer");
    m.counts.push_back(rle[k].get<std::int64_t>());
  }
  validate_mask(m, path);
  return m;
}

inline detail::json mask_to_json(const Mask& m) {
  return {{"h", m.height}, {"w", m.width}, {"rle", m.counts}};
}

inline QueryRecord query_record_from_json(const detail::json& j, const std::string& path) {
  QueryRecord q;
  q.query_id = detail::string_field(j, "query_id", path);
  q.image_id = detail::string_field(j, "image_id", path);
  q.text = detail::string_field(j, "text", path);
  if (j.contains("target_object_id") && !j["target_object_id"].is_null()) {
    q.target_object_id = detail::as_int(j["target_object_id"], path + ".target_object_id");
  }
  if (j.contains("gt_mask") && !j["gt_mask"].is_null()) {
    q.gt_mask = mask_from_json(j["gt_mask"], path + ".gt_mask");
  }
  return q;
}

inline detail::json query_record_to_json(const QueryRecord& q) {
  detail::json j;
  j["query_id"] = q.query_id;
  j["image_id"] = q.image_id;
  j["text"] = q.text;
  if (q.target_object_id) j["target_object_id"] = *q.target_object_id;
  if (q.gt_mask) j["gt_mask"] = mask_to_json(*q.gt_mask);
  return j;
}

// JSON Lines, one record per line. Enforces unique query ids and at most
// kMaxQueriesPerImage queries per image.
inline std::vector<QueryRecord> load_queries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  std::vector<QueryRecord> out;
  std::set<std::string> seen;
  std::map<std::string, int> per_image;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    const detail::json j = detail::parse_line(line, where);
    QueryRecord q = query_record_from_json(j, where);
    if (!seen.insert(q.query_id).second) throw DataError(where + ": duplicate query_id " + q.query_id);
    if (++per_image[q.image_id] > kMaxQueriesPerImage) {
      throw DataError(where + ": more than " + std::to_string(kMaxQueriesPerImage) +
                      " queries for image " + q.image_id);
    }
    out.push_back(std::move(q));
  }
  return out;
}

inline void save_queries(const std::vector<QueryRecord>& queries, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open file for writing");
  for (const auto& q : queries) out << query_record_to_json(q).dump() << '\n';
}

// Cross-file check: every referenced image exists and targets point at real objects.
inline void validate_queries_against_scenes(const std::vector<QueryRecord>& queries,
                                            const std::map<std::string, SceneGraph>& scenes) {
  for (const auto& q : queries) {
    const auto it = scenes.find(q.image_id);
    if (it == scenes.end()) throw DataError("query " + q.query_id + ": unknown image " + q.image_id);
    if (q.target_object_id &&
        (*q.target_object_id < 0 || *q.target_object_id >= it->second.object_count())) {
      throw DataError("query " + q.query_id + ": target_object_id " +
                      std::to_string(*q.target_object_id) + " not in scene " + q.image_id);
    }
  }
}

}  // namespace refalign
