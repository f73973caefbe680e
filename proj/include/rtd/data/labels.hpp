#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rtd/core/error.hpp"
#include "rtd/data/raster.hpp"

namespace rtd {

// Ground truth. Detection mode: sparse positive pixels on positive rasters and
// whole negative rasters. Category mode (hyperspectral): per-pixel category
// indices into `classes`.
struct LabelSet {
  std::map<std::string, std::vector<PixelCoord>> positives;
  std::vector<std::string> negative_raster_ids;
  std::vector<std::string> classes;
  std::map<std::string, std::map<PixelCoord, int>> pixel_labels;

  bool category_mode() const { return !classes.empty(); }

  bool is_negative_raster(const std::string& id) const {
    return std::find(negative_raster_ids.begin(), negative_raster_ids.end(), id) != negative_raster_ids.end();
  }

  std::size_t positive_count() const {
    std::size_t n = 0;
    for (const auto& [id, coords] : positives) n += coords.size();
    return n;
  }

  std::vector<std::string> raster_ids() const {
    std::set<std::string> ids;
    for (const auto& [id, c] : positives) ids.insert(id);
    for (const auto& id : negative_raster_ids) ids.insert(id);
    for (const auto& [id, m] : pixel_labels) ids.insert(id);
    return {ids.begin(), ids.end()};
  }

  // Checks the structural invariants. `lookup` maps an id to its raster (or
  // nullptr when the raster is not available, which is itself an error).
  template <typename Lookup>
  void validate(Lookup&& lookup) const {
    for (const auto& id : negative_raster_ids)
      if (positives.count(id)) throw IntegrityError("raster " + id + " is both positive and negative");
    for (const auto& [id, coords] : positives) {
      const Raster* r = lookup(id);
      if (!r) throw IntegrityError("labels reference unknown raster " + id);
      for (const auto& p : coords)
        if (!r->evaluable(p.row, p.col))
          throw IntegrityError("positive (" + std::to_string(p.row) + "," + std::to_string(p.col) + ") outside " + id);
    }
    for (const auto& id : negative_raster_ids)
      if (!lookup(id)) throw IntegrityError("labels reference unknown raster " + id);
    for (const auto& [id, m] : pixel_labels) {
      const Raster* r = lookup(id);
      if (!r) throw IntegrityError("labels reference unknown raster " + id);
      for (const auto& [p, cat] : m) {
        if (!r->inside(p.row, p.col)) throw IntegrityError("labeled pixel outside " + id);
        if (cat < 0 || cat >= static_cast<int>(classes.size()))
          throw LabelError("category " + std::to_string(cat) + " out of range in " + id);
      }
    }
  }
};

// Sidecar text format, one record per line: `raster_id row col label`.
// A record whose row and col are both `*` declares every evaluable pixel of
// the raster to carry `label` (used for whole negative rasters). Optional
// `# classes: a b c` header line lists category names for category mode.
inline void write_label_sidecar(const LabelSet& labels, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  if (labels.category_mode()) {
    out << "# classes:";
    for (const auto& c : labels.classes) out << ' ' << c;
    out << '\n';
  }
  for (const auto& [id, coords] : labels.positives)
    for (const auto& p : coords) out << id << ' ' << p.row << ' ' << p.col << " 1\n";
  for (const auto& id : labels.negative_raster_ids) out << id << " * * 0\n";
  for (const auto& [id, m] : labels.pixel_labels)
    for (const auto& [p, cat] : m) out << id << ' ' << p.row << ' ' << p.col << ' ' << cat << '\n';
}

inline LabelSet read_label_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label file " + path.string());
  LabelSet labels;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("# classes:", 0) == 0) {
      std::istringstream cs(line.substr(10));
      std::string name;
      while (cs >> name) labels.classes.push_back(name);
      continue;
    }
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string id, row, col;
    int label = 0;
    if (!(ls >> id)) continue;
    if (!(ls >> row >> col >> label))
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected `raster_id row col label`");
    if (row == "*" && col == "*") {
      if (label != 0) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": wildcard must be negative");
      if (!labels.is_negative_raster(id)) labels.negative_raster_ids.push_back(id);
      continue;
    }
    PixelCoord p;
    try {
      p = {std::stoi(row), std::stoi(col)};
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad coordinate");
    }
    if (labels.category_mode()) {
      auto& m = labels.pixel_labels[id];
      if (m.count(p)) throw LabelError("pixel labeled twice in " + id);
      m[p] = label;
    } else if (label == 1) {
      labels.positives[id].push_back(p);
    } else if (label != 0) {
      throw LabelError(path.string() + ":" + std::to_string(lineno) + ": binary label must be 0 or 1");
    }
  }
  for (const auto& id : labels.negative_raster_ids)
    if (labels.positives.count(id)) throw IntegrityError("raster " + id + " is both positive and negative");
  return labels;
}

}  // namespace rtd
