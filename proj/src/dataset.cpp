// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/dataset.hpp"

#include <set>

#include "raterbayes/error.hpp"
#include "raterbayes/io.hpp"
#include "raterbayes/netpbm.hpp"

namespace raterbayes {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + s + "'");
}

json DatasetManifest::to_json() const {
  json cs = json::array();
  for (const auto& c : cases) {
    json anns = json::array();
    for (const auto& a : c.annotations) {
      json masks = json::object();
      for (std::size_t s = 0; s < structures.size(); ++s) masks[structures[s]] = a.masks.at(s);
      anns.push_back({{"rater", a.rater}, {"repeat", a.repeat}, {"masks", masks}});
    }
    cs.push_back({{"id", c.id},
                  {"split", to_string(c.split)},
                  {"image", c.image},
                  {"annotations", anns},
                  {"truth", c.truth}});
  }
  return {{"format", kDatasetFormat},
          {"version", kDatasetVersion},
          {"task", task},
          {"height", height},
          {"width", width},
          {"structures", structures},
          {"num_raters", num_raters},
          {"generator", generator},
          {"cases", cs}};
}

namespace {

const json& field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw DataError(where + ": missing field '" + key + "'");
  }
  return j.at(key);
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return field(j, key, where).get<T>();
  } catch (const json::exception&) {
    throw DataError(where + ": field '" + key + "' has the wrong type");
  }
}

} // namespace

DatasetManifest DatasetManifest::from_json(const json& j) {
  const std::string where = "manifest";
  if (get<std::string>(j, "format", where) != kDatasetFormat) {
    throw DataError("manifest: not a " + std::string(kDatasetFormat) + " manifest");
  }
  const int version = get<int>(j, "version", where);
  if (version != kDatasetVersion) {
    throw DataError("manifest: unsupported version " + std::to_string(version));
  }
  DatasetManifest m;
  m.task = get<std::string>(j, "task", where);
  m.height = get<std::size_t>(j, "height", where);
  m.width = get<std::size_t>(j, "width", where);
  m.structures = get<std::vector<std::string>>(j, "structures", where);
  m.num_raters = get<std::size_t>(j, "num_raters", where);
  m.generator = j.value("generator", json());
  if (m.height == 0 || m.width == 0) throw DataError("manifest: empty image extents");
  if (m.structures.empty()) throw DataError("manifest: no structures");
  if (m.num_raters == 0) throw DataError("manifest: num_raters must be at least 1");

  std::set<std::string> ids;
  for (const auto& jc : field(j, "cases", where)) {
    CaseEntry c;
    c.id = get<std::string>(jc, "id", where);
    const std::string cw = "case " + c.id;
    if (!ids.insert(c.id).second) throw DataError(cw + ": duplicate case id");
    c.split = parse_split(get<std::string>(jc, "split", cw));
    c.image = get<std::string>(jc, "image", cw);
    c.truth = jc.value("truth", json());
    for (const auto& ja : field(jc, "annotations", cw)) {
      AnnotationEntry a;
      a.rater = get<std::size_t>(ja, "rater", cw);
      a.repeat = ja.value("repeat", std::size_t{0});
      if (a.rater >= m.num_raters) {
        throw DataError(cw + ": rater " + std::to_string(a.rater) + " out of range");
      }
      const auto& masks = field(ja, "masks", cw);
      for (const auto& s : m.structures) a.masks.push_back(get<std::string>(masks, s.c_str(), cw));
      c.annotations.push_back(std::move(a));
    }
    if (c.annotations.empty()) throw DataError(cw + ": no annotations");
    m.cases.push_back(std::move(c));
  }
  return m;
}

MaskEnsemble MultiRaterCase::structure_ensemble(std::size_t s) const {
  MaskEnsemble e;
  e.source = EnsembleSource::raters;
  e.image_id = id;
  for (const auto& a : annotations) e.masks.push_back(a.structures.at(s));
  return e;
}

std::vector<std::size_t> MultiRaterDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (cases[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> MultiRaterDataset::require_split(Split split) const {
  auto out = indices(split);
  if (out.empty()) throw DataError("dataset has no " + to_string(split) + " cases");
  return out;
}

const MultiRaterCase* MultiRaterDataset::find(const std::string& id) const {
  for (const auto& c : cases) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

namespace {

MultiRaterCase load_case(const std::filesystem::path& root, const DatasetManifest& m,
                         const CaseEntry& e) {
  MultiRaterCase c;
  c.id = e.id;
  c.split = e.split;
  c.truth = e.truth;
  c.height = m.height;
  c.width = m.width;
  const auto img = read_pgm(root / e.image);
  if (img.h != m.height || img.w != m.width) {
    throw DimensionError("image " + e.image + " is " + std::to_string(img.h) + "x" +
                         std::to_string(img.w) + ", manifest says " + std::to_string(m.height) +
                         "x" + std::to_string(m.width));
  }
  c.image.resize(img.px.size());
  for (std::size_t i = 0; i < img.px.size(); ++i) c.image[i] = img.px[i] / 255.0;
  for (const auto& a : e.annotations) {
    Annotation ann{a.rater, a.repeat, {}};
    for (const auto& path : a.masks) {
      auto mask = read_mask(root / path);
      if (mask.h != m.height || mask.w != m.width) {
        throw DimensionError("mask " + path + " does not match the image extents");
      }
      ann.structures.push_back(std::move(mask));
    }
    c.annotations.push_back(std::move(ann));
  }
  return c;
}

} // namespace

MultiRaterDataset load_dataset(const std::filesystem::path& manifest_path) {
  MultiRaterDataset ds;
  ds.root = manifest_path.parent_path();
  json j;
  try {
    j = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  ds.manifest = DatasetManifest::from_json(j);
  for (const auto& e : ds.manifest.cases) {
    try {
      ds.cases.push_back(load_case(ds.root, ds.manifest, e));
    } catch (const IoError& err) {
      throw IoError("case " + e.id + ": " + err.what());
    } catch (const DimensionError& err) {
      throw DimensionError("case " + e.id + ": " + err.what());
    } catch (const DataError& err) {
      throw DataError("case " + e.id + ": " + err.what());
    }
  }
  return ds;
}

std::vector<std::int32_t> nested_labels(const std::vector<Mask>& structures) {
  if (structures.empty()) throw DataError("nested_labels: no structures");
  for (const auto& s : structures) require_same_shape(structures[0], s, "nested_labels");
  std::vector<std::int32_t> labels(structures[0].px.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::int32_t c = 0;
    while (static_cast<std::size_t>(c) < structures.size() && structures[c].px[i]) ++c;
    labels[i] = c;
  }
  return labels;
}

} // namespace raterbayes
