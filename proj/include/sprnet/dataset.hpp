// On-disk datasets: a directory of PPM images plus annotations.json.
//
// {
//   "images":     [{"id", "file_name", "width", "height"}],
//   "categories": [{"id", "name"}],
//   "instances":  [{"id", "image_id", "class", "box": [x1,y1,x2,y2], "area", "mask_rle": [...]}]
// }

#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sprnet/synth.hpp"

namespace sprnet {

struct ImageRecord {
  std::int64_t id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  std::vector<InstanceAnnotation> instances;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<std::string> categories;
  std::vector<ImageRecord> images;

  Image load_image(std::size_t i) const { return read_pnm((root / images.at(i).file_name).string()); }
};

inline nlohmann::json box_to_json(const Box& b) { return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Box box_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw Error(where + ": box must be an array of 4 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

inline nlohmann::json annotations_json(const Dataset& ds) {
  nlohmann::json j;
  j["images"] = nlohmann::json::array();
  j["categories"] = nlohmann::json::array();
  j["instances"] = nlohmann::json::array();
  for (std::size_t c = 0; c < ds.categories.size(); ++c) {
    j["categories"].push_back({{"id", c}, {"name", ds.categories[c]}});
  }
  std::int64_t next_id = 0;
  for (const auto& im : ds.images) {
    j["images"].push_back({{"id", im.id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height}});
    for (const auto& inst : im.instances) {
      j["instances"].push_back({{"id", next_id++},
                                {"image_id", im.id},
                                {"class", inst.class_id},
                                {"box", box_to_json(inst.box)},
                                {"area", inst.mask.area()},
                                {"mask_rle", rle_encode(inst.mask)}});
    }
  }
  return j;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Parses annotation JSON. Every instance mask must decode inside its image
/// and its box must equal the mask's tight bounds.
inline Dataset parse_annotations(const std::string& text, const std::filesystem::path& root) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("annotations: malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  Dataset ds;
  ds.root = root;
  try {
    for (const auto& c : j.at("categories")) ds.categories.push_back(c.at("name").get<std::string>());
    std::map<std::int64_t, std::size_t> index;
    for (const auto& im : j.at("images")) {
      ImageRecord r;
      r.id = im.at("id").get<std::int64_t>();
      r.file_name = im.at("file_name").get<std::string>();
      r.width = im.at("width").get<int>();
      r.height = im.at("height").get<int>();
      if (!index.emplace(r.id, ds.images.size()).second) {
        throw Error("annotations: duplicate image id " + std::to_string(r.id));
      }
      ds.images.push_back(std::move(r));
    }
    const auto& insts = j.at("instances");
    for (std::size_t k = 0; k < insts.size(); ++k) {
      const auto& in = insts[k];
      const std::string where = "annotations: instances[" + std::to_string(k) + "]";
      const auto it = index.find(in.at("image_id").get<std::int64_t>());
      if (it == index.end()) throw Error(where + ": unknown image_id");
      auto& im = ds.images[it->second];
      InstanceAnnotation a;
      a.class_id = in.at("class").get<int>();
      if (a.class_id < 0 || a.class_id >= static_cast<int>(ds.categories.size())) {
        throw Error(where + ": class out of range");
      }
      a.box = box_from_json(in.at("box"), where);
      try {
        a.mask = rle_decode(in.at("mask_rle").get<std::vector<std::uint32_t>>(), im.width, im.height);
      } catch (const Error& e) {
        throw Error(where + ": " + e.what());
      }
      const auto tight = a.mask.tight_box();
      if (!tight || !(*tight == a.box)) throw Error(where + ": box does not equal the mask's tight bounds");
      im.instances.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("annotations: ") + e.what());
  }
  return ds;
}

/// `path` may be the dataset directory or its annotations file.
inline Dataset read_dataset(const std::filesystem::path& path) {
  const bool is_dir = std::filesystem::is_directory(path);
  const auto file = is_dir ? path / "annotations.json" : path;
  return parse_annotations(read_text_file(file), is_dir ? path : path.parent_path());
}

inline void write_annotations(const Dataset& ds, const std::filesystem::path& file) {
  write_text_file(file, annotations_json(ds).dump(1) + "\n");
}

/// Renders scenes [start, start + count) of `spec` into `dir`.
inline Dataset write_synthetic_dataset(const SceneSpec& spec, std::uint64_t start, std::size_t count,
                                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  Dataset ds;
  ds.root = dir;
  for (int c = 0; c < kShapeClasses; ++c) ds.categories.push_back(shape_name(c));
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t index = start + i;
    Scene scene = synth_scene(spec, index);
    char name[32];
    std::snprintf(name, sizeof name, "images/%06llu.ppm", static_cast<unsigned long long>(index));
    write_pnm(scene.image, (dir / name).string());
    ImageRecord r;
    r.id = static_cast<std::int64_t>(index);
    r.file_name = name;
    r.width = scene.image.width;
    r.height = scene.image.height;
    r.instances = std::move(scene.instances);
    ds.images.push_back(std::move(r));
  }
  write_annotations(ds, dir / "annotations.json");
  return ds;
}

}  // namespace sprnet
