#include "volrig/serialization.hpp"

#include <fstream>

namespace volrig {

namespace {

std::vector<double> flatten(const std::vector<Vec3>& v) {
  std::vector<double> out;
  out.reserve(v.size() * 3);
  for (const Vec3& x : v) {
    out.push_back(x.x());
    out.push_back(x.y());
    out.push_back(x.z());
  }
  return out;
}

std::vector<Vec3> unflatten(const std::vector<double>& v, const char* what) {
  if (v.size() % 3 != 0)
    throw ConfigError(std::string(what) + " array length must be 3K");
  std::vector<Vec3> out(v.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = Vec3(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
  return out;
}

template <class T>
T get_field(const Json& j, const char* key) {
  if (!j.contains(key))
    throw ConfigError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad field '") + key + "': " + e.what());
  }
}

}  // namespace

Json skeleton_to_json(const Skeleton& skel) {
  Json bones = Json::array();
  for (int k = 0; k < skel.bone_count(); ++k) {
    bones.push_back({{"parent", skel.parent[k]},
                     {"offset", std::vector<double>{skel.rest_offsets[k].x(),
                                                    skel.rest_offsets[k].y(),
                                                    skel.rest_offsets[k].z()}},
                     {"sigma_r", skel.sigma_r[k]}});
  }
  return Json{{"bones", bones}};
}

Skeleton skeleton_from_json(const Json& j) {
  Skeleton skel;
  const Json bones = get_field<Json>(j, "bones");
  if (!bones.is_array() || bones.empty())
    throw ConfigError("skeleton 'bones' must be a non-empty array");
  for (const Json& b : bones) {
    skel.parent.push_back(get_field<int>(b, "parent"));
    const auto off = get_field<std::vector<double>>(b, "offset");
    if (off.size() != 3) throw ConfigError("bone offset must have 3 entries");
    skel.rest_offsets.emplace_back(off[0], off[1], off[2]);
    skel.sigma_r.push_back(b.value("sigma_r", 0.1));
  }
  skel.validate();
  return skel;
}

Json pose_to_json(const Pose& pose) {
  Json j;
  j["angles"] = Json::array();
  for (const Vec3& w : pose.angles) {
    j["angles"].push_back(w.x());
    j["angles"].push_back(w.y());
    j["angles"].push_back(w.z());
  }
  j["joints"] = flatten(pose.joints);
  return j;
}

Pose pose_from_json(const Json& j) {
  Pose pose;
  pose.angles = unflatten(get_field<std::vector<double>>(j, "angles"), "angles");
  pose.joints = unflatten(get_field<std::vector<double>>(j, "joints"), "joints");
  if (pose.angles.size() != pose.joints.size())
    throw ConfigError("pose angles and joints disagree on joint count");
  return pose;
}

Json camera_to_json(const Camera& cam) {
  std::vector<double> rot(9);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot[r * 3 + c] = cam.extrinsic.rotation(r, c);
  return Json{{"rotation", rot},
              {"translation",
               std::vector<double>{cam.extrinsic.translation.x(),
                                   cam.extrinsic.translation.y(),
                                   cam.extrinsic.translation.z()}},
              {"fx", cam.fx},
              {"fy", cam.fy},
              {"cx", cam.cx},
              {"cy", cam.cy},
              {"width", cam.width},
              {"height", cam.height}};
}

Camera camera_from_json(const Json& j) {
  Camera cam;
  const auto rot = get_field<std::vector<double>>(j, "rotation");
  const auto t = get_field<std::vector<double>>(j, "translation");
  if (rot.size() != 9 || t.size() != 3)
    throw ConfigError("camera needs 9 rotation and 3 translation entries");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.extrinsic.rotation(r, c) = rot[r * 3 + c];
  cam.extrinsic.translation = Vec3(t[0], t[1], t[2]);
  cam.fx = get_field<double>(j, "fx");
  cam.fy = get_field<double>(j, "fy");
  cam.cx = get_field<double>(j, "cx");
  cam.cy = get_field<double>(j, "cy");
  cam.width = get_field<int>(j, "width");
  cam.height = get_field<int>(j, "height");
  cam.validate();
  return cam;
}

Json frame_to_json(const FrameRecord& frame) {
  return Json{{"image", frame.image},
              {"mask", frame.mask},
              {"pose", pose_to_json(frame.pose)},
              {"camera", camera_to_json(frame.camera)},
              {"split", frame.split}};
}

FrameRecord frame_from_json(const Json& j) {
  FrameRecord f;
  f.image = get_field<std::string>(j, "image");
  f.mask = get_field<std::string>(j, "mask");
  f.pose = pose_from_json(get_field<Json>(j, "pose"));
  f.camera = camera_from_json(get_field<Json>(j, "camera"));
  f.split = get_field<std::string>(j, "split");
  return f;
}

Json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  try {
    return Json::parse(is);
  } catch (const Json::exception& e) {
    throw ConfigError("invalid json in " + path + ": " + e.what());
  }
}

void write_json_file(const Json& j, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + path);
}

std::vector<Json> read_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<Json> records;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      records.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      throw ConfigError("invalid json line in " + path + ": " + e.what());
    }
  }
  return records;
}

void write_jsonl(const std::vector<Json>& records, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (const Json& r : records) os << r.dump() << '\n';
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace volrig
