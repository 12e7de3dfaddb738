#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "volrig/camera.hpp"
#include "volrig/kinematics.hpp"

namespace volrig {

using Json = nlohmann::json;

// Record formats shared by the dataset manifest, checkpoints, pose-sequence
// files and the CLI. Poses are stored as flat 3K angle and joint arrays;
// cameras as 9 rotation entries (row-major), 3 translation entries, the four
// intrinsics and the two image dimensions.

Json skeleton_to_json(const Skeleton& skel);
Skeleton skeleton_from_json(const Json& j);

Json pose_to_json(const Pose& pose);
Pose pose_from_json(const Json& j);

Json camera_to_json(const Camera& cam);
Camera camera_from_json(const Json& j);

/// One manifest line: frame assets plus its pose, camera and split tag.
struct FrameRecord {
  std::string image;
  std::string mask;
  Pose pose;
  Camera camera;
  std::string split;  // "train" or "test"
};

Json frame_to_json(const FrameRecord& frame);
FrameRecord frame_from_json(const Json& j);

Json read_json_file(const std::string& path);
void write_json_file(const Json& j, const std::string& path);

/// Line-delimited JSON records.
std::vector<Json> read_jsonl(const std::string& path);
void write_jsonl(const std::vector<Json>& records, const std::string& path);

}  // namespace volrig
