#pragma once

#include <filesystem>

#include "davil/rigid_body.hpp"
#include "json.hpp"

namespace davil {

using Json = nlohmann::json;

Pose pose_from_json(const Json& j);
Json pose_to_json(const Pose& p);
Vec3 vec3_from_json(const Json& j);

/// Chain document: SI units, quaternions as [w, x, y, z].
///
///   { "name": "...", "gravity": [0,0,-9.81],
///     "base": {"position": [..], "orientation": [w,x,y,z]},
///     "tool": {...},
///     "links": [ { "type": "revolute", "axis": [0,0,1],
///                  "origin": {...}, "mass": 1.0, "com": [..],
///                  "inertia": [ixx, iyy, izz, ixy, ixz, iyz],
///                  "q_limits": [lo, hi], "dq_limits": [lo, hi],
///                  "tau_limits": [lo, hi] }, ... ] }
ChainModel chain_from_json(const Json& doc);
Json chain_to_json(const ChainModel& chain);
ChainModel load_chain(const std::filesystem::path& path);

Json read_json_file(const std::filesystem::path& path);

}  // namespace davil
