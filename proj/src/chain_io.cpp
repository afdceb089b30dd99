#include "davil/chain_io.hpp"

#include <fstream>

namespace davil {

Vec3 vec3_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Pose pose_from_json(const Json& j) {
  Pose p;
  if (j.contains("position")) p.position = vec3_from_json(j.at("position"));
  if (j.contains("orientation")) {
    const Json& o = j.at("orientation");
    if (!o.is_array() || o.size() != 4) throw std::invalid_argument("orientation must be [w, x, y, z]");
    p.orientation = Eigen::Quaterniond(o[0].get<double>(), o[1].get<double>(), o[2].get<double>(), o[3].get<double>());
    if (std::abs(p.orientation.norm() - 1.0) > 1e-6) throw std::invalid_argument("orientation quaternion is not unit-norm");
    p.orientation.normalize();
  }
  return p;
}

Json pose_to_json(const Pose& p) {
  return {{"position", {p.position.x(), p.position.y(), p.position.z()}},
          {"orientation", {p.orientation.w(), p.orientation.x(), p.orientation.y(), p.orientation.z()}}};
}

ChainModel chain_from_json(const Json& doc) {
  const Json& jl = doc.at("links");
  const int n = static_cast<int>(jl.size());
  std::vector<LinkSpec> links;
  JointLimits lim;
  lim.q_min.resize(n);
  lim.q_max.resize(n);
  lim.dq_min.resize(n);
  lim.dq_max.resize(n);
  lim.tau_min.resize(n);
  lim.tau_max.resize(n);
  for (int i = 0; i < n; ++i) {
    const Json& l = jl[static_cast<size_t>(i)];
    LinkSpec s;
    const std::string type = l.value("type", "revolute");
    if (type == "revolute")
      s.type = JointType::revolute;
    else if (type == "prismatic")
      s.type = JointType::prismatic;
    else
      throw std::invalid_argument("unknown joint type: " + type);
    s.axis = vec3_from_json(l.at("axis"));
    s.axis.normalize();
    if (l.contains("origin")) s.parent_to_joint = pose_from_json(l.at("origin"));
    s.mass = l.at("mass").get<double>();
    s.com = vec3_from_json(l.at("com"));
    const auto in = l.at("inertia").get<std::vector<double>>();
    if (in.size() != 6) throw std::invalid_argument("inertia must be [ixx, iyy, izz, ixy, ixz, iyz]");
    s.inertia << in[0], in[3], in[4], in[3], in[1], in[5], in[4], in[5], in[2];
    s.armature = l.value("armature", 0.0);
    if (!(s.armature >= 0.0)) throw std::invalid_argument("armature must be >= 0");
    links.push_back(s);
    const auto ql = l.at("q_limits").get<std::vector<double>>();
    const auto dl = l.at("dq_limits").get<std::vector<double>>();
    const auto tl = l.at("tau_limits").get<std::vector<double>>();
    if (ql.size() != 2 || dl.size() != 2 || tl.size() != 2) throw std::invalid_argument("limits must be [lo, hi]");
    lim.q_min(i) = ql[0];
    lim.q_max(i) = ql[1];
    lim.dq_min(i) = dl[0];
    lim.dq_max(i) = dl[1];
    lim.tau_min(i) = tl[0];
    lim.tau_max(i) = tl[1];
  }
  const Vec3 g = doc.contains("gravity") ? vec3_from_json(doc.at("gravity")) : Vec3(0.0, 0.0, -9.81);
  const Pose base = doc.contains("base") ? pose_from_json(doc.at("base")) : Pose{};
  const Pose tool = doc.contains("tool") ? pose_from_json(doc.at("tool")) : Pose{};
  return ChainModel(doc.value("name", "arm"), std::move(links), std::move(lim), g, base, tool);
}

Json chain_to_json(const ChainModel& chain) {
  Json links = Json::array();
  const JointLimits& lim = chain.limits();
  for (int i = 0; i < chain.dof(); ++i) {
    const LinkSpec& l = chain.link(i);
    const Mat3& I = l.inertia;
    links.push_back({{"type", l.type == JointType::revolute ? "revolute" : "prismatic"},
                     {"axis", {l.axis.x(), l.axis.y(), l.axis.z()}},
                     {"origin", pose_to_json(l.parent_to_joint)},
                     {"mass", l.mass},
                     {"com", {l.com.x(), l.com.y(), l.com.z()}},
                     {"inertia", {I(0, 0), I(1, 1), I(2, 2), I(0, 1), I(0, 2), I(1, 2)}},
                     {"armature", l.armature},
                     {"q_limits", {lim.q_min(i), lim.q_max(i)}},
                     {"dq_limits", {lim.dq_min(i), lim.dq_max(i)}},
                     {"tau_limits", {lim.tau_min(i), lim.tau_max(i)}}});
  }
  const Vec3& g = chain.gravity();
  return {{"name", chain.name()},
          {"gravity", {g.x(), g.y(), g.z()}},
          {"base", pose_to_json(chain.base())},
          {"tool", pose_to_json(chain.tool())},
          {"links", links}};
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return Json::parse(in, nullptr, true, true);
}

ChainModel load_chain(const std::filesystem::path& path) { return chain_from_json(read_json_file(path)); }

}  // namespace davil
