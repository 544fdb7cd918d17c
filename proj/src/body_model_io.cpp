#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mmfit/body_model.hpp"
#include "mmfit/error.hpp"

namespace mmfit {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'F', 'I', 'T', 'B', 'M', '1'};

template <typename Mat>
void append_section(std::vector<float> &blob, nlohmann::json &sections, const char *name,
                    const Mat &m) {
  sections[name] = {{"offset", blob.size() * sizeof(float)}, {"count", m.size()}};
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) blob.push_back(static_cast<float>(m(r, c)));
}

Eigen::MatrixXd read_section(const std::vector<char> &blob, const nlohmann::json &sections,
                             const char *name, Eigen::Index rows, Eigen::Index cols) {
  if (!sections.contains(name)) throw Error(std::string("model file: missing section '") + name + "'");
  const auto &s = sections.at(name);
  const auto offset = s.at("offset").get<std::size_t>();
  const auto count = s.at("count").get<std::size_t>();
  if (count != static_cast<std::size_t>(rows * cols)) {
    throw Error(std::string("model file: section '") + name + "' has the wrong element count");
  }
  if (offset % sizeof(float) != 0 || offset + count * sizeof(float) > blob.size()) {
    throw Error(std::string("model file: section '") + name + "' lies outside the blob");
  }
  Eigen::MatrixXd m(rows, cols);
  const char *p = blob.data() + offset;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      float f;
      std::memcpy(&f, p, sizeof(float));
      p += sizeof(float);
      m(r, c) = f;
    }
  return m;
}

}  // namespace

void save_body_model(const std::filesystem::path &path, const BodyModel &model) {
  model.validate();
  std::vector<float> blob;
  nlohmann::json sections = nlohmann::json::object();
  append_section(blob, sections, "template", model.template_vertices);
  append_section(blob, sections, "regressor", model.joint_regressor);
  append_section(blob, sections, "skin_weights", model.skin_weights);
  append_section(blob, sections, "shape_dirs", model.shape_dirs);
  if (model.pose_dirs) append_section(blob, sections, "pose_dirs", *model.pose_dirs);

  nlohmann::json header{{"V", model.num_vertices()},
                        {"J", model.num_joints()},
                        {"pose_dims", model.pose_dims()},
                        {"parents", model.parents},
                        {"sections", sections}};
  if (!model.faces.empty()) {
    nlohmann::json faces = nlohmann::json::array();
    for (const auto &f : model.faces) faces.push_back({f[0], f[1], f[2]});
    header["faces"] = faces;
  }
  const std::string text = header.dump();
  const auto len = static_cast<std::uint32_t>(text.size());

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char *>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char *>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
}

BodyModel load_body_model(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(path.string() + ": not a body model file");
  }
  std::uint32_t len;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (12 + static_cast<std::size_t>(len) > bytes.size()) throw Error(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  } catch (const nlohmann::json::parse_error &e) {
    throw Error(path.string() + ": bad header: " + e.what());
  }
  const std::vector<char> blob(bytes.begin() + 12 + len, bytes.end());

  const int V = header.at("V").get<int>();
  const int J = header.at("J").get<int>();
  if (header.at("pose_dims").get<int>() != 3 * J) throw Error(path.string() + ": pose_dims != 3J");
  const auto &sections = header.at("sections");

  BodyModel m;
  m.parents = header.at("parents").get<std::vector<int>>();
  if (static_cast<int>(m.parents.size()) != J) throw Error(path.string() + ": parents length != J");
  m.template_vertices = read_section(blob, sections, "template", V, 3);
  m.joint_regressor = read_section(blob, sections, "regressor", J, V);
  m.skin_weights = read_section(blob, sections, "skin_weights", V, J);
  m.shape_dirs = read_section(blob, sections, "shape_dirs", 3 * V, BodyModel::kShapeDims);
  if (sections.contains("pose_dirs")) {
    m.pose_dirs = read_section(blob, sections, "pose_dirs", 3 * V, 9 * (J - 1));
  }
  if (header.contains("faces")) {
    for (const auto &f : header.at("faces")) m.faces.emplace_back(f[0].get<int>(), f[1].get<int>(), f[2].get<int>());
  }
  m.validate();
  return m;
}

}  // namespace mmfit
