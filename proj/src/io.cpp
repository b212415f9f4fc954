#include "fbox/io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fbox::io {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(path.string() + ": " + what);
}

std::ifstream open_in(const std::filesystem::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) fail(path, "cannot open for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) fail(path, "cannot open for writing");
  return out;
}

json box_to_json(const BoxParams& b) {
  return json::array({round_sig(b.center.x()), round_sig(b.center.y()), round_sig(b.center.z()),
                      round_sig(b.h), round_sig(b.w), round_sig(b.l), round_sig(b.theta)});
}

BoxParams box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 7)
    throw std::runtime_error("box must be an array [x,y,z,h,w,l,theta]");
  BoxParams b;
  b.center = Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
  b.h = j[3].get<double>();
  b.w = j[4].get<double>();
  b.l = j[5].get<double>();
  b.theta = j[6].get<double>();
  return b;
}

Structure structure_from_json(const json& j, const std::filesystem::path& path) {
  const auto tag = structure_from_name(j.get<std::string>());
  if (!tag) fail(path, "unknown structure tag '" + j.get<std::string>() + "'");
  return *tag;
}

}  // namespace

double round_sig(double value, int digits) {
  if (!std::isfinite(value)) return value;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, value);
  return std::strtod(buf, nullptr);
}

PointCloud read_point_cloud(const std::filesystem::path& path) {
  PointCloud cloud;
  if (path.extension() == ".bin") {
    std::ifstream in = open_in(path, true);
    in.seekg(0, std::ios::end);
    const std::streamoff size = in.tellg();
    in.seekg(0);
    if (size % 16 != 0)
      fail(path, "truncated float32 quadruple at byte " + std::to_string((size / 16) * 16));
    std::vector<float> raw(static_cast<std::size_t>(size) / 4);
    in.read(reinterpret_cast<char*>(raw.data()), size);
    if (!in) fail(path, "short read");
    for (std::size_t i = 0; i < raw.size(); i += 4) {
      cloud.points.emplace_back(raw[i], raw[i + 1], raw[i + 2]);
      cloud.intensity.push_back(raw[i + 3]);
    }
    return cloud;
  }
  std::ifstream in = open_in(path, false);
  std::string line;
  std::size_t line_no = 0;
  bool any_intensity = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x >> y >> z)) fail(path, "malformed point on line " + std::to_string(line_no));
    cloud.points.emplace_back(x, y, z);
    double i;
    if (ss >> i) {
      any_intensity = true;
      cloud.intensity.push_back(static_cast<float>(i));
    } else {
      cloud.intensity.push_back(0.0F);
    }
  }
  if (!any_intensity) cloud.intensity.clear();
  return cloud;
}

void write_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  if (path.extension() == ".bin") {
    std::ofstream out = open_out(path, true);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const float rec[4] = {static_cast<float>(cloud.points[i].x()),
                            static_cast<float>(cloud.points[i].y()),
                            static_cast<float>(cloud.points[i].z()),
                            cloud.has_intensity() ? cloud.intensity[i] : 0.0F};
      out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
    return;
  }
  std::ofstream out = open_out(path, false);
  char buf[160];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    if (cloud.has_intensity())
      std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %.9g\n", p.x(), p.y(), p.z(),
                    static_cast<double>(cloud.intensity[i]));
    else
      std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p.x(), p.y(), p.z());
    out << buf;
  }
}

InstanceMaskSet read_masks(const std::filesystem::path& mask_path,
                           const std::filesystem::path& meta_path) {
  std::ifstream in = open_in(mask_path, true);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "IMSK", 4) != 0) fail(mask_path, "bad magic at byte 0");
  std::uint32_t w = 0, h = 0;
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  if (!in) fail(mask_path, "truncated header at byte 4");
  InstanceMaskSet masks;
  masks.width = static_cast<int>(w);
  masks.height = static_cast<int>(h);
  masks.labels.resize(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(masks.labels.data()),
          static_cast<std::streamsize>(masks.labels.size() * 2));
  if (!in)
    fail(mask_path, "truncated labels at byte " + std::to_string(12 + in.gcount()));

  const json meta = read_json_file(meta_path);
  for (const json& rec : meta.at("instances")) {
    const int id = rec.at("id").get<int>();
    masks.instance_class[id] = rec.at("class").get<int>();
    masks.instance_score[id] = rec.at("score").get<double>();
  }
  for (std::uint16_t label : masks.labels)
    if (label != 0 && !masks.instance_class.count(label))
      fail(meta_path, "mask instance " + std::to_string(label) + " missing from metadata");
  return masks;
}

void write_masks(const std::filesystem::path& mask_path, const std::filesystem::path& meta_path,
                 const InstanceMaskSet& masks) {
  std::ofstream out = open_out(mask_path, true);
  out.write("IMSK", 4);
  const std::uint32_t w = static_cast<std::uint32_t>(masks.width);
  const std::uint32_t h = static_cast<std::uint32_t>(masks.height);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(masks.labels.data()),
            static_cast<std::streamsize>(masks.labels.size() * 2));

  json instances = json::array();
  for (const auto& [id, cls] : masks.instance_class) {
    json rec;
    rec["id"] = id;
    rec["class"] = cls;
    rec["score"] = round_sig(masks.instance_score.at(id));
    instances.push_back(rec);
  }
  write_json_file(meta_path, json{{"instances", instances}});
}

CameraCalibration read_calibration(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  CameraCalibration calib;
  const auto& k = j.at("intrinsics");
  const auto& e = j.at("extrinsics");
  if (k.size() != 9) fail(path, "intrinsics must hold 9 numbers");
  if (e.size() != 12) fail(path, "extrinsics must hold 12 numbers");
  for (int i = 0; i < 9; ++i) calib.intrinsics(i / 3, i % 3) = k[i].get<double>();
  for (int i = 0; i < 12; ++i) calib.extrinsics(i / 4, i % 4) = e[i].get<double>();
  calib.width = j.at("width").get<int>();
  calib.height = j.at("height").get<int>();
  if (!calibration_valid(calib)) fail(path, "calibration fails validity checks");
  return calib;
}

void write_calibration(const std::filesystem::path& path, const CameraCalibration& calib) {
  json j;
  json k = json::array();
  for (int i = 0; i < 9; ++i) k.push_back(round_sig(calib.intrinsics(i / 3, i % 3)));
  json e = json::array();
  for (int i = 0; i < 12; ++i) e.push_back(round_sig(calib.extrinsics(i / 4, i % 4)));
  j["intrinsics"] = k;
  j["extrinsics"] = e;
  j["width"] = calib.width;
  j["height"] = calib.height;
  write_json_file(path, j);
}

std::vector<AnchorPrior> read_priors(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  std::vector<AnchorPrior> priors;
  for (const json& rec : j) {
    AnchorPrior p;
    p.class_id = rec.at("class").get<int>();
    p.h = rec.at("h").get<double>();
    p.w = rec.at("w").get<double>();
    p.l = rec.at("l").get<double>();
    p.structure = structure_from_json(rec.at("structure"), path);
    if (!prior_valid(p)) fail(path, "prior for class " + std::to_string(p.class_id) +
                                        " has non-positive sizes");
    priors.push_back(p);
  }
  return priors;
}

void write_priors(const std::filesystem::path& path, const std::vector<AnchorPrior>& priors) {
  json j = json::array();
  for (const AnchorPrior& p : priors) {
    json rec;
    rec["class"] = p.class_id;
    rec["h"] = round_sig(p.h);
    rec["w"] = round_sig(p.w);
    rec["l"] = round_sig(p.l);
    rec["structure"] = structure_name(p.structure);
    j.push_back(rec);
  }
  write_json_file(path, j);
}

std::vector<eval::GroundTruth> read_ground_truth(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  std::vector<eval::GroundTruth> out;
  for (const json& rec : j)
    out.push_back({box_from_json(rec.at("box")), rec.at("class").get<int>()});
  return out;
}

void write_ground_truth(const std::filesystem::path& path,
                        const std::vector<eval::GroundTruth>& boxes,
                        const std::vector<Structure>* structures) {
  json j = json::array();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    json rec;
    rec["class"] = boxes[i].class_id;
    rec["box"] = box_to_json(boxes[i].box);
    if (structures) rec["structure"] = structure_name((*structures)[i]);
    j.push_back(rec);
  }
  write_json_file(path, j);
}

std::vector<eval::Detection> read_detections(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  std::vector<eval::Detection> out;
  for (const json& rec : j)
    out.push_back(
        {box_from_json(rec.at("box")), rec.at("class").get<int>(), rec.at("score").get<double>()});
  return out;
}

eval::EvalConfig read_eval_config(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  eval::EvalConfig config;
  if (j.contains("score_threshold")) config.score_threshold = j["score_threshold"].get<double>();
  if (j.contains("default_iou_threshold"))
    config.default_iou_threshold = j["default_iou_threshold"].get<double>();
  if (j.contains("interpolation_points"))
    config.interpolation_points = j["interpolation_points"].get<int>();
  if (j.contains("iou_thresholds"))
    for (const auto& [key, value] : j["iou_thresholds"].items())
      config.iou_thresholds[std::stoi(key)] = value.get<double>();
  if (j.contains("common_classes"))
    config.common_classes = j["common_classes"].get<std::vector<int>>();
  if (j.contains("novel_classes"))
    config.novel_classes = j["novel_classes"].get<std::vector<int>>();
  for (const auto& [cls, thr] : config.iou_thresholds)
    if (!(thr > 0.0 && thr <= 1.0)) fail(path, "iou threshold out of (0,1]");
  return config;
}

nlohmann::json report_to_json(const eval::APReport& report) {
  json per_class = json::object();
  for (const auto& [cls, ap] : report.per_class) per_class[std::to_string(cls)] = round_sig(ap);
  json j;
  j["per_class_ap"] = per_class;
  j["skipped_classes"] = report.skipped_classes;
  j["common_map"] = report.common_map ? json(round_sig(*report.common_map)) : json(nullptr);
  j["novel_map"] = report.novel_map ? json(round_sig(*report.novel_map)) : json(nullptr);
  j["overall_map"] = report.overall_map ? json(round_sig(*report.overall_map)) : json(nullptr);
  return j;
}

void write_report(const std::filesystem::path& path, const eval::APReport& report) {
  write_json_file(path, report_to_json(report));
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, true);
  std::uint32_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  if (!in) fail(path, "truncated dims header at byte 0");
  std::vector<float> raw(static_cast<std::size_t>(rows) * cols);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (!in) fail(path, "truncated values at byte " + std::to_string(8 + in.gcount()));
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = raw[static_cast<std::size_t>(r) * cols + c];
  return m;
}

void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  std::ofstream out = open_out(path, true);
  const std::uint32_t rows = static_cast<std::uint32_t>(m.rows());
  const std::uint32_t cols = static_cast<std::uint32_t>(m.cols());
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) {
      const float v = static_cast<float>(m(r, c));
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
}

void write_loss_trace_csv(const std::filesystem::path& path, const std::vector<double>& trace) {
  std::ofstream out = open_out(path, false);
  out << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", i, trace[i]);
    out << buf;
  }
}

CameraCalibration default_camera(double sensor_height) {
  CameraCalibration calib;
  calib.width = 1242;
  calib.height = 375;
  calib.intrinsics << 600.0, 0.0, 621.0, 0.0, 600.0, 187.5, 0.0, 0.0, 1.0;
  // camera at the sensor, looking along +x: cam z = sensor x, cam x = -sensor
  // y, cam y = -sensor z
  calib.extrinsics << 0.0, -1.0, 0.0, 0.0,
                      0.0, 0.0, -1.0, sensor_height,
                      1.0, 0.0, 0.0, 0.0;
  return calib;
}

SceneFile read_scene(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  SceneFile file;
  file.scene.seed = j.value("seed", 0ULL);
  file.scene.ground_plane = j.value("ground_plane", true);
  for (const json& rec : j.at("objects")) {
    sim::SimObject obj;
    obj.box = box_from_json(rec.at("box"));
    obj.class_id = rec.at("class").get<int>();
    obj.structure = structure_from_json(rec.at("structure"), path);
    obj.cs_parts = rec.value("parts", 12);
    obj.cs_part_fraction = rec.value("part_fraction", 0.15);
    file.scene.objects.push_back(obj);
  }

  file.lidar = sim::default_lidar();
  if (j.contains("lidar")) {
    const json& l = j["lidar"];
    if (l.contains("beams") || l.contains("elevation_min_deg") || l.contains("elevation_max_deg")) {
      const int beams = l.value("beams", 64);
      const double lo = l.value("elevation_min_deg", -24.8) * M_PI / 180.0;
      const double hi = l.value("elevation_max_deg", 2.0) * M_PI / 180.0;
      if (beams < 1) fail(path, "lidar.beams must be >= 1");
      file.lidar.beam_elevations.resize(beams);
      for (int i = 0; i < beams; ++i)
        file.lidar.beam_elevations[i] = beams == 1 ? lo : lo + (hi - lo) * i / (beams - 1);
    }
    if (l.contains("azimuth_step_deg"))
      file.lidar.azimuth_step = l["azimuth_step_deg"].get<double>() * M_PI / 180.0;
    file.lidar.max_range = l.value("max_range", file.lidar.max_range);
    file.lidar.range_sigma = l.value("range_sigma", file.lidar.range_sigma);
    file.lidar.sensor_height = l.value("sensor_height", file.lidar.sensor_height);
  }

  file.camera = default_camera(file.lidar.sensor_height);
  if (j.contains("camera")) {
    const json& c = j["camera"];
    file.camera.width = c.value("width", file.camera.width);
    file.camera.height = c.value("height", file.camera.height);
    const double fx = c.value("fx", file.camera.intrinsics(0, 0));
    const double fy = c.value("fy", file.camera.intrinsics(1, 1));
    const double cx = c.value("cx", file.camera.intrinsics(0, 2));
    const double cy = c.value("cy", file.camera.intrinsics(1, 2));
    file.camera.intrinsics << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    if (c.contains("extrinsics")) {
      const auto& e = c["extrinsics"];
      if (e.size() != 12) fail(path, "camera.extrinsics must hold 12 numbers");
      for (int i = 0; i < 12; ++i) file.camera.extrinsics(i / 4, i % 4) = e[i].get<double>();
    }
  }
  if (!calibration_valid(file.camera)) fail(path, "camera fails validity checks");
  return file;
}

void write_fit_records(const std::filesystem::path& path, const std::vector<FitRecord>& records) {
  json j = json::array();
  for (const FitRecord& r : records) {
    json rec;
    rec["instance"] = r.instance;
    rec["class"] = r.class_id;
    rec["score"] = round_sig(r.score);
    rec["box"] = box_to_json(r.box);
    rec["loss"] = {{"od", round_sig(r.loss.od)},
                   {"fvd", round_sig(r.loss.fvd)},
                   {"bvc", round_sig(r.loss.bvc)},
                   {"box", round_sig(r.loss.box)}};
    rec["converged"] = r.converged;
    j.push_back(rec);
  }
  write_json_file(path, j);
}

std::vector<eval::Detection> detections_from_fit_records(const std::vector<FitRecord>& records) {
  std::vector<eval::Detection> out;
  out.reserve(records.size());
  for (const FitRecord& r : records) out.push_back({r.box, r.class_id, r.score});
  return out;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out = open_out(path, false);
  out << j.dump(2) << "\n";
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in = open_in(path, false);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(path, e.what());  // nlohmann reports the byte offset in the message
  }
}

}  // namespace fbox::io
