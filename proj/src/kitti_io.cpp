#include "difdet/kitti_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "difdet/geometry.hpp"

namespace difdet::data {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream iss(line);
  std::vector<std::string> out;
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

double to_double(const std::string& s, int line_number) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("kitti label line " + std::to_string(line_number) +
                             ": non-numeric field '" + s + "'");
  }
}

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  // normalize negative zero so round trips are stable
  if (std::strcmp(buf, "-0.00") == 0) return "0.00";
  return buf;
}

}  // namespace

KittiRecord parse_kitti_label(const std::string& line, int line_number) {
  const std::vector<std::string> f = split_ws(line);
  if (f.size() != 15 && f.size() != 16)
    throw std::runtime_error("kitti label line " + std::to_string(line_number) +
                             ": expected 15 or 16 fields, got " +
                             std::to_string(f.size()));
  KittiRecord r;
  r.type = f[0];
  r.truncated = to_double(f[1], line_number);
  r.occluded = int(to_double(f[2], line_number));
  r.alpha = to_double(f[3], line_number);
  for (int k = 0; k < 4; ++k) r.bbox[k] = to_double(f[4 + k], line_number);
  const double h = to_double(f[8], line_number);
  const double w = to_double(f[9], line_number);
  const double l = to_double(f[10], line_number);
  const double x = to_double(f[11], line_number);
  const double y = to_double(f[12], line_number);
  const double z = to_double(f[13], line_number);
  const double ry = to_double(f[14], line_number);
  if (f.size() == 16) r.score = to_double(f[15], line_number);
  if (r.type == "DontCare" || h <= 0 || w <= 0 || l <= 0) {
    r.ignorable = true;
  } else {
    // location is the bottom-center; camera y points down.
    r.box = Box3D(x, y - h / 2.0, z, l, w, h, ry);
  }
  return r;
}

std::string serialize_record(const KittiRecord& rec) {
  std::ostringstream os;
  os << rec.type << ' ' << fmt2(rec.truncated) << ' ' << rec.occluded << ' '
     << fmt2(rec.alpha);
  for (int k = 0; k < 4; ++k) os << ' ' << fmt2(rec.bbox[k]);
  if (rec.ignorable) {
    os << " -1.00 -1.00 -1.00 -1000.00 -1000.00 -1000.00 -10.00";
  } else {
    const Box3D& b = rec.box;
    os << ' ' << fmt2(b.h) << ' ' << fmt2(b.w) << ' ' << fmt2(b.l) << ' '
       << fmt2(b.cx) << ' ' << fmt2(b.cy + b.h / 2.0) << ' ' << fmt2(b.cz)
       << ' ' << fmt2(b.yaw);
  }
  if (rec.score) os << ' ' << fmt2(*rec.score);
  return os.str();
}

std::vector<KittiRecord> parse_kitti_label_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open label file: " + path);
  std::vector<KittiRecord> out;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    out.push_back(parse_kitti_label(line, ln));
  }
  return out;
}

void write_kitti_label_file(const std::string& path,
                            const std::vector<KittiRecord>& recs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write label file: " + path);
  for (const auto& r : recs) out << serialize_record(r) << '\n';
}

Eigen::Vector3d world_to_camera_point(const Eigen::Vector3d& p) {
  return {-p.y(), -p.z(), p.x()};
}

Eigen::Vector3d camera_to_world_point(const Eigen::Vector3d& p) {
  return {p.z(), -p.x(), -p.y()};
}

Box3D world_to_camera_box(const Box3D& b) {
  const Eigen::Vector3d c = world_to_camera_point({b.cx, b.cy, b.cz});
  return Box3D(c.x(), c.y(), c.z(), b.l, b.w, b.h, wrap_angle(-b.yaw - kPi / 2));
}

Box3D camera_to_world_box(const Box3D& b) {
  const Eigen::Vector3d c = camera_to_world_point({b.cx, b.cy, b.cz});
  return Box3D(c.x(), c.y(), c.z(), b.l, b.w, b.h, wrap_angle(-b.yaw - kPi / 2));
}

Eigen::Matrix<double, 3, 4> make_projection(double fx, double fy, double cx,
                                            double cy) {
  Eigen::Matrix3d intr;
  intr << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  Eigen::Matrix3d rot;  // world axes expressed in camera rows
  rot << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  Eigen::Matrix<double, 3, 4> ext = Eigen::Matrix<double, 3, 4>::Zero();
  ext.leftCols<3>() = rot;
  return intr * ext;
}

Eigen::Matrix<double, 3, 4> read_calib_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open calib file: " + path);
  Eigen::Matrix<double, 3, 4> p;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      if (!(in >> p(i, j)))
        throw std::runtime_error("calib file truncated: " + path);
  return p;
}

void write_calib_file(const std::string& path,
                      const Eigen::Matrix<double, 3, 4>& proj) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write calib file: " + path);
  out.precision(17);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      out << proj(i, j) << (i == 2 && j == 3 ? '\n' : ' ');
}

std::string scene_file_stem(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", id);
  return buf;
}

void write_png_rgb(const std::string& path, const std::vector<double>& image,
                   int h, int w) {
  if (int(image.size()) != h * w * 3)
    throw std::invalid_argument("write_png_rgb: size mismatch");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot write png: " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng failure writing " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(size_t(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w * 3; ++x) {
      const double v = std::clamp(image[size_t(y) * w * 3 + x], 0.0, 1.0);
      row[x] = png_byte(std::lround(v * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

std::vector<double> read_png_rgb(const std::string& path, int* h, int* w) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot open png: " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("libpng failure reading " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int height = int(png_get_image_height(png, info));
  const int width = int(png_get_image_width(png, info));
  std::vector<double> out(size_t(height) * width * 3);
  std::vector<png_byte> row(size_t(width) * 3);
  for (int y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < width * 3; ++x)
      out[size_t(y) * width * 3 + x] = row[x] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  *h = height;
  *w = width;
  return out;
}

namespace {

int label_to_class(const std::string& name,
                   const std::vector<std::string>& class_names) {
  for (size_t i = 0; i < class_names.size(); ++i)
    if (class_names[i] == name) return int(i);
  return -1;
}

void project_bbox(const Box3D& world_box,
                  const Eigen::Matrix<double, 3, 4>& proj, int image_h,
                  int image_w, double bbox[4]) {
  const auto corners = geometry::box_corners(world_box);
  double lo_u = 1e30, lo_v = 1e30, hi_u = -1e30, hi_v = -1e30;
  bool any = false;
  for (const auto& c : corners) {
    Eigen::Vector4d hom(c[0], c[1], c[2], 1.0);
    const Eigen::Vector3d px = proj * hom;
    if (px.z() <= 1e-6) continue;
    const double u = px.x() / px.z(), v = px.y() / px.z();
    lo_u = std::min(lo_u, u);
    hi_u = std::max(hi_u, u);
    lo_v = std::min(lo_v, v);
    hi_v = std::max(hi_v, v);
    any = true;
  }
  if (!any) {
    bbox[0] = bbox[1] = bbox[2] = bbox[3] = 0;
    return;
  }
  bbox[0] = std::clamp(lo_u, 0.0, double(image_w));
  bbox[1] = std::clamp(lo_v, 0.0, double(image_h));
  bbox[2] = std::clamp(hi_u, 0.0, double(image_w));
  bbox[3] = std::clamp(hi_v, 0.0, double(image_h));
}

KittiRecord record_from_world_box(const Box3D& world_box, int label,
                                  const std::vector<std::string>& class_names,
                                  const Eigen::Matrix<double, 3, 4>& proj,
                                  int image_h, int image_w) {
  KittiRecord rec;
  rec.type = class_names.at(label);
  rec.box = world_to_camera_box(world_box);
  rec.alpha = wrap_angle(rec.box.yaw -
                         std::atan2(rec.box.cx, rec.box.cz));
  project_bbox(world_box, proj, image_h, image_w, rec.bbox);
  return rec;
}

}  // namespace

void write_scene(const std::string& dir, const Scene& scene,
                 const std::vector<std::string>& class_names) {
  for (const char* sub : {"points", "images", "labels", "calib"})
    fs::create_directories(fs::path(dir) / sub);
  const std::string stem = scene_file_stem(scene.id);

  {
    std::ofstream out(fs::path(dir) / "points" / (stem + ".bin"),
                      std::ios::binary);
    if (!out) throw std::runtime_error("cannot write points for " + stem);
    for (int i = 0; i < scene.points.rows(); ++i)
      for (int j = 0; j < 4; ++j) {
        const float v = float(scene.points(i, j));
        out.write(reinterpret_cast<const char*>(&v), sizeof(float));
      }
  }
  write_png_rgb((fs::path(dir) / "images" / (stem + ".png")).string(),
                scene.image, scene.image_h, scene.image_w);
  std::vector<KittiRecord> recs;
  for (size_t i = 0; i < scene.gt_boxes.size(); ++i)
    recs.push_back(record_from_world_box(scene.gt_boxes[i], scene.gt_labels[i],
                                         class_names, scene.projection,
                                         scene.image_h, scene.image_w));
  write_kitti_label_file((fs::path(dir) / "labels" / (stem + ".txt")).string(),
                         recs);
  write_calib_file((fs::path(dir) / "calib" / (stem + ".txt")).string(),
                   scene.projection);
}

Scene read_scene(const std::string& dir, int id,
                 const std::vector<std::string>& class_names) {
  const std::string stem = scene_file_stem(id);
  Scene s;
  s.id = id;
  {
    std::ifstream in(fs::path(dir) / "points" / (stem + ".bin"),
                     std::ios::binary);
    if (!in) throw std::runtime_error("missing points file for scene " + stem);
    std::vector<float> raw;
    in.seekg(0, std::ios::end);
    const auto bytes = in.tellg();
    in.seekg(0);
    const size_t n = size_t(bytes) / sizeof(float);
    raw.resize(n);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(n * 4));
    if (n % 4 != 0)
      throw std::runtime_error("points file not Kx4: " + stem);
    s.points.resize(n / 4, 4);
    for (size_t i = 0; i < n / 4; ++i)
      for (int j = 0; j < 4; ++j) s.points(int(i), j) = raw[i * 4 + j];
  }
  s.image = read_png_rgb((fs::path(dir) / "images" / (stem + ".png")).string(),
                         &s.image_h, &s.image_w);
  s.projection =
      read_calib_file((fs::path(dir) / "calib" / (stem + ".txt")).string());
  const auto recs =
      parse_kitti_label_file((fs::path(dir) / "labels" / (stem + ".txt")).string());
  for (const auto& r : recs) {
    if (r.ignorable) continue;
    const int label = label_to_class(r.type, class_names);
    if (label < 0) continue;
    s.gt_boxes.push_back(camera_to_world_box(r.box));
    s.gt_labels.push_back(label);
  }
  return s;
}

std::vector<int> list_scene_ids(const std::string& dir) {
  std::vector<int> ids;
  const fs::path pdir = fs::path(dir) / "points";
  if (!fs::exists(pdir)) throw std::runtime_error("no points/ dir in " + dir);
  for (const auto& e : fs::directory_iterator(pdir)) {
    if (e.path().extension() == ".bin")
      ids.push_back(std::stoi(e.path().stem().string()));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void write_predictions(const std::string& path, const DetectionOutput& dets,
                       const std::vector<std::string>& class_names,
                       const Eigen::Matrix<double, 3, 4>& projection,
                       int image_h, int image_w) {
  std::vector<KittiRecord> recs;
  for (size_t i = 0; i < dets.boxes.size(); ++i) {
    KittiRecord rec = record_from_world_box(dets.boxes[i], dets.labels[i],
                                            class_names, projection, image_h,
                                            image_w);
    rec.score = dets.scores[i];
    recs.push_back(rec);
  }
  write_kitti_label_file(path, recs);
}

std::vector<ScoredDetection> read_predictions(
    const std::string& path, const std::vector<std::string>& class_names) {
  std::vector<ScoredDetection> out;
  for (const auto& r : parse_kitti_label_file(path)) {
    if (r.ignorable || !r.score) continue;
    const int label = label_to_class(r.type, class_names);
    if (label < 0) continue;
    out.push_back({camera_to_world_box(r.box), label, *r.score});
  }
  return out;
}

}  // namespace difdet::data
