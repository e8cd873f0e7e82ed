#pragma once

#include <optional>
#include <string>
#include <vector>

#include "difdet/types.hpp"

namespace difdet::data {

/// One KITTI label/prediction line. The box is stored in camera coordinates
/// (x right, y down, z forward); location in the file is the bottom-center,
/// the Box3D here carries the volumetric center (y lifted by h/2 at parse).
struct KittiRecord {
  std::string type;
  double truncated = 0;
  int occluded = 0;
  double alpha = 0;
  double bbox[4] = {0, 0, 0, 0};  // left, top, right, bottom (pixels)
  bool ignorable = false;         // DontCare / sentinel dimensions
  Box3D box;                      // camera coords, only valid if !ignorable
  std::optional<double> score;
};

/// Parses one 15-field label line (16 with trailing score). Throws
/// std::runtime_error with the line number on malformed input.
KittiRecord parse_kitti_label(const std::string& line, int line_number = 0);

/// 15-field label line, or 16 fields when rec.score is set. Numeric fields
/// use two decimals.
std::string serialize_record(const KittiRecord& rec);

std::vector<KittiRecord> parse_kitti_label_file(const std::string& path);
void write_kitti_label_file(const std::string& path,
                            const std::vector<KittiRecord>& recs);

// Fixed extrinsic between the synthetic world frame (x forward, y left,
// z up, camera at the origin) and the camera frame (x right, y down,
// z forward).
Eigen::Vector3d world_to_camera_point(const Eigen::Vector3d& p);
Eigen::Vector3d camera_to_world_point(const Eigen::Vector3d& p);
Box3D world_to_camera_box(const Box3D& b);
Box3D camera_to_world_box(const Box3D& b);

/// 3x4 world->pixel projection for a pinhole camera at the world origin
/// using the fixed extrinsic above.
Eigen::Matrix<double, 3, 4> make_projection(double fx, double fy, double cx,
                                            double cy);

Eigen::Matrix<double, 3, 4> read_calib_file(const std::string& path);
void write_calib_file(const std::string& path,
                      const Eigen::Matrix<double, 3, 4>& proj);

// Dataset directory layout: points/NNNNNN.bin (little-endian float32 Kx4),
// images/NNNNNN.png, labels/NNNNNN.txt, calib/NNNNNN.txt.

std::string scene_file_stem(int id);

void write_scene(const std::string& dir, const Scene& scene,
                 const std::vector<std::string>& class_names);
Scene read_scene(const std::string& dir, int id,
                 const std::vector<std::string>& class_names);
/// Scene ids present in dir (sorted), determined by points/*.bin.
std::vector<int> list_scene_ids(const std::string& dir);

void write_png_rgb(const std::string& path, const std::vector<double>& image,
                   int h, int w);
std::vector<double> read_png_rgb(const std::string& path, int* h, int* w);

/// KITTI 16-field prediction lines for one scene (world-frame detections are
/// converted to camera coordinates; 2D bbox from projected corners).
void write_predictions(const std::string& path, const DetectionOutput& dets,
                       const std::vector<std::string>& class_names,
                       const Eigen::Matrix<double, 3, 4>& projection,
                       int image_h, int image_w);
struct ScoredDetection {
  Box3D box;  // world frame
  int label = 0;
  double score = 0;
};
std::vector<ScoredDetection> read_predictions(
    const std::string& path, const std::vector<std::string>& class_names);

}  // namespace difdet::data
