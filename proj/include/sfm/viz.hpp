#pragma once

#include <filesystem>
#include <string>

#include "sfm/core.hpp"

namespace sfm {

struct FlowProjection {
  Matrix statistical_2d;  // k x 2
  Matrix synthetic_2d;    // k x 2
  Eigen::RowVector2d origin_2d;  // where the zero flow lands
  Vector per_class_cosine;       // all C classes
  double mean_cosine = 0.0;      // in [-1,1]
  double reprojection_error = 0.0;  // max |row - reconstruction| over the union
  std::string csv;
};

// PCA (2 components) fitted on the union of both flow sets; the first
// k_classes rows of each are projected. Throws ValidationError if k > C.
FlowProjection project_flows(const Matrix& statistical, const Matrix& synthetic, int k_classes);

// Writes flow.png (arrows from the projected origin, statistical solid and
// synthetic dotted, mean cosine printed on a 0-100 scale), flow.csv and
// cosine_summary.txt into out_dir.
FlowProjection emit_flow_plot(const Matrix& statistical, const Matrix& synthetic, int k_classes,
                              const std::filesystem::path& out_dir);

}  // namespace sfm
