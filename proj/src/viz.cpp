#include "sfm/viz.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "sfm/flows.hpp"
#include "sfm/io.hpp"

namespace sfm {

FlowProjection project_flows(const Matrix& statistical, const Matrix& synthetic, int k_classes) {
  if (statistical.rows() != synthetic.rows() || statistical.cols() != synthetic.cols()) {
    throw ShapeError("flow sets must have the same shape");
  }
  if (k_classes < 1 || k_classes > statistical.rows()) {
    throw ValidationError("k_classes = " + std::to_string(k_classes) + " must lie in [1, " +
                          std::to_string(statistical.rows()) + "]");
  }
  Matrix all(statistical.rows() * 2, statistical.cols());
  all << statistical, synthetic;
  const Eigen::RowVectorXd mean = all.colwise().mean();
  const Matrix centered = all.rowwise() - mean;
  Eigen::MatrixXd cov = centered.transpose() * centered;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues ascend; take the two largest.
  const Eigen::Index f = cov.rows();
  Eigen::MatrixXd basis(f, 2);
  basis.col(0) = eig.eigenvectors().col(f - 1);
  basis.col(1) = f >= 2 ? Eigen::VectorXd(eig.eigenvectors().col(f - 2)) : Eigen::VectorXd::Zero(f);
  const Matrix projected = centered * basis;
  const Matrix reconstructed = (projected * basis.transpose()).rowwise() + mean;

  FlowProjection out;
  out.reprojection_error = (reconstructed - all).cwiseAbs().maxCoeff();
  out.statistical_2d = projected.topRows(k_classes);
  out.synthetic_2d = projected.middleRows(statistical.rows(), k_classes);
  out.origin_2d = (-mean) * basis;
  out.per_class_cosine = rowwise_cosine(statistical, synthetic);
  out.mean_cosine = out.per_class_cosine.mean();
  out.csv = "class,stat_x,stat_y,syn_x,syn_y,cosine\n";
  for (int c = 0; c < k_classes; ++c) {
    out.csv += std::to_string(c) + "," + format_double(out.statistical_2d(c, 0)) + "," +
               format_double(out.statistical_2d(c, 1)) + "," + format_double(out.synthetic_2d(c, 0)) + "," +
               format_double(out.synthetic_2d(c, 1)) + "," + format_double(out.per_class_cosine(c)) + "\n";
  }
  return out;
}

namespace {

// 3x5 glyphs, rows top to bottom, 3 bits per row (MSB = left).
constexpr std::array<std::array<int, 5>, 14> kGlyphs = {{
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
    {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
    {0, 0, 0, 0, 2},   // '.'
    {7, 4, 4, 4, 7},   // 'C'
    {7, 5, 5, 5, 7},   // 'O'
    {7, 4, 7, 1, 7},   // 'S'
}};

class Canvas {
 public:
  Canvas(std::size_t size) : size_(size), pixels_(3 * size * size, 1.0) {}

  void set(long x, long y, const std::array<double, 3>& rgb) {
    if (x < 0 || y < 0 || x >= static_cast<long>(size_) || y >= static_cast<long>(size_)) return;
    for (std::size_t c = 0; c < 3; ++c) pixels_[c * size_ * size_ + static_cast<std::size_t>(y) * size_ + static_cast<std::size_t>(x)] = rgb[c];
  }

  void line(double x0, double y0, double x1, double y1, const std::array<double, 3>& rgb, bool dotted = false) {
    const double len = std::hypot(x1 - x0, y1 - y0);
    const int steps = std::max(1, static_cast<int>(len * 2));
    for (int s = 0; s <= steps; ++s) {
      if (dotted && (s / 6) % 2 == 1) continue;
      const double t = static_cast<double>(s) / steps;
      set(std::lround(x0 + t * (x1 - x0)), std::lround(y0 + t * (y1 - y0)), rgb);
    }
  }

  void arrow(double x0, double y0, double x1, double y1, const std::array<double, 3>& rgb, bool dotted) {
    line(x0, y0, x1, y1, rgb, dotted);
    const double ang = std::atan2(y1 - y0, x1 - x0);
    for (double side : {2.6, -2.6}) line(x1, y1, x1 + 9 * std::cos(ang + side), y1 + 9 * std::sin(ang + side), rgb);
  }

  void text(long x, long y, const std::string& s, int scale) {
    for (char ch : s) {
      int g = -1;
      if (ch >= '0' && ch <= '9') g = ch - '0';
      if (ch == '.') g = 10;
      if (ch == 'C') g = 11;
      if (ch == 'O') g = 12;
      if (ch == 'S') g = 13;
      if (g >= 0) {
        for (int r = 0; r < 5; ++r) {
          for (int b = 0; b < 3; ++b) {
            if (!(kGlyphs[static_cast<std::size_t>(g)][static_cast<std::size_t>(r)] & (4 >> b))) continue;
            for (int dy = 0; dy < scale; ++dy)
              for (int dx = 0; dx < scale; ++dx) set(x + b * scale + dx, y + r * scale + dy, {0, 0, 0});
          }
        }
      }
      x += 4 * scale;
    }
  }

  const std::vector<double>& pixels() const { return pixels_; }

 private:
  std::size_t size_;
  std::vector<double> pixels_;
};

std::array<double, 3> class_color(int c, int k) {
  const double h = static_cast<double>(c) / std::max(k, 1) * 6.0;
  const double f = h - std::floor(h);
  switch (static_cast<int>(h) % 6) {
    case 0: return {0.9, 0.9 * f, 0.1};
    case 1: return {0.9 * (1 - f), 0.8, 0.1};
    case 2: return {0.1, 0.8, 0.9 * f};
    case 3: return {0.1, 0.8 * (1 - f), 0.9};
    case 4: return {0.8 * f, 0.1, 0.9};
    default: return {0.9, 0.1, 0.9 * (1 - f)};
  }
}

}  // namespace

FlowProjection emit_flow_plot(const Matrix& statistical, const Matrix& synthetic, int k_classes,
                              const std::filesystem::path& out_dir) {
  FlowProjection proj = project_flows(statistical, synthetic, k_classes);
  constexpr std::size_t size = 512;
  Canvas canvas(size);
  double extent = 1e-12;
  for (const Matrix* m : {&proj.statistical_2d, &proj.synthetic_2d}) {
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      extent = std::max(extent, ((*m).row(r) - proj.origin_2d).cwiseAbs().maxCoeff());
    }
  }
  const double scale = 0.42 * size / extent;
  auto px = [&](double v, double o) { return size / 2.0 + (v - o) * scale; };
  for (int c = 0; c < k_classes; ++c) {
    const auto color = class_color(c, k_classes);
    canvas.arrow(size / 2.0, size / 2.0, px(proj.statistical_2d(c, 0), proj.origin_2d(0)),
                 size / 2.0 - (proj.statistical_2d(c, 1) - proj.origin_2d(1)) * scale, color, false);
    canvas.arrow(size / 2.0, size / 2.0, px(proj.synthetic_2d(c, 0), proj.origin_2d(0)),
                 size / 2.0 - (proj.synthetic_2d(c, 1) - proj.origin_2d(1)) * scale, color, true);
  }
  canvas.text(12, 12, "COS " + format_fixed(100.0 * proj.mean_cosine, 1), 4);
  write_png(out_dir / "flow.png", canvas.pixels(), {3, size, size});
  write_file_atomic(out_dir / "flow.csv", proj.csv);
  write_file_atomic(out_dir / "cosine_summary.txt",
                    "mean_cosine " + format_double(proj.mean_cosine) + "\nmean_cosine_percent " +
                        format_fixed(100.0 * proj.mean_cosine, 1) + "\nreprojection_error " +
                        format_double(proj.reprojection_error) + "\n");
  return proj;
}

}  // namespace sfm
