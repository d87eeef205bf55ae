// Software rasterizer for the monitor view. 2x2 supersampled coverage,
// painter's order, output quantized to 8-bit levels.
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>

#include "fls/scene.hpp"

namespace fls::scene {

namespace {

using Eigen::Vector2d;
using Rgb = Eigen::Vector3d;

const Rgb kBackground(0.22, 0.22, 0.25);
const Rgb kBoard(0.58, 0.58, 0.56);
const Rgb kPegStem(0.10, 0.45, 0.15);
const Rgb kPegTop(0.25, 0.80, 0.30);
const Rgb kShaft(0.12, 0.12, 0.12);
const Rgb kShadow(0.40, 0.40, 0.39);
const Rgb kObject(0.92, 0.12, 0.10);
const Rgb kLeftTip(0.15, 0.35, 1.00);
const Rgb kRightTip(1.00, 0.85, 0.10);
constexpr double kClosedDim = 0.55;

class Canvas {
 public:
  explicit Canvas(Frame& f) : f_(f) {}

  void clear(const Rgb& c) {
    for (int y = 0; y < Frame::height; ++y)
      for (int x = 0; x < Frame::width; ++x) put(x, y, c, 1.0);
  }

  // inside(px, py) tested at the four sub-pixel centres of each pixel in the box
  void fill(double x0, double y0, double x1, double y1, const Rgb& c, const std::function<bool(double, double)>& inside) {
    const int xa = std::max(0, static_cast<int>(std::floor(x0)));
    const int ya = std::max(0, static_cast<int>(std::floor(y0)));
    const int xb = std::min(Frame::width - 1, static_cast<int>(std::ceil(x1)));
    const int yb = std::min(Frame::height - 1, static_cast<int>(std::ceil(y1)));
    for (int y = ya; y <= yb; ++y) {
      for (int x = xa; x <= xb; ++x) {
        int hits = 0;
        for (double sy : {0.25, 0.75})
          for (double sx : {0.25, 0.75}) hits += inside(x + sx, y + sy) ? 1 : 0;
        if (hits > 0) put(x, y, c, hits / 4.0);
      }
    }
  }

  void disc(const Vector2d& c, double r, const Rgb& col) {
    fill(c.x() - r, c.y() - r, c.x() + r, c.y() + r, col,
         [&](double px, double py) { return (Vector2d(px, py) - c).squaredNorm() <= r * r; });
  }

  void segment(const Vector2d& a, const Vector2d& b, double halfWidth, const Rgb& col) {
    const Vector2d d = b - a;
    const double len2 = std::max(d.squaredNorm(), 1e-12);
    fill(std::min(a.x(), b.x()) - halfWidth, std::min(a.y(), b.y()) - halfWidth, std::max(a.x(), b.x()) + halfWidth,
         std::max(a.y(), b.y()) + halfWidth, col, [&](double px, double py) {
           const Vector2d p(px, py);
           const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
           return (p - (a + t * d)).squaredNorm() <= halfWidth * halfWidth;
         });
  }

  void triangle(const Vector2d& a, const Vector2d& b, const Vector2d& c, const Rgb& col) {
    auto edge = [](const Vector2d& p, const Vector2d& q, double x, double y) {
      return (q.x() - p.x()) * (y - p.y()) - (q.y() - p.y()) * (x - p.x());
    };
    const double area = edge(a, b, c.x(), c.y());
    fill(std::min({a.x(), b.x(), c.x()}), std::min({a.y(), b.y(), c.y()}), std::max({a.x(), b.x(), c.x()}),
         std::max({a.y(), b.y(), c.y()}), col, [&](double x, double y) {
           const double w0 = edge(a, b, x, y), w1 = edge(b, c, x, y), w2 = edge(c, a, x, y);
           return area > 0 ? (w0 >= 0 && w1 >= 0 && w2 >= 0) : (w0 <= 0 && w1 <= 0 && w2 <= 0);
         });
  }

 private:
  void put(int x, int y, const Rgb& c, double cov) {
    for (int k = 0; k < 3; ++k) {
      double& v = f_.at(x, y, k);
      v = cov * c[k] + (1.0 - cov) * v;
    }
  }

  Frame& f_;
};

Vec3 onBoard(const Vec3& p) { return {p.x(), p.y(), 0.0}; }

}  // namespace

Eigen::Vector2d project(const Vec3& p) {
  return {64.0 + 0.75 * (p.x() - 70.0), 60.0 - 0.5 * p.y() - 0.4 * p.z()};
}

Frame render(const SceneState& s, const SceneGeometry& g) {
  Frame f;
  Canvas cv(f);
  cv.clear(kBackground);

  const Vector2d b0 = project(Vec3(g.boardMin.x(), g.boardMin.y(), 0));
  const Vector2d b1 = project(Vec3(g.boardMax.x(), g.boardMax.y(), 0));
  const double bx0 = std::min(b0.x(), b1.x()), bx1 = std::max(b0.x(), b1.x());
  const double by0 = std::min(b0.y(), b1.y()), by1 = std::max(b0.y(), b1.y());
  cv.fill(bx0, by0, bx1, by1, kBoard, [&](double x, double y) { return x >= bx0 && x <= bx1 && y >= by0 && y <= by1; });

  // board shadows under tips and object
  const double objScale = 1.0 + s.object.position.z() / 120.0;
  cv.disc(project(onBoard(s.object.position)), 2.5 * objScale, kShadow);
  for (std::size_t a = 0; a < 2; ++a) cv.disc(project(onBoard(s.forcepTips[a])), 2.0, kShadow);

  for (const auto& peg : s.pegPositions) {
    cv.segment(project(peg), project(peg + Vec3(0, 0, g.pegHeight)), 1.0, kPegStem);
    cv.disc(project(peg + Vec3(0, 0, g.pegHeight)), 2.2, kPegTop);
  }

  for (std::size_t a = 0; a < 2; ++a) {
    const Vec3 dir = (s.ports[a] - s.forcepTips[a]).normalized();
    cv.segment(project(s.forcepTips[a]), project(s.forcepTips[a] + 160.0 * dir), 0.8, kShaft);
  }

  const Vector2d oc = project(s.object.position);
  const double r = 4.5 * objScale;
  cv.triangle(oc + Vector2d(0, -r), oc + Vector2d(-0.9 * r, 0.6 * r), oc + Vector2d(0.9 * r, 0.6 * r), kObject);

  for (Arm a : {Arm::Left, Arm::Right}) {
    const auto i = armIndex(a);
    Rgb c = (a == Arm::Left) ? kLeftTip : kRightTip;
    if (s.grippersClosed[i]) c *= kClosedDim;
    cv.disc(project(s.forcepTips[i]), 2.5, c);
  }

  for (double& v : f.pixels) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return f;
}

std::vector<unsigned char> encodePng(const Frame& f) {
  std::vector<unsigned char> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DomainError("libpng failed encoding a frame");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        auto* v = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(p));
        v->insert(v->end(), data, data + n);
      },
      nullptr);
  png_set_IHDR(png, info, Frame::width, Frame::height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(Frame::width * 3));
  for (int y = 0; y < Frame::height; ++y) {
    for (int x = 0; x < Frame::width; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(x * 3 + c)] = static_cast<png_byte>(std::lround(f.at(x, y, c) * 255.0));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void writePng(const std::filesystem::path& path, const Frame& f) {
  const auto bytes = encodePng(f);
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw DomainError("cannot write " + path.string());
  if (std::fwrite(bytes.data(), 1, bytes.size(), fp.get()) != bytes.size()) throw DomainError("short write to " + path.string());
}

Frame readPng(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw DomainError("cannot read " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DomainError("libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  if (png_get_image_width(png, info) != Frame::width || png_get_image_height(png, info) != Frame::height ||
      png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DomainError(path.string() + " is not a 128x96 8-bit RGB PNG");
  }
  Frame f;
  std::vector<png_byte> row(static_cast<std::size_t>(Frame::width * 3));
  for (int y = 0; y < Frame::height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < Frame::width; ++x)
      for (int c = 0; c < 3; ++c) f.at(x, y, c) = row[static_cast<std::size_t>(x * 3 + c)] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return f;
}

}  // namespace fls::scene
