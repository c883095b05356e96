#pragma once

// Orthographic z-buffer rasterizer producing grayscale turntable views.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mvembed/error.hpp"
#include "mvembed/geometry.hpp"

namespace mvembed {

struct Viewpoint {
    double azimuth = 0.0;   // degrees, [0, 360)
    double elevation = 30.0;
    double distance = 2.5;  // recorded only; projection is orthographic
};

struct ViewImage {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;  // row-major, [0, 1], background exactly 0
    double azimuth = 0.0;

    float at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
    friend bool operator==(const ViewImage&, const ViewImage&) = default;
};

struct ViewSet {
    std::string model_id;
    std::vector<ViewImage> views;  // ascending azimuth
};

inline constexpr double kViewportHalfExtent = 1.1;
inline constexpr double kAmbient = 0.2;
inline constexpr int kDefaultResolution = 64;
inline constexpr int kMaxResolution = 256;
inline constexpr int kDefaultViews = 30;
inline constexpr double kDefaultElevation = 30.0;

namespace detail {

struct Camera {
    Vec3 right, up, toward;  // toward: unit vector from origin to the camera
};

inline Camera make_camera(const Viewpoint& vp) {
    const double az = vp.azimuth * std::numbers::pi / 180.0;
    const double el = vp.elevation * std::numbers::pi / 180.0;
    Camera c;
    c.toward = {std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az)};
    // Horizontal right vector; well defined for |elevation| < 90.
    c.right = {std::cos(az), 0.0, -std::sin(az)};
    c.up = cross(c.toward, c.right);
    return c;
}

} // namespace detail

inline ViewImage render_view(const NormalizedMesh& m, const Viewpoint& vp, int resolution = kDefaultResolution) {
    if (resolution <= 0 || resolution % 16 != 0 || resolution > kMaxResolution)
        throw Error("render resolution must be a positive multiple of 16 up to " + std::to_string(kMaxResolution));
    if (!(std::abs(vp.elevation) < 90.0)) throw Error("elevation must lie strictly inside (-90, 90)");

    const auto cam = detail::make_camera(vp);
    const int n = resolution;
    const double scale = n / (2.0 * kViewportHalfExtent);

    ViewImage img;
    img.width = img.height = n;
    img.azimuth = vp.azimuth;
    img.pixels.assign(static_cast<std::size_t>(n) * n, 0.0f);
    std::vector<double> depth(static_cast<std::size_t>(n) * n, -std::numeric_limits<double>::infinity());

    struct P {
        double x, y, z;
    };
    std::vector<P> proj(m.vertices().size());
    for (std::size_t i = 0; i < proj.size(); ++i) {
        const Vec3 v = m.vertices()[i];
        proj[i] = {(dot(v, cam.right) + kViewportHalfExtent) * scale,
                   (kViewportHalfExtent - dot(v, cam.up)) * scale, dot(v, cam.toward)};
    }

    for (const auto& f : m.faces()) {
        const Vec3 a = m.vertices()[f[0]], b = m.vertices()[f[1]], c = m.vertices()[f[2]];
        const Vec3 nrm = cross(b - a, c - a);
        const double len = norm(nrm);
        if (!(len > 0.0)) continue;
        const double shade = kAmbient + (1.0 - kAmbient) * std::abs(dot(nrm, cam.toward)) / len;
        const float intensity = static_cast<float>(std::clamp(shade, 0.0, 1.0));

        const P p0 = proj[f[0]], p1 = proj[f[1]], p2 = proj[f[2]];
        const double area = (p1.x - p0.x) * (p2.y - p0.y) - (p1.y - p0.y) * (p2.x - p0.x);
        if (area == 0.0) continue;
        const double inv_area = 1.0 / area;

        const int x0 = std::max(0, static_cast<int>(std::floor(std::min({p0.x, p1.x, p2.x}))));
        const int x1 = std::min(n - 1, static_cast<int>(std::ceil(std::max({p0.x, p1.x, p2.x}))));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min({p0.y, p1.y, p2.y}))));
        const int y1 = std::min(n - 1, static_cast<int>(std::ceil(std::max({p0.y, p1.y, p2.y}))));

        for (int y = y0; y <= y1; ++y) {
            const double py = y + 0.5;
            for (int x = x0; x <= x1; ++x) {
                const double px = x + 0.5;
                double w0 = ((p2.x - p1.x) * (py - p1.y) - (p2.y - p1.y) * (px - p1.x)) * inv_area;
                double w1 = ((p0.x - p2.x) * (py - p2.y) - (p0.y - p2.y) * (px - p2.x)) * inv_area;
                double w2 = 1.0 - w0 - w1;
                if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
                const double z = w0 * p0.z + w1 * p1.z + w2 * p2.z;
                const auto idx = static_cast<std::size_t>(y) * n + x;
                if (z > depth[idx]) {
                    depth[idx] = z;
                    img.pixels[idx] = intensity;
                }
            }
        }
    }
    return img;
}

inline ViewSet render_turntable(const NormalizedMesh& m, std::string model_id, int n_views = kDefaultViews,
                                int resolution = kDefaultResolution, double elevation = kDefaultElevation) {
    if (n_views < 1) throw Error("n_views must be at least 1");
    ViewSet vs;
    vs.model_id = std::move(model_id);
    vs.views.reserve(static_cast<std::size_t>(n_views));
    const double step = 360.0 / n_views;
    for (int i = 0; i < n_views; ++i) vs.views.push_back(render_view(m, {i * step, elevation, 2.5}, resolution));
    return vs;
}

// ---- PGM (P5, 8-bit) ------------------------------------------------------

inline std::string view_filename(const std::string& model_id, int index) {
    std::ostringstream s;
    s << model_id << "_v" << std::setw(2) << std::setfill('0') << index << ".pgm";
    return s.str();
}

inline void write_pgm(const ViewImage& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> bytes(img.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(img.pixels[i], 0.0f, 1.0f)));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline ViewImage read_pgm(const std::filesystem::path& path, double azimuth = 0.0) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    auto next_token = [&in, &path]() {
        std::string tok;
        char ch;
        while (in.get(ch)) {
            if (ch == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!tok.empty()) break;
                continue;
            }
            tok.push_back(ch);
        }
        if (tok.empty()) throw FormatError("truncated PGM header in " + path.string());
        return tok;
    };
    if (next_token() != "P5") throw FormatError("not a binary PGM: " + path.string());
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w <= 0 || h <= 0 || maxval != 255) throw FormatError("unsupported PGM layout in " + path.string());
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw FormatError("truncated PGM " + path.string());
    ViewImage img;
    img.width = w;
    img.height = h;
    img.azimuth = azimuth;
    img.pixels.resize(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<float>(bytes[i] / 255.0);
    return img;
}

inline void write_viewset(const ViewSet& vs, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < vs.views.size(); ++i)
        write_pgm(vs.views[i], dir / view_filename(vs.model_id, static_cast<int>(i)));
}

inline ViewSet read_viewset(const std::string& model_id, const std::filesystem::path& dir, int n_views) {
    ViewSet vs;
    vs.model_id = model_id;
    const double step = 360.0 / n_views;
    for (int i = 0; i < n_views; ++i) vs.views.push_back(read_pgm(dir / view_filename(model_id, i), i * step));
    return vs;
}

} // namespace mvembed
