#pragma once

// Triangle meshes: an OBJ subset reader/writer, canonical normalization and
// seeded random rotations.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mvembed/error.hpp"

namespace mvembed {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return a * s; }
    friend constexpr bool operator==(Vec3, Vec3) = default;
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) { return a * (1.0 / norm(a)); }

using Face = std::array<std::uint32_t, 3>;

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;

    friend bool operator==(const Mesh&, const Mesh&) = default;
};

/// Throws ParseError when a Mesh invariant is violated.
inline void validate(const Mesh& m) {
    if (m.vertices.empty()) throw ParseError("mesh has no vertices");
    if (m.faces.empty()) throw ParseError("mesh has no faces");
    for (const auto& v : m.vertices)
        if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z))
            throw ParseError("mesh has a non-finite vertex coordinate");
    for (const auto& f : m.faces)
        for (auto i : f)
            if (i >= m.vertices.size()) throw ParseError("face index out of range");
}

/// A mesh centered on its vertex centroid and scaled so the farthest vertex
/// lies on the unit sphere. Only constructible through normalize_mesh or
/// perturb_mesh.
class NormalizedMesh {
public:
    const Mesh& mesh() const noexcept { return mesh_; }
    const std::vector<Vec3>& vertices() const noexcept { return mesh_.vertices; }
    const std::vector<Face>& faces() const noexcept { return mesh_.faces; }

private:
    explicit NormalizedMesh(Mesh m) : mesh_(std::move(m)) {}
    Mesh mesh_;

    friend NormalizedMesh normalize_mesh(const Mesh& m);
    friend NormalizedMesh perturb_mesh(const NormalizedMesh& m, std::uint64_t seed);
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

inline double parse_double(std::string_view tok, std::size_t line) {
    double v = 0;
    auto first = tok.data();
    if (!tok.empty() && tok.front() == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(v))
        throw ParseError("line " + std::to_string(line) + ": malformed number '" + std::string(tok) + "'");
    return v;
}

inline std::uint32_t resolve_index(std::string_view tok, std::size_t vertex_count, std::size_t line) {
    auto slash = tok.find('/');
    auto head = tok.substr(0, slash);
    long long idx = 0;
    auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), idx);
    if (ec != std::errc() || ptr != head.data() + head.size() || head.empty())
        throw ParseError("line " + std::to_string(line) + ": malformed face index '" + std::string(tok) + "'");
    const auto n = static_cast<long long>(vertex_count);
    long long resolved = 0;
    if (idx > 0)
        resolved = idx - 1;
    else if (idx < 0)
        resolved = n + idx;
    else
        throw ParseError("line " + std::to_string(line) + ": face index 0 is invalid");
    if (resolved < 0 || resolved >= n)
        throw ParseError("line " + std::to_string(line) + ": face index " + std::to_string(idx) + " out of range");
    return static_cast<std::uint32_t>(resolved);
}

} // namespace detail

/// Reads `v` and `f` records; every other record type is skipped. Polygons are
/// fan-triangulated around their first corner.
inline Mesh parse_obj(std::istream& in) {
    Mesh m;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        auto line = detail::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        auto tok = detail::split_ws(line);
        if (tok[0] == "v") {
            if (tok.size() < 4)
                throw ParseError("line " + std::to_string(line_no) + ": vertex needs 3 coordinates");
            m.vertices.push_back({detail::parse_double(tok[1], line_no), detail::parse_double(tok[2], line_no),
                                  detail::parse_double(tok[3], line_no)});
        } else if (tok[0] == "f") {
            if (tok.size() < 4)
                throw ParseError("line " + std::to_string(line_no) + ": face needs at least 3 indices");
            std::vector<std::uint32_t> idx;
            idx.reserve(tok.size() - 1);
            for (std::size_t i = 1; i < tok.size(); ++i)
                idx.push_back(detail::resolve_index(tok[i], m.vertices.size(), line_no));
            for (std::size_t i = 1; i + 1 < idx.size(); ++i) m.faces.push_back({idx[0], idx[i], idx[i + 1]});
        }
    }
    if (m.faces.empty()) throw ParseError("OBJ contains no faces");
    validate(m);
    return m;
}

inline Mesh parse_obj(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse_obj(in);
}

/// Writes the mesh with round-trip precision in the subset parse_obj reads.
inline void write_obj(const Mesh& m, std::ostream& out) {
    out << std::setprecision(17);
    for (const auto& v : m.vertices) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
    for (const auto& f : m.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

inline Vec3 centroid(const std::vector<Vec3>& vs) {
    Vec3 c;
    for (const auto& v : vs) c = c + v;
    return c * (1.0 / static_cast<double>(vs.size()));
}

inline double max_radius(const std::vector<Vec3>& vs) {
    double r = 0;
    for (const auto& v : vs) r = std::max(r, norm(v));
    return r;
}

inline NormalizedMesh normalize_mesh(const Mesh& m) {
    validate(m);
    const Vec3 c = centroid(m.vertices);
    Mesh out = m;
    for (auto& v : out.vertices) v = v - c;
    const double r = max_radius(out.vertices);
    if (!(r > 0.0) || r < 1e-300) throw Error("degenerate mesh: all vertices coincide");
    for (auto& v : out.vertices) v = v * (1.0 / r);
    return NormalizedMesh(std::move(out));
}

/// Row-major 3x3 rotation.
using Rotation = std::array<double, 9>;

/// Uniform random rotation: a unit quaternion from four Gaussian deviates
/// (Box-Muller over four uniform deviates).
inline Rotation random_rotation(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double u[4];
    for (auto& x : u) x = uni(rng);
    const double two_pi = 2.0 * std::numbers::pi;
    const double r0 = std::sqrt(-2.0 * std::log(1.0 - u[0]));
    const double r1 = std::sqrt(-2.0 * std::log(1.0 - u[2]));
    double w = r0 * std::cos(two_pi * u[1]);
    double x = r0 * std::sin(two_pi * u[1]);
    double y = r1 * std::cos(two_pi * u[3]);
    double z = r1 * std::sin(two_pi * u[3]);
    double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (n == 0.0) {
        w = 1.0;
        n = 1.0;
    }
    w /= n, x /= n, y /= n, z /= n;
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

inline Vec3 apply(const Rotation& r, Vec3 v) {
    return {r[0] * v.x + r[1] * v.y + r[2] * v.z, r[3] * v.x + r[4] * v.y + r[5] * v.z,
            r[6] * v.x + r[7] * v.y + r[8] * v.z};
}

inline NormalizedMesh perturb_mesh(const NormalizedMesh& m, std::uint64_t seed) {
    const auto rot = random_rotation(seed);
    Mesh out = m.mesh();
    for (auto& v : out.vertices) v = apply(rot, v);
    return NormalizedMesh(std::move(out));
}

} // namespace mvembed
