#pragma once

// Manifests, stratified splits and a synthetic primitive-shape corpus.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mvembed/error.hpp"
#include "mvembed/geometry.hpp"
#include "mvembed/seed.hpp"

namespace mvembed {

enum class Split { Train, Val, Test };

inline std::string to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw FormatError("unknown split '" + s + "' (expected train, val or test)");
}

struct ManifestEntry {
    std::string model_id;
    std::string class_label;
    Split split = Split::Train;
    std::string mesh_path;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

// ---- splits -------------------------------------------------------------------

struct SplitRatios {
    double train = 0.7, val = 0.1, test = 0.2;
};

/// Per-split item counts for a class of n items. Largest-remainder rounding
/// (ties to the earlier split), then an empty positive-ratio split takes one
/// item from the split with the largest surplus if that keeps every split
/// within one item of its exact share.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& r) {
    const std::array<double, 3> ratio{r.train, r.val, r.test};
    std::array<double, 3> exact{};
    std::array<std::size_t, 3> count{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        exact[i] = ratio[i] * static_cast<double>(n);
        count[i] = static_cast<std::size_t>(std::floor(exact[i] + 1e-9));
        assigned += count[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return exact[a] - static_cast<double>(count[a]) > exact[b] - static_cast<double>(count[b]);
    });
    for (std::size_t j = 0; assigned < n; ++j, ++assigned) ++count[order[j % 3]];

    for (int i = 0; i < 3; ++i) {
        if (ratio[i] <= 0 || count[i] > 0) continue;
        int donor = -1;
        double best = 0;
        for (int j = 0; j < 3; ++j) {
            const double surplus = static_cast<double>(count[j]) - exact[j];
            if (j != i && count[j] >= 2 && surplus >= 0 && (donor < 0 || surplus > best)) {
                donor = j;
                best = surplus;
            }
        }
        if (donor >= 0) {
            --count[donor];
            ++count[i];
        }
    }
    return count;
}

/// Class-stratified split: each class is shuffled with its own seeded stream
/// and cut into contiguous train/val/test runs.
inline std::vector<ManifestEntry> split_dataset(std::vector<ManifestEntry> entries, const SplitRatios& r,
                                                std::uint64_t seed) {
    if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    if (r.train < 0 || r.val < 0 || r.test < 0) throw ConfigError("split ratios must be non-negative");
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < entries.size(); ++i) by_class[entries[i].class_label].push_back(i);
    for (auto& [label, idx] : by_class) {
        if (idx.empty()) throw Error("class '" + label + "' is empty");
        std::mt19937_64 rng(derive_seed(seed, "split:" + label));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto c = split_counts(idx.size(), r);
        for (std::size_t j = 0; j < idx.size(); ++j)
            entries[idx[j]].split = j < c[0] ? Split::Train : j < c[0] + c[1] ? Split::Val : Split::Test;
    }
    return entries;
}

// ---- manifest CSV ----------------------------------------------------------------

inline void write_manifest(const std::vector<ManifestEntry>& entries, std::ostream& out) {
    out << "model_id,class_label,split,mesh_path\n";
    for (const auto& e : entries) {
        for (const auto* f : {&e.model_id, &e.class_label, &e.mesh_path})
            if (f->find_first_of(",\n\r") != std::string::npos)
                throw FormatError("manifest field '" + *f + "' contains a comma or newline");
        out << e.model_id << ',' << e.class_label << ',' << to_string(e.split) << ',' << e.mesh_path << '\n';
    }
}

inline std::vector<ManifestEntry> read_manifest(std::istream& in) {
    auto cells = [](const std::string& line) {
        std::vector<std::string> out;
        std::string cell;
        std::istringstream s(line);
        while (std::getline(s, cell, ',')) out.push_back(cell);
        if (!line.empty() && line.back() == ',') out.emplace_back();
        return out;
    };
    auto chomp = [](std::string& l) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
    };
    std::string line;
    if (!std::getline(in, line)) throw FormatError("manifest is empty");
    chomp(line);
    const auto header = cells(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* need : {"model_id", "class_label", "split", "mesh_path"})
        if (!col.contains(need)) throw FormatError(std::string("manifest is missing column '") + need + "'");

    std::vector<ManifestEntry> entries;
    std::set<std::string> seen;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        chomp(line);
        if (line.empty()) continue;
        const auto c = cells(line);
        if (c.size() != header.size())
            throw FormatError("manifest line " + std::to_string(lineno) + " has " + std::to_string(c.size()) +
                              " columns, expected " + std::to_string(header.size()));
        ManifestEntry e{c[col["model_id"]], c[col["class_label"]], parse_split(c[col["split"]]),
                        c[col["mesh_path"]]};
        if (e.model_id.empty()) throw FormatError("manifest line " + std::to_string(lineno) + " has an empty model_id");
        if (!seen.insert(e.model_id).second) throw FormatError("duplicate model_id '" + e.model_id + "' in manifest");
        entries.push_back(std::move(e));
    }
    return entries;
}

inline void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    write_manifest(entries, out);
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    return read_manifest(in);
}

/// Mesh path resolved against the manifest's directory when relative.
inline std::filesystem::path resolve_mesh_path(const ManifestEntry& e, const std::filesystem::path& manifest_path) {
    std::filesystem::path p(e.mesh_path);
    return p.is_absolute() ? p : manifest_path.parent_path() / p;
}

// ---- synthetic primitives ---------------------------------------------------------

inline const std::vector<std::string>& primitive_classes() {
    static const std::vector<std::string> names{"cube", "sphere", "cylinder", "cone", "torus", "pyramid"};
    return names;
}

namespace detail {

constexpr int kSegments = 24;

inline void add_quad(Mesh& m, std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t d) {
    m.faces.push_back({a, b, c});
    m.faces.push_back({a, c, d});
}

inline std::uint32_t add_ring(Mesh& m, double radius, double y) {
    const auto start = static_cast<std::uint32_t>(m.vertices.size());
    for (int i = 0; i < kSegments; ++i) {
        const double t = 2 * std::numbers::pi * i / kSegments;
        m.vertices.push_back({radius * std::cos(t), y, radius * std::sin(t)});
    }
    return start;
}

inline void cap(Mesh& m, std::uint32_t ring, double y) {
    const auto c = static_cast<std::uint32_t>(m.vertices.size());
    m.vertices.push_back({0, y, 0});
    for (std::uint32_t i = 0; i < kSegments; ++i) m.faces.push_back({c, ring + i, ring + (i + 1) % kSegments});
}

inline Mesh make_cube() {
    Mesh m;
    for (int i = 0; i < 8; ++i) m.vertices.push_back({i & 1 ? 1.0 : -1.0, i & 2 ? 1.0 : -1.0, i & 4 ? 1.0 : -1.0});
    add_quad(m, 0, 1, 3, 2);
    add_quad(m, 4, 6, 7, 5);
    add_quad(m, 0, 4, 5, 1);
    add_quad(m, 2, 3, 7, 6);
    add_quad(m, 0, 2, 6, 4);
    add_quad(m, 1, 5, 7, 3);
    return m;
}

inline Mesh make_sphere() {
    Mesh m;
    const int stacks = kSegments / 2;
    m.vertices.push_back({0, 1, 0});
    for (int s = 1; s < stacks; ++s) {
        const double phi = std::numbers::pi * s / stacks;
        add_ring(m, std::sin(phi), std::cos(phi));
    }
    m.vertices.push_back({0, -1, 0});
    const auto bottom = static_cast<std::uint32_t>(m.vertices.size() - 1);
    for (std::uint32_t i = 0; i < kSegments; ++i) m.faces.push_back({0, 1 + (i + 1) % kSegments, 1 + i});
    for (int s = 0; s + 2 < stacks; ++s) {
        const auto a = static_cast<std::uint32_t>(1 + s * kSegments), b = a + kSegments;
        for (std::uint32_t i = 0; i < kSegments; ++i) {
            const auto j = (i + 1) % kSegments;
            add_quad(m, a + i, a + j, b + j, b + i);
        }
    }
    const auto last = static_cast<std::uint32_t>(1 + (stacks - 2) * kSegments);
    for (std::uint32_t i = 0; i < kSegments; ++i) m.faces.push_back({bottom, last + i, last + (i + 1) % kSegments});
    return m;
}

inline Mesh make_cylinder() {
    Mesh m;
    const auto lo = add_ring(m, 1, -1), hi = add_ring(m, 1, 1);
    for (std::uint32_t i = 0; i < kSegments; ++i) {
        const auto j = (i + 1) % kSegments;
        add_quad(m, lo + i, lo + j, hi + j, hi + i);
    }
    cap(m, lo, -1);
    cap(m, hi, 1);
    return m;
}

inline Mesh make_cone() {
    Mesh m;
    const auto ring = add_ring(m, 1, -1);
    const auto apex = static_cast<std::uint32_t>(m.vertices.size());
    m.vertices.push_back({0, 1, 0});
    for (std::uint32_t i = 0; i < kSegments; ++i) m.faces.push_back({apex, ring + (i + 1) % kSegments, ring + i});
    cap(m, ring, -1);
    return m;
}

inline Mesh make_torus() {
    Mesh m;
    const double R = 1.0, r = 0.35;
    const int minor = kSegments / 2;
    for (int i = 0; i < kSegments; ++i) {
        const double u = 2 * std::numbers::pi * i / kSegments;
        for (int j = 0; j < minor; ++j) {
            const double v = 2 * std::numbers::pi * j / minor;
            const double rr = R + r * std::cos(v);
            m.vertices.push_back({rr * std::cos(u), r * std::sin(v), rr * std::sin(u)});
        }
    }
    auto at = [&](int i, int j) { return static_cast<std::uint32_t>((i % kSegments) * minor + j % minor); };
    for (int i = 0; i < kSegments; ++i)
        for (int j = 0; j < minor; ++j) add_quad(m, at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
    return m;
}

inline Mesh make_pyramid() {
    Mesh m;
    m.vertices = {{-1, -1, -1}, {1, -1, -1}, {1, -1, 1}, {-1, -1, 1}, {0, 1, 0}};
    add_quad(m, 0, 1, 2, 3);
    for (std::uint32_t i = 0; i < 4; ++i) m.faces.push_back({4, (i + 1) % 4, i});
    return m;
}

} // namespace detail

/// Unjittered template mesh for a primitive class name.
inline Mesh make_primitive(const std::string& name) {
    if (name == "cube") return detail::make_cube();
    if (name == "sphere") return detail::make_sphere();
    if (name == "cylinder") return detail::make_cylinder();
    if (name == "cone") return detail::make_cone();
    if (name == "torus") return detail::make_torus();
    if (name == "pyramid") return detail::make_pyramid();
    throw ConfigError("unknown primitive class '" + name + "'");
}

struct SynthSpec {
    std::vector<std::string> classes = primitive_classes();
    int instances_per_class = 20;
    std::uint64_t seed = 1;
    double scale_min = 0.7;  // per-axis scale factor range
    double scale_max = 1.3;
    double vertex_noise = 0.02;  // max per-coordinate displacement
    SplitRatios ratios{};
};

inline void validate(const SynthSpec& s) {
    if (s.classes.size() < 2) throw ConfigError("synthetic corpus needs at least 2 classes");
    std::set<std::string> uniq(s.classes.begin(), s.classes.end());
    if (uniq.size() != s.classes.size()) throw ConfigError("synthetic class list has duplicates");
    for (const auto& c : s.classes) make_primitive(c);
    if (s.instances_per_class < 4) throw ConfigError("synthetic corpus needs at least 4 instances per class");
    if (!(s.scale_min > 0) || s.scale_max < s.scale_min) throw ConfigError("bad synthetic scale range");
    if (s.vertex_noise < 0) throw ConfigError("vertex noise must be >= 0");
}

struct SynthModel {
    ManifestEntry entry;
    Mesh mesh;
};

inline std::string synth_id(const std::string& cls, int i) {
    std::ostringstream o;
    o << cls << '_' << std::setw(3) << std::setfill('0') << i;
    return o.str();
}

/// One jittered instance; depends only on (spec.seed, class, index).
inline Mesh synth_instance(const SynthSpec& spec, const std::string& cls, int index) {
    Mesh m = make_primitive(cls);
    std::mt19937_64 rng(derive_seed(spec.seed, "synth:" + synth_id(cls, index)));
    std::uniform_real_distribution<double> scale(spec.scale_min, spec.scale_max);
    std::uniform_real_distribution<double> noise(-1.0, 1.0);
    const double sx = scale(rng), sy = scale(rng), sz = scale(rng);
    for (auto& v : m.vertices) {
        v = {v.x * sx, v.y * sy, v.z * sz};
        const double nx = noise(rng), ny = noise(rng), nz = noise(rng);
        v = v + Vec3{nx, ny, nz} * spec.vertex_noise;
    }
    return m;
}

/// Meshes plus a split manifest; mesh_path is `meshes/<id>.obj`.
inline std::vector<SynthModel> generate_synthetic(const SynthSpec& spec) {
    validate(spec);
    std::vector<SynthModel> out;
    std::vector<ManifestEntry> entries;
    for (const auto& cls : spec.classes)
        for (int i = 0; i < spec.instances_per_class; ++i) {
            const auto id = synth_id(cls, i);
            entries.push_back({id, cls, Split::Train, "meshes/" + id + ".obj"});
            out.push_back({{}, synth_instance(spec, cls, i)});
        }
    entries = split_dataset(std::move(entries), spec.ratios, derive_seed(spec.seed, "split"));
    for (std::size_t i = 0; i < out.size(); ++i) out[i].entry = entries[i];
    return out;
}

/// Writes `<dir>/meshes/*.obj` and `<dir>/manifest.csv`; returns the manifest path.
inline std::filesystem::path write_synthetic(const std::vector<SynthModel>& models, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "meshes");
    std::vector<ManifestEntry> entries;
    for (const auto& m : models) {
        std::ofstream out(dir / m.entry.mesh_path);
        if (!out) throw Error("cannot write " + (dir / m.entry.mesh_path).string());
        write_obj(m.mesh, out);
        entries.push_back(m.entry);
    }
    save_manifest(entries, dir / "manifest.csv");
    return dir / "manifest.csv";
}

} // namespace mvembed
