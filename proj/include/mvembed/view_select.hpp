#pragma once

// Lloyd k-means with k-means++ seeding, and reduction of a turntable view set
// to k representative views stacked as channels.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mvembed/binary_io.hpp"
#include "mvembed/error.hpp"
#include "mvembed/renderer.hpp"
#include "mvembed/seed.hpp"

namespace mvembed {

/// n points of dimension dim, stored row-major.
struct PointSet {
    std::size_t dim = 0;
    std::vector<double> values;

    std::size_t size() const noexcept { return dim == 0 ? 0 : values.size() / dim; }
    std::span<const double> operator[](std::size_t i) const { return {values.data() + i * dim, dim}; }
};

struct KMeansResult {
    std::vector<std::vector<double>> centroids;
    std::vector<std::size_t> assignments;
    double inertia = 0.0;
    std::vector<double> inertia_history;  // one entry per Lloyd iteration
    std::size_t iterations = 0;
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

} // namespace detail

inline KMeansResult kmeans(const PointSet& points, std::size_t k, std::uint64_t seed, std::size_t max_iters = 100) {
    const std::size_t n = points.size();
    if (k < 1) throw Error("kmeans: k must be at least 1");
    if (n < k) throw Error("kmeans: fewer points (" + std::to_string(n) + ") than clusters (" + std::to_string(k) + ")");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    KMeansResult r;

    // k-means++ seeding
    std::vector<std::size_t> chosen;
    chosen.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    while (chosen.size() < k) {
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            best[i] = std::min(best[i], detail::sq_dist(points[i], points[chosen.back()]));
            total += best[i];
        }
        std::size_t pick = n;
        if (total > 0) {
            const double target = uni(rng) * total;
            double acc = 0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += best[i];
                if (best[i] > 0 && acc >= target) {
                    pick = i;
                    break;
                }
            }
            if (pick == n)
                for (std::size_t i = n; i-- > 0;)
                    if (best[i] > 0) {
                        pick = i;
                        break;
                    }
        } else {
            // every point coincides with a chosen center: take the first unused index
            for (std::size_t i = 0; i < n && pick == n; ++i)
                if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pick = i;
        }
        chosen.push_back(pick);
    }
    for (auto c : chosen) r.centroids.emplace_back(points[c].begin(), points[c].end());

    std::vector<std::size_t> assign(n, k);
    std::vector<std::size_t> counts(k);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        std::vector<std::size_t> next(n);
        for (std::size_t i = 0; i < n; ++i) {
            double d_best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < k; ++j) {
                const double d = detail::sq_dist(points[i], r.centroids[j]);
                if (d < d_best) {
                    d_best = d;
                    next[i] = j;
                }
            }
        }

        // Re-seed empty clusters with the point farthest from its centroid,
        // taken only from clusters that can spare a member.
        std::fill(counts.begin(), counts.end(), 0);
        for (auto a : next) ++counts[a];
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] > 0) continue;
            std::size_t far = n;
            double d_far = -1;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[next[i]] < 2) continue;
                const double d = detail::sq_dist(points[i], r.centroids[next[i]]);
                if (d > d_far) {
                    d_far = d;
                    far = i;
                }
            }
            --counts[next[far]];
            next[far] = j;
            counts[j] = 1;
            r.centroids[j].assign(points[far].begin(), points[far].end());
        }

        const bool converged = next == assign;
        assign = std::move(next);
        ++r.iterations;

        for (auto& c : r.centroids) std::fill(c.begin(), c.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto& c = r.centroids[assign[i]];
            const auto p = points[i];
            for (std::size_t d = 0; d < points.dim; ++d) c[d] += p[d];
        }
        for (std::size_t j = 0; j < k; ++j)
            for (auto& v : r.centroids[j]) v /= static_cast<double>(counts[j]);

        double inertia = 0;
        for (std::size_t i = 0; i < n; ++i) inertia += detail::sq_dist(points[i], r.centroids[assign[i]]);
        r.inertia_history.push_back(inertia);
        if (converged) break;
    }
    r.assignments = std::move(assign);
    r.inertia = r.inertia_history.back();
    return r;
}

struct ViewStack {
    std::string model_id;
    int k = 0;
    int height = 0;
    int width = 0;
    std::vector<float> pixels;  // k * height * width, channel-major
    std::vector<float> source_azimuths;

    std::span<const float> channel(int c) const {
        const auto hw = static_cast<std::size_t>(height) * width;
        return {pixels.data() + c * hw, hw};
    }
    friend bool operator==(const ViewStack&, const ViewStack&) = default;
};

inline std::uint64_t model_seed(const std::string& model_id, std::uint64_t run_seed) {
    return fnv1a(model_id) ^ run_seed;
}

struct Selection {
    ViewStack stack;
    std::vector<std::size_t> view_indices;  // into the source ViewSet, ascending
    KMeansResult clustering;
};

/// Clusters the flattened views and keeps, per cluster, the member closest to
/// its centroid. Channels come out in ascending azimuth.
inline Selection select_representatives_detailed(const ViewSet& vs, int k, std::uint64_t seed,
                                                 std::size_t max_iters = 100) {
    if (k < 1) throw Error("k must be at least 1");
    if (vs.views.size() < static_cast<std::size_t>(k))
        throw Error("view set '" + vs.model_id + "' has fewer views than k");
    const int h = vs.views.front().height, w = vs.views.front().width;
    const auto hw = static_cast<std::size_t>(h) * w;

    PointSet pts;
    pts.dim = hw;
    pts.values.reserve(hw * vs.views.size());
    for (const auto& v : vs.views) {
        if (v.height != h || v.width != w) throw ShapeError("views of '" + vs.model_id + "' differ in size");
        pts.values.insert(pts.values.end(), v.pixels.begin(), v.pixels.end());
    }

    Selection sel;
    sel.clustering = kmeans(pts, static_cast<std::size_t>(k), seed, max_iters);
    for (std::size_t j = 0; j < static_cast<std::size_t>(k); ++j) {
        std::size_t rep = vs.views.size();
        double d_best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < vs.views.size(); ++i) {
            if (sel.clustering.assignments[i] != j) continue;
            const double d = detail::sq_dist(pts[i], sel.clustering.centroids[j]);
            if (d < d_best) {
                d_best = d;
                rep = i;
            }
        }
        sel.view_indices.push_back(rep);
    }
    std::sort(sel.view_indices.begin(), sel.view_indices.end(),
              [&vs](std::size_t a, std::size_t b) { return vs.views[a].azimuth < vs.views[b].azimuth; });

    auto& st = sel.stack;
    st.model_id = vs.model_id;
    st.k = k;
    st.height = h;
    st.width = w;
    st.pixels.reserve(hw * k);
    for (auto i : sel.view_indices) {
        st.pixels.insert(st.pixels.end(), vs.views[i].pixels.begin(), vs.views[i].pixels.end());
        st.source_azimuths.push_back(static_cast<float>(vs.views[i].azimuth));
    }
    return sel;
}

inline ViewStack select_representatives(const ViewSet& vs, int k, std::uint64_t seed, std::size_t max_iters = 100) {
    return select_representatives_detailed(vs, k, seed, max_iters).stack;
}

// ---- MVST files -----------------------------------------------------------

inline void write_stack(const ViewStack& s, std::ostream& out) {
    io::write_magic(out, "MVST");
    io::write_u32(out, static_cast<std::uint32_t>(s.k));
    io::write_u32(out, static_cast<std::uint32_t>(s.height));
    io::write_u32(out, static_cast<std::uint32_t>(s.width));
    for (float p : s.pixels) io::write_f32(out, p);
    for (float a : s.source_azimuths) io::write_f32(out, a);
}

/// The model id is not part of the file; callers pass the id derived from the filename.
inline ViewStack read_stack(std::istream& in, std::string model_id) {
    io::expect_magic(in, "MVST");
    ViewStack s;
    s.model_id = std::move(model_id);
    s.k = static_cast<int>(io::read_u32(in, "MVST k"));
    s.height = static_cast<int>(io::read_u32(in, "MVST height"));
    s.width = static_cast<int>(io::read_u32(in, "MVST width"));
    if (s.k < 1 || s.k > 64 || s.height < 1 || s.height > 4096 || s.width < 1 || s.width > 4096)
        throw FormatError("implausible MVST dimensions");
    s.pixels.resize(static_cast<std::size_t>(s.k) * s.height * s.width);
    for (auto& p : s.pixels) p = io::read_f32(in, "MVST pixels");
    s.source_azimuths.resize(static_cast<std::size_t>(s.k));
    for (auto& a : s.source_azimuths) a = io::read_f32(in, "MVST azimuths");
    return s;
}

inline std::filesystem::path stack_filename(const std::string& model_id) { return model_id + ".mvst"; }

inline void save_stack(const ViewStack& s, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / stack_filename(s.model_id), std::ios::binary);
    if (!out) throw Error("cannot write stack for " + s.model_id);
    write_stack(s, out);
}

inline ViewStack load_stack(const std::filesystem::path& dir, const std::string& model_id) {
    std::ifstream in(dir / stack_filename(model_id), std::ios::binary);
    if (!in) throw Error("missing stack file for " + model_id + " in " + dir.string());
    return read_stack(in, model_id);
}

} // namespace mvembed
