#pragma once

// File-based pipeline stages over a fixed run-directory layout:
//   <run>/manifest.csv, meshes/, views/<id>/, stacks_k<k>/, checkpoints/,
//   embeddings/, reports/

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mvembed/config.hpp"
#include "mvembed/dataset.hpp"
#include "mvembed/geometry.hpp"
#include "mvembed/metrics.hpp"
#include "mvembed/models.hpp"
#include "mvembed/nn/checkpoint.hpp"
#include "mvembed/renderer.hpp"
#include "mvembed/retrieval.hpp"
#include "mvembed/view_select.hpp"

namespace mvembed {

inline constexpr int kStageVersion = 1;

namespace fs = std::filesystem;

struct RunLayout {
    fs::path root;

    fs::path manifest() const { return root / "manifest.csv"; }
    fs::path config() const { return root / "config.txt"; }
    fs::path meshes() const { return root / "meshes"; }
    fs::path views() const { return root / "views"; }
    fs::path stacks(int k) const { return root / ("stacks_k" + std::to_string(k)); }
    fs::path checkpoints() const { return root / "checkpoints"; }
    fs::path embeddings() const { return root / "embeddings"; }
    fs::path reports() const { return root / "reports"; }

    static std::string tag(ModelKind kind, int k) { return to_string(kind) + "_k" + std::to_string(k); }
    fs::path checkpoint(ModelKind kind, int k) const { return checkpoints() / (tag(kind, k) + ".mvnn"); }
    fs::path embedding(ModelKind kind, int k) const { return embeddings() / (tag(kind, k) + ".mvem"); }
};

// ---- stage bookkeeping -------------------------------------------------------

/// `<artifact>.stage` records which stage and version produced an artifact.
/// `<artifact>.incomplete` exists while the stage is running and is left
/// behind if it fails.
class StageGuard {
public:
    StageGuard(fs::path artifact, std::string stage) : artifact_(std::move(artifact)), stage_(std::move(stage)) {
        fs::create_directories(artifact_.parent_path());
        fs::remove(marker(".stage"));
        std::ofstream(marker(".incomplete")) << "stage=" << stage_ << '\n';
    }
    StageGuard(const StageGuard&) = delete;
    StageGuard& operator=(const StageGuard&) = delete;

    void commit() {
        std::ofstream(marker(".stage")) << "stage=" << stage_ << "\nversion=" << kStageVersion << '\n';
        fs::remove(marker(".incomplete"));
    }

private:
    fs::path marker(const char* ext) const { return fs::path(artifact_.string() + ext); }
    fs::path artifact_;
    std::string stage_;
};

/// Throws unless `artifact` was completed by `stage` at the current version.
inline void require_stage(const fs::path& artifact, const std::string& stage) {
    const fs::path m(artifact.string() + ".stage");
    if (fs::exists(artifact.string() + ".incomplete"))
        throw Error(artifact.string() + " is a partial output of a failed '" + stage + "' stage");
    std::ifstream in(m);
    if (!in) throw Error("missing input " + artifact.string() + "; run the '" + stage + "' stage first");
    std::string line, got_stage;
    int version = -1;
    while (std::getline(in, line)) {
        if (line.rfind("stage=", 0) == 0) got_stage = line.substr(6);
        if (line.rfind("version=", 0) == 0) version = std::stoi(line.substr(8));
    }
    if (got_stage != stage || version != kStageVersion)
        throw Error(artifact.string() + " was produced by stage '" + got_stage + "' version " + std::to_string(version) +
                    ", expected '" + stage + "' version " + std::to_string(kStageVersion));
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first
/// exception is rethrown after all threads finish.
template <class F>
void parallel_for(std::size_t n, int workers, F&& fn) {
    const std::size_t w = std::min<std::size_t>(std::max(workers, 1), n);
    if (w <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < w; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!err) err = std::current_exception();
                    next = n;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

inline void write_text(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    out << s;
}

inline void echo_config(const RunConfig& cfg, const RunLayout& run) { write_text(run.config(), to_text(cfg)); }

/// Sorted distinct class labels; a label's position is its class index.
inline std::vector<std::string> class_names(const std::vector<ManifestEntry>& entries) {
    std::set<std::string> s;
    for (const auto& e : entries) s.insert(e.class_label);
    return {s.begin(), s.end()};
}

inline int class_index(const std::vector<std::string>& names, const std::string& label) {
    const auto it = std::lower_bound(names.begin(), names.end(), label);
    if (it == names.end() || *it != label) throw Error("unknown class label '" + label + "'");
    return static_cast<int>(it - names.begin());
}

// ---- stages -------------------------------------------------------------------

/// Generates the synthetic corpus, or imports an external manifest with its
/// mesh paths made absolute.
inline std::vector<ManifestEntry> stage_corpus(const RunConfig& cfg, const RunLayout& run) {
    StageGuard guard(run.manifest(), "corpus");
    std::vector<ManifestEntry> entries;
    if (cfg.manifest.empty()) {
        const auto models = generate_synthetic(cfg.synth_spec());
        write_synthetic(models, run.root);
        for (const auto& m : models) entries.push_back(m.entry);
    } else {
        const fs::path src(cfg.manifest);
        entries = load_manifest(src);
        for (auto& e : entries) e.mesh_path = fs::absolute(resolve_mesh_path(e, src)).lexically_normal().string();
        save_manifest(entries, run.manifest());
    }
    guard.commit();
    return entries;
}

inline std::vector<ManifestEntry> load_run_manifest(const RunLayout& run) {
    require_stage(run.manifest(), "corpus");
    return load_manifest(run.manifest());
}

inline std::uint64_t perturb_seed(const RunConfig& cfg, const std::string& model_id) {
    return derive_seed(cfg.seed, "perturb:" + model_id);
}

inline void stage_render(const RunConfig& cfg, const RunLayout& run) {
    const auto entries = load_run_manifest(run);
    StageGuard guard(run.views(), "render");
    parallel_for(entries.size(), cfg.workers, [&](std::size_t i) {
        const auto& e = entries[i];
        const auto path = resolve_mesh_path(e, run.manifest());
        std::ifstream in(path);
        if (!in) throw Error("cannot read mesh " + path.string());
        auto mesh = normalize_mesh(parse_obj(in));
        if (cfg.perturbed) mesh = perturb_mesh(mesh, perturb_seed(cfg, e.model_id));
        write_viewset(render_turntable(mesh, e.model_id, cfg.n_views, cfg.resolution, cfg.elevation),
                      run.views() / e.model_id);
    });
    write_text(run.views() / "views.txt", "n_views=" + std::to_string(cfg.n_views) +
                                               "\nresolution=" + std::to_string(cfg.resolution) +
                                               "\nperturbed=" + (cfg.perturbed ? "true" : "false") + '\n');
    guard.commit();
}

inline void stage_select(const RunConfig& cfg, const RunLayout& run, int k) {
    const auto entries = load_run_manifest(run);
    require_stage(run.views(), "render");
    StageGuard guard(run.stacks(k), "select");
    fs::create_directories(run.stacks(k));
    parallel_for(entries.size(), cfg.workers, [&](std::size_t i) {
        const auto& id = entries[i].model_id;
        const auto vs = read_viewset(id, run.views() / id, cfg.n_views);
        save_stack(select_representatives(vs, k, model_seed(id, cfg.seed),
                                          static_cast<std::size_t>(cfg.kmeans_max_iters)),
                   run.stacks(k));
    });
    guard.commit();
}

inline std::vector<ViewStack> load_stacks(const RunLayout& run, int k, const std::vector<ManifestEntry>& entries) {
    require_stage(run.stacks(k), "select");
    std::vector<ViewStack> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(load_stack(run.stacks(k), e.model_id));
    return out;
}

inline void write_loss_csv(const TrainedModel<float>& tm, std::ostream& out) {
    const bool acc = !tm.accuracy_curve.empty();
    out << "iteration,loss" << (acc ? ",accuracy" : "") << '\n' << std::setprecision(9);
    for (std::size_t i = 0; i < tm.loss_curve.size(); ++i) {
        out << i + 1 << ',' << tm.loss_curve[i];
        if (acc) out << ',' << tm.accuracy_curve[i];
        out << '\n';
    }
}

struct TrainSummary {
    double final_loss = 0;
    double train_accuracy = -1;  // classifier kinds only
    double val_accuracy = -1;
};

inline double accuracy(Model<float>& m, const std::vector<ViewStack>& stacks, const std::vector<int>& labels) {
    if (stacks.empty()) return -1;
    const auto pred = predict(m, std::span<const ViewStack>(stacks));
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[i];
    return static_cast<double>(ok) / static_cast<double>(pred.size());
}

/// Trains on the train split and writes checkpoint, config sidecar and loss CSV.
inline TrainSummary stage_train(const RunConfig& cfg, const RunLayout& run, ModelKind kind, int k) {
    const auto entries = load_run_manifest(run);
    const auto names = class_names(entries);
    std::vector<ManifestEntry> train_e, val_e;
    for (const auto& e : entries) {
        if (e.split == Split::Train) train_e.push_back(e);
        if (e.split == Split::Val) val_e.push_back(e);
    }
    if (train_e.empty()) throw Error("train split is empty");
    const auto stacks = load_stacks(run, k, train_e);
    std::vector<int> labels;
    for (const auto& e : train_e) labels.push_back(class_index(names, e.class_label));

    const auto enc = cfg.encoder(k);
    const auto tc = cfg.train_config(kind, k);
    const auto ckpt = run.checkpoint(kind, k);
    StageGuard guard(ckpt, "train");
    auto tm = train<float>(kind, stacks, labels, static_cast<int>(names.size()), tc, enc);
    nn::save_checkpoint(tm.model.params, ckpt);

    TrainSummary sum;
    sum.final_loss = tm.loss_curve.back();
    std::string extra = "classes=" + detail::join(names) + '\n';
    if (has_classifier(kind)) {
        sum.train_accuracy = accuracy(tm.model, stacks, labels);
        std::vector<int> vl;
        for (const auto& e : val_e) vl.push_back(class_index(names, e.class_label));
        sum.val_accuracy = val_e.empty() ? -1 : accuracy(tm.model, load_stacks(run, k, val_e), vl);
        extra += "train_accuracy=" + detail::fmt_double(sum.train_accuracy) +
                 "\nval_accuracy=" + detail::fmt_double(sum.val_accuracy) + '\n';
    }
    write_text(fs::path(ckpt.string() + ".cfg"), to_text(tc, enc, kind) + extra);
    std::ostringstream loss;
    write_loss_csv(tm, loss);
    write_text(run.reports() / ("loss_" + RunLayout::tag(kind, k) + ".csv"), loss.str());
    guard.commit();
    return sum;
}

/// Embeds every corpus model with a trained checkpoint.
inline void stage_embed(const RunConfig& cfg, const RunLayout& run, ModelKind kind, int k) {
    const auto entries = load_run_manifest(run);
    const auto ckpt = run.checkpoint(kind, k);
    require_stage(ckpt, "train");
    auto model = model_from_params(nn::load_checkpoint<float>(ckpt));
    if (model.kind != kind) throw Error(ckpt.string() + " holds a " + to_string(model.kind) + " model");
    const auto stacks = load_stacks(run, k, entries);
    std::vector<Embedding> embs(stacks.size());
    parallel_for(stacks.size(), cfg.workers, [&](std::size_t i) { embs[i] = embed(model, stacks[i]); });
    EmbeddingIndex index;
    for (std::size_t i = 0; i < embs.size(); ++i) index.add(std::move(embs[i]), entries[i].class_label);
    const auto out = run.embedding(kind, k);
    StageGuard guard(out, "embed");
    save_corpus(index, out);
    guard.commit();
}

/// Restricts a corpus to the models of the requested scope.
inline EmbeddingIndex scoped_index(const EmbeddingIndex& all, const std::vector<ManifestEntry>& entries,
                                   EvalScope scope) {
    if (scope == EvalScope::All) return all;
    EmbeddingIndex out;
    for (const auto& e : entries)
        if (e.split == Split::Test) {
            const auto& item = all.at(e.model_id);
            out.add(item.embedding, item.label);
        }
    if (out.size() == 0) throw Error("test split is empty");
    return out;
}

inline Evaluation stage_evaluate(const RunConfig& cfg, const RunLayout& run, ModelKind kind, int k) {
    const auto entries = load_run_manifest(run);
    const auto src = run.embedding(kind, k);
    require_stage(src, "embed");
    const auto index = scoped_index(load_corpus(src), entries, cfg.eval_scope);
    auto ev = evaluate_corpus(index);
    const auto tag = RunLayout::tag(kind, k);
    std::ostringstream ranked, per_class, table;
    write_ranked_csv(ev.ranked, ranked);
    write_per_class_csv(ev.report, per_class);
    write_table({{display_name(kind), k, ev.report}}, table);
    write_text(run.reports() / ("ranked_" + tag + ".csv"), ranked.str());
    write_text(run.reports() / ("classes_" + tag + ".csv"), per_class.str());
    std::ostringstream meta;
    meta << "queries=" << ev.report.queries << "\nskipped=" << detail::join(ev.report.skipped)
         << "\nzero_norm_warnings=" << ev.warnings.zero_norm << '\n';
    write_text(run.reports() / ("metrics_" + tag + ".txt"), table.str() + meta.str());
    return ev;
}

inline std::vector<ModelKind> all_kinds() {
    return {ModelKind::Autoencoder, ModelKind::Classification, ModelKind::Combined};
}

/// All stages for every kind and k in cfg.k_values; writes reports/table.txt
/// and reports/table.csv and returns the rows (kind-major, then k).
inline std::vector<TableRow> run_pipeline(const RunConfig& cfg, const RunLayout& run, std::ostream* log = nullptr) {
    validate(cfg);
    auto say = [&](const std::string& s) {
        if (log) *log << s << std::endl;
    };
    fs::create_directories(run.root);
    echo_config(cfg, run);
    stage_corpus(cfg, run);
    say("corpus ready");
    stage_render(cfg, run);
    say("rendered views");
    for (int k : cfg.k_values) stage_select(cfg, run, k);
    say("selected view stacks");
    std::vector<TableRow> rows;
    for (auto kind : all_kinds())
        for (int k : cfg.k_values) {
            const auto s = stage_train(cfg, run, kind, k);
            stage_embed(cfg, run, kind, k);
            const auto ev = stage_evaluate(cfg, run, kind, k);
            rows.push_back({display_name(kind), k, ev.report});
            std::ostringstream m;
            m << RunLayout::tag(kind, k) << ": final loss " << s.final_loss;
            if (s.train_accuracy >= 0) m << ", train acc " << s.train_accuracy;
            m << ", micro MAP " << ev.report.micro_map;
            say(m.str());
        }
    std::ostringstream txt, csv;
    write_table(rows, txt);
    write_table_csv(rows, csv);
    write_text(run.reports() / "table.txt", txt.str());
    write_text(run.reports() / "table.csv", csv.str());
    return rows;
}

} // namespace mvembed
