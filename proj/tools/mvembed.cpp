// mvembed: multi-view shape embedding pipeline driver.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mvembed/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mvembed;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> k;
    std::optional<std::string> kind;
    bool perturbed = false;
    bool desk = false;
    bool paper = false;
    std::string out = "run";
    std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_path, "key=value config file")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "run seed");
    app->add_option("--out", c.out, "run directory")->capture_default_str();
    auto* desk = app->add_flag("--desk", c.desk, "desk-scale preset (default)");
    auto* paper = app->add_flag("--paper-faithful", c.paper, "full-width preset: base 64, batch 100, 50000/20000 iterations");
    desk->excludes(paper);
    app->add_option("--set", c.overrides, "extra key=value overrides");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.paper ? RunConfig::paper_faithful() : RunConfig::desk();
    if (!c.config_path.empty()) {
        std::ifstream in(c.config_path);
        cfg = parse_config(in, cfg);
    }
    for (const auto& kv : c.overrides) cfg = parse_config(kv, cfg);
    if (c.seed) cfg.seed = *c.seed;
    if (c.k) cfg.k = *c.k;
    if (c.kind) cfg.kind = parse_model_kind(*c.kind);
    if (c.perturbed) cfg.perturbed = true;
    validate(cfg);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-view 3D shape embeddings: render, select, train, embed, evaluate"};
    app.require_subcommand(1);
    Common c;

    auto* synth = app.add_subcommand("synth", "generate the synthetic primitive corpus");
    add_common(synth, c);
    std::string manifest_in;
    synth->add_option("--manifest", manifest_in, "import this manifest instead of generating")
        ->check(CLI::ExistingFile);

    auto* render = app.add_subcommand("render", "render turntable views for every manifest model");
    add_common(render, c);
    render->add_flag("--perturbed", c.perturbed, "apply a seeded random rotation before rendering");

    auto* select = app.add_subcommand("select", "cluster views and write k-view stacks");
    add_common(select, c);
    select->add_option("--k", c.k, "views per stack")->check(CLI::Range(1, 360));

    auto* trn = app.add_subcommand("train", "train one model on the train split");
    add_common(trn, c);
    trn->add_option("--k", c.k, "views per stack")->check(CLI::Range(1, 360));
    trn->add_option("--kind", c.kind, "ae, cls or combined")->check(CLI::IsMember({"ae", "cls", "combined"}));

    auto* emb = app.add_subcommand("embed", "embed every model with a trained checkpoint");
    add_common(emb, c);
    emb->add_option("--k", c.k, "views per stack")->check(CLI::Range(1, 360));
    emb->add_option("--kind", c.kind, "ae, cls or combined")->check(CLI::IsMember({"ae", "cls", "combined"}));

    auto* eval = app.add_subcommand("evaluate", "rank and score an embedding corpus");
    add_common(eval, c);
    eval->add_option("--k", c.k, "views per stack")->check(CLI::Range(1, 360));
    eval->add_option("--kind", c.kind, "ae, cls or combined")->check(CLI::IsMember({"ae", "cls", "combined"}));
    bool eval_all = false;
    eval->add_flag("--all", eval_all, "rank over the whole corpus instead of the test split");

    auto* pipe = app.add_subcommand("pipeline", "run every stage for all kinds and k values");
    add_common(pipe, c);
    pipe->add_flag("--perturbed", c.perturbed, "apply a seeded random rotation before rendering");

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = resolve(c);
        if (!manifest_in.empty()) cfg.manifest = manifest_in;
        if (eval_all) cfg.eval_scope = EvalScope::All;
        const RunLayout run{fs::path(c.out)};
        fs::create_directories(run.root);
        echo_config(cfg, run);

        if (synth->parsed()) {
            const auto entries = stage_corpus(cfg, run);
            std::cout << "wrote " << entries.size() << " models to " << run.manifest().string() << '\n';
        } else if (render->parsed()) {
            stage_render(cfg, run);
            std::cout << "rendered views into " << run.views().string() << '\n';
        } else if (select->parsed()) {
            stage_select(cfg, run, cfg.k);
            std::cout << "wrote stacks into " << run.stacks(cfg.k).string() << '\n';
        } else if (trn->parsed()) {
            const auto s = stage_train(cfg, run, cfg.kind, cfg.k);
            std::cout << "trained " << RunLayout::tag(cfg.kind, cfg.k) << ": final loss " << s.final_loss;
            if (s.train_accuracy >= 0)
                std::cout << ", train accuracy " << s.train_accuracy << ", val accuracy " << s.val_accuracy;
            std::cout << '\n';
        } else if (emb->parsed()) {
            stage_embed(cfg, run, cfg.kind, cfg.k);
            std::cout << "wrote " << run.embedding(cfg.kind, cfg.k).string() << '\n';
        } else if (eval->parsed()) {
            const auto ev = stage_evaluate(cfg, run, cfg.kind, cfg.k);
            write_table({{display_name(cfg.kind), cfg.k, ev.report}}, std::cout);
            if (!ev.report.skipped.empty())
                std::cout << "skipped " << ev.report.skipped.size() << " singleton-class queries\n";
            if (ev.warnings.zero_norm)
                std::cout << "warning: " << ev.warnings.zero_norm << " zero-norm comparisons\n";
        } else if (pipe->parsed()) {
            const auto rows = run_pipeline(cfg, run, &std::cerr);
            write_table(rows, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
