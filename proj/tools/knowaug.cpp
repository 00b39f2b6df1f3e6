// knowaug: medication prediction from EMR code sequences with contrastively
// pretrained ontology and co-occurrence embeddings.
//
// Stage-per-subcommand pipeline with explicit file handoff:
//   gen-synthetic -> build-graphs -> pretrain-onto -> pretrain-rel -> train
//   -> evaluate, plus the ablate / sweep-zeta / encoder-study harnesses.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure. KNOWAUG_OUT sets the default working directory.

#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <knowaug/pipeline.hpp>

namespace {

using namespace knowaug;

std::string default_outdir() {
    const char* env = std::getenv("KNOWAUG_OUT");
    return env && *env ? env : "knowaug_out";
}

struct CommonOpts {
    std::string out = default_outdir();
    std::string config_path;
    std::vector<std::string> overrides;  // section.key=value
    std::string records;
    std::string dx_hierarchy;
    std::string rx_hierarchy;
    std::string variant = "full";
};

Config overlay_config(const CommonOpts& opts) {
    Config cfg = opts.config_path.empty() ? Config() : Config::parse_file(opts.config_path);
    for (const auto& kv : opts.overrides) {
        auto eq = kv.find('=');
        auto dot = kv.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw config_error("bad --set `" + kv + "`; expected section.key=value");
        cfg.set(kv.substr(0, dot), kv.substr(dot + 1, eq - dot - 1), kv.substr(eq + 1));
    }
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool records = true, bool hierarchies = false,
                bool variant = false) {
    cmd->add_option("--out", opts.out, "working directory (default $KNOWAUG_OUT or knowaug_out)");
    cmd->add_option("--config", opts.config_path, "key-value config file");
    cmd->add_option("--set", opts.overrides, "config override section.key=value (repeatable)");
    if (records) cmd->add_option("--records", opts.records, "patient records file (jsonl)")->required();
    if (hierarchies) {
        cmd->add_option("--dx-hierarchy", opts.dx_hierarchy, "diagnosis hierarchy file")->required();
        cmd->add_option("--rx-hierarchy", opts.rx_hierarchy, "medication hierarchy file")->required();
    }
    if (variant)
        cmd->add_option("--variant", opts.variant, "model variant: full, rg-, hg-, hgrg-, r-, rgw-");
}

void print_row(const std::string& label, const MetricRow& row) {
    std::printf("%-12s jaccard %.6f  f1 %.6f  prauc %.6f\n", label.c_str(), row.jaccard, row.f1, row.prauc);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"knowledge-augmented medication prediction pipeline"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string spec_path;
    std::string split_name = "test";
    std::function<void()> action;

    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic rule-driven cohort");
    gen->add_option("--spec", spec_path, "synthetic spec config file")->required();
    add_common(gen, opts, false);
    gen->callback([&] {
        action = [&] {
            pipeline::Workdir wd(opts.out);
            Cohort c = pipeline::gen_synthetic(spec_path, wd);
            std::printf("wrote %zu multi-visit and %zu single-visit patients to %s\n", c.multi_visit.size(),
                        c.single_visit.size(), wd.records().c_str());
        };
    });

    auto* bg = app.add_subcommand("build-graphs", "split the cohort and build the relation graph");
    add_common(bg, opts);
    bg->callback([&] {
        action = [&] {
            RunConfig run = RunConfig::from_config(overlay_config(opts));
            pipeline::Workdir wd(opts.out);
            pipeline::build_graphs(opts.records, run, wd);
            std::printf("wrote %s and %s\n", wd.splits().c_str(), wd.relation_edges().c_str());
        };
    });

    auto* po = app.add_subcommand("pretrain-onto", "contrastive pretraining on the ontology graphs");
    add_common(po, opts, true, true);
    po->callback([&] {
        action = [&] {
            RunConfig run = RunConfig::from_config(overlay_config(opts));
            pipeline::Workdir wd(opts.out);
            pipeline::pretrain_onto(opts.records, opts.dx_hierarchy, opts.rx_hierarchy, run, wd);
            std::printf("wrote %s and %s\n", wd.onto_emb(CodeKind::Diagnosis).c_str(),
                        wd.onto_emb(CodeKind::Medication).c_str());
        };
    });

    auto* pr = app.add_subcommand("pretrain-rel", "contrastive pretraining on the relation graph");
    add_common(pr, opts, true, false, true);
    pr->callback([&] {
        action = [&] {
            RunConfig run = RunConfig::from_config(overlay_config(opts));
            pipeline::Workdir wd(opts.out);
            pipeline::pretrain_rel(opts.records, run, wd, parse_variant(opts.variant));
            std::printf("wrote %s\n", wd.rel_emb(parse_variant(opts.variant)).c_str());
        };
    });

    auto* tr = app.add_subcommand("train", "supervised medication prediction training");
    add_common(tr, opts, true, false, true);
    tr->callback([&] {
        action = [&] {
            RunConfig run = RunConfig::from_config(overlay_config(opts));
            pipeline::Workdir wd(opts.out);
            TrainResult res = pipeline::train_stage(opts.records, run, wd, parse_variant(opts.variant));
            std::printf("best validation jaccard %.6f at epoch %zu\n", res.best_val_jaccard, res.best_epoch);
            print_row("test", res.test);
        };
    });

    auto* ev = app.add_subcommand("evaluate", "evaluate a trained checkpoint on a split");
    add_common(ev, opts, true, false, true);
    ev->add_option("--split", split_name, "split to evaluate: train, validation, test");
    ev->callback([&] {
        action = [&] {
            RunConfig run = RunConfig::from_config(overlay_config(opts));
            pipeline::Workdir wd(opts.out);
            MetricRow row = pipeline::evaluate_stage(opts.records, run, wd, split_name,
                                                     parse_variant(opts.variant));
            print_row(split_name, row);
        };
    });

    auto* ab = app.add_subcommand("ablate", "run one model variant end to end");
    add_common(ab, opts, true, true, true);
    ab->callback([&] {
        action = [&] {
            RunConfig run = RunConfig::from_config(overlay_config(opts));
            pipeline::Workdir wd(opts.out);
            MetricRow row = pipeline::ablate(opts.records, opts.dx_hierarchy, opts.rx_hierarchy, run, wd,
                                             parse_variant(opts.variant));
            print_row(opts.variant, row);
        };
    });

    auto* sz = app.add_subcommand("sweep-zeta", "test metrics across the graph sparsity grid");
    add_common(sz, opts);
    sz->callback([&] {
        action = [&] {
            RunConfig run = RunConfig::from_config(overlay_config(opts));
            pipeline::Workdir wd(opts.out);
            auto rows = pipeline::sweep_zeta(opts.records, run, wd, pipeline::default_zeta_grid());
            for (const auto& [zeta, row] : rows) print_row("zeta " + std::to_string(zeta).substr(0, 4), row);
        };
    });

    auto* es = app.add_subcommand("encoder-study", "test metrics across the encoder grid AC/AA/CC/CA");
    add_common(es, opts, true, true);
    es->callback([&] {
        action = [&] {
            RunConfig run = RunConfig::from_config(overlay_config(opts));
            pipeline::Workdir wd(opts.out);
            auto rows = pipeline::encoder_study(opts.records, opts.dx_hierarchy, opts.rx_hierarchy, run, wd);
            for (const auto& [combo, row] : rows) print_row(combo, row);
        };
    });

    try {
        app.parse(argc, argv);
        action();
        return 0;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
