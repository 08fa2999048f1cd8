// Command-line entry point: synth, ingest, mine-pairs, pretrain, finetune,
// rerank, evaluate, analyze. Configuration comes from an INI file plus
// --set section.key=value overrides; every stage writes a manifest.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "pssl/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

pssl::RunConfig resolve_config(const CommonArgs& args) {
    pssl::RunConfig cfg = args.config_path.empty() ? pssl::default_run_config()
                                                   : pssl::load_run_config(args.config_path);
    for (const auto& o : args.overrides) {
        const std::size_t eq = o.find('=');
        if (eq == std::string::npos) {
            throw pssl::UsageError("--set expects section.key=value, got '" + o + "'");
        }
        pssl::apply_config_override(cfg, o.substr(0, eq), o.substr(eq + 1));
    }
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "INI config file");
    cmd->add_option("--set", args.overrides,
                    "override a config value, e.g. --set pretrain.steps=50");
}

std::string default_data_dir() {
    const char* env = std::getenv("PSSL_DATA_DIR");
    return env != nullptr ? env : "data";
}

void print_report(const pssl::StageReport& report) {
    for (const auto& [k, v] : report.fields) std::cout << k << ": " << v << "\n";
    for (const auto& o : report.outputs) std::cout << "wrote " << o << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"personalized search re-ranking with contrastive pre-training"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string events_path, docs_path, data_dir = default_data_dir();
    std::string pairs_dir, checkpoint, out_dir, split = "test";
    std::string run_path, qrels_path, baseline_path, queries_path, eval_data_dir;
    bool no_pretrain = false;
    std::int64_t n_users = 50, n_queries = 100;
    std::uint64_t analyze_seed = 17;

    auto* synth = app.add_subcommand("synth", "generate a synthetic query log");
    add_common(synth, common);
    synth->add_option("--out", out_dir, "output directory")->required();

    auto* ingest = app.add_subcommand("ingest", "validate, sessionize and split a log");
    add_common(ingest, common);
    ingest->add_option("--events", events_path, "events TSV")->required();
    ingest->add_option("--docs", docs_path, "documents TSV")->required();
    ingest->add_option("--out", out_dir, "output dataset directory")->required();

    std::string mine_tasks_flag;
    auto* mine = app.add_subcommand("mine-pairs", "extract self-supervised training pairs");
    add_common(mine, common);
    mine->add_option("--data", data_dir, "dataset directory (from ingest)");
    mine->add_option("--out", out_dir, "output directory")->required();
    mine->add_option("--tasks", mine_tasks_flag, "comma-separated task list (dp,qp,sap,up)");

    auto* pretrain = app.add_subcommand("pretrain", "stage-one contrastive training");
    add_common(pretrain, common);
    pretrain->add_option("--data", data_dir, "dataset directory");
    pretrain->add_option("--pairs", pairs_dir, "mined pairs directory")->required();
    pretrain->add_option("--out", out_dir, "output directory")->required();

    auto* finetune = app.add_subcommand("finetune", "stage-two ranking fine-tune");
    add_common(finetune, common);
    finetune->add_option("--data", data_dir, "dataset directory");
    finetune->add_option("--checkpoint", checkpoint, "pre-trained checkpoint");
    finetune->add_flag("--no-pretrain", no_pretrain, "start from fresh parameters");
    finetune->add_option("--out", out_dir, "output directory")->required();

    auto* rerank = app.add_subcommand("rerank", "score and re-rank a split");
    add_common(rerank, common);
    rerank->add_option("--data", data_dir, "dataset directory");
    rerank->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    rerank->add_option("--split", split, "background|train|valid|test");
    rerank->add_option("--out", out_dir, "output directory")->required();

    auto* evaluate = app.add_subcommand("evaluate", "compute metrics from run files");
    add_common(evaluate, common);
    evaluate->add_option("--run", run_path, "system run file")->required();
    evaluate->add_option("--qrels", qrels_path, "relevance TSV")->required();
    evaluate->add_option("--baseline-run", baseline_path, "original-ranking run file");
    evaluate->add_option("--queries", queries_path, "qid->query TSV (for entropy buckets)");
    evaluate->add_option("--data", eval_data_dir, "dataset directory (for entropy buckets)");
    evaluate->add_option("--out", out_dir, "output directory")->required();

    auto* analyze = app.add_subcommand("analyze", "dump representation diagnostics");
    add_common(analyze, common);
    analyze->add_option("--data", data_dir, "dataset directory");
    analyze->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    analyze->add_option("--users", n_users, "user sample size");
    analyze->add_option("--queries", n_queries, "query sample size");
    analyze->add_option("--seed", analyze_seed, "sampling seed");
    analyze->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    if (!mine_tasks_flag.empty()) common.overrides.push_back("mine.tasks=" + mine_tasks_flag);

    try {
        const pssl::RunConfig cfg = resolve_config(common);
        pssl::StageReport report;
        if (synth->parsed()) {
            report = pssl::stage_synth(cfg, out_dir);
        } else if (ingest->parsed()) {
            report = pssl::stage_ingest(cfg, events_path, docs_path, out_dir);
        } else if (mine->parsed()) {
            report = pssl::stage_mine(cfg, data_dir, out_dir);
        } else if (pretrain->parsed()) {
            report = pssl::stage_pretrain(cfg, data_dir, pairs_dir, out_dir);
        } else if (finetune->parsed()) {
            if (!no_pretrain && checkpoint.empty()) {
                throw pssl::UsageError("finetune needs --checkpoint or --no-pretrain");
            }
            report = pssl::stage_finetune(cfg, data_dir, no_pretrain ? "" : checkpoint, out_dir);
        } else if (rerank->parsed()) {
            report = pssl::stage_rerank(cfg, data_dir, checkpoint, split, out_dir);
        } else if (evaluate->parsed()) {
            report = pssl::stage_evaluate(cfg, run_path, qrels_path, baseline_path, queries_path,
                                          eval_data_dir, out_dir);
        } else if (analyze->parsed()) {
            report = pssl::stage_analyze(cfg, data_dir, checkpoint, n_users, n_queries,
                                         analyze_seed, out_dir);
        }
        print_report(report);
        return 0;
    } catch (const pssl::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const pssl::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}
