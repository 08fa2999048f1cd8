#pragma once

// Stage wiring shared by the CLI and the Python bindings: run configuration
// (INI file + overrides), dataset loading, and one function per pipeline
// stage. Every stage writes a manifest (config, seeds, input checksums,
// outputs) next to its artifacts.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pssl/bm25.hpp"
#include "pssl/log.hpp"
#include "pssl/metrics.hpp"
#include "pssl/mine.hpp"
#include "pssl/model.hpp"
#include "pssl/pretrain.hpp"
#include "pssl/ranker.hpp"
#include "pssl/synth.hpp"

namespace pssl {

inline constexpr const char* kCodeVersion = "0.1.0";

struct RunConfig {
    ModelConfig model;  // vocab_size resolved when a dataset is loaded

    // [ingest]
    double sim_threshold = 0.5;
    std::int64_t max_session_gap = 0;  // seconds; 0 disables the gap rule
    std::int64_t min_count = 1;

    // [mine]
    std::string mine_tasks = "dp,qp,sap,up";
    double entropy_threshold = 1.0;
    std::int64_t sap_per_user = 4;
    std::uint64_t mine_seed = 5;

    PretrainConfig pretrain;
    FinetuneConfig finetune;
    SynthConfig synth;

    // [eval]
    double eval_entropy_threshold = 1.0;

    std::vector<std::string> enabled_tasks() const;
};

RunConfig default_run_config();
RunConfig parse_run_config_ini(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_ini(const RunConfig& cfg);
// key is "section.name"; value uses the same syntax as the INI file.
void apply_config_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Loaded splits re-merged into one sessionized, tokenized log; split
// membership is kept as (user, index) references into the merged event
// lists.
using EventRef = std::pair<std::string, std::size_t>;

struct Dataset {
    Log full;
    Vocabulary vocab;
    std::vector<EventRef> background, train, valid, test;
    Bm25Index index;

    Log subset(const std::vector<const std::vector<EventRef>*>& parts) const;
    const std::vector<EventRef>& split(const std::string& name) const;
};

Dataset load_dataset(const RunConfig& cfg, const std::string& data_dir);

struct StageReport {
    std::map<std::string, std::string> fields;  // printable key/value summary
    std::vector<std::string> outputs;
};

StageReport stage_synth(const RunConfig& cfg, const std::string& out_dir);
StageReport stage_ingest(const RunConfig& cfg, const std::string& events_path,
                         const std::string& docs_path, const std::string& out_dir);
StageReport stage_mine(const RunConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir);
StageReport stage_pretrain(const RunConfig& cfg, const std::string& data_dir,
                           const std::string& pairs_dir, const std::string& out_dir);
// checkpoint_path empty: fresh parameters (the no-pretrain ablation).
StageReport stage_finetune(const RunConfig& cfg, const std::string& data_dir,
                           const std::string& checkpoint_path, const std::string& out_dir);
StageReport stage_rerank(const RunConfig& cfg, const std::string& data_dir,
                         const std::string& checkpoint_path, const std::string& split,
                         const std::string& out_dir);
StageReport stage_evaluate(const RunConfig& cfg, const std::string& run_path,
                           const std::string& qrels_path, const std::string& baseline_run_path,
                           const std::string& queries_path, const std::string& data_dir,
                           const std::string& out_dir);
StageReport stage_analyze(const RunConfig& cfg, const std::string& data_dir,
                          const std::string& checkpoint_path, std::int64_t n_users,
                          std::int64_t n_queries, std::uint64_t seed,
                          const std::string& out_dir);

void write_manifest(const std::string& out_dir, const std::string& stage, const RunConfig& cfg,
                    const std::vector<std::string>& input_paths,
                    const StageReport& report);

void ensure_dir(const std::string& path);

}  // namespace pssl
