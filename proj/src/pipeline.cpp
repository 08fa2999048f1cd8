#include "pssl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pssl {

namespace fs = std::filesystem;

std::vector<std::string> RunConfig::enabled_tasks() const {
    std::vector<std::string> out;
    std::istringstream ss(mine_tasks);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty()) continue;
        if (part != "dp" && part != "qp" && part != "sap" && part != "up") {
            throw UsageError("unknown mining task: " + part);
        }
        out.push_back(part);
    }
    return out;
}

RunConfig default_run_config() { return RunConfig{}; }

namespace {

using IniSections = std::map<std::string, std::map<std::string, std::string>>;

IniSections parse_ini(const std::string& text) {
    IniSections sections;
    std::istringstream in(text);
    std::string line, section;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos) continue;
        std::size_t end = line.find_last_not_of(" \t\r");
        std::string s = line.substr(start, end - start + 1);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[' && s.back() == ']') {
            section = s.substr(1, s.size() - 2);
            continue;
        }
        std::size_t eq = s.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        std::string key = s.substr(0, eq);
        std::string value = s.substr(eq + 1);
        const auto trim = [](std::string& t) {
            const std::size_t a = t.find_first_not_of(" \t");
            const std::size_t b = t.find_last_not_of(" \t");
            t = a == std::string::npos ? "" : t.substr(a, b - a + 1);
        };
        trim(key);
        trim(value);
        sections[section][key] = value;
    }
    return sections;
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError("expected a boolean, got '" + v + "'");
}

void apply_one(RunConfig& c, const std::string& section, const std::string& key,
               const std::string& v) {
    const std::string where = section + "." + key;
    try {
        if (section == "model") {
            if (key == "preset") {
                const auto keep_lens = std::tuple{c.model.max_sent_tokens, c.model.max_short,
                                                  c.model.max_long};
                c.model = ModelConfig::from_preset(v);
                std::tie(c.model.max_sent_tokens, c.model.max_short, c.model.max_long) =
                    keep_lens;
            } else if (key == "d_embed") c.model.d_embed = std::stoll(v);
            else if (key == "d_hidden") c.model.d_hidden = std::stoll(v);
            else if (key == "n_heads") c.model.n_heads = std::stoll(v);
            else if (key == "n_layers") c.model.n_layers = std::stoll(v);
            else if (key == "mlp_units") c.model.mlp_units = std::stoll(v);
            else if (key == "max_sent_tokens") c.model.max_sent_tokens = std::stoll(v);
            else if (key == "max_short") c.model.max_short = std::stoll(v);
            else if (key == "max_long") c.model.max_long = std::stoll(v);
            else throw UsageError("unknown config key " + where);
        } else if (section == "ingest") {
            if (key == "sim_threshold") c.sim_threshold = std::stod(v);
            else if (key == "max_session_gap") c.max_session_gap = std::stoll(v);
            else if (key == "min_count") c.min_count = std::stoll(v);
            else throw UsageError("unknown config key " + where);
        } else if (section == "mine") {
            if (key == "tasks") c.mine_tasks = v;
            else if (key == "entropy_threshold") c.entropy_threshold = std::stod(v);
            else if (key == "sap_per_user") c.sap_per_user = std::stoll(v);
            else if (key == "seed") c.mine_seed = std::stoull(v);
            else throw UsageError("unknown config key " + where);
        } else if (section == "pretrain") {
            if (key == "steps") c.pretrain.steps = std::stoll(v);
            else if (key == "batch_size") c.pretrain.batch_size = std::stoll(v);
            else if (key == "lr") c.pretrain.lr = std::stod(v);
            else if (key == "tau") c.pretrain.tau = std::stod(v);
            else if (key == "w_dp") c.pretrain.w_dp = std::stod(v);
            else if (key == "w_qp") c.pretrain.w_qp = std::stod(v);
            else if (key == "w_sap") c.pretrain.w_sap = std::stod(v);
            else if (key == "w_up") c.pretrain.w_up = std::stod(v);
            else if (key == "seed") c.pretrain.seed = std::stoull(v);
            else if (key == "checkpoint_every") c.pretrain.checkpoint_every = std::stoll(v);
            else if (key == "symmetric") c.pretrain.symmetric = parse_bool(v);
            else if (key == "up_negatives") c.pretrain.up_negatives = v;
            else if (key == "aug_ratio") c.pretrain.aug_ratio = std::stod(v);
            else throw UsageError("unknown config key " + where);
        } else if (section == "finetune") {
            if (key == "steps") c.finetune.steps = std::stoll(v);
            else if (key == "lr") c.finetune.lr = std::stod(v);
            else if (key == "events_per_step") c.finetune.events_per_step = std::stoll(v);
            else if (key == "max_pairs_per_event") c.finetune.max_pairs_per_event = std::stoll(v);
            else if (key == "val_every") c.finetune.val_every = std::stoll(v);
            else if (key == "val_sample") c.finetune.val_sample = std::stoll(v);
            else if (key == "seed") c.finetune.seed = std::stoull(v);
            else throw UsageError("unknown config key " + where);
        } else if (section == "synth") {
            if (key == "n_users") c.synth.n_users = std::stoll(v);
            else if (key == "n_topics") c.synth.n_topics = std::stoll(v);
            else if (key == "words_per_topic") c.synth.words_per_topic = std::stoll(v);
            else if (key == "docs_per_topic") c.synth.docs_per_topic = std::stoll(v);
            else if (key == "queries_per_user") c.synth.queries_per_user = std::stoll(v);
            else if (key == "ambiguous_fraction") c.synth.ambiguous_fraction = std::stod(v);
            else if (key == "n_ambiguous_queries") c.synth.n_ambiguous_queries = std::stoll(v);
            else if (key == "amb_docs_early") c.synth.amb_docs_early = std::stoll(v);
            else if (key == "amb_docs_late") c.synth.amb_docs_late = std::stoll(v);
            else if (key == "amb_doc_len") c.synth.amb_doc_len = std::stoll(v);
            else if (key == "doc_len_min") c.synth.doc_len_min = std::stoll(v);
            else if (key == "doc_len_max") c.synth.doc_len_max = std::stoll(v);
            else if (key == "refind_rate") c.synth.refind_rate = std::stod(v);
            else if (key == "multi_click_rate") c.synth.multi_click_rate = std::stod(v);
            else if (key == "offtopic_session_rate") c.synth.offtopic_session_rate = std::stod(v);
            else if (key == "noise_click_rate") c.synth.noise_click_rate = std::stod(v);
            else if (key == "position_bias") c.synth.position_bias = std::stod(v);
            else if (key == "candidates_k") c.synth.candidates_k = std::stoll(v);
            else if (key == "span_weeks") c.synth.span_weeks = std::stoll(v);
            else if (key == "dwell_mode") c.synth.dwell_mode = v;
            else if (key == "dwell_unsat_rate") c.synth.dwell_unsat_rate = std::stod(v);
            else if (key == "seed") c.synth.seed = std::stoull(v);
            else throw UsageError("unknown config key " + where);
        } else if (section == "eval") {
            if (key == "entropy_threshold") c.eval_entropy_threshold = std::stod(v);
            else throw UsageError("unknown config key " + where);
        } else {
            throw UsageError("unknown config section: " + section);
        }
    } catch (const std::invalid_argument&) {
        throw UsageError("config key " + where + ": cannot parse value '" + v + "'");
    } catch (const std::out_of_range&) {
        throw UsageError("config key " + where + ": value out of range '" + v + "'");
    }
}

}  // namespace

RunConfig parse_run_config_ini(const std::string& text) {
    RunConfig c = default_run_config();
    // Presets first so explicit keys in the same file win over them.
    const IniSections sections = parse_ini(text);
    auto model_it = sections.find("model");
    if (model_it != sections.end() && model_it->second.count("preset")) {
        apply_one(c, "model", "preset", model_it->second.at("preset"));
    }
    for (const auto& [section, kv] : sections) {
        for (const auto& [key, value] : kv) {
            if (section == "model" && key == "preset") continue;
            apply_one(c, section, key, value);
        }
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    return parse_run_config_ini(read_file(path));
}

void apply_config_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    const std::size_t dot = key.find('.');
    if (dot == std::string::npos) {
        throw UsageError("override key must be section.name, got '" + key + "'");
    }
    apply_one(cfg, key.substr(0, dot), key.substr(dot + 1), value);
}

std::string run_config_to_ini(const RunConfig& c) {
    std::ostringstream o;
    o.precision(17);
    o << "[model]\n";
    o << "preset = " << c.model.preset << "\n";
    o << "d_embed = " << c.model.d_embed << "\n";
    o << "d_hidden = " << c.model.d_hidden << "\n";
    o << "n_heads = " << c.model.n_heads << "\n";
    o << "n_layers = " << c.model.n_layers << "\n";
    o << "mlp_units = " << c.model.mlp_units << "\n";
    o << "max_sent_tokens = " << c.model.max_sent_tokens << "\n";
    o << "max_short = " << c.model.max_short << "\n";
    o << "max_long = " << c.model.max_long << "\n";
    o << "\n[ingest]\n";
    o << "sim_threshold = " << c.sim_threshold << "\n";
    o << "max_session_gap = " << c.max_session_gap << "\n";
    o << "min_count = " << c.min_count << "\n";
    o << "\n[mine]\n";
    o << "tasks = " << c.mine_tasks << "\n";
    o << "entropy_threshold = " << c.entropy_threshold << "\n";
    o << "sap_per_user = " << c.sap_per_user << "\n";
    o << "seed = " << c.mine_seed << "\n";
    o << "\n[pretrain]\n";
    o << "steps = " << c.pretrain.steps << "\n";
    o << "batch_size = " << c.pretrain.batch_size << "\n";
    o << "lr = " << c.pretrain.lr << "\n";
    o << "tau = " << c.pretrain.tau << "\n";
    o << "w_dp = " << c.pretrain.w_dp << "\n";
    o << "w_qp = " << c.pretrain.w_qp << "\n";
    o << "w_sap = " << c.pretrain.w_sap << "\n";
    o << "w_up = " << c.pretrain.w_up << "\n";
    o << "seed = " << c.pretrain.seed << "\n";
    o << "checkpoint_every = " << c.pretrain.checkpoint_every << "\n";
    o << "symmetric = " << (c.pretrain.symmetric ? "true" : "false") << "\n";
    o << "up_negatives = " << c.pretrain.up_negatives << "\n";
    o << "aug_ratio = " << c.pretrain.aug_ratio << "\n";
    o << "\n[finetune]\n";
    o << "steps = " << c.finetune.steps << "\n";
    o << "lr = " << c.finetune.lr << "\n";
    o << "events_per_step = " << c.finetune.events_per_step << "\n";
    o << "max_pairs_per_event = " << c.finetune.max_pairs_per_event << "\n";
    o << "val_every = " << c.finetune.val_every << "\n";
    o << "val_sample = " << c.finetune.val_sample << "\n";
    o << "seed = " << c.finetune.seed << "\n";
    o << "\n[synth]\n";
    o << "n_users = " << c.synth.n_users << "\n";
    o << "n_topics = " << c.synth.n_topics << "\n";
    o << "words_per_topic = " << c.synth.words_per_topic << "\n";
    o << "docs_per_topic = " << c.synth.docs_per_topic << "\n";
    o << "queries_per_user = " << c.synth.queries_per_user << "\n";
    o << "ambiguous_fraction = " << c.synth.ambiguous_fraction << "\n";
    o << "n_ambiguous_queries = " << c.synth.n_ambiguous_queries << "\n";
    o << "amb_docs_early = " << c.synth.amb_docs_early << "\n";
    o << "amb_docs_late = " << c.synth.amb_docs_late << "\n";
    o << "amb_doc_len = " << c.synth.amb_doc_len << "\n";
    o << "doc_len_min = " << c.synth.doc_len_min << "\n";
    o << "doc_len_max = " << c.synth.doc_len_max << "\n";
    o << "refind_rate = " << c.synth.refind_rate << "\n";
    o << "multi_click_rate = " << c.synth.multi_click_rate << "\n";
    o << "offtopic_session_rate = " << c.synth.offtopic_session_rate << "\n";
    o << "noise_click_rate = " << c.synth.noise_click_rate << "\n";
    o << "position_bias = " << c.synth.position_bias << "\n";
    o << "candidates_k = " << c.synth.candidates_k << "\n";
    o << "span_weeks = " << c.synth.span_weeks << "\n";
    o << "dwell_mode = " << c.synth.dwell_mode << "\n";
    o << "dwell_unsat_rate = " << c.synth.dwell_unsat_rate << "\n";
    o << "seed = " << c.synth.seed << "\n";
    o << "\n[eval]\n";
    o << "entropy_threshold = " << c.eval_entropy_threshold << "\n";
    return o.str();
}

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw DataError("cannot create directory " + path + ": " + ec.message());
}

void write_manifest(const std::string& out_dir, const std::string& stage, const RunConfig& cfg,
                    const std::vector<std::string>& input_paths, const StageReport& report) {
    nlohmann::json j;
    j["stage"] = stage;
    j["code_version"] = kCodeVersion;
    j["config_ini"] = run_config_to_ini(cfg);
    nlohmann::json inputs = nlohmann::json::object();
    for (const auto& p : input_paths) {
        inputs[p] = crc32_file(p);
    }
    j["input_crc32"] = inputs;
    j["outputs"] = report.outputs;
    nlohmann::json fields = nlohmann::json::object();
    for (const auto& [k, v] : report.fields) fields[k] = v;
    j["summary"] = fields;
    write_file(out_dir + "/manifest.json", j.dump(2) + "\n");
}

Log Dataset::subset(const std::vector<const std::vector<EventRef>*>& parts) const {
    Log out;
    out.corpus = full.corpus;
    std::map<std::string, std::set<std::size_t>> keep;
    for (const auto* part : parts) {
        for (const auto& [user, idx] : *part) keep[user].insert(idx);
    }
    for (const auto& [user, idxs] : keep) {
        const auto& evs = full.events.at(user);
        auto& dst = out.events[user];
        for (std::size_t idx : idxs) dst.push_back(evs[idx]);
        out.report.n_events += static_cast<std::int64_t>(idxs.size());
    }
    out.report.n_documents = static_cast<std::int64_t>(out.corpus.size());
    return out;
}

const std::vector<EventRef>& Dataset::split(const std::string& name) const {
    if (name == "background") return background;
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw UsageError("unknown split: " + name + " (expected background/train/valid/test)");
}

Dataset load_dataset(const RunConfig& cfg, const std::string& data_dir) {
    Dataset ds;
    const std::string docs = data_dir + "/docs.tsv";
    struct Part {
        const char* name;
        std::vector<EventRef>* refs;
    };
    std::vector<Log> parts;
    std::vector<Part> wanted = {{"background", &ds.background},
                                {"train", &ds.train},
                                {"valid", &ds.valid},
                                {"test", &ds.test}};
    // Membership by event key; sessions are then recomputed on the merged
    // per-user streams so boundaries do not depend on the file split.
    std::map<std::tuple<std::string, std::int64_t, std::string>, int> membership;
    for (std::size_t p = 0; p < wanted.size(); ++p) {
        const std::string path = data_dir + "/" + wanted[p].name + ".tsv";
        if (!fs::exists(path)) {
            if (p < 2) throw DataError("dataset " + data_dir + " misses " + path);
            parts.emplace_back();
            continue;
        }
        parts.push_back(ingest_log(path, docs));
        for (const auto& [user, evs] : parts.back().events) {
            for (const auto& e : evs) {
                membership[{user, e.timestamp, e.query}] = static_cast<int>(p);
            }
        }
    }
    std::vector<const Log*> part_ptrs;
    for (const auto& l : parts) part_ptrs.push_back(&l);
    ds.full = merge_logs(part_ptrs);
    sessionize(ds.full, cfg.sim_threshold, cfg.max_session_gap);
    ds.vocab = Vocabulary::load(data_dir + "/vocab.tsv");
    tokenize_with(ds.full, ds.vocab);
    for (const auto& [user, evs] : ds.full.events) {
        for (std::size_t i = 0; i < evs.size(); ++i) {
            auto it = membership.find({user, evs[i].timestamp, evs[i].query});
            if (it == membership.end()) throw InternalError("split membership lost");
            wanted[static_cast<std::size_t>(it->second)].refs->emplace_back(user, i);
        }
    }
    ds.index = Bm25Index(ds.full.corpus);
    return ds;
}

StageReport stage_synth(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const std::string events = out_dir + "/events.tsv";
    const std::string docs = out_dir + "/docs.tsv";
    const std::string truth = out_dir + "/truth.tsv";
    const SynthStats stats = generate_to_files(cfg.synth, events, docs, truth);
    StageReport r;
    r.outputs = {events, docs, truth};
    r.fields["events"] = std::to_string(stats.n_events);
    r.fields["ambiguous_events"] = std::to_string(stats.n_ambiguous_events);
    r.fields["multi_click_events"] = std::to_string(stats.n_multi_click_events);
    r.fields["refind_events"] = std::to_string(stats.n_refind_events);
    write_manifest(out_dir, "synth", cfg, {}, r);
    return r;
}

StageReport stage_ingest(const RunConfig& cfg, const std::string& events_path,
                         const std::string& docs_path, const std::string& out_dir) {
    ensure_dir(out_dir);
    Log log = ingest_log(events_path, docs_path);
    sessionize(log, cfg.sim_threshold, cfg.max_session_gap);
    SplitResult split = temporal_split(log);
    const Vocabulary vocab = build_vocab(split.background, split.train, cfg.min_count);

    emit_log(split.background, out_dir + "/background.tsv", out_dir + "/docs.tsv");
    emit_log(split.train, out_dir + "/train.tsv", out_dir + "/docs.tsv");
    if (split.valid.report.n_events > 0) {
        emit_log(split.valid, out_dir + "/valid.tsv", out_dir + "/docs.tsv");
    }
    if (split.test.report.n_events > 0) {
        emit_log(split.test, out_dir + "/test.tsv", out_dir + "/docs.tsv");
    }
    vocab.save(out_dir + "/vocab.tsv");

    const DatasetStats stats = log_stats(log);
    std::ostringstream stats_csv;
    stats_csv.precision(17);
    stats_csv << "n_users,n_queries,n_sessions,avg_query_length,avg_clicks_per_query\n"
              << stats.n_users << ',' << stats.n_queries << ',' << stats.n_sessions << ','
              << stats.avg_query_length << ',' << stats.avg_clicks_per_query << '\n';
    write_file(out_dir + "/stats.csv", stats_csv.str());

    StageReport r;
    r.outputs = {out_dir + "/background.tsv", out_dir + "/train.tsv", out_dir + "/docs.tsv",
                 out_dir + "/vocab.tsv", out_dir + "/stats.csv"};
    r.fields["events"] = std::to_string(log.report.n_events);
    r.fields["documents"] = std::to_string(log.report.n_documents);
    r.fields["dropped_lines"] = std::to_string(log.report.n_dropped_lines);
    r.fields["dropped_events"] = std::to_string(log.report.n_dropped_events);
    r.fields["removed_users"] = std::to_string(split.removed_users);
    r.fields["background_events"] = std::to_string(split.background.report.n_events);
    r.fields["train_events"] = std::to_string(split.train.report.n_events);
    r.fields["valid_events"] = std::to_string(split.valid.report.n_events);
    r.fields["test_events"] = std::to_string(split.test.report.n_events);
    r.fields["vocab_size"] = std::to_string(vocab.size());
    write_manifest(out_dir, "ingest", cfg, {events_path, docs_path}, r);
    return r;
}

StageReport stage_mine(const RunConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir) {
    ensure_dir(out_dir);
    const Dataset ds = load_dataset(cfg, data_dir);
    const Log mining_log = ds.subset({&ds.background, &ds.train});

    StageReport r;
    const auto tasks = cfg.enabled_tasks();
    const auto enabled = [&](const char* t) {
        return std::find(tasks.begin(), tasks.end(), t) != tasks.end();
    };
    if (enabled("dp")) {
        const auto dp = mine_document_pairs(mining_log);
        save_doc_pairs(dp, out_dir + "/dp.tsv");
        r.outputs.push_back(out_dir + "/dp.tsv");
        r.fields["dp_pairs"] = std::to_string(dp.size());
    }
    if (enabled("qp")) {
        const auto qp = mine_query_pairs(mining_log);
        save_query_pairs(qp, out_dir + "/qp.tsv");
        r.outputs.push_back(out_dir + "/qp.tsv");
        r.fields["qp_pairs"] = std::to_string(qp.size());
    }
    if (enabled("sap")) {
        const auto sap = mine_sap_instances(mining_log,
                                            static_cast<std::size_t>(cfg.sap_per_user),
                                            cfg.mine_seed);
        save_sap_instances(sap, out_dir + "/sap.tsv");
        r.outputs.push_back(out_dir + "/sap.tsv");
        r.fields["sap_instances"] = std::to_string(sap.size());
    }
    if (enabled("up")) {
        const auto up = mine_user_pairs(mining_log, cfg.entropy_threshold,
                                        static_cast<std::size_t>(cfg.model.max_long),
                                        static_cast<std::size_t>(cfg.model.max_short));
        save_user_pairs(up, out_dir + "/up.tsv");
        r.outputs.push_back(out_dir + "/up.tsv");
        r.fields["up_pairs"] = std::to_string(up.size());
    }
    write_manifest(out_dir, "mine-pairs", cfg,
                   {data_dir + "/background.tsv", data_dir + "/train.tsv",
                    data_dir + "/docs.tsv"},
                   r);
    return r;
}

namespace {

PretrainData load_pretrain_data(const RunConfig& cfg, const Dataset& ds, const Log& mining_log,
                                const std::string& pairs_dir) {
    PretrainData data;
    data.log = &mining_log;
    data.vocab = &ds.vocab;
    const auto tasks = cfg.enabled_tasks();
    const auto enabled = [&](const char* t) {
        return std::find(tasks.begin(), tasks.end(), t) != tasks.end();
    };
    if (enabled("dp") && fs::exists(pairs_dir + "/dp.tsv")) {
        data.dp = load_doc_pairs(pairs_dir + "/dp.tsv");
    }
    if (enabled("qp") && fs::exists(pairs_dir + "/qp.tsv")) {
        data.qp = load_query_pairs(pairs_dir + "/qp.tsv");
    }
    if (enabled("sap") && fs::exists(pairs_dir + "/sap.tsv")) {
        data.sap = load_sap_instances(pairs_dir + "/sap.tsv");
    }
    if (enabled("up") && fs::exists(pairs_dir + "/up.tsv")) {
        data.up = load_user_pairs(pairs_dir + "/up.tsv", mining_log,
                                  static_cast<std::size_t>(cfg.model.max_long),
                                  static_cast<std::size_t>(cfg.model.max_short));
    }
    return data;
}

}  // namespace

StageReport stage_pretrain(const RunConfig& cfg, const std::string& data_dir,
                           const std::string& pairs_dir, const std::string& out_dir) {
    ensure_dir(out_dir);
    const Dataset ds = load_dataset(cfg, data_dir);
    const Log mining_log = ds.subset({&ds.background, &ds.train});
    const PretrainData data = load_pretrain_data(cfg, ds, mining_log, pairs_dir);

    ModelConfig mc = cfg.model;
    mc.vocab_size = ds.vocab.size();
    Model model = Model::init(mc, cfg.pretrain.seed);

    const std::string checkpoint = out_dir + "/pretrained.pssl";
    const PretrainResult result = pretrain_run(model, data, cfg.pretrain, checkpoint);
    write_loss_curve(result.curve, out_dir + "/loss_curve.csv");

    StageReport r;
    r.outputs = {checkpoint, out_dir + "/loss_curve.csv"};
    r.fields["steps"] = std::to_string(result.steps_run);
    r.fields["dp_pairs"] = std::to_string(data.dp.size());
    r.fields["qp_pairs"] = std::to_string(data.qp.size());
    r.fields["sap_instances"] = std::to_string(data.sap.size());
    r.fields["up_pairs"] = std::to_string(data.up.size());
    for (std::size_t i = 0; i < result.warnings.size(); ++i) {
        r.fields["warning_" + std::to_string(i)] = result.warnings[i];
    }
    if (!result.curve.empty()) {
        r.fields["final_total_loss"] = std::to_string(result.curve.back().total);
    }
    write_manifest(out_dir, "pretrain", cfg, {data_dir + "/vocab.tsv"}, r);
    return r;
}

StageReport stage_finetune(const RunConfig& cfg, const std::string& data_dir,
                           const std::string& checkpoint_path, const std::string& out_dir) {
    ensure_dir(out_dir);
    const Dataset ds = load_dataset(cfg, data_dir);

    ModelConfig mc = cfg.model;
    mc.vocab_size = ds.vocab.size();
    Model model = checkpoint_path.empty() ? Model::init(mc, cfg.finetune.seed)
                                          : Model::load_checkpoint(checkpoint_path, mc);

    const FeatureExtractor extractor(ds.full, ds.index, ds.vocab);
    fit_feature_standardization(model, extractor, ds.train);

    const std::string best = out_dir + "/finetuned_best.pssl";
    const std::string last = out_dir + "/finetuned.pssl";
    const FinetuneResult result =
        finetune_run(model, extractor, ds.vocab, ds.train, ds.valid, cfg.finetune, best);
    model.save_checkpoint(last);
    if (ds.valid.empty() || cfg.finetune.val_every <= 0) {
        model.save_checkpoint(best);  // no validation signal; best == last
    }

    std::ostringstream curve;
    curve.precision(17);
    curve << "step,train_loss,valid_map\n";
    for (const auto& p : result.curve) {
        curve << p.step << ',' << p.train_loss << ',';
        if (std::isnan(p.valid_map)) curve << "";
        else curve << p.valid_map;
        curve << '\n';
    }
    write_file(out_dir + "/finetune_curve.csv", curve.str());

    StageReport r;
    r.outputs = {last, best, out_dir + "/finetune_curve.csv"};
    r.fields["train_events"] = std::to_string(result.n_train_events);
    r.fields["best_valid_map"] = std::to_string(result.best_valid_map);
    r.fields["best_step"] = std::to_string(result.best_step);
    std::vector<std::string> inputs = {data_dir + "/vocab.tsv"};
    if (!checkpoint_path.empty()) inputs.push_back(checkpoint_path);
    write_manifest(out_dir, "finetune", cfg, inputs, r);
    return r;
}

StageReport stage_rerank(const RunConfig& cfg, const std::string& data_dir,
                         const std::string& checkpoint_path, const std::string& split,
                         const std::string& out_dir) {
    ensure_dir(out_dir);
    const Dataset ds = load_dataset(cfg, data_dir);
    ModelConfig mc = cfg.model;
    mc.vocab_size = ds.vocab.size();
    Model model = Model::load_checkpoint(checkpoint_path, mc);
    const FeatureExtractor extractor(ds.full, ds.index, ds.vocab);

    const auto& refs = ds.split(split);
    std::vector<RankedList> lists;
    lists.reserve(refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
        std::string qid = "q" + std::to_string(i);
        lists.push_back(rerank_event(model, extractor, ds.vocab, refs[i].first, refs[i].second,
                                     qid));
    }

    write_run_file(lists, out_dir + "/run.tsv", "pssl");
    write_run_file(lists, out_dir + "/orig_run.tsv", "orig", /*use_original_ranks=*/true);
    write_qrels(lists, out_dir + "/qrels.tsv");
    write_queries_file(lists, out_dir + "/queries.tsv");

    StageReport r;
    r.outputs = {out_dir + "/run.tsv", out_dir + "/orig_run.tsv", out_dir + "/qrels.tsv",
                 out_dir + "/queries.tsv"};
    r.fields["events"] = std::to_string(lists.size());
    r.fields["split"] = split;
    write_manifest(out_dir, "rerank", cfg, {checkpoint_path}, r);
    return r;
}

StageReport stage_evaluate(const RunConfig& cfg, const std::string& run_path,
                           const std::string& qrels_path, const std::string& baseline_run_path,
                           const std::string& queries_path, const std::string& data_dir,
                           const std::string& out_dir) {
    ensure_dir(out_dir);
    const auto lists = load_run_with_qrels(run_path, qrels_path, baseline_run_path);
    const MetricsSummary m = compute_ranking_metrics(lists);

    std::ostringstream table, csv;
    table.precision(6);
    csv.precision(17);
    table << "metric            value\n";
    table << "MAP               " << m.map << "\n";
    table << "MRR               " << m.mrr << "\n";
    table << "P@1               " << m.p_at_1 << "\n";
    csv << "metric,value\n";
    csv << "map," << m.map << "\n";
    csv << "mrr," << m.mrr << "\n";
    csv << "p_at_1," << m.p_at_1 << "\n";
    csv << "n_evaluated," << m.n_evaluated << "\n";
    csv << "n_skipped," << m.n_skipped << "\n";

    StageReport r;
    r.fields["map"] = std::to_string(m.map);
    r.fields["mrr"] = std::to_string(m.mrr);
    r.fields["p_at_1"] = std::to_string(m.p_at_1);
    r.fields["n_evaluated"] = std::to_string(m.n_evaluated);
    r.fields["n_skipped"] = std::to_string(m.n_skipped);

    if (!baseline_run_path.empty()) {
        const MetricsSummary orig = original_ranking_metrics(lists);
        const auto pi = p_improve(lists);
        table << "orig MAP          " << orig.map << "\n";
        csv << "orig_map," << orig.map << "\n";
        if (pi.has_value()) {
            table << "P-improve         " << *pi << "\n";
            csv << "p_improve," << *pi << "\n";
            r.fields["p_improve"] = std::to_string(*pi);
        }
    }

    if (!queries_path.empty() && !data_dir.empty()) {
        // Click entropies come from the experimental splits (train, valid,
        // test) of the referenced dataset.
        const Dataset ds = load_dataset(cfg, data_dir);
        const Log experimental = ds.subset({&ds.train, &ds.valid, &ds.test});
        const auto entropies = all_click_entropies(experimental);
        const auto qid_to_query = load_queries_file(queries_path);
        std::vector<RankedList> with_queries = lists;
        for (auto& list : with_queries) {
            auto it = qid_to_query.find(list.qid);
            if (it != qid_to_query.end()) list.query = it->second;
        }
        const EntropySplitReport es =
            entropy_split_report(with_queries, entropies, cfg.eval_entropy_threshold);
        const auto emit_bucket = [&](const char* name,
                                     const std::optional<EntropyBucket>& b) {
            if (!b.has_value()) return;
            table << name << " n=" << b->n_lists << " dMAP " << b->delta_map << "\n";
            csv << name << "_n," << b->n_lists << "\n";
            csv << name << "_delta_map," << b->delta_map << "\n";
            r.fields[std::string(name) + "_delta_map"] = std::to_string(b->delta_map);
        };
        emit_bucket("entropy_low", es.low);
        emit_bucket("entropy_high", es.high);
    }

    write_file(out_dir + "/report.txt", table.str());
    write_file(out_dir + "/metrics.csv", csv.str());
    r.outputs = {out_dir + "/report.txt", out_dir + "/metrics.csv"};
    std::vector<std::string> inputs = {run_path, qrels_path};
    if (!baseline_run_path.empty()) inputs.push_back(baseline_run_path);
    write_manifest(out_dir, "evaluate", cfg, inputs, r);
    return r;
}

StageReport stage_analyze(const RunConfig& cfg, const std::string& data_dir,
                          const std::string& checkpoint_path, std::int64_t n_users,
                          std::int64_t n_queries, std::uint64_t seed,
                          const std::string& out_dir) {
    ensure_dir(out_dir);
    const Dataset ds = load_dataset(cfg, data_dir);
    ModelConfig mc = cfg.model;
    mc.vocab_size = ds.vocab.size();
    Model model = Model::load_checkpoint(checkpoint_path, mc);

    // Query vectors for external projection.
    std::set<std::string> distinct;
    for (const auto& [user, evs] : ds.full.events) {
        for (const auto& e : evs) distinct.insert(e.query);
    }
    std::vector<std::string> queries(distinct.begin(), distinct.end());
    if (n_queries > static_cast<std::int64_t>(queries.size())) {
        throw DataError("analyze: query sample larger than the population");
    }
    Rng rng(seed);
    rng.shuffle(queries);
    queries.resize(static_cast<std::size_t>(n_queries));
    std::sort(queries.begin(), queries.end());
    std::ostringstream qcsv;
    qcsv.precision(17);
    for (const auto& q : queries) {
        std::vector<std::int32_t> ids;
        for (const auto& w : split_words(q)) ids.push_back(ds.vocab.lookup(w));
        const Tensor v = model.sentence_encode(ids);
        qcsv << q;
        for (double x : v.values()) qcsv << ',' << x;
        qcsv << '\n';
    }
    write_file(out_dir + "/query_vectors.csv", qcsv.str());

    // User-representation similarity histogram, 0.025-wide bins on [-1, 1].
    std::vector<std::string> users;
    for (const auto& [user, evs] : ds.full.events) users.push_back(user);
    if (n_users > static_cast<std::int64_t>(users.size())) {
        throw DataError("analyze: user sample larger than the population");
    }
    rng.shuffle(users);
    users.resize(static_cast<std::size_t>(n_users));
    std::sort(users.begin(), users.end());
    std::vector<std::vector<double>> reps;
    reps.reserve(users.size());
    for (const auto& user : users) {
        std::vector<const QueryEvent*> evs;
        for (const auto& e : ds.full.events.at(user)) evs.push_back(&e);
        const UserHistory h = UserHistory::from_events(user, evs);
        HistoryView view;
        if (!h.behaviors.empty()) {
            const int last_session = h.behaviors.back().session_id;
            std::size_t split_at = h.behaviors.size();
            while (split_at > 0 && h.behaviors[split_at - 1].session_id == last_session) {
                --split_at;
            }
            view.long_term.assign(h.behaviors.begin(),
                                  h.behaviors.begin() + static_cast<std::ptrdiff_t>(split_at));
            view.short_term.assign(h.behaviors.begin() + static_cast<std::ptrdiff_t>(split_at),
                                   h.behaviors.end());
        }
        const TokenizedView tokens = tokenize_view(view, ds.full, ds.vocab);
        reps.push_back(model.sequence_encode(tokens, nullptr).values());
    }
    const auto bins = cosine_histogram(reps);
    std::ostringstream hcsv;
    hcsv << "bin_low,bin_high,count\n";
    hcsv.precision(6);
    for (std::size_t b = 0; b < bins.size(); ++b) {
        hcsv << (-1.0 + 0.025 * static_cast<double>(b)) << ','
             << (-1.0 + 0.025 * static_cast<double>(b + 1)) << ',' << bins[b] << '\n';
    }
    write_file(out_dir + "/user_similarity_histogram.csv", hcsv.str());

    StageReport r;
    r.outputs = {out_dir + "/query_vectors.csv", out_dir + "/user_similarity_histogram.csv"};
    r.fields["queries_dumped"] = std::to_string(queries.size());
    r.fields["users_compared"] = std::to_string(users.size());
    write_manifest(out_dir, "analyze", cfg, {checkpoint_path}, r);
    return r;
}

}  // namespace pssl
