#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "pssl/bm25.hpp"
#include "pssl/mine.hpp"
#include "pssl/synth.hpp"

using namespace pssl;

namespace {

SynthConfig small_config() {
    SynthConfig cfg;
    cfg.n_users = 24;
    cfg.n_topics = 2;
    cfg.words_per_topic = 14;
    cfg.docs_per_topic = 10;
    cfg.queries_per_user = 24;
    cfg.ambiguous_fraction = 0.3;
    cfg.n_ambiguous_queries = 3;
    cfg.amb_docs_early = 5;
    cfg.amb_docs_late = 3;
    cfg.candidates_k = 6;
    cfg.multi_click_rate = 0.4;
    cfg.refind_rate = 0.2;
    cfg.seed = 1234;
    return cfg;
}

bool is_ambiguous_query(const std::string& q) { return q.rfind("amb", 0) == 0; }

}  // namespace

TEST_CASE("seed replay emits byte-identical files") {
    namespace fs = std::filesystem;
    const std::string dir =
        (fs::temp_directory_path() / ("pssl_synth_" + std::to_string(::getpid()))).string();
    fs::create_directories(dir);
    const SynthConfig cfg = small_config();
    generate_to_files(cfg, dir + "/e1.tsv", dir + "/d1.tsv", dir + "/t1.tsv");
    generate_to_files(cfg, dir + "/e2.tsv", dir + "/d2.tsv", dir + "/t2.tsv");
    CHECK(read_file(dir + "/e1.tsv") == read_file(dir + "/e2.tsv"));
    CHECK(read_file(dir + "/d1.tsv") == read_file(dir + "/d2.tsv"));
    CHECK(read_file(dir + "/t1.tsv") == read_file(dir + "/t2.tsv"));
    CHECK(read_file(dir + "/e1.tsv").size() > 1000);

    SynthConfig other = cfg;
    other.seed = 4321;
    generate_to_files(other, dir + "/e3.tsv", dir + "/d3.tsv", dir + "/t3.tsv");
    CHECK(read_file(dir + "/e1.tsv") != read_file(dir + "/e3.tsv"));
    fs::remove_all(dir);
}

TEST_CASE("generated files ingest cleanly and round-trip") {
    namespace fs = std::filesystem;
    const std::string dir =
        (fs::temp_directory_path() / ("pssl_synth_rt_" + std::to_string(::getpid()))).string();
    fs::create_directories(dir);
    generate_to_files(small_config(), dir + "/events.tsv", dir + "/docs.tsv", dir + "/truth.tsv");
    Log log = ingest_log(dir + "/events.tsv", dir + "/docs.tsv");
    CHECK(log.report.n_dropped_lines == 0);
    CHECK(log.report.n_dropped_events == 0);
    emit_log(log, dir + "/events2.tsv", dir + "/docs2.tsv");
    CHECK(read_file(dir + "/events.tsv") == read_file(dir + "/events2.tsv"));
    CHECK(read_file(dir + "/docs.tsv") == read_file(dir + "/docs2.tsv"));
    fs::remove_all(dir);
}

TEST_CASE("ambiguous queries end up with click entropy above one") {
    SynthOutput out = generate_synthetic_log(small_config());
    std::set<std::string> amb_queries;
    for (const auto& [q, intents] : out.truth.query_intents) amb_queries.insert(q);
    REQUIRE(!amb_queries.empty());
    for (const auto& q : amb_queries) {
        const auto h = click_entropy(q, out.log);
        REQUIRE(h.has_value());
        CHECK(*h > 1.0);
    }
}

TEST_CASE("mined pair counts clear the planted minimums") {
    SynthOutput out = generate_synthetic_log(small_config());
    sessionize(out.log);
    const auto dp = mine_document_pairs(out.log);
    const auto qp = mine_query_pairs(out.log);
    const auto up = mine_user_pairs(out.log, 1.0, 8, 4);
    CHECK(dp.size() >= 40);   // multi-click events at rate 0.4
    CHECK(qp.size() >= 10);   // re-finding with paraphrases
    CHECK(up.size() >= 20);   // shared clicks under ambiguous queries
    CHECK(out.stats.n_multi_click_events > 0);
    CHECK(out.stats.n_refind_events > 0);
}

TEST_CASE("per-user planted consistency stays at or above 95 percent") {
    SynthConfig cfg = small_config();
    cfg.noise_click_rate = 0.1;  // the cap keeps users consistent anyway
    SynthOutput out = generate_synthetic_log(cfg);
    for (const auto& [user, evs] : out.log.events) {
        std::int64_t on_intent = 0, total = 0;
        for (const auto& e : evs) {
            if (!is_ambiguous_query(e.query)) continue;
            const std::int64_t pref = out.truth.user_intent.at(user).at(e.query);
            for (const auto& c : e.candidates) {
                if (!c.clicked) continue;
                ++total;
                if (out.truth.doc_topic.at(c.doc_id) == pref) ++on_intent;
            }
        }
        if (total > 0) {
            CHECK(static_cast<double>(on_intent) / static_cast<double>(total) >= 0.95);
        }
    }
}

TEST_CASE("ambiguous candidates carry both intents and tie on BM25") {
    SynthOutput out = generate_synthetic_log(small_config());
    Bm25Index index(out.log.corpus);
    int checked = 0;
    for (const auto& [user, evs] : out.log.events) {
        for (const auto& e : evs) {
            if (!is_ambiguous_query(e.query)) continue;
            const auto& intents = out.truth.query_intents.at(e.query);
            std::map<std::int64_t, int> per_intent;
            std::map<std::int64_t, double> intent_score;
            for (const auto& c : e.candidates) {
                const std::int64_t topic = out.truth.doc_topic.at(c.doc_id);
                ++per_intent[topic];
                intent_score[topic] = index.score(e.query_words, c.doc_id);
            }
            REQUIRE(per_intent.size() == 2);
            for (std::int64_t t : intents) CHECK(per_intent[t] >= 1);
            // Equal-length docs with the ambiguous word exactly once tie.
            CHECK(intent_score[intents[0]] ==
                  doctest::Approx(intent_score[intents[1]]).epsilon(1e-12));
            ++checked;
        }
    }
    CHECK(checked > 30);
}

TEST_CASE("baseline P at 1 on ambiguous test-period events is near a coin flip") {
    SynthConfig cfg = small_config();
    cfg.n_users = 80;
    cfg.queries_per_user = 40;
    SynthOutput out = generate_synthetic_log(cfg);
    const std::int64_t t0 = out.log.min_timestamp();
    const std::int64_t t1 = out.log.max_timestamp();
    const double cut = static_cast<double>(t0) +
                       static_cast<double>(t1 - t0) * 35.0 / 39.0;
    std::int64_t hits = 0, total = 0;
    for (const auto& [user, evs] : out.log.events) {
        for (const auto& e : evs) {
            if (!is_ambiguous_query(e.query)) continue;
            if (static_cast<double>(e.timestamp) < cut) continue;
            ++total;
            for (const auto& c : e.candidates) {
                if (c.orig_rank == 1 && c.clicked) ++hits;
            }
        }
    }
    REQUIRE(total >= 80);
    const double p1 = static_cast<double>(hits) / static_cast<double>(total);
    CHECK(p1 >= 0.4);
    CHECK(p1 <= 0.6);
}

TEST_CASE("test-period ambiguous candidates are unclicked before the boundary") {
    SynthOutput out = generate_synthetic_log(small_config());
    const std::int64_t t0 = out.log.min_timestamp();
    const std::int64_t t1 = out.log.max_timestamp();
    const double train_cut = static_cast<double>(t0) +
                             static_cast<double>(t1 - t0) * 31.0 / 39.0;
    std::set<std::string> clicked_before;
    for (const auto& [user, evs] : out.log.events) {
        for (const auto& e : evs) {
            if (static_cast<double>(e.timestamp) >= train_cut) continue;
            for (const auto& c : e.candidates)
                if (c.clicked) clicked_before.insert(c.doc_id);
        }
    }
    const double valid_cut = static_cast<double>(t0) +
                             static_cast<double>(t1 - t0) * 35.0 / 39.0;
    int fresh_events = 0;
    for (const auto& [user, evs] : out.log.events) {
        for (const auto& e : evs) {
            if (!is_ambiguous_query(e.query)) continue;
            if (static_cast<double>(e.timestamp) < valid_cut) continue;
            ++fresh_events;
            for (const auto& c : e.candidates) {
                CHECK(clicked_before.count(c.doc_id) == 0);
            }
        }
    }
    CHECK(fresh_events > 10);
}

TEST_CASE("every generated user survives the temporal split") {
    SynthOutput out = generate_synthetic_log(small_config());
    sessionize(out.log);
    const SplitResult split = temporal_split(out.log);
    CHECK(split.removed_users == 0);
    CHECK(split.background.events.size() == 24);
    CHECK(split.train.events.size() == 24);
    CHECK(split.test.report.n_events > 0);
}

TEST_CASE("truth files round-trip") {
    namespace fs = std::filesystem;
    const std::string path =
        (fs::temp_directory_path() / ("pssl_truth_" + std::to_string(::getpid()) + ".tsv"))
            .string();
    SynthOutput out = generate_synthetic_log(small_config());
    out.truth.save(path);
    const PlantedTruth loaded = PlantedTruth::load(path);
    CHECK(loaded.user_intent == out.truth.user_intent);
    CHECK(loaded.query_intents == out.truth.query_intents);
    CHECK(loaded.doc_topic == out.truth.doc_topic);
    fs::remove(path);
}

TEST_CASE("infeasible configurations are rejected") {
    SynthConfig cfg = small_config();
    cfg.n_topics = 1;
    CHECK_THROWS_AS(generate_synthetic_log(cfg), UsageError);

    SynthConfig pools = small_config();
    pools.amb_docs_late = 1;  // below candidates_k / 2
    CHECK_THROWS_AS(generate_synthetic_log(pools), UsageError);

    SynthConfig frac = small_config();
    frac.ambiguous_fraction = 1.4;
    CHECK_THROWS_AS(generate_synthetic_log(frac), UsageError);
}

TEST_CASE("timed dwell mode produces both satisfied and short clicks") {
    SynthConfig cfg = small_config();
    cfg.dwell_mode = "timed";
    cfg.dwell_unsat_rate = 0.3;
    SynthOutput out = generate_synthetic_log(cfg);
    int satisfied = 0, unsatisfied = 0;
    for (const auto& [user, evs] : out.log.events)
        for (const auto& e : evs)
            for (const auto& c : e.candidates) {
                if (!c.clicked) continue;
                REQUIRE(c.dwell_secs >= 0);
                if (c.dwell_secs >= 30) ++satisfied;
                else ++unsatisfied;
            }
    CHECK(satisfied > 0);
    CHECK(unsatisfied > 0);
}
