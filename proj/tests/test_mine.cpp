#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "pssl/mine.hpp"

using namespace pssl;

namespace {

QueryEvent make_event(const std::string& user, std::int64_t t, const std::string& q,
                      const std::vector<std::string>& docs,
                      const std::vector<std::string>& clicked) {
    QueryEvent e;
    e.user_id = user;
    e.timestamp = t;
    e.query = q;
    e.query_words = split_words(q);
    int rank = 1;
    for (const auto& id : docs) {
        Candidate c;
        c.doc_id = id;
        c.orig_rank = rank++;
        c.clicked = std::find(clicked.begin(), clicked.end(), id) != clicked.end();
        e.candidates.push_back(c);
    }
    return e;
}

Log tiny_log() {
    Log log;
    for (const char* id : {"A", "B", "C", "D"}) {
        Document d;
        d.doc_id = id;
        d.words = {"w"};
        log.corpus.emplace(id, d);
    }
    return log;
}

UserHistory history_of(std::vector<std::pair<std::string, int>> items) {
    UserHistory h;
    h.user_id = "u";
    int prev = -999;
    for (std::size_t i = 0; i < items.size(); ++i) {
        h.behaviors.push_back({BehaviorKind::Query, items[i].first, items[i].second});
        if (items[i].second != prev) {
            h.session_boundaries.push_back(i);
            prev = items[i].second;
        }
    }
    return h;
}

}  // namespace

TEST_CASE("a three-click event yields all three unordered pairs") {
    Log log = tiny_log();
    log.events["u1"].push_back(make_event("u1", 1, "q", {"A", "B", "C"}, {"A", "B", "C"}));
    const auto pairs = mine_document_pairs(log);
    REQUIRE(pairs.size() == 3);
    std::set<std::pair<std::string, std::string>> got;
    for (const auto& p : pairs) got.insert({p.doc_i, p.doc_j});
    CHECK(got.count({"A", "B"}) == 1);
    CHECK(got.count({"A", "C"}) == 1);
    CHECK(got.count({"B", "C"}) == 1);
}

TEST_CASE("single-click events yield no document pairs") {
    Log log = tiny_log();
    log.events["u1"].push_back(make_event("u1", 1, "q", {"A", "B"}, {"A"}));
    CHECK(mine_document_pairs(log).empty());
}

TEST_CASE("query pair forms when two different queries click one doc") {
    Log log = tiny_log();
    log.events["u1"].push_back(make_event("u1", 1, "online translation", {"A", "B"}, {"A"}));
    log.events["u1"].push_back(make_event("u1", 2, "google translate", {"A", "C"}, {"A"}));
    const auto pairs = mine_query_pairs(log);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].shared_doc == "A");
    CHECK(pairs[0].query_i != pairs[0].query_j);
}

TEST_CASE("repeating the same query string never pairs with itself") {
    Log log = tiny_log();
    log.events["u1"].push_back(make_event("u1", 1, "same query", {"A", "B"}, {"A"}));
    log.events["u1"].push_back(make_event("u1", 2, "same query", {"A", "C"}, {"A"}));
    CHECK(mine_query_pairs(log).empty());
}

TEST_CASE("mined doc and query pairs equal brute force on random logs") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
        Log log = oracles::random_log(seed, 300);
        sessionize(log);

        const auto dp = mine_document_pairs(log);
        std::multiset<oracles::DpKey> got_dp;
        for (const auto& p : dp) {
            std::string a = p.doc_i, b = p.doc_j;
            if (a > b) std::swap(a, b);
            got_dp.insert({p.user_id, p.query, a, b});
        }
        CHECK(got_dp == oracles::brute_force_dp(log));

        const auto qp = mine_query_pairs(log);
        std::set<oracles::QpKey> got_qp;
        for (const auto& p : qp) {
            std::string a = p.query_i, b = p.query_j;
            if (a > b) std::swap(a, b);
            got_qp.insert({p.user_id, a, b, p.shared_doc});
        }
        CHECK(got_qp == oracles::brute_force_qp(log));
    }
}

TEST_CASE("zero-entropy queries contribute no user pairs") {
    Log log = tiny_log();
    // Two users click the same doc under the same query; entropy 0.
    log.events["u1"].push_back(make_event("u1", 1, "nav", {"A", "B"}, {"A"}));
    log.events["u2"].push_back(make_event("u2", 2, "nav", {"A", "B"}, {"A"}));
    sessionize(log);
    CHECK(mine_user_pairs(log).empty());
}

TEST_CASE("ambiguous shared-doc clicks create one user pair") {
    Log log = tiny_log();
    // "apple" spreads clicks over 3 docs (entropy > 1), with u1 and u2
    // agreeing on A.
    log.events["u1"].push_back(make_event("u1", 1, "apple", {"A", "B", "C"}, {"A"}));
    log.events["u2"].push_back(make_event("u2", 2, "apple", {"A", "B", "C"}, {"A"}));
    log.events["u3"].push_back(make_event("u3", 3, "apple", {"A", "B", "C"}, {"B"}));
    log.events["u4"].push_back(make_event("u4", 4, "apple", {"A", "B", "C"}, {"C"}));
    log.events["u5"].push_back(make_event("u5", 5, "apple", {"A", "B", "C"}, {"C"}));
    sessionize(log);
    const auto pairs = mine_user_pairs(log);
    std::set<std::pair<std::string, std::string>> users;
    for (const auto& p : pairs) {
        CHECK(p.query == "apple");
        users.insert({p.user_i, p.user_j});
    }
    CHECK(users.count({"u1", "u2"}) == 1);
    CHECK(users.count({"u4", "u5"}) == 1);
    CHECK(users.count({"u1", "u3"}) == 0);
}

TEST_CASE("user pair histories stop strictly before the anchor") {
    Log log = tiny_log();
    log.events["u1"].push_back(make_event("u1", 1, "earlier stuff", {"B"}, {"B"}));
    log.events["u1"].push_back(make_event("u1", 5, "apple", {"A", "B", "C"}, {"A"}));
    log.events["u1"].push_back(make_event("u1", 9, "later stuff", {"C"}, {"C"}));
    log.events["u2"].push_back(make_event("u2", 2, "apple", {"A", "B", "C"}, {"A"}));
    log.events["u3"].push_back(make_event("u3", 3, "apple", {"A", "B", "C"}, {"B"}));
    log.events["u4"].push_back(make_event("u4", 4, "apple", {"A", "B", "C"}, {"C"}));
    sessionize(log);
    const auto pairs = mine_user_pairs(log);
    bool found = false;
    for (const auto& p : pairs) {
        if (p.user_i != "u1" && p.user_j != "u1") continue;
        found = true;
        const HistoryView& h = p.user_i == "u1" ? p.history_i : p.history_j;
        for (const auto& list : {h.long_term, h.short_term}) {
            for (const auto& b : list) {
                CHECK(b.text_key != "later stuff");
                CHECK(b.text_key != "apple");
                CHECK(b.text_key != "C");
            }
        }
    }
    CHECK(found);
}

TEST_CASE("mined user pairs equal brute force on random logs") {
    for (std::uint64_t seed = 11; seed <= 16; ++seed) {
        Log log = oracles::random_log(seed, 250);
        sessionize(log);
        const auto up = mine_user_pairs(log, 1.0);
        std::set<oracles::UpKey> got;
        for (const auto& p : up) {
            std::string a = p.user_i, b = p.user_j;
            if (a > b) std::swap(a, b);
            const bool fresh = got.insert({a, b, p.query, p.shared_doc}).second;
            CHECK(fresh);  // at most one pair per (u_i, u_j, q, d)
        }
        CHECK(got == oracles::brute_force_up(log, 1.0));
    }
}

TEST_CASE("behavior delete keeps a strict subsequence of the right length") {
    UserHistory h = history_of({{"a", 0}, {"b", 0}, {"c", 1}, {"d", 1}});
    UserHistory out = augment_sequence(h, AugmentStrategy::BehaviorDelete, 0.5, 7);
    CHECK(out.behaviors.size() == 2);
    // Original relative order preserved.
    std::size_t pos = 0;
    for (const auto& b : out.behaviors) {
        while (pos < h.behaviors.size() && h.behaviors[pos].text_key != b.text_key) ++pos;
        CHECK(pos < h.behaviors.size());
        ++pos;
    }
}

TEST_CASE("behavior delete always keeps at least one behavior") {
    UserHistory h = history_of({{"only", 0}});
    UserHistory out = augment_sequence(h, AugmentStrategy::BehaviorDelete, 0.99, 3);
    CHECK(out.behaviors.size() == 1);
}

TEST_CASE("behavior reorder preserves the multiset") {
    UserHistory h = history_of({{"a", 0}, {"b", 0}, {"c", 1}, {"d", 1}, {"e", 2}, {"f", 2}});
    UserHistory out = augment_sequence(h, AugmentStrategy::BehaviorReorder, 0.5, 11);
    REQUIRE(out.behaviors.size() == h.behaviors.size());
    std::multiset<std::string> in_keys, out_keys;
    for (const auto& b : h.behaviors) in_keys.insert(b.text_key);
    for (const auto& b : out.behaviors) out_keys.insert(b.text_key);
    CHECK(in_keys == out_keys);
}

TEST_CASE("session delete on a one-session history is the identity") {
    UserHistory h = history_of({{"a", 0}, {"b", 0}, {"c", 0}});
    UserHistory out = augment_sequence(h, AugmentStrategy::SessionDelete, 0.5, 13);
    REQUIRE(out.behaviors.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(out.behaviors[i].text_key == h.behaviors[i].text_key);
}

TEST_CASE("session delete removes whole sessions and keeps at least one") {
    UserHistory h = history_of(
        {{"a", 0}, {"b", 0}, {"c", 1}, {"d", 1}, {"e", 2}, {"f", 2}, {"g", 3}, {"h", 3}});
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        UserHistory out = augment_sequence(h, AugmentStrategy::SessionDelete, 0.5, seed);
        CHECK(!out.behaviors.empty());
        std::set<int> surviving;
        for (const auto& b : out.behaviors) surviving.insert(b.session_id);
        // Every surviving session is complete (2 behaviors each here).
        std::map<int, int> counts;
        for (const auto& b : out.behaviors) ++counts[b.session_id];
        for (const auto& [sid, n] : counts) CHECK(n == 2);
        // Deleted fraction reached 0.5 unless only one session left.
        const double deleted = 1.0 - static_cast<double>(out.behaviors.size()) / 8.0;
        if (surviving.size() > 1) CHECK(deleted >= 0.5);
    }
}

TEST_CASE("augmentation is deterministic given the seed") {
    UserHistory h = history_of({{"a", 0}, {"b", 0}, {"c", 1}, {"d", 1}, {"e", 2}});
    for (auto strategy : {AugmentStrategy::BehaviorDelete, AugmentStrategy::BehaviorReorder,
                          AugmentStrategy::SessionDelete}) {
        UserHistory a = augment_sequence(h, strategy, 0.5, 99);
        UserHistory b = augment_sequence(h, strategy, 0.5, 99);
        REQUIRE(a.behaviors.size() == b.behaviors.size());
        for (std::size_t i = 0; i < a.behaviors.size(); ++i) {
            CHECK(a.behaviors[i].text_key == b.behaviors[i].text_key);
        }
    }
}

TEST_CASE("augmenting an empty history fails") {
    UserHistory h;
    h.user_id = "u";
    CHECK_THROWS_AS(augment_sequence(h, AugmentStrategy::BehaviorDelete, 0.5, 1), DataError);
}

TEST_CASE("batch construction chunks after a seeded shuffle") {
    std::vector<int> items;
    for (int i = 0; i < 10; ++i) items.push_back(i);
    const auto batches = build_batches(items, 4, 77);
    REQUIRE(batches.size() == 2);  // 2 pairs dropped
    for (const auto& b : batches) CHECK(b.size() == 4);

    const auto again = build_batches(items, 4, 77);
    CHECK(batches == again);
    const auto different = build_batches(items, 4, 78);
    CHECK(batches != different);

    std::set<int> seen;
    for (const auto& b : batches) seen.insert(b.begin(), b.end());
    CHECK(seen.size() == 8);  // no duplicates across batches
}

TEST_CASE("too few items yield no batches") {
    std::vector<int> items = {1, 2, 3};
    CHECK(build_batches(items, 4, 1).empty());
    CHECK_THROWS_AS(build_batches(items, 1, 1), UsageError);
}

TEST_CASE("pair files round-trip") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() /
                             ("pssl_mine_" + std::to_string(::getpid())))
                                .string();
    fs::create_directories(dir);

    Log log = oracles::random_log(3, 200);
    sessionize(log);
    const auto dp = mine_document_pairs(log);
    const auto qp = mine_query_pairs(log);
    const auto up = mine_user_pairs(log);
    const auto sap = mine_sap_instances(log, 2, 9);

    save_doc_pairs(dp, dir + "/dp.tsv");
    save_query_pairs(qp, dir + "/qp.tsv");
    save_user_pairs(up, dir + "/up.tsv");
    save_sap_instances(sap, dir + "/sap.tsv");

    const auto dp2 = load_doc_pairs(dir + "/dp.tsv");
    REQUIRE(dp2.size() == dp.size());
    for (std::size_t i = 0; i < dp.size(); ++i) {
        CHECK(dp2[i].user_id == dp[i].user_id);
        CHECK(dp2[i].doc_i == dp[i].doc_i);
        CHECK(dp2[i].doc_j == dp[i].doc_j);
    }
    const auto qp2 = load_query_pairs(dir + "/qp.tsv");
    CHECK(qp2.size() == qp.size());
    const auto sap2 = load_sap_instances(dir + "/sap.tsv");
    REQUIRE(sap2.size() == sap.size());
    for (std::size_t i = 0; i < sap.size(); ++i) {
        CHECK(sap2[i].user_id == sap[i].user_id);
        CHECK(sap2[i].strategy_i == sap[i].strategy_i);
        CHECK(sap2[i].seed_j == sap[i].seed_j);
    }
    const auto up2 = load_user_pairs(dir + "/up.tsv", log);
    REQUIRE(up2.size() == up.size());
    for (std::size_t i = 0; i < up.size(); ++i) {
        CHECK(up2[i].user_i == up[i].user_i);
        CHECK(up2[i].history_i.long_term.size() == up[i].history_i.long_term.size());
        CHECK(up2[i].history_j.short_term.size() == up[i].history_j.short_term.size());
    }
    fs::remove_all(dir);
}

TEST_CASE("sap instances are deterministic and cover users with history") {
    Log log = oracles::random_log(8, 100);
    sessionize(log);
    const auto a = mine_sap_instances(log, 3, 42);
    const auto b = mine_sap_instances(log, 3, 42);
    REQUIRE(a.size() == b.size());
    CHECK(a.size() == log.events.size() * 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].user_id == b[i].user_id);
        CHECK(a[i].seed_i == b[i].seed_i);
        CHECK(a[i].strategy_j == b[i].strategy_j);
    }
}
