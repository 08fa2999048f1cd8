#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "pssl/metrics.hpp"

using namespace pssl;

namespace {

RankedList make_list(const std::string& qid, const std::vector<std::tuple<int, int, bool>>& rows) {
    RankedList list;
    list.qid = qid;
    int i = 0;
    for (const auto& [orig, fresh, rel] : rows) {
        RankedCandidate c;
        c.doc_id = "d" + std::to_string(i++);
        c.orig_rank = orig;
        c.new_rank = fresh;
        c.relevant = rel;
        c.score = 1.0 / fresh;
        list.candidates.push_back(c);
    }
    return list;
}

std::vector<RankedList> random_lists(std::uint64_t seed, std::size_t n_lists) {
    Rng rng(seed);
    std::vector<RankedList> lists;
    for (std::size_t i = 0; i < n_lists; ++i) {
        const std::size_t n = 1 + rng.next_below(8);
        std::vector<int> orig(n), fresh(n);
        for (std::size_t j = 0; j < n; ++j) orig[j] = fresh[j] = static_cast<int>(j) + 1;
        rng.shuffle(orig);
        rng.shuffle(fresh);
        std::vector<std::tuple<int, int, bool>> rows;
        for (std::size_t j = 0; j < n; ++j) {
            rows.emplace_back(orig[j], fresh[j], rng.bernoulli(0.4));
        }
        lists.push_back(make_list("q" + std::to_string(i), rows));
    }
    return lists;
}

}  // namespace

TEST_CASE("single relevant at rank two of three") {
    const auto list = make_list("q", {{1, 1, false}, {2, 2, true}, {3, 3, false}});
    const auto m = compute_ranking_metrics({list});
    CHECK(m.mrr == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.p_at_1 == 0.0);
    CHECK(m.map == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("relevant at ranks one and three") {
    const auto list = make_list("q", {{1, 1, true}, {2, 2, false}, {3, 3, true}});
    CHECK(average_precision(list) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("perfect rankings score one everywhere") {
    std::vector<RankedList> lists;
    for (int i = 0; i < 5; ++i) {
        lists.push_back(
            make_list("q" + std::to_string(i), {{1, 1, true}, {2, 2, false}, {3, 3, false}}));
    }
    const auto m = compute_ranking_metrics(lists);
    CHECK(m.map == 1.0);
    CHECK(m.mrr == 1.0);
    CHECK(m.p_at_1 == 1.0);
}

TEST_CASE("lists without a relevant item are skipped and counted") {
    std::vector<RankedList> lists = {
        make_list("q0", {{1, 1, false}, {2, 2, false}}),
        make_list("q1", {{1, 1, true}}),
    };
    const auto m = compute_ranking_metrics(lists);
    CHECK(m.n_evaluated == 1);
    CHECK(m.n_skipped == 1);
    CHECK(m.map == 1.0);
}

TEST_CASE("metrics ignore candidate storage order") {
    auto list = make_list("q", {{1, 3, false}, {2, 1, true}, {3, 2, false}});
    auto shuffled = list;
    std::swap(shuffled.candidates[0], shuffled.candidates[2]);
    std::swap(shuffled.candidates[1], shuffled.candidates[2]);
    const auto a = compute_ranking_metrics({list});
    const auto b = compute_ranking_metrics({shuffled});
    CHECK(a.map == b.map);
    CHECK(a.mrr == b.mrr);
    CHECK(a.p_at_1 == b.p_at_1);
    CHECK(p_improve({list}) == p_improve({shuffled}));
}

TEST_CASE("metrics match brute force on randomized lists") {
    const auto lists = random_lists(7, 300);
    const auto m = compute_ranking_metrics(lists);
    double map = 0, mrr = 0, p1 = 0;
    std::int64_t n = 0;
    for (const auto& list : lists) {
        std::vector<std::pair<int, bool>> rows;
        bool any_rel = false;
        for (const auto& c : list.candidates) {
            rows.emplace_back(c.new_rank, c.relevant);
            any_rel |= c.relevant;
        }
        if (!any_rel) continue;
        ++n;
        map += oracles::scalar_ap(rows);
        mrr += oracles::scalar_rr(rows);
        p1 += oracles::scalar_p1(rows);
    }
    CHECK(m.n_evaluated == n);
    CHECK(std::fabs(m.map - map / n) < 1e-12);
    CHECK(std::fabs(m.mrr - mrr / n) < 1e-12);
    CHECK(std::fabs(m.p_at_1 - p1 / n) < 1e-12);
}

TEST_CASE("p_improve of the identity reranking is exactly zero") {
    const auto lists = random_lists(9, 50);
    std::vector<RankedList> identity = lists;
    for (auto& list : identity)
        for (auto& c : list.candidates) c.new_rank = c.orig_rank;
    const auto pi = p_improve(identity);
    REQUIRE(pi.has_value());
    CHECK(*pi == 0.0);
}

TEST_CASE("one corrected inverse pair among four pairs gives 0.25") {
    // 2 relevant x 2 non-relevant = 4 pairs. Original ranking misorders
    // exactly one of them; the new ranking fixes it and breaks none.
    const auto list = make_list("q", {
                                         {1, 1, true},   // rel, stays top
                                         {2, 3, false},  // non-rel
                                         {3, 2, true},   // rel, was behind d1
                                         {4, 4, false},  // non-rel, last
                                     });
    const auto pi = p_improve({list});
    REQUIRE(pi.has_value());
    CHECK(*pi == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("p_improve matches the brute-force counter on random data") {
    const auto lists = random_lists(11, 200);
    std::vector<std::vector<std::tuple<int, int, bool>>> raw;
    for (const auto& list : lists) {
        std::vector<std::tuple<int, int, bool>> rows;
        for (const auto& c : list.candidates) rows.emplace_back(c.orig_rank, c.new_rank,
                                                                c.relevant);
        raw.push_back(std::move(rows));
    }
    const auto pi = p_improve(lists);
    REQUIRE(pi.has_value());
    CHECK(*pi == doctest::Approx(oracles::scalar_p_improve(raw)).epsilon(1e-15));
}

TEST_CASE("the oracle reranking corrects every inverse pair") {
    auto lists = random_lists(13, 80);
    for (auto& list : lists) {
        // all relevant first, stable by original rank
        std::vector<const RankedCandidate*> order;
        for (const auto& c : list.candidates) order.push_back(&c);
        std::sort(order.begin(), order.end(),
                  [](const RankedCandidate* a, const RankedCandidate* b) {
                      if (a->relevant != b->relevant) return a->relevant;
                      return a->orig_rank < b->orig_rank;
                  });
        for (std::size_t i = 0; i < order.size(); ++i)
            const_cast<RankedCandidate*>(order[i])->new_rank = static_cast<int>(i) + 1;
    }
    const auto pi = p_improve(lists);
    REQUIRE(pi.has_value());
    CHECK(*pi >= 0.0);
    // Equals (#inverse pairs) / (#pairs) by construction.
    long inverse = 0, total = 0;
    for (const auto& list : lists)
        for (const auto& r : list.candidates) {
            if (!r.relevant) continue;
            for (const auto& n : list.candidates) {
                if (n.relevant) continue;
                ++total;
                if (r.orig_rank > n.orig_rank) ++inverse;
            }
        }
    if (total > 0) {
        CHECK(*pi == doctest::Approx(static_cast<double>(inverse) / total).epsilon(1e-15));
    }
}

TEST_CASE("entropy buckets split and report delta MAP") {
    std::map<std::string, double> entropies = {{"nav", 0.2}, {"amb", 2.0}};
    auto nav = make_list("q0", {{1, 2, true}, {2, 1, false}});
    nav.query = "nav";
    auto amb = make_list("q1", {{1, 2, false}, {2, 1, true}});
    amb.query = "amb";
    const auto report = entropy_split_report({nav, amb}, entropies, 1.0);
    REQUIRE(report.low.has_value());
    REQUIRE(report.high.has_value());
    CHECK(report.low->n_lists == 1);
    CHECK(report.high->n_lists == 1);
    // nav: relevant moved from rank 1 to rank 2 -> dMAP = 0.5 - 1 = -0.5
    CHECK(report.low->delta_map == doctest::Approx(-0.5));
    // amb: relevant moved from rank 2 to rank 1 -> dMAP = +0.5
    CHECK(report.high->delta_map == doctest::Approx(0.5));

    const auto single = entropy_split_report({nav}, entropies, 1.0);
    CHECK(single.low.has_value());
    CHECK(!single.high.has_value());
}

TEST_CASE("identity reranker has zero delta MAP in both buckets") {
    std::map<std::string, double> entropies = {{"a", 0.0}, {"b", 3.0}};
    auto l1 = make_list("q0", {{1, 1, true}, {2, 2, false}});
    l1.query = "a";
    auto l2 = make_list("q1", {{1, 1, false}, {2, 2, true}});
    l2.query = "b";
    const auto report = entropy_split_report({l1, l2}, entropies, 1.0);
    CHECK(report.low->delta_map == 0.0);
    CHECK(report.high->delta_map == 0.0);
}

TEST_CASE("cosine histogram has 80 bins and full mass") {
    Rng rng(15);
    std::vector<std::vector<double>> vecs;
    for (int i = 0; i < 12; ++i) {
        std::vector<double> v(6);
        for (double& x : v) x = rng.uniform(-1, 1);
        vecs.push_back(v);
    }
    const auto bins = cosine_histogram(vecs);
    CHECK(bins.size() == 80);
    std::int64_t mass = 0;
    for (auto b : bins) mass += b;
    CHECK(mass == 12 * 11 / 2);

    // Identical vectors land in the last bin (cosine exactly 1).
    const auto spike = cosine_histogram({{1, 0}, {2, 0}, {3, 0}});
    CHECK(spike[79] == 3);
}

TEST_CASE("sampled pairwise cosines match a scalar recomputation") {
    Rng rng(16);
    std::vector<std::vector<double>> vecs;
    for (int i = 0; i < 5; ++i) {
        std::vector<double> v(4);
        for (double& x : v) x = rng.uniform(-1, 1);
        vecs.push_back(v);
    }
    for (std::size_t i = 0; i < vecs.size(); ++i) {
        for (std::size_t j = i + 1; j < vecs.size(); ++j) {
            double dot = 0, na = 0, nb = 0;
            for (std::size_t k = 0; k < 4; ++k) {
                dot += vecs[i][k] * vecs[j][k];
                na += vecs[i][k] * vecs[i][k];
                nb += vecs[j][k] * vecs[j][k];
            }
            const double expect = dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
            CHECK(plain_cosine(vecs[i], vecs[j]) == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("run files round-trip through write and load") {
    namespace fs = std::filesystem;
    const std::string dir =
        (fs::temp_directory_path() / ("pssl_metrics_" + std::to_string(::getpid()))).string();
    fs::create_directories(dir);

    const auto lists = random_lists(21, 40);
    write_run_file(lists, dir + "/run.tsv", "sys");
    write_run_file(lists, dir + "/orig.tsv", "orig", true);
    write_qrels(lists, dir + "/qrels.tsv");
    write_queries_file(lists, dir + "/queries.tsv");

    const auto loaded = load_run_with_qrels(dir + "/run.tsv", dir + "/qrels.tsv",
                                            dir + "/orig.tsv");
    const auto a = compute_ranking_metrics(lists);
    const auto b = compute_ranking_metrics(loaded);
    CHECK(a.map == doctest::Approx(b.map).epsilon(1e-12));
    CHECK(a.mrr == doctest::Approx(b.mrr).epsilon(1e-12));
    CHECK(a.p_at_1 == doctest::Approx(b.p_at_1).epsilon(1e-12));
    const auto pa = p_improve(lists);
    const auto pb = p_improve(loaded);
    REQUIRE(pa.has_value());
    REQUIRE(pb.has_value());
    CHECK(*pa == doctest::Approx(*pb).epsilon(1e-12));
    fs::remove_all(dir);
}
