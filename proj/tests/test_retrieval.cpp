#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "forestlpr/retrieval.hpp"
#include "forestlpr/rng.hpp"

using namespace forestlpr;

namespace {

Eigen::VectorXd unit_gaussian(Rng& rng, int dim) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.gaussian();
  return v / v.norm();
}

Eigen::VectorXd one_hot(int dim, int i) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  v(i) = 1.0;
  return v;
}

// Two passes over the same six 10 m-spaced positions with identical
// descriptors; pass-two entries are the only usable intra queries.
RetrievalIndex two_pass_index() {
  RetrievalIndex index;
  for (int pass = 0; pass < 2; ++pass) {
    for (int i = 0; i < 6; ++i) {
      IndexEntry e;
      e.id = "p" + std::to_string(pass) + "_" + std::to_string(i);
      e.sequence = "loop";
      e.timestamp = pass * 10000.0 + i * 10.0;
      e.x = i * 10.0;
      e.y = 0.0;
      index.add(one_hot(6, i), e);
    }
  }
  return index;
}

QueryOutcome outcome(bool has_positive, std::vector<bool> truth, std::vector<double> sims) {
  QueryOutcome o;
  o.has_positive = has_positive;
  o.top_positive = std::move(truth);
  o.top_similarity = std::move(sims);
  return o;
}

}  // namespace

TEST_CASE("index rejects bad descriptors", "[retrieval]") {
  RetrievalIndex index;
  CHECK_THROWS_AS(index.add(Eigen::VectorXd::Ones(4), IndexEntry{"x", "s", 0, 0, 0}),
                  NumericError);
  index.add(one_hot(4, 0), IndexEntry{"a", "s", 0, 0, 0});
  CHECK_THROWS_AS(index.add(one_hot(5, 0), IndexEntry{"b", "s", 0, 0, 0}), UsageError);
  CHECK(index.size() == 1);
}

TEST_CASE("query ranks by cosine distance with id tie-break", "[retrieval]") {
  Rng rng(81);
  EvalConfig cfg;

  SECTION("self match comes back at rank one with zero distance") {
    RetrievalIndex index;
    for (int i = 0; i < 5; ++i) {
      index.add(unit_gaussian(rng, 8), IndexEntry{"e" + std::to_string(i), "s", 0, 0, 0});
    }
    const Eigen::VectorXd q = index.descriptors().row(3).transpose();
    const auto ranked = query(index, q, index.meta(3), cfg, QueryMode::inter);
    REQUIRE(ranked.size() == 5);
    CHECK(ranked[0].row == 3);
    CHECK(ranked[0].distance == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("matches a brute-force sort") {
    RetrievalIndex index;
    std::vector<Eigen::VectorXd> rows;
    for (int i = 0; i < 30; ++i) {
      rows.push_back(unit_gaussian(rng, 8));
      index.add(rows.back(), IndexEntry{"e" + std::to_string(i), "s", 0, 0, 0});
    }
    const Eigen::VectorXd q = unit_gaussian(rng, 8);
    const auto ranked = query(index, q, IndexEntry{"q", "s", 0, 0, 0}, cfg, QueryMode::inter);
    std::vector<std::pair<double, std::size_t>> expected;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      expected.emplace_back(1.0 - rows[i].dot(q), i);
    }
    std::sort(expected.begin(), expected.end());
    REQUIRE(ranked.size() == expected.size());
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      CHECK(ranked[i].row == expected[i].second);
      CHECK(ranked[i].distance == Catch::Approx(expected[i].first).margin(1e-12));
    }
  }
  SECTION("insertion order cannot reorder exact ties") {
    const Eigen::VectorXd d = one_hot(4, 1);
    RetrievalIndex fwd, rev;
    fwd.add(d, IndexEntry{"a", "s", 0, 0, 0});
    fwd.add(d, IndexEntry{"b", "s", 0, 0, 0});
    rev.add(d, IndexEntry{"b", "s", 0, 0, 0});
    rev.add(d, IndexEntry{"a", "s", 0, 0, 0});
    const IndexEntry qm{"q", "s", 0, 0, 0};
    const auto r1 = query(fwd, d, qm, cfg, QueryMode::inter);
    const auto r2 = query(rev, d, qm, cfg, QueryMode::inter);
    CHECK(fwd.meta(r1[0].row).id == "a");
    CHECK(rev.meta(r2[0].row).id == "a");
  }
  SECTION("intra exclusion can empty the candidate set") {
    RetrievalIndex index = two_pass_index();
    // The very first entry has nothing earlier.
    const auto none = query(index, one_hot(6, 0), index.meta(0), cfg, QueryMode::intra);
    CHECK(none.empty());
    // A pass-two entry sees only pass one.
    const auto ranked = query(index, one_hot(6, 2), index.meta(8), cfg, QueryMode::intra);
    REQUIRE(ranked.size() == 6);
    for (const Candidate& c : ranked) CHECK(index.meta(c.row).timestamp < 100.0);
    CHECK(index.meta(ranked[0].row).id == "p0_2");
  }
  SECTION("empty index is a dataset error") {
    RetrievalIndex empty;
    CHECK_THROWS_AS(query(empty, one_hot(4, 0), IndexEntry{}, cfg, QueryMode::inter),
                    DatasetError);
  }
}

TEST_CASE("recall_at_n", "[retrieval]") {
  // Ranks of the first positive: 1, 3, never.
  std::vector<QueryOutcome> outcomes = {
      outcome(true, {true, false, false}, {0.9, 0.8, 0.7}),
      outcome(true, {false, false, true}, {0.9, 0.8, 0.7}),
      outcome(true, {false, false, false}, {0.9, 0.8, 0.7}),
  };
  CHECK(recall_at_n(outcomes, 1) == Catch::Approx(1.0 / 3).margin(1e-15));
  CHECK(recall_at_n(outcomes, 3) == Catch::Approx(2.0 / 3).margin(1e-15));
  CHECK(recall_at_n(outcomes, 100) == Catch::Approx(2.0 / 3).margin(1e-15));

  SECTION("queries without searchable positives leave the denominator") {
    outcomes.push_back(outcome(false, {false}, {0.5}));
    QueryOutcome skipped;
    skipped.skipped = true;
    outcomes.push_back(skipped);
    CHECK(recall_at_n(outcomes, 1) == Catch::Approx(1.0 / 3).margin(1e-15));
  }
  SECTION("monotone in n") {
    Rng rng(82);
    std::vector<QueryOutcome> random_outcomes;
    for (int q = 0; q < 40; ++q) {
      std::vector<bool> truth;
      bool any = false;
      for (int i = 0; i < 10; ++i) {
        const bool t = rng.uniform() < 0.2;
        truth.push_back(t);
        any = any || t;
      }
      random_outcomes.push_back(
          outcome(any || rng.uniform() < 0.5, truth, std::vector<double>(10, 0.5)));
    }
    double prev = 0.0;
    for (int n = 1; n <= 10; ++n) {
      const double r = recall_at_n(random_outcomes, n);
      CHECK(r >= prev);
      prev = r;
    }
  }
  SECTION("no eligible queries is an error") {
    std::vector<QueryOutcome> none = {outcome(false, {false}, {0.5})};
    CHECK_THROWS_AS(recall_at_n(none, 1), NumericError);
  }
}

TEST_CASE("max_f1", "[retrieval]") {
  SECTION("perfect top-1 gives 1") {
    std::vector<QueryOutcome> outcomes = {outcome(true, {true}, {0.9}),
                                          outcome(true, {true}, {0.7})};
    CHECK(max_f1(outcomes) == 1.0);
  }
  SECTION("all wrong gives 0") {
    std::vector<QueryOutcome> outcomes = {outcome(true, {false}, {0.9}),
                                          outcome(true, {false}, {0.7})};
    CHECK(max_f1(outcomes) == 0.0);
  }
  SECTION("hand-computed sweep") {
    std::vector<QueryOutcome> outcomes = {
        outcome(true, {true}, {0.9}),
        outcome(true, {false}, {0.8}),
        outcome(false, {false}, {0.5}),
    };
    // Best threshold is 0.9: precision 1, recall 1/2.
    CHECK(max_f1(outcomes) == Catch::Approx(2.0 / 3).margin(1e-15));
  }
  SECTION("matches an exhaustive threshold sweep on random tables") {
    Rng rng(83);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<QueryOutcome> outcomes;
      for (int q = 0; q < 25; ++q) {
        const bool correct = rng.uniform() < 0.5;
        const bool exists = correct || rng.uniform() < 0.5;
        outcomes.push_back(outcome(exists, {correct}, {rng.uniform()}));
      }
      double best = 0.0;
      for (const QueryOutcome& t : outcomes) {
        const double threshold = t.top_similarity[0];
        std::size_t tp = 0, fp = 0, fn = 0;
        for (const QueryOutcome& o : outcomes) {
          const bool match = o.top_similarity[0] >= threshold;
          if (match && o.top_positive[0]) ++tp;
          if (match && !o.top_positive[0]) ++fp;
          if (!match && o.has_positive) ++fn;
        }
        if (tp > 0) {
          const double p = static_cast<double>(tp) / (tp + fp);
          const double r = static_cast<double>(tp) / (tp + fn);
          best = std::max(best, 2 * p * r / (p + r));
        }
      }
      CHECK(max_f1(outcomes) == Catch::Approx(best).margin(1e-12));
    }
  }
}

TEST_CASE("mrr", "[retrieval]") {
  std::vector<QueryOutcome> outcomes = {
      outcome(true, {true, false}, {0.9, 0.8}),
      outcome(true, {false, true}, {0.9, 0.8}),
      outcome(true, {false, false}, {0.9, 0.8}),
  };
  CHECK(mrr(outcomes, 25) == Catch::Approx(0.5).margin(1e-15));
  CHECK(mrr(outcomes, 1) == Catch::Approx(1.0 / 3).margin(1e-15));

  std::vector<QueryOutcome> all_first = {outcome(true, {true}, {0.9})};
  CHECK(mrr(all_first, 25) == 1.0);
  std::vector<QueryOutcome> missed = {outcome(true, {false}, {0.9})};
  CHECK(mrr(missed, 25) == 0.0);
  CHECK_THROWS_AS(mrr(std::vector<QueryOutcome>{}, 25), NumericError);
}

TEST_CASE("metrics agree with rank-enumeration oracles on random tables", "[retrieval]") {
  Rng rng(84);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<QueryOutcome> outcomes;
    for (int q = 0; q < 30; ++q) {
      QueryOutcome o;
      o.skipped = rng.uniform() < 0.1;
      if (!o.skipped) {
        bool any = false;
        for (int i = 0; i < 8; ++i) {
          const bool t = rng.uniform() < 0.25;
          o.top_positive.push_back(t);
          o.top_similarity.push_back(rng.uniform());
          any = any || t;
        }
        o.has_positive = any || rng.uniform() < 0.3;
      }
      outcomes.push_back(std::move(o));
    }
    // Oracle: first-positive rank per query, then direct counting.
    std::size_t denom = 0;
    std::vector<int> first_rank;  // 0 = none
    for (const QueryOutcome& o : outcomes) {
      if (o.skipped || !o.has_positive) continue;
      ++denom;
      int rank = 0;
      for (std::size_t i = 0; i < o.top_positive.size(); ++i) {
        if (o.top_positive[i]) {
          rank = static_cast<int>(i) + 1;
          break;
        }
      }
      first_rank.push_back(rank);
    }
    if (denom == 0) continue;
    for (int n : {1, 3, 8}) {
      std::size_t hits = 0;
      for (int r : first_rank) {
        if (r >= 1 && r <= n) ++hits;
      }
      CHECK(recall_at_n(outcomes, n) ==
            Catch::Approx(static_cast<double>(hits) / denom).margin(1e-15));
    }
    double rr = 0.0;
    for (int r : first_rank) {
      if (r >= 1) rr += 1.0 / r;
    }
    CHECK(mrr(outcomes, 8) == Catch::Approx(rr / denom).margin(1e-14));
  }
}

TEST_CASE("intra protocol on a duplicated sequence", "[retrieval]") {
  const RetrievalIndex index = two_pass_index();
  EvalConfig cfg;
  const IntraReport report = evaluate_intra(index, cfg);
  CHECK(report.sequence == "loop");
  CHECK(report.queries == 12);
  CHECK(report.skipped == 6);  // all of pass one
  CHECK(report.recall_at_1 == 1.0);
  CHECK(report.f1_max == 1.0);
  REQUIRE(report.recall_vs_radius.size() == cfg.radius_curve.size());
  for (const auto& [radius, recall] : report.recall_vs_radius) {
    CHECK(recall == 1.0);  // the rank-1 match sits at the exact query position
  }

  CHECK_THROWS_AS(evaluate_intra(RetrievalIndex{}, cfg), DatasetError);
}

TEST_CASE("inter protocol on identical sequences is perfect", "[retrieval]") {
  Rng rng(85);
  RetrievalIndex a, b;
  for (int i = 0; i < 8; ++i) {
    const Eigen::VectorXd d = unit_gaussian(rng, 16);
    a.add(d, IndexEntry{"a" + std::to_string(i), "s1", i * 10.0, i * 20.0, 0});
    b.add(d, IndexEntry{"b" + std::to_string(i), "s2", i * 10.0, i * 20.0, 0});
  }
  EvalConfig cfg;
  const InterReport report = evaluate_inter(a, b, cfg);
  CHECK(report.query_sequence == "s1");
  CHECK(report.database_sequence == "s2");
  CHECK(report.queries == 8);
  CHECK(report.recall_at_1 == 1.0);
  CHECK(report.mrr == 1.0);

  CHECK_THROWS_AS(evaluate_inter(a, RetrievalIndex{}, cfg), DatasetError);
}

TEST_CASE("build_index joins descriptors with manifest metadata", "[retrieval]") {
  DescriptorSet set;
  set.rows.resize(2, 3);
  set.rows << 1, 0, 0, 0, 1, 0;
  set.ids = {"m0", "m1"};
  Manifest manifest(2);
  manifest[0] = SubmapRecord{"m0", "s", 0.0, "", Pose{1, 2, 0, 0, 0, 0, 1}};
  manifest[1] = SubmapRecord{"m1", "s", 10.0, "", Pose{3, 4, 0, 0, 0, 0, 1}};
  const RetrievalIndex index = build_index(set, manifest);
  REQUIRE(index.size() == 2);
  CHECK(index.meta(1).x == 3.0);
  CHECK(index.meta(1).y == 4.0);
  CHECK(index.meta(1).timestamp == 10.0);

  set.ids[1] = "missing";
  CHECK_THROWS_AS(build_index(set, manifest), DatasetError);
}

TEST_CASE("report CSVs are written with stable headers", "[retrieval]") {
  namespace fs = std::filesystem;
  const std::string dir = fs::temp_directory_path().string();

  std::vector<ReportRow> rows;
  IntraReport intra;
  intra.sequence = "loop";
  intra.recall_at_1 = 0.75;
  intra.f1_max = 0.5;
  intra.recall_vs_radius = {{1.0, 0.25}, {3.0, 0.75}};
  append_report_rows(rows, intra);
  InterReport inter;
  inter.query_sequence = "s1";
  inter.database_sequence = "s2";
  inter.recall_at_1 = 1.0;
  inter.mrr = 0.875;
  append_report_rows(rows, inter);

  const std::string report = dir + "/forestlpr-report.csv";
  save_report_csv(report, rows);
  std::ifstream in(report);
  std::string line;
  std::getline(in, line);
  CHECK(line == "protocol,sequence_pair,metric,value");
  std::getline(in, line);
  CHECK(line == "intra,loop,recall_at_1,0.75");
  std::getline(in, line);
  CHECK(line == "intra,loop,max_f1,0.5");
  std::getline(in, line);
  CHECK(line == "inter,s1->s2,recall_at_1,1");
  std::getline(in, line);
  CHECK(line == "inter,s1->s2,mrr,0.875");

  const std::string curve = dir + "/forestlpr-curve.csv";
  save_radius_curve_csv(curve, {intra});
  std::ifstream cin(curve);
  std::getline(cin, line);
  CHECK(line == "sequence,radius,recall_at_1");
  std::getline(cin, line);
  CHECK(line == "loop,1,0.25");
  std::getline(cin, line);
  CHECK(line == "loop,3,0.75");

  fs::remove(report);
  fs::remove(curve);
}
