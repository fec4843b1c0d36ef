#ifndef FORESTLPR_RETRIEVAL_HPP
#define FORESTLPR_RETRIEVAL_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "forestlpr/descriptor_io.hpp"
#include "forestlpr/error.hpp"
#include "forestlpr/manifest.hpp"

namespace forestlpr {

struct EvalConfig {
  double success_radius = 3.0;     // meters
  double temporal_exclusion = 600.0;  // seconds; 100 suits short sequences
  int top_k = 25;
  std::vector<double> radius_curve = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  void validate() const {
    if (!(success_radius > 0.0)) throw ConfigError("eval.success_radius must be > 0");
    if (temporal_exclusion < 0.0) throw ConfigError("eval.temporal_exclusion must be >= 0");
    if (top_k < 1) throw ConfigError("eval.top_k must be >= 1");
  }
};

struct IndexEntry {
  std::string id;
  std::string sequence;
  double timestamp = 0.0;
  double x = 0.0, y = 0.0;  // 2D position for the success radius
};

class RetrievalIndex {
 public:
  void add(const Eigen::VectorXd& descriptor, IndexEntry meta) {
    const double n = descriptor.norm();
    if (std::abs(n - 1.0) > 1e-5) {
      throw NumericError("RetrievalIndex: descriptor for \"" + meta.id +
                         "\" is not unit-norm (|v| = " + std::to_string(n) + ")");
    }
    if (rows_.size() == 0) {
      rows_.resize(0, descriptor.size());
    } else if (rows_.cols() != descriptor.size()) {
      throw UsageError("RetrievalIndex: descriptor dimension mismatch");
    }
    rows_.conservativeResize(rows_.rows() + 1, Eigen::NoChange);
    rows_.row(rows_.rows() - 1) = descriptor.transpose();
    meta_.push_back(std::move(meta));
  }

  std::size_t size() const { return meta_.size(); }
  const IndexEntry& meta(std::size_t row) const { return meta_[row]; }
  const Eigen::MatrixXd& descriptors() const { return rows_; }

 private:
  Eigen::MatrixXd rows_;
  std::vector<IndexEntry> meta_;
};

inline RetrievalIndex build_index(const DescriptorSet& set, const Manifest& manifest) {
  const auto by_id = manifest_index(manifest);
  RetrievalIndex index;
  for (Eigen::Index i = 0; i < set.rows.rows(); ++i) {
    auto it = by_id.find(set.ids[static_cast<std::size_t>(i)]);
    if (it == by_id.end()) {
      throw DatasetError("descriptor id \"" + set.ids[static_cast<std::size_t>(i)] +
                         "\" missing from manifest");
    }
    const SubmapRecord& rec = manifest[it->second];
    index.add(set.rows.row(i).transpose(),
              IndexEntry{rec.id, rec.sequence, rec.timestamp, rec.pose.tx, rec.pose.ty});
  }
  return index;
}

struct Candidate {
  std::size_t row = 0;
  double distance = 0.0;  // cosine distance, 1 - dot for unit vectors
};

enum class QueryMode { intra, inter };

// Ranked candidates by ascending cosine distance. Intra mode searches only
// strictly earlier entries outside the temporal exclusion window; inter mode
// searches everything. Empty result means every entry was excluded.
inline std::vector<Candidate> query(const RetrievalIndex& index,
                                    const Eigen::VectorXd& descriptor,
                                    const IndexEntry& query_meta, const EvalConfig& cfg,
                                    QueryMode mode) {
  cfg.validate();
  if (index.size() == 0) throw DatasetError("query: empty retrieval index");
  std::vector<Candidate> out;
  out.reserve(index.size());
  const Eigen::VectorXd dots = index.descriptors() * descriptor;
  for (std::size_t row = 0; row < index.size(); ++row) {
    if (mode == QueryMode::intra) {
      const double dt = query_meta.timestamp - index.meta(row).timestamp;
      if (dt <= 0.0) continue;  // later than (or simultaneous with) the query
      if (dt < cfg.temporal_exclusion) continue;
    }
    out.push_back(Candidate{row, 1.0 - dots(static_cast<Eigen::Index>(row))});
  }
  std::sort(out.begin(), out.end(), [&index](const Candidate& a, const Candidate& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return index.meta(a.row).id < index.meta(b.row).id;  // row-order independence
  });
  return out;
}

// ---------------------------------------------------------------------------
// Metrics. Retrieval tables keep, per query, whether any true positive was
// searchable plus the truth/similarity of the top-K candidates.
// ---------------------------------------------------------------------------

struct QueryOutcome {
  bool has_positive = false;       // >= 1 true positive among searchable entries
  bool skipped = false;            // every database entry was excluded
  std::vector<bool> top_positive;  // truth per rank (ascending distance)
  std::vector<double> top_similarity;
};

// Fraction of queries with a true positive in the top N, over queries that
// have at least one searchable positive.
inline double recall_at_n(const std::vector<QueryOutcome>& outcomes, int n) {
  std::size_t denom = 0, hits = 0;
  for (const QueryOutcome& q : outcomes) {
    if (q.skipped || !q.has_positive) continue;
    ++denom;
    const std::size_t limit = std::min<std::size_t>(q.top_positive.size(),
                                                    static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < limit; ++i) {
      if (q.top_positive[i]) {
        ++hits;
        break;
      }
    }
  }
  if (denom == 0) throw NumericError("recall_at_n: no queries with searchable positives");
  return static_cast<double>(hits) / static_cast<double>(denom);
}

// Max F1 over top-1 similarity thresholds; the sweep grid is every distinct
// top-1 similarity, which attains the exact maximum.
inline double max_f1(const std::vector<QueryOutcome>& outcomes) {
  struct Top1 {
    double similarity;
    bool correct;
    bool positive_exists;
  };
  std::vector<Top1> tops;
  std::set<double> grid;
  for (const QueryOutcome& q : outcomes) {
    if (q.skipped || q.top_similarity.empty()) continue;
    tops.push_back(Top1{q.top_similarity[0], q.top_positive[0], q.has_positive});
    grid.insert(q.top_similarity[0]);
  }
  if (tops.empty()) throw NumericError("max_f1: no queries");
  double best = 0.0;
  for (double threshold : grid) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const Top1& t : tops) {
      const bool match = t.similarity >= threshold;
      if (match && t.correct) ++tp;
      if (match && !t.correct) ++fp;
      if (!match && t.positive_exists) ++fn;
    }
    if (tp == 0) continue;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    best = std::max(best, 2.0 * precision * recall / (precision + recall));
  }
  return best;
}

// Mean reciprocal rank of the first positive within the top K; 0 when absent.
inline double mrr(const std::vector<QueryOutcome>& outcomes, int k) {
  std::size_t denom = 0;
  double sum = 0.0;
  for (const QueryOutcome& q : outcomes) {
    if (q.skipped || !q.has_positive) continue;
    ++denom;
    const std::size_t limit =
        std::min<std::size_t>(q.top_positive.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < limit; ++i) {
      if (q.top_positive[i]) {
        sum += 1.0 / static_cast<double>(i + 1);
        break;
      }
    }
  }
  if (denom == 0) throw NumericError("mrr: no queries with searchable positives");
  return sum / static_cast<double>(denom);
}

// ---------------------------------------------------------------------------
// Protocols.
// ---------------------------------------------------------------------------

namespace detail {

inline bool within_radius(const IndexEntry& a, const IndexEntry& b, double radius) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy) <= radius;
}

// Builds per-query outcomes for a fixed success radius.
inline std::vector<QueryOutcome> run_queries(const RetrievalIndex& db,
                                             const RetrievalIndex& queries,
                                             const EvalConfig& cfg, QueryMode mode,
                                             double radius) {
  std::vector<QueryOutcome> outcomes;
  outcomes.reserve(queries.size());
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const IndexEntry& qmeta = queries.meta(qi);
    const std::vector<Candidate> ranked =
        query(db, queries.descriptors().row(static_cast<Eigen::Index>(qi)).transpose(),
              qmeta, cfg, mode);
    QueryOutcome o;
    if (ranked.empty()) {
      o.skipped = true;
      outcomes.push_back(std::move(o));
      continue;
    }
    for (const Candidate& c : ranked) {
      if (within_radius(qmeta, db.meta(c.row), radius)) {
        o.has_positive = true;
        break;
      }
    }
    const std::size_t limit =
        std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(cfg.top_k));
    for (std::size_t i = 0; i < limit; ++i) {
      o.top_positive.push_back(within_radius(qmeta, db.meta(ranked[i].row), radius));
      o.top_similarity.push_back(1.0 - ranked[i].distance);
    }
    outcomes.push_back(std::move(o));
  }
  return outcomes;
}

}  // namespace detail

struct IntraReport {
  std::string sequence;
  double recall_at_1 = 0.0;
  double f1_max = 0.0;
  std::vector<std::pair<double, double>> recall_vs_radius;  // (radius, R@1)
  std::size_t queries = 0;
  std::size_t skipped = 0;
};

// Loop-closure protocol: every submap queries the strictly earlier part of
// its own sequence outside the exclusion window.
inline IntraReport evaluate_intra(const RetrievalIndex& index, const EvalConfig& cfg) {
  cfg.validate();
  if (index.size() == 0) throw DatasetError("evaluate_intra: empty sequence");
  IntraReport report;
  report.sequence = index.meta(0).sequence;
  const std::vector<QueryOutcome> outcomes =
      detail::run_queries(index, index, cfg, QueryMode::intra, cfg.success_radius);
  report.queries = outcomes.size();
  for (const QueryOutcome& o : outcomes) {
    if (o.skipped) ++report.skipped;
  }
  report.recall_at_1 = recall_at_n(outcomes, 1);
  report.f1_max = max_f1(outcomes);
  for (double radius : cfg.radius_curve) {
    const std::vector<QueryOutcome> at_radius =
        detail::run_queries(index, index, cfg, QueryMode::intra, radius);
    report.recall_vs_radius.emplace_back(radius, recall_at_n(at_radius, 1));
  }
  return report;
}

struct InterReport {
  std::string query_sequence;
  std::string database_sequence;
  double recall_at_1 = 0.0;
  double mrr = 0.0;
  std::size_t queries = 0;
};

// Re-localization protocol: one sequence queries another, no temporal
// exclusion. Queries without positives in this specific database fall out of
// the denominator.
inline InterReport evaluate_inter(const RetrievalIndex& queries, const RetrievalIndex& database,
                                  const EvalConfig& cfg) {
  cfg.validate();
  if (queries.size() == 0 || database.size() == 0) {
    throw DatasetError("evaluate_inter: empty query or database sequence");
  }
  InterReport report;
  report.query_sequence = queries.meta(0).sequence;
  report.database_sequence = database.meta(0).sequence;
  const std::vector<QueryOutcome> outcomes =
      detail::run_queries(database, queries, cfg, QueryMode::inter, cfg.success_radius);
  report.queries = outcomes.size();
  report.recall_at_1 = recall_at_n(outcomes, 1);
  report.mrr = mrr(outcomes, cfg.top_k);
  return report;
}

// ---------------------------------------------------------------------------
// Report CSVs: one row per (protocol, sequence-pair, metric, value).
// ---------------------------------------------------------------------------

struct ReportRow {
  std::string protocol;
  std::string sequence_pair;
  std::string metric;
  double value = 0.0;
};

inline void append_report_rows(std::vector<ReportRow>& rows, const IntraReport& r) {
  rows.push_back({"intra", r.sequence, "recall_at_1", r.recall_at_1});
  rows.push_back({"intra", r.sequence, "max_f1", r.f1_max});
}

inline void append_report_rows(std::vector<ReportRow>& rows, const InterReport& r) {
  const std::string pair = r.query_sequence + "->" + r.database_sequence;
  rows.push_back({"inter", pair, "recall_at_1", r.recall_at_1});
  rows.push_back({"inter", pair, "mrr", r.mrr});
}

inline void save_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(path + ": cannot open file for writing");
  out << "protocol,sequence_pair,metric,value\n";
  out.precision(10);
  for (const ReportRow& r : rows) {
    out << r.protocol << "," << r.sequence_pair << "," << r.metric << "," << r.value << "\n";
  }
}

inline void save_radius_curve_csv(const std::string& path,
                                  const std::vector<IntraReport>& reports) {
  std::ofstream out(path);
  if (!out) throw Error(path + ": cannot open file for writing");
  out << "sequence,radius,recall_at_1\n";
  out.precision(10);
  for (const IntraReport& r : reports) {
    for (const auto& [radius, recall] : r.recall_vs_radius) {
      out << r.sequence << "," << radius << "," << recall << "\n";
    }
  }
}

}  // namespace forestlpr

#endif
