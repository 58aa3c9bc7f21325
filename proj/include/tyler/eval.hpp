// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <array>
#include <span>
#include <string>
#include <vector>

#include "tyler/gnn.hpp"
#include "tyler/kgdata.hpp"
#include "tyler/rng.hpp"
#include "tyler/subgraph.hpp"

namespace tyler {

enum class Side { Head, Tail };

std::string_view to_string(Side s);

/// A positive triple and the corrupted entities it is ranked against.
struct RankingTask {
    Triple positive;
    Side side = Side::Tail;
    std::vector<EntityId> candidates;
    bool shortfall = false;  // fewer than the requested number were available

    Triple corrupted(EntityId candidate) const {
        Triple t = positive;
        (side == Side::Head ? t.head : t.tail) = candidate;
        return t;
    }
};

/// Draws n distinct corruptions of `positive` from the graph's entities. The
/// true answer is never drawn; with `known` set, corruptions that form a
/// known triple are skipped as well.
RankingTask generate_candidates(const KnowledgeGraph& graph, const Triple& positive, Side side,
                                std::size_t n, Rng& rng, const TripleSet* known = nullptr);

/// Pessimistic rank: 1 + #negatives scoring higher + #negatives tied.
std::size_t strict_rank(double positive, std::span<const double> negatives);

struct RankMetrics {
    double mrr = 0.0;
    double hits1 = 0.0;
    double hits10 = 0.0;
};

/// MRR and Hits@{1,10}. Throws DomainError on an empty list.
RankMetrics compute_metrics(std::span<const std::size_t> ranks);
/// Fraction of ranks <= k.
double hits_at(std::span<const std::size_t> ranks, std::size_t k);

/// Anything that scores an extracted subgraph for its target triple.
class TripleScorer {
public:
    virtual ~TripleScorer() = default;
    virtual double score(const EnclosingSubgraph& subgraph) const = 0;
    virtual bool knows_relation(RelationId) const { return true; }
};

class ModelScorer final : public TripleScorer {
public:
    ModelScorer(const Model& model, const EmbeddingStore* store) : model_(model), store_(store) {}
    double score(const EnclosingSubgraph& sg) const override;
    bool knows_relation(RelationId r) const override {
        return r < model_.config().relation_count;
    }

private:
    const Model& model_;
    const EmbeddingStore* store_;
};

struct EvalOptions {
    int runs = 5;
    std::uint64_t base_seed = 0;
    std::size_t negatives = 50;
    int hops = 3;
    /// Hide the positive triple from the inference graph for every
    /// extraction of its task.
    bool leave_one_out = false;
    std::size_t threads = 1;
};

struct TaskRecord {
    Triple triple;
    Side side = Side::Tail;
    int run = 0;
    std::size_t rank = 0;
    std::size_t candidates = 0;
    std::size_t ties = 0;
    std::size_t edges = 0;  // enclosing-subgraph edges, target triple included
    TypeGroup type_group = TypeGroup::Untyped;  // of the known (uncorrupted) entity
    bool shortfall = false;
};

struct BucketMetrics {
    std::string label;
    std::size_t count = 0;
    double hits10 = 0.0;
    double mrr = 0.0;
};

struct BucketReport {
    std::array<BucketMetrics, 4> type_groups;
    std::array<BucketMetrics, 4> structural;
    std::array<double, 3> cuts{};  // 25/50/75th percentiles of task edge counts
};

struct MetricsReport {
    std::vector<RankMetrics> runs;
    RankMetrics mean;
    RankMetrics stddev;  // population standard deviation over runs
    std::size_t tasks = 0;
    std::size_t skipped = 0;
    std::size_t tie_events = 0;
    std::size_t shortfalls = 0;
    BucketReport buckets;
};

struct EvalResult {
    MetricsReport report;
    std::vector<TaskRecord> records;  // task order, then run order
};

/// Ranks every test triple on both sides against sampled corruptions, once
/// per run. Tasks whose anchors are missing from the inference graph, or
/// whose relation the scorer does not know, are skipped and counted.
EvalResult evaluate(const TripleScorer& scorer, const KnowledgeGraph& inference,
                    std::span<const Triple> test, const TripleSet& known, const EvalOptions& options,
                    const TypeAnnotationIndex* types = nullptr);

/// Convenience: the bundle's test triples over its inference graph.
EvalResult evaluate(const Model& model, const EmbeddingStore* store, const DatasetBundle& bundle,
                    EvalOptions options, const TypeAnnotationIndex* types = nullptr);

/// Linear-interpolation percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

/// Hits@10 and MRR per type group of the known entity and per structural
/// quartile of enclosing-subgraph size.
BucketReport bucket_analysis(std::span<const TaskRecord> records);

struct PcaResult {
    Eigen::MatrixXd coords;           // n x out_dim
    Eigen::MatrixXd components;       // d x out_dim
    std::vector<double> explained;    // variance fraction per component
    bool degenerate = false;
};

/// Mean-centred projection onto the leading principal directions, found by
/// power iteration with deflation. Each component's first nonzero loading is
/// made positive.
PcaResult pca_project(std::span<const Eigen::VectorXd> vectors, int out_dim = 2);

std::string report_to_json(const MetricsReport& report, int indent = 2);
std::string report_to_table(const MetricsReport& report);
std::string record_to_json(const TaskRecord& record, const Vocabularies& vocab);
TaskRecord record_from_json(const std::string& line, const Vocabularies& vocab);

}  // namespace tyler
