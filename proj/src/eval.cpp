// SPDX-License-Identifier: Apache-2.0
#include "tyler/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>
#include <unordered_map>

#include "tyler/error.hpp"
#include "tyler/parallel.hpp"

namespace tyler {

using nlohmann::json;

std::string_view to_string(Side s) { return s == Side::Head ? "head" : "tail"; }

RankingTask generate_candidates(const KnowledgeGraph& graph, const Triple& positive, Side side,
                                std::size_t n, Rng& rng, const TripleSet* known) {
    RankingTask task{positive, side, {}, false};
    const EntityId truth = side == Side::Head ? positive.head : positive.tail;

    std::vector<EntityId> pool;
    pool.reserve(graph.entity_count());
    for (EntityId e : graph.entities()) {
        if (e == truth) continue;
        if (known && known->contains(task.corrupted(e))) continue;
        pool.push_back(e);
    }
    if (pool.size() <= n) {
        task.candidates = std::move(pool);
        task.shortfall = task.candidates.size() < n;
        return task;
    }
    // Partial Fisher-Yates: the first n slots end up a uniform n-subset.
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    task.candidates = std::move(pool);
    return task;
}

std::size_t strict_rank(double positive, std::span<const double> negatives) {
    if (std::isnan(positive)) throw NumericError("positive score is NaN");
    std::size_t rank = 1;
    for (double s : negatives) {
        if (std::isnan(s)) throw NumericError("candidate score is NaN");
        if (s >= positive) ++rank;
    }
    return rank;
}

double hits_at(std::span<const std::size_t> ranks, std::size_t k) {
    if (ranks.empty()) throw DomainError("no ranks to aggregate");
    std::size_t hit = 0;
    for (auto r : ranks) hit += r <= k;
    return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

RankMetrics compute_metrics(std::span<const std::size_t> ranks) {
    if (ranks.empty()) throw DomainError("no ranks to aggregate");
    double rr = 0.0;
    for (auto r : ranks) {
        if (r == 0) throw DomainError("rank must be >= 1");
        rr += 1.0 / static_cast<double>(r);
    }
    return {rr / static_cast<double>(ranks.size()), hits_at(ranks, 1), hits_at(ranks, 10)};
}

double ModelScorer::score(const EnclosingSubgraph& sg) const {
    return tyler::score(model_, sg, NodeFeatures{nullptr, store_});
}

namespace {

struct TaskOutcome {
    bool skipped = false;
    std::vector<TaskRecord> records;
};

RankMetrics mean_of(std::span<const RankMetrics> runs) {
    RankMetrics m;
    for (const auto& r : runs) {
        m.mrr += r.mrr;
        m.hits1 += r.hits1;
        m.hits10 += r.hits10;
    }
    const double n = static_cast<double>(runs.size());
    return {m.mrr / n, m.hits1 / n, m.hits10 / n};
}

RankMetrics stddev_of(std::span<const RankMetrics> runs, const RankMetrics& mean) {
    RankMetrics s;
    for (const auto& r : runs) {
        s.mrr += (r.mrr - mean.mrr) * (r.mrr - mean.mrr);
        s.hits1 += (r.hits1 - mean.hits1) * (r.hits1 - mean.hits1);
        s.hits10 += (r.hits10 - mean.hits10) * (r.hits10 - mean.hits10);
    }
    const double n = static_cast<double>(runs.size());
    return {std::sqrt(s.mrr / n), std::sqrt(s.hits1 / n), std::sqrt(s.hits10 / n)};
}

}  // namespace

EvalResult evaluate(const TripleScorer& scorer, const KnowledgeGraph& inference,
                    std::span<const Triple> test, const TripleSet& known, const EvalOptions& options,
                    const TypeAnnotationIndex* types) {
    if (options.runs < 1) throw DomainError("runs must be >= 1");
    if (options.negatives < 1) throw DomainError("negatives must be >= 1");

    const std::size_t task_count = test.size() * 2;
    std::vector<TaskOutcome> outcomes(task_count);

    parallel_for(task_count, options.threads, [&](std::size_t idx) {
        const std::size_t i = idx / 2;
        const Side side = idx % 2 == 0 ? Side::Head : Side::Tail;
        const Triple& t = test[i];
        auto& out = outcomes[idx];
        if (!inference.contains(t.head) || !inference.contains(t.tail) ||
            !scorer.knows_relation(t.rel)) {
            out.skipped = true;
            return;
        }
        const std::optional<Triple> mask =
            options.leave_one_out ? std::optional<Triple>(t) : std::nullopt;
        const EnclosingSubgraph positive = extract_enclosing(inference, t, options.hops, mask);
        const double pos_score = scorer.score(positive);
        const EntityId anchor = side == Side::Head ? t.tail : t.head;
        const TypeGroup group = types ? types->group(anchor) : TypeGroup::Untyped;

        std::unordered_map<EntityId, double> cache;
        std::vector<double> scores;
        for (int run = 0; run < options.runs; ++run) {
            Rng rng(derive_seed({options.base_seed, static_cast<std::uint64_t>(run), i,
                                 static_cast<std::uint64_t>(side)}));
            RankingTask task =
                generate_candidates(inference, t, side, options.negatives, rng, &known);
            scores.clear();
            for (EntityId c : task.candidates) {
                auto it = cache.find(c);
                if (it == cache.end()) {
                    auto sg = extract_enclosing(inference, task.corrupted(c), options.hops, mask);
                    it = cache.emplace(c, scorer.score(sg)).first;
                }
                scores.push_back(it->second);
            }
            TaskRecord rec;
            rec.triple = t;
            rec.side = side;
            rec.run = run;
            rec.rank = strict_rank(pos_score, scores);
            rec.candidates = scores.size();
            rec.ties = static_cast<std::size_t>(std::count(scores.begin(), scores.end(), pos_score));
            rec.edges = positive.edges.size() + 1;
            rec.type_group = group;
            rec.shortfall = task.shortfall;
            out.records.push_back(rec);
        }
    });

    EvalResult result;
    auto& report = result.report;
    std::vector<std::vector<std::size_t>> ranks(static_cast<std::size_t>(options.runs));
    for (auto& o : outcomes) {
        if (o.skipped) {
            ++report.skipped;
            continue;
        }
        ++report.tasks;
        for (auto& rec : o.records) {
            ranks[static_cast<std::size_t>(rec.run)].push_back(rec.rank);
            report.tie_events += rec.ties > 0;
            report.shortfalls += rec.shortfall;
            result.records.push_back(rec);
        }
    }
    if (report.tasks == 0) throw DomainError("no test triple could be evaluated");
    for (const auto& r : ranks) report.runs.push_back(compute_metrics(r));
    report.mean = mean_of(report.runs);
    report.stddev = stddev_of(report.runs, report.mean);
    report.buckets = bucket_analysis(result.records);
    return result;
}

EvalResult evaluate(const Model& model, const EmbeddingStore* store, const DatasetBundle& bundle,
                    EvalOptions options, const TypeAnnotationIndex* types) {
    options.leave_one_out = bundle.leave_one_out;
    options.hops = model.config().hops;
    TripleSet known;
    for (const KnowledgeGraph* g : {&bundle.train, &bundle.valid, &bundle.test, &bundle.inference})
        known.insert(g->triples().begin(), g->triples().end());
    ModelScorer scorer(model, model.config().semantic_enabled ? store : nullptr);
    return evaluate(scorer, bundle.inference, bundle.test.triples(), known, options, types);
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw DomainError("percentile of an empty sample");
    if (q < 0.0 || q > 100.0) throw DomainError("percentile must be within [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

BucketReport bucket_analysis(std::span<const TaskRecord> records) {
    BucketReport report;
    for (std::size_t g = 0; g < 4; ++g)
        report.type_groups[g].label = std::string(to_string(static_cast<TypeGroup>(g)));
    for (std::size_t b = 0; b < 4; ++b) report.structural[b].label = "Q" + std::to_string(b + 1);
    if (records.empty()) return report;

    int first_run = records.front().run;
    for (const auto& r : records) first_run = std::min(first_run, r.run);
    std::vector<double> sizes;
    for (const auto& r : records)
        if (r.run == first_run) sizes.push_back(static_cast<double>(r.edges));
    report.cuts = {percentile(sizes, 25), percentile(sizes, 50), percentile(sizes, 75)};

    std::array<std::vector<std::size_t>, 4> by_group, by_size;
    std::array<std::size_t, 4> group_tasks{}, size_tasks{};
    for (const auto& r : records) {
        const auto g = static_cast<std::size_t>(r.type_group);
        const double e = static_cast<double>(r.edges);
        std::size_t b = 3;
        for (std::size_t c = 0; c < 3; ++c) {
            if (e <= report.cuts[c]) {
                b = c;
                break;
            }
        }
        by_group[g].push_back(r.rank);
        by_size[b].push_back(r.rank);
        if (r.run == first_run) {
            ++group_tasks[g];
            ++size_tasks[b];
        }
    }
    auto fill = [](BucketMetrics& m, const std::vector<std::size_t>& ranks, std::size_t tasks) {
        m.count = tasks;
        if (ranks.empty()) return;
        auto metrics = compute_metrics(ranks);
        m.hits10 = metrics.hits10;
        m.mrr = metrics.mrr;
    };
    for (std::size_t i = 0; i < 4; ++i) {
        fill(report.type_groups[i], by_group[i], group_tasks[i]);
        fill(report.structural[i], by_size[i], size_tasks[i]);
    }
    return report;
}

PcaResult pca_project(std::span<const Eigen::VectorXd> vectors, int out_dim) {
    if (vectors.empty()) throw DomainError("PCA needs at least one vector");
    if (out_dim < 1) throw DomainError("PCA output dimension must be >= 1");
    const auto n = static_cast<Eigen::Index>(vectors.size());
    const Eigen::Index d = vectors.front().size();
    if (out_dim > d) throw DomainError("PCA output dimension exceeds input dimension");

    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (vectors[static_cast<std::size_t>(i)].size() != d)
            throw DomainError("PCA inputs have inconsistent dimensions");
        x.row(i) = vectors[static_cast<std::size_t>(i)].transpose();
    }
    x.rowwise() -= x.colwise().mean();
    Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n);
    const double total = cov.trace();

    PcaResult result;
    result.components = Eigen::MatrixXd::Zero(d, out_dim);
    result.explained.assign(static_cast<std::size_t>(out_dim), 0.0);
    result.degenerate = !(total > 1e-12);

    Eigen::MatrixXd residual = cov;
    for (int c = 0; c < out_dim; ++c) {
        // Fixed, non-symmetric start so the iteration is reproducible.
        Eigen::VectorXd start(d);
        for (Eigen::Index j = 0; j < d; ++j) start(j) = 1.0 + 0.1 * static_cast<double>(j);
        for (int p = 0; p < c; ++p) start -= start.dot(result.components.col(p)) * result.components.col(p);
        if (start.norm() < 1e-12) start = Eigen::VectorXd::Unit(d, c);
        start.normalize();

        Eigen::VectorXd v = start;
        double lambda = 0.0;
        if (!result.degenerate) {
            for (int it = 0; it < 10000; ++it) {
                Eigen::VectorXd w = residual * v;
                for (int p = 0; p < c; ++p)
                    w -= w.dot(result.components.col(p)) * result.components.col(p);
                const double norm = w.norm();
                if (norm < 1e-14 * total) break;  // remaining variance is zero
                w /= norm;
                const double change = std::min((w - v).norm(), (w + v).norm());
                v = w;
                if (change < 1e-12) break;
            }
            lambda = std::max(0.0, v.dot(residual * v));
            residual -= lambda * v * v.transpose();
            result.explained[static_cast<std::size_t>(c)] = lambda / total;
        }
        for (Eigen::Index j = 0; j < d; ++j) {
            if (std::abs(v(j)) > 1e-12) {
                if (v(j) < 0) v = -v;
                break;
            }
        }
        result.components.col(c) = v;
    }
    result.coords = x * result.components;
    return result;
}

namespace {

json metrics_json(const RankMetrics& m) {
    return {{"mrr", m.mrr}, {"hits1", m.hits1}, {"hits10", m.hits10}};
}

json buckets_json(const std::array<BucketMetrics, 4>& buckets) {
    json arr = json::array();
    for (const auto& b : buckets)
        arr.push_back({{"label", b.label}, {"count", b.count}, {"hits10", b.hits10}, {"mrr", b.mrr}});
    return arr;
}

}  // namespace

std::string report_to_json(const MetricsReport& report, int indent) {
    json runs = json::array();
    for (const auto& r : report.runs) runs.push_back(metrics_json(r));
    json j = {
        {"runs", runs},
        {"mean", metrics_json(report.mean)},
        {"std", metrics_json(report.stddev)},
        {"tasks", report.tasks},
        {"skipped", report.skipped},
        {"tie_events", report.tie_events},
        {"shortfalls", report.shortfalls},
        {"buckets",
         {{"cuts", report.buckets.cuts},
          {"type_groups", buckets_json(report.buckets.type_groups)},
          {"structural", buckets_json(report.buckets.structural)}}},
    };
    return j.dump(indent);
}

std::string report_to_table(const MetricsReport& report) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "tasks " << report.tasks << "  skipped " << report.skipped << "  tie events "
       << report.tie_events << "  runs " << report.runs.size() << "\n";
    os << "metric    mean     std\n";
    os << "MRR       " << report.mean.mrr << "   " << report.stddev.mrr << "\n";
    os << "Hits@1    " << report.mean.hits1 << "   " << report.stddev.hits1 << "\n";
    os << "Hits@10   " << report.mean.hits10 << "   " << report.stddev.hits10 << "\n";
    auto section = [&](const char* title, const std::array<BucketMetrics, 4>& buckets) {
        os << title << "\n";
        for (const auto& b : buckets)
            os << "  " << std::left << std::setw(10) << b.label << std::right << " n=" << std::setw(5)
               << b.count << "  H@10 " << b.hits10 << "  MRR " << b.mrr << "\n";
    };
    section("by type group", report.buckets.type_groups);
    os << "structural cuts " << report.buckets.cuts[0] << " " << report.buckets.cuts[1] << " "
       << report.buckets.cuts[2] << "\n";
    section("by subgraph size", report.buckets.structural);
    return os.str();
}

std::string record_to_json(const TaskRecord& r, const Vocabularies& vocab) {
    json j = {
        {"triple",
         {vocab.entities.name(r.triple.head), vocab.relations.name(r.triple.rel),
          vocab.entities.name(r.triple.tail)}},
        {"side", to_string(r.side)},
        {"run", r.run},
        {"rank", r.rank},
        {"candidates", r.candidates},
        {"ties", r.ties},
        {"edges", r.edges},
        {"type_group", static_cast<int>(r.type_group)},
        {"shortfall", r.shortfall},
    };
    return j.dump();
}

TaskRecord record_from_json(const std::string& line, const Vocabularies& vocab) {
    try {
        json j = json::parse(line);
        const auto& names = j.at("triple");
        auto head = vocab.entities.find(names.at(0).get<std::string>());
        auto rel = vocab.relations.find(names.at(1).get<std::string>());
        auto tail = vocab.entities.find(names.at(2).get<std::string>());
        if (!head || !rel || !tail) throw LookupError("record names an unknown entity or relation");
        TaskRecord r;
        r.triple = {*head, *rel, *tail};
        r.side = j.at("side").get<std::string>() == "head" ? Side::Head : Side::Tail;
        r.run = j.value("run", 0);
        r.rank = j.at("rank").get<std::size_t>();
        r.candidates = j.value("candidates", std::size_t{0});
        r.ties = j.value("ties", std::size_t{0});
        r.edges = j.at("edges").get<std::size_t>();
        const int g = j.at("type_group").get<int>();
        if (g < 0 || g > 3) throw FormatError("type_group out of range");
        r.type_group = static_cast<TypeGroup>(g);
        r.shortfall = j.value("shortfall", false);
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed task record: ") + e.what());
    }
}

}  // namespace tyler
