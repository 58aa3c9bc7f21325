// SPDX-License-Identifier: Apache-2.0
#include "tyler/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>

#include "tyler/error.hpp"
#include "tyler/eval.hpp"
#include "tyler/parallel.hpp"
#include "tyler/toy.hpp"
#include "tyler/train.hpp"

namespace tyler {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

struct Options {
    std::string data;
    std::string embeddings;
    std::string config;
    std::string out;
    std::string model;
    std::string records;
    std::uint64_t seed = 0;
    std::size_t threads = default_threads();
    bool no_semantic = false;
    std::string aggregation;
    int runs = 5;
    bool yago = false;
    std::string fallback = "zero";
    std::uint32_t fallback_dim = 16;

    // extract-demo
    std::string u, v, rel, graph = "train";
    int k = 3;

    // train overrides, mirroring config keys
    double lr = 0.0;
    int epochs = 0;
    int patience = 0;
    std::size_t batch_size = 0;
    double margin = 0.0;
    int validate_every = 0;
    std::size_t valid_negatives = 0;
    int hops = 0;
    int layers = 0;
    std::size_t hidden_dim = 0;
    std::size_t bases = 0;
    std::size_t attention_dim = 0;
    std::size_t sem_dim = 0;
    std::size_t proj_dim = 0;
};

void write_file(const fs::path& file, const std::string& text) {
    std::ofstream f(file, std::ios::binary);
    if (!f) throw NotFoundError("cannot write " + file.string());
    f << text;
}

DatasetBundle load_data(const Options& o) {
    if (o.data.empty()) throw UsageError("--data is required");
    BundleOptions bo;
    bo.leave_one_out = o.yago;
    return load_bundle(o.data, bo);
}

MissingPolicy parse_policy(const std::string& s) {
    if (s == "zero") return MissingPolicy::Zero;
    if (s == "hash") return MissingPolicy::Hash;
    throw UsageError("--fallback must be zero or hash");
}

/// Store the run was trained with: an on-disk store if given, else an empty
/// one in which every entity takes the fallback.
EmbeddingStore open_store(const std::string& dir, std::uint32_t fallback_dim) {
    if (!dir.empty()) return EmbeddingStore::load(dir);
    StoreManifest m;
    m.model = "none";
    m.prompts = default_prompts();
    m.dim = fallback_dim;
    return EmbeddingStore(std::move(m), {});
}

json stats_json(const KnowledgeGraph& g) {
    json j = {{"entities", g.entity_count()},
              {"relations", g.relation_count()},
              {"triples", g.triples().size()}};
    j["density"] = g.entity_count() ? json(density(g)) : json(nullptr);
    return j;
}

int cmd_validate(const Options& o, std::ostream& out) {
    auto b = load_data(o);
    std::vector<Triple> held = b.inference.triples();
    held.insert(held.end(), b.test.triples().begin(), b.test.triples().end());
    auto report = validate_inductive(b.train, KnowledgeGraph(held, b.vocab.entities.size()));
    json overlap = json::array(), unknown = json::array();
    for (auto e : report.entity_overlap) overlap.push_back(b.vocab.entities.name(e));
    for (auto r : report.unknown_relations) unknown.push_back(b.vocab.relations.name(r));
    json j = {{"entity_overlap", overlap},
              {"unknown_relations", unknown},
              {"missing_labels", b.missing_label_count()},
              {"warnings", b.warnings}};
    out << j.dump(2) << "\n";
    return report.valid() ? 0 : 2;
}

int cmd_stats(const Options& o, std::ostream& out) {
    auto b = load_data(o);
    json j = {{"train", stats_json(b.train)},
              {"valid", stats_json(b.valid)},
              {"test", stats_json(b.test)},
              {"inference", stats_json(b.inference)}};
    out << j.dump(2) << "\n";
    return 0;
}

int cmd_extract(const Options& o, std::ostream& out) {
    auto b = load_data(o);
    auto u = b.vocab.entities.find(o.u);
    auto v = b.vocab.entities.find(o.v);
    if (!u || !v) throw LookupError("unknown entity " + (u ? o.v : o.u));
    // Without --rel no stored triple is the target, so nothing is removed.
    RelationId rel = static_cast<RelationId>(b.vocab.relations.size());
    if (!o.rel.empty()) {
        auto r = b.vocab.relations.find(o.rel);
        if (!r) throw LookupError("unknown relation " + o.rel);
        rel = *r;
    }
    const KnowledgeGraph* g = nullptr;
    if (o.graph == "train") g = &b.train;
    else if (o.graph == "inference") g = &b.inference;
    else throw UsageError("--graph must be train or inference");

    auto sg = extract_enclosing(*g, Triple{*u, rel, *v}, o.k);
    json nodes = json::array(), edges = json::array();
    for (std::size_t i = 0; i < sg.size(); ++i)
        nodes.push_back({{"entity", b.vocab.entities.name(sg.nodes[i])},
                         {"d_u", sg.dist_u[i]},
                         {"d_v", sg.dist_v[i]}});
    for (const auto& e : sg.edges)
        edges.push_back({b.vocab.entities.name(sg.nodes[e.head]), b.vocab.relations.name(e.rel),
                         b.vocab.entities.name(sg.nodes[e.tail])});
    json j = {{"u", o.u}, {"v", o.v}, {"k", o.k}, {"nodes", nodes}, {"edges", edges}};
    if (!o.rel.empty()) j["relation"] = o.rel;
    out << j.dump(2) << "\n";
    return 0;
}

int cmd_import(const Options& o, std::ostream& out) {
    if (o.embeddings.empty()) throw UsageError("--embeddings is required");
    auto store = EmbeddingStore::load(o.embeddings);
    json j = {{"model", store.manifest().model},
              {"dim", store.dim()},
              {"prompts", store.prompt_count()},
              {"records", store.record_count()},
              {"entities", store.entity_names().size()}};
    if (!o.data.empty()) {
        auto b = load_data(o);
        const double cov = store.coverage(b.vocab.entities);
        j["coverage"] = cov;
        out << "coverage " << std::fixed << std::setprecision(2) << 100.0 * cov << "%\n";
    }
    if (!o.out.empty()) {
        store.save(o.out);
        j["written"] = o.out;
    }
    out << j.dump(2) << "\n";
    return 0;
}

TrainConfig resolve_config(const Options& o, const CLI::App& sub) {
    TrainConfig c;
    c.threads = o.threads;
    if (!o.config.empty()) {
        if (!fs::exists(o.config)) throw UsageError("config file not found: " + o.config);
        c = load_train_config(o.config, c);
    }
    auto given = [&](const char* name) { return sub.count(name) > 0; };
    if (given("--seed")) c.seed = o.seed;
    if (given("--no-semantic")) c.semantic_enabled = false;
    if (given("--aggregation")) {
        try {
            c.aggregation = parse_aggregation(o.aggregation);
        } catch (const DomainError& e) {
            throw UsageError(e.what());
        }
    }
    if (given("--lr")) c.lr = o.lr;
    if (given("--epochs")) c.epochs = o.epochs;
    if (given("--patience")) c.patience = o.patience;
    if (given("--batch-size")) c.batch_size = o.batch_size;
    if (given("--margin")) c.margin = o.margin;
    if (given("--validate-every")) c.validate_every = o.validate_every;
    if (given("--valid-negatives")) c.valid_negatives = o.valid_negatives;
    if (given("--hops")) c.hops = o.hops;
    if (given("--layers")) c.layers = o.layers;
    if (given("--hidden-dim")) c.hidden_dim = o.hidden_dim;
    if (given("--bases")) c.bases = o.bases;
    if (given("--attention-dim")) c.attention_dim = o.attention_dim;
    if (given("--sem-dim")) c.sem_dim = o.sem_dim;
    if (given("--proj-dim")) c.proj_dim = o.proj_dim;
    if (given("--threads")) c.threads = o.threads;
    c.validate();
    return c;
}

int cmd_train(const Options& o, const CLI::App& sub, std::ostream& out, std::ostream& err) {
    if (o.out.empty()) throw UsageError("--out is required");
    TrainConfig config = resolve_config(o, sub);
    auto bundle = load_data(o);
    for (const auto& w : bundle.warnings) err << "warning: " << w << "\n";

    const MissingPolicy policy = parse_policy(o.fallback);
    EmbeddingStore store = open_store(o.embeddings, o.fallback_dim);
    if (config.semantic_enabled) {
        if (o.embeddings.empty())
            err << "warning: no --embeddings; every entity uses the " << o.fallback << " fallback\n";
        store.bind(bundle, policy, config.seed);
    }

    fs::create_directories(o.out);
    std::ofstream log(fs::path(o.out) / "train_log.jsonl", std::ios::binary);
    if (!log) throw NotFoundError("cannot write training log under " + o.out);
    auto result = fit(bundle, config.semantic_enabled ? &store : nullptr, config,
                      [&](const ValidationEvent& ev) {
                          log << event_to_json(ev) << "\n";
                          out << event_to_json(ev) << "\n";
                      });
    for (const auto& w : result.log.warnings) err << "warning: " << w << "\n";

    result.model.save(fs::path(o.out) / "model");
    write_file(fs::path(o.out) / "config.json", train_config_to_json(config) + "\n");
    json run = {{"semantic", config.semantic_enabled},
                {"embeddings", o.embeddings.empty() ? json(nullptr) : json(o.embeddings)},
                {"fallback", o.fallback},
                {"fallback_seed", config.seed},
                {"fallback_dim", store.dim()}};
    write_file(fs::path(o.out) / "run.json", run.dump(2) + "\n");
    json summary = {{"batches", result.log.batches},
                    {"stopped_early", result.log.stopped_early},
                    {"best_val_mrr", result.log.best_mrr ? json(*result.log.best_mrr) : json(nullptr)},
                    {"epoch_losses", result.log.epoch_losses}};
    write_file(fs::path(o.out) / "summary.json", summary.dump(2) + "\n");
    return 0;
}

/// Model plus a store bound the same way as during training.
struct LoadedRun {
    Model model;
    EmbeddingStore store;
};

LoadedRun load_run(const Options& o, const DatasetBundle& bundle) {
    if (o.model.empty()) throw UsageError("--model is required");
    const fs::path dir(o.model);
    const fs::path ckpt = fs::exists(dir / "model") ? dir / "model" : dir;
    LoadedRun r{Model::load(ckpt), {}};

    json run = {{"fallback", "zero"}, {"fallback_seed", 0}, {"fallback_dim", 16}};
    if (fs::exists(dir / "run.json")) {
        std::ifstream f(dir / "run.json");
        try {
            run.update(json::parse(f));
        } catch (const json::exception& e) {
            throw FormatError(std::string("run.json: ") + e.what());
        }
    }
    std::string emb = o.embeddings;
    if (emb.empty() && run.contains("embeddings") && run["embeddings"].is_string())
        emb = run["embeddings"].get<std::string>();
    r.store = open_store(emb, run["fallback_dim"].get<std::uint32_t>());
    if (r.model.config().semantic_enabled)
        r.store.bind(bundle, parse_policy(run["fallback"].get<std::string>()),
                     run["fallback_seed"].get<std::uint64_t>());
    return r;
}

int cmd_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
    auto bundle = load_data(o);
    for (const auto& w : bundle.warnings) err << "warning: " << w << "\n";
    auto run = load_run(o, bundle);
    auto types = build_type_index(bundle.type_links);

    EvalOptions eo;
    eo.runs = o.runs;
    eo.base_seed = o.seed;
    eo.threads = o.threads;
    auto result = evaluate(run.model, &run.store, bundle, eo, &types);
    if (result.report.skipped > 0)
        err << "skipped " << result.report.skipped << " tasks with anchors outside the inference graph\n";

    out << report_to_table(result.report);
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        write_file(fs::path(o.out) / "metrics.json", report_to_json(result.report) + "\n");
        std::ofstream rec(fs::path(o.out) / "records.jsonl", std::ios::binary);
        for (const auto& r : result.records) rec << record_to_json(r, bundle.vocab) << "\n";
    }
    return 0;
}

int cmd_analyze(const Options& o, std::ostream& out) {
    if (o.records.empty()) throw UsageError("--records is required");
    auto bundle = load_data(o);
    std::ifstream in(o.records);
    if (!in) throw NotFoundError("cannot open " + o.records);
    std::vector<TaskRecord> records;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) records.push_back(record_from_json(line, bundle.vocab));
    MetricsReport report;
    report.buckets = bucket_analysis(records);
    json j = json::parse(report_to_json(report))["buckets"];
    out << j.dump(2) << "\n";
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        write_file(fs::path(o.out) / "buckets.json", j.dump(2) + "\n");
    }
    return 0;
}

int cmd_export_pca(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw UsageError("--out is required");
    auto bundle = load_data(o);
    auto run = load_run(o, bundle);
    const NodeFeatures features{nullptr, run.model.config().semantic_enabled ? &run.store : nullptr};

    // One point per distinct tail entity of the test triples, taken from the
    // final layer of that triple's enclosing subgraph.
    std::vector<EntityId> entities;
    std::vector<const Triple*> triples;
    std::unordered_set<EntityId> seen;
    for (const auto& t : bundle.test.triples()) {
        if (!bundle.inference.contains(t.head) || !bundle.inference.contains(t.tail)) continue;
        if (t.rel >= run.model.config().relation_count) continue;
        if (seen.insert(t.tail).second) {
            entities.push_back(t.tail);
            triples.push_back(&t);
        }
    }
    if (entities.size() < 2) throw DataError("fewer than two test entities to project");
    std::vector<Eigen::VectorXd> vecs(entities.size());
    parallel_for(entities.size(), o.threads, [&](std::size_t i) {
        auto mask = bundle.leave_one_out ? std::optional<Triple>(*triples[i]) : std::nullopt;
        auto sg = extract_enclosing(bundle.inference, *triples[i], run.model.config().hops, mask);
        vecs[i] = tail_embedding(run.model, sg, features);
    });
    auto pca = pca_project(vecs, 2);

    const fs::path file(o.out);
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream csv(file, std::ios::binary);
    if (!csv) throw NotFoundError("cannot write " + file.string());
    csv << "entity,x,y\n" << std::setprecision(17);
    for (std::size_t i = 0; i < entities.size(); ++i) {
        const auto idx = static_cast<Eigen::Index>(i);
        csv << bundle.vocab.entities.name(entities[i]) << "," << pca.coords(idx, 0) << ","
            << pca.coords(idx, 1) << "\n";
    }
    json j = {{"points", entities.size()}, {"explained", pca.explained}, {"degenerate", pca.degenerate}};
    out << j.dump(2) << "\n";
    return 0;
}

int cmd_make_toy(const Options& o, std::ostream& out) {
    if (o.out.empty()) throw UsageError("--out is required");
    ToyOptions t;
    t.seed = o.seed;
    write_toy_dataset(o.out, t);
    out << "wrote " << o.out << " and " << o.out << "_ind\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Inductive link prediction with subgraph reasoning and language-model entity features",
                 "tyler"};
    app.require_subcommand(1, 1);

    auto data = [&](CLI::App* s, bool required = true) {
        auto* opt = s->add_option("--data", o.data, "Dataset directory (GraIL layout)");
        if (required) opt->required();
        s->add_flag("--yago-mode", o.yago, "Leave-one-out inference over the test triples");
    };
    auto common = [&](CLI::App* s) {
        s->add_option("--seed", o.seed, "Seed for every stochastic step");
        s->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
    };

    auto* validate = app.add_subcommand("validate-data", "Check an inductive split");
    data(validate);
    auto* stats = app.add_subcommand("stats", "Entity/relation/triple counts and density");
    data(stats);

    auto* extract = app.add_subcommand("extract-demo", "Dump one enclosing subgraph as JSON");
    data(extract);
    extract->add_option("--u", o.u, "Head entity")->required();
    extract->add_option("--v", o.v, "Tail entity")->required();
    extract->add_option("--k", o.k, "Hop budget")->check(CLI::Range(1, 16));
    extract->add_option("--rel", o.rel, "Target relation (its u-v triples are hidden)");
    extract->add_option("--graph", o.graph, "train or inference");

    auto* import = app.add_subcommand("import-embeddings", "Validate an embedding store");
    data(import, false);
    import->add_option("--embeddings", o.embeddings, "Store directory")->required();
    import->add_option("--out", o.out, "Write a normalized copy here");

    auto* train = app.add_subcommand("train", "Train a model");
    data(train);
    common(train);
    train->add_option("--embeddings", o.embeddings, "Embedding store directory");
    train->add_option("--config", o.config, "Config file: JSON object or key = value lines");
    train->add_option("--out", o.out, "Output directory")->required();
    train->add_flag("--no-semantic", o.no_semantic, "Structure-only (GraIL) mode");
    train->add_option("--aggregation", o.aggregation, "sum, mean, concat or type-only");
    train->add_option("--fallback", o.fallback, "Missing-embedding fallback: zero or hash");
    train->add_option("--fallback-dim", o.fallback_dim, "Vector size when no store is given");
    train->add_option("--lr", o.lr);
    train->add_option("--epochs", o.epochs);
    train->add_option("--patience", o.patience);
    train->add_option("--batch-size", o.batch_size);
    train->add_option("--margin", o.margin);
    train->add_option("--validate-every", o.validate_every);
    train->add_option("--valid-negatives", o.valid_negatives);
    train->add_option("--hops", o.hops);
    train->add_option("--layers", o.layers);
    train->add_option("--hidden-dim", o.hidden_dim);
    train->add_option("--bases", o.bases);
    train->add_option("--attention-dim", o.attention_dim);
    train->add_option("--sem-dim", o.sem_dim);
    train->add_option("--proj-dim", o.proj_dim);

    auto* eval = app.add_subcommand("evaluate", "Rank test triples against sampled negatives");
    data(eval);
    common(eval);
    eval->add_option("--model", o.model, "Training output directory")->required();
    eval->add_option("--embeddings", o.embeddings, "Override the store used in training");
    eval->add_option("--runs", o.runs, "Evaluation runs")->check(CLI::PositiveNumber);
    eval->add_option("--out", o.out, "Write metrics.json and records.jsonl here");

    auto* analyze = app.add_subcommand("analyze", "Sparsity buckets from per-task records");
    data(analyze);
    analyze->add_option("--records", o.records, "records.jsonl from evaluate")->required();
    analyze->add_option("--out", o.out, "Write buckets.json here");

    auto* pca = app.add_subcommand("export-pca", "PCA of final-layer tail embeddings as CSV");
    data(pca);
    common(pca);
    pca->add_option("--model", o.model, "Training output directory")->required();
    pca->add_option("--embeddings", o.embeddings, "Override the store used in training");
    pca->add_option("--out", o.out, "CSV file")->required();

    auto* toy = app.add_subcommand("make-toy", "Write the synthetic rule-governed toy dataset");
    toy->add_option("--out", o.out, "Dataset directory; the inductive part goes to <out>_ind")
        ->required();
    toy->add_option("--seed", o.seed, "Generation seed");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        const auto* chosen = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << chosen->help();
        return 1;
    }

    try {
        if (validate->parsed()) return cmd_validate(o, out);
        if (stats->parsed()) return cmd_stats(o, out);
        if (extract->parsed()) return cmd_extract(o, out);
        if (import->parsed()) return cmd_import(o, out);
        if (train->parsed()) return cmd_train(o, *train, out, err);
        if (eval->parsed()) return cmd_evaluate(o, out, err);
        if (analyze->parsed()) return cmd_analyze(o, out);
        if (pca->parsed()) return cmd_export_pca(o, out);
        if (toy->parsed()) return cmd_make_toy(o, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n" << app.get_subcommands().front()->help();
        return 1;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace tyler
