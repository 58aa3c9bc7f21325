// SPDX-License-Identifier: Apache-2.0
#include "tyler/train.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "tyler/error.hpp"
#include "tyler/eval.hpp"
#include "tyler/parallel.hpp"
#include "tyler/subgraph.hpp"

namespace tyler {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw DomainError("lr must be a finite value >= 0");
    if (epochs < 1) throw DomainError("epochs must be >= 1");
    if (patience < 1) throw DomainError("patience must be >= 1");
    if (batch_size < 1) throw DomainError("batch_size must be >= 1");
    if (!(margin > 0.0)) throw DomainError("margin must be positive");
    if (validate_every < 1) throw DomainError("validate_every must be >= 1");
    if (valid_negatives < 1) throw DomainError("valid_negatives must be >= 1");
    if (hops < 1 || layers < 1 || hidden_dim < 1 || bases < 1 || attention_dim < 1 ||
        sem_dim < 1 || proj_dim < 1)
        throw DomainError("model sizes must be positive");
    if (threads < 1) throw DomainError("threads must be >= 1");
}

ModelConfig TrainConfig::model_config(std::size_t relation_count, std::uint32_t plm_dim) const {
    ModelConfig m;
    m.hops = hops;
    m.layers = layers;
    m.hidden_dim = hidden_dim;
    m.bases = bases;
    m.attention_dim = attention_dim;
    m.relation_count = relation_count;
    m.semantic_enabled = semantic_enabled;
    m.semantic.plm_dim = plm_dim;
    m.semantic.proj_dim = proj_dim;
    m.semantic.out_dim = sem_dim;
    m.semantic.aggregation = aggregation;
    m.seed = seed;
    return m;
}

namespace {

template <typename T>
void take(const json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

// `key = value` per line, '#' starts a comment. Values that parse as JSON
// scalars keep their type; anything else is a string.
json key_value_lines(const std::string& text) {
    json j = json::object();
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
        const auto key = trim(std::string_view(line).substr(0, eq));
        const auto value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty()) throw FormatError("config line " + std::to_string(lineno) + ": empty key");
        json v = json::parse(value, nullptr, false);
        j[key] = v.is_discarded() || v.is_structured() ? json(value) : v;
    }
    return j;
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text, TrainConfig c) {
    static const std::set<std::string> known{
        "lr",        "epochs",     "patience",   "batch_size", "margin",
        "validate_every", "valid_negatives", "hops", "layers", "hidden_dim",
        "bases",     "attention_dim", "sem_dim", "proj_dim",   "aggregation",
        "semantic",  "seed",       "threads"};
    json j;
    const auto first = json_text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && json_text[first] == '{') {
        try {
            j = json::parse(json_text);
        } catch (const json::exception& e) {
            throw FormatError(std::string("config is not valid JSON: ") + e.what());
        }
    } else {
        j = key_value_lines(json_text);
    }
    if (!j.is_object()) throw FormatError("config must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw FormatError("unknown config key '" + key + "'");
    try {
        take(j, "lr", c.lr);
        take(j, "epochs", c.epochs);
        take(j, "patience", c.patience);
        take(j, "batch_size", c.batch_size);
        take(j, "margin", c.margin);
        take(j, "validate_every", c.validate_every);
        take(j, "valid_negatives", c.valid_negatives);
        take(j, "hops", c.hops);
        take(j, "layers", c.layers);
        take(j, "hidden_dim", c.hidden_dim);
        take(j, "bases", c.bases);
        take(j, "attention_dim", c.attention_dim);
        take(j, "sem_dim", c.sem_dim);
        take(j, "proj_dim", c.proj_dim);
        take(j, "semantic", c.semantic_enabled);
        take(j, "seed", c.seed);
        take(j, "threads", c.threads);
        if (j.contains("aggregation"))
            c.aggregation = parse_aggregation(j["aggregation"].get<std::string>());
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad config value: ") + e.what());
    }
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& file, TrainConfig base) {
    std::ifstream in(file);
    if (!in) throw NotFoundError("cannot open config " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str(), base);
}

std::string train_config_to_json(const TrainConfig& c) {
    json j = {
        {"lr", c.lr},
        {"epochs", c.epochs},
        {"patience", c.patience},
        {"batch_size", c.batch_size},
        {"margin", c.margin},
        {"validate_every", c.validate_every},
        {"valid_negatives", c.valid_negatives},
        {"hops", c.hops},
        {"layers", c.layers},
        {"hidden_dim", c.hidden_dim},
        {"bases", c.bases},
        {"attention_dim", c.attention_dim},
        {"sem_dim", c.sem_dim},
        {"proj_dim", c.proj_dim},
        {"aggregation", std::string(to_string(c.aggregation))},
        {"semantic", c.semantic_enabled},
        {"seed", c.seed},
    };
    return j.dump(2);
}

AdamState::AdamState(const ad::ParameterSet& params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params.value(i);
        m.push_back(ad::Matrix::Zero(p.rows(), p.cols()));
        v.push_back(ad::Matrix::Zero(p.rows(), p.cols()));
    }
}

void adam_step(AdamState& s, ad::ParameterSet& params, const ad::Gradients& grads, double lr) {
    if (grads.size() != params.size() || s.m.size() != params.size())
        throw DomainError("optimizer state does not match the parameter set");
    grads.check_finite(params);
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& g = grads[i];
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g.cwiseProduct(g);
        auto m_hat = s.m[i].array() / c1;
        auto v_hat = s.v[i].array() / c2;
        params.value(i).array() -= lr * m_hat / (v_hat.sqrt() + s.eps);
    }
}

Triple sample_negative(const KnowledgeGraph& graph, const Triple& positive, Rng& rng,
                       bool allow_self_loops) {
    const auto& pool = graph.entities();
    if (pool.empty()) throw SamplingExhaustedError("graph has no entities to sample from");
    const std::size_t budget = 100 * pool.size();
    for (std::size_t draw = 0; draw < budget; ++draw) {
        Triple t = positive;
        const bool head = rng.coin();
        const EntityId e = pool[rng.below(pool.size())];
        (head ? t.head : t.tail) = e;
        if (t == positive || graph.has_triple(t)) continue;
        if (!allow_self_loops && t.head == t.tail) continue;
        return t;
    }
    throw SamplingExhaustedError("no valid corruption found after " + std::to_string(budget) +
                                 " draws");
}

double margin_loss(std::span<const double> positive, std::span<const double> negative,
                   double margin) {
    if (positive.size() != negative.size())
        throw DomainError("margin loss needs one negative per positive");
    double loss = 0.0;
    for (std::size_t i = 0; i < positive.size(); ++i)
        loss += std::max(0.0, negative[i] - positive[i] + margin);
    return loss;
}

std::string event_to_json(const ValidationEvent& e) {
    json j = {{"batch", e.batch}, {"train_loss", e.train_loss}, {"val_mrr", e.val_mrr},
              {"best", e.best}};
    return j.dump();
}

BatchLoss batch_loss(const Model& model, const KnowledgeGraph& graph, const EmbeddingStore* store,
                     std::span<const Triple> positives, std::span<const Triple> negatives,
                     double margin, std::size_t threads) {
    if (positives.size() != negatives.size())
        throw DomainError("batch needs one negative per positive");
    const int k = model.config().hops;
    const NodeFeatures features{nullptr, model.config().semantic_enabled ? store : nullptr};
    std::vector<double> losses(positives.size(), 0.0);
    std::vector<std::optional<ad::Gradients>> slots(positives.size());

    parallel_for(positives.size(), threads, [&](std::size_t i) {
        auto pos_sg = extract_enclosing(graph, positives[i], k);
        // The negative is scored without the positive it was derived from.
        auto neg_sg = extract_enclosing(graph, negatives[i], k, positives[i]);
        ad::Tape pos_tape(model.params());
        auto pos = forward(pos_tape, model, pos_sg, initial_embeddings(pos_tape, model, pos_sg, features),
                           positives[i].rel);
        ad::Tape neg_tape(model.params());
        auto neg = forward(neg_tape, model, neg_sg, initial_embeddings(neg_tape, model, neg_sg, features),
                           negatives[i].rel);
        const double hinge = neg_tape.scalar(neg.score) - pos_tape.scalar(pos.score) + margin;
        if (hinge <= 0.0) return;
        losses[i] = hinge;
        slots[i].emplace(model.params());
        pos_tape.backward(pos.score, *slots[i], -1.0);
        neg_tape.backward(neg.score, *slots[i], 1.0);
    });

    BatchLoss out{0.0, ad::Gradients(model.params())};
    for (std::size_t i = 0; i < positives.size(); ++i) {
        out.loss += losses[i];
        if (slots[i]) out.grads += *slots[i];
    }
    return out;
}

namespace {

std::size_t training_relation_count(const KnowledgeGraph& train) {
    if (train.relations().empty()) throw DataError("training graph has no triples");
    return static_cast<std::size_t>(train.relations().back()) + 1;
}

}  // namespace

FitResult fit(const DatasetBundle& bundle, const EmbeddingStore* store, const TrainConfig& config,
              const EventSink& sink) {
    config.validate();
    const KnowledgeGraph& graph = bundle.train;
    const std::size_t relations = training_relation_count(graph);
    if (config.semantic_enabled && !store)
        throw DomainError("semantic training needs an embedding store");
    const std::uint32_t plm_dim = config.semantic_enabled ? store->dim() : 0;

    FitResult result{Model::create(config.model_config(relations, plm_dim)), {}};
    Model& model = result.model;
    TrainingLog& log = result.log;
    AdamState adam(model.params());

    std::vector<Triple> valid;
    for (const auto& t : bundle.valid.triples())
        if (graph.contains(t.head) && graph.contains(t.tail) && t.rel < relations)
            valid.push_back(t);
    if (valid.empty())
        log.warnings.push_back("no usable validation triples; early stopping disabled");
    TripleSet known(graph.triples().begin(), graph.triples().end());
    known.insert(bundle.valid.triples().begin(), bundle.valid.triples().end());

    EvalOptions val_opts;
    val_opts.runs = 1;
    val_opts.base_seed = derive_seed({config.seed, 0x76616c6964ULL});
    val_opts.negatives = config.valid_negatives;
    val_opts.hops = config.hops;
    val_opts.threads = config.threads;

    std::vector<ad::Matrix> best_params;
    std::size_t since_best = 0;
    double loss_since_event = 0.0;
    std::size_t batches_since_event = 0;

    auto validate = [&] {
        ValidationEvent ev;
        ev.batch = log.batches;
        ev.train_loss = batches_since_event ? loss_since_event / static_cast<double>(batches_since_event)
                                            : 0.0;
        ModelScorer scorer(model, config.semantic_enabled ? store : nullptr);
        ev.val_mrr = evaluate(scorer, graph, valid, known, val_opts).report.mean.mrr;
        ev.best = !log.best_mrr || ev.val_mrr >= *log.best_mrr;
        if (ev.best) {
            log.best_mrr = ev.val_mrr;
            best_params.clear();
            for (std::size_t i = 0; i < model.params().size(); ++i)
                best_params.push_back(model.params().value(i));
            since_best = 0;
        }
        log.events.push_back(ev);
        loss_since_event = 0.0;
        batches_since_event = 0;
        if (sink) sink(ev);
    };

    Rng rng(derive_seed({config.seed, 0x747261696eULL}));
    std::vector<std::size_t> order(graph.triples().size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Triple> pos, neg;

    for (int epoch = 0; epoch < config.epochs && !log.stopped_early; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            pos.clear();
            neg.clear();
            for (std::size_t i = start; i < end; ++i) {
                pos.push_back(graph.triples()[order[i]]);
                neg.push_back(sample_negative(graph, pos.back(), rng));
            }
            auto batch = batch_loss(model, graph, store, pos, neg, config.margin, config.threads);
            adam_step(adam, model.params(), batch.grads, config.lr);
            ++log.batches;
            epoch_loss += batch.loss;
            loss_since_event += batch.loss;
            ++batches_since_event;

            if (!valid.empty() && log.batches % static_cast<std::size_t>(config.validate_every) == 0) {
                since_best += static_cast<std::size_t>(config.validate_every);
                validate();
                if (since_best >= static_cast<std::size_t>(config.patience)) {
                    log.stopped_early = true;
                    break;
                }
            }
        }
        log.epoch_losses.push_back(epoch_loss);
    }

    // Trailing batches after the last scheduled check still get a chance.
    if (!valid.empty() && batches_since_event > 0) validate();
    if (!best_params.empty())
        for (std::size_t i = 0; i < best_params.size(); ++i) model.params().value(i) = best_params[i];
    return result;
}

}  // namespace tyler
