// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tyler/autodiff.hpp"
#include "tyler/gnn.hpp"
#include "tyler/kgdata.hpp"
#include "tyler/rng.hpp"

namespace tyler {

struct TrainConfig {
    double lr = 1e-3;
    int epochs = 50;
    /// Batches without a validation improvement before stopping.
    int patience = 100;
    std::size_t batch_size = 16;
    double margin = 10.0;
    int validate_every = 50;
    std::size_t valid_negatives = 50;

    int hops = 3;
    int layers = 3;
    std::size_t hidden_dim = 32;
    std::size_t bases = 4;
    std::size_t attention_dim = 32;
    std::size_t sem_dim = 24;
    std::size_t proj_dim = 64;
    Aggregation aggregation = Aggregation::Sum;
    bool semantic_enabled = true;

    std::uint64_t seed = 0;
    std::size_t threads = 1;

    /// Throws DomainError on non-positive sizes or rates.
    void validate() const;
    ModelConfig model_config(std::size_t relation_count, std::uint32_t plm_dim) const;
};

/// Overlays keys onto `base`. Accepts a JSON object or `key = value` lines
/// (`#` comments). Unknown keys are rejected.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& file, TrainConfig base = {});
std::string train_config_to_json(const TrainConfig& config);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<ad::Matrix> m;
    std::vector<ad::Matrix> v;

    explicit AdamState(const ad::ParameterSet& params);
};

/// One bias-corrected Adam update. Rejects non-finite gradients with a
/// NumericError before touching any parameter.
void adam_step(AdamState& state, ad::ParameterSet& params, const ad::Gradients& grads, double lr);

/// Replaces the head or the tail (fair coin) with a uniformly drawn entity of
/// `graph`, redrawing while the result is the positive or a triple of the
/// graph. Throws SamplingExhaustedError after 100 * |entities| draws.
Triple sample_negative(const KnowledgeGraph& graph, const Triple& positive, Rng& rng,
                       bool allow_self_loops = true);

/// sum_i max(0, neg_i - pos_i + margin).
double margin_loss(std::span<const double> positive, std::span<const double> negative,
                   double margin);

struct ValidationEvent {
    std::size_t batch = 0;
    double train_loss = 0.0;  // mean batch loss since the previous event
    double val_mrr = 0.0;
    bool best = false;
};

struct TrainingLog {
    std::vector<ValidationEvent> events;
    std::vector<double> epoch_losses;  // summed margin loss per epoch
    std::size_t batches = 0;
    bool stopped_early = false;
    std::optional<double> best_mrr;
    std::vector<std::string> warnings;
};

std::string event_to_json(const ValidationEvent& event);

struct FitResult {
    Model model;  // parameters of the best validation point
    TrainingLog log;
};

/// Called after every validation event; the CLI streams the log from here.
using EventSink = std::function<void(const ValidationEvent&)>;

/// Trains on bundle.train, validating on bundle.valid against the training
/// graph. `store` must be bound to the bundle when semantics are enabled.
FitResult fit(const DatasetBundle& bundle, const EmbeddingStore* store, const TrainConfig& config,
              const EventSink& sink = {});

/// Sum of margin losses over (positive, negative) pairs together with the
/// gradient of that sum. Pairs with an inactive hinge contribute nothing.
struct BatchLoss {
    double loss = 0.0;
    ad::Gradients grads;
};
BatchLoss batch_loss(const Model& model, const KnowledgeGraph& graph, const EmbeddingStore* store,
                     std::span<const Triple> positives, std::span<const Triple> negatives,
                     double margin, std::size_t threads);

}  // namespace tyler
