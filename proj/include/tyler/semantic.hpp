// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tyler/autodiff.hpp"
#include "tyler/kgdata.hpp"

namespace tyler {

class Rng;

/// Assertion prompt. `text` holds one `{entity}` placeholder and ends with
/// the `___` blank the language model fills.
struct PromptTemplate {
    std::string id;
    std::string aspect;
    std::string text;

    friend bool operator==(const PromptTemplate&, const PromptTemplate&) = default;
};

inline constexpr std::string_view kEntityPlaceholder = "{entity}";

/// p1..p6: type, geographic, membership, equivalence, difference, similarity.
const std::vector<PromptTemplate>& default_prompts();

/// Substitutes `label` for the placeholder. Throws DomainError when the
/// template does not contain exactly one placeholder.
std::string render_prompt(const PromptTemplate& prompt, std::string_view label);

enum class ExtractionMode { Mlm, Clm };

struct StoreManifest {
    std::string model;
    ExtractionMode mode = ExtractionMode::Mlm;
    std::vector<PromptTemplate> prompts;
    std::uint32_t dim = 0;
    std::string dtype = "f32";
};

enum class MissingPolicy { Zero, Hash };

/// Raw language-model vectors per (entity, prompt), plus the manifest that
/// describes them. Immutable after loading except for the miss counter.
///
/// On disk: `manifest.json`, `entities.txt` (line i names entity index i) and
/// `vectors.bin`: magic "TYLREMB1", u32 dim, u32 record count, then records
/// of u32 entity index, u8 prompt index, dim x f32, all little-endian.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    EmbeddingStore(StoreManifest manifest, std::vector<std::string> entity_names);

    static EmbeddingStore load(const std::filesystem::path& dir);
    void save(const std::filesystem::path& dir) const;

    const StoreManifest& manifest() const noexcept { return manifest_; }
    std::uint32_t dim() const noexcept { return manifest_.dim; }
    std::size_t prompt_count() const noexcept { return manifest_.prompts.size(); }
    const std::vector<std::string>& entity_names() const noexcept { return entity_names_; }
    std::size_t record_count() const noexcept { return records_.size(); }

    /// Stores one vector; throws FormatError on a length mismatch.
    void put(std::uint32_t entity_index, std::uint8_t prompt, std::span<const float> vector);
    std::optional<std::span<const float>> find(std::uint32_t entity_index,
                                               std::uint8_t prompt) const;

    /// Maps dataset entity ids to store records by name. Entities the store
    /// lacks fall back per `policy`; the hash fallback is keyed on the
    /// entity's label so equally labelled entities share vectors.
    void bind(const DatasetBundle& bundle, MissingPolicy policy, std::uint64_t seed);
    void bind(const Vocabulary& entities, std::span<const std::string> fallback_keys,
              MissingPolicy policy, std::uint64_t seed);

    /// Raw vector for a bound entity id.
    std::vector<double> lookup_raw(EntityId entity, std::size_t prompt) const;

    std::size_t misses() const noexcept { return misses_ ? misses_->load() : 0; }

    /// Fraction of `entities` that have a stored vector for every prompt.
    double coverage(const Vocabulary& entities) const;

private:
    static std::uint64_t key(std::uint32_t entity_index, std::uint8_t prompt) {
        return (static_cast<std::uint64_t>(entity_index) << 8) | prompt;
    }

    StoreManifest manifest_;
    std::vector<std::string> entity_names_;
    std::vector<float> data_;
    std::vector<std::pair<std::uint32_t, std::uint8_t>> records_;
    std::unordered_map<std::uint64_t, std::size_t> record_index_;

    MissingPolicy policy_ = MissingPolicy::Zero;
    std::uint64_t hash_seed_ = 0;
    std::vector<std::int64_t> bound_index_;  // entity id -> store entity index or -1
    std::vector<std::string> fallback_keys_;
    std::shared_ptr<std::atomic<std::size_t>> misses_ = std::make_shared<std::atomic<std::size_t>>(0);
};

/// Deterministic stand-in vector for (key, prompt).
std::vector<double> hash_vector(std::string_view key, std::size_t prompt, std::uint32_t dim,
                                std::uint64_t seed);

enum class Aggregation { Sum, Mean, Concat, TypeOnly };

std::string_view to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view s);

struct SemanticConfig {
    std::uint32_t plm_dim = 0;
    std::size_t prompt_count = 6;
    std::size_t proj_dim = 64;
    std::size_t out_dim = 24;
    Aggregation aggregation = Aggregation::Sum;
    double ln_eps = 1e-5;

    std::size_t agg_dim() const {
        return aggregation == Aggregation::Concat ? prompt_count * proj_dim : proj_dim;
    }
};

/// Parameter indices of the semantic encoder inside a shared ParameterSet.
struct SemanticEncoder {
    SemanticConfig config;
    std::vector<std::size_t> ln_gain;
    std::vector<std::size_t> ln_bias;
    std::vector<std::size_t> proj_w;
    std::vector<std::size_t> proj_b;
    std::size_t head_w = 0;

    static SemanticEncoder create(ad::ParameterSet& params, const SemanticConfig& config,
                                  Rng& rng);
    static SemanticEncoder bind(const ad::ParameterSet& params, const SemanticConfig& config);
};

/// W LN(z) + b for prompt `prompt`.
ad::Var project(ad::Tape& tape, const SemanticEncoder& enc, std::size_t prompt, ad::Var z);

/// Combines per-prompt projections given in prompt order.
ad::Var aggregate(ad::Tape& tape, Aggregation kind, std::span<const ad::Var> projected);

/// sigmoid(W_o ReLU(z_agg)) for one entity.
ad::Var encode(ad::Tape& tape, const SemanticEncoder& enc, const EmbeddingStore& store,
               EntityId entity);

/// Same as encode() without gradient bookkeeping the caller cares about.
Eigen::VectorXd encode_value(const ad::ParameterSet& params, const SemanticEncoder& enc,
                             const EmbeddingStore& store, EntityId entity);

/// h_pos ++ h_sem, or h_pos ++ zeros when semantics are disabled.
std::vector<double> initial_node_embedding(std::span<const double> h_pos,
                                           std::span<const double> h_sem, bool semantic_enabled);

}  // namespace tyler
