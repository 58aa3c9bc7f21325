// SPDX-License-Identifier: Apache-2.0
#include "tyler/semantic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "tyler/error.hpp"
#include "tyler/rng.hpp"

namespace tyler {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<PromptTemplate>& default_prompts() {
    static const std::vector<PromptTemplate> prompts = {
        {"p1", "type", "{entity} is a type of ___"},
        {"p2", "geographic", "{entity} is located in ___"},
        {"p3", "membership", "{entity} is member of ___"},
        {"p4", "equivalence", "{entity} is equivalent to ___"},
        {"p5", "difference", "{entity} is different from ___"},
        {"p6", "similarity", "{entity} is similar to ___"},
    };
    return prompts;
}

std::string render_prompt(const PromptTemplate& prompt, std::string_view label) {
    auto pos = prompt.text.find(kEntityPlaceholder);
    if (pos == std::string::npos ||
        prompt.text.find(kEntityPlaceholder, pos + 1) != std::string::npos)
        throw DomainError("prompt " + prompt.id + " must contain exactly one placeholder");
    std::string out = prompt.text;
    out.replace(pos, kEntityPlaceholder.size(), label);
    return out;
}

// ---------------------------------------------------------------------------
// EmbeddingStore

EmbeddingStore::EmbeddingStore(StoreManifest manifest, std::vector<std::string> entity_names)
    : manifest_(std::move(manifest)), entity_names_(std::move(entity_names)) {
    if (manifest_.dim == 0) throw FormatError("embedding dimension must be positive");
    if (manifest_.prompts.empty() || manifest_.prompts.size() > 255)
        throw FormatError("embedding store needs between 1 and 255 prompts");
    for (const auto& p : manifest_.prompts) render_prompt(p, "x");
}

void EmbeddingStore::put(std::uint32_t entity_index, std::uint8_t prompt,
                         std::span<const float> vector) {
    if (vector.size() != manifest_.dim)
        throw FormatError("vector length " + std::to_string(vector.size()) +
                          " does not match store dimension " + std::to_string(manifest_.dim));
    if (entity_index >= entity_names_.size())
        throw FormatError("entity index " + std::to_string(entity_index) + " out of range");
    if (prompt >= manifest_.prompts.size())
        throw FormatError("prompt index " + std::to_string(prompt) + " out of range");
    auto k = key(entity_index, prompt);
    auto it = record_index_.find(k);
    if (it != record_index_.end()) {
        std::copy(vector.begin(), vector.end(), data_.begin() + it->second * manifest_.dim);
        return;
    }
    record_index_.emplace(k, records_.size());
    records_.emplace_back(entity_index, prompt);
    data_.insert(data_.end(), vector.begin(), vector.end());
}

std::optional<std::span<const float>> EmbeddingStore::find(std::uint32_t entity_index,
                                                           std::uint8_t prompt) const {
    auto it = record_index_.find(key(entity_index, prompt));
    if (it == record_index_.end()) return std::nullopt;
    return std::span<const float>(data_.data() + it->second * manifest_.dim, manifest_.dim);
}

namespace {

constexpr char kStoreMagic[8] = {'T', 'Y', 'L', 'R', 'E', 'M', 'B', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string_view mode_name(ExtractionMode m) { return m == ExtractionMode::Mlm ? "mlm" : "clm"; }

}  // namespace

void EmbeddingStore::save(const fs::path& dir) const {
    fs::create_directories(dir);
    json manifest = {
        {"model", manifest_.model},
        {"mode", mode_name(manifest_.mode)},
        {"dim", manifest_.dim},
        {"dtype", manifest_.dtype},
        {"prompts", json::array()},
    };
    for (const auto& p : manifest_.prompts)
        manifest["prompts"].push_back({{"id", p.id}, {"aspect", p.aspect}, {"template", p.text}});
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';

    std::ofstream names(dir / "entities.txt", std::ios::binary);
    for (const auto& n : entity_names_) names << n << '\n';

    std::ofstream out(dir / "vectors.bin", std::ios::binary);
    if (!out) throw NotFoundError("cannot write " + (dir / "vectors.bin").string());
    out.write(kStoreMagic, 8);
    put_u32(out, manifest_.dim);
    put_u32(out, static_cast<std::uint32_t>(records_.size()));
    for (std::size_t r = 0; r < records_.size(); ++r) {
        put_u32(out, records_[r].first);
        out.put(static_cast<char>(records_[r].second));
        for (std::uint32_t d = 0; d < manifest_.dim; ++d)
            put_u32(out, std::bit_cast<std::uint32_t>(data_[r * manifest_.dim + d]));
    }
}

EmbeddingStore EmbeddingStore::load(const fs::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw NotFoundError("missing " + (dir / "manifest.json").string());
    StoreManifest manifest;
    try {
        json j = json::parse(mf);
        manifest.model = j.at("model").get<std::string>();
        auto mode = j.at("mode").get<std::string>();
        if (mode == "mlm")
            manifest.mode = ExtractionMode::Mlm;
        else if (mode == "clm")
            manifest.mode = ExtractionMode::Clm;
        else
            throw FormatError("unknown extraction mode " + mode);
        manifest.dim = j.at("dim").get<std::uint32_t>();
        manifest.dtype = j.value("dtype", std::string("f32"));
        for (const auto& p : j.at("prompts"))
            manifest.prompts.push_back({p.at("id").get<std::string>(),
                                        p.value("aspect", std::string()),
                                        p.at("template").get<std::string>()});
    } catch (const json::exception& e) {
        throw FormatError("bad manifest.json: " + std::string(e.what()));
    }
    if (manifest.dtype != "f32") throw FormatError("unsupported dtype " + manifest.dtype);

    std::vector<std::string> names;
    {
        std::ifstream in(dir / "entities.txt");
        if (!in) throw NotFoundError("missing " + (dir / "entities.txt").string());
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            names.push_back(line);
        }
    }

    EmbeddingStore store(std::move(manifest), std::move(names));

    std::ifstream in(dir / "vectors.bin", std::ios::binary);
    if (!in) throw NotFoundError("missing " + (dir / "vectors.bin").string());
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kStoreMagic))
        throw FormatError("vectors.bin: bad magic");
    std::uint32_t dim = get_u32(in, "header");
    if (dim != store.dim())
        throw FormatError("vectors.bin dimension " + std::to_string(dim) +
                          " does not match manifest dimension " + std::to_string(store.dim()));
    std::uint32_t count = get_u32(in, "header");
    std::vector<float> v(dim);
    for (std::uint32_t r = 0; r < count; ++r) {
        std::uint32_t entity = get_u32(in, "record");
        int prompt = in.get();
        if (prompt == EOF) throw FormatError("truncated record");
        for (std::uint32_t d = 0; d < dim; ++d) v[d] = std::bit_cast<float>(get_u32(in, "record"));
        store.put(entity, static_cast<std::uint8_t>(prompt), v);
    }
    if (in.peek() != EOF) throw FormatError("vectors.bin: trailing bytes after last record");
    return store;
}

void EmbeddingStore::bind(const DatasetBundle& bundle, MissingPolicy policy, std::uint64_t seed) {
    std::vector<std::string> keys;
    keys.reserve(bundle.vocab.entities.size());
    for (std::size_t e = 0; e < bundle.vocab.entities.size(); ++e)
        keys.push_back(bundle.label(static_cast<EntityId>(e)));
    bind(bundle.vocab.entities, keys, policy, seed);
}

void EmbeddingStore::bind(const Vocabulary& entities, std::span<const std::string> fallback_keys,
                          MissingPolicy policy, std::uint64_t seed) {
    policy_ = policy;
    hash_seed_ = seed;
    std::unordered_map<std::string_view, std::uint32_t> by_name;
    for (std::uint32_t i = 0; i < entity_names_.size(); ++i) by_name.emplace(entity_names_[i], i);
    bound_index_.assign(entities.size(), -1);
    for (std::size_t e = 0; e < entities.size(); ++e) {
        auto it = by_name.find(entities.name(static_cast<std::uint32_t>(e)));
        if (it != by_name.end()) bound_index_[e] = it->second;
    }
    fallback_keys_.assign(fallback_keys.begin(), fallback_keys.end());
    fallback_keys_.resize(entities.size());
    for (std::size_t e = 0; e < entities.size(); ++e)
        if (fallback_keys_[e].empty()) fallback_keys_[e] = entities.name(static_cast<std::uint32_t>(e));
}

std::vector<double> EmbeddingStore::lookup_raw(EntityId entity, std::size_t prompt) const {
    if (prompt >= prompt_count()) throw DomainError("prompt index out of range");
    if (entity < bound_index_.size() && bound_index_[entity] >= 0) {
        auto found = find(static_cast<std::uint32_t>(bound_index_[entity]),
                          static_cast<std::uint8_t>(prompt));
        if (found) return {found->begin(), found->end()};
    }
    misses_->fetch_add(1, std::memory_order_relaxed);
    if (policy_ == MissingPolicy::Hash) {
        std::string_view k = entity < fallback_keys_.size() ? std::string_view(fallback_keys_[entity])
                                                             : std::string_view();
        std::string fallback = k.empty() ? std::to_string(entity) : std::string(k);
        return hash_vector(fallback, prompt, dim(), hash_seed_);
    }
    return std::vector<double>(dim(), 0.0);
}

double EmbeddingStore::coverage(const Vocabulary& entities) const {
    if (entities.size() == 0) return 1.0;
    std::unordered_map<std::string_view, std::uint32_t> by_name;
    for (std::uint32_t i = 0; i < entity_names_.size(); ++i) by_name.emplace(entity_names_[i], i);
    std::size_t covered = 0;
    for (const auto& name : entities.names()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) continue;
        bool all = true;
        for (std::size_t p = 0; p < prompt_count() && all; ++p)
            all = record_index_.contains(key(it->second, static_cast<std::uint8_t>(p)));
        if (all) ++covered;
    }
    return static_cast<double>(covered) / static_cast<double>(entities.size());
}

std::vector<double> hash_vector(std::string_view key, std::size_t prompt, std::uint32_t dim,
                                std::uint64_t seed) {
    // FNV-1a over the key bytes
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : key) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    Rng rng(derive_seed({seed, h, prompt}));
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

// ---------------------------------------------------------------------------
// Encoder

std::string_view to_string(Aggregation a) {
    switch (a) {
        case Aggregation::Sum: return "sum";
        case Aggregation::Mean: return "mean";
        case Aggregation::Concat: return "concat";
        case Aggregation::TypeOnly: return "type-only";
    }
    return "?";
}

Aggregation parse_aggregation(std::string_view s) {
    if (s == "sum") return Aggregation::Sum;
    if (s == "mean") return Aggregation::Mean;
    if (s == "concat") return Aggregation::Concat;
    if (s == "type-only") return Aggregation::TypeOnly;
    throw DomainError("unknown aggregation '" + std::string(s) + "'");
}

namespace {

ad::Matrix xavier(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    ad::Matrix m(rows, cols);
    // column-major fill order is part of the determinism contract
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-a, a);
    return m;
}

std::string prompt_prefix(std::size_t p) { return "sem.p" + std::to_string(p + 1); }

}  // namespace

SemanticEncoder SemanticEncoder::create(ad::ParameterSet& params, const SemanticConfig& config,
                                        Rng& rng) {
    if (config.plm_dim == 0 || config.prompt_count == 0)
        throw DomainError("semantic encoder needs a positive embedding dimension and prompt count");
    const auto d = static_cast<Eigen::Index>(config.plm_dim);
    const auto dp = static_cast<Eigen::Index>(config.proj_dim);
    for (std::size_t p = 0; p < config.prompt_count; ++p) {
        auto pre = prompt_prefix(p);
        params.add(pre + ".ln_gain", ad::Matrix::Ones(d, 1));
        params.add(pre + ".ln_bias", ad::Matrix::Zero(d, 1));
        params.add(pre + ".W", xavier(dp, d, rng));
        params.add(pre + ".b", ad::Matrix::Zero(dp, 1));
    }
    params.add("sem.W_o", xavier(static_cast<Eigen::Index>(config.out_dim),
                                 static_cast<Eigen::Index>(config.agg_dim()), rng));
    return bind(params, config);
}

SemanticEncoder SemanticEncoder::bind(const ad::ParameterSet& params, const SemanticConfig& config) {
    SemanticEncoder enc;
    enc.config = config;
    for (std::size_t p = 0; p < config.prompt_count; ++p) {
        auto pre = prompt_prefix(p);
        enc.ln_gain.push_back(params.index_of(pre + ".ln_gain"));
        enc.ln_bias.push_back(params.index_of(pre + ".ln_bias"));
        enc.proj_w.push_back(params.index_of(pre + ".W"));
        enc.proj_b.push_back(params.index_of(pre + ".b"));
    }
    enc.head_w = params.index_of("sem.W_o");
    return enc;
}

ad::Var project(ad::Tape& tape, const SemanticEncoder& enc, std::size_t prompt, ad::Var z) {
    if (tape.value(z).rows() != static_cast<Eigen::Index>(enc.config.plm_dim))
        throw DomainError("raw vector length does not match the encoder's embedding dimension");
    auto normed = tape.layer_norm(z, tape.param(enc.ln_gain[prompt]),
                                  tape.param(enc.ln_bias[prompt]), enc.config.ln_eps);
    return tape.add(tape.matmul(tape.param(enc.proj_w[prompt]), normed),
                    tape.param(enc.proj_b[prompt]));
}

ad::Var aggregate(ad::Tape& tape, Aggregation kind, std::span<const ad::Var> projected) {
    if (projected.empty()) throw DomainError("aggregate of no prompts");
    const auto rows = tape.value(projected[0]).rows();
    for (auto v : projected)
        if (tape.value(v).rows() != rows)
            throw DomainError("prompt projections have inconsistent lengths");
    switch (kind) {
        case Aggregation::Sum: return tape.sum(projected);
        case Aggregation::Mean: return tape.mean(projected);
        case Aggregation::Concat: return tape.concat(projected);
        case Aggregation::TypeOnly: return projected[0];
    }
    throw DomainError("unknown aggregation");
}

ad::Var encode(ad::Tape& tape, const SemanticEncoder& enc, const EmbeddingStore& store,
               EntityId entity) {
    if (store.dim() != enc.config.plm_dim || store.prompt_count() < enc.config.prompt_count)
        throw DomainError("embedding store does not match the semantic encoder dimensions");
    const std::size_t used =
        enc.config.aggregation == Aggregation::TypeOnly ? 1 : enc.config.prompt_count;
    std::vector<ad::Var> projected;
    projected.reserve(used);
    for (std::size_t p = 0; p < used; ++p) {
        auto raw = store.lookup_raw(entity, p);
        projected.push_back(project(tape, enc, p, tape.constant_vector(raw)));
    }
    auto agg = aggregate(tape, enc.config.aggregation, projected);
    return tape.sigmoid(tape.matmul(tape.param(enc.head_w), tape.relu(agg)));
}

Eigen::VectorXd encode_value(const ad::ParameterSet& params, const SemanticEncoder& enc,
                             const EmbeddingStore& store, EntityId entity) {
    ad::Tape tape(params);
    return tape.value(encode(tape, enc, store, entity)).col(0);
}

std::vector<double> initial_node_embedding(std::span<const double> h_pos,
                                           std::span<const double> h_sem, bool semantic_enabled) {
    std::vector<double> h0(h_pos.begin(), h_pos.end());
    if (semantic_enabled)
        h0.insert(h0.end(), h_sem.begin(), h_sem.end());
    else
        h0.resize(h0.size() + h_sem.size(), 0.0);
    return h0;
}

}  // namespace tyler
