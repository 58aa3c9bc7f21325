// SPDX-License-Identifier: Apache-2.0
#include "tyler/gnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "tyler/error.hpp"
#include "tyler/parallel.hpp"
#include "tyler/rng.hpp"

namespace tyler {

namespace fs = std::filesystem;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix glorot(std::size_t rows, std::size_t cols, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-a, a);
    return m;
}

std::string layer_prefix(std::size_t l) { return "layer" + std::to_string(l); }

}  // namespace

Model Model::create(const ModelConfig& config) {
    if (config.relation_count == 0) throw DomainError("model needs at least one relation");
    if (config.layers < 1 || config.hops < 1 || config.bases < 1 || config.hidden_dim == 0 ||
        config.attention_dim == 0)
        throw DomainError("model dimensions must be positive");

    Model m(config);
    Rng rng(derive_seed({config.seed, 0x6d6f64656cULL}));
    auto& p = m.params_;
    const std::size_t r2 = 2 * config.relation_count;
    const std::size_t d_att = config.attention_dim;

    p.add("rel_emb", glorot(config.input_dim(), r2, rng));
    for (int l = 1; l <= config.layers; ++l) {
        const std::size_t din = config.layer_dim(l - 1);
        const std::size_t dout = config.layer_dim(l);
        const auto pre = layer_prefix(static_cast<std::size_t>(l));
        p.add(pre + ".W0", glorot(dout, din, rng));
        for (std::size_t b = 0; b < config.bases; ++b)
            p.add(pre + ".basis" + std::to_string(b), glorot(dout, din, rng));
        p.add(pre + ".coef", glorot(r2, config.bases, rng));
        p.add(pre + ".W_rel", glorot(dout, din, rng));
        p.add(pre + ".att.W_sender", glorot(d_att, din, rng));
        p.add(pre + ".att.W_receiver", glorot(d_att, din, rng));
        p.add(pre + ".att.W_relation", glorot(d_att, din, rng));
        p.add(pre + ".att.W_target", glorot(d_att, din, rng));
        p.add(pre + ".att.b_s", Matrix::Zero(static_cast<Eigen::Index>(d_att), 1));
        p.add(pre + ".att.W_alpha", glorot(1, d_att, rng));
        p.add(pre + ".att.b_alpha", Matrix::Zero(1, 1));
    }
    p.add("W_f", glorot(1, config.jk_dim(), rng));
    if (config.semantic_enabled) SemanticEncoder::create(p, config.semantic, rng);
    m.bind_indices();
    return m;
}

void Model::bind_indices() {
    layers_.clear();
    rel_emb_ = params_.index_of("rel_emb");
    for (int l = 1; l <= config_.layers; ++l) {
        const auto pre = layer_prefix(static_cast<std::size_t>(l));
        LayerParams lp;
        lp.self_loop = params_.index_of(pre + ".W0");
        for (std::size_t b = 0; b < config_.bases; ++b)
            lp.bases.push_back(params_.index_of(pre + ".basis" + std::to_string(b)));
        lp.coefficients = params_.index_of(pre + ".coef");
        lp.rel_update = params_.index_of(pre + ".W_rel");
        lp.att_src = params_.index_of(pre + ".att.W_sender");
        lp.att_dst = params_.index_of(pre + ".att.W_receiver");
        lp.att_rel = params_.index_of(pre + ".att.W_relation");
        lp.att_target = params_.index_of(pre + ".att.W_target");
        lp.att_bias = params_.index_of(pre + ".att.b_s");
        lp.att_out = params_.index_of(pre + ".att.W_alpha");
        lp.att_out_bias = params_.index_of(pre + ".att.b_alpha");
        layers_.push_back(std::move(lp));
    }
    out_ = params_.index_of("W_f");
    if (config_.semantic_enabled)
        semantic_ = SemanticEncoder::bind(params_, config_.semantic);
    else
        semantic_.reset();
}

Matrix Model::relation_weight(std::size_t layer, RelationId r) const {
    const auto& lp = layers_.at(layer - 1);
    const Matrix& coef = params_.value(lp.coefficients);
    Matrix w = Matrix::Zero(params_.value(lp.bases[0]).rows(), params_.value(lp.bases[0]).cols());
    for (std::size_t b = 0; b < lp.bases.size(); ++b)
        w += coef(r, static_cast<Eigen::Index>(b)) * params_.value(lp.bases[b]);
    return w;
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json + params.bin ("TYLRCKP1", then per tensor
// u16 name length, name, u32 rank, u32 dims..., f64 data in row-major order).

namespace {

constexpr char kCheckpointMagic[8] = {'T', 'Y', 'L', 'R', 'C', 'K', 'P', '1'};

template <typename T>
void put_le(std::ostream& out, T v) {
    static_assert(std::is_unsigned_v<T>);
    char b[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
    unsigned char b[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw FormatError("truncated params.bin");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
    return v;
}

nlohmann::json config_to_json(const ModelConfig& c) {
    return {
        {"hops", c.hops},
        {"layers", c.layers},
        {"hidden_dim", c.hidden_dim},
        {"bases", c.bases},
        {"attention_dim", c.attention_dim},
        {"relation_count", c.relation_count},
        {"semantic_enabled", c.semantic_enabled},
        {"semantic",
         {{"plm_dim", c.semantic.plm_dim},
          {"prompt_count", c.semantic.prompt_count},
          {"proj_dim", c.semantic.proj_dim},
          {"out_dim", c.semantic.out_dim},
          {"aggregation", to_string(c.semantic.aggregation)},
          {"ln_eps", c.semantic.ln_eps}}},
        {"seed", c.seed},
    };
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.hops = j.at("hops").get<int>();
    c.layers = j.at("layers").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.bases = j.at("bases").get<std::size_t>();
    c.attention_dim = j.at("attention_dim").get<std::size_t>();
    c.relation_count = j.at("relation_count").get<std::size_t>();
    c.semantic_enabled = j.at("semantic_enabled").get<bool>();
    const auto& s = j.at("semantic");
    c.semantic.plm_dim = s.at("plm_dim").get<std::uint32_t>();
    c.semantic.prompt_count = s.at("prompt_count").get<std::size_t>();
    c.semantic.proj_dim = s.at("proj_dim").get<std::size_t>();
    c.semantic.out_dim = s.at("out_dim").get<std::size_t>();
    c.semantic.aggregation = parse_aggregation(s.at("aggregation").get<std::string>());
    c.semantic.ln_eps = s.at("ln_eps").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

}  // namespace

void Model::save(const fs::path& dir) const {
    fs::create_directories(dir);
    {
        std::ofstream mf(dir / "manifest.json", std::ios::binary);
        if (!mf) throw NotFoundError("cannot write " + (dir / "manifest.json").string());
        auto j = config_to_json(config_);
        j["input_dim"] = config_.input_dim();
        mf << j.dump(2) << '\n';
    }
    std::ofstream out(dir / "params.bin", std::ios::binary);
    if (!out) throw NotFoundError("cannot write " + (dir / "params.bin").string());
    out.write(kCheckpointMagic, 8);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& name = params_.name(i);
        const Matrix& v = params_.value(i);
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        if (v.cols() == 1) {
            put_le<std::uint32_t>(out, 1);
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.rows()));
        } else {
            put_le<std::uint32_t>(out, 2);
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.rows()));
            put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.cols()));
        }
        for (Eigen::Index r = 0; r < v.rows(); ++r)
            for (Eigen::Index c = 0; c < v.cols(); ++c)
                put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v(r, c)));
    }
}

Model Model::load(const fs::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw NotFoundError("missing " + (dir / "manifest.json").string());
    ModelConfig config;
    try {
        config = config_from_json(nlohmann::json::parse(mf));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad checkpoint manifest: " + std::string(e.what()));
    }
    Model model = Model::create(config);

    std::ifstream in(dir / "params.bin", std::ios::binary);
    if (!in) throw NotFoundError("missing " + (dir / "params.bin").string());
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic))
        throw FormatError("params.bin: bad magic");
    std::vector<bool> seen(model.params_.size(), false);
    while (in.peek() != EOF) {
        auto len = get_le<std::uint16_t>(in);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw FormatError("truncated params.bin");
        auto rank = get_le<std::uint32_t>(in);
        if (rank < 1 || rank > 2) throw FormatError("tensor " + name + " has unsupported rank");
        Eigen::Index rows = get_le<std::uint32_t>(in);
        Eigen::Index cols = rank == 2 ? get_le<std::uint32_t>(in) : 1;
        std::size_t idx;
        try {
            idx = model.params_.index_of(name);
        } catch (const Error&) {
            throw FormatError("params.bin: unexpected tensor " + name);
        }
        Matrix& v = model.params_.value(idx);
        if (v.rows() != rows || v.cols() != cols)
            throw FormatError("params.bin: shape mismatch for " + name);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c)
                v(r, c) = std::bit_cast<double>(get_le<std::uint64_t>(in));
        seen[idx] = true;
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i]) throw FormatError("params.bin: missing tensor " + model.params_.name(i));
    return model;
}

// ---------------------------------------------------------------------------
// Forward

std::vector<Message> messages_of(const EnclosingSubgraph& sg, std::size_t relation_count) {
    std::vector<Message> msgs;
    msgs.reserve(2 * sg.edges.size());
    for (const auto& e : sg.edges) {
        if (e.rel >= relation_count) continue;  // relation unseen in training
        msgs.push_back({e.head, e.rel, e.tail});
        msgs.push_back({e.tail, static_cast<RelationId>(e.rel + relation_count), e.head});
    }
    return msgs;
}

std::vector<Var> initial_embeddings(Tape& tape, const Model& model, const EnclosingSubgraph& sg,
                                    const NodeFeatures& features) {
    const auto& cfg = model.config();
    std::vector<Var> h0;
    h0.reserve(sg.size());
    if (features.h0) {
        const Matrix& m = *features.h0;
        if (m.rows() != static_cast<Eigen::Index>(sg.size()) ||
            m.cols() != static_cast<Eigen::Index>(cfg.input_dim()))
            throw DomainError("h0 matrix shape does not match subgraph and model");
        for (Eigen::Index i = 0; i < m.rows(); ++i) h0.push_back(tape.constant(m.row(i).transpose()));
        return h0;
    }
    if (sg.k != cfg.hops) throw DomainError("subgraph hop budget differs from the model's");
    if (cfg.semantic_enabled && !features.store)
        throw DomainError("semantic model scored without an embedding store");
    for (std::size_t i = 0; i < sg.size(); ++i) {
        auto pos = positional_embedding(sg.dist_u[i], sg.dist_v[i], cfg.hops);
        Var hpos = tape.constant_vector(pos);
        Var hsem = cfg.semantic_enabled
                       ? encode(tape, *model.semantic(), *features.store, sg.nodes[i])
                       : tape.constant(Matrix::Zero(
                             static_cast<Eigen::Index>(cfg.semantic.out_dim), 1));
        std::array<Var, 2> parts{hpos, hsem};
        h0.push_back(tape.concat(parts));
    }
    return h0;
}

Var attention_weight(Tape& tape, const Model& model, std::size_t layer, Var h_sender,
                     Var h_receiver, Var e_rel, Var e_target) {
    const auto& lp = model.layers().at(layer - 1);
    std::array<Var, 5> terms{
        tape.matmul(tape.param(lp.att_src), h_sender),
        tape.matmul(tape.param(lp.att_dst), h_receiver),
        tape.matmul(tape.param(lp.att_rel), e_rel),
        tape.matmul(tape.param(lp.att_target), e_target),
        tape.param(lp.att_bias),
    };
    Var s = tape.relu(tape.sum(terms));
    return tape.sigmoid(tape.add(tape.matmul(tape.param(lp.att_out), s),
                                 tape.param(lp.att_out_bias)));
}

LayerTrace layer_forward(Tape& tape, const Model& model, std::size_t layer,
                         const EnclosingSubgraph& sg, const LayerTrace& prev, RelationId target_rel) {
    const auto& lp = model.layers().at(layer - 1);
    const std::size_t n = prev.nodes.size();
    const auto msgs = messages_of(sg, model.config().relation_count);
    for (const auto& m : msgs)
        if (m.receiver >= n || m.sender >= n)
            throw Error("subgraph edge references a node outside the subgraph");

    // Attention pre-activations split by input block; each block is computed
    // once per node / relation instead of once per message.
    std::vector<Var> att_from(n), att_to(n);
    for (std::size_t i = 0; i < n; ++i) {
        att_from[i] = tape.matmul(tape.param(lp.att_src), prev.nodes[i]);
        att_to[i] = tape.matmul(tape.param(lp.att_dst), prev.nodes[i]);
    }
    const Var att_tgt = tape.add(tape.matmul(tape.param(lp.att_target), prev.relations.at(target_rel)),
                                 tape.param(lp.att_bias));
    std::map<RelationId, Var> att_rel, w_rel;
    std::vector<Var> bases;
    for (auto b : lp.bases) bases.push_back(tape.param(b));

    LayerTrace next;
    std::vector<std::vector<Var>> inbox(n);
    next.attention.reserve(msgs.size());
    for (const auto& m : msgs) {
        const Var e_r = prev.relations.at(m.rel);
        auto [ait, fresh] = att_rel.try_emplace(m.rel);
        if (fresh) {
            ait->second = tape.matmul(tape.param(lp.att_rel), e_r);
            w_rel[m.rel] = tape.basis_combine(tape.param(lp.coefficients), m.rel, bases);
        }
        std::array<Var, 4> terms{att_from[m.sender], att_to[m.receiver], ait->second, att_tgt};
        Var s = tape.relu(tape.sum(terms));
        Var alpha = tape.sigmoid(
            tape.add(tape.matmul(tape.param(lp.att_out), s), tape.param(lp.att_out_bias)));
        next.attention.push_back(alpha);
        Var msg = tape.matmul(w_rel[m.rel], tape.sub(prev.nodes[m.sender], e_r));
        inbox[m.receiver].push_back(tape.scale(msg, alpha));
    }

    const Var w0 = tape.param(lp.self_loop);
    next.nodes.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Var self = tape.matmul(w0, prev.nodes[i]);
        if (inbox[i].empty()) {
            next.nodes.push_back(tape.relu(self));
        } else {
            inbox[i].push_back(self);
            next.nodes.push_back(tape.relu(tape.sum(inbox[i])));
        }
    }
    const Var w_update = tape.param(lp.rel_update);
    for (const auto& [r, e] : prev.relations) next.relations.emplace(r, tape.matmul(w_update, e));
    return next;
}

namespace {

void require_finite(const Tape& tape, Var v, const char* what) {
    if (!tape.value(v).allFinite()) throw NumericError(std::string("non-finite ") + what);
}

}  // namespace

ForwardResult forward(Tape& tape, const Model& model, const EnclosingSubgraph& sg,
                      std::span<const Var> h0, RelationId target_rel) {
    const auto& cfg = model.config();
    if (target_rel >= cfg.relation_count)
        throw DomainError("target relation " + std::to_string(target_rel) + " unknown to the model");
    if (h0.size() != sg.size()) throw DomainError("h0 rows must equal the subgraph node count");

    std::set<RelationId> rels{target_rel};
    for (const auto& m : messages_of(sg, cfg.relation_count)) rels.insert(m.rel);

    ForwardResult result;
    LayerTrace base;
    base.nodes.assign(h0.begin(), h0.end());
    const Var table = tape.param(model.relation_embeddings());
    for (RelationId r : rels) base.relations.emplace(r, tape.column(table, r));
    result.layers.push_back(std::move(base));

    for (int l = 1; l <= cfg.layers; ++l) {
        result.layers.push_back(layer_forward(tape, model, static_cast<std::size_t>(l), sg,
                                              result.layers.back(), target_rel));
        for (Var h : result.layers.back().nodes) require_finite(tape, h, "node embedding");
        result.pooled.push_back(tape.mean(result.layers.back().nodes));
    }

    const Var e_target = result.layers.back().relations.at(target_rel);
    const auto u = sg.head_index();
    const auto v = sg.tail_index();
    std::vector<Var> parts;
    parts.reserve(4 * static_cast<std::size_t>(cfg.layers));
    for (int l = 1; l <= cfg.layers; ++l) {
        const auto& layer = result.layers[static_cast<std::size_t>(l)];
        parts.push_back(result.pooled[static_cast<std::size_t>(l - 1)]);
        parts.push_back(layer.nodes[u]);
        parts.push_back(layer.nodes[v]);
        parts.push_back(e_target);
    }
    result.score = tape.matmul(tape.param(model.output_head()), tape.concat(parts));
    require_finite(tape, result.score, "score");
    return result;
}

double score(const Model& model, const EnclosingSubgraph& sg, const NodeFeatures& features) {
    Tape tape(model.params());
    auto h0 = initial_embeddings(tape, model, sg, features);
    return tape.scalar(forward(tape, model, sg, h0, sg.target.rel).score);
}

Eigen::VectorXd tail_embedding(const Model& model, const EnclosingSubgraph& sg,
                               const NodeFeatures& features) {
    Tape tape(model.params());
    auto h0 = initial_embeddings(tape, model, sg, features);
    auto fw = forward(tape, model, sg, h0, sg.target.rel);
    return tape.value(fw.layers.back().nodes[sg.tail_index()]).col(0);
}

ad::Gradients gradients(const Model& model, std::span<const ScoredExample> examples,
                        std::size_t threads) {
    if (examples.empty()) throw DomainError("gradients of an empty batch");
    std::vector<ad::Gradients> slots(examples.size());
    parallel_for(examples.size(), threads, [&](std::size_t i) {
        const auto& ex = examples[i];
        Tape tape(model.params());
        auto h0 = initial_embeddings(tape, model, *ex.subgraph, ex.features);
        auto fw = forward(tape, model, *ex.subgraph, h0, ex.subgraph->target.rel);
        slots[i] = ad::Gradients(model.params());
        tape.backward(fw.score, slots[i], ex.sign);
    });
    ad::Gradients total = std::move(slots[0]);
    for (std::size_t i = 1; i < slots.size(); ++i) total += slots[i];
    total.check_finite(model.params());
    return total;
}

}  // namespace tyler
