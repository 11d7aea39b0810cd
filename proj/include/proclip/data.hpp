#pragma once

#include "proclip/core.hpp"
#include "proclip/embedding.hpp"
#include "proclip/io.hpp"
#include "proclip/models.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace proclip {

/// Dimensions of every space in the synthetic world.
struct WorldDims {
    Eigen::Index latent = 8;    // shared concept space
    Eigen::Index image = 32;    // raw image features
    Eigen::Index caption = 32;  // raw caption features read by the CLIP-style text encoder
    Eigen::Index llm = 64;      // LLM embedder output
    Eigen::Index clip = 16;     // joint image-text space
    Eigen::Index hidden = 64;   // width of every hidden layer
};

struct WorldSpec {
    WorldDims dims;
    int n_classes = 32;
    // Within-class spread of the latent draw.
    double noise_sigma = 0.35;
    // Post-map isotropic noise of every view, as a multiple of noise_sigma.
    double view_noise_ratio = 0.1;
};

/// A frozen generative model: class prototypes in a latent space and three maps from a latent
/// draw to an image view, a caption view and an LLM-embedding view.
struct SyntheticWorld {
    std::uint64_t seed = 0;
    WorldSpec spec;
    Matrix prototypes;        // n_classes x latent
    Matrix image_map;         // image x latent, linear
    Matrix caption_map;       // caption x latent, linear
    ToyEncoder llm_embedder;  // frozen nonlinear latent -> llm map

    [[nodiscard]] double view_sigma() const { return spec.noise_sigma * spec.view_noise_ratio; }
};

/// Paired views of a set of samples, one row per sample.
struct PairedSet {
    Matrix images;    // B x image
    Matrix captions;  // B x caption
    Matrix llm;       // B x llm, the offline text embeddings
    std::vector<int> class_ids;

    [[nodiscard]] Eigen::Index size() const noexcept { return images.rows(); }
};

struct SplitSpec {
    int heldout_classes = 8;
    int eval_per_class = 4;
    int heldout_per_class = 64;
};

/// Fine-tune classes are 0..k-1, held-out classes k..n-1.
struct CorpusSplit {
    PairedSet finetune;
    PairedSet heldout;
    PairedSet retrieval_eval;  // fresh draws from the fine-tune classes
    std::vector<int> finetune_classes;
    std::vector<int> heldout_classes;
};

namespace detail {

inline double min_pairwise_distance(const Matrix& rows) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        for (Eigen::Index j = i + 1; j < rows.rows(); ++j)
            best = std::min(best, (rows.row(i) - rows.row(j)).norm());
    return best;
}

// Salts for the independent random streams of the generator.
enum Stream : std::uint64_t { kPrototypes = 1, kMaps = 2, kEmbedder = 3, kCorpus = 4 };

}  // namespace detail

[[nodiscard]] inline SyntheticWorld generate_world(std::uint64_t seed, const WorldSpec& spec) {
    const auto& d = spec.dims;
    require(d.latent >= 1 && d.image >= 1 && d.caption >= 1 && d.llm >= 1 && d.clip >= 1 && d.hidden >= 1,
            "generate_world: dimensions must be positive");
    require(spec.n_classes >= 4, "generate_world: need at least 4 classes");
    require(spec.noise_sigma >= 0.0 && spec.view_noise_ratio >= 0.0,
            "generate_world: noise levels must be non-negative");

    SyntheticWorld world;
    world.seed = seed;
    world.spec = spec;

    Rng proto_rng(derive_seed(seed, detail::kPrototypes));
    const double min_sep = 4.0 * spec.noise_sigma;
    bool separated = false;
    for (int attempt = 0; attempt < 100 && !separated; ++attempt) {
        world.prototypes = gaussian_matrix(spec.n_classes, d.latent, proto_rng);
        separated = detail::min_pairwise_distance(world.prototypes) >= min_sep;
    }
    if (!separated)
        throw ConfigError("generate_world: prototypes not separable after 100 attempts");

    Rng map_rng(derive_seed(seed, detail::kMaps));
    const double map_std = 1.0 / std::sqrt(static_cast<double>(d.latent));
    world.image_map = gaussian_matrix(d.image, d.latent, map_rng, map_std);
    world.caption_map = gaussian_matrix(d.caption, d.latent, map_rng, map_std);

    // Random GELU network, rescaled so its outputs have unit RMS over the prototypes.
    Mlp net = make_projector(d.latent, d.hidden, d.llm, derive_seed(seed, detail::kEmbedder));
    const double rms = std::sqrt(net.predict(world.prototypes).matrix().array().square().mean());
    if (rms > 0.0) {
        net.layers().back().weight /= rms;
        net.layers().back().bias /= rms;
    }
    world.llm_embedder = ToyEncoder("llm_embedder", std::move(net), /*frozen=*/true);
    return world;
}

[[nodiscard]] inline SyntheticWorld generate_world(std::uint64_t seed, const WorldDims& dims,
                                                   int n_classes, double noise_sigma) {
    WorldSpec spec;
    spec.dims = dims;
    spec.n_classes = n_classes;
    spec.noise_sigma = noise_sigma;
    return generate_world(seed, spec);
}

/// Draws `per_class` samples of each listed class. All three views of a sample come from the
/// same latent draw; every view then gets independent isotropic noise.
[[nodiscard]] inline PairedSet draw_samples(const SyntheticWorld& world, const std::vector<int>& classes,
                                            int per_class, Rng& rng) {
    const auto& d = world.spec.dims;
    const auto n = static_cast<Eigen::Index>(classes.size()) * per_class;
    Matrix latent(n, d.latent);
    PairedSet set;
    set.class_ids.reserve(static_cast<std::size_t>(n));
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Index row = 0;
    for (int k = 0; k < per_class; ++k) {
        for (int c : classes) {
            for (Eigen::Index j = 0; j < d.latent; ++j)
                latent(row, j) = world.prototypes(c, j) + world.spec.noise_sigma * normal(rng);
            set.class_ids.push_back(c);
            ++row;
        }
    }
    const double vs = world.view_sigma();
    set.images = latent * world.image_map.transpose() + gaussian_matrix(n, d.image, rng, vs);
    set.captions = latent * world.caption_map.transpose() + gaussian_matrix(n, d.caption, rng, vs);
    set.llm = world.llm_embedder.predict(latent).matrix() + gaussian_matrix(n, d.llm, rng, vs);
    return set;
}

/// Noise-free LLM embedding of each class's canonical caption (its prototype).
[[nodiscard]] inline Matrix canonical_llm(const SyntheticWorld& world, const std::vector<int>& classes) {
    Matrix latent(static_cast<Eigen::Index>(classes.size()), world.spec.dims.latent);
    for (std::size_t i = 0; i < classes.size(); ++i)
        latent.row(static_cast<Eigen::Index>(i)) = world.prototypes.row(classes[i]);
    return world.llm_embedder.predict(latent).matrix();
}

/// Noise-free raw caption features of each class's canonical caption.
[[nodiscard]] inline Matrix canonical_captions(const SyntheticWorld& world,
                                               const std::vector<int>& classes) {
    Matrix out(static_cast<Eigen::Index>(classes.size()), world.spec.dims.caption);
    for (std::size_t i = 0; i < classes.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) =
            world.caption_map * world.prototypes.row(classes[i]).transpose();
    return out;
}

[[nodiscard]] inline CorpusSplit sample_corpus(const SyntheticWorld& world, int n_per_class,
                                               const SplitSpec& split) {
    require(n_per_class >= 1, "sample_corpus: n_per_class must be at least 1");
    require(split.heldout_classes >= 0 && split.heldout_classes < world.spec.n_classes,
            "sample_corpus: held-out class count must be below the number of classes");
    require(split.eval_per_class >= 0 && split.heldout_per_class >= 0,
            "sample_corpus: per-class counts must be non-negative");
    CorpusSplit out;
    const int k = world.spec.n_classes - split.heldout_classes;
    for (int c = 0; c < world.spec.n_classes; ++c)
        (c < k ? out.finetune_classes : out.heldout_classes).push_back(c);

    Rng rng(derive_seed(world.seed, detail::kCorpus));
    out.finetune = draw_samples(world, out.finetune_classes, n_per_class, rng);
    out.retrieval_eval = draw_samples(world, out.finetune_classes, split.eval_per_class, rng);
    out.heldout = draw_samples(world, out.heldout_classes, split.heldout_per_class, rng);
    return out;
}

// ---------------------------------------------------------------------------------------
// PEMB embedding files: "PEMB" | u32 version | u64 rows | u64 cols | f64 values (row-major)
// ---------------------------------------------------------------------------------------

inline constexpr char kEmbeddingMagic[4] = {'P', 'E', 'M', 'B'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

[[nodiscard]] inline io::Bytes encode_embeddings(const Matrix& m) {
    io::Bytes out;
    out.reserve(24 + static_cast<std::size_t>(m.size()) * 8);
    io::put_bytes(out, std::string_view(kEmbeddingMagic, 4));
    io::put_le<std::uint32_t>(out, kEmbeddingVersion);
    io::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    io::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) io::put_le<double>(out, m.data()[i]);
    return out;
}

/// Decodes a PEMB payload. Values are not checked for finiteness here; wrapping the result in
/// an EmbeddingBatch does that.
[[nodiscard]] inline Matrix decode_embeddings(const io::Bytes& bytes) {
    io::ByteReader in(bytes);
    if (in.get_string(4, "magic") != std::string_view(kEmbeddingMagic, 4))
        throw ParseError("bad embedding file magic", 0);
    const auto version = in.get<std::uint32_t>("version");
    if (version != kEmbeddingVersion)
        throw ParseError("unsupported embedding file version " + std::to_string(version), 4);
    const auto rows = in.get<std::uint64_t>("row count");
    const auto cols = in.get<std::uint64_t>("column count");
    if (cols != 0 && rows > in.remaining() / 8 / cols)
        throw ParseError("truncated input while reading embedding values", in.offset());
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = in.get<double>("embedding value");
    if (!in.at_end()) throw ParseError("trailing bytes after embedding values", in.offset());
    return m;
}

inline void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch) {
    io::write_file(path, encode_embeddings(batch.matrix()));
}

[[nodiscard]] inline EmbeddingBatch read_embeddings(const std::filesystem::path& path) {
    return EmbeddingBatch(decode_embeddings(io::read_file(path)));
}

// ---------------------------------------------------------------------------------------
// Corpus on disk: one PEMB file per view and split plus manifest.json
// ---------------------------------------------------------------------------------------

inline constexpr const char* kCorpusManifest = "manifest.json";

namespace detail {

inline const char* const kSplitNames[] = {"finetune", "retrieval_eval", "heldout"};

inline PairedSet& split_by_name(CorpusSplit& c, const std::string& name) {
    if (name == "finetune") return c.finetune;
    if (name == "retrieval_eval") return c.retrieval_eval;
    return c.heldout;
}

inline const PairedSet& split_by_name(const CorpusSplit& c, const std::string& name) {
    return split_by_name(const_cast<CorpusSplit&>(c), name);
}

}  // namespace detail

/// Writes every split as PEMB files plus a manifest listing paths, class ids and split
/// membership. Output bytes depend only on the inputs.
inline void write_corpus(const std::filesystem::path& dir, const SyntheticWorld& world,
                         const CorpusSplit& corpus) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["format"] = "proclip-corpus";
    manifest["version"] = 1;
    manifest["world_seed"] = world.seed;
    manifest["n_classes"] = world.spec.n_classes;
    manifest["finetune_classes"] = corpus.finetune_classes;
    manifest["heldout_classes"] = corpus.heldout_classes;
    nlohmann::ordered_json splits = nlohmann::ordered_json::object();
    for (const char* name : detail::kSplitNames) {
        const PairedSet& set = detail::split_by_name(corpus, name);
        const std::string base = name;
        const struct { const char* view; const Matrix* m; } views[] = {
            {"images", &set.images}, {"captions", &set.captions}, {"llm", &set.llm}};
        nlohmann::ordered_json entry;
        for (const auto& v : views) {
            const std::string file = base + "_" + v.view + ".pemb";
            io::write_file(dir / file, encode_embeddings(*v.m));
            entry["files"][v.view] = file;
        }
        entry["class_ids"] = set.class_ids;
        splits[base] = entry;
    }
    manifest["splits"] = splits;
    const std::vector<int> all = [&] {
        std::vector<int> v(static_cast<std::size_t>(world.spec.n_classes));
        for (int c = 0; c < world.spec.n_classes; ++c) v[static_cast<std::size_t>(c)] = c;
        return v;
    }();
    io::write_file(dir / "class_prototypes_llm.pemb", encode_embeddings(canonical_llm(world, all)));
    io::write_file(dir / "class_prototypes_captions.pemb",
                   encode_embeddings(canonical_captions(world, all)));
    manifest["class_prototypes"] = {{"llm", "class_prototypes_llm.pemb"},
                                    {"captions", "class_prototypes_captions.pemb"}};
    io::write_text(dir / kCorpusManifest, manifest.dump(2) + "\n");
}

/// Corpus plus the canonical per-class embeddings, as read back from disk.
struct StoredCorpus {
    CorpusSplit corpus;
    Matrix prototype_llm;       // n_classes x llm
    Matrix prototype_captions;  // n_classes x caption
    std::uint64_t world_seed = 0;
    int n_classes = 0;
};

[[nodiscard]] inline StoredCorpus read_corpus(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(io::read_text(dir / kCorpusManifest));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed corpus manifest: " + std::string(e.what()));
    }
    StoredCorpus out;
    try {
        out.world_seed = manifest.at("world_seed").get<std::uint64_t>();
        out.n_classes = manifest.at("n_classes").get<int>();
        out.corpus.finetune_classes = manifest.at("finetune_classes").get<std::vector<int>>();
        out.corpus.heldout_classes = manifest.at("heldout_classes").get<std::vector<int>>();
        for (const char* name : detail::kSplitNames) {
            const auto& entry = manifest.at("splits").at(name);
            PairedSet& set = detail::split_by_name(out.corpus, name);
            const auto& files = entry.at("files");
            set.images = decode_embeddings(io::read_file(dir / files.at("images").get<std::string>()));
            set.captions = decode_embeddings(io::read_file(dir / files.at("captions").get<std::string>()));
            set.llm = decode_embeddings(io::read_file(dir / files.at("llm").get<std::string>()));
            set.class_ids = entry.at("class_ids").get<std::vector<int>>();
            require(static_cast<Eigen::Index>(set.class_ids.size()) == set.images.rows() &&
                        set.images.rows() == set.llm.rows() && set.images.rows() == set.captions.rows(),
                    std::string("corpus split '") + name + "' has inconsistent row counts");
        }
        const auto& protos = manifest.at("class_prototypes");
        out.prototype_llm = decode_embeddings(io::read_file(dir / protos.at("llm").get<std::string>()));
        out.prototype_captions =
            decode_embeddings(io::read_file(dir / protos.at("captions").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("malformed corpus manifest: " + std::string(e.what()));
    }
    return out;
}

}  // namespace proclip
