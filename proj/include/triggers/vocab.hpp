#ifndef TRIGGERS_VOCAB_HPP
#define TRIGGERS_VOCAB_HPP

#include <Eigen/Core>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

namespace triggers {

/// Token <-> dense id mapping. Ids 0..3 are the special tokens below; content
/// tokens follow. Immutable after construction and safe to share across threads.
class Vocabulary {
public:
    static constexpr const char* kPad = "<pad>";
    static constexpr const char* kUnk = "<unk>";
    static constexpr const char* kBos = "<s>";
    static constexpr const char* kEos = "</s>";

    Vocabulary() = default;

    /// Reconstructs a vocabulary from an explicit token list. `specials` are the
    /// ids treated as special (never trigger candidates).
    Vocabulary(std::vector<std::string> tokens, std::vector<int> specials);

    int size() const { return static_cast<int>(tokens_.size()); }

    /// Token -> id; absent tokens map to the unknown id.
    int id(const std::string& token) const;

    /// Token -> id, erroring instead of mapping to unknown.
    int require_id(const std::string& token) const;

    bool contains(const std::string& token) const;

    const std::string& token(int id) const;

    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::vector<int>& specials() const { return specials_; }
    bool is_special(int id) const;

    int pad_id() const { return pad_id_; }
    int unk_id() const { return unk_id_; }
    int bos_id() const { return bos_id_; }
    int eos_id() const { return eos_id_; }

    /// FNV-1a hex digest over the token list and specials. Two vocabularies with
    /// the same hash index the same embedding space.
    std::string content_hash() const;

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    std::vector<int> specials_;
    int pad_id_ = -1;
    int unk_id_ = -1;
    int bos_id_ = -1;
    int eos_id_ = -1;
};

/// Builds a vocabulary from a token stream. Tokens with frequency >= min_count
/// get ids ordered by descending frequency, ties by lexicographic order; the
/// four special tokens always occupy ids 0..3.
Vocabulary build_vocab(std::span<const std::string> corpus, int min_count);

/// V x d embedding table. All rows finite.
struct EmbeddingMatrix {
    Eigen::MatrixXd rows; // V rows, d columns

    int dim() const { return static_cast<int>(rows.cols()); }
    int count() const { return static_cast<int>(rows.rows()); }

    /// Deterministic Gaussian table keyed on the vocabulary content hash and d,
    /// independent of any training seed: models built over the same vocabulary
    /// and dimension share the embedding space that replacement search ranges
    /// over, which is what makes gradient ensembling and transfer well defined.
    static EmbeddingMatrix deterministic(const Vocabulary& vocab, int dim);
};

/// Looks up rows for a sequence of ids. Exact copies, no transformation.
std::vector<Eigen::VectorXd> embed(const EmbeddingMatrix& matrix, std::span<const int> ids);

/// Embeds a full id sequence into an L x d matrix (row i = embedding of ids[i]).
Eigen::MatrixXd embed_matrix(const EmbeddingMatrix& matrix, std::span<const int> ids);

/// Decides which token ids replacement search may propose. Specials are always
/// rejected; a blacklist and an optional ASCII character range restrict further.
/// Resolved against a vocabulary at construction so permits() is O(1).
class TokenFilter {
public:
    TokenFilter() = default;

    static TokenFilter make(const Vocabulary& vocab,
                            const std::vector<std::string>& blacklist,
                            std::optional<std::pair<int, int>> charset_range = std::nullopt);

    /// Filter that permits every non-special token.
    static TokenFilter all(const Vocabulary& vocab);

    bool permits(int id) const;
    int permitted_count() const;

    const std::vector<std::string>& blacklist() const { return blacklist_; }
    const std::optional<std::pair<int, int>>& charset_range() const { return charset_; }

    nlohmann::json to_json() const;
    static TokenFilter from_json(const nlohmann::json& j, const Vocabulary& vocab);

private:
    std::vector<char> permit_;
    std::vector<std::string> blacklist_;
    std::optional<std::pair<int, int>> charset_;
};

/// Euclidean nearest permitted token to `query`; ties broken by smallest id.
int nearest_token(const EmbeddingMatrix& matrix, const Eigen::VectorXd& query,
                  const TokenFilter& filter);

/// GloVe-style text layout: one token per line, token string then d decimals.
void save_embeddings(const std::string& path, const Vocabulary& vocab,
                     const EmbeddingMatrix& matrix);

struct LoadedEmbeddings {
    std::vector<std::string> tokens;
    EmbeddingMatrix matrix;
};

LoadedEmbeddings load_embeddings(const std::string& path);

} // namespace triggers

#endif
