#include "triggers/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "triggers/errors.hpp"
#include "triggers/io.hpp"

namespace triggers {

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::vector<int> specials)
    : tokens_(std::move(tokens)), specials_(std::move(specials)) {
    index_.reserve(tokens_.size());
    for (int i = 0; i < static_cast<int>(tokens_.size()); ++i) {
        auto [it, inserted] = index_.emplace(tokens_[i], i);
        if (!inserted) {
            throw DataError("duplicate token in vocabulary: " + tokens_[i]);
        }
    }
    std::sort(specials_.begin(), specials_.end());
    for (int s : specials_) {
        if (s < 0 || s >= size()) {
            throw DataError("special id out of range");
        }
    }
    auto find = [&](const char* tok) {
        auto it = index_.find(tok);
        return it == index_.end() ? -1 : it->second;
    };
    pad_id_ = find(kPad);
    unk_id_ = find(kUnk);
    bos_id_ = find(kBos);
    eos_id_ = find(kEos);
    if (unk_id_ < 0) {
        throw DataError("vocabulary missing unknown token");
    }
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? unk_id_ : it->second;
}

int Vocabulary::require_id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) {
        throw DataError("token not in vocabulary: " + token);
    }
    return it->second;
}

bool Vocabulary::contains(const std::string& token) const {
    return index_.find(token) != index_.end();
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) {
        throw DataError("unknown token id");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::is_special(int id) const {
    return std::binary_search(specials_.begin(), specials_.end(), id);
}

std::string Vocabulary::content_hash() const {
    std::string blob;
    for (const auto& t : tokens_) {
        blob += t;
        blob += '\n';
    }
    blob += '|';
    for (int s : specials_) {
        blob += std::to_string(s);
        blob += ',';
    }
    return fnv1a64_hex(blob);
}

nlohmann::json Vocabulary::to_json() const {
    return nlohmann::json{{"tokens", tokens_}, {"specials", specials_}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    if (!j.contains("tokens") || !j.contains("specials")) {
        throw DataError("vocabulary json requires 'tokens' and 'specials'");
    }
    return Vocabulary(j.at("tokens").get<std::vector<std::string>>(),
                      j.at("specials").get<std::vector<int>>());
}

Vocabulary build_vocab(std::span<const std::string> corpus, int min_count) {
    if (corpus.empty()) {
        throw DataError("empty corpus");
    }
    if (min_count < 1) {
        throw DataError("min_count must be >= 1");
    }
    std::unordered_map<std::string, long> freq;
    for (const auto& tok : corpus) {
        ++freq[tok];
    }
    std::vector<std::pair<std::string, long>> kept;
    kept.reserve(freq.size());
    for (auto& [tok, n] : freq) {
        if (n >= min_count && tok != Vocabulary::kPad && tok != Vocabulary::kUnk &&
            tok != Vocabulary::kBos && tok != Vocabulary::kEos) {
            kept.emplace_back(tok, n);
        }
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> tokens = {Vocabulary::kPad, Vocabulary::kUnk,
                                       Vocabulary::kBos, Vocabulary::kEos};
    for (auto& [tok, n] : kept) {
        tokens.push_back(tok);
    }
    return Vocabulary(std::move(tokens), {0, 1, 2, 3});
}

EmbeddingMatrix EmbeddingMatrix::deterministic(const Vocabulary& vocab, int dim) {
    if (dim < 1) {
        throw DataError("embedding dim must be >= 1");
    }
    std::uint64_t key = fnv1a64(vocab.content_hash() + "#" + std::to_string(dim));
    std::mt19937_64 rng(key);
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    EmbeddingMatrix m;
    m.rows.resize(vocab.size(), dim);
    for (int i = 0; i < vocab.size(); ++i) {
        for (int j = 0; j < dim; ++j) {
            m.rows(i, j) = gauss(rng);
        }
    }
    m.rows.row(vocab.pad_id()).setZero();
    return m;
}

std::vector<Eigen::VectorXd> embed(const EmbeddingMatrix& matrix, std::span<const int> ids) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id >= matrix.count()) {
            throw DataError("unknown token id");
        }
        out.emplace_back(matrix.rows.row(id).transpose());
    }
    return out;
}

Eigen::MatrixXd embed_matrix(const EmbeddingMatrix& matrix, std::span<const int> ids) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), matrix.dim());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= matrix.count()) {
            throw DataError("unknown token id");
        }
        out.row(static_cast<Eigen::Index>(i)) = matrix.rows.row(ids[i]);
    }
    return out;
}

TokenFilter TokenFilter::make(const Vocabulary& vocab,
                              const std::vector<std::string>& blacklist,
                              std::optional<std::pair<int, int>> charset_range) {
    TokenFilter f;
    f.blacklist_ = blacklist;
    f.charset_ = charset_range;
    f.permit_.assign(static_cast<std::size_t>(vocab.size()), 1);
    for (int s : vocab.specials()) {
        f.permit_[static_cast<std::size_t>(s)] = 0;
    }
    for (const auto& tok : blacklist) {
        if (vocab.contains(tok)) {
            f.permit_[static_cast<std::size_t>(vocab.id(tok))] = 0;
        }
    }
    if (charset_range) {
        auto [lo, hi] = *charset_range;
        for (int id = 0; id < vocab.size(); ++id) {
            if (!f.permit_[static_cast<std::size_t>(id)]) continue;
            for (unsigned char c : vocab.token(id)) {
                if (c < lo || c > hi) {
                    f.permit_[static_cast<std::size_t>(id)] = 0;
                    break;
                }
            }
        }
    }
    return f;
}

TokenFilter TokenFilter::all(const Vocabulary& vocab) {
    return make(vocab, {});
}

bool TokenFilter::permits(int id) const {
    if (id < 0 || id >= static_cast<int>(permit_.size())) return false;
    return permit_[static_cast<std::size_t>(id)] != 0;
}

int TokenFilter::permitted_count() const {
    return static_cast<int>(std::count(permit_.begin(), permit_.end(), char(1)));
}

nlohmann::json TokenFilter::to_json() const {
    nlohmann::json j{{"blacklist", blacklist_}};
    if (charset_) {
        j["charset"] = {charset_->first, charset_->second};
    }
    return j;
}

TokenFilter TokenFilter::from_json(const nlohmann::json& j, const Vocabulary& vocab) {
    std::vector<std::string> blacklist;
    std::optional<std::pair<int, int>> charset;
    if (j.contains("blacklist")) {
        blacklist = j.at("blacklist").get<std::vector<std::string>>();
    }
    if (j.contains("charset")) {
        auto arr = j.at("charset");
        if (!arr.is_array() || arr.size() != 2) {
            throw DataError("filter charset must be [lo, hi]");
        }
        charset = std::make_pair(arr[0].get<int>(), arr[1].get<int>());
    }
    return make(vocab, blacklist, charset);
}

int nearest_token(const EmbeddingMatrix& matrix, const Eigen::VectorXd& query,
                  const TokenFilter& filter) {
    if (!query.allFinite()) {
        throw DataError("nearest_token query must be finite");
    }
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int id = 0; id < matrix.count(); ++id) {
        if (!filter.permits(id)) continue;
        double d2 = (matrix.rows.row(id).transpose() - query).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = id;
        }
    }
    if (best < 0) {
        throw DataError("empty candidate set");
    }
    return best;
}

void save_embeddings(const std::string& path, const Vocabulary& vocab,
                     const EmbeddingMatrix& matrix) {
    if (vocab.size() != matrix.count()) {
        throw DataError("embedding row count does not match vocabulary size");
    }
    std::ostringstream out;
    out.precision(17);
    for (int i = 0; i < vocab.size(); ++i) {
        out << vocab.token(i);
        for (int j = 0; j < matrix.dim(); ++j) {
            out << ' ' << matrix.rows(i, j);
        }
        out << '\n';
    }
    atomic_write(path, out.str());
}

LoadedEmbeddings load_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open embedding file: " + path);
    }
    LoadedEmbeddings out;
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    int dim = -1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string token;
        ls >> token;
        std::vector<double> vals;
        double v;
        while (ls >> v) {
            vals.push_back(v);
        }
        if (!ls.eof()) {
            throw DataError("embedding file line " + std::to_string(lineno) +
                            ": non-numeric column");
        }
        if (dim < 0) {
            if (vals.empty()) {
                throw DataError("embedding file line " + std::to_string(lineno) +
                                ": no embedding values");
            }
            dim = static_cast<int>(vals.size());
        } else if (static_cast<int>(vals.size()) != dim) {
            throw DataError("embedding file line " + std::to_string(lineno) +
                            ": expected " + std::to_string(dim) + " values, got " +
                            std::to_string(vals.size()));
        }
        for (double x : vals) {
            if (!std::isfinite(x)) {
                throw DataError("embedding file line " + std::to_string(lineno) +
                                ": non-finite value");
            }
        }
        out.tokens.push_back(token);
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) {
        throw DataError("embedding file is empty: " + path);
    }
    out.matrix.rows.resize(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < dim; ++j) {
            out.matrix.rows(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
        }
    }
    return out;
}

} // namespace triggers
