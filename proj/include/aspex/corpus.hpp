#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "aspex/common.hpp"

namespace aspex {

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kNumToken = "<num>";
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kNumId = 2;
inline constexpr int kNumSpecialTokens = 3;

// One newsgroup message after header and quotation stripping.
struct RawDocument {
    std::string doc_id;
    std::string newsgroup;
    std::string body;
    bool empty_after_strip = false;
};

struct IngestError {
    std::string path;
    std::string message;
};

struct IngestResult {
    std::vector<RawDocument> documents;  // name-sorted, deterministic
    std::vector<IngestError> errors;
};

// Reads one message per file from `dir`. The header block (everything up to
// the first blank line) is dropped, as are quoted lines (leading '>') and
// "... writes:" attribution lines. Unreadable files are recorded in
// `errors`; an empty or missing directory is a DataError.
IngestResult load_newsgroup_dir(const std::filesystem::path& dir,
                                const std::string& newsgroup);

struct Sentence {
    std::string sent_id;
    std::string doc_id;
    std::string domain;
    std::vector<std::string> tokens;
};

// Rule-based sentence splitter: breaks after . ! ? followed by whitespace
// and an upper-case letter (or end of text), with a fixed abbreviation list.
std::vector<std::string> split_sentences(const std::string& body);

// Lowercases, strips punctuation except intra-word apostrophes, folds
// digit-only tokens to <num>. Special tokens pass through untouched, which
// makes the function idempotent on its own output.
std::vector<std::string> tokenize_normalize(const std::string& span);

class Vocabulary {
public:
    Vocabulary();

    // Token ids: <pad>=0, <unk>=1, <num>=2, then content tokens ordered by
    // descending frequency (ties by token string).
    int id(const std::string& token) const;  // kUnkId when absent
    std::optional<int> find(const std::string& token) const;
    const std::string& token(int id) const;
    int64_t frequency(int id) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }
    int min_count() const { return min_count_; }
    static bool is_special(int id) { return id >= 0 && id < kNumSpecialTokens; }
    int content_size() const { return size() - kNumSpecialTokens; }

    uint64_t content_hash() const;

    void save(const std::filesystem::path& path) const;  // TSV token\tid\tfreq
    static Vocabulary load(const std::filesystem::path& path);

    // Used by build_vocab.
    void insert(const std::string& token, int64_t frequency);
    void set_min_count(int min_count) { min_count_ = min_count; }
    void add_frequency(int id, int64_t delta) { frequency_[id] += delta; }

private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
    std::vector<int64_t> frequency_;
    int min_count_ = 1;
};

struct SentenceDataset {
    std::vector<Sentence> sentences;
    std::string source;
    std::shared_ptr<const Vocabulary> vocab;  // set once build_vocab ran

    size_t size() const { return sentences.size(); }
    bool empty() const { return sentences.empty(); }
};

// Builds the vocabulary over `dataset` and rewrites every token whose corpus
// frequency is below `min_count` to <unk> in place. min_count >= 1; an empty
// dataset is a DataError.
std::shared_ptr<const Vocabulary> build_vocab(SentenceDataset& dataset, int min_count);

// Token ids for a sentence under `vocab`; unseen tokens map to <unk>.
std::vector<int> token_ids(const Sentence& sentence, const Vocabulary& vocab);

// Line-oriented JSON, one {"sent_id":…,"doc_id":…,"domain":…,"tokens":[…]}
// object per line, UTF-8, LF endings.
void write_dataset(const SentenceDataset& dataset, std::ostream& out);
void write_dataset(const SentenceDataset& dataset, const std::filesystem::path& path);
SentenceDataset read_dataset(std::istream& in, const std::string& source);
SentenceDataset read_dataset(const std::filesystem::path& path);

// Ingests the given newsgroups from a 20news-bydate style tree
// <root>/<newsgroup>/<message-file>: strip, split, tokenize. Sentences that
// tokenize to nothing are dropped.
SentenceDataset ingest_newsgroups(const std::filesystem::path& root,
                                  const std::vector<std::string>& newsgroups,
                                  std::vector<IngestError>* errors = nullptr);

// Subdirectory names under `root`, sorted.
std::vector<std::string> list_newsgroups(const std::filesystem::path& root);

// Collapses each document's sentences into one token sequence per post,
// preserving sentence order. Used by the full-text baselines.
SentenceDataset concatenate_documents(const SentenceDataset& dataset);

}  // namespace aspex
