#include "aspex/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace aspex {

namespace {

bool is_blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(),
                       [](unsigned char c) { return std::isspace(c); });
}

std::string rtrim(std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
}

bool is_quoted_line(const std::string& line) {
    size_t i = 0;
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    return i < line.size() && line[i] == '>';
}

bool is_attribution_line(const std::string& line) {
    const std::string t = rtrim(line);
    static const std::string marker = "writes:";
    return t.size() >= marker.size() &&
           t.compare(t.size() - marker.size(), marker.size(), marker) == 0;
}

}  // namespace

IngestResult load_newsgroup_dir(const std::filesystem::path& dir,
                                const std::string& newsgroup) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw DataError("not a directory: " + dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    if (files.empty()) {
        throw DataError("no message files in " + dir.string());
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

    IngestResult result;
    for (const auto& file : files) {
        std::ifstream in(file, std::ios::binary);
        if (!in) {
            result.errors.push_back({file.string(), "unreadable file"});
            continue;
        }
        RawDocument doc;
        doc.doc_id = newsgroup + "/" + file.filename().string();
        doc.newsgroup = newsgroup;

        std::string line;
        bool in_header = true;
        std::string body;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (in_header) {
                if (is_blank(line)) in_header = false;
                continue;
            }
            if (is_quoted_line(line) || is_attribution_line(line)) continue;
            body += line;
            body += '\n';
        }
        if (in.bad()) {
            result.errors.push_back({file.string(), "read error"});
            continue;
        }
        doc.body = body;
        doc.empty_after_strip = is_blank(body);
        result.documents.push_back(std::move(doc));
    }
    return result;
}

namespace {

// Abbreviations whose trailing period does not end a sentence.
const std::array<const char*, 18> kAbbreviations = {
    "e.g.", "i.e.", "etc.", "cf.",  "vs.",   "dr.",   "mr.",  "mrs.", "ms.",
    "st.",  "prof.", "inc.", "jr.", "sr.",   "vol.",  "fig.", "dept.", "approx."};

bool ends_with_abbreviation(const std::string& text, size_t period_pos) {
    size_t start = period_pos;
    while (start > 0 && !std::isspace(static_cast<unsigned char>(text[start - 1]))) --start;
    std::string chunk = text.substr(start, period_pos - start + 1);
    std::transform(chunk.begin(), chunk.end(), chunk.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    for (const char* abbr : kAbbreviations) {
        if (chunk == abbr) return true;
    }
    return false;
}

}  // namespace

std::vector<std::string> split_sentences(const std::string& body) {
    // Work on a whitespace-flattened copy so sentences can span lines.
    std::string text;
    text.reserve(body.size());
    for (char c : body) {
        text += (c == '\n' || c == '\r' || c == '\t') ? ' ' : c;
    }

    std::vector<std::string> spans;
    auto emit = [&spans](const std::string& raw) {
        size_t b = raw.find_first_not_of(' ');
        if (b == std::string::npos) return;
        size_t e = raw.find_last_not_of(' ');
        spans.push_back(raw.substr(b, e - b + 1));
    };

    size_t start = 0;
    for (size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c != '.' && c != '!' && c != '?') continue;
        if (c == '.' && ends_with_abbreviation(text, i)) continue;
        // Boundary when followed by whitespace + capital, or end of text.
        size_t j = i + 1;
        while (j < text.size() && text[j] == ' ') ++j;
        if (j == text.size()) continue;  // final span emitted below
        if (j > i + 1 && std::isupper(static_cast<unsigned char>(text[j]))) {
            emit(text.substr(start, i - start + 1));
            start = j;
            i = j - 1;
        }
    }
    if (start < text.size()) emit(text.substr(start));
    return spans;
}

namespace {

bool is_special_token(const std::string& t) {
    return t == kPadToken || t == kUnkToken || t == kNumToken;
}

bool all_numeric(const std::string& t) {
    bool digit = false;
    for (char c : t) {
        if (c >= '0' && c <= '9') {
            digit = true;
        } else if (c != '.' && c != ',' && c != '-') {
            return false;
        }
    }
    return digit;
}

void emit_runs(const std::string& chunk, std::vector<std::string>& out) {
    size_t i = 0;
    while (i < chunk.size()) {
        char c = chunk[i];
        bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '\'';
        if (!keep) {
            ++i;
            continue;
        }
        size_t j = i;
        while (j < chunk.size()) {
            char d = chunk[j];
            if ((d >= 'a' && d <= 'z') || (d >= '0' && d <= '9') || d == '\'') {
                ++j;
            } else {
                break;
            }
        }
        std::string run = chunk.substr(i, j - i);
        i = j;
        size_t b = run.find_first_not_of('\'');
        if (b == std::string::npos) continue;
        size_t e = run.find_last_not_of('\'');
        run = run.substr(b, e - b + 1);
        bool has_letter = std::any_of(run.begin(), run.end(),
                                      [](char ch) { return ch >= 'a' && ch <= 'z'; });
        bool has_digit = std::any_of(run.begin(), run.end(),
                                     [](char ch) { return ch >= '0' && ch <= '9'; });
        if (has_letter) {
            out.push_back(run);
        } else if (has_digit) {
            out.push_back(kNumToken);
        }
    }
}

}  // namespace

std::vector<std::string> tokenize_normalize(const std::string& span) {
    std::vector<std::string> tokens;
    size_t i = 0;
    while (i < span.size()) {
        while (i < span.size() && std::isspace(static_cast<unsigned char>(span[i]))) ++i;
        size_t j = i;
        while (j < span.size() && !std::isspace(static_cast<unsigned char>(span[j]))) ++j;
        if (j == i) break;
        std::string chunk = span.substr(i, j - i);
        i = j;
        if (is_special_token(chunk)) {
            tokens.push_back(chunk);
            continue;
        }
        // Lowercase ASCII; anything non-ASCII acts as a delimiter later.
        for (char& c : chunk) {
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
            if (static_cast<unsigned char>(c) >= 128) c = ' ';
        }
        // Whole-chunk number forms like 25.50 or 1,200 fold to <num> before
        // inner punctuation would split them.
        size_t b = chunk.find_first_not_of(" \"'`([{<$#*~");
        size_t e = chunk.find_last_not_of(" \"'`)]}>.,;:!?*~%");
        if (b != std::string::npos && e != std::string::npos && b <= e) {
            std::string core = chunk.substr(b, e - b + 1);
            if (all_numeric(core)) {
                tokens.push_back(kNumToken);
                continue;
            }
        }
        emit_runs(chunk, tokens);
    }
    return tokens;
}

Vocabulary::Vocabulary() {
    insert(kPadToken, 0);
    insert(kUnkToken, 0);
    insert(kNumToken, 0);
}

void Vocabulary::insert(const std::string& token, int64_t frequency) {
    auto [it, fresh] = token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    if (!fresh) throw DataError("duplicate vocabulary token: " + token);
    id_to_token_.push_back(token);
    frequency_.push_back(frequency);
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

std::optional<int> Vocabulary::find(const std::string& token) const {
    auto it = token_to_id_.find(token);
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
}

const std::string& Vocabulary::token(int id) const {
    return id_to_token_.at(static_cast<size_t>(id));
}

int64_t Vocabulary::frequency(int id) const {
    return frequency_.at(static_cast<size_t>(id));
}

uint64_t Vocabulary::content_hash() const {
    uint64_t h = 14695981039346656037ull;
    for (int i = 0; i < size(); ++i) {
        h = fnv1a(id_to_token_[i], h);
        int64_t f = frequency_[i];
        h = fnv1a(&f, sizeof(f), h);
    }
    return h;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file: " + path.string());
    for (int i = 0; i < size(); ++i) {
        out << id_to_token_[i] << '\t' << i << '\t' << frequency_[i] << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read vocabulary file: " + path.string());
    Vocabulary vocab;
    vocab.token_to_id_.clear();
    vocab.id_to_token_.clear();
    vocab.frequency_.clear();
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        size_t t1 = line.find('\t');
        size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) +
                            ": expected token<TAB>id<TAB>frequency");
        }
        std::string token = line.substr(0, t1);
        int id = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
        int64_t freq = std::stoll(line.substr(t2 + 1));
        if (id != static_cast<int>(vocab.id_to_token_.size())) {
            throw DataError(path.string() + ": line " + std::to_string(line_no) +
                            ": ids must be contiguous and sorted");
        }
        vocab.insert(token, freq);
    }
    if (vocab.size() < kNumSpecialTokens || vocab.token(kPadId) != kPadToken ||
        vocab.token(kUnkId) != kUnkToken || vocab.token(kNumId) != kNumToken) {
        throw DataError(path.string() + ": missing reserved special tokens");
    }
    return vocab;
}

std::shared_ptr<const Vocabulary> build_vocab(SentenceDataset& dataset, int min_count) {
    if (min_count < 1) throw DataError("min_count must be >= 1");
    if (dataset.sentences.empty()) throw DataError("cannot build vocabulary from an empty dataset");

    std::unordered_map<std::string, int64_t> counts;
    for (const Sentence& s : dataset.sentences) {
        for (const std::string& t : s.tokens) ++counts[t];
    }

    auto vocab = std::make_shared<Vocabulary>();
    vocab->set_min_count(min_count);
    vocab->add_frequency(kUnkId, counts.count(kUnkToken) ? counts[kUnkToken] : 0);
    vocab->add_frequency(kNumId, counts.count(kNumToken) ? counts[kNumToken] : 0);

    std::vector<std::pair<std::string, int64_t>> kept;
    for (const auto& [token, freq] : counts) {
        if (is_special_token(token)) continue;
        if (freq >= min_count) kept.emplace_back(token, freq);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [token, freq] : kept) vocab->insert(token, freq);

    // Rewrite dropped tokens to <unk>.
    for (Sentence& s : dataset.sentences) {
        for (std::string& t : s.tokens) {
            if (!vocab->find(t)) {
                t = kUnkToken;
                vocab->add_frequency(kUnkId, 1);
            }
        }
    }
    dataset.vocab = vocab;
    return vocab;
}

std::vector<int> token_ids(const Sentence& sentence, const Vocabulary& vocab) {
    std::vector<int> ids;
    ids.reserve(sentence.tokens.size());
    for (const std::string& t : sentence.tokens) ids.push_back(vocab.id(t));
    return ids;
}

void write_dataset(const SentenceDataset& dataset, std::ostream& out) {
    for (const Sentence& s : dataset.sentences) {
        nlohmann::ordered_json j;
        j["sent_id"] = s.sent_id;
        j["doc_id"] = s.doc_id;
        j["domain"] = s.domain;
        j["tokens"] = s.tokens;
        out << j.dump() << '\n';
    }
}

void write_dataset(const SentenceDataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write dataset file: " + path.string());
    write_dataset(dataset, out);
    if (!out) throw DataError("write failed: " + path.string());
}

SentenceDataset read_dataset(std::istream& in, const std::string& source) {
    SentenceDataset dataset;
    dataset.source = source;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(source + ": line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("sent_id") || !j.contains("doc_id") || !j.contains("domain") ||
            !j.contains("tokens") || !j["tokens"].is_array() || j["tokens"].empty()) {
            throw DataError(source + ": line " + std::to_string(line_no) +
                            ": missing or empty sentence fields");
        }
        Sentence s;
        s.sent_id = j["sent_id"].get<std::string>();
        s.doc_id = j["doc_id"].get<std::string>();
        s.domain = j["domain"].get<std::string>();
        for (const auto& t : j["tokens"]) s.tokens.push_back(t.get<std::string>());
        dataset.sentences.push_back(std::move(s));
    }
    return dataset;
}

SentenceDataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read dataset file: " + path.string());
    return read_dataset(in, path.string());
}

SentenceDataset ingest_newsgroups(const std::filesystem::path& root,
                                  const std::vector<std::string>& newsgroups,
                                  std::vector<IngestError>* errors) {
    SentenceDataset dataset;
    std::string joined;
    for (const std::string& group : newsgroups) {
        IngestResult loaded = load_newsgroup_dir(root / group, group);
        if (errors) {
            errors->insert(errors->end(), loaded.errors.begin(), loaded.errors.end());
        }
        for (const RawDocument& doc : loaded.documents) {
            int index = 0;
            for (const std::string& span : split_sentences(doc.body)) {
                Sentence s;
                s.tokens = tokenize_normalize(span);
                if (s.tokens.empty()) continue;
                s.doc_id = doc.doc_id;
                s.domain = doc.newsgroup;
                s.sent_id = doc.doc_id + "#" + std::to_string(index++);
                dataset.sentences.push_back(std::move(s));
            }
        }
        joined += joined.empty() ? group : "," + group;
    }
    dataset.source = root.string() + ":" + joined;
    return dataset;
}

std::vector<std::string> list_newsgroups(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw DataError("not a directory: " + root.string());
    std::vector<std::string> groups;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) groups.push_back(entry.path().filename().string());
    }
    std::sort(groups.begin(), groups.end());
    return groups;
}

SentenceDataset concatenate_documents(const SentenceDataset& dataset) {
    SentenceDataset full;
    full.source = dataset.source + " (full texts)";
    full.vocab = dataset.vocab;
    std::unordered_map<std::string, size_t> index;
    for (const Sentence& s : dataset.sentences) {
        auto it = index.find(s.doc_id);
        if (it == index.end()) {
            index.emplace(s.doc_id, full.sentences.size());
            Sentence doc;
            doc.sent_id = s.doc_id + "#full";
            doc.doc_id = s.doc_id;
            doc.domain = s.domain;
            doc.tokens = s.tokens;
            full.sentences.push_back(std::move(doc));
        } else {
            auto& tokens = full.sentences[it->second].tokens;
            tokens.insert(tokens.end(), s.tokens.begin(), s.tokens.end());
        }
    }
    return full;
}

}  // namespace aspex
