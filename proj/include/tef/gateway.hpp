#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>
#include <openssl/evp.h>

#include "tef/error.hpp"
#include "tef/history_types.hpp"
#include "tef/prompting.hpp"
#include "tef/retrieval.hpp"
#include "tef/rng.hpp"
#include "tef/text.hpp"

namespace tef {

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("sha256 digest failed");
    }
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Requests and cache keys

struct ChatRequest {
    std::string model_id;
    std::string prompt;
    double temperature{0.0};
    std::uint64_t seed{0};
    std::size_t max_output_tokens{256};

    bool operator==(const ChatRequest&) const = default;
};

struct EmbedRequest {
    std::string model_id;
    std::string text;

    bool operator==(const EmbedRequest&) const = default;
};

/// Digest over the canonical serialization: every request field participates,
/// so changing any one of them changes the key.
inline std::string cache_key(const ChatRequest& r) {
    nlohmann::json j{{"kind", "chat"},
                     {"max_output_tokens", r.max_output_tokens},
                     {"model_id", r.model_id},
                     {"prompt", r.prompt},
                     {"seed", r.seed},
                     {"temperature", r.temperature}};
    return sha256_hex(j.dump());
}

inline std::string cache_key(const EmbedRequest& r) {
    nlohmann::json j{{"kind", "embed"}, {"model_id", r.model_id}, {"text", r.text}};
    return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Transports

class Transport {
public:
    virtual ~Transport() = default;
    virtual std::string chat(const ChatRequest& request) = 0;
    virtual std::vector<float> embed(const EmbedRequest& request) = 0;
};

enum class ScriptedPolicy { recency, fixed_label, echo_candidates, scripted_map };

inline const char* to_string(ScriptedPolicy p) {
    switch (p) {
        case ScriptedPolicy::recency: return "recency";
        case ScriptedPolicy::fixed_label: return "fixed-label";
        case ScriptedPolicy::echo_candidates: return "echo-candidates";
        case ScriptedPolicy::scripted_map: return "scripted-map";
    }
    return "?";
}

struct ScriptedConfig {
    ScriptedPolicy policy{ScriptedPolicy::recency};
    char fixed_label{'A'};
    std::size_t summary_sentences{2};
    std::unordered_map<std::string, std::string> replies;  // exact prompt -> reply
    std::size_t embed_dim{64};
    std::uint64_t embed_seed{0};
};

namespace detail {

/// The option texts of a rendered MCQ prompt, in label order.
inline std::vector<std::string> parse_prompt_options(const std::string& prompt) {
    std::vector<std::string> out;
    auto pos = prompt.rfind("[Options]");
    if (pos == std::string::npos) return out;
    std::size_t i = pos;
    while (i < prompt.size()) {
        auto eol = prompt.find('\n', i);
        if (eol == std::string::npos) eol = prompt.size();
        std::string line = prompt.substr(i, eol - i);
        char expect = static_cast<char>('A' + out.size());
        if (line.size() > 2 && line[0] == expect && line[1] == '.' && line[2] == ' ')
            out.push_back(line.substr(3));
        i = eol + 1;
        if (out.size() == 6) break;
    }
    return out;
}

/// The span of prompt text holding the history sections, if any.
inline std::optional<std::string> prompt_history_region(const std::string& prompt) {
    std::size_t begin = std::string::npos;
    for (const char* h : {"[Nearest Events]", "[Further Events]", "[Related Events]",
                          "[Relevant Event]", "[Relevant News Text]"}) {
        auto p = prompt.find(h);
        if (p != std::string::npos && p < begin) begin = p;
    }
    if (begin == std::string::npos) return std::nullopt;
    auto end = prompt.rfind("[Options]");
    if (end == std::string::npos || end <= begin) end = prompt.size();
    return prompt.substr(begin, end - begin);
}

inline std::vector<std::string> parse_prompt_candidates(const std::string& prompt) {
    std::vector<std::string> out;
    // rfind: the instruction text also mentions the identifier; the bound
    // list is the last occurrence.
    auto pos = prompt.rfind("[Candidate Set]");
    if (pos == std::string::npos) return out;
    std::size_t i = prompt.find('\n', pos);
    while (i != std::string::npos && i + 1 < prompt.size()) {
        auto eol = prompt.find('\n', i + 1);
        std::string line = prompt.substr(i + 1, (eol == std::string::npos ? prompt.size() : eol) - i - 1);
        if (line.rfind("- ", 0) == 0)
            out.push_back(line.substr(2));
        else if (!text::trim(line).empty())
            break;
        i = eol;
    }
    return out;
}

inline const char* summary_marker() { return "[Document]\n"; }

/// Day stamp of one rendered history line: an explicit trailing ", T);" on a
/// quadruple, else the day of the preceding "[Date]T:" header (as used by the
/// text and mixed formats), else nullopt.
inline std::optional<std::int64_t> line_day(const std::string& line,
                                            std::optional<std::int64_t> header_day) {
    auto close = line.rfind(");");
    if (close != std::string::npos && close > 0) {
        std::size_t end = close;
        std::size_t begin = end;
        while (begin > 0 && std::isdigit(static_cast<unsigned char>(line[begin - 1]))) --begin;
        if (begin < end) {
            std::size_t before = begin;
            while (before > 0 && line[before - 1] == ' ') --before;
            if (before > 0 && line[before - 1] == ',')
                return std::stoll(line.substr(begin, end - begin));
        }
    }
    return header_day;
}

inline std::optional<std::int64_t> header_day_of(const std::string& line) {
    const std::string tag = "[Date]";
    if (line.rfind(tag, 0) != 0) return std::nullopt;
    std::size_t i = tag.size(), begin = i;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i == begin || i >= line.size() || line[i] != ':') return std::nullopt;
    return std::stoll(line.substr(begin, i - begin));
}

}  // namespace detail

/// Offline responder: a pure function of the prompt text. It recognizes the
/// three prompt shapes this project emits (forecasting MCQ, entity filter,
/// summarization) and answers each deterministically under the configured
/// policy, making end-to-end runs testable with zero network.
class ScriptedTransport : public Transport {
public:
    explicit ScriptedTransport(ScriptedConfig config = {}) : config_(std::move(config)) {}

    std::string chat(const ChatRequest& request) override {
        const std::string& p = request.prompt;
        if (!config_.replies.empty()) {
            auto it = config_.replies.find(p);
            if (it != config_.replies.end()) return it->second;
            if (config_.policy == ScriptedPolicy::scripted_map)
                throw TransportError("scripted-map transport has no reply for prompt with key " +
                                     cache_key(request));
        }
        if (auto marker = p.find(detail::summary_marker()); marker != std::string::npos)
            return summarize(p, marker);
        if (p.find("[Candidate Set]") != std::string::npos) return filter(p);
        return answer_mcq(p);
    }

    std::vector<float> embed(const EmbedRequest& request) override {
        return HashingEmbedder(config_.embed_dim, config_.embed_seed).embed(request.text);
    }

private:
    std::string summarize(const std::string& prompt, std::size_t marker) const {
        // Skip the title line that follows the marker; the rest is the body.
        auto body_start = prompt.find('\n', marker + std::strlen(detail::summary_marker()));
        if (body_start == std::string::npos) return "";
        auto sentences = text::split_sentences(prompt.substr(body_start + 1));
        if (sentences.size() > config_.summary_sentences)
            sentences.resize(config_.summary_sentences);
        return text::join(sentences, " ");
    }

    std::string filter(const std::string& prompt) const {
        // Echo every candidate: the identity filter.
        auto names = detail::parse_prompt_candidates(prompt);
        return text::join(names, "\n");
    }

    std::string answer_mcq(const std::string& prompt) const {
        if (config_.policy == ScriptedPolicy::fixed_label)
            return std::string(1, config_.fixed_label);
        auto options = detail::parse_prompt_options(prompt);
        auto fallback = [&] {
            return std::string(1, static_cast<char>('A' + hash_bytes(prompt, 0x5eed) % 6));
        };
        if (config_.policy != ScriptedPolicy::recency || options.empty()) return fallback();
        auto region = detail::prompt_history_region(prompt);
        if (!region) return fallback();
        // Recency: the option mentioned on the most recent history day.
        // Quadruples carry their own day; date headers stamp the lines that
        // follow them. Ties fall back to line order, then to position within
        // the line, so the object slot of a quadruple beats its subject.
        std::optional<std::tuple<std::int64_t, std::size_t, std::size_t>> best_key;
        std::size_t best = 0;
        std::optional<std::int64_t> header_day;
        std::size_t start = 0, line_no = 0;
        while (start <= region->size()) {
            auto eol = region->find('\n', start);
            std::string line = region->substr(
                start, (eol == std::string::npos ? region->size() : eol) - start);
            if (auto h = detail::header_day_of(line)) header_day = h;
            auto day = detail::line_day(line, header_day);
            for (std::size_t i = 0; i < options.size(); ++i)
                if (auto pos = text::canonical_find(line, options[i])) {
                    std::tuple<std::int64_t, std::size_t, std::size_t> key{
                        day.value_or(std::numeric_limits<std::int64_t>::min()), line_no, *pos};
                    if (!best_key || key > *best_key) {
                        best_key = key;
                        best = i;
                    }
                }
            if (eol == std::string::npos) break;
            start = eol + 1;
            ++line_no;
        }
        if (!best_key) return fallback();
        return std::string(1, static_cast<char>('A' + best));
    }

    ScriptedConfig config_;
};

/// Chat-completion HTTP client for OpenAI-compatible endpoints. Base URL and
/// credentials come from the environment (TEF_API_BASE, TEF_API_KEY).
class HttpTransport : public Transport {
public:
    explicit HttpTransport(std::string base_url, std::string api_key = {},
                           int timeout_seconds = 120)
        : base_url_(std::move(base_url)), api_key_(std::move(api_key)),
          timeout_seconds_(timeout_seconds) {}

    static std::unique_ptr<HttpTransport> from_env();

    std::string chat(const ChatRequest& request) override;
    std::vector<float> embed(const EmbedRequest& request) override;

private:
    std::string post_json(const std::string& path, const nlohmann::json& body);

    std::string base_url_;
    std::string api_key_;
    int timeout_seconds_;
};

// ---------------------------------------------------------------------------
// Replay cache

enum class CacheMode { off, record, replay };

inline const char* to_string(CacheMode m) {
    switch (m) {
        case CacheMode::off: return "off";
        case CacheMode::record: return "record";
        case CacheMode::replay: return "replay";
    }
    return "?";
}

/// Append-only NDJSON request/reply store. Each line carries the digest key,
/// the verbatim request fields, the reply, and a timestamp. Reloading keeps
/// the last record per key, so a corrected line appended later wins.
class ReplayCache {
public:
    ReplayCache() = default;

    static ReplayCache load(const std::filesystem::path& path) {
        ReplayCache c;
        c.path_ = path;
        std::ifstream in(path);
        if (!in) return c;  // absent cache file = empty cache
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(path.string(), lineno, e.what());
            }
            if (!j.contains("key") || !j.contains("kind"))
                throw ParseError(path.string(), lineno, "cache record missing key/kind");
            std::string key = j["key"].get<std::string>();
            if (j["kind"] == "chat")
                c.chat_[key] = j["reply"].get<std::string>();
            else if (j["kind"] == "embed")
                c.embed_[key] = j["vector"].get<std::vector<float>>();
            else
                throw ParseError(path.string(), lineno, "unknown cache record kind");
        }
        return c;
    }

    void set_path(const std::filesystem::path& path) { path_ = path; }
    const std::filesystem::path& path() const { return path_; }

    std::optional<std::string> chat_reply(const std::string& key) const {
        std::lock_guard lock(*mu_);
        auto it = chat_.find(key);
        if (it == chat_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<std::vector<float>> embed_vector(const std::string& key) const {
        std::lock_guard lock(*mu_);
        auto it = embed_.find(key);
        if (it == embed_.end()) return std::nullopt;
        return it->second;
    }

    void put_chat(const std::string& key, const ChatRequest& r, const std::string& reply) {
        nlohmann::json j{{"key", key},
                         {"kind", "chat"},
                         {"model_id", r.model_id},
                         {"prompt", r.prompt},
                         {"temperature", r.temperature},
                         {"seed", r.seed},
                         {"max_output_tokens", r.max_output_tokens},
                         {"reply", reply},
                         {"created_at", now_iso()}};
        std::lock_guard lock(*mu_);
        chat_[key] = reply;
        append(j);
    }

    void put_embed(const std::string& key, const EmbedRequest& r, const std::vector<float>& v) {
        nlohmann::json j{{"key", key},     {"kind", "embed"}, {"model_id", r.model_id},
                         {"text", r.text}, {"vector", v},     {"created_at", now_iso()}};
        std::lock_guard lock(*mu_);
        embed_[key] = v;
        append(j);
    }

    std::size_t size() const {
        std::lock_guard lock(*mu_);
        return chat_.size() + embed_.size();
    }

private:
    static std::string now_iso() {
        auto now = std::chrono::system_clock::now();
        auto t = std::chrono::system_clock::to_time_t(now);
        char buf[32];
        std::tm tm{};
        gmtime_r(&t, &tm);
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    void append(const nlohmann::json& j) {
        if (path_.empty()) return;
        std::ofstream out(path_, std::ios::app);
        if (!out) throw Error("cannot append to cache " + path_.string());
        out << j.dump() << '\n';
    }

    std::filesystem::path path_;
    mutable std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
    std::unordered_map<std::string, std::string> chat_;
    std::unordered_map<std::string, std::vector<float>> embed_;
};

// ---------------------------------------------------------------------------
// Rate limiting

/// Token bucket: at most `rate_per_sec` acquisitions per second on average,
/// with burst capacity `burst`. Rate 0 disables limiting.
class TokenBucket {
public:
    TokenBucket(double rate_per_sec, double burst)
        : rate_(rate_per_sec), burst_(burst), tokens_(burst),
          last_(std::chrono::steady_clock::now()) {}

    void acquire() {
        if (rate_ <= 0.0) return;
        for (;;) {
            {
                std::lock_guard lock(mu_);
                refill();
                if (tokens_ >= 1.0) {
                    tokens_ -= 1.0;
                    return;
                }
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
    }

private:
    void refill() {
        auto now = std::chrono::steady_clock::now();
        double dt = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        tokens_ = std::min(burst_, tokens_ + dt * rate_);
    }

    double rate_, burst_, tokens_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Gateway

struct GatewayConfig {
    std::string model_id{"offline-scripted"};
    double temperature{0.0};
    std::uint64_t seed{0};
    std::size_t max_output_tokens{256};
    CacheMode cache_mode{CacheMode::off};
    std::filesystem::path cache_path;
    int max_retries{5};
    int retry_base_ms{250};
    int max_in_flight{4};
    double rate_per_sec{0.0};
    std::size_t summary_max_tokens{120};
};

struct GatewayStats {
    std::size_t transport_calls{0};
    std::size_t cache_hits{0};
    std::size_t retries{0};
};

struct FilterOutcome {
    std::vector<EntityCandidateSet::Item> kept;
    bool parse_failed{false};
};

struct ChatOutcome {
    std::string text;
    bool cache_hit{false};
};

/// One front door for every model interaction. Composes a transport
/// (scripted or HTTP) with the record/replay cache, deterministic request
/// settings, bounded concurrency, retry with exponential backoff, and the
/// reply parsers the rest of the system needs.
class Gateway {
public:
    Gateway(std::unique_ptr<Transport> transport, GatewayConfig config)
        : transport_(std::move(transport)), config_(std::move(config)),
          in_flight_(std::clamp(config_.max_in_flight, 1, 1024)),
          bucket_(config_.rate_per_sec, std::max(1.0, config_.rate_per_sec)) {
        if (config_.cache_mode != CacheMode::off) {
            cache_ = ReplayCache::load(config_.cache_path);
            if (config_.cache_mode == CacheMode::replay) cache_.set_path({});  // read-only
        }
        if (config_.cache_mode != CacheMode::replay && !transport_)
            throw ConfigError("gateway needs a transport unless cache_mode is replay");
    }

    const GatewayConfig& config() const { return config_; }

    GatewayStats stats() const {
        std::lock_guard lock(stats_mu_);
        return stats_;
    }

    std::string chat_complete(const std::string& prompt) { return chat_complete_ex(prompt).text; }

    /// chat_complete plus whether the reply came from the cache.
    ChatOutcome chat_complete_ex(const std::string& prompt) {
        ChatRequest r{config_.model_id, prompt, config_.temperature, config_.seed,
                      config_.max_output_tokens};
        std::string key = cache_key(r);
        if (config_.cache_mode != CacheMode::off) {
            if (auto hit = cache_.chat_reply(key)) {
                bump_hit();
                return {*hit, true};
            }
            if (config_.cache_mode == CacheMode::replay) throw ReplayMissError(key);
        }
        std::string reply = with_retries([&] { return transport_->chat(r); });
        if (config_.cache_mode == CacheMode::record) cache_.put_chat(key, r, reply);
        return {std::move(reply), false};
    }

    std::vector<std::vector<float>> embed_texts(const std::vector<std::string>& texts) {
        std::vector<std::vector<float>> out;
        out.reserve(texts.size());
        for (const auto& t : texts) {
            EmbedRequest r{config_.model_id, t};
            std::string key = cache_key(r);
            if (config_.cache_mode != CacheMode::off) {
                if (auto hit = cache_.embed_vector(key)) {
                    bump_hit();
                    out.push_back(*hit);
                    continue;
                }
                if (config_.cache_mode == CacheMode::replay) throw ReplayMissError(key);
            }
            auto v = with_retries([&] { return transport_->embed(r); });
            if (config_.cache_mode == CacheMode::record) cache_.put_embed(key, r, v);
            out.push_back(std::move(v));
        }
        return out;
    }

    /// Summary of one document, preferring the summary already stored on the
    /// record, then the per-process memo, then the model (via the cache).
    /// Always capped to summary_max_tokens. Empty bodies summarize to "".
    std::string summarize_document(const Document& doc) {
        if (doc.summary) return text::truncate_tokens(*doc.summary, config_.summary_max_tokens);
        if (doc.body.empty()) return "";
        {
            std::lock_guard lock(summaries_mu_);
            auto it = summaries_.find(doc.id.value);
            if (it != summaries_.end()) return it->second;
        }
        std::string prompt = summary_prompt(doc);
        std::string reply = text::truncate_tokens(chat_complete(prompt), config_.summary_max_tokens);
        std::lock_guard lock(summaries_mu_);
        summaries_.emplace(doc.id.value, reply);
        return reply;
    }

    std::string summary_prompt(const Document& doc) const {
        return "Summarize the following news document in at most " +
               std::to_string(config_.summary_max_tokens) +
               " words, keeping only the core thematic information.\n\n" +
               detail::summary_marker() + doc.title + "\n" + doc.body + "\n";
    }

    /// Run the entity filter over the candidate set. The reply is parsed as a
    /// delimited list and intersected with the candidates (hallucinated names
    /// dropped). An explicit "none" keeps the empty set; an unparseable reply
    /// degrades to the full candidate set with the failure flag raised.
    FilterOutcome filter_candidate_entities(const std::string& subject,
                                            const EntityCandidateSet& candidates,
                                            const PromptTemplate& tmpl) {
        std::vector<std::string> names;
        for (const auto& item : candidates.items) names.push_back(item.name);
        auto prompt = render_entity_filter_prompt(tmpl, subject, names);
        std::string reply = chat_complete(prompt.text);
        return parse_entity_filter_reply(reply, candidates);
    }

    static FilterOutcome parse_entity_filter_reply(const std::string& reply,
                                                   const EntityCandidateSet& candidates) {
        std::vector<std::string> pieces;
        std::string trimmed = text::trim(reply);
        std::size_t start = 0;
        while (start <= trimmed.size()) {
            auto eol = trimmed.find('\n', start);
            std::string line = trimmed.substr(
                start, (eol == std::string::npos ? trimmed.size() : eol) - start);
            for (const char* bullet : {"- ", "* ", "• "})
                if (line.rfind(bullet, 0) == 0) line = line.substr(std::strlen(bullet));
            line = text::trim(line);
            if (!line.empty()) pieces.push_back(line);
            if (eol == std::string::npos) break;
            start = eol + 1;
        }

        // Replies often decorate names with quotes or a trailing period;
        // ignore punctuation at the edges but keep it inside names.
        auto strip_edges = [](std::string s) {
            std::size_t b = 0, e = s.size();
            while (b < e && !text::is_word_char(s[b])) ++b;
            while (e > b && !text::is_word_char(s[e - 1])) --e;
            return s.substr(b, e - b);
        };
        FilterOutcome out;
        if (pieces.size() == 1 && text::canonical_equal(strip_edges(pieces[0]), "none")) return out;

        auto matches = [&](const std::string& candidate, const std::string& piece) {
            return text::canonical_equal(candidate, strip_edges(piece));
        };
        std::vector<bool> keep(candidates.items.size(), false);
        for (const auto& piece : pieces) {
            bool line_matched = false;
            for (std::size_t i = 0; i < candidates.items.size(); ++i)
                if (matches(candidates.items[i].name, piece)) {
                    keep[i] = true;
                    line_matched = true;
                }
            if (line_matched) continue;
            // Fall back to splitting the line on commas/semicolons.
            std::size_t p = 0;
            while (p <= piece.size()) {
                auto q = piece.find_first_of(",;", p);
                std::string part =
                    text::trim(piece.substr(p, (q == std::string::npos ? piece.size() : q) - p));
                if (!part.empty())
                    for (std::size_t i = 0; i < candidates.items.size(); ++i)
                        if (matches(candidates.items[i].name, part)) keep[i] = true;
                if (q == std::string::npos) break;
                p = q + 1;
            }
        }
        for (std::size_t i = 0; i < candidates.items.size(); ++i)
            if (keep[i]) out.kept.push_back(candidates.items[i]);
        if (out.kept.empty()) {
            out.kept = candidates.items;
            out.parse_failed = true;
        }
        return out;
    }

private:
    template <class Fn>
    auto with_retries(Fn&& fn) -> decltype(fn()) {
        if (!transport_) throw TransportError("no transport configured");
        std::exception_ptr last;
        for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
            if (attempt > 0) {
                {
                    std::lock_guard lock(stats_mu_);
                    ++stats_.retries;
                }
                auto delay = std::chrono::milliseconds(
                    static_cast<std::int64_t>(config_.retry_base_ms) * (1LL << (attempt - 1)));
                std::this_thread::sleep_for(delay);
            }
            bucket_.acquire();
            in_flight_.acquire();
            struct Release {
                std::counting_semaphore<1024>& s;
                ~Release() { s.release(); }
            } release{in_flight_};
            try {
                {
                    std::lock_guard lock(stats_mu_);
                    ++stats_.transport_calls;
                }
                return fn();
            } catch (const TransportError&) {
                last = std::current_exception();
            }
        }
        std::rethrow_exception(last);
    }

    void bump_hit() {
        std::lock_guard lock(stats_mu_);
        ++stats_.cache_hits;
    }

    std::unique_ptr<Transport> transport_;
    GatewayConfig config_;
    ReplayCache cache_;
    std::counting_semaphore<1024> in_flight_;
    TokenBucket bucket_;
    mutable std::mutex stats_mu_;
    GatewayStats stats_;
    std::mutex summaries_mu_;
    std::unordered_map<std::int64_t, std::string> summaries_;
};

/// Adapter exposing the gateway's summarization as a SummaryProvider.
class GatewaySummaryProvider : public SummaryProvider {
public:
    explicit GatewaySummaryProvider(Gateway& gw) : gw_(&gw) {}

    std::string summary_of(const Document& doc) override { return gw_->summarize_document(doc); }

private:
    Gateway* gw_;
};

/// Adapter exposing the gateway's (cache-aware) embeddings as an Embedder.
class GatewayEmbedder : public Embedder {
public:
    explicit GatewayEmbedder(Gateway& gw) : gw_(&gw) {}

    std::vector<float> embed(const std::string& text) const override {
        return gw_->embed_texts({text})[0];
    }

private:
    Gateway* gw_;
};

// ---------------------------------------------------------------------------
// Choice parsing

struct ChoiceResult {
    std::optional<int> index;  // 0..5 for A..F; nullopt = invalid

    bool valid() const { return index.has_value(); }
    char label() const { return valid() ? static_cast<char>('A' + *index) : '?'; }
};

/// Map a free-form reply to one of the six labels, or invalid. Precedence:
/// first standalone uppercase label letter; else the unique option whose
/// text occurs in the reply; else invalid.
inline ChoiceResult parse_choice(const std::string& reply,
                                 const std::vector<std::string>& options) {
    if (options.size() != 6) throw DomainError("parse_choice expects exactly 6 options");
    for (std::size_t i = 0; i < reply.size(); ++i) {
        char c = reply[i];
        if (c < 'A' || c > 'F') continue;
        bool left_ok = i == 0 || !text::is_word_char(reply[i - 1]);
        bool right_ok = i + 1 == reply.size() || !text::is_word_char(reply[i + 1]);
        if (left_ok && right_ok) return ChoiceResult{static_cast<int>(c - 'A')};
    }
    std::optional<int> found;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (options[i].empty()) continue;
        if (text::canonical_contains(reply, options[i])) {
            if (found) return ChoiceResult{};  // ambiguous
            found = static_cast<int>(i);
        }
    }
    return ChoiceResult{found};
}

// ---------------------------------------------------------------------------
// HTTP transport implementation (header-only; requires cpp-httplib)

namespace detail {
struct ParsedUrl {
    std::string host;
    int port{80};
    std::string prefix;  // path prefix, no trailing slash
};

inline ParsedUrl parse_http_url(const std::string& url) {
    std::string rest = url;
    const std::string scheme = "http://";
    if (rest.rfind(scheme, 0) != 0)
        throw ConfigError("only http:// endpoint URLs are supported, got: " + url);
    rest = rest.substr(scheme.size());
    ParsedUrl out;
    auto slash = rest.find('/');
    std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
    if (slash != std::string::npos) {
        out.prefix = rest.substr(slash);
        while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    }
    auto colon = hostport.find(':');
    if (colon == std::string::npos) {
        out.host = hostport;
    } else {
        out.host = hostport.substr(0, colon);
        out.port = std::stoi(hostport.substr(colon + 1));
    }
    if (out.host.empty()) throw ConfigError("endpoint URL has no host: " + url);
    return out;
}
}  // namespace detail

}  // namespace tef

#ifdef TEF_ENABLE_HTTP
#include <httplib.h>

namespace tef {

inline std::unique_ptr<HttpTransport> HttpTransport::from_env() {
    const char* base = std::getenv("TEF_API_BASE");
    if (!base || !*base)
        throw ConfigError("live transport requires TEF_API_BASE to be set");
    const char* key = std::getenv("TEF_API_KEY");
    return std::make_unique<HttpTransport>(base, key ? key : "");
}

inline std::string HttpTransport::post_json(const std::string& path, const nlohmann::json& body) {
    auto url = detail::parse_http_url(base_url_);
    httplib::Client client(url.host, url.port);
    client.set_connection_timeout(timeout_seconds_);
    client.set_read_timeout(timeout_seconds_);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post((url.prefix + path).c_str(), headers, body.dump(), "application/json");
    if (!res)
        throw TransportError("request to " + base_url_ + path + " failed: " +
                             httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
        throw TransportError("endpoint returned HTTP " + std::to_string(res->status) + ": " +
                             res->body.substr(0, 256));
    return res->body;
}

inline std::string HttpTransport::chat(const ChatRequest& request) {
    nlohmann::json body{{"model", request.model_id},
                        {"messages", nlohmann::json::array({nlohmann::json{
                                         {"role", "user"}, {"content", request.prompt}}})},
                        {"temperature", request.temperature},
                        {"seed", request.seed},
                        {"max_tokens", request.max_output_tokens}};
    auto text = post_json("/v1/chat/completions", body);
    try {
        auto j = nlohmann::json::parse(text);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("malformed chat completion response: ") + e.what());
    }
}

inline std::vector<float> HttpTransport::embed(const EmbedRequest& request) {
    nlohmann::json body{{"model", request.model_id}, {"input", nlohmann::json::array({request.text})}};
    auto text = post_json("/v1/embeddings", body);
    try {
        auto j = nlohmann::json::parse(text);
        return j.at("data").at(0).at("embedding").get<std::vector<float>>();
    } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("malformed embeddings response: ") + e.what());
    }
}

}  // namespace tef
#endif  // TEF_ENABLE_HTTP
