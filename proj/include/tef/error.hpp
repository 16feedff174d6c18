#pragma once

#include <stdexcept>
#include <string>

namespace tef {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file or unparseable text (carries location when known).
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what) : Error(what) {}
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : Error(file + ":" + std::to_string(line) + ": " + what) {}
};

/// Precondition violation on otherwise well-formed input.
class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error(what) {}
};

/// Dataset failed structural validation at load time.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(what) {}
};

/// Incoherent or unsupported configuration.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what) {}
};

/// Prompt template missing an identifier required by the binding.
class TemplateError : public Error {
public:
    explicit TemplateError(const std::string& what) : Error(what) {}
};

/// Replay-only gateway saw a request that is not in the cache.
class ReplayMissError : public Error {
public:
    explicit ReplayMissError(const std::string& key_hex, const std::string& context = "")
        : Error("replay cache miss for request key " + key_hex +
                (context.empty() ? "" : " (" + context + ")")),
          key(key_hex) {}
    std::string key;
};

/// Live endpoint unreachable after all retries.
class TransportError : public Error {
public:
    explicit TransportError(const std::string& what) : Error(what) {}
};

}  // namespace tef
