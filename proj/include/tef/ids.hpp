#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tef/error.hpp"

namespace tef {

/// Opaque integer identifier. The tag type keeps entity/relation/document
/// ids from being mixed up at compile time.
template <class Tag>
struct Id {
    std::int64_t value{-1};

    constexpr Id() = default;
    constexpr explicit Id(std::int64_t v) : value(v) {}
    constexpr bool valid() const { return value >= 0; }
    auto operator<=>(const Id&) const = default;
};

using EntityId = Id<struct EntityTag>;
using RelationId = Id<struct RelationTag>;
using ComplexEventId = Id<struct ComplexEventTag>;
using DocumentId = Id<struct DocumentTag>;
using EventId = Id<struct EventTag>;

/// Day count since the dataset epoch. Values in a well-formed dataset are
/// non-negative; intermediate arithmetic (horizon cutoffs) may go below zero.
struct RelativeDay {
    std::int64_t days{0};

    constexpr RelativeDay() = default;
    constexpr explicit RelativeDay(std::int64_t d) : days(d) {}
    auto operator<=>(const RelativeDay&) const = default;

    constexpr RelativeDay operator+(std::int64_t d) const { return RelativeDay{days + d}; }
    constexpr RelativeDay operator-(std::int64_t d) const { return RelativeDay{days - d}; }
    constexpr std::int64_t operator-(RelativeDay o) const { return days - o.days; }
};

/// Bidirectional id <-> canonical string map. Registration enforces the
/// bijection; lookups of unregistered keys throw.
template <class IdT>
class Vocab {
public:
    void add(IdT id, const std::string& name) {
        if (!id.valid()) throw DomainError("vocabulary id must be non-negative");
        if (by_id_.count(id.value)) throw DomainError("duplicate vocabulary id " + std::to_string(id.value));
        if (by_name_.count(name))
            throw DomainError("duplicate vocabulary name \"" + name + "\" (ids " +
                              std::to_string(by_name_.at(name)) + ", " + std::to_string(id.value) + ")");
        by_id_.emplace(id.value, name);
        by_name_.emplace(name, id.value);
    }

    bool contains(IdT id) const { return by_id_.count(id.value) != 0; }

    const std::string& name_of(IdT id) const {
        auto it = by_id_.find(id.value);
        if (it == by_id_.end()) throw DomainError("unknown vocabulary id " + std::to_string(id.value));
        return it->second;
    }

    std::optional<IdT> id_of(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) return std::nullopt;
        return IdT{it->second};
    }

    std::size_t size() const { return by_id_.size(); }

    /// Ids in ascending order (canonical iteration/serialization order).
    std::vector<IdT> ids() const {
        std::vector<IdT> out;
        out.reserve(by_id_.size());
        for (const auto& [v, _] : by_id_) out.push_back(IdT{v});
        return out;
    }

    bool operator==(const Vocab& o) const { return by_id_ == o.by_id_; }

private:
    std::map<std::int64_t, std::string> by_id_;
    std::unordered_map<std::string, std::int64_t> by_name_;
};

using EntityVocab = Vocab<EntityId>;
using RelationVocab = Vocab<RelationId>;
using ComplexEventVocab = Vocab<ComplexEventId>;

}  // namespace tef

namespace std {
template <class Tag>
struct hash<tef::Id<Tag>> {
    size_t operator()(const tef::Id<Tag>& id) const noexcept {
        return std::hash<std::int64_t>{}(id.value);
    }
};
template <>
struct hash<tef::RelativeDay> {
    size_t operator()(const tef::RelativeDay& d) const noexcept {
        return std::hash<std::int64_t>{}(d.days);
    }
};
}  // namespace std
