#pragma once

// Internal JSON mapping of the record types. Not installed.

#include <string>
#include <string_view>

#include "crosspref/corpus.hpp"
#include "json.hpp"

namespace crosspref::detail {

using nlohmann::json;

// Thrown by the field readers; the loader attaches the line number.
struct FieldError {
  std::string field;
  std::string message;
};

const json& require(const json& obj, std::string_view field);
std::string require_string(const json& obj, std::string_view field);
double require_finite(const json& obj, std::string_view field);
std::int64_t require_integer(const json& obj, std::string_view field);

json to_json(const Prompt& p);
json to_json(const Response& r);
json to_json(const PreferencePair& p);
json to_json(const SftRecord& s);
json to_json(const VerdictRecord& v);

Prompt prompt_from_json(const json& j);
Response response_from_json(const json& j);
PreferencePair pair_from_json(const json& j);
SftRecord sft_from_json(const json& j);
VerdictRecord verdict_from_json(const json& j);

// Compact single-line dump with full round-trip float precision.
std::string dump_line(const json& j);

}  // namespace crosspref::detail
