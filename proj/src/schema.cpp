#include "lata/schema.hpp"

#include <algorithm>
#include <set>

namespace lata::llm {

namespace {

const char* kind_name(Schema::Kind k) {
  switch (k) {
    case Schema::Kind::Object: return "object";
    case Schema::Kind::Array: return "array";
    case Schema::Kind::String: return "string";
    case Schema::Kind::Boolean: return "boolean";
    case Schema::Kind::Integer: return "integer";
    case Schema::Kind::Number: return "number";
  }
  return "unknown";
}

const char* json_kind(const nlohmann::json& v) {
  switch (v.type()) {
    case nlohmann::json::value_t::null: return "null";
    case nlohmann::json::value_t::object: return "object";
    case nlohmann::json::value_t::array: return "array";
    case nlohmann::json::value_t::string: return "string";
    case nlohmann::json::value_t::boolean: return "boolean";
    case nlohmann::json::value_t::number_integer:
    case nlohmann::json::value_t::number_unsigned: return "integer";
    case nlohmann::json::value_t::number_float: return "number";
    default: return "unknown";
  }
}

}  // namespace

Schema Schema::object(std::vector<SchemaField> fields) {
  Schema s;
  s.kind_ = Kind::Object;
  s.fields_ = std::move(fields);
  return s;
}

Schema Schema::array(Schema element) {
  Schema s;
  s.kind_ = Kind::Array;
  s.element_ = std::make_shared<const Schema>(std::move(element));
  return s;
}

Schema Schema::string() { return Schema{}; }

Schema Schema::enumeration(std::vector<std::string> values) {
  Schema s;
  s.enum_values_ = std::move(values);
  return s;
}

Schema Schema::boolean() {
  Schema s;
  s.kind_ = Kind::Boolean;
  return s;
}

Schema Schema::integer() {
  Schema s;
  s.kind_ = Kind::Integer;
  return s;
}

Schema Schema::number() {
  Schema s;
  s.kind_ = Kind::Number;
  return s;
}

Schema& Schema::min_items(std::size_t n) {
  min_items_ = n;
  return *this;
}

Schema& Schema::max_items(std::size_t n) {
  max_items_ = n;
  return *this;
}

Schema& Schema::unique_by(std::string field, bool cover_enum) {
  unique_field_ = std::move(field);
  cover_enum_ = cover_enum;
  return *this;
}

Schema& Schema::min_length(std::size_t n) {
  min_length_ = n;
  return *this;
}

std::vector<std::string> Schema::validate(const nlohmann::json& value) const {
  std::vector<std::string> errors;
  validate_at(value, "$", errors);
  return errors;
}

void Schema::validate_at(const nlohmann::json& v, const std::string& path, std::vector<std::string>& errors) const {
  auto mismatch = [&] {
    errors.push_back(path + ": expected " + kind_name(kind_) + ", got " + json_kind(v));
  };
  switch (kind_) {
    case Kind::Boolean:
      if (!v.is_boolean()) mismatch();
      return;
    case Kind::Integer:
      if (!v.is_number_integer()) mismatch();
      return;
    case Kind::Number:
      if (!v.is_number()) mismatch();
      return;
    case Kind::String: {
      if (!v.is_string()) return mismatch();
      const auto& s = v.get_ref<const std::string&>();
      if (!enum_values_.empty() && std::find(enum_values_.begin(), enum_values_.end(), s) == enum_values_.end()) {
        std::string allowed;
        for (const auto& e : enum_values_) allowed += (allowed.empty() ? "" : ", ") + ("\"" + e + "\"");
        errors.push_back(path + ": \"" + s + "\" is not one of " + allowed);
      }
      if (min_length_ && s.size() < *min_length_) {
        errors.push_back(path + ": string shorter than " + std::to_string(*min_length_));
      }
      return;
    }
    case Kind::Object: {
      if (!v.is_object()) return mismatch();
      for (const auto& f : fields_) {
        const auto it = v.find(f.name);
        if (it == v.end()) {
          if (f.required) errors.push_back(path + ": missing required field \"" + f.name + "\"");
          continue;
        }
        f.schema.validate_at(*it, path + "." + f.name, errors);
      }
      for (auto it = v.begin(); it != v.end(); ++it) {
        const bool known = std::any_of(fields_.begin(), fields_.end(),
                                       [&](const SchemaField& f) { return f.name == it.key(); });
        if (!known) errors.push_back(path + ": unexpected field \"" + it.key() + "\"");
      }
      return;
    }
    case Kind::Array: {
      if (!v.is_array()) return mismatch();
      if (min_items_ && v.size() < *min_items_) {
        errors.push_back(path + ": expected at least " + std::to_string(*min_items_) + " item(s)");
      }
      if (max_items_ && v.size() > *max_items_) {
        errors.push_back(path + ": expected at most " + std::to_string(*max_items_) + " item(s)");
      }
      for (std::size_t i = 0; i < v.size(); ++i) element_->validate_at(v[i], path + "[" + std::to_string(i) + "]", errors);
      if (!unique_field_.empty()) {
        std::set<std::string> seen;
        for (const auto& item : v) {
          if (!item.is_object()) continue;
          const auto it = item.find(unique_field_);
          if (it == item.end() || !it->is_string()) continue;
          const auto& key = it->get_ref<const std::string&>();
          if (!seen.insert(key).second) {
            errors.push_back(path + ": duplicate " + unique_field_ + " \"" + key + "\"");
          }
        }
        if (cover_enum_ && element_->kind_ == Kind::Object) {
          for (const auto& f : element_->fields_) {
            if (f.name != unique_field_) continue;
            for (const auto& e : f.schema.enum_values_) {
              if (!seen.count(e)) errors.push_back(path + ": missing entry with " + unique_field_ + " \"" + e + "\"");
            }
          }
        }
      }
      return;
    }
  }
}

nlohmann::json Schema::describe() const {
  nlohmann::json j;
  j["type"] = kind_name(kind_);
  switch (kind_) {
    case Kind::String:
      if (!enum_values_.empty()) j["enum"] = enum_values_;
      if (min_length_) j["minLength"] = *min_length_;
      break;
    case Kind::Object: {
      nlohmann::json props = nlohmann::json::object();
      nlohmann::json required = nlohmann::json::array();
      for (const auto& f : fields_) {
        props[f.name] = f.schema.describe();
        if (f.required) required.push_back(f.name);
      }
      j["properties"] = props;
      j["required"] = required;
      j["additionalProperties"] = false;
      break;
    }
    case Kind::Array:
      j["items"] = element_->describe();
      if (min_items_) j["minItems"] = *min_items_;
      if (max_items_) j["maxItems"] = *max_items_;
      if (!unique_field_.empty()) {
        j["uniqueBy"] = unique_field_;
        if (cover_enum_) j["coverAllValuesOf"] = unique_field_;
      }
      break;
    default: break;
  }
  return j;
}

}  // namespace lata::llm
