#pragma once

#include <json.hpp>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lata::llm {

struct SchemaField;

// Structural description of an expected JSON reply. The same value renders
// the instructions given to the model and validates what comes back.
// Validation is strict: unknown object fields, missing required fields,
// wrong scalar kinds and unknown enum values are all errors.
class Schema {
 public:
  enum class Kind { Object, Array, String, Boolean, Integer, Number };

  static Schema object(std::vector<SchemaField> fields);
  static Schema array(Schema element);
  static Schema string();
  static Schema enumeration(std::vector<std::string> values);
  static Schema boolean();
  static Schema integer();
  static Schema number();

  // Array constraints.
  Schema& min_items(std::size_t n);
  Schema& max_items(std::size_t n);
  // Elements are objects whose `field` values must be distinct; with
  // cover_enum every enum value of that field must appear.
  Schema& unique_by(std::string field, bool cover_enum);
  Schema& min_length(std::size_t n);

  Kind kind() const { return kind_; }
  const std::vector<SchemaField>& fields() const { return fields_; }
  const std::vector<std::string>& enum_values() const { return enum_values_; }

  // Error messages with JSON paths; empty means valid.
  std::vector<std::string> validate(const nlohmann::json& value) const;
  bool accepts(const nlohmann::json& value) const { return validate(value).empty(); }

  // JSON-Schema-style rendering.
  nlohmann::json describe() const;

 private:
  void validate_at(const nlohmann::json& v, const std::string& path, std::vector<std::string>& errors) const;

  Kind kind_ = Kind::String;
  std::vector<SchemaField> fields_;
  std::shared_ptr<const Schema> element_;
  std::vector<std::string> enum_values_;
  std::optional<std::size_t> min_items_;
  std::optional<std::size_t> max_items_;
  std::optional<std::size_t> min_length_;
  std::string unique_field_;
  bool cover_enum_ = false;
};

struct SchemaField {
  std::string name;
  Schema schema;
  bool required = true;
};

}  // namespace lata::llm
