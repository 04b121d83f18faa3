#pragma once

#include <fedaia/federated.hpp>

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace fedaia {

// Shortest-free decimal rendering with 17 significant digits; parses back to
// the identical double.
std::string format_double(double value);

// JSON array of 17-significant-digit decimals.
std::string format_vector(const Eigen::Ref<const Vector>& values);

nlohmann::json shape_to_json(const ModelShape& shape);
ModelShape shape_from_json(const nlohmann::json& j);

// JSON-lines message log. The first line is a header
//   {"client": id, "shape": {...}, "active_rounds": [...]}
// followed by one line per message:
//   {"round": t, "phase": "in"|"out", "params": [...]}
void write_message_log(std::ostream& out, const MessageLog& log);
void write_message_log(const std::filesystem::path& path, const MessageLog& log);

// Reads a log written by write_message_log. Files without a header line are
// accepted when `shape` is given (or default to Linear(len(params))).
MessageLog read_message_log(std::istream& in, const std::optional<ModelShape>& shape = std::nullopt);
MessageLog read_message_log(const std::filesystem::path& path,
                            const std::optional<ModelShape>& shape = std::nullopt);

}  // namespace fedaia
