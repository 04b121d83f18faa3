#include <fedaia/errors.hpp>
#include <fedaia/io.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fedaia {

void MessageLog::append(int round, ModelParams theta_in, ModelParams theta_out, bool active) {
  if (!entries_.empty() && round <= entries_.back().round) {
    throw ArgumentError("message log rounds must be strictly increasing");
  }
  if (!(theta_in.shape() == theta_out.shape())) {
    throw ShapeError("incoming and outgoing models must share a shape");
  }
  if (!entries_.empty() && !(entries_.front().theta_in.shape() == theta_in.shape())) {
    throw ShapeError("all logged models must share a shape");
  }
  entries_.push_back(MessageEntry{round, std::move(theta_in), std::move(theta_out)});
  if (active) active_rounds_.push_back(round);
}

const MessageEntry& MessageLog::at_round(int round) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), round,
                             [](const MessageEntry& e, int r) { return e.round < r; });
  if (it == entries_.end() || it->round != round) {
    throw ArgumentError("round " + std::to_string(round) + " is not in the message log");
  }
  return *it;
}

bool MessageLog::has_round(int round) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), round,
                             [](const MessageEntry& e, int r) { return e.round < r; });
  return it != entries_.end() && it->round == round;
}

std::vector<int> MessageLog::rounds() const {
  std::vector<int> r;
  r.reserve(entries_.size());
  for (const auto& e : entries_) r.push_back(e.round);
  return r;
}

std::vector<int> MessageLog::inspected_rounds() const {
  std::vector<int> r;
  for (const auto& e : entries_) {
    if (!std::binary_search(active_rounds_.begin(), active_rounds_.end(), e.round)) {
      r.push_back(e.round);
    }
  }
  return r;
}

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

std::string format_vector(const Eigen::Ref<const Vector>& values) {
  std::string out = "[";
  for (Index i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += format_double(values(i));
  }
  out += ']';
  return out;
}

nlohmann::json shape_to_json(const ModelShape& shape) {
  if (shape.is_linear()) return {{"kind", "linear"}, {"dim", shape.as_linear().dim}};
  return {{"kind", "mlp"}, {"inputs", shape.as_mlp().inputs}, {"hidden", shape.as_mlp().hidden}};
}

ModelShape shape_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") return ModelShape::linear(j.at("dim").get<Index>());
  if (kind == "mlp") return ModelShape::mlp(j.at("inputs").get<Index>(), j.at("hidden").get<Index>());
  throw ArgumentError("unknown model kind '" + kind + "'");
}

void write_message_log(std::ostream& out, const MessageLog& log) {
  nlohmann::json header;
  header["client"] = log.client_id();
  if (!log.empty()) header["shape"] = shape_to_json(log.entries().front().theta_in.shape());
  header["active_rounds"] = log.active_rounds();
  out << header.dump() << '\n';
  for (const auto& e : log.entries()) {
    out << "{\"round\":" << e.round << ",\"phase\":\"in\",\"params\":"
        << format_vector(e.theta_in.values()) << "}\n";
    out << "{\"round\":" << e.round << ",\"phase\":\"out\",\"params\":"
        << format_vector(e.theta_out.values()) << "}\n";
  }
  if (!out) throw IoError("failed to write message log");
}

void write_message_log(const std::filesystem::path& path, const MessageLog& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_message_log(out, log);
}

MessageLog read_message_log(std::istream& in, const std::optional<ModelShape>& shape) {
  std::optional<ModelShape> file_shape = shape;
  int client = 0;
  std::vector<int> active;
  struct Pending {
    int round;
    Vector params;
  };
  std::optional<Pending> pending_in;
  std::vector<std::pair<int, std::pair<Vector, Vector>>> pairs;

  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("message log line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("phase")) {
      client = j.value("client", 0);
      if (j.contains("shape") && !shape) file_shape = shape_from_json(j.at("shape"));
      if (j.contains("active_rounds")) active = j.at("active_rounds").get<std::vector<int>>();
      continue;
    }
    const int round = j.at("round").get<int>();
    const std::string phase = j.at("phase").get<std::string>();
    const auto values = j.at("params").get<std::vector<double>>();
    Vector v = Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
    if (phase == "in") {
      if (pending_in) throw IoError("message log line " + std::to_string(line_no) + ": 'in' without 'out'");
      pending_in = Pending{round, std::move(v)};
    } else if (phase == "out") {
      if (!pending_in || pending_in->round != round) {
        throw IoError("message log line " + std::to_string(line_no) + ": 'out' without matching 'in'");
      }
      pairs.push_back({round, {std::move(pending_in->params), std::move(v)}});
      pending_in.reset();
    } else {
      throw IoError("message log line " + std::to_string(line_no) + ": unknown phase '" + phase + "'");
    }
  }
  if (pending_in) throw IoError("message log ends with an unmatched 'in' line");

  MessageLog log(client);
  std::sort(active.begin(), active.end());
  for (auto& [round, io] : pairs) {
    const ModelShape s = file_shape ? *file_shape : ModelShape::linear(io.first.size());
    const bool is_active = std::binary_search(active.begin(), active.end(), round);
    log.append(round, ModelParams(s, std::move(io.first)), ModelParams(s, std::move(io.second)), is_active);
  }
  return log;
}

MessageLog read_message_log(const std::filesystem::path& path, const std::optional<ModelShape>& shape) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_message_log(in, shape);
}

}  // namespace fedaia
