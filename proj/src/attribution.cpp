#include "tsattr/attribution.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "tsattr/error.hpp"
#include "tsattr/synth.hpp"

namespace tsattr {

void AttributionMap::validate(std::size_t feature_count) const {
  if (scores.size() != feature_count) {
    throw InvalidArgument("attribution '" + method + "' has " + std::to_string(scores.size()) +
                          " scores for a grid of " + std::to_string(feature_count));
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("attribution '" + method + "' contains non-finite scores");
  }
}

std::string to_jsonl_line(const AttributionLine& line) {
  nlohmann::json j = {{"version", kJsonlVersion},
                      {"type", "attribution"},
                      {"record_id", line.record_id},
                      {"method", line.map.method},
                      {"target_class", line.map.target_class},
                      {"scores", line.map.scores},
                      {"meta", line.map.meta},
                      {"runtime_s", line.runtime_seconds}};
  return j.dump();
}

AttributionLine attribution_from_jsonl_line(std::string_view text, std::size_t line_number) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("version").get<int>() != kJsonlVersion) throw ParseError("unsupported version", line_number);
    if (j.at("type").get<std::string>() != "attribution") throw ParseError("not an attribution line", line_number);
    AttributionLine line;
    line.record_id = j.at("record_id").get<std::uint64_t>();
    line.map.method = j.at("method").get<std::string>();
    line.map.target_class = j.at("target_class").get<int>();
    line.map.scores = j.at("scores").get<std::vector<double>>();
    line.map.meta = j.at("meta").get<std::map<std::string, double>>();
    line.runtime_seconds = j.at("runtime_s").get<double>();
    return line;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(e.what(), line_number);
  }
}

}  // namespace tsattr
