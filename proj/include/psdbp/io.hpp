#pragma once

#include <string>

#include "json.hpp"
#include "psdbp/estimators.hpp"
#include "psdbp/offspring.hpp"

namespace psdbp {

// Insertion-ordered JSON keeps emitted keys in schema order, so identical
// configs serialize to identical bytes.
using json = nlohmann::ordered_json;

// Shortest representation that round-trips a double exactly.
std::string format_double(double x);

json mean_model_to_json(const MeanModel& mm);
MeanModel mean_model_from_json(const json& j);

// Schema: {"family": name, "mean_model": {...}} plus family extras
// (tail_cutoff, reachability_bound, or the explicit "p" array).
json spec_to_json(const OffspringSpec& spec);
OffspringSpec spec_from_json(const json& j);

json report_to_json(const EstimateReport& rep);

json load_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j);

}  // namespace psdbp
