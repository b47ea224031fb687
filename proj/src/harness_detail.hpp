// Private interface between the harness front-end and the experiment bodies.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fuselab/harness.hpp"

namespace fuselab::harness::detail {

struct ExperimentOutput {
  nlohmann::ordered_json raw = nlohmann::ordered_json::object();
  std::vector<Series> series;
};

using ExperimentFn = ExperimentOutput (*)(const KvConfig&,
                                          const std::vector<std::uint64_t>&);

const std::vector<std::pair<std::string, ExperimentFn>>& registry();

}  // namespace fuselab::harness::detail
