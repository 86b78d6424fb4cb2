#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "batchrl/types.hpp"

namespace batchrl {

// Line-oriented batch format. The first line is a header record
// {"format":"batchrl-batch","version":1,"action_count":A,"metadata":{...}};
// every following line is one transition:
// {"state_id","state_features"?,"action","rewards","next_state_id",
//  "next_state_features"?,"terminal","behavior_model","context"?}.
// Doubles are written in shortest round-trip form, so write/read is bit-exact.
std::string transition_to_line(const Transition& transition);
Transition transition_from_line(std::string_view line);

void write_batch(std::ostream& out, const Batch& batch);
Batch read_batch(std::istream& in);

void save_batch(const std::filesystem::path& path, const Batch& batch);
Batch load_batch(const std::filesystem::path& path);

}  // namespace batchrl
