#pragma once

#include <string>

#include "zsslu/model.hpp"
#include "zsslu/prefix.hpp"

namespace zsslu {

// Self-describing JSON container: format version, config, vocabulary, every
// base parameter by name, and the prefix banks in their own section so a
// frozen base can be paired with different banks. Doubles are serialized with
// shortest-round-trip formatting, so save/load is bit-exact.
struct Checkpoint {
  Model model;
  PrefixBanks banks;
};

constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const std::string& path, const Model& model, const PrefixBanks& banks);
Checkpoint load_checkpoint(const std::string& path);

std::string checkpoint_summary(const std::string& path);

}  // namespace zsslu
