// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the test files.

#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "duet/program.hpp"

namespace duet::test {

inline Site site(const char* fn = "t", int line = 1) {
  return Site{Dialect::Host, fn, line, ""};
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline std::string corpus_path(const std::string& rel) {
  return std::string(DUET_CORPUS_DIR) + "/" + rel;
}

inline ScenarioProgram load(const std::string& rel) {
  return parse_scenario(read_file(corpus_path(rel)));
}

}  // namespace duet::test
