#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "jiadf/error.hpp"

namespace jiadf {

enum class Split { Train, Val, Test, Unsplit };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unsplit: return "unsplit";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "unsplit") return Split::Unsplit;
  throw DataError("unknown split '" + std::string(s) + "'");
}

// One labeled case: clinical, dermoscopic and metadata feature blocks.
struct Record {
  std::uint64_t id = 0;
  Split split = Split::Unsplit;
  std::size_t label = 0;
  std::vector<double> clinical;
  std::vector<double> dermoscopic;
  std::vector<double> metadata;

  friend bool operator==(const Record&, const Record&) = default;
};

}  // namespace jiadf
