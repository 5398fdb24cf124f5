#include "laab/labels.hpp"

#include "laab/error.hpp"

namespace laab {

Verdict parse_verdict(std::string_view s) {
  if (s == "yes") return Verdict::yes;
  if (s == "no") return Verdict::no;
  throw ValidationError("judgment token must be \"yes\" or \"no\", got \"" +
                        std::string(s) + "\"");
}

std::string_view to_string(Verdict v) noexcept { return v == Verdict::yes ? "yes" : "no"; }

void require_binary_label(int label, const char* what) {
  if (label != 0 && label != 1) {
    throw ValidationError(std::string(what) + " must be 0 or 1, got " + std::to_string(label));
  }
}

int derive_lj(int l_r, Verdict o_j) {
  require_binary_label(l_r, "l_r");
  return o_j == Verdict::yes ? l_r : 1 - l_r;
}

int derive_lr(int l_j, Verdict o_j) {
  require_binary_label(l_j, "l_j");
  return o_j == Verdict::yes ? l_j : 1 - l_j;
}

}  // namespace laab
