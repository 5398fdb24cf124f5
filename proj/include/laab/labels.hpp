#pragma once

#include <string>
#include <string_view>

namespace laab {

// The model's verbal self-judgment on its own response, after synonym
// collapsing. Stored as lowercase "yes"/"no".
enum class Verdict { yes, no };

Verdict parse_verdict(std::string_view s);  // throws ValidationError
std::string_view to_string(Verdict v) noexcept;

void require_binary_label(int label, const char* what);

// Factuality of the judgment: correct iff it agrees with reality.
// yes -> l_j = l_r, no -> l_j = 1 - l_r.
int derive_lj(int l_r, Verdict o_j);

// Inverse mapping: yes -> l_r = l_j, no -> l_r = 1 - l_j.
int derive_lr(int l_j, Verdict o_j);

}  // namespace laab
