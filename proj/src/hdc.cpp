#include "foam/hdc.hpp"

namespace foam::hdc {

std::atomic<std::uint64_t>& corruption_branch_count() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

}  // namespace foam::hdc
