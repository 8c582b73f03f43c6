#include "ope/rng.hpp"

namespace ope {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return base ^ index;
}

}  // namespace ope
