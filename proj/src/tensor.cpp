#include "soz/tensor.hpp"

namespace soz::detail {

bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace soz::detail
