#include "cbsn/build_info.hpp"

namespace cbsn {

const char* version() { return "0.1.0"; }

}  // namespace cbsn
