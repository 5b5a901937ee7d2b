#pragma once

namespace cbsn {

const char* version();

}  // namespace cbsn
