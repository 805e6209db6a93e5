#pragma once

namespace hpl {

const char* version();

}  // namespace hpl
