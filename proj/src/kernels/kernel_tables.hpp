#pragma once

#include "dahg/kernels.hpp"

namespace dahg::kernels::detail {

// Defined in avx2.cpp / neon.cpp when those units are compiled in.
const KernelTable& avx2_table_impl();
const KernelTable& neon_table_impl();

}  // namespace dahg::kernels::detail
