#pragma once

#include <iosfwd>

namespace plop::selftest {

// Runs the full acceptance checklist, printing one pass/fail line per check,
// and returns the number of failures. Every parameter is pinned here so the
// run is reproducible anywhere.
int run_acceptance(std::ostream& out);

}  // namespace plop::selftest
