#pragma once

/// Runs the built-in invariant suite and prints one line per check. True when all pass.
bool run_checks(bool quick);
