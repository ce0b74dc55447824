#pragma once

#include <ostream>

namespace latlab {

// Finite-difference verification of every autodiff primitive, the analytic
// score-network gradients, the DSM loss gradients, and the end-to-end
// tokenizer loss. Prints one line per check; returns true when all pass.
bool run_gradcheck(std::ostream& out);

} // namespace latlab
