"""Lock-step Heard-Of simulation, attacks, property oracles and exhaustive search."""
