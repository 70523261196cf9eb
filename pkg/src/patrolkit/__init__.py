"""patrolkit: routing-policy design and simulation for spatial quickest detection.

A team of vehicles patrols a set of regions; a control center runs one
CUSUM (or GLR) detector per region on the collected observations. This
package designs the routing policies (closed-form efficient, numerically
optimal, partitioned, adaptive, Markov-chain constrained), evaluates
every delay formula and bound, and verifies them with a reproducible
Monte-Carlo engine.
"""
__version__ = "0.1.0"

from . import analysis, detection, envmodel, policy, scenario, scenariofile, sim

__all__ = [
    "__version__",
    "analysis",
    "detection",
    "envmodel",
    "policy",
    "scenario",
    "scenariofile",
    "sim",
]
