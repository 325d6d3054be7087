"""Multi-robot task planning with intermittent team rendezvous.

The package bundles an occupancy-grid workspace model, a log-distance radio
model, temporally constrained task scheduling, a branch-and-bound planner
that co-optimizes task assignment with the next communication event, a
meeting-point optimizer, a deterministic discrete-event simulator, baseline
coordination strategies, and a CLI harness for seeded experiments.
"""

__version__ = "0.1.0"
