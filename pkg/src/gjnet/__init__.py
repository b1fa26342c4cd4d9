"""Simulation and numerical verification toolkit for open generalized
Jackson networks driven into multi-scale heavy traffic.

The package computes the deterministic quantities of a network exactly
(traffic rates, routing hitting probabilities, critical scale, drift
margins), simulates the queue-length/residual-time Markov process with
event-level (Palm) capture, and estimates both sides of the basic adjoint
relationship together with scaled queue-length moment statistics.
"""

__version__ = "0.1.0"

from .distributions import DistributionSpec, Family
from .network import NetworkSpec, RoutingMatrix, ScaledNetwork, make_scaled, spec_hash
from .static_analysis import (
    HeavyTrafficProfile,
    TrafficSolution,
    critical_scale,
    drift_margin,
    heavy_traffic_profile,
    hitting_matrix,
    simulate_hitting_probability,
    solve_traffic,
)

__all__ = [
    "DistributionSpec",
    "Family",
    "NetworkSpec",
    "RoutingMatrix",
    "ScaledNetwork",
    "make_scaled",
    "spec_hash",
    "TrafficSolution",
    "HeavyTrafficProfile",
    "solve_traffic",
    "hitting_matrix",
    "simulate_hitting_probability",
    "critical_scale",
    "heavy_traffic_profile",
    "drift_margin",
]
