"""Canonical small networks used by the verification suites and scripts.

All four are open, stable at every scale in (0,1), and have strictly
positive total arrival rates:

* ``mm1``: single exponential station, alpha = 1.
* ``tandem``: two stations in series, alpha = (1, 0), everything flows
  1 -> 2 -> out; total rates (1, 1).
* ``feedback_front``: two stations where station 2 feeds 80% of its output
  back to station 1; alpha = (0.2, 1.0), total rates (1, 1).
* ``open3``: three stations with cross routing and external arrivals at
  every station.
"""

from __future__ import annotations

from .distributions import DistributionSpec, erlang, exponential, hyperexp2
from .network import NetworkSpec, RoutingMatrix

__all__ = ["mm1", "tandem", "feedback_front", "open3", "corpus"]


def mm1(moment_order: float = 2.0) -> NetworkSpec:
    return NetworkSpec(
        alpha=(1.0,),
        routing=RoutingMatrix.from_rows([[0.0]]),
        arrival=(exponential(),),
        service=(exponential(),),
        moment_order=moment_order,
    )


def tandem(service: tuple[DistributionSpec, DistributionSpec] | None = None,
           arrival: DistributionSpec | None = None,
           moment_order: float = 2.0) -> NetworkSpec:
    service = service or (exponential(), exponential())
    return NetworkSpec(
        alpha=(1.0, 0.0),
        routing=RoutingMatrix.from_rows([[0.0, 1.0], [0.0, 0.0]]),
        arrival=(arrival or exponential(), None),
        service=service,
        moment_order=moment_order,
    )


def feedback_front(service: tuple[DistributionSpec, DistributionSpec] | None = None,
                   moment_order: float = 2.0) -> NetworkSpec:
    service = service or (exponential(), exponential())
    return NetworkSpec(
        alpha=(0.2, 1.0),
        routing=RoutingMatrix.from_rows([[0.0, 0.0], [0.8, 0.0]]),
        arrival=(exponential(), exponential()),
        service=service,
        moment_order=moment_order,
    )


def open3(moment_order: float = 2.0) -> NetworkSpec:
    return NetworkSpec(
        alpha=(0.3, 0.2, 0.1),
        routing=RoutingMatrix.from_rows([
            [0.0, 0.3, 0.2],
            [0.4, 0.0, 0.3],
            [0.1, 0.2, 0.0],
        ]),
        arrival=(erlang(2), exponential(), exponential()),
        service=(exponential(), hyperexp2(0.4, 3.0), erlang(3)),
        moment_order=moment_order,
    )


def corpus(moment_order: float = 2.0) -> dict[str, NetworkSpec]:
    """The standard four-network verification corpus."""
    return {
        "mm1": mm1(moment_order),
        "tandem": tandem(moment_order=moment_order),
        "feedback_front": feedback_front(moment_order=moment_order),
        "open3": open3(moment_order),
    }


def tandem_hyper(moment_order: float = 2.0) -> NetworkSpec:
    """Tandem with hyperexponential services (bursty, SCV > 2)."""
    return tandem(service=(hyperexp2(0.5, 4.0), hyperexp2(0.5, 4.0)),
                  moment_order=moment_order)


def feedback_front_hyper(moment_order: float = 2.0) -> NetworkSpec:
    """Feedback-to-front with hyperexponential services."""
    return feedback_front(service=(hyperexp2(0.5, 4.0), hyperexp2(0.5, 4.0)),
                          moment_order=moment_order)
