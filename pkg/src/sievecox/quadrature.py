"""Fixed-node quadrature used by the hazard and density evaluations.

Time integrals run over a fixed partition of [0, tau] into equal panels;
each panel carries three interior nodes, either Simpson's (endpoints plus
midpoint) or a 3-point Gauss-Legendre triple.  Integrals with data-dependent
endpoints reuse the same panel structure and split the straddled panel at
the endpoint, so every integral is a smooth deterministic function of the
integrand parameters.

Unit-interval integrals (density normalizations) use Gauss-Legendre nodes
placed per knot interval, where the integrands are smooth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre

from .bspline import SplineBasis

__all__ = ["QuadratureRule"]

_SCHEMES = ("composite-simpson", "gauss-legendre")


def _panel_offsets(scheme: str) -> tuple[np.ndarray, np.ndarray]:
    """Relative node positions and weights integrating to one on [0, 1]."""
    if scheme == "composite-simpson":
        return np.array([0.0, 0.5, 1.0]), np.array([1.0, 4.0, 1.0]) / 6.0
    if scheme == "gauss-legendre":
        x, w = roots_legendre(3)
        return (x + 1.0) / 2.0, w / 2.0
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass(frozen=True)
class QuadratureRule:
    scheme: str = "composite-simpson"
    panels: int = 64
    u_nodes_per_interval: int = 10

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ValueError(f"scheme must be one of {_SCHEMES}, got {self.scheme!r}")
        if 3 * self.panels < 16:
            raise ValueError(f"need at least 16 time nodes, got {3 * self.panels}")
        if self.u_nodes_per_interval < 2:
            raise ValueError("need at least 2 unit-interval nodes per knot span")

    @property
    def offsets(self) -> np.ndarray:
        return _panel_offsets(self.scheme)[0]

    @property
    def weights(self) -> np.ndarray:
        return _panel_offsets(self.scheme)[1]

    def boundaries(self, tau: float) -> np.ndarray:
        return np.linspace(0.0, tau, self.panels + 1)

    def segment_nodes(self, start, width):
        """Nodes and weights integrating over [start, start + width].

        ``start``/``width`` may be scalars or broadcastable arrays; node
        arrays gain a trailing axis of length 3.
        """
        start = np.asarray(start, dtype=float)
        width = np.asarray(width, dtype=float)
        nodes = start[..., None] + width[..., None] * self.offsets
        weights = width[..., None] * self.weights
        return nodes, weights

    def unit_interval_nodes(self, basis: SplineBasis) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes per knot interval of ``basis`` on [0, 1]."""
        x, w = roots_legendre(self.u_nodes_per_interval)
        edges = np.arange(basis.kn + 1) / basis.kn
        half = np.diff(edges) / 2.0
        mids = (edges[:-1] + edges[1:]) / 2.0
        nodes = (mids[:, None] + half[:, None] * x).ravel()
        weights = (half[:, None] * w).ravel()
        return nodes, weights
