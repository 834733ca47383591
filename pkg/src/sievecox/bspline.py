"""Normalized B-spline bases on an equally spaced clamped partition of [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Points this far outside [0, 1] are treated as rounding noise and snapped back.
_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class SplineBasis:
    """B-spline basis of polynomial degree ``m`` on ``kn`` equal subintervals.

    The knot vector is clamped: the boundary values 0 and 1 each appear
    ``m + 1`` times, interior knots sit at ``i / kn``.  The basis has
    ``m + kn`` members, each nonnegative, summing to one everywhere on
    [0, 1] (partition of unity).
    """

    m: int
    kn: int
    knots: np.ndarray = field(compare=False)

    @property
    def dim(self) -> int:
        return self.m + self.kn

    def evaluate(self, s) -> np.ndarray:
        """All basis functions at ``s``.

        Accepts a scalar or 1-d array; returns shape ``(dim,)`` or
        ``(len(s), dim)``.  Raises ``ValueError`` for arguments outside
        [0, 1] by more than a rounding tolerance.
        """
        s_arr, scalar = _as_unit_interval(s)
        out = _design_matrix(s_arr, self.knots, self.m)
        return out[0] if scalar else out

    def derivative(self, s) -> np.ndarray:
        """First derivatives of all basis functions at ``s``."""
        s_arr, scalar = _as_unit_interval(s)
        t = self.knots
        m = self.m
        # Difference of degree-(m-1) splines on the same knot vector.
        lower = _design_matrix(s_arr, t, m - 1, nfuncs=self.dim + 1)
        out = np.zeros((s_arr.size, self.dim))
        for i in range(self.dim):
            d1 = t[i + m] - t[i]
            d2 = t[i + m + 1] - t[i + 1]
            if d1 > 0.0:
                out[:, i] += m / d1 * lower[:, i]
            if d2 > 0.0:
                out[:, i] -= m / d2 * lower[:, i + 1]
        return out[0] if scalar else out

    def greville_abscissae(self) -> np.ndarray:
        """Knot averages; using them as coefficients reproduces s -> s."""
        t = self.knots
        m = self.m
        return np.array([t[j + 1 : j + m + 1].mean() for j in range(self.dim)])


def make_basis(m: int, kn: int) -> SplineBasis:
    """Build the clamped basis; ``m >= 2`` and ``kn >= 1`` are required."""
    if not (isinstance(m, (int, np.integer)) and m >= 2):
        raise ValueError(f"spline degree m must be an integer >= 2, got {m!r}")
    if not (isinstance(kn, (int, np.integer)) and kn >= 1):
        raise ValueError(f"interval count kn must be an integer >= 1, got {kn!r}")
    interior = np.arange(1, kn) / kn
    knots = np.concatenate([np.zeros(m + 1), interior, np.ones(m + 1)])
    return SplineBasis(m=int(m), kn=int(kn), knots=knots)


def _as_unit_interval(s) -> tuple[np.ndarray, bool]:
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    scalar = np.ndim(s) == 0
    if s_arr.ndim != 1:
        raise ValueError("basis arguments must be scalar or 1-d")
    if np.any(s_arr < -_EDGE_TOL) or np.any(s_arr > 1.0 + _EDGE_TOL):
        bad = s_arr[(s_arr < -_EDGE_TOL) | (s_arr > 1.0 + _EDGE_TOL)][0]
        raise ValueError(f"basis argument {bad!r} outside [0, 1]")
    return np.clip(s_arr, 0.0, 1.0), scalar


def _find_spans(s: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Index j with knots[j] <= s < knots[j+1] among the non-degenerate spans.

    Relies on the uniform clamped layout produced by ``make_basis``.
    """
    m_vec = int(np.count_nonzero(knots == knots[0])) - 1
    kn = knots.size - 2 * m_vec - 1
    idx = np.minimum((s * kn).astype(int), kn - 1)
    return m_vec + idx


def _design_matrix(s: np.ndarray, knots: np.ndarray, degree: int,
                   nfuncs: int | None = None) -> np.ndarray:
    """Evaluate all degree-``degree`` splines on ``knots`` at the points ``s``.

    Triangular recurrence over the active spans, vectorized across points.
    Works for any degree up to the clamp multiplicity of the vector; splines
    with coincident outer knots come back as identically zero.
    """
    if nfuncs is None:
        nfuncs = knots.size - degree - 1
    npts = s.size
    out = np.zeros((npts, nfuncs))
    spans = _find_spans(s, knots)
    if degree == 0:
        out[np.arange(npts), spans] = 1.0
        return out
    n = np.ones((npts, degree + 1))
    left = np.empty((npts, degree + 1))
    right = np.empty((npts, degree + 1))
    for j in range(1, degree + 1):
        left[:, j] = s - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - s
        saved = np.zeros(npts)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = np.where(denom > 0.0, n[:, r] / np.where(denom > 0.0, denom, 1.0), 0.0)
            n[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        n[:, j] = saved
    cols = spans[:, None] - degree + np.arange(degree + 1)[None, :]
    np.put_along_axis(out, cols, n, axis=1)
    return out
