"""Symmetric Gauss rules on the reference triangle.

Points are barycentric triples; weights sum to one so that
``area * sum(w * f(p))`` approximates the integral over a physical triangle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _orbit(*bary):
    """All distinct permutations of one barycentric triple."""
    a, b, c = bary
    pts = {(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)}
    return sorted(pts)


def _build(groups):
    pts, wts = [], []
    for bary, w in groups:
        orbit = _orbit(*bary)
        pts.extend(orbit)
        wts.extend([w] * len(orbit))
    return np.array(pts, dtype=float), np.array(wts, dtype=float)


# Dunavant (1985) rules with positive weights, keyed by polynomial degree.
_DUNAVANT = {
    1: [((1 / 3, 1 / 3, 1 / 3), 1.0)],
    2: [((2 / 3, 1 / 6, 1 / 6), 1 / 3)],
    4: [
        ((0.108103018168070, 0.445948490915965, 0.445948490915965), 0.223381589678011),
        ((0.816847572980459, 0.091576213509771, 0.091576213509771), 0.109951743655322),
    ],
    5: [
        ((1 / 3, 1 / 3, 1 / 3), 0.225),
        ((0.059715871789770, 0.470142064105115, 0.470142064105115), 0.132394152788506),
        ((0.797426985353087, 0.101286507323456, 0.101286507323456), 0.125939180544827),
    ],
    6: [
        ((0.501426509658179, 0.249286745170910, 0.249286745170910), 0.116786275726379),
        ((0.873821971016996, 0.063089014491502, 0.063089014491502), 0.050844906370207),
        ((0.053145049844817, 0.310352451033784, 0.636502499121399), 0.082851075618374),
    ],
    8: [
        ((1 / 3, 1 / 3, 1 / 3), 0.144315607677787),
        ((0.081414823414554, 0.459292588292723, 0.459292588292723), 0.095091634267285),
        ((0.658861384496480, 0.170569307751760, 0.170569307751760), 0.103217370534718),
        ((0.898905543365938, 0.050547228317031, 0.050547228317031), 0.032458497623198),
        ((0.008394777409958, 0.263112829634638, 0.728492392955404), 0.027230314174435),
    ],
}


@dataclass(frozen=True)
class TriangleRule:
    degree: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def npoints(self) -> int:
        return len(self.weights)

    def map(self, corners: np.ndarray) -> np.ndarray:
        """Physical points for triangles ``corners`` of shape (..., 3, 3)."""
        return np.einsum("qi,...ij->...qj", self.points, corners)


def triangle_rule(degree: int) -> TriangleRule:
    """Smallest tabulated positive-weight rule integrating ``degree`` exactly."""
    available = sorted(_DUNAVANT)
    for d in available:
        if d >= degree:
            pts, wts = _build(_DUNAVANT[d])
            return TriangleRule(d, pts, wts)
    raise ValueError(f"no triangle rule of degree {degree}; max is {available[-1]}")


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature settings for operator assembly.

    ``regular`` is used on both triangles of well separated pairs; near pairs
    use ``near_outer`` on the test triangle and ``near_inner`` for the smooth
    remainder over the source after static-term extraction.
    """

    regular_degree: int = 4
    near_outer_degree: int = 8
    near_inner_degree: int = 5
    near_factor: float = 2.0

    def __post_init__(self):
        for d in (self.regular_degree, self.near_outer_degree, self.near_inner_degree):
            triangle_rule(d)
        if self.near_factor <= 0:
            raise ValueError("near_factor must be positive")

    @property
    def regular(self) -> TriangleRule:
        return triangle_rule(self.regular_degree)

    @property
    def near_outer(self) -> TriangleRule:
        return triangle_rule(self.near_outer_degree)

    @property
    def near_inner(self) -> TriangleRule:
        return triangle_rule(self.near_inner_degree)

    def raised(self, by: int = 2) -> "QuadratureRule":
        bump = lambda d: min(d + by, max(_DUNAVANT))
        return QuadratureRule(bump(self.regular_degree), bump(self.near_outer_degree),
                              bump(self.near_inner_degree), self.near_factor)
