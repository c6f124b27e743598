"""Brute-force reference computations over explicitly enumerated mask spaces.

Everything here exists to validate the closed-form training path on tiny
instances: spaces are enumerated mask by mask, posteriors and expectations
are computed from the full distribution. A hard cap of 20 points keeps the
enumeration honest and sub-second.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

MAX_POINTS = 20


@dataclass
class TinyInstance:
    """A small abstract scene: per-point repeatability and discriminability.

    ``c_tilde`` holds constant per-point discriminability probabilities;
    ``c_fn`` may instead supply the mask-dependent form as a callable
    mask -> (n,) array of per-point probabilities. ``coords`` (n, 2) and
    ``rad`` feed the local-sparsity filter of the full space enumeration.
    """

    r: np.ndarray
    n_min: int
    n_max: int
    c_tilde: np.ndarray | None = None
    c_fn: object = None
    coords: np.ndarray | None = None
    rad: int = 1

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        if self.num_points > MAX_POINTS:
            raise ValueError(f"instance has {self.num_points} points; cap is {MAX_POINTS}")
        if np.any(self.r <= 0.0) or np.any(self.r >= 1.0):
            raise ValueError("repeatability values must lie strictly inside (0, 1)")
        if self.c_tilde is not None:
            self.c_tilde = np.asarray(self.c_tilde, dtype=float)
        if self.c_tilde is None and self.c_fn is None:
            raise ValueError("provide c_tilde or c_fn")

    @property
    def num_points(self) -> int:
        return self.r.size

    def c_values(self, mask: np.ndarray) -> np.ndarray:
        if self.c_fn is not None:
            return np.asarray(self.c_fn(mask), dtype=float)
        return self.c_tilde


def enumerate_reduced_space(inst: TinyInstance, yhat) -> list:
    """All masks dominated by yhat with a feasible point count (strict bounds)."""
    yhat = np.asarray(yhat, dtype=bool)
    support = np.flatnonzero(yhat)
    if support.size > MAX_POINTS:
        raise ValueError(f"support of {support.size} points exceeds the cap of {MAX_POINTS}")
    masks = []
    for n in range(inst.n_min + 1, min(inst.n_max - 1, support.size) + 1):
        for chosen in itertools.combinations(support, n):
            mask = np.zeros(inst.num_points, dtype=bool)
            mask[list(chosen)] = True
            masks.append(mask)
    return masks


def enumerate_full_space(inst: TinyInstance) -> list:
    """All masks meeting both the count bounds and local sparsity at ``rad``.

    Local sparsity uses the Chebyshev distance between the instance's point
    coordinates: no two chosen points may be within ``rad`` of each other.
    """
    if inst.coords is None:
        raise ValueError("full-space enumeration needs point coordinates")
    n_points = inst.num_points
    if n_points > MAX_POINTS:
        raise ValueError(f"{n_points} points exceed the cap of {MAX_POINTS}")
    coords = np.asarray(inst.coords, dtype=float)
    cheb = np.max(np.abs(coords[:, None, :] - coords[None, :, :]), axis=2)
    conflict = (cheb <= inst.rad) & ~np.eye(n_points, dtype=bool)
    masks = []
    for bits in itertools.product((False, True), repeat=n_points):
        mask = np.array(bits)
        count = int(mask.sum())
        if not inst.n_min < count < inst.n_max:
            continue
        if np.any(conflict[np.ix_(mask, mask)]):
            continue
        masks.append(mask)
    return masks


def _mask_weight(inst: TinyInstance, mask: np.ndarray) -> float:
    c = inst.c_values(mask)
    rep = np.where(mask, inst.r, 1.0 - inst.r)
    disc = np.where(mask, c, 1.0)
    return float(np.prod(rep) * np.prod(disc))


def exact_posterior(inst: TinyInstance, space) -> np.ndarray:
    """Marginal P(point selected) from the full distribution over ``space``."""
    if not space:
        raise ValueError("empty sample space")
    weights = np.array([_mask_weight(inst, mask) for mask in space])
    z = weights.sum()
    if z <= 0.0:
        raise ValueError("distribution has zero mass")
    stacked = np.array(space, dtype=float)
    return (weights @ stacked) / z


def log_likelihood_of_mask(inst: TinyInstance, mask: np.ndarray) -> float:
    """log of the mask's unnormalized weight: the latent log-likelihood."""
    c = inst.c_values(mask)
    terms = np.where(mask, np.log(inst.r) + np.log(c), np.log1p(-inst.r))
    return float(terms.sum())


def exact_expectation(inst: TinyInstance, space) -> float:
    """Expectation of the latent log-likelihood under the exact distribution."""
    if not space:
        raise ValueError("empty sample space")
    weights = np.array([_mask_weight(inst, mask) for mask in space])
    z = weights.sum()
    if z <= 0.0:
        raise ValueError("distribution has zero mass")
    values = np.array([log_likelihood_of_mask(inst, mask) for mask in space])
    return float((weights / z) @ values)


def sharp_discriminability(descriptors, valid) -> np.ndarray:
    """Indicator form of discriminability, for reporting only.

    Fraction of ordered image pairs in which the point's positive similarity
    strictly beats every negative similarity against the other selected
    points of the second image. Not differentiable; never trained against.
    """
    valid = [np.asarray(v, dtype=bool) for v in valid]
    n = valid[0].shape[0]
    wins = np.zeros(n)
    pairs = np.zeros(n)
    j_images = len(descriptors)
    for j in range(j_images):
        for jp in range(j_images):
            if jp == j:
                continue
            both = valid[j] & valid[jp]
            if not both.any():
                continue
            sims = descriptors[j] @ descriptors[jp].T
            negs = np.where(valid[jp][None, :], sims, -np.inf)
            np.fill_diagonal(negs, -np.inf)
            best_neg = negs.max(axis=1)
            wins[both] += (np.diag(sims) > best_neg)[both]
            pairs[both] += 1.0
    out = np.zeros(n)
    seen = pairs > 0
    out[seen] = wins[seen] / pairs[seen]
    return out
