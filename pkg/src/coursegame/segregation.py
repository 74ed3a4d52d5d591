"""Entropy-based segregation measurement.

State diversity is the Shannon entropy of the race distribution in nats.
The segregation index is the enrollment-weighted average shortfall of class
diversity relative to state diversity, normalized to [0, 1]: 0 when every
class mirrors the state on average, 1 when every class is monoracial.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SchoolSystem

SHARE_TOL = 1e-9


def _entropy(shares: np.ndarray) -> float:
    p = np.asarray(shares, dtype=float)
    if np.any(p < -SHARE_TOL):
        raise ValueError("shares must be nonnegative")
    if abs(p.sum() - 1.0) > SHARE_TOL:
        raise ValueError(f"shares must sum to 1, got {p.sum()!r}")
    p = np.clip(p, 0.0, None)
    nz = p > 0.0
    return float(-(p[nz] * np.log(p[nz])).sum())  # 0 log 0 taken as 0


def state_entropy(shares) -> float:
    """Shannon entropy of a race distribution, in nats."""
    return _entropy(shares)


def school_entropy(shares) -> float:
    """Entropy of one class or school's race distribution, in nats."""
    return _entropy(shares)


@dataclass
class EntropyReport:
    index: float
    state_entropy: float
    unit_entropies: np.ndarray
    unit_weights: np.ndarray
    race_shares: np.ndarray
    unit: str

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "state_entropy": self.state_entropy,
            "unit": self.unit,
            "race_shares": [float(x) for x in self.race_shares],
            "unit_entropies": [float(x) for x in self.unit_entropies],
            "unit_weights": [float(x) for x in self.unit_weights],
        }


def entropy_index_from_counts(race_counts: np.ndarray, unit: str = "classroom") -> EntropyReport:
    """Segregation index from an (units x races) count matrix."""
    counts = np.asarray(race_counts, dtype=float)
    if counts.ndim != 2:
        raise ValueError("race_counts must be a 2-d (units x races) array")
    if np.any(counts < 0):
        raise ValueError("race counts must be nonnegative")
    sizes = counts.sum(axis=1)
    if np.any(sizes <= 0):
        raise ValueError("every unit must contain at least one student")
    total = sizes.sum()
    state_shares = counts.sum(axis=0) / total
    h_bar = _entropy(state_shares)
    if h_bar == 0.0:
        raise ValueError("entropy index undefined: the state is monoracial")
    unit_h = np.array([_entropy(row / s) for row, s in zip(counts, sizes)])
    weights = sizes / total
    # normalize per unit first: mirrored units give exactly 0 and monoracial
    # units exactly 1, so the boundary cases are exact in floating point
    shortfall = (h_bar - unit_h) / h_bar
    index = float(np.sum(shortfall * sizes) / total)
    return EntropyReport(
        index=index, state_entropy=h_bar, unit_entropies=unit_h,
        unit_weights=weights, race_shares=state_shares, unit=unit,
    )


def entropy_index(system: SchoolSystem, unit: str = "classroom") -> EntropyReport:
    """Segregation index of a school system.

    unit selects the aggregation level: "classroom" scores each (school,
    cohort) cell, "school" pools cohorts within a school first.
    """
    if unit == "classroom":
        counts = np.stack([c.race_counts() for c in system.classrooms])
    elif unit == "school":
        by_school = {}
        for c in system.classrooms:
            by_school.setdefault(c.school_id, np.zeros(3))
            by_school[c.school_id] += c.race_counts()
        counts = np.stack([by_school[s] for s in system.school_ids])
    else:
        raise ValueError(f'unit must be "classroom" or "school", got {unit!r}')
    return entropy_index_from_counts(counts, unit=unit)
