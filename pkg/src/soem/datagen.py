"""Synthetic series driven by linear recurrences.

The coefficient convention matches :func:`soem.ssa.forecast`: with order
``d``, ``y[t] = sum_k phi[k] * y[t - d + k]`` so ``phi[-1]`` multiplies the
most recent value.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Sequence

import numpy as np

from .embedding import TimeSeries
from .errors import NumericalError, ValidationError

DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class LRFSpec:
    phi: Sequence[float]
    initial: Sequence[float]
    length: int
    noise_std: float = 0.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        phi = tuple(float(v) for v in self.phi)
        initial = tuple(float(v) for v in self.initial)
        if not phi:
            raise ValidationError("LRF order must be >= 1")
        if len(initial) != len(phi):
            raise ValidationError(f"initial window has {len(initial)} values, order is {len(phi)}")
        if self.length <= len(phi):
            raise ValidationError(f"length {self.length} must exceed the order {len(phi)}")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "initial", initial)

    @property
    def order(self):
        return len(self.phi)


def generate(spec, id=None, label=None):
    """Iterate the recurrence from the initial window, adding seeded Gaussian noise."""
    rng = np.random.default_rng(spec.seed)
    d = spec.order
    phi = np.array(spec.phi)
    y = np.empty(spec.length)
    y[:d] = spec.initial
    eps = rng.standard_normal(spec.length - d) * spec.noise_std if spec.noise_std > 0 else np.zeros(spec.length - d)
    for t in range(d, spec.length):
        y[t] = phi @ y[t - d : t] + eps[t - d]
        if not abs(y[t]) <= DIVERGENCE_LIMIT:
            raise NumericalError(f"recurrence diverged at t={t} (|y| > {DIVERGENCE_LIMIT:g})")
    return TimeSeries(id or spec.name or "series", y, label)


def generate_groups(specs, per_group, randomize_initial=True, seed=0):
    """``per_group`` labelled series for each spec; label is the spec index.

    With ``randomize_initial`` each member starts from its own standard
    normal window, so a group shares dynamics without being aligned.
    """
    if per_group < 1:
        raise ValidationError("per_group must be >= 1")
    root = np.random.SeedSequence(seed)
    out: List[TimeSeries] = []
    for g, (spec, child) in enumerate(zip(specs, root.spawn(len(specs)))):
        member_seeds = child.spawn(per_group)
        for k, ss in enumerate(member_seeds):
            rng = np.random.default_rng(ss)
            initial = rng.standard_normal(spec.order) if randomize_initial else spec.initial
            noise_seed = int(rng.integers(2**63 - 1))
            member = replace(spec, initial=initial, seed=noise_seed)
            out.append(generate(member, id=f"g{g}_{k:03d}", label=str(g)))
    return out


def oscillation_phi(period, damping=1.0):
    """Order-2 coefficients for ``y[t] = 2 rho cos(w) y[t-1] - rho^2 y[t-2]``."""
    w = 2 * np.pi / period
    return (-(damping**2), 2 * damping * np.cos(w))


def benchmark_specs(length=200, noise_std=0.05):
    """The three-group benchmark: exponential-like growth, period-4 and damped period-12 oscillations."""
    return [
        LRFSpec((1.02,), (1.0,), length, noise_std, name="exponential"),
        LRFSpec((-1.0, 0.0), (1.0, 0.0), length, noise_std, name="period4"),
        LRFSpec(oscillation_phi(12, 0.99), (1.0, 0.0), length, noise_std, name="damped12"),
    ]


def random_stable_phi(order, rng, max_modulus=1.05, min_modulus=0.85):
    """Coefficients whose characteristic roots are distinct with moduli in a band.

    Complex roots come in conjugate pairs; an odd order gets one real root.
    """
    roots = []
    while len(roots) < order:
        rho = rng.uniform(min_modulus, max_modulus)
        if order - len(roots) >= 2 and rng.random() < 0.6:
            w = rng.uniform(0.2, np.pi - 0.2)
            roots += [rho * np.exp(1j * w), rho * np.exp(-1j * w)]
        else:
            roots.append(rho * rng.choice([-1.0, 1.0]))
    # characteristic polynomial z^d - c1 z^{d-1} - ... - cd; phi is oldest-first
    poly = np.real(np.poly(roots))
    return tuple(-poly[1:][::-1])
