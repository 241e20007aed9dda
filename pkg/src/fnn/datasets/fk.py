"""Falicov-Kimball lattice instances.

Hopping amplitudes enter the one-body matrix with a plus sign, ``+t`` between
nearest and ``+t'`` between next-nearest neighbours, on a periodic lattice
indexed as ``y * width + x``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

CHECKERBOARD, STRIPE = 0, 1


@dataclass
class FkInstance:
    """Parameters of one FK model; ``e_f`` is None when set by half filling."""

    t: float = 1.0
    t_prime: float = 0.0
    mu: float = 0.0
    e_f: Optional[float] = None
    u: float = 1.0
    temperature: float = 0.1
    shape: tuple = (4, 4)
    f_occupations: Optional[np.ndarray] = None
    half_filling: bool = True
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.shape = (int(self.shape[0]), int(self.shape[1]))
        if self.shape[0] % 2 or self.shape[1] % 2:
            raise ValueError("lattice dimensions must be even")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.f_occupations is not None:
            occ = np.asarray(self.f_occupations).ravel()
            if occ.size != self.sites or not np.all((occ == 0) | (occ == 1)):
                raise ValueError("f occupations must be 0/1, one per site")
            if self.half_filling and 2 * int(occ.sum()) != self.sites:
                raise ValueError("half filling requires exactly half the sites occupied")
            self.f_occupations = occ.astype(int)

    @classmethod
    def symmetric(cls, u: float, temperature: float, shape=(8, 8), t: float = 1.0, **kw) -> "FkInstance":
        """Particle-hole symmetric variant: t' = 0, mu = U/2, E_f = -mu."""
        return cls(t=t, t_prime=0.0, mu=u / 2, e_f=-u / 2, u=u, temperature=temperature, shape=shape, **kw)

    @property
    def sites(self) -> int:
        return self.shape[0] * self.shape[1]


def coordinates(shape) -> tuple:
    width, height = shape
    y, x = np.divmod(np.arange(width * height), width)
    return x, y


def fk_hopping(shape, t: float = 1.0, t_prime: float = 0.0) -> np.ndarray:
    """Periodic nearest (t) and next-nearest (t') neighbour hopping matrix."""
    width, height = shape
    x, y = coordinates(shape)
    n = width * height
    a = np.zeros((n, n))
    src = np.arange(n)

    def site(dx, dy):
        return ((y + dy) % height) * width + (x + dx) % width

    np.add.at(a, (site(1, 0), src), t)
    np.add.at(a, (site(0, 1), src), t)
    np.add.at(a, (site(1, 1), src), t_prime)
    np.add.at(a, (site(1, -1), src), t_prime)
    return a + a.T


def fk_build(instance: FkInstance):
    """One-body matrix (hopping - mu, plus U n_f when occupations are given) and interaction spec."""
    h = fk_hopping(instance.shape, instance.t, instance.t_prime) - instance.mu * np.eye(instance.sites)
    interaction = {"u": instance.u, "temperature": instance.temperature, "e_f": instance.e_f,
                   "shape": list(instance.shape), "mu": instance.mu}
    if instance.f_occupations is not None:
        h = h + instance.u * np.diag(instance.f_occupations.astype(float))
        interaction["u"] = 0.0
    return h, interaction


def staggered_pattern(shape, kind: str) -> np.ndarray:
    """+-1 patterns: checkerboard (-1)^(x+y), stripe_x (-1)^x, stripe_y (-1)^y."""
    x, y = coordinates(shape)
    if kind == "checkerboard":
        return (-1.0) ** (x + y)
    if kind in ("stripe", "stripe_x"):
        return (-1.0) ** x
    if kind == "stripe_y":
        return (-1.0) ** y
    if kind == "uniform":
        return np.ones(x.size)
    raise ValueError(f"unknown pattern {kind!r}")


def half_filling_mu(shape, t: float = 1.0, t_prime: float = 0.0, temperature: float = 0.005) -> float:
    """mu_0: chemical potential giving half-filled c electrons at U = E_f = 0."""
    evals = np.linalg.eigvalsh(fk_hopping(shape, t, t_prime))

    def excess(mu):
        return expit((mu - evals) / temperature).mean() - 0.5

    lo, hi = evals.min() - 1.0, evals.max() + 1.0
    return float(brentq(excess, lo, hi, xtol=1e-12))


@dataclass
class FkDatasetConfig:
    """Two-class FK set: checkerboard at small t'/t, stripe at large t'/t."""

    t_prime_classes: tuple = (0.2, 1.2)
    u: float = 1.0
    temperature: float = 0.005
    shape: tuple = (4, 4)
    samples_per_class: int = 4
    mu_jitter: float = 0.05
    t_prime_jitter: float = 0.05


def fk_dataset(config: FkDatasetConfig, seed: int) -> list:
    """(FkInstance, label) pairs with mu near mu_0 + U/2; labels index t_prime_classes."""
    out = []
    for label, tp in enumerate(config.t_prime_classes):
        for i in range(config.samples_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, label, i]))
            t_prime = tp + rng.uniform(-config.t_prime_jitter, config.t_prime_jitter)
            mu = (half_filling_mu(config.shape, 1.0, t_prime, config.temperature) + config.u / 2
                  + rng.uniform(-config.mu_jitter, config.mu_jitter))
            inst = FkInstance(t=1.0, t_prime=t_prime, mu=mu, u=config.u,
                              temperature=config.temperature, shape=config.shape,
                              metadata={"seed": seed, "index": i, "label": label})
            out.append((inst, label))
    return out
