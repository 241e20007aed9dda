"""Two-band Chern/normal insulators on a periodic square lattice.

Sites are indexed as ``y * L + x``.  A matrix element ``H[a, b]`` is the
amplitude of the hop from site b to site a.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

CHERN, NORMAL = 1, 0
LABEL_NAMES = {CHERN: "chern", NORMAL: "normal"}
DEFAULT_W_RANGES = {"W0": (1.0, 3.0), "W1": (0.0, 1.0), "W2": (0.0, 0.5)}


class DegenerateFermiLevelError(ValueError):
    pass


def _site(x, y, size):
    return (y % size) * size + (x % size)


def _bonds(size):
    """(source, x-, y-, (x+y)-, (x-y)-neighbour) index arrays and row parity."""
    y, x = np.divmod(np.arange(size * size), size)
    return (np.arange(size * size), _site(x + 1, y, size), _site(x, y + 1, size),
            _site(x + 1, y + 1, size), _site(x + 1, y - 1, size), np.where(y % 2 == 0, 1.0, -1.0))


def chern_hamiltonian(kappa: float, size: int = 12) -> np.ndarray:
    """Clean two-band model; topological for kappa > 1/2 at zero energy."""
    if size % 2 or size < 4:
        raise ValueError("linear size must be even and at least 4")
    src, ex, ey, ed, ea, s = _bonds(size)
    a = np.zeros((size * size, size * size), complex)
    np.add.at(a, (ex, src), s)
    np.add.at(a, (ey, src), 1.0 + s * (1.0 - kappa))
    np.add.at(a, (ed, src), s * 0.5j * kappa)
    np.add.at(a, (ea, src), -s * 0.5j * kappa)
    return a + a.conj().T


def add_disorder(h: np.ndarray, w0: float, w1: float, w2: float, seed, *,
                 size: Optional[int] = None, allow_wide: bool = False) -> np.ndarray:
    """Uniform random onsite, nearest- and next-nearest-neighbour perturbations."""
    if not allow_wide:
        for name, w in (("W0", w0), ("W1", w1), ("W2", w2)):
            lo, hi = DEFAULT_W_RANGES[name]
            if w and not lo <= w <= hi:
                raise ValueError(f"{name}={w} outside [{lo}, {hi}]; pass allow_wide=True")
    n = h.shape[0]
    size = size or int(round(np.sqrt(n)))
    rng = np.random.default_rng(seed)
    src, ex, ey, ed, ea, _ = _bonds(size)
    a = np.zeros_like(h, dtype=complex)
    np.add.at(a, (ex, src), rng.uniform(-w1, w1, n))
    np.add.at(a, (ey, src), rng.uniform(-w1, w1, n))
    np.add.at(a, (ed, src), rng.uniform(-w2, w2, n))
    np.add.at(a, (ea, src), rng.uniform(-w2, w2, n))
    out = h + a + a.conj().T
    out[np.diag_indices(n)] += rng.uniform(-w0, w0, n)
    return out


def occupied_projector(h: np.ndarray, fermi_energy: float = 0.0):
    """Spectral projector P = sum over occupied states of |psi><psi|, and the energies."""
    evals, evecs = np.linalg.eigh(h)
    if np.min(np.abs(evals - fermi_energy)) < 1e-9:
        raise DegenerateFermiLevelError("an eigenvalue sits at the Fermi energy")
    q = evecs[:, evals < fermi_energy]
    return q @ q.conj().T, evals


def spectral_gap(evals: np.ndarray, fermi_energy: float = 0.0) -> float:
    above, below = evals[evals > fermi_energy], evals[evals <= fermi_energy]
    if above.size == 0 or below.size == 0:
        return 0.0
    return float(above.min() - below.max())


def _min_image(d, size):
    return (d + size // 2) % size - size // 2


def _distance(dx, dy, metric: str):
    if metric == "chebyshev":
        return max(abs(dx), abs(dy))
    if metric == "euclidean":
        return float(np.hypot(dx, dy))
    raise ValueError(f"unknown metric {metric!r}")


def _offsets(cutoff: float, metric: str):
    r = int(np.floor(cutoff))
    return [(dx, dy) for dx in range(-r, r + 1) for dy in range(-r, r + 1)
            if 0 < _distance(dx, dy, metric) <= cutoff]


def kubo_chern(h: np.ndarray, fermi_energy: float = 0.0, cutoff: float = 3, *,
               size: Optional[int] = None, projector: Optional[np.ndarray] = None,
               metric: str = "chebyshev") -> float:
    """Real-space Chern number from projector triple products and signed areas.

    Only triangles whose three side lengths are at most ``cutoff`` enter the
    sum.  Lengths are lattice distances under ``metric`` (``chebyshev``, the
    default, admits every triangle inside a d x d window); displacements use
    the minimum image and areas are positive counterclockwise.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1")
    n = h.shape[0]
    size = size or int(round(np.sqrt(n)))
    p = occupied_projector(h, fermi_energy)[0] if projector is None else projector
    y, x = np.divmod(np.arange(n), size)
    offs = _offsets(cutoff, metric)
    total = 0.0 + 0.0j
    for d1 in offs:
        k = _site(x + d1[0], y + d1[1], size)
        p_jk = p[np.arange(n), k]
        for d2 in offs:
            area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
            if area == 0 or _distance(d2[0] - d1[0], d2[1] - d1[1], metric) > cutoff:
                continue
            l = _site(x + d2[0], y + d2[1], size)
            total += area * np.sum(p_jk * p[k, l] * p[l, np.arange(n)])
    c = 4j * np.pi * total / n
    if abs(c.imag) > 1e-8:
        raise ArithmeticError(f"Chern sum has imaginary residue {c.imag:.3g}")
    return float(c.real)


def kubo_chern_uncut(h: np.ndarray, fermi_energy: float = 0.0, *, size: Optional[int] = None) -> float:
    """Reference sum over every triangle, looping over the first vertex."""
    n = h.shape[0]
    size = size or int(round(np.sqrt(n)))
    p = occupied_projector(h, fermi_energy)[0]
    y, x = np.divmod(np.arange(n), size)
    total = 0.0 + 0.0j
    for j in range(n):
        dx = _min_image(x - x[j], size)
        dy = _min_image(y - y[j], size)
        area = 0.5 * (dx[:, None] * dy[None, :] - dy[:, None] * dx[None, :])
        total += np.sum(p[j, :, None] * p * p[:, j][None, :] * area)
    return float((4j * np.pi * total / n).real)


def label_sample(c: float, gap: float, gap_min: float = 0.05) -> Optional[int]:
    """CHERN for 0.7 <= C <= 1, NORMAL for 0 <= C <= 0.3, None otherwise or if gapless."""
    if gap < gap_min:
        return None
    if 0.7 <= c <= 1.0:
        return CHERN
    if 0.0 <= c <= 0.3:
        return NORMAL
    return None


@dataclass
class LatticeModelSample:
    hamiltonian: np.ndarray
    label: int
    chern_estimate: float
    gap_estimate: float
    metadata: dict = field(default_factory=dict)


@dataclass
class ChernGenerationConfig:
    """Sampling ranges for disordered training sets."""

    size: int = 12
    kappa_normal: tuple = (0.0, 0.4)
    kappa_chern: tuple = (0.6, 1.0)
    w0: tuple = DEFAULT_W_RANGES["W0"]
    w1: tuple = DEFAULT_W_RANGES["W1"]
    w2: tuple = DEFAULT_W_RANGES["W2"]
    cutoff: float = 3
    gap_min: float = 0.05
    fermi_energy: float = 0.0
    max_attempts_factor: int = 10


def make_sample(kappa: float, w: tuple, seed, config: ChernGenerationConfig) -> LatticeModelSample:
    """Build, disorder and Kubo-label one model (label may be None)."""
    h = chern_hamiltonian(kappa, config.size)
    if any(w):
        h = add_disorder(h, *w, seed, size=config.size, allow_wide=True)
    p, evals = occupied_projector(h, config.fermi_energy)
    c = kubo_chern(h, config.fermi_energy, config.cutoff, size=config.size, projector=p)
    gap = spectral_gap(evals, config.fermi_energy)
    return LatticeModelSample(h, label_sample(c, gap, config.gap_min), c, gap,
                              {"kappa": float(kappa), "W0": float(w[0]), "W1": float(w[1]),
                               "W2": float(w[2])})


@dataclass
class GenerationReport:
    attempted: int
    kept: int
    discarded: int
    label_preserved: int
    counts: dict

    @property
    def preservation_rate(self) -> float:
        return self.label_preserved / max(self.attempted, 1)


def generate_chern_dataset(n_samples: int, seed: int, config: Optional[ChernGenerationConfig] = None):
    """Balanced disordered set; the two classes alternate as sampling targets.

    Each attempt draws its own stream from (seed, attempt index).  Returns
    (samples, report); raises RuntimeError if the quota cannot be met.
    """
    config = config or ChernGenerationConfig()
    quota = {CHERN: n_samples // 2, NORMAL: n_samples - n_samples // 2}
    samples, counts, preserved = [], {CHERN: 0, NORMAL: 0}, 0
    attempt = 0
    while min(quota[k] - counts[k] for k in quota) < 0 or any(counts[k] < quota[k] for k in quota):
        if attempt >= config.max_attempts_factor * max(n_samples, 1):
            raise RuntimeError(f"could not fill a balanced set: {counts} after {attempt} attempts")
        target = CHERN if attempt % 2 == 0 else NORMAL
        if counts[target] >= quota[target]:
            target = 1 - target
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        lo, hi = config.kappa_chern if target == CHERN else config.kappa_normal
        kappa = rng.uniform(lo, hi)
        w = tuple(float(rng.uniform(*r)) for r in (config.w0, config.w1, config.w2))
        sample = make_sample(kappa, w, rng.integers(2 ** 63), config)
        sample.metadata.update(seed=seed, attempt=attempt)
        attempt += 1
        if sample.label == target:
            preserved += 1
        if sample.label is None or counts[sample.label] >= quota[sample.label]:
            continue
        counts[sample.label] += 1
        samples.append(sample)
    report = GenerationReport(attempted=attempt, kept=len(samples), discarded=attempt - len(samples),
                              label_preserved=preserved,
                              counts={LABEL_NAMES[k]: v for k, v in counts.items()})
    log.info("chern set: kept %d of %d attempts, label preservation %.2f",
             report.kept, report.attempted, report.preservation_rate)
    return samples, report
