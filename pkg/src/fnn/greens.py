"""Layer-by-layer Green's functions of layered tight-binding systems.

A layered system is block tridiagonal: ``intra[l]`` is the Hermitian block of
layer ``l`` and ``inter[l]`` the hopping block between layers ``l`` and
``l + 1`` (shape ``M_l x M_{l+1}``).  The recursion adds one layer at a time,

    G_NN = [z - H_N - T_{N-1}^H G_{N-1,N-1} T_{N-1}]^{-1}
    G_0N = G_{0,N-1} T_{N-1} G_NN

which is all that the output heads and their gradients need.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
ORACLE_CAP = 512


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a layer block ``z - H - Sigma`` cannot be inverted."""


class AsymmetricGridError(ValueError):
    """Raised when Matsubara data does not come in (n, -n-1) pairs."""


class MissingCacheError(RuntimeError):
    """Raised when backprop is asked to reuse intermediates that were dropped."""


@dataclass(frozen=True)
class EvaluationPoint:
    """Complex energy at which Green's functions are evaluated.

    ``retarded``: z = energy + i * broadening.
    ``matsubara``: z = energy + i * frequency with frequency = 2 pi T (n + 1/2).
    """

    kind: str
    energy: float = 0.0
    broadening: float = 0.0
    frequency: float = 0.0

    def __post_init__(self):
        if self.kind == "retarded":
            if not self.broadening > 0:
                raise ValueError("retarded evaluation needs broadening > 0")
        elif self.kind != "matsubara":
            raise ValueError(f"unknown evaluation kind {self.kind!r}")

    @classmethod
    def retarded(cls, energy: float = 0.0, broadening: float = 0.005) -> "EvaluationPoint":
        return cls("retarded", energy=float(energy), broadening=float(broadening))

    @classmethod
    def matsubara(cls, temperature: float, n: int, energy: float = 0.0) -> "EvaluationPoint":
        return cls("matsubara", energy=float(energy),
                   frequency=matsubara_frequency(temperature, n))

    @property
    def z(self) -> complex:
        if self.kind == "retarded":
            return complex(self.energy, self.broadening)
        return complex(self.energy, self.frequency)

    def conjugate(self) -> complex:
        return self.z.conjugate()


def matsubara_frequency(temperature: float, n) -> np.ndarray | float:
    return 2.0 * np.pi * temperature * (np.asarray(n) + 0.5)


@dataclass(frozen=True)
class MatsubaraGrid:
    """Fermionic frequencies 2 pi T (n + 1/2) for n in [-n0, n0 - 1]."""

    temperature: float
    n0: int = 20

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-self.n0, self.n0)

    @property
    def frequencies(self) -> np.ndarray:
        return matsubara_frequency(self.temperature, self.indices)

    @property
    def positive_indices(self) -> np.ndarray:
        return np.arange(self.n0)

    @property
    def positive_frequencies(self) -> np.ndarray:
        return matsubara_frequency(self.temperature, self.positive_indices)

    def points(self, energy: float = 0.0) -> list[EvaluationPoint]:
        return [EvaluationPoint.matsubara(self.temperature, n, energy) for n in self.indices]

    def __len__(self):
        return 2 * self.n0


@dataclass
class LayeredSystem:
    """Block-tridiagonal Hamiltonian split into layers.

    ``intra[0]`` may be a 1-D array, meaning a diagonal (onsite-only) layer 0.
    ``onsite_self_energy`` is added to the layer-0 diagonal.  ``fixed_g00``
    replaces the layer-0 Green's function altogether (external LDOS inputs, or
    a layer-0 block precomputed at the point of evaluation); it may be 1-D.
    """

    intra: list
    inter: list
    onsite_self_energy: Optional[np.ndarray] = None
    fixed_g00: Optional[np.ndarray] = None

    def __post_init__(self):
        self.intra = [np.asarray(h) for h in self.intra]
        self.inter = [np.asarray(t) for t in self.inter]

    @property
    def layer_sizes(self) -> list[int]:
        return [h.shape[0] for h in self.intra]

    @property
    def depth(self) -> int:
        return len(self.intra) - 1

    def validate(self, tol: float = HERMITIAN_TOL) -> None:
        if not self.intra:
            raise ValueError("a layered system needs at least one layer")
        if len(self.inter) != len(self.intra) - 1:
            raise ValueError("need exactly one inter-layer block per adjacent pair")
        sizes = self.layer_sizes
        for l, h in enumerate(self.intra):
            if h.ndim == 1:
                if l != 0:
                    raise ValueError("only layer 0 may be given as a diagonal")
                if np.abs(h.imag).max(initial=0.0) > tol:
                    raise ValueError("diagonal layer 0 must be real")
                continue
            if h.shape != (sizes[l], sizes[l]):
                raise ValueError(f"intra block {l} has shape {h.shape}")
            if np.abs(h - h.conj().T).max(initial=0.0) > tol:
                raise ValueError(f"intra block {l} is not Hermitian")
        for l, t in enumerate(self.inter):
            if t.shape != (sizes[l], sizes[l + 1]):
                raise ValueError(f"inter block {l} has shape {t.shape}, "
                                 f"expected {(sizes[l], sizes[l + 1])}")
        if self.onsite_self_energy is not None and np.shape(self.onsite_self_energy) != (sizes[0],):
            raise ValueError("onsite self-energy must have one value per layer-0 site")
        if self.fixed_g00 is not None:
            g = np.asarray(self.fixed_g00)
            if g.shape not in ((sizes[0],), (sizes[0], sizes[0])):
                raise ValueError("fixed layer-0 Green's function has the wrong shape")

    def block(self, l: int) -> np.ndarray:
        """Dense layer block including any layer-0 self-energy."""
        h = self.intra[l]
        h = np.diag(h) if h.ndim == 1 else h
        h = h.astype(complex)
        if l == 0 and self.onsite_self_energy is not None:
            h = h + np.diag(self.onsite_self_energy)
        return h

    def to_dense(self) -> np.ndarray:
        """Assemble the full Hamiltonian (layer-0 self-energy included)."""
        sizes = self.layer_sizes
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        h = np.zeros((offsets[-1], offsets[-1]), dtype=complex)
        for l in range(len(sizes)):
            s = slice(offsets[l], offsets[l + 1])
            h[s, s] = self.block(l)
        for l, t in enumerate(self.inter):
            a = slice(offsets[l], offsets[l + 1])
            b = slice(offsets[l + 1], offsets[l + 2])
            h[a, b] = t
            h[b, a] = t.conj().T
        return h

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.layer_sizes)])


@dataclass
class RecursionCache:
    """Forward-pass products kept for the output heads and for backprop.

    ``diag_blocks[N]`` is G^(N)_{N,N} and ``corner_blocks[N]`` is G^(N)_{0,N}.
    The layer-0 entries are 1-D when layer 0 is diagonal.
    """

    system: LayeredSystem
    point: EvaluationPoint
    diag_blocks: Optional[list]
    corner_blocks: Optional[list]
    last_block: np.ndarray = field(repr=False, default=None)
    last_corner: Optional[np.ndarray] = field(repr=False, default=None)

    @property
    def depth(self) -> int:
        return self.system.depth

    def g(self, n: int) -> np.ndarray:
        if self.diag_blocks is None:
            raise MissingCacheError("intermediate blocks were not retained")
        return _dense(self.diag_blocks[n])

    def corner(self, n: int) -> np.ndarray:
        if self.corner_blocks is None:
            raise MissingCacheError("corner blocks were not computed")
        return _dense(self.corner_blocks[n])

    def real_forms(self) -> dict[str, list[np.ndarray]]:
        """Realified O, X, Y, T, H matrices of every recursion step.

        Built on demand; X is recovered as the inverse of O.
        """
        if self.diag_blocks is None:
            raise MissingCacheError("intermediate blocks were not retained")
        from .backprop import realify

        o = [realify(self.g(n)) for n in range(self.depth + 1)]
        forms = {
            "O": o,
            "X": [np.linalg.inv(m) for m in o],
            "T": [realify(t) for t in self.system.inter],
            "H": [realify(self.system.block(n)) for n in range(self.depth + 1)],
        }
        if self.corner_blocks is not None:
            forms["Y"] = [realify(self.corner(n)) for n in range(self.depth + 1)]
        return forms


def _dense(g: np.ndarray) -> np.ndarray:
    return np.diag(g) if g.ndim == 1 else g


def _invert(m: np.ndarray, layer: int) -> np.ndarray:
    try:
        inv = np.linalg.inv(m)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"layer {layer}: z - H - Sigma is singular") from exc
    if not np.all(np.isfinite(inv)):
        raise SingularMatrixError(f"layer {layer}: inverse is not finite")
    return inv


def _sandwich(t: np.ndarray, g: np.ndarray) -> np.ndarray:
    """T^H g T for dense or diagonal g."""
    if g.ndim == 1:
        return (t.conj().T * g) @ t
    return t.conj().T @ g @ t


def _layer0_green(system: LayeredSystem, z: complex) -> np.ndarray:
    if system.fixed_g00 is not None:
        return np.asarray(system.fixed_g00, dtype=complex)
    h0 = system.intra[0]
    if h0.ndim == 1:
        diag = z - h0.astype(complex)
        if system.onsite_self_energy is not None:
            diag = diag - system.onsite_self_energy
        if np.any(diag == 0):
            raise SingularMatrixError("layer 0: z coincides with an onsite level")
        return 1.0 / diag
    m = z * np.eye(h0.shape[0]) - system.block(0)
    return _invert(m, 0)


def recursive_forward(system: LayeredSystem, point: EvaluationPoint, *,
                      with_corner: bool = True, retain: bool = True,
                      validate: bool = False) -> RecursionCache:
    """Run the layer recursion and keep every block backprop will need."""
    if validate:
        system.validate()
    if not system.intra:
        raise ValueError("a layered system needs at least one layer")
    z = point.z
    g = _layer0_green(system, z)
    diag_blocks = [g]
    corner = g if with_corner else None
    corner_blocks = [g] if with_corner else None
    for n in range(1, system.depth + 1):
        t = system.inter[n - 1]
        x = z * np.eye(system.intra[n].shape[0]) - system.block(n) - _sandwich(t, g)
        g_new = _invert(x, n)
        if with_corner:
            left = corner[:, None] * t if corner.ndim == 1 else corner @ t
            corner = left @ g_new
            corner_blocks.append(corner)
        g = g_new
        diag_blocks.append(g)
    return RecursionCache(
        system=system, point=point,
        diag_blocks=diag_blocks if retain else None,
        corner_blocks=corner_blocks if (retain and with_corner) else None,
        last_block=_dense(g), last_corner=_dense(corner) if with_corner else None,
    )


def direct_greens(system: LayeredSystem, point: EvaluationPoint, *,
                  cap: int = ORACLE_CAP) -> np.ndarray:
    """Full inverse of (z - H) by dense LU; the brute-force reference.

    With ``fixed_g00`` the layer-0 block is that fixed matrix and layers
    1..L are inverted with T_0^H G_00 T_0 folded into layer 1, which is the
    same elimination the recursion performs.
    """
    total = sum(system.layer_sizes)
    if total > cap:
        raise ValueError(f"system has {total} sites, above the oracle cap {cap}")
    z = point.z
    if system.fixed_g00 is None:
        return _invert(z * np.eye(total) - system.to_dense(), -1)
    g00 = _dense(np.asarray(system.fixed_g00, dtype=complex))
    rest = LayeredSystem(intra=[system.block(l) for l in range(1, system.depth + 1)],
                         inter=system.inter[1:])
    h = rest.to_dense()
    m1 = system.layer_sizes[1]
    h[:m1, :m1] += _sandwich(system.inter[0], g00)
    g_rest = _invert(z * np.eye(h.shape[0]) - h, -1)
    m0 = g00.shape[0]
    full = np.zeros((total, total), dtype=complex)
    full[:m0, :m0] = g00 + g00 @ system.inter[0] @ g_rest[:m1, :m1] @ system.inter[0].conj().T @ g00
    full[:m0, m0:] = g00 @ system.inter[0] @ g_rest[:m1, :]
    full[m0:, :m0] = g_rest[:, :m1] @ system.inter[0].conj().T @ g00
    full[m0:, m0:] = g_rest
    return full


def block_of(full: np.ndarray, sizes: Sequence[int], i: int, j: int) -> np.ndarray:
    off = np.concatenate([[0], np.cumsum(sizes)])
    return full[off[i]:off[i + 1], off[j]:off[j + 1]]


def ldos_output(cache: RecursionCache) -> np.ndarray:
    """LDOS -Im[G_LL]_mm / pi on the last-layer sites (retarded points)."""
    if cache.point.kind != "retarded":
        raise ValueError("LDOS head needs a retarded evaluation point; "
                         "use matsubara_ldos for imaginary frequencies")
    return -np.diagonal(cache.last_block).imag / np.pi


def cc_output(cache: RecursionCache) -> float:
    """Conditional conductance sum_m |[G_0L]_{m,1}|^2; needs a single output site."""
    if cache.last_corner is None:
        raise MissingCacheError("forward pass ran without corner blocks")
    if cache.last_corner.shape[1] != 1:
        raise ValueError(f"CC head needs one output site, got {cache.last_corner.shape[1]}")
    return float(np.sum(np.abs(cache.last_corner[:, 0]) ** 2))


def matsubara_ldos(diag_values, *, tol: float = 1e-10) -> np.ndarray:
    """rho = (i / pi) sum_n (-1)^n G(i w_n)_rr over n in [-n0, n0 - 1].

    ``diag_values`` has the frequency axis first, ordered n = -n0 .. n0 - 1.
    """
    g = np.asarray(diag_values, dtype=complex)
    count = g.shape[0]
    if count == 0 or count % 2:
        raise AsymmetricGridError("need an even number of frequencies n in [-n0, n0-1]")
    n0 = count // 2
    signs = (-1.0) ** np.arange(-n0, n0)
    rho = (1j / np.pi) * np.tensordot(signs, g, axes=(0, 0))
    scale = max(1.0, float(np.max(np.abs(rho.real), initial=0.0)))
    if np.max(np.abs(rho.imag), initial=0.0) > tol * scale:
        raise AsymmetricGridError("Matsubara LDOS has an imaginary residue; "
                                  "input is not conjugate-symmetric in (n, -n-1)")
    return rho.real


def matsubara_truncation_error(rho_of_grid: Callable[[MatsubaraGrid], np.ndarray],
                               grid: MatsubaraGrid) -> float:
    """Change of the Matsubara LDOS when the cutoff n0 is doubled.

    The omitted tail alternates and decays like 1/n, so the error of the
    coarse sum is close to twice this change; use ``2 *`` the result as the
    error bound.
    """
    coarse = rho_of_grid(grid)
    fine = rho_of_grid(MatsubaraGrid(grid.temperature, 2 * grid.n0))
    return float(np.max(np.abs(np.asarray(fine) - np.asarray(coarse))))
