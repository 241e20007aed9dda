"""Entanglement diagnostics, the logic-flow transform and generative perturbations.

All routines treat the FNN together with its input as one free-fermion
system whose ground state fills every level at or below the Fermi energy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .datasets.chern import kubo_chern
from .greens import LayeredSystem
from .model import FnnParameters, InputEncoding, assemble

ZETA_CLAMP = 1e-14


class FermiDegeneracyError(ValueError):
    pass


class SpectrumRangeError(ValueError):
    pass


class CriterionError(ValueError):
    pass


@dataclass
class CorrelationMatrix:
    """C_ij = <c_i^dag c_j> and the layer each site belongs to."""

    matrix: np.ndarray
    layers: np.ndarray

    def sites(self, layer: int) -> np.ndarray:
        return np.flatnonzero(self.layers == layer)

    def block(self, a: Sequence[int], b: Optional[Sequence[int]] = None) -> np.ndarray:
        b = a if b is None else b
        return self.matrix[np.ix_(a, b)]


def ground_state_correlation(h: np.ndarray, fermi_energy: float = 0.0,
                             layers: Optional[np.ndarray] = None) -> CorrelationMatrix:
    """Correlation matrix (Q L Q^dag)^T of the state filling every level <= fermi_energy."""
    evals, q = np.linalg.eigh(h)
    if np.min(np.abs(evals - fermi_energy)) < 1e-9:
        raise FermiDegeneracyError("an eigenvalue lies within 1e-9 of the Fermi energy")
    occ = q[:, evals <= fermi_energy]
    c = (occ @ occ.conj().T).T
    if layers is None:
        layers = np.zeros(h.shape[0], dtype=int)
    return CorrelationMatrix(c, np.asarray(layers))


def system_correlation(system: LayeredSystem, fermi_energy: float = 0.0) -> CorrelationMatrix:
    """Ground-state correlations of an assembled FNN, with its layer map."""
    layers = np.repeat(np.arange(system.depth + 1), system.layer_sizes)
    return ground_state_correlation(system.to_dense(), fermi_energy, layers)


def _zeta(c_a: np.ndarray) -> np.ndarray:
    c_a = np.atleast_2d(c_a)
    if c_a.size == 0:
        return np.zeros(0)
    zeta = np.linalg.eigvalsh(0.5 * (c_a + c_a.conj().T))
    if zeta.min() < -1e-10 or zeta.max() > 1 + 1e-10:
        raise SpectrumRangeError(f"correlation spectrum [{zeta.min():.3g}, {zeta.max():.3g}] leaves [0, 1]")
    return np.clip(zeta, ZETA_CLAMP, 1 - ZETA_CLAMP)


def entanglement_entropy(c_a: np.ndarray) -> float:
    """Von Neumann entropy sum_k [-z ln z - (1 - z) ln(1 - z)] over the spectrum of C_A."""
    z = _zeta(c_a)
    return float(np.sum(-z * np.log(z) - (1 - z) * np.log1p(-z)))


def renyi_entropy(c_a: np.ndarray, alpha: float) -> float:
    """Renyi entropy ln tr(rho_A^alpha) / (1 - alpha) of a Gaussian state."""
    if alpha <= 0 or alpha == 1:
        raise ValueError("Renyi index must be positive and different from 1")
    z = _zeta(c_a)
    return float(np.sum(np.log(z ** alpha + (1 - z) ** alpha)) / (1 - alpha))


@dataclass
class EntanglementReport:
    s_a: float
    s_b: float
    s_ab: float
    a: list = field(default_factory=list)
    b: list = field(default_factory=list)

    @property
    def mutual_information(self) -> float:
        return self.s_a + self.s_b - self.s_ab


def mutual_information(c, a: Sequence[int], b: Sequence[int]) -> EntanglementReport:
    """I_AB = S_A + S_B - S_AB from principal submatrices of C."""
    c = c.matrix if isinstance(c, CorrelationMatrix) else np.asarray(c)
    a, b = list(map(int, a)), list(map(int, b))
    if set(a) & set(b):
        raise ValueError("subsystems must be disjoint")
    ab = a + b
    return EntanglementReport(entanglement_entropy(c[np.ix_(a, a)]), entanglement_entropy(c[np.ix_(b, b)]),
                              entanglement_entropy(c[np.ix_(ab, ab)]), a, b)


def neuron_output_information(corr: CorrelationMatrix) -> np.ndarray:
    """Mutual information of every single site with the whole output layer."""
    out = corr.sites(corr.layers.max())
    return np.array([0.0 if i in set(out) else mutual_information(corr, [i], out).mutual_information
                     for i in range(corr.matrix.shape[0])])


def layer_mutual_information(params: FnnParameters, encoding: InputEncoding,
                             fermi_energy: float = 1e-6) -> float:
    """I between the input layer and the output layer of one sample."""
    if encoding.variant != "onsite":
        raise ValueError("mutual information needs an explicit input Hamiltonian (onsite encoding)")
    corr = system_correlation(assemble(params, encoding), fermi_energy)
    return mutual_information(corr, corr.sites(0), corr.sites(params.depth)).mutual_information


def training_mi_trace(checkpoints: Sequence[FnnParameters], probe: Sequence[InputEncoding],
                      fermi_energy: float = 1e-6) -> np.ndarray:
    """Mean I_0L over a probe batch for each parameter snapshot.

    The default Fermi energy sits just above zero so that exact zero modes
    (e.g. blank pixels) count as filled.
    """
    return np.array([np.mean([layer_mutual_information(p, enc, fermi_energy) for enc in probe])
                     for p in checkpoints])


def gram_schmidt_basis(columns: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis from the columns, completed by unit vectors in index order.

    Nearly dependent candidates (residual below ``tol`` times the largest
    column norm) are skipped.  Each projection is applied twice for accuracy.
    """
    m = columns.shape[0]
    scale = max(1.0, float(np.max(np.linalg.norm(columns, axis=0), initial=0.0)))
    basis = []
    candidates = [columns[:, j] for j in range(columns.shape[1])] + list(np.eye(m, dtype=complex))
    for k, v in enumerate(candidates):
        if len(basis) == m:
            break
        w = np.array(v, dtype=complex)
        for _ in range(2):
            for q in basis:
                w = w - q * (q.conj() @ w)
        limit = tol * scale if k < columns.shape[1] else 1e-8
        norm = np.linalg.norm(w)
        if norm > limit:
            basis.append(w / norm)
    return np.array(basis).T


@dataclass
class LogicFlow:
    unitaries: list
    transformed: CorrelationMatrix

    def unitary(self) -> np.ndarray:
        sizes = [u.shape[0] for u in self.unitaries]
        out = np.zeros((sum(sizes), sum(sizes)), complex)
        o = 0
        for u in self.unitaries:
            out[o:o + u.shape[0], o:o + u.shape[0]] = u
            o += u.shape[0]
        return out


def logic_flow_transform(corr: CorrelationMatrix) -> LogicFlow:
    """Layer-wise unitaries that confine correlations with the output to M_L neurons.

    For every layer l < L with M_l >= M_L, U_l comes from Gram-Schmidt on the
    columns of C_{l,L}, so C'_{l,L} = U_l^dag C_{l,L} is upper triangular with
    a real non-negative diagonal and rows beyond M_L vanish.  U_L = I.
    """
    top = int(corr.layers.max())
    out_sites = corr.sites(top)
    unitaries = []
    for l in range(top + 1):
        sites = corr.sites(l)
        if l == top or len(sites) < len(out_sites):
            unitaries.append(np.eye(len(sites), dtype=complex))
        else:
            unitaries.append(gram_schmidt_basis(corr.block(sites, out_sites)))
    order = np.concatenate([corr.sites(l) for l in range(top + 1)])
    u = LogicFlow(unitaries, corr).unitary()
    perm = np.empty_like(order)
    perm[order] = np.arange(len(order))
    u = u[np.ix_(perm, perm)]
    c_new = u.conj().T @ corr.matrix @ u
    return LogicFlow(unitaries, CorrelationMatrix(c_new, corr.layers))


def spectral_ingap_probe(h: np.ndarray):
    """Full spectrum and the distance of the level nearest zero."""
    evals = np.linalg.eigvalsh(h)
    return evals, float(np.min(np.abs(evals)))


def overall_matrix(h0: np.ndarray, params: FnnParameters) -> np.ndarray:
    """Hamiltonian of the input model with the FNN attached."""
    return assemble(params, InputEncoding.hamiltonian(h0)).to_dense()


@dataclass
class PerturbationSet:
    """Local unit vectors h_i (rows: layer-0 sites) attached to target sites."""

    sites: np.ndarray
    vectors: np.ndarray
    shift: float
    smallest_singular: float

    def apply(self, h_ch: np.ndarray, omega) -> np.ndarray:
        """H_ch + sum_i (omega_i h_i e_i^T + h.c.)."""
        omega = np.broadcast_to(np.asarray(omega, dtype=complex), (len(self.sites),))
        delta = np.zeros_like(h_ch, dtype=complex)
        for w, i, v in zip(omega, self.sites, self.vectors.T):
            delta[:, i] += w * v
        return h_ch + delta + delta.conj().T


def _site_mask(size: int, site: int, radius: float) -> np.ndarray:
    y, x = np.divmod(np.arange(size * size), size)
    dx = (x - x[site] + size // 2) % size - size // 2
    dy = (y - y[site] + size // 2) % size - size // 2
    return np.hypot(dx, dy) <= radius


def span_perturbations(h_ch: np.ndarray, params: FnnParameters, sites: Sequence[int], seed, *,
                       radius: float = 2.0, size: Optional[int] = None, shift_to_zero_mode: bool = True,
                       tol: float = 1e-8) -> PerturbationSet:
    """Directed perturbation vectors from the column span of the overall matrix.

    Each h_i is a random combination of the columns other than i of
    M = overall - E* I (E* the level nearest zero, unless shifting is off),
    truncated to layer-0 rows within ``radius`` of site i, made orthogonal to
    the null vector of M on those rows so that the zero mode survives to
    first order, and normalized.
    """
    rng = np.random.default_rng(seed)
    m0 = h_ch.shape[0]
    size = size or int(round(np.sqrt(m0)))
    full = overall_matrix(h_ch, params)
    evals, evecs = np.linalg.eigh(full)
    k = int(np.argmin(np.abs(evals)))
    shift = float(evals[k]) if shift_to_zero_mode else 0.0
    mat = full - shift * np.eye(full.shape[0])
    sigma_min = float(np.min(np.abs(evals - shift)))
    if sigma_min > tol:
        raise CriterionError(f"overall matrix is not singular (smallest singular value {sigma_min:.3g})")
    null = evecs[:m0, k]
    vectors = []
    for i in sites:
        coeff = rng.standard_normal(full.shape[0]) + 1j * rng.standard_normal(full.shape[0])
        coeff[i] = 0.0
        v = (mat @ coeff)[:m0]
        mask = _site_mask(size, int(i), radius)
        v = np.where(mask, v, 0.0)
        nloc = np.where(mask, null, 0.0)
        if np.linalg.norm(nloc) > 1e-12:
            v = v - nloc * (nloc.conj() @ v) / (nloc.conj() @ nloc)
        vectors.append(v / np.linalg.norm(v))
    return PerturbationSet(np.asarray(sites), np.array(vectors).T, shift, sigma_min)


def random_perturbations(h_ch: np.ndarray, sites: Sequence[int], seed, *, radius: float = 2.0,
                         size: Optional[int] = None) -> PerturbationSet:
    """Random local unit vectors with the same support as the directed ones."""
    rng = np.random.default_rng(seed)
    m0 = h_ch.shape[0]
    size = size or int(round(np.sqrt(m0)))
    vectors = []
    for i in sites:
        mask = _site_mask(size, int(i), radius)
        v = np.where(mask, rng.standard_normal(m0) + 1j * rng.standard_normal(m0), 0.0)
        vectors.append(v / np.linalg.norm(v))
    return PerturbationSet(np.asarray(sites), np.array(vectors).T, 0.0, float("nan"))


def generative_perturbation(h_ch: np.ndarray, params: FnnParameters, omega: float, count: int,
                            seed, *, radius: float = 2.0, **kw) -> tuple:
    """``count`` perturbed models at strength omega plus the residual singular value.

    Returns (models, residual) where residual is the smallest |eigenvalue - E*|
    of the overall matrix built from the first perturbed model.
    """
    rng = np.random.default_rng(seed)
    models = []
    residual = float("nan")
    for c in range(count):
        sub = np.random.default_rng(rng.integers(2 ** 63))
        sites = sub.choice(h_ch.shape[0], size=max(1, h_ch.shape[0] // 8), replace=False)
        pert = span_perturbations(h_ch, params, sites, sub.integers(2 ** 63), radius=radius, **kw)
        phases = np.exp(2j * np.pi * sub.random(len(sites)))
        model = pert.apply(h_ch, omega * phases)
        if c == 0:
            evals = np.linalg.eigvalsh(overall_matrix(model, params))
            residual = float(np.min(np.abs(evals - pert.shift)))
        models.append(model)
    return models, residual


def exact_column_perturbation(matrix: np.ndarray, column: int, omega: complex, seed) -> np.ndarray:
    """Add omega times a combination of the other columns to one column."""
    rng = np.random.default_rng(seed)
    coeff = rng.standard_normal(matrix.shape[1]) + 1j * rng.standard_normal(matrix.shape[1])
    coeff[column] = 0.0
    out = np.array(matrix, dtype=complex)
    out[:, column] += omega * (matrix @ coeff)
    return out


def relative_determinant(matrix: np.ndarray) -> float:
    """|det M| / prod_j ||M[:, j]||, a scale-free singularity measure."""
    sign, logdet = np.linalg.slogdet(matrix)
    norms = np.linalg.norm(matrix, axis=0)
    if sign == 0 or np.any(norms == 0):
        return 0.0
    return float(np.exp(logdet - np.sum(np.log(norms))))


def survival_strength(h_ch: np.ndarray, perturbation: PerturbationSet, omegas: Sequence[float], *,
                      phases: Optional[np.ndarray] = None, threshold: float = 0.7,
                      cutoff: float = 3) -> float:
    """First omega on the grid at which the Kubo Chern number drops below ``threshold``."""
    phases = np.ones(len(perturbation.sites)) if phases is None else phases
    for w in omegas:
        try:
            c = kubo_chern(perturbation.apply(h_ch, w * phases), 0.0, cutoff)
        except ValueError:
            return float(w)
        if c < threshold:
            return float(w)
    return float("inf")
