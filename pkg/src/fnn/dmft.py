"""Real-space DMFT for Falicov-Kimball layer-0 models and interacting training.

Only the frequencies n >= 0 are stored; the partner -n-1 of each one is its
complex conjugate, so sums over the symmetric grid [-n0, n0 - 1] become twice
the real part of sums over n >= 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .backprop import matsubara_ldos_gradients
from .datasets.fk import FkInstance, coordinates, fk_build, staggered_pattern
from .greens import EvaluationPoint, MatsubaraGrid, matsubara_ldos, recursive_forward
from .model import FnnParameters, InputEncoding, assemble
from .training import SampleSkipped, TrainConfig, TrainResult, train

__all__ = ["MatsubaraGrid", "DmftConfig", "DmftResult", "nf_occupation", "dmft_solve",
           "fnn_hybridization", "order_parameters", "MatsubaraEvaluator", "train_interacting",
           "encode_fk"]

log = logging.getLogger(__name__)


class EfBracketError(ValueError):
    pass


@dataclass
class DmftConfig:
    """Loop controls.  ``mixing`` is the update rate of the self-energy."""

    mixing: float = 0.5
    tolerance: float = 1e-6
    max_iterations: int = 500
    ef_bracket: Optional[tuple] = None
    fixed_ef: Optional[float] = None
    init_pattern: str = "checkerboard"
    init_amplitude: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.mixing <= 1:
            raise ValueError("mixing rate must lie in (0, 1]")
        if self.tolerance <= 0 or self.max_iterations < 1:
            raise ValueError("need a positive tolerance and at least one iteration")


@dataclass
class DmftResult:
    """Fixed point on the n >= 0 half of the grid; arrays are (frequency, site)."""

    self_energy: np.ndarray
    g_loc: np.ndarray
    weiss_inv: np.ndarray
    e_f: float
    n_f: np.ndarray
    grid: MatsubaraGrid
    iterations: int
    residuals: list
    converged: bool
    order: dict = field(default_factory=dict)

    def full(self, array: np.ndarray) -> np.ndarray:
        """Extend an n >= 0 array to n = -n0 .. n0 - 1 by conjugation."""
        return np.concatenate([array[::-1].conj(), array], axis=0)


def _log_sum(weiss_inv: np.ndarray, u: float) -> np.ndarray:
    """sum over the symmetric grid of ln(1 - U / G0^{-1}), per site, from n >= 0 data."""
    ratio = 1.0 - u / weiss_inv
    if np.min(np.abs(ratio)) < 1e-14:
        log.warning("1 - U G0 vanishes; occupation log-sum is on a branch point")
    return 2.0 * np.sum(np.log(ratio).real, axis=0)


def nf_occupation(weiss_inv, e_f: float, temperature: float, u: float, *, paired: bool = True):
    """Thermal f occupation of each impurity for a given f level.

    n_f = 1 / (1 + exp[(E_f + U/2)/T - sum_n ln(1 - U / G0^{-1}(i w_n))]).
    The U/2 restores the convergence factor dropped when the product over
    frequencies is truncated symmetrically.  ``paired`` means ``weiss_inv``
    holds only n >= 0; otherwise it spans the full symmetric grid and the
    imaginary parts of the log-sum must cancel.
    """
    w = np.asarray(weiss_inv, dtype=complex)
    if w.ndim == 1:
        w = w[:, None]
    if paired:
        s = _log_sum(w, u)
    else:
        terms = np.log(1.0 - u / w)
        if np.max(np.abs(terms.imag.sum(axis=0))) > 1e-10:
            raise ValueError("log-sum has an imaginary residue; grid is not conjugate-complete")
        s = terms.real.sum(axis=0)
    return expit(-((e_f + 0.5 * u) / temperature - s))


def solve_ef(weiss_inv: np.ndarray, temperature: float, u: float, bracket=None,
             target: float = 0.5) -> float:
    """f level that makes the site-averaged occupation equal ``target``."""
    s = _log_sum(weiss_inv, u)

    def excess(e_f):
        return expit(s - (e_f + 0.5 * u) / temperature).mean() - target

    if bracket is not None:
        lo, hi = bracket
        if excess(lo) * excess(hi) > 0:
            raise EfBracketError(f"no sign change of <n_f> - 1/2 on [{lo}, {hi}]")
    else:
        centre = temperature * float(np.median(s)) - 0.5 * u
        width = max(1.0, abs(u))
        lo, hi = centre - width, centre + width
        for _ in range(60):
            if excess(lo) >= 0 >= excess(hi):
                break
            lo, hi = lo - width, hi + width
            width *= 2
        else:
            raise EfBracketError("could not bracket the f level")
    return float(brentq(excess, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=500))


def fnn_hybridization(params: FnnParameters, grid: MatsubaraGrid) -> np.ndarray:
    """Delta(i w_n) = T_0 g_1 T_0^H seen by layer 0, for every n >= 0.

    g_1 is the Green's function of layer 1 with layers 2..L attached, built
    by a right-to-left recursion.
    """
    out = []
    for w in grid.positive_frequencies:
        z = 1j * w
        g = None
        for l in range(params.depth, 0, -1):
            h = params.intra[l - 1]
            x = z * np.eye(h.shape[0]) - h
            if g is not None:
                t = params.inter[l]
                x = x - t @ g @ t.conj().T
            g = np.linalg.inv(x)
        t0 = params.inter[0]
        out.append(t0 @ g @ t0.conj().T)
    return np.array(out)


def order_parameters(n_f, shape) -> dict:
    n_f = np.asarray(n_f, dtype=float)
    return {"checkerboard": float(abs(np.mean(n_f * staggered_pattern(shape, "checkerboard")))),
            "stripe_x": float(abs(np.mean(n_f * staggered_pattern(shape, "stripe_x")))),
            "stripe_y": float(abs(np.mean(n_f * staggered_pattern(shape, "stripe_y"))))}


def _initial_nf(m: int, shape, config: DmftConfig) -> np.ndarray:
    """Hartree guess 1/2 +- amplitude/2 in the requested pattern."""
    if config.init_pattern == "random":
        pattern = np.random.default_rng(config.seed).choice([-1.0, 1.0], size=m)
    elif config.init_pattern == "uniform" or shape is None:
        pattern = np.zeros(m)
    else:
        kind = "stripe_x" if config.init_pattern == "stripe" else config.init_pattern
        pattern = staggered_pattern(shape, kind)
    return np.clip(0.5 + 0.5 * config.init_amplitude * pattern, 0.0, 1.0)


def dmft_solve(h0, u: float, grid: MatsubaraGrid, mu: float = 0.0,
               config: Optional[DmftConfig] = None, *, hybridization: Optional[np.ndarray] = None,
               shape=None, initial_self_energy: Optional[np.ndarray] = None) -> DmftResult:
    """Self-consistent local self-energies of every layer-0 site.

    G_loc = [i w_n + mu - H_0 - Sigma - Delta]^{-1}_ii, with Delta the optional
    hybridization of an attached FNN.  Non-convergence is reported through
    ``converged`` rather than raised.
    """
    config = config or DmftConfig()
    h0 = np.asarray(h0)
    h0 = np.diag(h0) if h0.ndim == 1 else h0
    m = h0.shape[0]
    if np.abs(h0 - h0.conj().T).max(initial=0.0) > 1e-12:
        raise ValueError("H_0 must be Hermitian")
    freqs = grid.positive_frequencies
    t = grid.temperature
    if initial_self_energy is not None:
        sigma = np.array(initial_self_energy, dtype=complex)
    else:
        sigma = np.tile(u * _initial_nf(m, shape, config), (len(freqs), 1)).astype(complex)
    base = [(1j * w + mu) * np.eye(m) - h0 - (0 if hybridization is None else hybridization[k])
            for k, w in enumerate(freqs)]
    residuals, converged = [], False
    e_f, n_f = np.nan, np.full(m, 0.5)
    g_loc = weiss_inv = None
    for it in range(1, config.max_iterations + 1):
        g_loc = np.array([np.diagonal(np.linalg.inv(b - np.diag(s))) for b, s in zip(base, sigma)])
        weiss_inv = 1.0 / g_loc + sigma
        e_f = config.fixed_ef if config.fixed_ef is not None else \
            solve_ef(weiss_inv, t, u, config.ef_bracket)
        n_f = nf_occupation(weiss_inv, e_f, t, u)
        g_imp = n_f / (weiss_inv - u) + (1.0 - n_f) / weiss_inv
        residual = 2.0 * float(np.sum(np.linalg.norm(g_imp - g_loc, axis=1)))
        residuals.append(residual)
        if residual < config.tolerance:
            converged = True
            break
        sigma = (1.0 - config.mixing) * sigma + config.mixing * (weiss_inv - 1.0 / g_imp)
    order = order_parameters(n_f, shape) if shape is not None else {}
    return DmftResult(self_energy=sigma, g_loc=g_loc, weiss_inv=weiss_inv, e_f=float(e_f),
                      n_f=np.asarray(n_f, dtype=float), grid=grid, iterations=it,
                      residuals=residuals, converged=converged, order=order)


def encode_fk(instance: FkInstance) -> InputEncoding:
    """Interacting input: one-body matrix with -mu folded in, plus U, T and shape."""
    h, interaction = fk_build(instance)
    return InputEncoding.interacting(h, **interaction)


class MatsubaraEvaluator:
    """Matsubara LDOS head of an FNN whose layer 0 is solved by DMFT.

    The FNN is frozen during each DMFT solve; the resulting self-energies
    are then held fixed while gradients are taken.  Each sample starts its
    DMFT loop from the self-energy it converged to last time.
    """

    def __init__(self, grid: MatsubaraGrid, dmft_config: Optional[DmftConfig] = None,
                 warm_start: bool = True):
        self.grid = grid
        self.dmft_config = dmft_config or DmftConfig()
        self.warm_start = warm_start
        self._sigma_cache = {}
        self.last_result: Optional[DmftResult] = None

    def solve(self, params: FnnParameters, encoding: InputEncoding) -> DmftResult:
        spec = encoding.interaction or {}
        key = id(encoding)
        result = dmft_solve(encoding.h0, spec.get("u", 0.0), self.grid, 0.0, self.dmft_config,
                            hybridization=fnn_hybridization(params, self.grid),
                            shape=spec.get("shape"),
                            initial_self_energy=self._sigma_cache.get(key) if self.warm_start else None)
        self.last_result = result
        if not result.converged:
            raise SampleSkipped(f"DMFT did not converge in {result.iterations} iterations "
                                f"(residual {result.residuals[-1]:.3g})")
        if self.warm_start:
            self._sigma_cache[key] = result.self_energy
        return result

    def forward(self, params: FnnParameters, encoding: InputEncoding, *, retain: bool = False):
        result = self.solve(params, encoding)
        caches, diags = [], []
        for k, n in enumerate(self.grid.positive_indices):
            system = assemble(params, encoding, self_energy=result.self_energy[k])
            cache = recursive_forward(system, EvaluationPoint.matsubara(self.grid.temperature, int(n)),
                                      with_corner=False, retain=retain)
            caches.append(cache)
            diags.append(np.diagonal(cache.last_block))
        rho = matsubara_ldos(result.full(np.array(diags)))
        return rho, (caches, self.grid.positive_indices)

    def backward(self, state, loss_grad):
        caches, ns = state
        return matsubara_ldos_gradients(caches, ns, loss_grad, paired=True)


def train_interacting(params: FnnParameters, train_set, test_set, config: TrainConfig,
                      grid: MatsubaraGrid, dmft_config: Optional[DmftConfig] = None,
                      **kwargs) -> TrainResult:
    """Interacting training loop: DMFT per sample, Matsubara LDOS, SGD.

    ``train_set``/``test_set`` hold (InputEncoding, label) pairs with
    interacting encodings (see ``encode_fk``).
    """
    for enc, _ in list(train_set) + list(test_set):
        if enc.variant != "interacting":
            raise ValueError("interacting training needs interacting encodings")
    if config.head != "ldos":
        raise ValueError("interacting training uses the Matsubara LDOS head")
    evaluator = MatsubaraEvaluator(grid, dmft_config)
    return train(params, train_set, test_set, config, evaluator=evaluator, **kwargs)
