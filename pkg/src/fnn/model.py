"""FNN architecture, parameters, input encodings and checkpoints."""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .greens import LayeredSystem

INTRA_KINDS = ("none", "nearest-neighbor", "next-nearest-neighbor", "full")
INTER_KINDS = ("full", "tree", "overlapping")

MAGIC = b"FNN1"
CHECKPOINT_VERSION = 1


class CheckpointVersionError(ValueError):
    pass


def _per_layer(value, count: int, name: str) -> list:
    if isinstance(value, str) or value is None:
        return [value] * count
    value = list(value)
    if len(value) != count:
        raise ValueError(f"{name} needs {count} entries, got {len(value)}")
    return value


@dataclass
class ArchitectureSpec:
    """Layer sizes and connectivity of an FNN.

    ``layer_sizes`` lists M_1..M_L; the input layer has ``input_size`` sites.
    ``geometries`` gives an optional (width, height) for layers 0..L.  Intra
    kinds apply to layers 1..L, inter kinds to the pairs (0,1)..(L-1,L).
    """

    input_size: int
    layer_sizes: list
    intra: Union[str, list] = "full"
    inter: Union[str, list] = "full"
    geometries: Optional[list] = None

    def __post_init__(self):
        self.layer_sizes = [int(m) for m in self.layer_sizes]
        depth = len(self.layer_sizes)
        if depth < 1 or self.input_size < 1 or min(self.layer_sizes) < 1:
            raise ValueError("need positive layer sizes and at least one FNN layer")
        self.intra = _per_layer(self.intra, depth, "intra")
        self.inter = _per_layer(self.inter, depth, "inter")
        if self.geometries is None:
            self.geometries = [None] * (depth + 1)
        self.geometries = [None if g is None else (int(g[0]), int(g[1])) for g in self.geometries]
        if len(self.geometries) != depth + 1:
            raise ValueError("geometries need one entry per layer including the input")
        sizes = self.all_sizes
        for l, g in enumerate(self.geometries):
            if g is not None and g[0] * g[1] != sizes[l]:
                raise ValueError(f"layer {l}: geometry {g} does not hold {sizes[l]} sites")
        for kind in self.intra:
            if kind not in INTRA_KINDS:
                raise ValueError(f"unknown intra connectivity {kind!r}")
        for l, kind in enumerate(self.inter):
            if kind not in INTER_KINDS:
                raise ValueError(f"unknown inter connectivity {kind!r}")
            if kind != "full" and (self.geometries[l] is None or self.geometries[l + 1] is None):
                raise ValueError(f"{kind} inter-layer hopping needs 2D geometries on both layers")

    @property
    def all_sizes(self) -> list:
        return [self.input_size] + self.layer_sizes

    @property
    def depth(self) -> int:
        return len(self.layer_sizes)

    def intra_mask(self, l: int) -> np.ndarray:
        """Boolean mask for layer l (1..L); the diagonal (onsite mu) is always free."""
        m = self.all_sizes[l]
        kind = self.intra[l - 1]
        if kind == "full":
            return np.ones((m, m), bool)
        mask = np.eye(m, dtype=bool)
        if kind == "none":
            return mask
        width, height = self.geometries[l] or (m, 1)
        xy = np.array([(i % width, i // width) for i in range(m)])
        dx = np.abs(xy[:, None, 0] - xy[None, :, 0])
        dy = np.abs(xy[:, None, 1] - xy[None, :, 1])
        mask |= (dx + dy) == 1
        if kind == "next-nearest-neighbor":
            mask |= (dx == 1) & (dy == 1)
        return mask

    def inter_mask(self, l: int) -> np.ndarray:
        """Boolean mask for T_l, rows on layer l and columns on layer l + 1."""
        sizes = self.all_sizes
        kind = self.inter[l]
        if kind == "full":
            return np.ones((sizes[l], sizes[l + 1]), bool)
        w0, h0 = self.geometries[l]
        w1, h1 = self.geometries[l + 1]
        mask = np.zeros((sizes[l], sizes[l + 1]), bool)
        for j in range(sizes[l + 1]):
            mx, my = j % w1, j // w1
            xs = [x for x in _window(mx, kind, l) if 0 <= x < w0]
            ys = [y for y in _window(my, kind, l) if 0 <= y < h0]
            for x in xs:
                for y in ys:
                    mask[x + w0 * y, j] = True
        return mask


def _window(m: int, kind: str, pair: int) -> range:
    """0-based partner coordinates of a receiving coordinate m.

    tree: disjoint 2x2 blocks.  overlapping, 1-based: m' in [2m-1, 2m+2] for
    the first pair and [2m-1, 2m+1] afterwards; out-of-range indices are
    clipped by the caller.
    """
    if kind == "tree":
        return range(2 * m, 2 * m + 2)
    width = 4 if pair == 0 else 3
    return range(2 * m, 2 * m + width)


class ParamRef(NamedTuple):
    """One real degree of freedom: kind 'intra'|'inter', layer, row, col, part 0=Re/1=Im."""

    kind: str
    layer: int
    row: int
    col: int
    part: int


@dataclass
class FnnParameters:
    """Trainable blocks: ``intra[l-1]`` is H_l (l = 1..L), ``inter[l]`` is T_l."""

    intra: list
    inter: list
    intra_masks: list
    inter_masks: list
    metadata: dict = field(default_factory=dict)

    @property
    def layer_sizes(self) -> list:
        return [self.inter[0].shape[0]] + [h.shape[0] for h in self.intra]

    @property
    def depth(self) -> int:
        return len(self.intra)

    def copy(self) -> "FnnParameters":
        return FnnParameters(intra=[h.copy() for h in self.intra],
                             inter=[t.copy() for t in self.inter],
                             intra_masks=self.intra_masks, inter_masks=self.inter_masks,
                             metadata=dict(self.metadata))

    def apply_masks(self) -> "FnnParameters":
        for h, m in zip(self.intra, self.intra_masks):
            h[~m] = 0.0
            h[...] = 0.5 * (h + h.conj().T)
            np.fill_diagonal(h, h.diagonal().real)
        for t, m in zip(self.inter, self.inter_masks):
            t[~m] = 0.0
        return self

    def refs(self) -> list:
        """Every free real parameter; intra entries come from the upper triangle."""
        out = []
        for l, m in enumerate(self.inter_masks):
            for i, j in zip(*np.nonzero(m)):
                out.append(ParamRef("inter", l, int(i), int(j), 0))
                out.append(ParamRef("inter", l, int(i), int(j), 1))
        for l, m in enumerate(self.intra_masks, start=1):
            for i, j in zip(*np.nonzero(np.triu(m))):
                out.append(ParamRef("intra", l, int(i), int(j), 0))
                if i != j:
                    out.append(ParamRef("intra", l, int(i), int(j), 1))
        return out

    def num_real_parameters(self) -> int:
        n = sum(2 * int(m.sum()) for m in self.inter_masks)
        for m in self.intra_masks:
            diag = int(np.diagonal(m).sum())
            n += diag + 2 * int(np.triu(m, 1).sum())
        return n

    def is_free(self, ref: ParamRef) -> bool:
        if ref.kind == "inter":
            return bool(self.inter_masks[ref.layer][ref.row, ref.col])
        if ref.row == ref.col and ref.part == 1:
            return False
        return bool(self.intra_masks[ref.layer - 1][ref.row, ref.col])

    def value(self, ref: ParamRef) -> float:
        block = self.inter[ref.layer] if ref.kind == "inter" else self.intra[ref.layer - 1]
        v = block[ref.row, ref.col]
        return float(v.imag if ref.part else v.real)

    def perturbed(self, ref: ParamRef, delta: float) -> "FnnParameters":
        """Copy with one real component shifted; Hermitian partners follow."""
        out = self.copy()
        step = delta * (1j if ref.part else 1.0)
        if ref.kind == "inter":
            out.inter[ref.layer][ref.row, ref.col] += step
        else:
            h = out.intra[ref.layer - 1]
            h[ref.row, ref.col] += step
            if ref.row != ref.col:
                h[ref.col, ref.row] += np.conj(step)
        return out

    @staticmethod
    def gradient_value(grads, ref: ParamRef) -> float:
        """Read the derivative for ``ref`` out of a GradientSet."""
        block = grads.inter[ref.layer] if ref.kind == "inter" else grads.intra[ref.layer]
        v = block[ref.row, ref.col]
        return float(v.imag if ref.part else v.real)

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(np.abs(a) ** 2) for a in self.intra + self.inter)))


def init_parameters(spec: ArchitectureSpec, seed: int) -> FnnParameters:
    """Complex Gaussian entries with std 1/sqrt(fan-in) of the receiving site."""
    rng = np.random.default_rng(seed)
    sizes = spec.all_sizes
    inter_masks = [spec.inter_mask(l) for l in range(spec.depth)]
    intra_masks = [spec.intra_mask(l) for l in range(1, spec.depth + 1)]
    inter = []
    for l, mask in enumerate(inter_masks):
        fan_in = np.maximum(mask.sum(axis=0), 1)
        scale = (1.0 / np.sqrt(fan_in))[None, :]
        draw = (rng.standard_normal(mask.shape) + 1j * rng.standard_normal(mask.shape)) / np.sqrt(2)
        inter.append(np.where(mask, draw * scale, 0.0).astype(complex))
    intra = []
    for mask in intra_masks:
        m = mask.shape[0]
        fan_in = np.maximum(mask.sum(axis=1), 1)
        scale = 1.0 / np.sqrt(np.sqrt(fan_in[:, None] * fan_in[None, :]))
        draw = (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))) / np.sqrt(2)
        upper = np.triu(np.where(mask, draw * scale, 0.0), 1)
        h = upper + upper.conj().T
        h[np.diag_indices(m)] = rng.standard_normal(m) * np.diagonal(scale) * np.diagonal(mask)
        intra.append(h.astype(complex))
    return FnnParameters(intra=intra, inter=inter, intra_masks=intra_masks, inter_masks=inter_masks)


@dataclass
class InputEncoding:
    """How a sample enters the FNN as layer 0.

    ``onsite``: Hermitian H_0 (a 1-D array means diagonal onsite potentials).
    ``external_ldos``: a fixed diagonal G_00 with Im G_00 = -pi x.
    ``interacting``: one-body H_0 (hoppings minus mu) plus an interaction spec;
    per-frequency self-energies are supplied at assembly time.
    """

    variant: str
    h0: Optional[np.ndarray] = None
    g00: Optional[np.ndarray] = None
    interaction: Optional[dict] = None
    _g00_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in ("onsite", "external_ldos", "interacting"):
            raise ValueError(f"unknown input variant {self.variant!r}")
        if self.variant == "external_ldos":
            g = np.asarray(self.g00)
            if g.ndim != 1 or np.any(g.imag > 0):
                raise ValueError("external LDOS needs a diagonal G_00 with Im <= 0")
        elif self.h0 is None:
            raise ValueError(f"{self.variant} input needs h0")
        else:
            h = np.asarray(self.h0)
            if h.ndim == 2 and np.abs(h - h.conj().T).max(initial=0.0) > 1e-12:
                raise ValueError("input Hamiltonian must be Hermitian")

    @classmethod
    def onsite(cls, values) -> "InputEncoding":
        """Pixels or any real field as onsite potentials of layer 0."""
        return cls("onsite", h0=np.asarray(values, dtype=float).ravel())

    @classmethod
    def hamiltonian(cls, h0) -> "InputEncoding":
        return cls("onsite", h0=np.asarray(h0))

    @classmethod
    def external_ldos(cls, values) -> "InputEncoding":
        x = np.asarray(values, dtype=float).ravel()
        return cls("external_ldos", g00=-1j * np.pi * x)

    @classmethod
    def interacting(cls, one_body, **interaction) -> "InputEncoding":
        return cls("interacting", h0=np.asarray(one_body), interaction=dict(interaction))

    @property
    def size(self) -> int:
        return (self.g00 if self.variant == "external_ldos" else self.h0).shape[0]

    def layer0_green(self, z: complex) -> np.ndarray:
        """(z - H_0)^{-1} for a dense onsite input, memoized per z."""
        key = complex(z)
        if key not in self._g00_cache:
            h = np.asarray(self.h0)
            self._g00_cache[key] = np.linalg.inv(z * np.eye(h.shape[0]) - h)
        return self._g00_cache[key]


def assemble(params: FnnParameters, encoding: InputEncoding, *,
             self_energy: Optional[np.ndarray] = None,
             z: Optional[complex] = None) -> LayeredSystem:
    """Attach an encoded input to the FNN as its layer 0.

    Passing ``z`` for a dense onsite input reuses a memoized layer-0 Green's
    function, since it does not depend on the FNN parameters.
    """
    m0 = params.layer_sizes[0]
    if encoding.size != m0:
        raise ValueError(f"input has {encoding.size} sites, FNN expects {m0}")
    if encoding.variant == "external_ldos":
        return LayeredSystem(intra=[np.zeros(m0)] + list(params.intra), inter=list(params.inter),
                             fixed_g00=encoding.g00)
    if encoding.variant == "interacting":
        return LayeredSystem(intra=[encoding.h0] + list(params.intra), inter=list(params.inter),
                             onsite_self_energy=self_energy)
    fixed = None
    if z is not None and np.asarray(encoding.h0).ndim == 2:
        fixed = encoding.layer0_green(z)
    return LayeredSystem(intra=[encoding.h0] + list(params.intra), inter=list(params.inter),
                         fixed_g00=fixed)


# -- checkpoints -------------------------------------------------------------
#
# magic "FNN1" | u8 version | u32 layer count n | u32[n] sizes M_0..M_L
# then for l = 1..L:   intra mask bits, intra matrix
# then for l = 0..L-1: inter mask bits, inter matrix
# then u32 length + UTF-8 JSON metadata.
# Matrices are row-major little-endian float64 (re, im) pairs; masks are
# row-major bits packed little-endian within each byte, padded to a byte.

def _write_block(buf, mask: np.ndarray, matrix: np.ndarray) -> None:
    buf.write(np.packbits(mask.ravel(), bitorder="little").tobytes())
    buf.write(np.ascontiguousarray(matrix, dtype="<c16").tobytes())


def _read_block(buf, rows: int, cols: int):
    nbits = rows * cols
    raw = buf.read((nbits + 7) // 8)
    mask = np.unpackbits(np.frombuffer(raw, np.uint8), bitorder="little")[:nbits]
    data = buf.read(16 * nbits)
    if len(raw) != (nbits + 7) // 8 or len(data) != 16 * nbits:
        raise ValueError("checkpoint is truncated")
    matrix = np.frombuffer(data, dtype="<c16").reshape(rows, cols).astype(complex)
    return mask.reshape(rows, cols).astype(bool), matrix


def checkpoint_bytes(params: FnnParameters) -> bytes:
    buf = io.BytesIO()
    sizes = params.layer_sizes
    buf.write(MAGIC)
    buf.write(struct.pack("<B", CHECKPOINT_VERSION))
    buf.write(struct.pack(f"<I{len(sizes)}I", len(sizes), *sizes))
    for h, m in zip(params.intra, params.intra_masks):
        _write_block(buf, m, h)
    for t, m in zip(params.inter, params.inter_masks):
        _write_block(buf, m, t)
    meta = json.dumps(params.metadata, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    return buf.getvalue()


def save_checkpoint(path, params: FnnParameters) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(params))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> FnnParameters:
    buf = io.BytesIO(Path(path).read_bytes())
    if buf.read(4) != MAGIC:
        raise ValueError("not an FNN checkpoint (bad magic)")
    (version,) = struct.unpack("<B", buf.read(1))
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    (n,) = struct.unpack("<I", buf.read(4))
    sizes = struct.unpack(f"<{n}I", buf.read(4 * n))
    intra, intra_masks, inter, inter_masks = [], [], [], []
    for l in range(1, n):
        m, h = _read_block(buf, sizes[l], sizes[l])
        intra.append(h)
        intra_masks.append(m)
    for l in range(n - 1):
        m, t = _read_block(buf, sizes[l], sizes[l + 1])
        inter.append(t)
        inter_masks.append(m)
    raw = buf.read(4)
    metadata = {}
    if len(raw) == 4:
        (length,) = struct.unpack("<I", raw)
        metadata = json.loads(buf.read(length).decode() or "{}")
    return FnnParameters(intra=intra, inter=inter, intra_masks=intra_masks,
                         inter_masks=inter_masks, metadata=metadata)
