"""``fnn gen|train|eval|sweep|diagnose --config <path> [--seed N] [--out <dir>]``.

Every command reads one YAML run file (see ``fnn.config``), takes all of its
randomness from the run seed and writes its outputs atomically under the
output directory.  Tables are tab-separated with a header row.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .backprop import gradient_layer_profile
from .datasets.chern import (ChernGenerationConfig, add_disorder, chern_hamiltonian,
                             generate_chern_dataset)
from .datasets.fk import FkDatasetConfig, FkInstance, fk_dataset, half_filling_mu
from .datasets.mnist import find_mnist, load_mnist
from .datasets.store import Dataset, atomic_write_bytes, load_dataset, save_dataset
from .dmft import MatsubaraEvaluator, encode_fk
from .greens import MatsubaraGrid
from .interpret import (layer_mutual_information, logic_flow_transform, neuron_output_information,
                        spectral_ingap_probe, system_correlation)
from .model import InputEncoding, assemble, init_parameters, load_checkpoint, save_checkpoint
from .training import (RetardedEvaluator, SampleSkipped, cc_probability, loss_and_grad_seed, predict,
                       score_predictions, softmax, train)

log = logging.getLogger("fnn")

COMMANDS = ("gen", "train", "eval", "sweep", "diagnose")


# ---------------------------------------------------------------- output helpers

def write_table(path, header, rows) -> Path:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(_cell(v) for v in row))
    return atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_json(path, obj) -> Path:
    return atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


# ---------------------------------------------------------------- datasets

def _split_records(n_train: int, n_test: int, labels, extra=None):
    extra = extra or [{} for _ in labels]
    return [dict(e, label=int(lab), split="train" if i < n_train else "test")
            for i, (lab, e) in enumerate(zip(labels, extra))]


def gen_mnist(spec, seed: int) -> Dataset:
    path = Path(spec.path)
    train_files, test_files = find_mnist(path, "train"), find_mnist(path, "test")
    train_s = load_mnist(*train_files, limit=spec.n_train)
    test_s = load_mnist(*test_files, limit=spec.n_test)
    if len(train_s) < spec.n_train or len(test_s) < spec.n_test:
        raise ValueError(f"{path} holds fewer images than requested")
    samples = train_s + test_s
    width = samples[0].pixels.size if samples else 0
    pixels = np.array([s.pixels.ravel() for s in samples], dtype=np.float64).reshape(len(samples), width)
    records = _split_records(spec.n_train, spec.n_test, [s.label for s in samples])
    manifest = {"kind": "mnist", "source": str(path), "seed": seed}
    return Dataset(manifest, {"pixels": pixels}, records)


def gen_chern(spec, seed: int) -> Dataset:
    params = dict(spec.params)
    for key in ("kappa_normal", "kappa_chern", "w0", "w1", "w2"):
        if key in params:
            params[key] = tuple(params[key])
    config = ChernGenerationConfig(**params)
    samples, report = generate_chern_dataset(spec.n_train + spec.n_test, seed, config)
    n = config.size ** 2
    if samples:
        pattern = np.any([np.abs(s.hamiltonian) > 0 for s in samples], axis=0)
    else:
        pattern = np.zeros((n, n), bool)
    rows, cols = np.nonzero(pattern)
    values = np.array([s.hamiltonian[rows, cols] for s in samples], dtype=complex).reshape(len(samples), rows.size)
    extra = [dict(s.metadata, chern_estimate=s.chern_estimate, gap_estimate=s.gap_estimate) for s in samples]
    records = _split_records(spec.n_train, spec.n_test, [s.label for s in samples], extra)
    manifest = {"kind": "chern", "seed": seed, "size": config.size, "generator": _plain(vars(config)),
                "attempted": report.attempted, "discarded": report.discarded,
                "label_preservation": report.preservation_rate}
    arrays = {"h_rows": rows.astype(np.int32), "h_cols": cols.astype(np.int32), "h_values": values}
    return Dataset(manifest, arrays, records)


def gen_fk(spec, seed: int) -> Dataset:
    params = dict(spec.params)
    for key in ("t_prime_classes", "shape"):
        if key in params:
            params[key] = tuple(params[key])
    if spec.n_train % 2 or spec.n_test % 2:
        raise ValueError("FK sets hold equal class counts: n_train and n_test must be even")
    per_train = spec.n_train // 2
    config = FkDatasetConfig(**dict(params, samples_per_class=per_train + spec.n_test // 2))
    pairs = fk_dataset(config, seed)
    train_p = [p for p in pairs if p[0].metadata["index"] < per_train]
    test_p = [p for p in pairs if p[0].metadata["index"] >= per_train]
    ordered = train_p + test_p
    extra = [{"t_prime": inst.t_prime, "mu": inst.mu, "u": inst.u, "temperature": inst.temperature,
              "shape": list(inst.shape)} for inst, _ in ordered]
    records = _split_records(len(train_p), len(test_p), [lab for _, lab in ordered], extra)
    grid = sorted({(round(e["t_prime"], 12), round(e["mu"], 12)) for e in extra})
    manifest = {"kind": "fk", "seed": seed, "generator": _plain(vars(config)),
                "grid": [list(g) for g in grid]}
    return Dataset(manifest, {}, records)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


GENERATORS = {"mnist": gen_mnist, "chern": gen_chern, "fk": gen_fk}


def encode_dataset(ds: Dataset, split: str, encoding: str = "onsite") -> list:
    """(InputEncoding, label) pairs for one split of a stored dataset."""
    kind = ds.manifest["kind"]
    out = []
    for i, rec in enumerate(ds.records):
        if rec["split"] != split:
            continue
        if kind == "mnist":
            x = ds.arrays["pixels"][i]
            enc = InputEncoding.external_ldos(x) if encoding == "external_ldos" else InputEncoding.onsite(x)
        elif kind == "chern":
            n = ds.manifest["size"] ** 2
            h = np.zeros((n, n), complex)
            h[ds.arrays["h_rows"], ds.arrays["h_cols"]] = ds.arrays["h_values"][i]
            enc = InputEncoding.hamiltonian(h)
        else:
            enc = encode_fk(FkInstance(t=1.0, t_prime=rec["t_prime"], mu=rec["mu"], u=rec["u"],
                                       temperature=rec["temperature"], shape=tuple(rec["shape"])))
        out.append((enc, rec["label"]))
    return out


# ---------------------------------------------------------------- evaluators

def _train_config(cfg, params=None):
    tc = replace(cfg.train, seed=cfg.seed)
    if params is not None:
        meta = params.metadata
        tc = replace(tc, **{k: meta[k] for k in ("head", "energy", "broadening", "output_scale") if k in meta})
    return tc


def _evaluator(cfg, tc, interacting: bool):
    if interacting:
        grid = MatsubaraGrid(cfg.matsubara.temperature, cfg.matsubara.n0)
        return MatsubaraEvaluator(grid, replace(cfg.dmft, seed=cfg.seed))
    return RetardedEvaluator(tc)


def response(params, tc, evaluator, encoding) -> float:
    """Score of class 1 (Chern insulator / stripe order) for one input."""
    y = evaluator.forward(params, encoding)[0]
    if tc.head == "cc":
        return cc_probability(float(y), params.metadata["y0"])
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return float(softmax(tc.output_scale * y)[1]) if y.size > 1 else float(y[0])


# ---------------------------------------------------------------- commands

def cmd_gen(cfg) -> dict:
    spec = cfg.dataset
    if spec.kind not in GENERATORS:
        raise cfgmod.ConfigError(f"gen does not support dataset kind {spec.kind!r}")
    ds = GENERATORS[spec.kind](spec, cfg.seed)
    out = Path(cfg.out)
    path = save_dataset(out / "dataset.npz", ds)
    labels = ds.labels
    counts = {str(k): int(np.sum(labels == k)) for k in sorted(set(labels.tolist()))}
    summary = {"path": str(path), "count": len(ds), "class_counts": counts,
               "discard_rate": (ds.manifest["discarded"] / max(ds.manifest["attempted"], 1)
                                if "attempted" in ds.manifest else 0.0)}
    write_json(out / "gen.json", dict(summary, manifest=ds.manifest))
    print(f"wrote {len(ds)} samples to {path}")
    print("class counts: " + ", ".join(f"{k}: {v}" for k, v in counts.items()))
    print(f"discard rate: {summary['discard_rate']:.3f}")
    return summary


def _load_split(cfg):
    ds = load_dataset(cfg.data)
    return (ds, encode_dataset(ds, "train", cfg.dataset.encoding),
            encode_dataset(ds, "test", cfg.dataset.encoding))


def cmd_train(cfg) -> dict:
    ds, train_set, test_set = _load_split(cfg)
    interacting = ds.manifest["kind"] == "fk"
    tc = _train_config(cfg)
    if interacting:
        tc = replace(tc, track_train_accuracy=True)
    params = init_parameters(cfg.architecture.build(), cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    partial = out / "metrics.partial.jsonl"
    result = train(params, train_set, test_set, tc, evaluator=_evaluator(cfg, tc, interacting),
                   metrics_path=partial)
    os.replace(partial, out / "metrics.jsonl")
    os.replace(partial.with_name("metrics.partial.timing.jsonl"), out / "metrics.timing.jsonl")
    save_checkpoint(out / "checkpoint.fnn", result.params)
    atomic_write_bytes(out / "config.yaml", cfg.dump().encode())
    best = result.metrics.best if result.metrics.history else {}
    print(f"best epoch {result.best_epoch}: accuracy {best.get('accuracy', float('nan')):.4f} "
          f"auroc {best.get('auroc', float('nan')):.4f}")
    return {"best_epoch": result.best_epoch, "best": best, "skipped": len(result.skipped)}


def cmd_eval(cfg) -> dict:
    params = load_checkpoint(cfg.checkpoint)
    ds, _, test_set = _load_split(cfg)
    tc = _train_config(cfg, params)
    evaluator = _evaluator(cfg, tc, ds.manifest["kind"] == "fk")
    ys, scores, pred, kept = predict(params, test_set, tc, evaluator)
    report = score_predictions(scores, pred, [test_set[i][1] for i in kept], tc.head)
    out = Path(cfg.out)
    rows = []
    for j, i in enumerate(kept):
        score = scores[j] if np.ndim(scores[j]) == 0 else scores[j][int(pred[j])]
        rows.append((i, test_set[i][1], int(pred[j]), float(score)))
    write_table(out / "scores.tsv", ("index", "label", "prediction", "score"), rows)
    write_json(out / "eval.json", report)
    print(f"accuracy {report['accuracy']:.4f} auroc {report['auroc']:.4f} on {report['count']} samples")
    return report


def sweep_inputs(cfg, value: float, rng) -> list:
    """Fresh inputs at one grid point of the sweep."""
    sw, fixed = cfg.sweep, dict(cfg.sweep.fixed)
    out = []
    for _ in range(sw.samples_per_point):
        if sw.parameter == "kappa":
            size = int(fixed.get("size", 12))
            h = chern_hamiltonian(value, size)
            if sw.disorder:
                gen = ChernGenerationConfig()
                w = [float(rng.uniform(*r)) for r in (gen.w0, gen.w1, gen.w2)]
                h = add_disorder(h, *w, rng.integers(2 ** 63), size=size, allow_wide=True)
            out.append(InputEncoding.hamiltonian(h))
            continue
        u = float(fixed.get("u", 1.0))
        temperature = float(fixed.get("temperature", cfg.matsubara.temperature))
        shape = tuple(fixed.get("shape", (4, 4)))
        jitter = float(fixed.get("mu_jitter", 0.0)) if sw.disorder else 0.0
        if sw.parameter == "t_prime":
            t_prime = value
        else:
            u, t_prime = value, float(fixed.get("t_prime", 0.0))
        mu = half_filling_mu(shape, 1.0, t_prime, temperature) + u / 2 + rng.uniform(-jitter, jitter)
        out.append(encode_fk(FkInstance(t=1.0, t_prime=t_prime, mu=mu, u=u, temperature=temperature,
                                        shape=shape)))
    return out


def cmd_sweep(cfg) -> dict:
    params = load_checkpoint(cfg.checkpoint)
    tc = _train_config(cfg, params)
    evaluator = _evaluator(cfg, tc, cfg.sweep.parameter != "kappa")
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for value in np.linspace(cfg.sweep.start, cfg.sweep.stop, cfg.sweep.num):
        vals = []
        for enc in sweep_inputs(cfg, float(value), rng):
            try:
                vals.append(response(params, tc, evaluator, enc))
            except SampleSkipped as exc:
                log.warning("sweep point %.4g skipped: %s", value, exc)
        rows.append((float(value), float(np.mean(vals)) if vals else float("nan"),
                     float(np.std(vals)) if vals else float("nan")))
    path = write_table(Path(cfg.out) / "sweep.tsv", ("parameter", "mean", "std"), rows)
    crossing = crossing_point([r[0] for r in rows], [r[1] for r in rows])
    write_json(Path(cfg.out) / "sweep.json", {"parameter": cfg.sweep.parameter, "crossing": crossing,
                                              "table": str(path)})
    print(f"wrote {len(rows)} rows to {path}; response crosses 1/2 at {crossing}")
    return {"rows": rows, "crossing": crossing}


def crossing_point(xs, ys, level: float = 0.5):
    """First linear-interpolated crossing of ``level``, or None."""
    for (x0, y0), (x1, y1) in zip(zip(xs, ys), zip(xs[1:], ys[1:])):
        if np.isfinite(y0) and np.isfinite(y1) and (y0 - level) * (y1 - level) <= 0 and y0 != y1:
            return float(x0 + (level - y0) * (x1 - x0) / (y1 - y0))
    return None


def cmd_diagnose(cfg) -> dict:
    params = load_checkpoint(cfg.checkpoint)
    ds = load_dataset(cfg.data)
    probe = encode_dataset(ds, "test", cfg.dataset.encoding) or encode_dataset(ds, "train", cfg.dataset.encoding)
    probe = probe[:cfg.diagnose.probe]
    if not probe:
        raise cfgmod.ConfigError("diagnose needs at least one probe sample")
    tc = _train_config(cfg, params)
    interacting = ds.manifest["kind"] == "fk"
    evaluator = _evaluator(cfg, tc, interacting)
    out = Path(cfg.out)
    tables = {}

    profiles = []
    for enc, label in probe:
        try:
            y, cache = evaluator.forward(params, enc, retain=True)
        except SampleSkipped:
            continue
        _, seed = loss_and_grad_seed(y, label, loss=tc.loss, head=tc.head, y0=params.metadata.get("y0"),
                                     scale=tc.output_scale)
        grads = evaluator.backward(cache, seed)
        try:
            profiles.append(gradient_layer_profile(grads, params.intra_masks, params.inter_masks))
        except ValueError as exc:
            log.warning("gradient profile skipped: %s", exc)
    if profiles:
        mean = np.mean(profiles, axis=0)
        tables["gradient_profile"] = str(write_table(
            out / "gradient_profile.tsv", ("layer", "relative_mean_abs_gradient"),
            [(l + 1, v) for l, v in enumerate(mean)]))

    onsite = [(enc, lab) for enc, lab in probe if enc.variant == "onsite"]
    fermi = cfg.diagnose.fermi_energy
    if onsite:
        mi = [layer_mutual_information(params, enc, fermi) for enc, _ in onsite]
        tables["mutual_information"] = str(write_table(
            out / "mutual_information.tsv", ("sample", "label", "input_output_mi"),
            [(i, lab, v) for i, ((_, lab), v) in enumerate(zip(onsite, mi))]))
        corr = system_correlation(assemble(params, onsite[0][0]), fermi)
        flow = logic_flow_transform(corr)
        before, after = neuron_output_information(corr), neuron_output_information(flow.transformed)
        rows = []
        for l in range(params.depth + 1):
            for k, site in enumerate(corr.sites(l)):
                rows.append((l, k, before[site], after[site]))
        tables["logic_flow"] = str(write_table(
            out / "logic_flow.tsv", ("layer", "neuron", "mi_with_output", "mi_with_output_transformed"), rows))
        h0 = np.asarray(onsite[0][0].h0)
        evals, ingap = spectral_ingap_probe(np.diag(h0) if h0.ndim == 1 else h0)
        tables["spectrum"] = str(write_table(out / "spectrum.tsv", ("index", "energy"), enumerate(evals)))
    elif interacting:
        h0 = np.asarray(probe[0][0].h0)
        evals, ingap = spectral_ingap_probe(h0)
        tables["spectrum"] = str(write_table(out / "spectrum.tsv", ("index", "energy"), enumerate(evals)))
    write_json(out / "diagnose.json", {"tables": tables, "probe": len(probe)})
    for name, path in tables.items():
        print(f"{name}: {path}")
    return tables


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fnn", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML run file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = cfgmod.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    cfg.validate(args.command)
    return HANDLERS[args.command](cfg)


def main(argv=None) -> int:
    try:
        run(argv)
    except (cfgmod.ConfigError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"fnn: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
