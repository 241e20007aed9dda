import json

import numpy as np
import pytest
import yaml
from hypothesis import given, strategies as st

from fnn import cli
from fnn.config import ConfigError, RunConfig, from_dict, load, parse
from fnn.datasets.mnist import write_idx
from fnn.datasets.store import load_dataset
from fnn.model import ArchitectureSpec, init_parameters, load_checkpoint, save_checkpoint


def write_config(tmp_path, name="run.yaml", **sections):
    out = tmp_path / "run"
    data = {"seed": 3, "out": str(out), "data": str(out / "dataset.npz"),
            "checkpoint": str(out / "checkpoint.fnn"),
            "dataset": {"kind": "chern", "n_train": 8, "n_test": 4, "params": {"size": 6}},
            "architecture": {"input_size": 36, "layer_sizes": [6, 1]},
            "train": {"head": "cc", "learning_rate": 0.05, "broadening": 0.05, "epochs": 2, "batch_size": 4},
            "sweep": {"parameter": "kappa", "start": 0.1, "stop": 1.0, "num": 4, "fixed": {"size": 6}},
            "diagnose": {"probe": 2}}
    for key, value in sections.items():
        data[key] = value
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path, out


def read_tsv(path):
    lines = path.read_text().splitlines()
    return lines[0].split("\t"), [line.split("\t") for line in lines[1:]]


# -- configuration -----------------------------------------------------------

def test_roundtrip_defaults():
    cfg = parse("seed: 1\n")
    assert parse(cfg.dump()) == cfg
    assert cfg.train.learning_rate == 0.005 and cfg.matsubara.n0 == 20


@given(st.integers(0, 10 ** 6), st.floats(1e-4, 1.0), st.integers(1, 64),
       st.sampled_from(["ldos", "cc"]), st.sampled_from(["kappa", "t_prime", "u"]),
       st.lists(st.integers(1, 50), min_size=1, max_size=4), st.floats(0.01, 1.0))
def test_roundtrip_property(seed, lr, batch, head, parameter, sizes, mixing):
    cfg = from_dict({"seed": seed, "train": {"learning_rate": lr, "batch_size": batch, "head": head},
                     "sweep": {"parameter": parameter, "fixed": {"shape": [4, 4]}},
                     "architecture": {"layer_sizes": sizes},
                     "dmft": {"mixing": mixing, "ef_bracket": [-3.0, 3.0]}})
    again = parse(cfg.dump())
    assert again == cfg
    assert parse(again.dump()).dump() == cfg.dump()


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        parse("out: x\n")
    with pytest.raises(ConfigError):
        parse("seed: 1\nbogus: 2\n")
    with pytest.raises(ConfigError):
        parse("seed: 1\ntrain: {momentum: 0.9}\n")
    with pytest.raises(ConfigError):
        parse("seed: 1\ntrain: {learning_rate: -1}\n")
    with pytest.raises(ConfigError):
        parse("seed: 1\ndataset: {kind: cifar}\n")
    with pytest.raises(ConfigError):
        parse("seed: 1\nsweep: {parameter: mu}\n")
    with pytest.raises(ConfigError):
        parse("seed: 1\n").validate("serve")


def test_validate_paths(tmp_path):
    cfg = parse(f"seed: 1\ndata: {tmp_path / 'missing.npz'}\n")
    with pytest.raises(ConfigError, match="data"):
        cfg.validate("train")
    with pytest.raises(ConfigError, match="checkpoint"):
        parse("seed: 1\n").validate("sweep")
    with pytest.raises(ConfigError, match="dataset.path"):
        parse("seed: 1\ndataset: {kind: mnist}\n").validate("gen")
    assert parse("seed: 1\ndataset: {kind: chern}\n").validate("gen")


def test_main_reports_errors(tmp_path, capsys):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 1\n")
    assert cli.main(["train", "--config", str(path)]) == 2
    assert "fnn: error:" in capsys.readouterr().err
    assert load(path).seed == 1


# -- commands ----------------------------------------------------------------

@pytest.fixture(scope="module")
def chern_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("chern")
    path, out = write_config(tmp)
    for command in ("gen", "train", "eval", "sweep", "diagnose"):
        assert cli.main([command, "--config", str(path)]) == 0
    return path, out


def test_gen_outputs(chern_run):
    _, out = chern_run
    ds = load_dataset(out / "dataset.npz")
    assert len(ds) == 12 and ds.manifest["kind"] == "chern"
    assert [r["split"] for r in ds.records].count("test") == 4
    summary = json.loads((out / "gen.json").read_text())
    assert summary["class_counts"] == {"0": 6, "1": 6}
    assert 0 <= summary["discard_rate"] < 1


def test_train_outputs(chern_run):
    path, out = chern_run
    records = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2]
    assert all(set(r) == {"epoch", "loss", "accuracy", "auroc"} for r in records)
    assert (out / "metrics.timing.jsonl").exists() and not (out / "metrics.partial.jsonl").exists()
    assert parse((out / "config.yaml").read_text()) == load(path)
    assert load_checkpoint(out / "checkpoint.fnn").metadata["head"] == "cc"


def test_eval_outputs(chern_run):
    _, out = chern_run
    header, rows = read_tsv(out / "scores.tsv")
    assert header == ["index", "label", "prediction", "score"] and len(rows) == 4
    report = json.loads((out / "eval.json").read_text())
    assert report["count"] == 4 and 0 <= report["auroc"] <= 1


def test_sweep_outputs(chern_run):
    _, out = chern_run
    header, rows = read_tsv(out / "sweep.tsv")
    assert header == ["parameter", "mean", "std"]
    assert [float(r[0]) for r in rows] == pytest.approx([0.1, 0.4, 0.7, 1.0])
    assert all(0 <= float(r[1]) <= 1 for r in rows)
    assert "crossing" in json.loads((out / "sweep.json").read_text())


def test_diagnose_outputs(chern_run):
    _, out = chern_run
    header, rows = read_tsv(out / "gradient_profile.tsv")
    assert len(rows) == 2 and float(rows[-1][1]) == 1.0
    _, spectrum = read_tsv(out / "spectrum.tsv")
    assert len(spectrum) == 36
    _, flow = read_tsv(out / "logic_flow.tsv")
    assert len(flow) == 36 + 6 + 1
    _, mi = read_tsv(out / "mutual_information.tsv")
    assert len(mi) == 2 and all(float(r[2]) >= -1e-10 for r in mi)


def test_rerun_is_byte_identical(chern_run, tmp_path):
    path, out = chern_run
    again = tmp_path / "again"
    assert cli.main(["gen", "--config", str(path), "--out", str(again)]) == 0
    cfg = load(path)
    cfg_path = tmp_path / "again.yaml"
    data = cfg.to_dict()
    data.update(out=str(again), data=str(again / "dataset.npz"), checkpoint=str(again / "checkpoint.fnn"))
    cfg_path.write_text(yaml.safe_dump(data))
    for command in ("train", "eval", "sweep"):
        assert cli.main([command, "--config", str(cfg_path)]) == 0
    for name in ("metrics.jsonl", "checkpoint.fnn", "scores.tsv", "eval.json", "sweep.tsv"):
        assert (again / name).read_bytes() == (out / name).read_bytes(), name
    assert load_dataset(again / "dataset.npz").records == load_dataset(out / "dataset.npz").records


def test_seed_override_changes_data(chern_run, tmp_path):
    path, out = chern_run
    assert cli.main(["gen", "--config", str(path), "--out", str(tmp_path), "--seed", "4"]) == 0
    a = load_dataset(out / "dataset.npz").arrays["h_values"]
    b = load_dataset(tmp_path / "dataset.npz").arrays["h_values"]
    assert a.shape != b.shape or not np.array_equal(a, b)


def test_empty_gen(tmp_path):
    path, out = write_config(tmp_path, dataset={"kind": "chern", "n_train": 0, "n_test": 0, "params": {"size": 6}})
    assert cli.main(["gen", "--config", str(path)]) == 0
    ds = load_dataset(out / "dataset.npz")
    assert len(ds) == 0 and ds.manifest["count"] == 0 and ds.manifest["kind"] == "chern"


def test_fk_gen_lists_grid(tmp_path):
    path, out = write_config(tmp_path, dataset={"kind": "fk", "n_train": 4, "n_test": 2})
    assert cli.main(["gen", "--config", str(path)]) == 0
    ds = load_dataset(out / "dataset.npz")
    assert len(ds) == 6 and len(ds.manifest["grid"]) == 6
    assert sorted(ds.labels.tolist()) == [0, 0, 0, 1, 1, 1]
    assert cli.main(["gen", "--config", str(write_config(
        tmp_path, "odd.yaml", dataset={"kind": "fk", "n_train": 3, "n_test": 2})[0])]) == 2


def test_mnist_gen(tmp_path):
    raw = tmp_path / "mnist"
    raw.mkdir()
    rng = np.random.default_rng(0)
    for prefix, n in (("train", 6), ("t10k", 3)):
        write_idx(raw / f"{prefix}-images-idx3-ubyte", rng.integers(0, 256, (n, 28, 28), dtype=np.uint8))
        write_idx(raw / f"{prefix}-labels-idx1-ubyte", rng.integers(0, 10, n, dtype=np.uint8))
    path, out = write_config(tmp_path, dataset={"kind": "mnist", "path": str(raw), "n_train": 5, "n_test": 2,
                                                "encoding": "external_ldos"})
    assert cli.main(["gen", "--config", str(path)]) == 0
    ds = load_dataset(out / "dataset.npz")
    assert ds.arrays["pixels"].shape == (7, 784)
    encoded = cli.encode_dataset(ds, "test", "external_ldos")
    assert len(encoded) == 2 and encoded[0][0].variant == "external_ldos"


def constant_checkpoint(path, input_size=36):
    params = init_parameters(ArchitectureSpec(input_size, [4, 2]), 0)
    for a in params.intra + params.inter:
        a[:] = 0
    params.metadata.update(head="ldos", energy=0.0, broadening=0.05, output_scale=1.0)
    return save_checkpoint(path, params)


def test_constant_classifier_sweep(tmp_path):
    path, out = write_config(tmp_path, architecture={"input_size": 36, "layer_sizes": [4, 2]})
    out.mkdir()
    constant_checkpoint(out / "checkpoint.fnn")
    assert cli.main(["sweep", "--config", str(path)]) == 0
    _, rows = read_tsv(out / "sweep.tsv")
    assert all(float(r[1]) == 0.5 and float(r[2]) == 0.0 for r in rows)


def test_decoupled_model_has_zero_mi(chern_run, tmp_path):
    path, out = chern_run
    params = load_checkpoint(out / "checkpoint.fnn")
    params.inter[0][:] = 0
    save_checkpoint(tmp_path / "decoupled.fnn", params)
    data = load(path).to_dict()
    data.update(out=str(tmp_path / "diag"), checkpoint=str(tmp_path / "decoupled.fnn"))
    cfg_path = tmp_path / "d.yaml"
    cfg_path.write_text(yaml.safe_dump(data))
    assert cli.main(["diagnose", "--config", str(cfg_path)]) == 0
    _, mi = read_tsv(tmp_path / "diag" / "mutual_information.tsv")
    assert all(abs(float(r[2])) < 1e-10 for r in mi)


def test_crossing_point():
    assert cli.crossing_point([0.0, 1.0, 2.0], [0.1, 0.3, 0.9]) == pytest.approx(4 / 3)
    assert cli.crossing_point([0.0, 1.0], [0.1, 0.2]) is None


def test_eval_rejects_version_mismatch(chern_run, tmp_path):
    path, out = chern_run
    raw = bytearray((out / "checkpoint.fnn").read_bytes())
    raw[4] += 1
    (tmp_path / "bad.fnn").write_bytes(bytes(raw))
    data = load(path).to_dict()
    data.update(out=str(tmp_path), checkpoint=str(tmp_path / "bad.fnn"))
    cfg_path = tmp_path / "bad.yaml"
    cfg_path.write_text(yaml.safe_dump(data))
    assert cli.main(["eval", "--config", str(cfg_path)]) == 2


def test_runconfig_requires_seed():
    with pytest.raises(TypeError):
        RunConfig()
