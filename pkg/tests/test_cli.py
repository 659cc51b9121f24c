"""End-to-end command line runs on a tiny corpus."""

import hashlib
import json

import numpy as np
import pytest

from craftbench.cli import main
from craftbench.imageio import read_float_image, read_ppm

PAIRS = [
    ["bicycle", "motorcycle", "vehicle"],
    ["cat", "dog", "animal"],
    ["pizza", "donut", "food"],
]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """One generated dataset plus one attack run, shared by the read-only tests."""
    root = tmp_path_factory.mktemp("corpus")
    pairs = root / "pairs.json"
    pairs.write_text(json.dumps(PAIRS))
    ds = root / "ds"
    assert main(["gen-dataset", "--out", str(ds), "--per-pair", "2",
                 "--seed", "5", "--pairs-file", str(pairs)]) == 0
    adv = root / "adv"
    assert main(["attack", "--dataset", str(ds), "--out", str(adv),
                 "--method", "craft", "--iters", "40", "--seed", "5"]) == 0
    return root, ds, adv


def _tree_digest(path):
    h = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_version_and_usage_errors(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    with pytest.raises(SystemExit) as e:
        main(["no-such-command"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["gen-dataset", "--out", "x", "--per-pair", "0"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["attack", "--dataset", "x", "--out", "y", "--method", "bogus"])
    assert e.value.code == 2
    capsys.readouterr()


def test_gen_dataset_deterministic(tmp_path, capsys):
    pairs = tmp_path / "pairs.json"
    pairs.write_text(json.dumps(PAIRS[:1]))
    args = ["gen-dataset", "--per-pair", "2", "--seed", "9",
            "--pairs-file", str(pairs)]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    out = capsys.readouterr().out
    assert "wrote 2 samples" in out
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_attack_manifest_and_outputs(corpus):
    root, ds, adv = corpus
    manifest = json.loads((adv / "manifest.json").read_text())
    assert manifest["method"] == "craft"
    assert manifest["attack_config"]["iterations"] == 40
    assert manifest["attack_config"]["epsilon"] == pytest.approx(16 / 255)
    # alpha defaults to a quarter of the budget
    assert manifest["attack_config"]["alpha"] == pytest.approx(4 / 255)
    assert manifest["dataset"]["path"] == str(ds)
    assert len(manifest["dataset"]["sha256"]) == 64
    assert manifest["phases"]["attack_seconds"] > 0
    assert manifest["failures"] == {}
    names = {p.name for p in adv.iterdir()}
    dataset = json.loads((ds / "dataset.json").read_text())
    for s in dataset["samples"]:
        assert f"{s['id']}.cvf" in names
        assert f"{s['id']}.json" in names


def test_attack_respects_budget(corpus):
    root, ds, adv = corpus
    dataset = json.loads((ds / "dataset.json").read_text())
    s = dataset["samples"][0]
    clean = read_float_image(ds / s["image_path"])
    out = read_float_image(adv / f"{s['id']}.cvf")
    delta = out.astype(np.float64) - clean.astype(np.float64)
    assert np.abs(delta).max() <= 16 / 255 + 1e-6
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_eval_report_and_heatmap(corpus, tmp_path, capsys):
    root, ds, adv = corpus
    report = tmp_path / "report.json"
    heat = tmp_path / "heat.csv"
    assert main(["eval", "--dataset", str(ds), "--adv", str(adv),
                 "--out", str(report), "--heatmap", str(heat)]) == 0
    out = capsys.readouterr().out
    assert "CTSR-4" in out
    rep = json.loads(report.read_text())
    assert rep["n"] == 6
    assert set(rep["rates"]) == {"ic", "od", "rc", "ol"}
    assert 0.0 <= rep["ctsr4"] <= rep["ctsr3"] <= 1.0
    assert len(rep["per_pair"]) == 3
    assert len(rep["heatmap"]["matrix"]) == 11
    lines = heat.read_text().strip().splitlines()
    assert len(lines) == 12

    # a second evaluation of the same inputs is byte-identical
    report2 = tmp_path / "report2.json"
    assert main(["eval", "--dataset", str(ds), "--adv", str(adv),
                 "--out", str(report2)]) == 0
    capsys.readouterr()
    assert report.read_bytes() == report2.read_bytes()


def test_eval_missing_adv_fails(corpus, tmp_path, capsys):
    root, ds, _ = corpus
    code = main(["eval", "--dataset", str(ds), "--adv", str(tmp_path),
                 "--out", str(tmp_path / "r.json")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_sweep_outputs(corpus, tmp_path, capsys):
    root, ds, _ = corpus
    out = tmp_path / "sw"
    assert main(["sweep", "--dataset", str(ds), "--out", str(out),
                 "--eps-list", "4/255,16/255", "--iters-list", "10",
                 "--seed", "5"]) == 0
    capsys.readouterr()
    lines = (out / "sweep.csv").read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0] == "eps,alpha,iters,n,ic,od,rc,ol,avg,ctsr4,ctsr3"
    assert (out / "cell_0_0.json").exists() and (out / "cell_1_0.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["eps_list"] == [pytest.approx(4 / 255), pytest.approx(16 / 255)]


def test_ablate_outputs(corpus, tmp_path, capsys):
    root, ds, _ = corpus
    out = tmp_path / "ab"
    assert main(["ablate", "--dataset", str(ds), "--out", str(out),
                 "--seed", "5"]) == 0
    capsys.readouterr()
    lines = (out / "ablation.csv").read_text().strip().splitlines()
    assert len(lines) == 7
    cells = sorted(p.name for p in out.glob("cell_*.json"))
    assert len(cells) == 6
    assert "cell_rtl-on_all.json" in cells and "cell_rtl-off_none.json" in cells


def test_render_panel(corpus, tmp_path, capsys):
    root, ds, adv = corpus
    dataset = json.loads((ds / "dataset.json").read_text())
    sid = dataset["samples"][0]["id"]
    out = tmp_path / "panel.ppm"
    assert main(["render", "--adv", str(adv), "--sample", sid,
                 "--out", str(out)]) == 0
    capsys.readouterr()
    img = read_ppm(out)
    assert img.shape == (96, 288, 3)


def test_render_unknown_sample(corpus, tmp_path, capsys):
    root, ds, adv = corpus
    code = main(["render", "--adv", str(adv), "--sample", "nope",
                 "--out", str(tmp_path / "p.ppm")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_render_null_attack_midgray_delta(tmp_path, capsys):
    """With the identity attack the difference panel is uniform mid-gray."""
    pairs = tmp_path / "pairs.json"
    pairs.write_text(json.dumps(PAIRS[:1]))
    ds = tmp_path / "ds"
    assert main(["gen-dataset", "--out", str(ds), "--per-pair", "1",
                 "--seed", "3", "--pairs-file", str(pairs)]) == 0
    adv = tmp_path / "adv"
    assert main(["attack", "--dataset", str(ds), "--out", str(adv),
                 "--method", "none"]) == 0
    sid = json.loads((ds / "dataset.json").read_text())["samples"][0]["id"]
    out = tmp_path / "p.ppm"
    assert main(["render", "--adv", str(adv), "--sample", sid,
                 "--out", str(out)]) == 0
    capsys.readouterr()
    img = read_ppm(out)
    third = img[:, 192:]
    assert np.all(third == third[0, 0])
    assert abs(int(third[0, 0, 0]) - 128) <= 1


def test_seed_env_fallback(tmp_path, capsys, monkeypatch):
    pairs = tmp_path / "pairs.json"
    pairs.write_text(json.dumps(PAIRS[:1]))
    monkeypatch.setenv("CRAFTBENCH_SEED", "9")
    assert main(["gen-dataset", "--out", str(tmp_path / "env"),
                 "--per-pair", "2", "--pairs-file", str(pairs)]) == 0
    monkeypatch.delenv("CRAFTBENCH_SEED")
    assert main(["gen-dataset", "--out", str(tmp_path / "flag"),
                 "--per-pair", "2", "--seed", "9",
                 "--pairs-file", str(pairs)]) == 0
    capsys.readouterr()
    assert _tree_digest(tmp_path / "env") == _tree_digest(tmp_path / "flag")


def test_attack_jobs_matches_serial(corpus, tmp_path, capsys):
    root, ds, serial_adv = corpus
    par = tmp_path / "par"
    assert main(["attack", "--dataset", str(ds), "--out", str(par),
                 "--method", "craft", "--iters", "40", "--seed", "5",
                 "--jobs", "2"]) == 0
    capsys.readouterr()
    for p in serial_adv.glob("*.cvf"):
        assert (par / p.name).read_bytes() == p.read_bytes()
