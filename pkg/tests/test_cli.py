from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from streetsynth.cli import main
from streetsynth.graph import load_graph
from streetsynth.vq import load_index_field


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("synth-city", "--out-dir", d / "city", "--seed", 2, "--cells", 16) == 0
    assert run("ingest", "--overpass", d / "city/roads.json", "--region-file", d / "city/region.json",
               "--out", d / "graph.json") == 0
    assert run("prepare", "--graph", d / "graph.json", "--land", d / "city/land.pgm", "--out-dir", d / "prep") == 0
    assert run("train-vq", "--manifest", d / "prep/manifest.json", "--k", 8, "--max-iters", 5,
               "--out", d / "cb.sgc") == 0
    return d


def test_ingest_matches_the_generated_truth(small_run):
    truth = load_graph(small_run / "city/truth.json")
    g = load_graph(small_run / "graph.json")
    assert g.n_edges == truth.n_edges
    # vertices outside the crop are clipped to its border, interior ones survive unchanged
    side = g.frame["cells_x"] * 1222.992452 / 16
    inside = truth.vertices[((truth.vertices > 0) & (truth.vertices < side)).all(axis=1)]
    dist = np.abs(inside[:, None] - g.vertices[None]).max(axis=2).min(axis=1)
    assert dist.max() < 1e-6


def test_prepare_writes_manifest(small_run):
    m = json.loads((small_run / "prep/manifest.json").read_text())
    assert m["cells"] == [16, 16] and m["pixels"] == [256, 256]
    assert all((small_run / "prep" / f).exists() for f in m["files"].values())


def test_train_generate_extract_metrics(small_run):
    d = small_run
    assert run("train-index", "--manifest", d / "prep/manifest.json", "--codebook", d / "cb.sgc",
               "--set", "embed_dim=8", "--set", "heads=2", "--set", "window=3", "--set", "ffn_dim=16",
               "--set", "steps=3", "--set", "batch_size=2", "--set", "warmup_steps=1",
               "--out", d / "model.sgm") == 0
    assert (d / "model.loss.csv").read_text().startswith("step,")
    assert run("generate", "--model", d / "model.sgm", "--codebook", d / "cb.sgc", "--density",
               d / "prep/density.sgr", "--p1", d / "prep/p1.sgr", "--land", d / "prep/land.pgm",
               "--rows", 6, "--cols", 5, "--out", d / "idx.sgi") == 0
    field, K = load_index_field(d / "idx.sgi")
    assert field.shape == (6, 5) and K == 8 and field.max() < 8
    assert run("extract", "--index", d / "idx.sgi", "--codebook", d / "cb.sgc", "--min-component", 0,
               "--out", d / "gen.json") == 0
    load_graph(d / "gen.json").check()
    assert run("metrics", "--graph", d / "graph.json", "--land", d / "prep/land.pgm", "--out-dir", d / "m") == 0
    assert run("metrics-compare", d / "m", d / "m", "--out-dir", d / "cmp") == 0
    assert json.loads((d / "cmp/distances.json").read_text())["circuity"] == 0.0
    assert run("render", "--graph", d / "graph.json", "--out", d / "g.svg") == 0
    assert (d / "g.svg").read_text().rstrip().endswith("</svg>")


def test_unknown_config_key_exits_2(small_run, capsys):
    d = small_run
    code = run("train-index", "--manifest", d / "prep/manifest.json", "--codebook", d / "cb.sgc",
               "--set", "d_model=8", "--out", d / "never.sgm")
    assert code == 2
    assert "d_model" in capsys.readouterr().err
    assert not (d / "never.sgm").exists()


def test_k_mismatch_exits_1(small_run, capsys):
    d = small_run
    assert run("train-index", "--manifest", d / "prep/manifest.json", "--codebook", d / "cb.sgc",
               "--set", "K=16", "--out", d / "never.sgm") == 1
    assert "ConfigMismatch" in capsys.readouterr().err


def test_missing_input_exits_1(tmp_path):
    assert run("render", "--graph", tmp_path / "missing.json", "--out", tmp_path / "x.svg") == 1


def test_bad_arguments_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["generate"])
    assert exc.value.code == 2


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "streetsynth.cli", "synth-city", "--out-dir", str(tmp_path),
                          "--cells", "4"], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "roads.json").exists()
