import json

import numpy as np
import pytest
from PIL import Image

from acnet.cli import main
from acnet.retrieval import load_embeddings

TINY = dict(side=32, n_classes=4, n_unseen=2, per_class_sketches=6, per_class_photos=6, batch_size=4,
            base_channels=2, n_res_blocks=1, encoder_channels=[4, 8], embedding_dim=8, epochs=1,
            heldout_fraction=0.2, chance_trials=5, map_ks=["all", 5], prec_ks=[5])


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["train", "--config", str(cfg), "--seed", "3", "--out", str(root / "run")]) == 0
    return root / "run"


def test_gen_data_default_benchmark_is_reproducible(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-data", "--out", str(tmp_path / "b")]) == 0
    ma = (tmp_path / "a" / "manifest.tsv").read_bytes()
    mb = (tmp_path / "b" / "manifest.tsv").read_bytes()
    assert ma == mb
    rows = ma.decode("utf-8").splitlines()
    assert len(rows) == 12 * (40 + 40)
    rel = rows[-1].split("\t")[0]
    assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    spec = json.loads((tmp_path / "a" / "dataset_spec.json").read_text())
    assert spec["seed"] == 0


def test_gen_data_with_spec_file(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_classes": 3, "per_class_sketches": 2, "per_class_photos": 1, "side": 16,
                                "rotation_range": 0.0}))
    assert main(["gen-data", "--config", str(spec), "--seed", "4", "--out", str(tmp_path / "d")]) == 0
    rows = (tmp_path / "d" / "manifest.tsv").read_text().splitlines()
    assert len(rows) == 9
    with Image.open(tmp_path / "d" / rows[0].split("\t")[0]) as im:
        assert im.size == (16, 16) and im.mode == "RGB"


def test_gen_data_rejects_unknown_field(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"colour": "red"}))
    assert main(["gen-data", "--config", str(spec), "--out", str(tmp_path / "d")]) == 1
    assert "colour" in capsys.readouterr().err


def test_invalid_lambda_exits_nonzero_with_message(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({**TINY, "lambda": -2, "epochs": 0}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1
    err = capsys.readouterr().err
    assert "lam must be >= 0" in err and "epochs must be >= 1" in err
    assert not (tmp_path / "r").exists()


def test_missing_config_file(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "r")]) == 1
    assert "not found" in capsys.readouterr().err


def test_train_writes_run_directory(trained_run):
    cfg = json.loads((trained_run / "config.json").read_text())
    assert cfg["seed"] == 3 and cfg["lam"] == 10.0
    lines = (trained_run / "trainlog.jsonl").read_text().splitlines()
    kinds = {json.loads(line)["kind"] for line in lines}
    assert kinds == {"step", "epoch"}
    assert (trained_run / "checkpoints" / "final.ckpt").is_file()
    assert (trained_run / "checkpoints" / "epoch_001.ckpt").is_file()
    report = json.loads((trained_run / "reports" / "train_unseen.json").read_text())
    assert {"mAP@all", "chance_mAP@all", "Prec@5"} <= set(report)


def test_eval_matches_train_report(trained_run, capsys):
    assert main(["eval", str(trained_run)]) == 0
    printed = json.loads(capsys.readouterr().out)
    train = json.loads((trained_run / "reports" / "train_unseen.json").read_text())
    assert printed == train
    q = load_embeddings(trained_run / "embeddings" / "unseen_queries.emb")
    g = load_embeddings(trained_run / "embeddings" / "unseen_gallery.emb")
    assert len(q) == 2 * 6 and len(g) == 2 * 6
    assert set(q.domains.tolist()) == {"sketch"} and set(g.domains.tolist()) == {"photo"}
    assert np.allclose(np.linalg.norm(q.vectors, axis=1), 1.0, atol=1e-5)


def test_eval_custom_k_and_seen_split(trained_run, capsys):
    assert main(["eval", str(trained_run), "--split", "seen", "--k", "3", "all"]) == 0
    m = json.loads(capsys.readouterr().out)
    assert {"mAP@all", "mAP@3", "Prec@3"} <= set(m)
    assert (trained_run / "reports" / "eval_seen.csv").is_file()


def test_eval_rejects_bad_k(trained_run, capsys):
    assert main(["eval", str(trained_run), "--k", "0"]) == 1
    assert "--k" in capsys.readouterr().err


def test_eval_missing_checkpoint(tmp_path, capsys):
    assert main(["eval", str(tmp_path)]) == 1
    assert "no checkpoint" in capsys.readouterr().err


def test_eval_earlier_checkpoint(trained_run, capsys):
    assert main(["eval", str(trained_run), "--checkpoint", "epoch_001.ckpt"]) == 0
    m = json.loads(capsys.readouterr().out)
    assert 0.0 <= m["mAP@all"] <= 1.0


def test_hash_eval_reports_side_by_side(trained_run, capsys):
    assert main(["hash-eval", str(trained_run), "--bits", "64", "--seed", "1"]) == 0
    m = json.loads(capsys.readouterr().out)
    for key in ("hash64_mAP@all", "float_mAP@all", "chance_mAP@all"):
        assert 0.0 <= m[key] <= 1.0
    assert m["bits"] == 64 and m["projection_seed"] == 1
    assert (trained_run / "reports" / "hash64_unseen.json").is_file()


def test_synth_dump_writes_triples(trained_run, tmp_path):
    out = tmp_path / "synth"
    assert main(["synth-dump", str(trained_run), "--n", "3", "--out", str(out)]) == 0
    files = sorted(out.iterdir())
    assert len(files) == 3
    with Image.open(files[0]) as im:
        assert im.size == (3 * 32, 32)


def test_synth_dump_zero_is_noop(trained_run, tmp_path):
    out = tmp_path / "empty"
    assert main(["synth-dump", str(trained_run), "--n", "0", "--out", str(out)]) == 0
    assert out.is_dir() and not any(out.iterdir())


def test_synth_dump_negative_rejected(trained_run, capsys):
    assert main(["synth-dump", str(trained_run), "--n", "-1"]) == 1
    assert "--n" in capsys.readouterr().err


def test_ablate_custom_grid(tiny_config, tmp_path, capsys):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"lam": [1.0, 5.0]}))
    assert main(["ablate", "--config", str(tiny_config), "--grid", str(grid), "--out", str(tmp_path / "g")]) == 0
    assert "2 cells, 0 failed" in capsys.readouterr().out
    rows = json.loads((tmp_path / "g" / "grid.json").read_text())
    assert [r["cell"] for r in rows] == ["lam=1.0", "lam=5.0"]


def test_ablate_reports_failed_cells(tiny_config, tmp_path, capsys):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"ok": {}, "bad": {"gamma": -1}}))
    assert main(["ablate", "--config", str(tiny_config), "--grid", str(grid), "--out", str(tmp_path / "g")]) == 1
    assert "1 failed" in capsys.readouterr().out


def test_ablate_toggle_preset_runs(tiny_config, tmp_path):
    assert main(["ablate", "--config", str(tiny_config), "--grid", "toggles", "--out", str(tmp_path / "t4")]) == 0
    rows = json.loads((tmp_path / "t4" / "grid.json").read_text())
    assert [r["cell"] for r in rows] == ["norm_baseline", "adv_cha", "adv_cha_ide", "adv_cha_sketch", "full"]
    assert all(r["status"] == "ok" for r in rows)


def test_unknown_command_exits_with_usage():
    with pytest.raises(SystemExit) as exc:
        main(["paint"])
    assert exc.value.code == 2
