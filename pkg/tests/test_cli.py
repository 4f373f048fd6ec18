import hashlib
import os

import numpy as np
import pytest

from hierllp.cli import derive_sizes, main
from hierllp.datasets import load_dataset


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small end-to-end workspace: dataset, bags, config file."""
    root = tmp_path_factory.mktemp("cli")
    ds_path = root / "toy.llpds"
    assert main(["generate", "--seed", "0", "--classes", "6", "--sizes", "2,3,6",
                 "--n-per-class", "20", "--dim", "8", "--coarse-sep", "6.0",
                 "--fine-sep", "1.0", "--noise", "0.4",
                 "--out", str(ds_path)]) == 0
    bags_path = root / "toy.llpbags"
    assert main(["make-bags", "--dataset", str(ds_path), "--seed", "1",
                 "--out", str(bags_path)]) == 0
    cfg_path = root / "exp.cfg"
    cfg_path.write_text(
        "# toy experiment\n"
        "dataset = toy.llpds\n"
        "manifest = toy.llpbags\n"
        "out_dir = run\n"
        "epochs = 2\n"
        "layers = 3\n"
        "n_atoms = 2\n"
        "d_feat = 8\n"
        "hidden = 12\n"
        "lambda_hidden = 6\n"
        "masks = coarse,medium\n"
        "activation = sparsemax\n"
        "dictionary = on\n")
    return root


def test_derive_sizes():
    assert derive_sizes(12, 3) == (2, 4, 12)
    assert derive_sizes(6, 3) == (2, 3, 6)
    assert derive_sizes(4, 1) == (4,)


def test_generate_deterministic_hash(workspace, tmp_path):
    out1 = tmp_path / "a.llpds"
    out2 = tmp_path / "b.llpds"
    flags = ["generate", "--seed", "7", "--classes", "6", "--sizes", "2,3,6",
             "--n-per-class", "8", "--dim", "8", "--noise", "0.3"]
    assert main(flags + ["--out", str(out1)]) == 0
    assert main(flags + ["--out", str(out2)]) == 0
    assert sha(out1) == sha(out2)


def test_generated_file_loads(workspace):
    ds = load_dataset(str(workspace / "toy.llpds"))
    assert ds.hierarchy.sizes == (2, 3, 6)
    assert ds.n == 120


def test_default_bag_size_is_ten(workspace):
    text = (workspace / "toy.llpbags").read_text()
    assert "bag_size 10" in text


def test_validate_ok(workspace):
    assert main(["validate", "--dataset", str(workspace / "toy.llpds"),
                 "--manifest", str(workspace / "toy.llpbags")]) == 0


def test_validate_detects_corruption(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.llpbags"
    text = (workspace / "toy.llpbags").read_text().splitlines()
    ids_lines = [i for i, l in enumerate(text) if l.startswith("ids ")]
    a = text[ids_lines[0]].split()
    b = text[ids_lines[1]].split()
    a[1] = b[1]  # duplicate an instance id across bags
    text[ids_lines[0]] = " ".join(a)
    bad.write_text("\n".join(text) + "\n")
    code = main(["validate", "--dataset", str(workspace / "toy.llpds"),
                 "--manifest", str(bad)])
    assert code == 4
    out = capsys.readouterr().out
    assert "shared instance" in out


def test_validate_stale_manifest(workspace, tmp_path):
    other = tmp_path / "other.llpds"
    main(["generate", "--seed", "9", "--classes", "6", "--sizes", "2,3,6",
          "--n-per-class", "8", "--dim", "8", "--out", str(other)])
    assert main(["validate", "--dataset", str(other),
                 "--manifest", str(workspace / "toy.llpbags")]) == 4


def test_noise_zero_oracle_full_accuracy(tmp_path, capsys):
    path = tmp_path / "clean.llpds"
    assert main(["generate", "--seed", "0", "--classes", "6", "--sizes", "2,3,6",
                 "--n-per-class", "8", "--dim", "8", "--noise", "0",
                 "--out", str(path)]) == 0
    assert main(["eval-oracle", "--dataset", str(path)]) == 0
    assert "1.0000" in capsys.readouterr().out


def test_train_eval_round_trip(workspace, capsys):
    assert main(["train", "--config", str(workspace / "exp.cfg")]) == 0
    run_dir = workspace / "run"
    assert (run_dir / "checkpoint.llpckpt").exists()
    assert (run_dir / "metrics.csv").exists()
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(run_dir / "checkpoint.llpckpt"),
                 "--dataset", str(workspace / "toy.llpds")]) == 0
    out = capsys.readouterr().out
    assert "level 3" in out


def test_train_determinism_bitwise(workspace):
    for name in ("r1", "r2"):
        assert main(["train", "--config", str(workspace / "exp.cfg"),
                     "--out-dir", str(workspace / name)]) == 0
    assert sha(workspace / "r1" / "metrics.csv") == sha(workspace / "r2" / "metrics.csv")


def test_train_flag_overrides(workspace):
    out = workspace / "nodict"
    assert main(["train", "--config", str(workspace / "exp.cfg"),
                 "--out-dir", str(out), "--dict", "off", "--masks", "none",
                 "--epochs", "1"]) == 0
    from hierllp.training import Checkpoint
    ckpt = Checkpoint.load(str(out / "checkpoint.llpckpt"))
    assert ckpt.config.dictionary is False
    assert ckpt.config.epochs == 1


def test_config_unknown_key_rejected(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("dataset = x\nmanifest = y\nout_dir = z\nbogus_key = 1\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert "line 4" in capsys.readouterr().err


def test_missing_paths_is_usage_error(capsys):
    assert main(["train", "--epochs", "1"]) == 2
    assert "no dataset" in capsys.readouterr().err


def test_resume_flow(workspace):
    part = workspace / "part"
    assert main(["train", "--config", str(workspace / "exp.cfg"),
                 "--out-dir", str(part), "--stop-after", "1"]) == 0
    assert main(["train", "--config", str(workspace / "exp.cfg"),
                 "--out-dir", str(part),
                 "--resume", str(part / "checkpoint.llpckpt")]) == 0
    full = workspace / "run"
    if not (full / "metrics.csv").exists():
        main(["train", "--config", str(workspace / "exp.cfg")])
    assert sha(part / "metrics.csv") == sha(full / "metrics.csv")


def test_ablate_writes_tables(workspace, capsys, monkeypatch):
    # shrink the grid via seeds to keep the CLI test quick
    out = workspace / "ablate"
    assert main(["ablate", "--config", str(workspace / "exp.cfg"),
                 "--out-dir", str(out), "--seeds", "0", "--epochs", "1"]) == 0
    assert (out / "ablation.csv").exists()
    text = (out / "ablation.txt").read_text()
    for arm in ("no_dict", "dict_nomask", "dict_coarse", "dict_medium",
                "dict_both", "dict_both_softmax"):
        assert arm in text


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "gradient checks passed" in out
