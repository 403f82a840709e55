import hashlib
from pathlib import Path

import numpy as np
import pytest

from evrec.cli import main
from evrec.events import read_events
from evrec.recognition import load_model

SMALL = ["--set", "synth.per_class=4", "--set", "synth.event_rate=6",
         "--set", "synth.duration_ms=40"]


def tree_hash(root: Path) -> str:
    # resolved.cfg records the run's own output directory, so it is the
    # one legitimately path-dependent file
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file() and not path.name.startswith("resolved-"):
            digest.update(path.name.encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("data")
    assert main(["--seed", "3", "--out", str(out), *SMALL, "synth"]) == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, dataset_dir) -> Path:
    out = tmp_path_factory.mktemp("model")
    code = main(["--seed", "3", "--out", str(out),
                 "--set", "train.epochs=1",
                 "train", "--data", str(dataset_dir / "manifest.csv")])
    assert code == 0
    return out


# ---------------------------------------------------------------------------
# synth

def test_synth_writes_files_and_manifest(dataset_dir):
    lines = (dataset_dir / "manifest.csv").read_text().splitlines()
    assert lines[0] == "path,label"
    assert len(lines) == 1 + 3 * 4          # 3 classes x 4 recordings
    labels = {line.split(",")[1] for line in lines[1:]}
    assert labels == {"0", "1", "2"}
    for line in lines[1:]:
        name = line.split(",")[0]
        stream = read_events(dataset_dir / name, "binary")
        assert len(stream) > 0
    assert (dataset_dir / "resolved-synth.cfg").is_file()


def test_synth_identical_for_identical_seed(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["--seed", "11", "--out", str(out), *SMALL, "synth"]) == 0
    assert tree_hash(a) == tree_hash(b)
    c = tmp_path / "c"
    assert main(["--seed", "12", "--out", str(c), *SMALL, "synth"]) == 0
    assert tree_hash(c) != tree_hash(a)


def test_synth_zero_recordings_header_only(tmp_path):
    out = tmp_path / "empty"
    assert main(["--out", str(out), "--set", "synth.per_class=0", "synth"]) == 0
    assert (out / "manifest.csv").read_text() == "path,label\n"


# ---------------------------------------------------------------------------
# segment / encode

def test_segment_command(tmp_path, dataset_dir):
    out = tmp_path / "segments"
    code = main(["--out", str(out), "segment",
                 "--data", str(dataset_dir / "manifest.csv")])
    assert code == 0
    lines = (out / "manifest.csv").read_text().splitlines()
    assert len(lines) > 1 + 3 * 4       # at least one segment per recording
    first = lines[1].split(",")[0]
    assert len(read_events(out / first, "binary")) > 0


def test_encode_command(tmp_path, dataset_dir):
    out = tmp_path / "patterns"
    code = main(["--out", str(out), "encode",
                 "--data", str(dataset_dir / "manifest.csv")])
    assert code == 0
    rows = (out / "patterns.csv").read_text().splitlines()
    assert rows[0] == "path,label,recording"
    name = rows[1].split(",")[0]
    spikes = (out / name).read_text().splitlines()
    assert spikes[0] == "address,time_ms"
    addr, t = spikes[1].split(",")
    assert int(addr) >= 0 and 0.0 <= float(t) <= 500.0
    assert not list(out.glob("c1_*.csv"))       # debug dump is opt-in


def test_encode_c1_debug_dump(tmp_path, dataset_dir):
    out = tmp_path / "dump"
    code = main(["--out", str(out), "--set", "feature.dump_c1=true",
                 "encode", "--data", str(dataset_dir / "manifest.csv")])
    assert code == 0
    grids = sorted(out.glob("c1_*.csv"))
    assert grids
    lines = grids[0].read_text().splitlines()
    assert lines[0].startswith("# scale=3 orientation=")
    assert len(lines[1].split(",")) == 16       # one 16-wide C1 row per line
    # 16 (scale, orientation) blocks of 1 header + 16 rows each
    assert len(lines) == 16 * 17


# ---------------------------------------------------------------------------
# train

def test_train_writes_model_and_config(trained_dir):
    model_path = trained_dir / "model.evm"
    assert model_path.is_file()
    model = load_model(model_path)
    assert model.network.w.shape == (1024, 60)
    assert (trained_dir / "resolved-train.cfg").is_file()


def test_train_empty_manifest_fails_fast(tmp_path):
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("path,label\n")
    out = tmp_path / "out"
    assert main(["--out", str(out), "train", "--data", str(manifest)]) == 2
    assert not (out / "model.evm").exists()


def test_train_replay_from_resolved_config(tmp_path, dataset_dir, trained_dir):
    out = tmp_path / "replay"
    code = main(["--config", str(trained_dir / "resolved-train.cfg"),
                 "--out", str(out),
                 "train", "--data", str(dataset_dir / "manifest.csv")])
    assert code == 0
    assert (out / "model.evm").read_bytes() == \
        (trained_dir / "model.evm").read_bytes()


def test_shared_out_dir_keeps_replay_working(tmp_path, dataset_dir):
    # train and eval into the same directory: their resolved configs must
    # not clobber each other, and the train config must still replay
    out = tmp_path / "shared"
    manifest = str(dataset_dir / "manifest.csv")
    assert main(["--seed", "9", "--out", str(out), "train",
                 "--data", manifest]) == 0
    assert main(["--seed", "9", "--out", str(out), "--set", "split.runs=1",
                 "eval", "--data", manifest,
                 "--model", str(out / "model.evm")]) == 0
    assert (out / "resolved-train.cfg").is_file()
    assert (out / "resolved-eval.cfg").is_file()
    replay = tmp_path / "replay"
    assert main(["--config", str(out / "resolved-train.cfg"),
                 "--out", str(replay), "train", "--data", manifest]) == 0
    assert (replay / "model.evm").read_bytes() == \
        (out / "model.evm").read_bytes()


def test_degenerate_coding_exits_3(tmp_path, dataset_dir):
    out = tmp_path / "degenerate"
    code = main(["--out", str(out), "--set", "coding.r_min=1e9",
                 "train", "--data", str(dataset_dir / "manifest.csv")])
    assert code == 3


# ---------------------------------------------------------------------------
# eval

def test_eval_summary_and_confusion(tmp_path, dataset_dir, trained_dir):
    out = tmp_path / "eval"
    code = main(["--seed", "3", "--out", str(out),
                 "--set", "split.runs=3",
                 "eval", "--data", str(dataset_dir / "manifest.csv"),
                 "--model", str(trained_dir / "model.evm")])
    assert code == 0
    lines = (out / "summary.csv").read_text().splitlines()
    assert lines[0] == "run,accuracy"
    assert len(lines) == 1 + 3 + 1            # runs + aggregate line
    final = lines[-1].split(",")
    assert final[0] == "accuracy"
    mean, std = float(final[1]), float(final[2])
    accs = [float(line.split(",")[1]) for line in lines[1:-1]]
    assert mean == pytest.approx(np.mean(accs))
    assert std == pytest.approx(np.std(accs))
    confusion = np.loadtxt(out / "confusion.csv", delimiter=",")
    assert confusion.shape == (3, 3)


def test_eval_single_run_std_zero(tmp_path, dataset_dir, trained_dir):
    out = tmp_path / "eval1"
    code = main(["--seed", "4", "--out", str(out),
                 "--set", "split.runs=1",
                 "eval", "--data", str(dataset_dir / "manifest.csv"),
                 "--model", str(trained_dir / "model.evm")])
    assert code == 0
    final = (out / "summary.csv").read_text().splitlines()[-1]
    assert float(final.split(",")[2]) == 0.0


def test_eval_class_count_mismatch_exits_2(tmp_path, dataset_dir, trained_dir):
    manifest = tmp_path / "manifest.csv"
    rows = (dataset_dir / "manifest.csv").read_text().splitlines()
    doctored = [rows[0]] + [f"{dataset_dir}/" + r.split(",")[0] + ",7"
                            for r in rows[1:]]
    manifest.write_text("\n".join(doctored) + "\n")
    out = tmp_path / "out"
    code = main(["--out", str(out), "eval", "--data", str(manifest),
                 "--model", str(trained_dir / "model.evm")])
    assert code == 2


# ---------------------------------------------------------------------------
# analyze

def test_analyze_outputs(tmp_path, dataset_dir):
    out = tmp_path / "analysis"
    code = main(["--seed", "3", "--out", str(out), "analyze",
                 "--data", str(dataset_dir / "manifest.csv")])
    assert code == 0

    entropy = (out / "entropy.csv").read_text().splitlines()
    assert entropy[0] == "kind,entropy_bits,n_spikes"
    assert len(entropy) == 3                    # exactly log + linear rows
    kinds = {line.split(",")[0] for line in entropy[1:]}
    assert kinds == {"log", "linear"}

    fusion = (out / "fusion_counts.csv").read_text().splitlines()
    assert len(fusion) == 5
    counts = {line.split(",")[0]: line.split(",")[1:] for line in fusion[1:]}
    base = int(counts["multiscale"][0])
    assert int(counts["multi_orientation"][0]) == base
    assert int(counts["none"][0]) == 4 * base
    assert int(counts["full"][0]) * 4 == base
    spike_totals = {int(v[1]) for v in counts.values()}
    assert len(spike_totals) == 1               # fusion never changes spikes

    assert (out / "cc.csv").is_file()
    assert (out / "spike_hist.csv").is_file()
    hist = (out / "response_hist.csv").read_text().splitlines()
    assert hist[0].startswith("# mass_below_r_min")

    again = tmp_path / "again"
    code = main(["--seed", "3", "--out", str(again), "analyze",
                 "--data", str(dataset_dir / "manifest.csv")])
    assert code == 0
    for name in ("entropy.csv", "cc.csv", "spike_hist.csv",
                 "response_hist.csv", "fusion_counts.csv"):
        assert (again / name).read_bytes() == (out / name).read_bytes()


# ---------------------------------------------------------------------------
# usage and errors

def test_usage_errors_exit_1(capsys):
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["--set", "no.such.key=1", "synth"]) == 1
    assert main(["--set", "malformed", "synth"]) == 1
    capsys.readouterr()


def test_missing_files_exit_2(tmp_path):
    assert main(["--out", str(tmp_path / "o"), "train",
                 "--data", str(tmp_path / "nope.csv")]) == 2
    assert main(["--config", str(tmp_path / "nope.cfg"),
                 "--out", str(tmp_path / "o"), "synth"]) == 2


def test_workers_flag_matches_sequential(tmp_path, dataset_dir, trained_dir):
    outs = []
    for workers, name in ((1, "w1"), (2, "w2")):
        out = tmp_path / name
        code = main(["--seed", "5", "--out", str(out),
                     "--workers", str(workers), "--set", "split.runs=1",
                     "eval", "--data", str(dataset_dir / "manifest.csv"),
                     "--model", str(trained_dir / "model.evm")])
        assert code == 0
        outs.append((out / "summary.csv").read_text())
    assert outs[0] == outs[1]
