import csv
import json
import struct

import pytest

from v2a.cli import EXIT_BAD_ARGS, EXIT_INCOMPATIBLE, main
from v2a.io import read_manifest, read_tokens

TINY_RUN = """\
world: {n_train: 12, n_test: 3}
codec: {K: 32, iters: 3}
model: {K: 32}
train: {steps: 6, batch_size: 4, warmup: 2}
eval: {n_gen: 1}
"""


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(TINY_RUN)
    out = root / "run"
    for cmd in (["synth"], ["codec-fit"], ["train"], ["generate", "--gamma", "3"], ["curate"], ["eval"]):
        assert main([cmd[0], "--config", str(cfg), "--out", str(out), *cmd[1:]]) == 0, cmd
    return cfg, out


def test_stage_outputs(run):
    _, out = run
    recs = read_manifest(out / "dataset" / "manifest.jsonl")
    assert len(recs) == 15 and all(r["corruption"] == "none" for r in recs)
    for p in ("codec/codebooks.vrvq", "train/model.vckp", "train/train_log.csv", "curate/manifest.jsonl",
              "curate/report.csv", "eval/report.json", "eval/per_video.csv", "eval/aggregate.csv"):
        assert (out / p).exists(), p
    assert (out / "dataset" / "manifest.jsonl.prov.json").exists()
    report = json.loads((out / "eval" / "report.json").read_text())
    assert report["n_samples"] == 3 and report["n_generations_per_video"] == 1
    header = next(csv.reader(open(out / "eval" / "aggregate.csv")))
    assert header == ["kld", "fd", "ib", "sync_ms"]


def test_generation_sidecar_records_gamma(run):
    _, out = run
    side = json.loads((out / "generate" / "test-00000.json").read_text())
    assert side["sample_config"]["gamma"] == 3.0
    assert len(side["checkpoint_sha256"]) == 64
    assert read_tokens(out / "generate" / "test-00000.vtok").tokens.shape == (640, 4)


def test_synth_refuses_non_empty_dir(run):
    cfg, out = run
    assert main(["synth", "--config", str(cfg), "--out", str(out)]) == EXIT_BAD_ARGS


def test_synth_is_deterministic(tmp_path, run):
    cfg, out = run
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    a = (out / "dataset" / "manifest.jsonl").read_bytes()
    assert (tmp_path / "dataset" / "manifest.jsonl").read_bytes() == a
    assert (tmp_path / "dataset" / "audio" / "train-00003.wav").read_bytes() == \
        (out / "dataset" / "audio" / "train-00003.wav").read_bytes()


def test_synth_corruption_ids_are_seeded(tmp_path):
    ids = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        assert main(["synth", "--out", str(d), "--n-train", "100", "--n-test", "1", "--p-corrupt", "0.5"]) == 0
        recs = read_manifest(d / "dataset" / "manifest.jsonl")
        ids.append({r["id"] for r in recs if r["corruption"] != "none"})
    assert len(ids[0]) == 50 and ids[0] == ids[1]


def test_resume_equals_uninterrupted(tmp_path, run):
    cfg, out = run
    d = tmp_path / "resume"
    assert main(["synth", "--config", str(cfg), "--out", str(d)]) == 0
    assert main(["codec-fit", "--config", str(cfg), "--out", str(d)]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(d), "--stop-at", "3"]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(d), "--resume"]) == 0
    assert (d / "train" / "model.vckp").read_bytes() == (out / "train" / "model.vckp").read_bytes()


def test_train_on_curated_manifest(tmp_path, run):
    cfg, out = run
    assert main(["train", "--config", str(cfg), "--out", str(out),
                 "--manifest", str(out / "curate" / "manifest.jsonl")]) == 0


def test_eval_without_samples_fails(tmp_path):
    d = tmp_path / "empty"
    (d / "dataset").mkdir(parents=True)
    (d / "dataset" / "manifest.jsonl").write_text("")
    assert main(["eval", "--out", str(d)]) != 0


def test_incompatible_artifact_exit_code(tmp_path, run, capsys):
    cfg, out = run
    d = tmp_path / "bad"
    d.mkdir()
    for sub in ("dataset", "codec", "train"):
        import shutil

        shutil.copytree(out / sub, d / sub)
    p = d / "codec" / "codebooks.vrvq"
    buf = bytearray(p.read_bytes())
    struct.pack_into("<H", buf, 4, 9)
    p.write_bytes(bytes(buf))
    assert main(["generate", "--config", str(cfg), "--out", str(d)]) == EXIT_INCOMPATIBLE
    err = capsys.readouterr().err
    assert "9" in err and "1" in err


def test_unknown_config_key(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {learning_rate: 1}\n")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_BAD_ARGS


def test_bad_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
