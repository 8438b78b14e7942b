import json

import numpy as np
import pytest

from facetraj import cli, nncore, traj
from facetraj.errors import InputError


def _run(argv, capsys=None):
    code = cli.main(argv)
    out = capsys.readouterr() if capsys else None
    return code, out


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    for profile, seed in (("real", 1), ("fake", 2)):
        assert cli.main(["--run-dir", str(root / profile), "synth", "--n-videos", "2", "--seed", str(seed),
                         "--profile", profile, "--T", "114", "--csv"]) == 0
    return root


def test_synth_outputs_and_manifest(workdir):
    m = json.loads((workdir / "real" / "manifest.json").read_text())
    assert m["command"] == "synth" and len(m["config_hash"]) == 16
    assert "samples.json" in m["outputs"] and "samples.f64" in m["outputs"]
    assert m["result"] == {"n_videos": 2, "n_samples": 6}
    assert len(list((workdir / "real").glob("*.csv"))) == 2


def test_same_config_same_hash(tmp_path):
    a = cli.Run("synth", dict(cli.DEFAULTS["synth"]), tmp_path / "a")
    b = cli.Run("synth", dict(cli.DEFAULTS["synth"]), tmp_path / "b")
    assert a.hash == b.hash


@pytest.fixture(scope="module")
def trained(workdir):
    data = [str(workdir / p / "samples.json") for p in ("real", "fake")]
    run = workdir / "train"
    assert cli.main(["--run-dir", str(run), "train", "--train", *data, "--val", *data, "--epochs", "1",
                     "--batch-size", "4", "--seed", "3", "--no-space-gat"]) == 0
    return run, data


def test_train_writes_checkpoints_and_log(trained):
    run, _ = trained
    log = [json.loads(line) for line in (run / "train_log.jsonl").read_text().splitlines()]
    assert len(log) == 1 and set(log[0]) == {"epoch", "loss", "bce", "mse", "val_accuracy"}
    params, m = nncore.load_checkpoint(run / "best.json")
    assert m["meta"]["flags"]["use_space_gat"] is False and m["step"] == 3
    assert json.loads((run / "manifest.json").read_text())["config"]["use_space_gat"] is False


def test_zero_lr_keeps_initial_checkpoint(workdir, tmp_path):
    data = str(workdir / "real" / "samples.json")
    assert cli.main(["--run-dir", str(tmp_path), "train", "--train", data, "--epochs", "1", "--lr", "0"]) == 0
    a, _ = nncore.load_checkpoint(tmp_path / "initial.json")
    b, _ = nncore.load_checkpoint(tmp_path / "final.json")
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_eval_infer_saliency(trained, workdir, capsys):
    run, data = trained
    ck = str(run / "best.json")
    code, out = _run(["--run-dir", str(workdir / "eval"), "eval", "--checkpoint", ck, "--data", *data], capsys)
    assert code == 0 and "sample" in out.out and "video" in out.out
    rep = json.loads((workdir / "eval" / "eval.json").read_text())
    assert rep["n_samples"] == 12 and rep["n_videos"] == 4 and len(rep["videos"]) == 4

    csvs = sorted(str(p) for p in (workdir / "fake").glob("*.csv"))
    code, _ = _run(["--run-dir", str(workdir / "infer"), "infer", "--checkpoint", ck, "--data", *csvs], capsys)
    assert code == 0
    verdicts = json.loads((workdir / "infer" / "infer.json").read_text())["videos"]
    assert [v["offsets"] for v in verdicts] == [[0, 25, 50]] * 2

    code, _ = _run(["--run-dir", str(workdir / "sal"), "saliency", "--checkpoint", ck, "--data", data[0],
                    "--index", "1"], capsys)
    assert code == 0
    rows = (workdir / "sal" / "saliency.csv").read_text().splitlines()
    assert len(rows) == 2 and len(rows[1].split(",")) == 3 + 64


def test_analyze(workdir, tmp_path, capsys):
    csv = sorted((workdir / "fake").glob("*.csv"))[0]
    code, out = _run(["--run-dir", str(tmp_path), "analyze", "--series", str(csv)], capsys)
    assert code == 0 and "high-frequency ratio" in out.out
    assert (tmp_path / "hf_ratio.csv").read_text().count("\n") == 2


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"n_videos": 1, "seed": 5, "T": 64, "window": 64}}))
    assert cli.main(["--config", str(cfg), "--run-dir", str(tmp_path / "r"), "synth", "--seed", "6"]) == 0
    m = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert m["config"]["n_videos"] == 1 and m["config"]["seed"] == 6 and m["config"]["T"] == 64


@pytest.mark.parametrize("content", [{"synth": {"window": 32}}, {"synth": {"bogus": 1}}, [1, 2]])
def test_bad_config_exits_2(tmp_path, content, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(content))
    code, out = _run(["--config", str(cfg), "--run-dir", str(tmp_path / "r"), "synth"], capsys)
    assert code == 2 and "input error" in out.err


def test_missing_required_option():
    with pytest.raises(InputError):
        cli.resolve_config("train", cli._parser().parse_args(["train"]))


def test_input_errors_exit_2(tmp_path, capsys):
    assert _run(["--run-dir", str(tmp_path), "eval", "--checkpoint", str(tmp_path / "nope.json"),
                 "--data", "x.json"], capsys)[0] == 2
    assert _run(["--run-dir", str(tmp_path), "extract", "--frames", str(tmp_path / "none"),
                 "--landmarks", "lm.jsonl"], capsys)[0] == 2


def test_gradcheck_failure_exits_3(tmp_path, capsys):
    code, out = _run(["--run-dir", str(tmp_path), "gradcheck", "--n-samples", "1", "--tolerance", "0"], capsys)
    assert code == 3 and "numeric error" in out.err
    report = json.loads((tmp_path / "gradcheck.json").read_text())
    assert set(report) >= {"a_s", "a_t", "enc_U", "dec_U"}


def test_unlabeled_eval_is_rejected(trained, workdir, tmp_path, capsys):
    run, data = trained
    s = traj.load_samples(data[0])
    s.labels[:] = -1
    traj.save_samples(tmp_path / "u.json", s)
    code, _ = _run(["--run-dir", str(tmp_path / "r"), "eval", "--checkpoint", str(run / "best.json"),
                    "--data", str(tmp_path / "u.json")], capsys)
    assert code == 2


def test_extract_command(tmp_path, mean_face, capsys):
    from .test_pipeline import _write_scene

    frames_dir, lm = _write_scene(tmp_path / "scene", mean_face, n_frames=5)
    code, out = _run(["--run-dir", str(tmp_path / "r"), "extract", "--frames", str(frames_dir),
                      "--landmarks", str(lm), "--video-id", "clip", "--label", "1"], capsys)
    assert code == 0 and "4 transitions, 0 discarded" in out.out
    s = traj.read_series_csv(tmp_path / "r" / "clip.csv")
    assert s.T == 4 and s.label == 1
    np.testing.assert_allclose(s.values[0], np.arange(1, 5) / 160.0, rtol=0.02)
