"""Command-line harness: extract, analyze, synth, train, eval, infer, saliency, gradcheck.

Options may also come from a JSON config (``--config``); flags given on the
command line override it. Every command writes its artifacts plus a
``manifest.json`` (config, config hash, outputs) under ``--run-dir``.
Exit codes: 0 ok, 2 input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _backend, ftdn, nncore, spectral, synthgen, traj
from .errors import FacetrajError, InputError, NumericError
from .evaluate import evaluate
from .training import EpochLog, TrainConfig, config_hash, train

log = logging.getLogger("facetraj")

# per-command defaults; None means "required"
DEFAULTS = {
    "extract": {"frames": None, "landmarks": None, "fps": traj.DEFAULT_FPS, "label": None, "video_id": None},
    "analyze": {"series": None, "cutoff": spectral.DEFAULT_CUTOFF},
    "synth": {"n_videos": 10, "seed": 0, "profile": "real", "T": 300, "fps": 25.0, "csv": False},
    "train": {"train": None, "val": None, "epochs": 20, "batch_size": 32, "lr": 1e-3, "seed": 7,
              "use_time_gat": True, "use_space_gat": True, "use_gru": True, "threshold": 0.5},
    "eval": {"checkpoint": None, "data": None, "threshold": 0.5},
    "infer": {"checkpoint": None, "data": None, "threshold": 0.5},
    "saliency": {"checkpoint": None, "data": None, "index": None},
    "gradcheck": {"seed": 0, "n_samples": 4, "tolerance": 1e-6},
}
GUARDED = {"window": traj.WINDOW, "features": traj.N_FEATURES}


def _parser():
    p = argparse.ArgumentParser(prog="facetraj", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--run-dir", help="directory for artifacts (default runs/<command>-<hash>)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"facetraj {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", help="frames + landmarks -> anchor series CSV")
    s.add_argument("--frames", help="directory of %%06d.pgm frames")
    s.add_argument("--landmarks", help="landmark JSON Lines file")
    s.add_argument("--fps", type=float)
    s.add_argument("--label", type=int, choices=(0, 1))
    s.add_argument("--video-id")

    s = sub.add_parser("analyze", help="detrended spectrum and high-frequency ratio of series CSVs")
    s.add_argument("--series", nargs="+")
    s.add_argument("--cutoff", type=float)

    s = sub.add_parser("synth", help="synthetic real/fake series and windowed samples")
    s.add_argument("--n-videos", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--profile", choices=("real", "fake"))
    s.add_argument("--T", type=int)
    s.add_argument("--fps", type=float)
    s.add_argument("--csv", action="store_const", const=True, help="also write one CSV per video")

    s = sub.add_parser("train", help="train the detector")
    s.add_argument("--train", nargs="+", help="sample manifest(s)")
    s.add_argument("--val", nargs="+", help="validation sample manifest(s)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--threshold", type=float)
    s.add_argument("--no-time-gat", dest="use_time_gat", action="store_const", const=False)
    s.add_argument("--no-space-gat", dest="use_space_gat", action="store_const", const=False)
    s.add_argument("--no-gru", dest="use_gru", action="store_const", const=False,
                   help="replace the temporal descriptor with zeros")

    for name, helptext in (("eval", "accuracy report on labeled samples"),
                           ("infer", "per-window probabilities and video verdicts"),
                           ("saliency", "per-time-step input-gradient saliency")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--checkpoint")
        s.add_argument("--data", nargs="+", help="sample manifest(s) or series CSV(s)")
        if name == "saliency":
            s.add_argument("--index", type=int, help="only this sample")
        else:
            s.add_argument("--threshold", type=float)

    s = sub.add_parser("gradcheck", help="finite-difference check of every parameter block")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-samples", type=int)
    s.add_argument("--tolerance", type=float)
    return p


def resolve_config(command, args, config_path=None) -> dict:
    """Defaults <- JSON config <- explicit flags."""
    cfg = dict(DEFAULTS[command])
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {config_path}: {exc}") from None
        section = loaded.get(command, loaded) if isinstance(loaded, dict) else None
        if not isinstance(section, dict):
            raise InputError(f"{config_path}: expected a JSON object")
        for key, value in section.items():
            if key in GUARDED:
                if value != GUARDED[key]:
                    raise InputError(f"{key} is fixed at {GUARDED[key]}")
                continue
            if key not in cfg:
                raise InputError(f"unknown option {key!r} for {command}")
            cfg[key] = value
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    missing = [k for k, v in cfg.items() if v is None and DEFAULTS[command][k] is None
               and k not in ("label", "video_id", "val", "index")]
    if missing:
        raise InputError(f"{command}: missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return cfg


class Run:
    """Run directory with a manifest of config, hash and outputs."""

    def __init__(self, command, cfg, run_dir=None):
        self.command = command
        self.cfg = cfg
        self.hash = config_hash({"command": command, **cfg})
        self.dir = Path(run_dir) if run_dir else Path("runs") / f"{command}-{self.hash}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs = []
        self.started = time.time()

    def path(self, name) -> Path:
        p = self.dir / name
        self.outputs.append(name)
        return p

    def finish(self, **extra):
        manifest = {"command": self.command, "version": __version__, "backend": _backend.NAME,
                    "config": self.cfg, "config_hash": self.hash, "outputs": sorted(set(self.outputs)),
                    "seconds": round(time.time() - self.started, 3), **extra}
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str))
        return manifest


def _load_data(paths) -> traj.SampleSet:
    """Sample manifests and/or series CSVs (windowed on the fly) as one set."""
    sets = []
    for p in paths:
        p = Path(p)
        if p.suffix == ".csv":
            sets.append(traj.SampleSet.from_samples(traj.window_samples(traj.read_series_csv(p))))
        else:
            sets.append(traj.load_samples(p))
    return traj.SampleSet.concat(sets) if sets else traj.SampleSet.from_samples([])


def _load_model(path):
    params, manifest = nncore.load_checkpoint(path)
    ftdn.check_params(params)
    f = manifest.get("meta", {}).get("flags", {})
    return params, ftdn.Flags(f.get("use_time_gat", True), f.get("use_space_gat", True), f.get("use_gru", True))


# --- commands ----------------------------------------------------------------

def cmd_extract(cfg, run: Run):
    from .pipeline import extract

    res = extract(cfg["frames"], cfg["landmarks"], cfg["fps"], cfg["video_id"], cfg["label"])
    outs = []
    for s in res.series:
        name = f"{s.video_id.replace('/', '_')}.csv"
        traj.write_series_csv(run.path(name), s)
        run.outputs.append(Path(name).with_suffix(".json").name)
        outs.append(name)
    summary = res.summary()
    summary["series"] = outs
    run.path("extract.json").write_text(json.dumps(summary, indent=1))
    print(f"{len(res.frames)} transitions, {len(res.discarded)} discarded, {len(res.series)} series written")
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return summary


def cmd_analyze(cfg, run: Run):
    rows = []
    for path in cfg["series"]:
        s = traj.read_series_csv(path)
        d = spectral.detrend(s.values)
        ratios = spectral.hf_ratio(d, s.fps, cfg["cutoff"])
        freqs, power = spectral.power_spectrum(d, s.fps)
        stem = Path(path).stem
        with open(run.path(f"{stem}.spectrum.csv"), "w") as fh:
            fh.write("freq_hz," + ",".join(traj.FEATURE_NAMES) + "\n")
            for k, f in enumerate(freqs):
                fh.write(repr(float(f)) + "," + ",".join(repr(float(v)) for v in power[:, k]) + "\n")
        rows.append({"series": str(path), "video_id": s.video_id, "mean_hf_ratio": float(np.mean(ratios)),
                     "hf_ratio": dict(zip(traj.FEATURE_NAMES, map(float, ratios)))})
        print(f"{s.video_id or stem}: mean high-frequency ratio {np.mean(ratios):.4f}")
    with open(run.path("hf_ratio.csv"), "w") as fh:
        fh.write("series," + ",".join(traj.FEATURE_NAMES) + ",mean\n")
        for r in rows:
            fh.write(r["series"] + "," + ",".join(repr(v) for v in r["hf_ratio"].values())
                     + f",{r['mean_hf_ratio']!r}\n")
    return {"series": rows}


def cmd_synth(cfg, run: Run):
    base = synthgen.SynthConfig(T=cfg["T"], fps=cfg["fps"])
    videos = synthgen.make_videos(cfg["n_videos"], cfg["seed"], cfg["profile"], base)
    if cfg["csv"]:
        for s in videos:
            traj.write_series_csv(run.path(f"{s.video_id}.csv"), s)
            run.outputs.append(f"{s.video_id}.json")
    samples = traj.SampleSet.from_samples(w for s in videos for w in traj.window_samples(s))
    traj.save_samples(run.path("samples.json"), samples)
    run.outputs.append("samples.f64")
    print(f"{len(videos)} {cfg['profile']} videos, {len(samples)} windows -> {run.dir / 'samples.json'}")
    return {"n_videos": len(videos), "n_samples": len(samples)}


def cmd_train(cfg, run: Run):
    tcfg = TrainConfig(cfg["epochs"], cfg["batch_size"], cfg["lr"], cfg["seed"], cfg["use_time_gat"],
                       cfg["use_space_gat"], cfg["use_gru"], cfg["threshold"])
    train_set = _load_data(cfg["train"])
    val_set = _load_data(cfg["val"]) if cfg["val"] else None
    meta = {"flags": {"use_time_gat": tcfg.use_time_gat, "use_space_gat": tcfg.use_space_gat,
                      "use_gru": tcfg.use_gru}, "config_hash": run.hash}
    nncore.save_checkpoint(run.path("initial.json"), ftdn.init_params(tcfg.seed), seed=tcfg.seed, step=0, meta=meta)
    run.outputs.append("initial.f64")
    log_path = run.path("train_log.jsonl")
    fh = open(log_path, "w")

    def on_epoch(e: EpochLog):
        rec = {"epoch": e.epoch, "loss": e.loss, "bce": e.bce, "mse": e.mse, "val_accuracy": e.val_accuracy}
        fh.write(json.dumps(rec) + "\n")
        fh.flush()
        val = "" if e.val_accuracy is None else f"  val_acc {e.val_accuracy:.4f}"
        print(f"epoch {e.epoch:3d}  L {e.loss:.6f}  L_BCE {e.bce:.6f}  L_MSE {e.mse:.6f}{val}", flush=True)

    try:
        res = train(train_set, tcfg, val_set, on_epoch=on_epoch)
    finally:
        fh.close()
    steps = res.opt_state.t if res.opt_state else 0
    nncore.save_checkpoint(run.path("final.json"), res.params, seed=tcfg.seed, step=steps, meta=meta)
    nncore.save_checkpoint(run.path("best.json"), res.best_params, seed=tcfg.seed, step=steps,
                           meta={**meta, "epoch": res.best_epoch})
    run.outputs += ["final.f64", "best.f64"]
    return {"best_epoch": res.best_epoch, "epochs": len(res.history)}


def _probs(cfg):
    params, flags = _load_model(cfg["checkpoint"])
    data = _load_data(cfg["data"])
    return data, ftdn.predict_proba(params, data.x, flags)


def cmd_eval(cfg, run: Run):
    data, probs = _probs(cfg)
    if len(data) == 0 or np.any(data.labels < 0):
        raise InputError("evaluation needs labeled samples")
    rep = evaluate(probs, data.labels, data.video_ids, cfg["threshold"])
    run.path("eval.json").write_text(json.dumps(rep.to_dict(), indent=1))
    run.path("eval.txt").write_text(rep.table() + "\n")
    print(rep.table())
    return rep.to_dict(with_verdicts=False)


def cmd_infer(cfg, run: Run):
    from .evaluate import group_by_video, majority_vote

    data, probs = _probs(cfg)
    videos = []
    for vid, idx in group_by_video(data.video_ids).items():
        v = majority_vote(probs[idx], cfg["threshold"], vid)
        videos.append({"video_id": vid, "label": "fake" if v.label else "real", "n_fake": v.n_fake,
                       "n_real": v.n_real, "probs": v.probs, "offsets": data.offsets[idx].tolist()})
        print(f"{vid}: {videos[-1]['label']} ({v.n_fake} fake / {v.n_real} real windows)")
    run.path("infer.json").write_text(json.dumps({"threshold": cfg["threshold"], "videos": videos}, indent=1))
    return {"n_videos": len(videos)}


def cmd_saliency(cfg, run: Run):
    params, flags = _load_model(cfg["checkpoint"])
    data = _load_data(cfg["data"])
    idx = range(len(data)) if cfg["index"] is None else [cfg["index"]]
    if cfg["index"] is not None and not 0 <= cfg["index"] < len(data):
        raise InputError(f"sample index {cfg['index']} out of range (0..{len(data) - 1})")
    sal = ftdn.saliency(data.x[list(idx)], params, flags)
    with open(run.path("saliency.csv"), "w") as fh:
        fh.write("video_id,offset,label," + ",".join(f"t{t}" for t in range(traj.WINDOW)) + "\n")
        for row, i in zip(np.atleast_2d(sal), idx):
            fh.write(f"{data.video_ids[i]},{data.offsets[i]},{data.labels[i]},"
                     + ",".join(repr(float(v)) for v in row) + "\n")
    print(f"saliency for {len(idx)} sample(s) -> {run.dir / 'saliency.csv'}")
    return {"n_samples": len(idx)}


def cmd_gradcheck(cfg, run: Run):
    from .rng import Xoshiro256

    rng = Xoshiro256(cfg["seed"])
    x = traj.normalize(rng.normal(size=(cfg["n_samples"], traj.N_FEATURES, traj.WINDOW)))
    y = (rng.random(cfg["n_samples"]) < 0.5).astype(np.float64)
    params = ftdn.init_params(cfg["seed"])

    def closure(p):
        losses, grads = ftdn.loss_and_grad(p, x, y)
        return losses[0], grads

    report = nncore.grad_check(closure, params, seed=cfg["seed"])
    worst = max(report.values())
    for name, err in report.items():
        print(f"{name:<8} {err:.3e}  {'ok' if err <= cfg['tolerance'] else 'FAIL'}")
    run.path("gradcheck.json").write_text(json.dumps(report, indent=1))
    if worst > cfg["tolerance"]:
        raise NumericError(f"gradient check failed: max relative error {worst:.3e}")
    return {"max_rel_error": worst}


COMMANDS = {"extract": cmd_extract, "analyze": cmd_analyze, "synth": cmd_synth, "train": cmd_train,
            "eval": cmd_eval, "infer": cmd_infer, "saliency": cmd_saliency, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args.command, args, args.config)
        run = Run(args.command, cfg, args.run_dir)
        result = COMMANDS[args.command](cfg, run)
        run.finish(result=result)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FacetrajError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", InputError.exit_code)
    return 0


if __name__ == "__main__":
    sys.exit(main())
