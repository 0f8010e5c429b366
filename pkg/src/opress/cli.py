"""Command line interface: ``opress <command> ...``.

Every command reads and writes OCTB frames (processed in sorted file-name
order), writes a ``manifest.json`` recording its arguments and the sha256 of
each artifact, and exits non-zero when any frame failed; failures are listed
in ``errors.json``. ``--threads`` (default ``$OPRESS_THREADS``) caps the BLAS
thread pool; with one thread every artifact is byte-reproducible.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .diffnet.checkpoint import load_checkpoint, save_checkpoint
from .exceptions import InvariantViolation, IoFailure, OPressError
from .imagecore import Roi, ensure_dir, export_mask_pgm, export_pgm16, read_octb, write_octb
from .maskgen import BilateralParams, generate_mask
from .pipeline import (
    DatasetSplit,
    RecurrentConfig,
    TrainConfig,
    enhance_recurrent,
    train,
    write_history_csv,
)
from .quality import MetricsReport, evaluate_frame
from .rldeconv import DEFAULT_ITERATIONS, richardson_lucy
from .simulate import (
    PhantomSpec,
    add_complex_noise,
    add_noise,
    degrade,
    load_psf,
    make_phantom,
    random_phantom_spec,
)

log = logging.getLogger("opress")


# --- helpers --------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def list_frames(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise IoFailure(f"{directory} is not a directory")
    return sorted(d.glob("*.octb"))


class Run:
    """Collects artifacts and per-frame errors for one command invocation."""

    def __init__(self, command, out_dir, args: dict, paths=None, prefix=""):
        self.command = command
        self.prefix = prefix
        self.out = Path(ensure_dir(out_dir))
        # paths are stored relative to the output directory so manifests do not
        # depend on where an experiment was run
        self.args = dict(args)
        for k, v in (paths or {}).items():
            self.args[k] = None if v is None else os.path.relpath(v, self.out)
        self.artifacts = []
        self.errors = []

    def path(self, name) -> Path:
        return self.out / name

    def add(self, name) -> Path:
        self.artifacts.append(name)
        return self.out / name

    def fail(self, frame, exc) -> None:
        log.error("%s: %s: %s", frame, type(exc).__name__, exc)
        self.errors.append({"frame": str(frame), "error": type(exc).__name__,
                            "message": str(exc)})

    def finish(self, extra=None) -> int:
        if self.errors:
            _dump_json({"count": len(self.errors), "errors": self.errors},
                       self.add(f"{self.prefix}errors.json"))
        manifest = {
            "command": self.command,
            "args": self.args,
            "artifacts": {n: sha256_file(self.out / n) for n in sorted(set(self.artifacts))},
        }
        if extra:
            manifest.update(extra)
        _dump_json(manifest, self.out / f"{self.prefix}manifest.json")
        return 1 if self.errors else 0


def _write_frame(run: Run, stem, frame, preview=True):
    write_octb(frame, run.add(f"{stem}.octb"))
    if preview:
        export_pgm16(frame, run.add(f"{stem}.pgm"))


# --- commands -------------------------------------------------------------------

def cmd_phantom(spec_json, out_dir, count, seed, rows=64, cols=64) -> int:
    """Render ``count`` phantoms; a given spec is re-seeded per frame, otherwise specs are random."""
    run = Run("phantom", out_dir, {"count": count, "seed": seed, "rows": rows, "cols": cols},
              {"spec": spec_json})
    base = PhantomSpec.from_json(spec_json) if spec_json else None
    rng = np.random.default_rng(seed)
    with open(run.add("surfaces.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("frame", "col", "surface_row"))
        for i in range(count):
            stem = f"frame_{i:04d}"
            if base is None:
                spec = random_phantom_spec(rng, rows, cols)
            else:
                spec = PhantomSpec.from_dict({**base.to_dict(), "seed": int(rng.integers(2**31))})
            frame, surface = make_phantom(spec)
            _write_frame(run, stem, frame)
            for c, s in enumerate(surface):
                w.writerow((stem, c, int(s)))
    return run.finish()


NOISE_MODELS = ("gaussian", "complex")


def cmd_acquire(gt_dir, psf_json, noise_sigma, seed, out_dir, noise_model="gaussian",
                looks=1) -> int:
    """Blur every ground-truth frame with the PSF and add seeded noise.

    ``gaussian`` adds clamped real noise; ``complex`` detects the magnitude
    of a complex-noise field averaged over ``looks`` acquisitions.
    """
    if noise_model not in NOISE_MODELS:
        raise InvariantViolation(f"noise model must be one of {NOISE_MODELS}")
    psf = load_psf(psf_json)
    run = Run("acquire", out_dir, {"psf": psf.to_dict(), "noise_sigma": noise_sigma,
                                   "noise_model": noise_model, "looks": looks,
                                   "seed": seed}, {"gt": gt_dir})
    for i, path in enumerate(list_frames(gt_dir)):
        try:
            low = degrade(read_octb(path), psf)
            if noise_sigma > 0 and noise_model == "complex":
                low = add_complex_noise(low, noise_sigma, [seed, i], looks)
            elif noise_sigma > 0:
                low = add_noise(low, noise_sigma, [seed, i])
            _write_frame(run, path.stem, low)
        except OPressError as exc:
            run.fail(path.name, exc)
    return run.finish()


def cmd_mask(in_dir, tau, out_dir, params: BilateralParams = BilateralParams()) -> int:
    run = Run("mask", out_dir, {"tau": tau}, {"in": in_dir})
    with open(run.add("surfaces.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("frame", "col", "surface_row"))
        for path in list_frames(in_dir):
            try:
                mask = generate_mask(read_octb(path), params, tau)
            except OPressError as exc:
                run.fail(path.name, exc)
                continue
            write_octb(mask.data.astype(np.float64), run.add(f"{path.stem}.octb"))
            export_mask_pgm(mask.data, run.add(f"{path.stem}.pgm"))
            for c, s in enumerate(mask.surface_rows):
                w.writerow((path.stem, c, int(s)))
    return run.finish()


def cmd_train(config_json, data_dir, out_dir, resume=None, seed=None) -> int:
    """Train on every frame in ``data_dir``; writes ``checkpoint.opck`` and ``history.csv``."""
    config = TrainConfig.from_dict(_load_json(config_json))
    if seed is not None:
        config.seed = seed
    run = Run("train", out_dir, {"config": config.to_dict()},
              {"data": data_dir, "resume": resume})
    frames = [read_octb(p) for p in list_frames(data_dir)]
    start = load_checkpoint(resume) if resume else None
    ckpt, history = train(config, DatasetSplit(frames), resume=start)
    save_checkpoint(ckpt, run.add("checkpoint.opck"))
    write_history_csv(history, run.add("history.csv"))
    return run.finish({"epochs": ckpt.epoch, "steps": ckpt.step})


def cmd_infer(checkpoint, in_dir, steps, blend, out_dir, save_steps=False) -> int:
    ckpt = load_checkpoint(checkpoint)
    rc = RecurrentConfig(steps, blend)
    run = Run("infer", out_dir, {"checkpoint_sha256": sha256_file(checkpoint), "steps": steps,
                                 "blend": blend, "save_steps": save_steps}, {"in": in_dir})
    for path in list_frames(in_dir):
        try:
            if steps == 0:
                shutil.copyfile(path, run.add(path.name))
                continue
            final, per_step = enhance_recurrent(ckpt, read_octb(path), rc)
            _write_frame(run, path.stem, final)
            if save_steps:
                for k, out in enumerate(per_step, start=1):
                    write_octb(out, run.add(f"{path.stem}_step{k:02d}.octb"))
        except OPressError as exc:
            run.fail(path.name, exc)
    return run.finish()


def cmd_rl(in_dir, psf_json, iterations, out_dir) -> int:
    psf = load_psf(psf_json)
    run = Run("rl", out_dir, {"psf": psf.to_dict(), "iterations": iterations}, {"in": in_dir})
    for path in list_frames(in_dir):
        try:
            _write_frame(run, path.stem, richardson_lucy(read_octb(path), psf, iterations))
        except OPressError as exc:
            run.fail(path.name, exc)
    return run.finish()


def _rois(roi_json):
    d = _load_json(roi_json) if roi_json else {}
    return {k: Roi.from_dict(d[k]) if d.get(k) else None for k in ("signal", "background", "enl")}


def cmd_eval(pairs_manifest, roi_json, out_csv) -> int:
    """Score frame pairs listed as ``{"pairs": [{"frame", "output", "reference"?, "original"?}]}``.

    Relative paths resolve against the manifest's directory.
    """
    pairs = _load_json(pairs_manifest)["pairs"]
    base = Path(pairs_manifest).parent
    rois = _rois(roi_json)
    out_csv = Path(out_csv)
    run = Run("eval", out_csv.parent, {}, {"pairs": pairs_manifest, "roi": roi_json},
              prefix=f"{out_csv.stem}_")
    report = MetricsReport()
    for entry in pairs:
        name = entry["frame"]
        try:
            frames = {k: read_octb(base / entry[k]) if entry.get(k) else None
                      for k in ("output", "reference", "original")}
            vals = evaluate_frame(frames["output"], frames["reference"], frames["original"],
                                  rois["signal"], rois["background"], rois["enl"])
        except (OPressError, OSError) as exc:
            run.fail(name, exc)
            vals = {}
        report.add(name, **vals)
    report.to_csv(out_csv)
    run.add(out_csv.name)
    return run.finish()


def _pairs(out_dir: Path, name, output_dir, reference_dir, original_dir):
    rel = lambda p: os.path.relpath(p, out_dir)  # noqa: E731
    pairs = [{"frame": p.stem, "output": rel(p), "reference": rel(reference_dir / p.name),
              "original": rel(original_dir / p.name)} for p in list_frames(output_dir)]
    path = out_dir / f"pairs_{name}.json"
    _dump_json({"pairs": pairs}, path)
    return path


def cmd_repro(manifest_json, out_dir) -> int:
    """phantom → acquire → mask → train → infer / rl → eval from one JSON manifest.

    Keys: ``seed``, ``phantom`` (count, rows, cols, spec? as a dict or path), ``psf``,
    ``noise_sigma``, ``noise_model``, ``looks``, ``tau``, ``train`` (a TrainConfig),
    ``infer`` (steps, blend), ``rl`` (iterations, psf?), ``roi`` (optional ROI dict).
    """
    m = _load_json(manifest_json)
    out = Path(ensure_dir(out_dir))
    seed = int(m.get("seed", 0))
    ph = m.get("phantom", {})
    _dump_json(m["psf"], out / "psf.json")
    rl_psf = m.get("rl", {}).get("psf", m["psf"])
    _dump_json(rl_psf, out / "psf_rl.json")
    _dump_json(m["train"], out / "train.json")
    roi_path = None
    if m.get("roi"):
        roi_path = str(out / "roi.json")
        _dump_json(m["roi"], roi_path)
    spec_path = None
    if ph.get("spec") is not None:
        spec = ph["spec"] if isinstance(ph["spec"], dict) else _load_json(ph["spec"])
        spec_path = out / "phantom_spec.json"
        _dump_json(spec, spec_path)
    codes = []
    codes.append(cmd_phantom(spec_path, out / "gt", int(ph.get("count", 8)), seed,
                             int(ph.get("rows", 64)), int(ph.get("cols", 64))))
    codes.append(cmd_acquire(out / "gt", out / "psf.json", float(m.get("noise_sigma", 0.0)),
                             seed, out / "lr", m.get("noise_model", "gaussian"),
                             int(m.get("looks", 1))))
    tau = float(m.get("tau", 3.0))
    codes.append(cmd_mask(out / "lr", tau, out / "masks"))
    # known-PSF training synthesizes its inputs from ground truth, otherwise it sees observations
    train_cfg = TrainConfig.from_dict(m["train"])
    data = out / "gt" if train_cfg.regime == "known_psf_ei" else out / "lr"
    codes.append(cmd_train(out / "train.json", data, out / "train", seed=seed))
    inf = m.get("infer", {})
    codes.append(cmd_infer(out / "train" / "checkpoint.opck", out / "lr", int(inf.get("steps", 1)),
                           float(inf.get("blend", 0.3)), out / "ei"))
    codes.append(cmd_rl(out / "lr", out / "psf_rl.json",
                        int(m.get("rl", {}).get("iterations", DEFAULT_ITERATIONS)), out / "rl"))
    for name, d in (("input", out / "lr"), ("ei", out / "ei"), ("rl", out / "rl")):
        pairs = _pairs(out, name, d, out / "gt", out / "lr")
        codes.append(cmd_eval(pairs, roi_path, out / "eval" / f"metrics_{name}.csv"))
    stages = {}
    for sub in ("gt", "lr", "masks", "train", "ei", "rl"):
        stages[sub] = sha256_file(out / sub / "manifest.json")
    for name in ("input", "ei", "rl"):
        stages[f"eval_{name}"] = sha256_file(out / "eval" / f"metrics_{name}_manifest.json")
    _dump_json({"command": "repro", "manifest": m, "stages": stages}, out / "manifest.json")
    return max(codes)


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opress", description="Self-supervised OCT axial "
                                "resolution enhancement on synthetic data.")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS thread cap (default $OPRESS_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, seed_default=0, seed_help=None):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=seed_default, help=seed_help)
        return sp

    sp = add("phantom", "render synthetic ground-truth frames")
    sp.add_argument("--spec", default=None, help="PhantomSpec JSON (random specs if omitted)")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--rows", type=int, default=64)
    sp.add_argument("--cols", type=int, default=64)
    sp.add_argument("--out", required=True)

    sp = add("acquire", "blur and add noise to ground-truth frames")
    sp.add_argument("--gt", required=True)
    sp.add_argument("--psf", required=True)
    sp.add_argument("--noise-sigma", type=float, default=0.0)
    sp.add_argument("--noise-model", choices=NOISE_MODELS, default="gaussian")
    sp.add_argument("--looks", type=int, default=1)
    sp.add_argument("--out", required=True)

    sp = add("mask", "free-space masks by gradient thresholding")
    sp.add_argument("--in", dest="in_dir", required=True)
    sp.add_argument("--tau", type=float, default=3.0)
    sp.add_argument("--out", required=True)

    sp = add("train", "train a network from a JSON config", None,
             "overrides the seed in the config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")

    sp = add("infer", "enhance frames, optionally recurrently")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--in", dest="in_dir", required=True)
    sp.add_argument("--steps", type=int, default=1)
    sp.add_argument("--blend", type=float, default=0.3)
    sp.add_argument("--save-steps", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("rl", "Richardson-Lucy deconvolution baseline")
    sp.add_argument("--in", dest="in_dir", required=True)
    sp.add_argument("--psf", required=True)
    sp.add_argument("--iterations", type=int, default=DEFAULT_ITERATIONS)
    sp.add_argument("--out", required=True)

    sp = add("eval", "metrics for listed frame pairs")
    sp.add_argument("--pairs", required=True)
    sp.add_argument("--roi", default=None)
    sp.add_argument("--out", required=True, help="output CSV path")

    sp = add("repro", "run the full experiment from one manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    return p


def _dispatch(a) -> int:
    if a.command == "phantom":
        return cmd_phantom(a.spec, a.out, a.count, a.seed, a.rows, a.cols)
    if a.command == "acquire":
        return cmd_acquire(a.gt, a.psf, a.noise_sigma, a.seed, a.out, a.noise_model, a.looks)
    if a.command == "mask":
        return cmd_mask(a.in_dir, a.tau, a.out)
    if a.command == "train":
        return cmd_train(a.config, a.data, a.out, a.resume, a.seed)
    if a.command == "infer":
        return cmd_infer(a.checkpoint, a.in_dir, a.steps, a.blend, a.out, a.save_steps)
    if a.command == "rl":
        return cmd_rl(a.in_dir, a.psf, a.iterations, a.out)
    if a.command == "eval":
        return cmd_eval(a.pairs, a.roi, a.out)
    return cmd_repro(a.manifest, a.out)


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = a.threads
    if threads is None and os.environ.get("OPRESS_THREADS"):
        threads = int(os.environ["OPRESS_THREADS"])
    try:
        if threads is not None:
            with threadpool_limits(limits=threads):
                return _dispatch(a)
        return _dispatch(a)
    except (OPressError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"opress {a.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
