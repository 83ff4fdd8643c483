"""``lightloc`` command line: one pipeline stage per subcommand, all sharing a run directory.

Each stage writes into ``<out>/<stage>/`` together with a ``manifest.json``
recording the stage config hash, input checksums and output checksums. A stage
whose manifest still matches its inputs is skipped, so reruns are idempotent
and an interrupted pipeline resumes where it stopped.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import config as cfgmod
from . import dataset, fusion, report, rsd
from .errors import InvalidConfig, InvalidSpec, LightLocError, MissingArtifact, VersionMismatch
from .experiments import fusion_observations
from .scene import generate_scene, make_backbone
from .scg import ClassifierHead, ClusterModel, build_hierarchical_labels, predict_leaves, train_classifier
from .trainer import RegressionHead, build_feature_cache, evaluate, train_scr, write_history

log = logging.getLogger("lightloc")

MANIFEST_VERSION = 1
STAGE_DIRS = {
    "generate": "scene",
    "cluster": "cluster",
    "train-classifier": "classifier",
    "train-scr": "scr",
    "localize": "localize",
    "fuse": "fuse",
    "report": "report",
}
# config sections each stage depends on (the root seed always counts)
STAGE_SECTIONS = {
    "generate": ("scene",),
    "cluster": ("scene", "classifier"),
    "train-classifier": ("scene", "backbone", "classifier"),
    "train-scr": ("scene", "backbone", "classifier", "guidance", "trainer", "rsd"),
    "localize": ("scene", "backbone", "classifier", "guidance", "trainer", "rsd", "ransac"),
    "fuse": ("scene", "backbone", "classifier", "fusion"),
    "report": (),
}


class UsageError(Exception):
    """Bad invocation: exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- run context -------------------------------------------------------------------


class Run:
    def __init__(self, out: Path, cfg: cfgmod.RunConfig, force: bool):
        self.out = out
        self.cfg = cfg
        self.force = force

    def path(self, stage: str) -> Path:
        return self.out / STAGE_DIRS[stage]

    def stage_hash(self, stage: str, extra: dict | None = None) -> str:
        keep = STAGE_SECTIONS[stage]
        lines = [ln for ln in cfgmod.render(self.cfg).splitlines()
                 if ln.startswith("seed ") or ln.split(".", 1)[0] in keep]
        if extra:
            lines.append(json.dumps(extra, sort_keys=True))
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]

    def manifest(self, stage: str) -> dict:
        path = self.path(stage) / "manifest.json"
        if not path.exists():
            raise MissingArtifact(f"{path} (run `lightloc {stage}` first)")
        m = json.loads(path.read_text())
        if m.get("manifest_version") != MANIFEST_VERSION:
            raise VersionMismatch(f"{path}: manifest version {m.get('manifest_version')}, expected {MANIFEST_VERSION}")
        return m

    def require(self, stage: str) -> dict[str, str]:
        """Upstream stage output checksums, verified against the files on disk."""
        m = self.manifest(stage)
        base = self.path(stage)
        for rel, digest in m["outputs"].items():
            p = base / rel
            if not p.exists():
                raise MissingArtifact(str(p))
            if dataset.sha256_file(p) != digest:
                raise VersionMismatch(f"{p} changed since `lightloc {stage}` wrote it; rerun that stage")
        return {f"{STAGE_DIRS[stage]}/{k}": v for k, v in m["outputs"].items()}


def _up_to_date(run: Run, stage: str, stage_hash: str, inputs: dict) -> bool:
    path = run.path(stage) / "manifest.json"
    if not path.exists():
        return False
    try:
        m = json.loads(path.read_text())
        ok = (m.get("manifest_version") == MANIFEST_VERSION and m.get("stage_hash") == stage_hash
              and m.get("inputs") == inputs)
        return ok and all(dataset.sha256_file(run.path(stage) / rel) == d for rel, d in m["outputs"].items())
    except (OSError, ValueError, KeyError):
        return False


def run_stage(run: Run, stage: str, upstream: tuple[str, ...], body, extra: dict | None = None) -> Path:
    inputs = {}
    for up in upstream:
        inputs.update(run.require(up))
    h = run.stage_hash(stage, extra)
    d = run.path(stage)
    if _up_to_date(run, stage, h, inputs):
        log.info("%s: up to date", stage)
        return d
    if d.exists() and any(d.iterdir()):
        if not run.force:
            raise UsageError(f"{d} holds results for different inputs or config; pass --force to overwrite")
        shutil.rmtree(d)
    d.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    body(d)
    elapsed = time.perf_counter() - t0
    outputs = {str(p.relative_to(d)): dataset.sha256_file(p)
               for p in sorted(d.rglob("*")) if p.is_file() and p.name != "manifest.json"}
    manifest = {"manifest_version": MANIFEST_VERSION, "stage": stage, "stage_hash": h,
                "config_hash": cfgmod.config_hash(run.cfg), "inputs": inputs, "outputs": outputs,
                "elapsed_s": elapsed}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    log.info("%s: done in %.2fs", stage, elapsed)
    return d


def _summary(path: Path, run: Run, metrics: list[tuple[str, object]]) -> None:
    h = cfgmod.config_hash(run.cfg)
    rows = [{"metric": k, "value": report.fmt(v), "config_hash": h} for k, v in metrics]
    report.write_csv_rows(path, rows, ["metric", "value", "config_hash"])


# --- shared loaders ------------------------------------------------------------------


def _backbone(run: Run):
    b = run.cfg.backbone
    return make_backbone(b.width, b.hidden, run.cfg.module_seed("backbone"))


def _frames(run: Run, split: str):
    return dataset.load_frames(run.path("generate"), split)


def _positions(frames, dim: int = 2) -> np.ndarray:
    return np.array([f.position[:dim] for f in frames])


# --- commands ------------------------------------------------------------------------


def cmd_generate(run: Run) -> None:
    d = run.path("generate")
    if run.out.exists() and any(run.out.iterdir()) and not run.force:
        raise UsageError(f"{run.out} is not empty; pass --force to regenerate")
    if d.exists():
        shutil.rmtree(d)
    run.out.mkdir(parents=True, exist_ok=True)
    (run.out / "config.txt").write_text(cfgmod.render(run.cfg))
    scene = generate_scene(run.cfg.scene_spec())
    run_stage(run, "generate", (), lambda d: dataset.write_scene(d, scene))
    print(f"generated {len(scene.frames)} train / {len(scene.test_frames)} test frames in {d}")


def cmd_cluster(run: Run) -> None:
    c = run.cfg.classifier

    def body(d: Path):
        frames = _frames(run, "train")
        model, labels = build_hierarchical_labels(_positions(frames), c.k1, c.k2, run.cfg.module_seed("cluster"))
        model.save(d / "clusters.llcm")
        report.write_csv_rows(d / "labels.csv",
                              [{"frame": f.id, "level1": int(a), "level2": int(b)} for f, (a, b) in zip(frames, labels)],
                              ["frame", "level1", "level2"])

    run_stage(run, "cluster", ("generate",), body)


def _labels(run: Run) -> np.ndarray:
    rows = report.read_csv_rows(run.path("cluster") / "labels.csv")
    return np.array([[int(r["level1"]), int(r["level2"])] for r in rows])


def cmd_train_classifier(run: Run) -> None:
    def body(d: Path):
        frames = _frames(run, "train")
        cache = build_feature_cache(frames, _backbone(run))
        labels = _labels(run)
        head = train_classifier(cache.global_, labels, run.cfg.classifier, run.cfg.module_seed("classifier"))
        head.save(d / "classifier.llch")
        pred, _, _, _ = predict_leaves(head, cache.global_)
        report.write_csv_rows(d / "history.csv", [{"epoch": i, "loss": repr(v)} for i, v in enumerate(head.history)],
                              ["epoch", "loss"])
        _summary(d / "summary.csv", run, [
            ("train_level1_accuracy", float((pred[:, 0] == labels[:, 0]).mean())),
            ("train_leaf_accuracy", float((pred == labels).all(axis=1).mean())),
            ("final_loss", head.history[-1] if head.history else float("nan")),
        ])

    run_stage(run, "train-classifier", ("generate", "cluster"), body)


def _classifier(run: Run) -> ClassifierHead:
    return ClassifierHead.load(run.path("train-classifier") / "classifier.llch")


def cmd_train_scr(run: Run) -> None:
    tc = run.cfg.train_config()
    upstream = ("generate", "train-classifier") if tc.scg else ("generate",)

    def body(d: Path):
        frames = _frames(run, "train")
        clf = _classifier(run) if tc.scg else None
        res = train_scr(frames, _backbone(run), clf, tc)
        res.head.save(d / "head.llrh")
        write_history(d / "loss_history.csv", res.history)
        rsd.write_audit(d / "rsd_audit.csv", res.audit)
        full = tc.epochs * len(frames)
        _summary(d / "summary.csv", run, [
            ("strategy", tc.strategy),
            ("guidance", tc.scg),
            ("final_loss", res.history[-1]["mean_loss"]),
            ("sample_evaluations", res.sample_evaluations),
            ("full_sample_evaluations", full),
            ("sample_evaluations_saved", full - res.sample_evaluations),
        ])

    run_stage(run, "train-scr", upstream, body)


def cmd_localize(run: Run, oracle: bool) -> None:
    scg = run.cfg.guidance.enabled
    upstream = ("generate",) if oracle else (("generate", "train-scr", "train-classifier") if scg else ("generate", "train-scr"))

    def body(d: Path):
        frames = _frames(run, "test")
        if oracle:
            res = evaluate(None, None, None, frames, run.cfg.ransac_params(), oracle=True)
        else:
            head = RegressionHead.load(run.path("train-scr") / "head.llrh")
            clf = _classifier(run) if head.guidance_dim else None
            res = evaluate(head, _backbone(run), clf, frames, run.cfg.ransac_params())
        fields = ["frame", "status", "position_error", "orientation_error", "inliers", "points"]
        report.write_csv_rows(d / "per_frame.csv", [{k: report.fmt(r[k]) for k in fields} for r in res.rows], fields)
        _summary(d / "summary.csv", run, [
            ("mode", "oracle" if oracle else "regressor"),
            ("frames", len(frames)),
            ("failures", res.failures),
            ("median_position_error_m", res.median_position),
            ("mean_position_error_m", res.mean_position),
            ("median_orientation_error_deg", res.median_orientation),
            ("mean_orientation_error_deg", res.mean_orientation),
        ])

    run_stage(run, "localize", upstream, body, extra={"oracle": oracle})


def cmd_fuse(run: Run) -> None:
    def body(d: Path):
        frames = _frames(run, "test")
        gt = _positions(frames, 3)
        clf = _classifier(run)
        model = ClusterModel.load(run.path("cluster") / "clusters.llcm")
        cache = build_feature_cache(frames, _backbone(run))
        obs = fusion_observations(clf, model, cache.global_)
        steps = fusion.simulate_odometry(gt, run.cfg.drift_spec(), run.cfg.module_seed("odometry"))
        res = fusion.run_fusion(gt, steps, obs, run.cfg.fusion_config())
        for name, traj in (("gt", res.gt), ("raw", res.raw), ("fused", res.fused)):
            fusion.write_trajectory(d / f"{name}.csv", traj)
        err = np.linalg.norm(np.array([o.z for o in obs]) - gt, axis=1)
        conf = np.array([o.confidence for o in obs])
        report.write_csv_rows(d / "observations.csv",
                              [{"t": t, "confidence": repr(float(c)), "observation_error": repr(float(e))}
                               for t, (c, e) in enumerate(zip(conf, err))], ["t", "confidence", "observation_error"])
        rho = spearmanr(conf, err).statistic if np.ptp(conf) > 0 else float("nan")
        _summary(d / "summary.csv", run, [
            ("terminal_drift_m", float(np.linalg.norm(res.raw[-1] - res.gt[-1]))),
            ("raw_mean_position_error_m", res.raw_error),
            ("fused_mean_position_error_m", res.fused_error),
            ("improvement_pct", res.improvement),
            ("confidence_error_spearman", float(rho)),
        ])

    run_stage(run, "fuse", ("generate", "cluster", "train-classifier"), body)


def cmd_report(run: Run) -> None:
    rows, plots = report.build_report(run.out)
    d = run.path("report")
    if d.exists():
        shutil.rmtree(d)
    d.mkdir(parents=True)
    report.write_csv_rows(d / "summary.csv", rows, report.SUMMARY_FIELDS)
    (d / "summary.md").write_text(report.markdown_table(rows))
    for name, svg in plots.items():
        (d / name).write_text(svg)
    # wall-clock times are kept apart so the report itself stays bit-identical
    timings = []
    for stage in STAGE_DIRS:
        m = run.path(stage) / "manifest.json"
        if stage != "report" and m.exists():
            timings.append({"stage": stage, "elapsed_s": f"{json.loads(m.read_text())['elapsed_s']:.3f}"})
    report.write_csv_rows(run.out / "timings.csv", timings, ["stage", "elapsed_s"])
    print(report.markdown_table(rows), end="")


# --- entry point ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file (default: <out>/config.txt if present)")
    common.add_argument("--seed", type=int, metavar="N", help="root seed, overrides the config")
    common.add_argument("--out", metavar="DIR", required=True, help="run directory")
    common.add_argument("--force", action="store_true", help="overwrite existing results")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p = _Parser(prog="lightloc", description="Scene coordinate regression localization pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in STAGE_DIRS:
        sp = sub.add_parser(name, parents=[common])
        if name == "localize":
            sp.add_argument("--oracle", action="store_true", help="use ground-truth coordinates instead of the head")
    return p


def resolve_config(args) -> cfgmod.RunConfig:
    out = Path(args.out)
    if args.config:
        try:
            cfg = cfgmod.load(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    elif (out / "config.txt").exists() and args.command != "generate":
        cfg = cfgmod.load(out / "config.txt")
    else:
        cfg = cfgmod.RunConfig()
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = cfgmod._parse_value(value.strip(), key.strip())
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfgmod.apply_overrides(cfg, overrides).validate()


def _setup_logging() -> None:
    level = os.environ.get("LIGHTLOC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        run = Run(Path(args.out), resolve_config(args), args.force)
        dispatch = {
            "generate": cmd_generate,
            "cluster": cmd_cluster,
            "train-classifier": cmd_train_classifier,
            "train-scr": cmd_train_scr,
            "localize": lambda r: cmd_localize(r, args.oracle),
            "fuse": cmd_fuse,
            "report": cmd_report,
        }
        dispatch[args.command](run)
    except (UsageError, InvalidConfig, InvalidSpec) as exc:
        print(f"lightloc: error: {exc}", file=sys.stderr)
        return 1
    except (LightLocError, OSError) as exc:
        print(f"lightloc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
