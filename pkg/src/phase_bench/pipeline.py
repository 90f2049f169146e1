"""Experiment stages chained through artifacts on disk.

Every stage reads its inputs from the output directory, writes its own
artifacts plus a short deterministic summary under ``stages/``, and then
regenerates ``report.txt``: the configuration snapshot, every stage summary
present, and an index of all artifacts with their SHA-256 digests.
Wall-clock times go to ``timing.txt`` so the report itself stays
byte-identical across reruns.

Output layout::

    corpus/             corpus.manifest + images/*.pfm (train, test, calibration)
    psd/                radial and cross-section PSD tables, before and after premodulation
    pairs_base/         training pairs (pairs.manifest + pairs/*.pfm)
    pairs_pre/          premodulated training pairs
    models/             <variant>.ckpt and <variant>_train.csv
    calibration/        <variant>.txt
    resolution/<label>/ resolution.csv, reconstructions, cross-sections
"""

from __future__ import annotations

import hashlib
import logging
import os
import time
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version

import numpy as np

from .calibration import AffineCalibration, apply_calibration, calibrate
from .config import ExperimentConfig
from .dataset import (
    Corpus,
    build_pairs,
    ingest_directory,
    load_corpora,
    load_pairs,
    save_corpora,
    save_pairs,
    split,
    synthesize_corpus,
)
from .errors import MissingArtifactError
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.loss import npcc
from .nn.train import infer, train
from .optics import ForwardModel, preprocess
from .resolution import ResolutionReport, measure_resolution_limit, write_report_artifacts
from .spectral import estimate_psd, flattening_filter, premodulate

log = logging.getLogger(__name__)

STAGE_ORDER = ("synth", "psd", "pairs_base", "pairs_pre", "train_base", "train_pre",
               "calibrate_base", "calibrate_pre", "resolve_base", "resolve_pre", "resolve_post")
RESOLUTION_LABELS = ("base", "pre", "post")


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:  # pragma: no cover - running from a source tree
        return "unknown"


def variant(premodulated: bool) -> str:
    return "pre" if premodulated else "base"


def _require(path):
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing upstream artifact: {path}")
    return path


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Workspace:
    """Paths of every artifact under one output directory."""

    def __init__(self, root):
        self.root = os.path.abspath(root)
        os.makedirs(self.root, exist_ok=True)

    def path(self, *parts):
        return os.path.join(self.root, *parts)

    def ensure(self, *parts):
        p = self.path(*parts)
        os.makedirs(p, exist_ok=True)
        return p

    @property
    def corpus_manifest(self):
        return self.path("corpus", "corpus.manifest")

    def pairs_manifest(self, var):
        return self.path(f"pairs_{var}", "pairs.manifest")

    def checkpoint(self, var):
        return self.path("models", f"{var}.ckpt")

    def calibration(self, var):
        return self.path("calibration", f"{var}.txt")

    def resolution_dir(self, label):
        return self.path("resolution", label)

    def write_stage(self, stage, text):
        with open(os.path.join(self.ensure("stages"), f"{stage}.txt"), "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")

    def read_stage(self, stage):
        p = self.path("stages", f"{stage}.txt")
        if not os.path.exists(p):
            return None
        with open(p) as fh:
            return fh.read()

    def record_timing(self, stage, seconds):
        with open(self.path("timing.txt"), "a") as fh:
            fh.write(f"{stage} {seconds:.3f}s\n")


# ---------------------------------------------------------------------------- stages

def cmd_synth(cfg: ExperimentConfig, ws: Workspace) -> dict:
    """Create (or ingest) the corpus, split it and write the corpus manifest."""
    d = cfg.dataset
    if d.ingest_path:
        full = ingest_directory(d.ingest_path, d.n)
        header = {"source": "ingest", "path": d.ingest_path, "skipped": full.provenance["skipped"]}
    else:
        full = synthesize_corpus(d.total, d.n, d.exponent, cfg.seed)
        header = {"source": "synthetic", "exponent": repr(d.exponent)}
    total = len(full)
    if total < 3:
        raise ValueError(f"corpus of {total} images cannot be split three ways")
    counts = (d.train_count, d.test_count, d.calibration_count)
    if sum(counts) != total:
        # an ingested directory rarely matches the configured counts: keep the proportions
        scale = total / sum(counts)
        counts = tuple(max(1, int(c * scale)) for c in counts)
    fractions = tuple(c / total for c in counts)
    parts = split(full, fractions, seed=cfg.seed)
    header.update(seed=cfg.seed, n=d.n, optics=cfg.optical_config().fingerprint(),
                  premodulated=0)
    save_corpora(ws.ensure("corpus"), parts, header)
    summary = {role: len(c) for role, c in zip(("train", "test", "calibration"), parts)}
    ws.write_stage("synth", "synth " + " ".join(f"{k}={v}" for k, v in summary.items())
                   + f" source={header['source']}")
    return summary


def _load_corpora(ws):
    _, corpora = load_corpora(_require(ws.corpus_manifest))
    for role in ("train", "test", "calibration"):
        if role not in corpora:
            raise MissingArtifactError(f"corpus manifest has no {role!r} split")
    return corpora


def cmd_psd(cfg: ExperimentConfig, ws: Workspace) -> dict:
    """Power spectra of the training corpus before and after premodulation."""
    train_c = _load_corpora(ws)["train"]
    band = cfg.fit_band()
    before = estimate_psd(train_c, band=band)
    filt = flattening_filter(train_c.shape)
    after = estimate_psd([premodulate(im, filt) for im in train_c], band=band)
    out = ws.ensure("psd")
    before.radial.to_csv(os.path.join(out, "radial_original.csv"))
    after.radial.to_csv(os.path.join(out, "radial_premodulated.csv"))
    before.cross_section.to_csv(os.path.join(out, "cross_section_original.csv"))
    after.cross_section.to_csv(os.path.join(out, "cross_section_premodulated.csv"))
    result = {"exponent_original": before.exponent, "exponent_premodulated": after.exponent}
    ws.write_stage("psd", f"psd exponent_original={before.exponent:.6f} "
                          f"exponent_premodulated={after.exponent:.6f} "
                          f"band={before.fit_band[0]:.6f},{before.fit_band[1]:.6f}")
    return result


def cmd_pairs(cfg: ExperimentConfig, ws: Workspace, premodulated: bool = False) -> str:
    """Simulate (object, intensity) training pairs, optionally premodulated."""
    train_c = _load_corpora(ws)["train"]
    model = ForwardModel(cfg.optical_config())
    pairs = build_pairs(train_c, model, premodulate=premodulated)
    var = variant(premodulated)
    out = ws.ensure(f"pairs_{var}")
    path = save_pairs(out, pairs, {"seed": cfg.seed, "n": cfg.dataset.n})
    ws.write_stage(f"pairs_{var}", f"pairs_{var} count={len(pairs)} "
                                   f"premodulated={int(premodulated)}")
    return path


def cmd_train(cfg: ExperimentConfig, ws: Workspace, premodulated: bool = False):
    var = variant(premodulated)
    pairs = load_pairs(_require(ws.pairs_manifest(var)))
    if pairs.premodulated != premodulated:
        raise ValueError(f"pairs in pairs_{var} have premodulated={pairs.premodulated}")

    def progress(epoch, report):
        log.info("[%s] epoch %d/%d train %.4f val %.4f", var, epoch + 1, cfg.training.epochs,
                 report.train_loss[-1], report.val_loss[-1] if report.val_loss else float("nan"))

    start = time.perf_counter()
    net, report = train(pairs, cfg.network_config(), cfg.train_hyper(), progress=progress)
    ws.ensure("models")
    ckpt = ws.checkpoint(var)
    save_checkpoint(net, ckpt)
    report.checkpoint = os.path.relpath(ckpt, ws.root)
    with open(ws.path("models", f"{var}_train.csv"), "w") as fh:
        fh.write(report.to_text())
    final_val = report.val_loss[report.best_epoch] if report.val_loss else float("nan")
    ws.write_stage(f"train_{var}", f"train_{var} epochs={len(report.train_loss)} "
                                   f"best_epoch={report.best_epoch} "
                                   f"best_val_npcc={final_val:.6f} "
                                   f"params={net.parameter_count()}")
    ws.record_timing(f"train_{var}", time.perf_counter() - start)
    return net, report


def _outputs(net, corpus: Corpus, model: ForwardModel):
    bg = model.background()
    return np.stack([infer(net, preprocess(model.simulate(o), bg)) for o in corpus.images])


def cmd_calibrate(cfg: ExperimentConfig, ws: Workspace, premodulated: bool = False):
    """Fit the affine calibration on the calibration split; score it on the test split."""
    var = variant(premodulated)
    net = load_checkpoint(_require(ws.checkpoint(var)), expected=cfg.network_config())
    corpora = _load_corpora(ws)
    model = ForwardModel(cfg.optical_config())
    cal_c = corpora["calibration"]
    cal = calibrate(cal_c.images, _outputs(net, cal_c, model),
                    cfg.calibration.levels, cfg.calibration.tail)
    test_c = corpora["test"]
    est = apply_calibration(_outputs(net, test_c, model), cal)
    scores = [npcc(t, e) for t, e in zip(test_c.images, est)]
    test_npcc = float(np.mean(scores))
    ws.ensure("calibration")
    with open(ws.calibration(var), "w") as fh:
        fh.write(cal.record() + "\n")
        fh.write(f"test_npcc_mean={test_npcc!r} test_npcc_best={min(scores)!r}\n")
        fh.write("level_truth,level_output\n")
        for t, o in cal.sample_pairs:
            fh.write(f"{t!r},{o!r}\n")
    ws.write_stage(f"calibrate_{var}", f"calibrate_{var} a={cal.a:.6g} b={cal.b:.6g} "
                                       f"residual={cal.residual:.3g} "
                                       f"test_npcc_mean={test_npcc:.4f}")
    return cal, test_npcc


def read_calibration(path) -> AffineCalibration:
    with open(_require(path)) as fh:
        return AffineCalibration.parse(fh.readline())


def cmd_resolve(cfg: ExperimentConfig, ws: Workspace, premodulated: bool = False,
                post_filter: str | None = None) -> ResolutionReport:
    """Dot-pair resolution sweep; ``post_filter='flatten'`` filters calibrated outputs."""
    if post_filter not in (None, "flatten"):
        raise ValueError(f"unknown post filter {post_filter!r}")
    if post_filter and premodulated:
        raise ValueError("the post-filter control applies to the baseline model only")
    var = variant(premodulated)
    label = "post" if post_filter else var
    net = load_checkpoint(_require(ws.checkpoint(var)), expected=cfg.network_config())
    cal = read_calibration(ws.calibration(var))
    model = ForwardModel(cfg.optical_config())
    filt = flattening_filter(model.shape) if post_filter else None
    report = measure_resolution_limit(
        lambda g: infer(net, g), cal, model, spacings=cfg.spacings, post_filter=filt,
        threshold=cfg.resolution.threshold, label=label, amplitude=cfg.resolution.amplitude,
    )
    write_report_artifacts(report, ws.resolution_dir(label))
    ws.write_stage(f"resolve_{label}", "resolve_" + report.summary() + "\n" + "\n".join(
        f"  D={r.spacing} resolved={int(r.resolved)} votes={r.fraction:.3f} "
        f"dip_ratio={r.dip_ratio:.4f}" for r in report.rows))
    return report


@dataclass
class RunReport:
    config_text: str
    stages: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    tool: str = ""

    def limits(self):
        """``{label: limit}`` parsed from the resolution stage summaries present."""
        out = {}
        for label in RESOLUTION_LABELS:
            text = self.stages.get(f"resolve_{label}")
            if text:
                token = text.split("limit=", 1)[1].split()[0]
                out[label] = None if token == "unresolved" else int(token)
        return out

    def to_text(self) -> str:
        lines = [f"phase-bench report (version {self.tool})", "", "[config]"]
        lines.append(self.config_text.rstrip("\n"))
        lines += ["", "[stages]"]
        for stage in STAGE_ORDER:
            if stage in self.stages:
                lines.append(self.stages[stage].rstrip("\n"))
        limits = self.limits()
        if limits:
            lines += ["", "[resolution limits]"]
            for label in RESOLUTION_LABELS:
                if label in limits:
                    v = limits[label]
                    lines.append(f"{label} {'unresolved' if v is None else v}")
        lines += ["", "[artifacts]"]
        lines += [f"{digest}  {rel}" for rel, digest in self.artifacts]
        return "\n".join(lines) + "\n"


def write_report(cfg: ExperimentConfig, ws: Workspace) -> RunReport:
    stages = {s: t for s in STAGE_ORDER if (t := ws.read_stage(s)) is not None}
    artifacts = []
    for dirpath, dirnames, filenames in os.walk(ws.root):
        dirnames.sort()
        for name in sorted(filenames):
            full = os.path.join(dirpath, name)
            rel = os.path.relpath(full, ws.root)
            if rel in ("report.txt", "timing.txt") or rel.startswith("stages" + os.sep):
                continue
            artifacts.append((rel, _sha256(full)))
    artifacts.sort()
    report = RunReport(cfg.to_text(), stages, artifacts, tool_version())
    with open(ws.path("report.txt"), "w") as fh:
        fh.write(report.to_text())
    return report


def cmd_reproduce(cfg: ExperimentConfig, ws: Workspace) -> RunReport:
    """Run every stage: baseline and premodulated training plus the post-filter control."""
    steps = [
        ("synth", lambda: cmd_synth(cfg, ws)),
        ("psd", lambda: cmd_psd(cfg, ws)),
        ("pairs_base", lambda: cmd_pairs(cfg, ws, False)),
        ("pairs_pre", lambda: cmd_pairs(cfg, ws, True)),
        ("train_base", lambda: cmd_train(cfg, ws, False)),
        ("train_pre", lambda: cmd_train(cfg, ws, True)),
        ("calibrate_base", lambda: cmd_calibrate(cfg, ws, False)),
        ("calibrate_pre", lambda: cmd_calibrate(cfg, ws, True)),
        ("resolve_base", lambda: cmd_resolve(cfg, ws, False)),
        ("resolve_pre", lambda: cmd_resolve(cfg, ws, True)),
        ("resolve_post", lambda: cmd_resolve(cfg, ws, False, "flatten")),
    ]
    for name, step in steps:
        log.info("stage %s", name)
        start = time.perf_counter()
        step()
        if not name.startswith("train"):
            ws.record_timing(name, time.perf_counter() - start)
    return write_report(cfg, ws)
