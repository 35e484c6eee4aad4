"""End-to-end robustness experiment: data -> split -> train -> attack sweep -> report."""
from __future__ import annotations

import contextlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..attacks import AttackConfig, evaluate_under_attack
from ..exceptions import ConfigurationError
from ..model import HybridClassifier, accuracy, save_checkpoint
from ..xpress import expressibility
from .config import ExperimentConfig
from .data import PatchDataset, export_adversarial, generate_synthetic, load_directory, load_feature_csv, split
from .report import ReportRow, emit_report

log = logging.getLogger(__name__)

_COLUMN = {"fgsm": "acc_fgm", "deepfool": "acc_deepfool", "pgd": "acc_pgd"}


@dataclass
class ExperimentResult:
    rows: list[ReportRow]
    model: HybridClassifier
    clean_accuracy: float
    attack_accuracy: dict[tuple[str, float], float] = field(default_factory=dict)
    paths: dict[str, Path] = field(default_factory=dict)


@contextlib.contextmanager
def output_lock(directory: Path):
    """Exclusive lock file so only one experiment writes to ``directory``."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigurationError(f"{directory} is locked by another experiment ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def load_data(config: ExperimentConfig) -> PatchDataset:
    spec = config.data
    if spec.source == "synthetic":
        return generate_synthetic(spec.count, spec.height, spec.width, seed=config.seed)
    if spec.source == "directory":
        return load_directory(spec.path)
    return load_feature_csv(spec.path)


def build_model(config: ExperimentConfig) -> HybridClassifier:
    m, t = config.model, config.train
    return HybridClassifier(
        computation_type=m.computation_type, extractor=m.extractor, template=m.template,
        hidden_dim=m.hidden_dim, conv_channels=m.conv_channels, extractor_dim=m.extractor_dim,
        epochs=t.epochs, batch_size=t.batch_size, learning_rate=t.learning_rate,
        optimizer=t.optimizer, random_state=config.seed,
    )


def run_experiment(config: ExperimentConfig, out: str | os.PathLike | None = None) -> ExperimentResult:
    """Run the full protocol and write ``report.csv``, ``model.ckpt`` and ``history.json``.

    Only the test split is attacked. On failure the rows finished so far are
    written followed by a failure marker row, and the error propagates.
    """
    out_dir = Path(out if out is not None else config.out)
    rows: list[ReportRow] = []
    with output_lock(out_dir):
        report_path = out_dir / "report.csv"
        try:
            return _run(config, out_dir, rows, report_path)
        except Exception as exc:
            emit_report(rows, report_path, failure=f"{type(exc).__name__}: {exc}")
            raise


def _run(config, out_dir, rows, report_path) -> ExperimentResult:
    data = split(load_data(config), config.train.split, seed=config.seed)
    X_tr, y_tr = data.subset("train")
    X_te, y_te = data.subset("test")
    eval_set = data.subset("val") if "val" in data.split_sizes() else None
    log.info("data %s, splits %s", data.provenance, data.split_sizes())

    model = build_model(config).fit(X_tr, y_tr, eval_set=eval_set)
    clean = accuracy(model, X_te, y_te)
    log.info("clean test accuracy %.4f", clean)

    vqc = kl = n_qubits = None
    if model.is_hybrid:
        tmpl = model.template_
        vqc, n_qubits = tmpl.template_id, tmpl.n_qubits
        kl = expressibility(tmpl, config.expressibility.samples, config.expressibility.bins,
                            seed=config.seed).kl

    sweep = config.attacks
    acc: dict[tuple[str, float], float] = {}
    for eps in sweep.epsilons:
        cols = {}
        for kind in sweep.kinds:
            cfg = AttackConfig(kind, eps, sweep.pgd_steps, sweep.pgd_alpha, sweep.pgd_random_start,
                               sweep.deepfool_max_iter, sweep.deepfool_overshoot, seed=config.seed)
            res = evaluate_under_attack(model, X_te, y_te, cfg)
            acc[(kind, eps)] = res.accuracy
            cols[_COLUMN[kind]] = 100.0 * res.accuracy
            log.info("%s eps=%g accuracy %.4f", kind, eps, res.accuracy)
            if config.export_ppm and X_te.ndim == 4:
                export_adversarial(out_dir / "adversarial" / f"{kind}_eps{eps:g}",
                                   X_te, res.batch.perturbed, y_te)
        rows.append(ReportRow(
            model=config.name, comp_type=model.computation_type, n_images=len(data),
            clean_acc=100.0 * clean, vqc=vqc, expressibility=kl, n_qubits=n_qubits, epsilon=eps,
            acc_fgm=cols.get("acc_fgm"), acc_deepfool=cols.get("acc_deepfool"), acc_pgd=cols.get("acc_pgd"),
        ))

    paths = {"report": report_path, "checkpoint": out_dir / "model.ckpt", "history": out_dir / "history.json"}
    emit_report(rows, report_path)
    save_checkpoint(model, paths["checkpoint"])
    paths["history"].write_text(json.dumps(model.history_, indent=2, sort_keys=True) + "\n")
    (out_dir / "config.json").write_text(config.dumps())
    return ExperimentResult(rows, model, clean, acc, paths)
