"""CSV/SVG report emission over run directories, plus the layer-set sweep.

A run directory is whatever the CLI (or the library calls it wraps) wrote:
``train_log.csv`` and ``train_eval.csv`` from distillation, ``probe.csv``
from probing, ``layer_weights.csv`` from the layer analysis,
``profile.csv`` from profiling, and per-set subdirectories from a sweep.
``emit_report`` turns those into figures; identical inputs give identical
output bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import Checkpoint
from .corpus import Corpus
from .distill import validate_layer_set
from .errors import DataError, ParameterError
from .models import EncoderConfig
from .probe import ProbeTask, train_probe
from .svg import heatmap, line_chart, scatter_chart
from .training import TrainConfig, export_csv, export_eval_csv, run_distillation

SWEEP_LAYER_SETS: Tuple[Tuple[int, ...], ...] = (
    (4,), (8,), (12,), (4, 8), (4, 12), (8, 12), (4, 8, 12))

FIGURES = ("loss", "layer-weights", "size-vs-accuracy", "sweep")


def _read_csv(path: Path) -> Tuple[List[str], List[List[str]]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def write_probe_csv(path, results) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["task", "accuracy", "steps", "seed"])
        for r in results:
            w.writerow([r.task.kind, repr(r.accuracy), r.steps, r.seed])
    return path


def write_layer_weights_csv(path, importances) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["task", "representation", "importance"])
        for li in importances:
            for label, v in zip(li.labels, li.importance):
                w.writerow([li.task.kind, label, repr(float(v))])
    return path


def emit_loss_figure(run_dir: Path, out_dir: Path) -> Path:
    src = run_dir / "train_log.csv"
    if not src.exists():
        raise DataError(f"loss figure needs {src}, which is missing")
    header, rows = _read_csv(src)
    steps = [float(r[header.index("step")]) for r in rows]
    series = [("total", steps, [float(r[header.index("loss_total")]) for r in rows])]
    for i, col in enumerate(header):
        if col.startswith("loss_l1_") or col.startswith("loss_cos_"):
            series.append((col.removeprefix("loss_"), steps, [float(r[i]) for r in rows]))
    out = out_dir / "loss_curves.svg"
    out.write_text(line_chart(series, "Distillation loss", "step", "loss"), encoding="utf-8")
    return out


def emit_layer_weights_figure(run_dir: Path, out_dir: Path) -> Path:
    src = run_dir / "layer_weights.csv"
    if not src.exists():
        raise DataError(f"layer-weights figure needs {src}, which is missing")
    header, rows = _read_csv(src)
    tasks: List[str] = []
    reps: List[str] = []
    vals: Dict[Tuple[str, str], float] = {}
    for task, rep, imp in rows:
        if task not in tasks:
            tasks.append(task)
        if rep not in reps:
            reps.append(rep)
        vals[(task, rep)] = float(imp)
    matrix = [[vals.get((t, r), 0.0) for r in reps] for t in tasks]
    out = out_dir / "layer_weights.svg"
    out.write_text(heatmap(matrix, tasks, reps, "Normalized summary-weight importance"),
                   encoding="utf-8")
    return out


def emit_size_accuracy_figure(run_dir: Path, out_dir: Path) -> Path:
    """Scatter of parameter count vs probe accuracy from paired run subdirs.

    Expects subdirectories each containing ``profile_entry.csv``
    (model,params_millions) and ``probe.csv``.
    """
    points = []
    missing = []
    for sub in sorted(p for p in run_dir.iterdir() if p.is_dir()):
        pe = sub / "profile_entry.csv"
        pr = sub / "probe.csv"
        if not pe.exists() or not pr.exists():
            missing.extend(str(p) for p in (pe, pr) if not p.exists())
            continue
        _h, rows = _read_csv(pe)
        name, params = rows[0][0], float(rows[0][1])
        _h2, prows = _read_csv(pr)
        acc = float(np.mean([float(r[1]) for r in prows]))
        points.append((name, params, acc))
    if not points:
        raise DataError(f"size-vs-accuracy figure: no usable run subdirectories in {run_dir}"
                        + (f"; missing {missing}" if missing else ""))
    out = out_dir / "size_vs_accuracy.svg"
    out.write_text(scatter_chart(points, "Model size vs probe accuracy",
                                 "parameters (millions)", "accuracy"), encoding="utf-8")
    return out


def layer_set_name(layers: Sequence[int]) -> str:
    return "set_" + "_".join(str(l) for l in layers)


def emit_sweep_table(run_dir: Path, out_dir: Path) -> Path:
    """One comparison row per predicted-layer set found under ``run_dir``."""
    subs = sorted(p for p in run_dir.iterdir() if p.is_dir() and p.name.startswith("set_"))
    if not subs:
        raise DataError(f"sweep table: no set_* run directories in {run_dir}")
    missing = [str(sub / n) for sub in subs for n in ("train_log.csv", "probe.csv")
               if not (sub / n).exists()]
    if missing:
        raise DataError(f"sweep table: missing inputs {missing}")
    rows_out = []
    task_names: List[str] = []
    for sub in subs:
        layers = ", ".join(sub.name.split("_")[1:])
        header, rows = _read_csv(sub / "train_log.csv")
        final_loss = float(rows[-1][header.index("loss_total")])
        _h, prows = _read_csv(sub / "probe.csv")
        accs = {r[0]: float(r[1]) for r in prows}
        for t in accs:
            if t not in task_names:
                task_names.append(t)
        rows_out.append((layers, final_loss, accs))
    out = out_dir / "sweep_table.csv"
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["predicted_layers", "final_loss"] + [f"{t}_acc" for t in task_names])
        for layers, final_loss, accs in rows_out:
            w.writerow([layers, repr(final_loss)] + [repr(accs.get(t, float("nan")))
                                                     for t in task_names])
    return out


def emit_report(run_dir, out_dir=None, figures: Optional[Sequence[str]] = None) -> List[Path]:
    """Render the requested figures (default: everything derivable)."""
    run_dir = Path(run_dir)
    if not run_dir.exists():
        raise DataError(f"run directory {run_dir} does not exist")
    out_dir = Path(out_dir) if out_dir is not None else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = list(figures) if figures else None
    for f in wanted or []:
        if f not in FIGURES:
            raise ParameterError(f"unknown figure {f!r}; available: {', '.join(FIGURES)}")
    emitters = {"loss": emit_loss_figure, "layer-weights": emit_layer_weights_figure,
                "size-vs-accuracy": emit_size_accuracy_figure, "sweep": emit_sweep_table}
    produced: List[Path] = []
    errors: List[str] = []
    for name in (wanted or FIGURES):
        try:
            produced.append(emitters[name](run_dir, out_dir))
        except DataError as e:
            if wanted:
                raise
            errors.append(str(e))
    if not produced:
        raise DataError("no figures could be produced: " + " | ".join(errors))
    return produced


# layer-set sweep ---------------------------------------------------------------

def run_layer_sweep(teacher_ckpt: Checkpoint, student_config: EncoderConfig,
                    corpus: Corpus, out_dir, train_cfg: TrainConfig,
                    layer_sets: Sequence[Sequence[int]] = SWEEP_LAYER_SETS,
                    probe_tasks: Optional[Sequence[ProbeTask]] = None,
                    probe_steps: int = 400, lam: float = 1.0) -> Path:
    """Distill once per predicted-layer set, probe each, emit the comparison.

    ``student_config`` supplies the architecture; its head spec is replaced
    per set.  Teacher features are cached across the runs.
    """
    from dataclasses import replace

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if probe_tasks is None:
        probe_tasks = [ProbeTask(kind="speaker", arity=corpus.label_arity("speaker")),
                       ProbeTask(kind="content", arity=corpus.label_arity("content")),
                       ProbeTask(kind="intent", arity=corpus.label_arity("intent"))]
    cache: Dict[int, Dict[int, np.ndarray]] = {}
    for layers in layer_sets:
        spec = validate_layer_set(layers, teacher_ckpt.encoder_config.num_transformer_layers,
                                  lam=lam)
        cfg = replace(student_config, head_spec=tuple(spec.predicted_layers))
        sub = out_dir / layer_set_name(spec.predicted_layers)
        sub.mkdir(parents=True, exist_ok=True)
        ckpt, log = run_distillation(teacher_ckpt, cfg, spec, train_cfg, corpus,
                                     teacher_cache=cache)
        from .checkpoint import save
        from .distill import strip_heads

        save(ckpt, sub / "student.dkd")
        stripped = strip_heads(ckpt)
        save(stripped, sub / "student_stripped.dkd")
        export_csv(log, sub / "train_log.csv")
        export_eval_csv(log, sub / "train_eval.csv")
        results = [train_probe(stripped, t, corpus, steps=probe_steps, seed=train_cfg.seed)
                   for t in probe_tasks]
        write_probe_csv(sub / "probe.csv", results)
    return emit_sweep_table(out_dir, out_dir)
