"""Model size and inference-speed accounting.

Wall-clock numbers are hardware-bound, so the contract here is the
protocol: full-corpus feature extraction at a stated batch size, repeated
``runs`` times, reported per run and as a mean, with ratios against a
declared reference model.  Parameter and MAC counts are analytic.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .checkpoint import Checkpoint, encoder_from_checkpoint
from .corpus import Corpus
from .errors import DataError, ParameterError
from .models import count_flops, count_params, forward_all_layers


@dataclass
class ProfileReport:
    name: str
    params: int
    param_ratio: float  # vs reference
    run_seconds: List[float]
    mean_seconds: float
    speedup: float  # reference mean / own mean
    flops: int
    flop_ratio: float  # reference flops / own flops
    batch: int
    threads: int


def _thread_count() -> int:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        v = os.environ.get(var)
        if v:
            try:
                return int(v)
            except ValueError:
                pass
    return os.cpu_count() or 1


def profile(models: Sequence[Tuple[str, Checkpoint]], corpus: Corpus, runs: int = 3,
            batch: int = 1, reference: int = 0) -> List[ProfileReport]:
    """Time full-corpus feature extraction for each model.

    ``batch`` is the number of utterances per forward call; the reference
    protocol uses one.  ``models`` are (name, checkpoint) pairs; ratios are
    against ``models[reference]``.
    """
    if runs < 1:
        raise ParameterError(f"runs must be >= 1, got {runs}")
    if len(corpus) == 0:
        raise DataError("cannot profile against an empty corpus")
    if not models:
        raise ParameterError("no models to profile")

    waves = [corpus.wave(u.id) for u in corpus.utterances]
    t_typ = int(np.median([len(w) for w in waves]))
    rows = []
    for name, ckpt in models:
        enc = encoder_from_checkpoint(ckpt, frozen=True)
        times = []
        for _run in range(runs):
            t0 = time.perf_counter()
            for lo in range(0, len(waves), batch):
                for w in waves[lo:lo + batch]:
                    forward_all_layers(enc, w)
            times.append(time.perf_counter() - t0)
        rows.append((name, ckpt, times))

    ref_params = count_params(rows[reference][1].encoder_config)
    ref_flops = count_flops(rows[reference][1].encoder_config, t_typ)
    ref_mean = float(np.mean(rows[reference][2]))
    reports = []
    for name, ckpt, times in rows:
        params = count_params(ckpt.encoder_config)
        flops = count_flops(ckpt.encoder_config, t_typ)
        mean_s = float(np.mean(times))
        reports.append(ProfileReport(
            name=name, params=params, param_ratio=params / ref_params,
            run_seconds=[float(t) for t in times], mean_seconds=mean_s,
            speedup=ref_mean / mean_s if mean_s > 0 else float("inf"),
            flops=flops, flop_ratio=ref_flops / flops if flops else float("inf"),
            batch=batch, threads=_thread_count()))
    return reports


def report_csv(reports: Sequence[ProfileReport], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "params_millions", "param_ratio", "inf_time_s",
                    "speedup", "flop_ratio", "runs", "batch", "threads", "per_run_s"])
        for r in reports:
            w.writerow([r.name, f"{r.params / 1e6:.2f}", f"{r.param_ratio:.4f}",
                        f"{r.mean_seconds:.3f}", f"{r.speedup:.2f}", f"{r.flop_ratio:.2f}",
                        len(r.run_seconds), r.batch, r.threads,
                        ";".join(f"{t:.3f}" for t in r.run_seconds)])
    return path


def format_table(reports: Sequence[ProfileReport]) -> str:
    """Aligned text table: model, parameter millions (ratio), time (speedup)."""
    header = ("Model", "# param. Millions", "Inf. time seconds")
    lines = []
    for r in reports:
        lines.append((r.name,
                      f"{r.params / 1e6:.2f} ({r.param_ratio * 100:.0f}%)",
                      f"{r.mean_seconds:.2f} ({r.speedup:.2f}X)"))
    widths = [max(len(row[i]) for row in [header, *lines]) for i in range(3)]
    out = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(header))]
    out.append("  ".join("-" * w for w in widths))
    for row in lines:
        out.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)))
    return "\n".join(out) + "\n"
