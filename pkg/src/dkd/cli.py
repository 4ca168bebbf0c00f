"""Command-line surface.

Subcommands: gen-corpus, distill, strip-heads, probe, analyze-layers,
profile, grad-check, report.  Every subcommand accepts ``--seed``,
``--config <file>`` (JSON) and ``--out <dir>``; sensible desk-scale
defaults apply when a config file is omitted.  Exit codes: 0 success,
1 validation error (bad flags, bad configs, bad values), 2 runtime failure
(corrupt files, NaNs, missing data).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import models
from .checkpoint import checkpoint_from_encoder, load, save
from .corpus import generate_corpus, load_corpus
from .distill import strip_heads, validate_layer_set
from .errors import DataError, ParameterError
from .gradcheck import run_primitive_checks
from .probe import ProbeTask, analyze_layer_weights, train_probe
from .profiling import format_table, profile, report_csv
from .report import emit_report, write_layer_weights_csv, write_probe_csv
from .training import TrainConfig, export_csv, export_eval_csv, run_distillation


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ParameterError(f"config file {p} does not exist")
    return json.loads(p.read_text(encoding="utf-8"))


def _parse_layers(text: str):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip() != "")
    except ValueError:
        raise ParameterError(f"--layers expects comma-separated integers, got {text!r}") from None


def _out_dir(args, default: str) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _common(sub: argparse.ArgumentParser):
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--config", default=None, help="JSON config file")
    sub.add_argument("--out", default=None, help="output directory")


def cmd_gen_corpus(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args, "runs/corpus")
    corpus = generate_corpus(
        seed=args.seed,
        n_speakers=int(cfg.get("n_speakers", 8)),
        n_contents=int(cfg.get("n_contents", 8)),
        n_intents=int(cfg.get("n_intents", 4)),
        utterances_per_cell=int(cfg.get("utterances_per_cell", 4)),
        duration_s=float(cfg.get("duration_s", 1.0)),
        out_dir=out)
    print(f"wrote {len(corpus)} utterances "
          f"({corpus.samples.size / 16000 / 60:.1f} min) to {out}")
    return 0


def _teacher_from_config(cfg: dict, out: Path, seed: int):
    if "teacher_ckpt" in cfg:
        return load(cfg["teacher_ckpt"])
    if "teacher" in cfg:
        tcfg = models.EncoderConfig.from_dict(cfg["teacher"])
    else:
        tcfg = models.desk_teacher_config()
    enc = models.build(tcfg, seed=int(cfg.get("teacher_seed", seed))).freeze()
    ckpt = checkpoint_from_encoder(enc)
    save(ckpt, out / "teacher.dkd")
    return ckpt


def cmd_distill(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args, "runs/distill")
    teacher_ckpt = _teacher_from_config(cfg, out, args.seed)
    teacher_layers = teacher_ckpt.encoder_config.num_transformer_layers

    layers = _parse_layers(args.layers) if args.layers else tuple(
        cfg.get("layers", [] if "student" in cfg else None)
        or _default_layers(teacher_layers))
    lam = 0.0 if args.no_cos else (args.lam if args.lam is not None
                                   else float(cfg.get("lambda", 1.0)))
    spec = validate_layer_set(layers, teacher_layers, lam=lam)

    if "student" in cfg:
        student_cfg = models.EncoderConfig.from_dict(cfg["student"])
        if student_cfg.head_spec is None or set(student_cfg.head_spec) != set(spec.predicted_layers):
            from dataclasses import replace
            student_cfg = replace(student_cfg, head_spec=tuple(spec.predicted_layers))
    else:
        from dataclasses import replace
        student_cfg = replace(teacher_ckpt.encoder_config, num_transformer_layers=2,
                              head_spec=tuple(spec.predicted_layers))

    train_kwargs = dict(cfg.get("train", {}))
    train_kwargs.setdefault("total_updates", 2000)
    train_kwargs.setdefault("batch_size", 8)
    train_kwargs["seed"] = args.seed
    train_cfg = TrainConfig(**train_kwargs)

    corpus = load_corpus(cfg.get("corpus", "runs/corpus"))
    ckpt, log = run_distillation(teacher_ckpt, student_cfg, spec, train_cfg, corpus,
                                 teacher_init=not args.no_teacher_init,
                                 freeze_frontend=not args.unfreeze_frontend)
    save(ckpt, out / "student.dkd")
    export_csv(log, out / "train_log.csv")
    export_eval_csv(log, out / "train_eval.csv")
    print(f"distilled {spec.predicted_layers} for {train_cfg.total_updates} steps; "
          f"final loss {log.records[-1].loss_total:.4f}; wrote {out / 'student.dkd'}")
    return 0


def _default_layers(teacher_layers: int):
    if teacher_layers >= 12:
        return (4, 8, 12)
    if teacher_layers >= 6:
        return (2, 4, 6)
    return tuple(range(1, teacher_layers + 1))


def cmd_strip_heads(args) -> int:
    cfg = _load_config(args.config)
    src = args.input or cfg.get("ckpt")
    if not src:
        raise ParameterError("strip-heads needs --in <checkpoint> (or config key 'ckpt')")
    out = _out_dir(args, "runs/strip")
    ckpt = load(src)
    stripped = strip_heads(ckpt)
    dst = out / (Path(src).stem + "_stripped.dkd")
    save(stripped, dst)
    print(f"stripped {ckpt.param_count() - stripped.param_count()} head scalars; wrote {dst}")
    return 0


def cmd_probe(args) -> int:
    cfg = _load_config(args.config)
    src = args.input or cfg.get("ckpt")
    if not src:
        raise ParameterError("probe needs --in <checkpoint> (or config key 'ckpt')")
    out = _out_dir(args, "runs/probe")
    corpus = load_corpus(cfg.get("corpus", "runs/corpus"))
    kinds = cfg.get("tasks", [cfg.get("task", "speaker")])
    steps = int(cfg.get("steps", 1000))
    upstream = load(src)
    results = []
    for kind in kinds:
        task = ProbeTask(kind=kind, arity=corpus.label_arity(kind))
        res = train_probe(upstream, task, corpus, steps=steps, seed=args.seed,
                          shuffled_labels=bool(cfg.get("shuffled_labels", False)))
        results.append(res)
        print(f"{kind}: accuracy {res.accuracy:.3f} "
              f"(steps {res.steps}, train {res.n_train}, test {res.n_test})")
    write_probe_csv(out / "probe.csv", results)
    # size entry so probe run dirs feed the size-vs-accuracy report
    name = cfg.get("name", Path(src).stem)
    (out / "profile_entry.csv").write_text(
        f"model,params_millions\n{name},{upstream.param_count() / 1e6!r}\n", encoding="utf-8")
    return 0


def cmd_analyze_layers(args) -> int:
    cfg = _load_config(args.config)
    src = args.input or cfg.get("ckpt")
    if not src:
        raise ParameterError("analyze-layers needs --in <checkpoint> (or config key 'ckpt')")
    out = _out_dir(args, "runs/analyze")
    corpus = load_corpus(cfg.get("corpus", "runs/corpus"))
    kinds = cfg.get("tasks", ["speaker", "content", "intent"])
    tasks = [ProbeTask(kind=k, arity=corpus.label_arity(k)) for k in kinds]
    imps = analyze_layer_weights(load(src), tasks, corpus,
                                 steps=int(cfg.get("steps", 1000)), seed=args.seed,
                                 norm_mode=cfg.get("norm_mode", "multiply"))
    write_layer_weights_csv(out / "layer_weights.csv", imps)
    emit_report(out, out, figures=["layer-weights"])
    print(f"wrote {out / 'layer_weights.csv'} and layer_weights.svg")
    return 0


def cmd_profile(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args, "runs/profile")
    entries = cfg.get("models")
    if not entries and args.input:
        entries = [{"name": Path(p).stem, "ckpt": p} for p in args.input.split(",")]
    if not entries:
        raise ParameterError("profile needs config key 'models' or --in ckpt1,ckpt2,...")
    corpus = load_corpus(cfg.get("corpus", "runs/corpus"))
    models_list = [(e["name"], load(e["ckpt"])) for e in entries]
    reports = profile(models_list, corpus, runs=int(cfg.get("runs", 3)),
                      batch=int(cfg.get("batch", 1)), reference=int(cfg.get("reference", 0)))
    report_csv(reports, out / "profile.csv")
    table = format_table(reports)
    (out / "profile_table.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_grad_check(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args, "runs/gradcheck")
    tol = float(cfg.get("tolerance", 1e-5))
    results = run_primitive_checks(seed=args.seed, step=float(cfg.get("step", 1e-5)))
    lines = ["op,max_rel_err,mean_rel_err,ok"]
    worst = 0.0
    for name in sorted(results):
        r = results[name]
        worst = max(worst, r.max_rel_err)
        lines.append(f"{name},{r.max_rel_err!r},{r.mean_rel_err!r},{int(r.ok(tol))}")
    (out / "gradcheck.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    bad = [n for n, r in results.items() if not r.ok(tol)]
    print(f"checked {len(results)} primitives; worst max rel err {worst:.2e}")
    if bad:
        raise DataError(f"gradient checks failed for: {', '.join(sorted(bad))}")
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args.config)
    src = args.input or cfg.get("run_dir")
    if not src:
        raise ParameterError("report needs --in <run dir> (or config key 'run_dir')")
    out = Path(args.out) if args.out else Path(src)
    produced = emit_report(src, out, figures=[args.fig] if args.fig else None)
    for p in produced:
        print(f"wrote {p}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="dkd", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-corpus", help="generate the synthetic corpus")
    _common(p)
    p.set_defaults(fn=cmd_gen_corpus)

    p = subs.add_parser("distill", help="train a student against a frozen teacher")
    _common(p)
    p.add_argument("--layers", default=None, help="predicted teacher layers, e.g. 4,8,12")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="cosine-loss weight (default 1.0)")
    p.add_argument("--no-cos", action="store_true", help="drop the cosine term (lambda=0)")
    p.add_argument("--no-teacher-init", action="store_true",
                   help="random student init instead of copying the teacher")
    p.add_argument("--unfreeze-frontend", action="store_true",
                   help="let the copied conv front-end train")
    p.set_defaults(fn=cmd_distill)

    p = subs.add_parser("strip-heads", help="remove prediction heads from a checkpoint")
    _common(p)
    p.add_argument("--in", dest="input", default=None, help="input checkpoint")
    p.set_defaults(fn=cmd_strip_heads)

    p = subs.add_parser("probe", help="frozen-upstream probe on a synthetic task")
    _common(p)
    p.add_argument("--in", dest="input", default=None, help="upstream checkpoint")
    p.set_defaults(fn=cmd_probe)

    p = subs.add_parser("analyze-layers", help="summary-weight importance per task")
    _common(p)
    p.add_argument("--in", dest="input", default=None, help="upstream checkpoint (with heads)")
    p.set_defaults(fn=cmd_analyze_layers)

    p = subs.add_parser("profile", help="size and inference-speed accounting")
    _common(p)
    p.add_argument("--in", dest="input", default=None, help="comma-separated checkpoints")
    p.set_defaults(fn=cmd_profile)

    p = subs.add_parser("grad-check", help="finite-difference verification of the autodiff")
    _common(p)
    p.set_defaults(fn=cmd_grad_check)

    p = subs.add_parser("report", help="emit CSV/SVG figures from run directories")
    _common(p)
    p.add_argument("--in", dest="input", default=None, help="run directory")
    p.add_argument("--fig", default=None, help="loss | layer-weights | size-vs-accuracy | sweep")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except RuntimeError as e:
        print(f"failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
