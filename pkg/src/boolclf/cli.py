"""Command-line pipeline for composing and evaluating expression classifiers.

Subcommands cover the whole workflow: synth -> splits -> train-primitives ->
calibrate -> train -> finetune-cnf -> eval / sweep, plus score, convert-cnf
and gradcheck utilities.  Every command writes a run manifest describing its
inputs, outputs, seed and effective configuration; wall time goes into a
separate timing file so artifact bytes are reproducible.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .algebra import (
    assign_params,
    compose,
    compose_backward,
    flatten_grads,
    flatten_params,
    g_and,
    g_not,
    g_or,
    init_composition_net,
    score_batch,
    symmetry_statistic,
)
from .datakit import (
    FilterConfig,
    SplitConfig,
    canonical_json,
    enumerate_binary,
    expr_label,
    load_bank,
    load_dataset,
    load_net,
    load_split,
    make_splits,
    save_bank,
    save_dataset,
    save_net,
    save_split,
    synth_generate,
    SyntheticConfig,
    ensure_digest,
)
from .errors import (
    BoolclfError,
    DegenerateFeaturesError,
    DigestMismatchError,
    ExprSyntaxError,
    FormatError,
    InfeasibleSplitError,
    InsufficientExamplesError,
    InsufficientPrimitivesError,
    InvalidCorrelationError,
    MissingCalibrationError,
    MissingPrimitiveError,
    NoConvergenceError,
    NonFiniteGradientError,
    NonFiniteLossError,
    NoPositivesError,
    ShapeMismatchError,
    SingleClassError,
    SizeExceededError,
    UnknownExpressionError,
    UnknownPrimitiveError,
    VersionMismatchError,
)
from .evalkit import (
    ChanceScorer,
    ComposedScorer,
    IndependentScorer,
    baseline_supervised,
    complexity_sweep,
    evaluate,
)
from .exprlang import (
    And,
    Or,
    Primitive,
    load_expressions,
    parse,
    random_expression,
    save_expressions,
    to_cnf,
    unparse,
)
from .numcore import finite_diff, rng_stream
from .primitives import BankConfig, SvmConfig, calibrate_bank, train_primitive_bank
from .training import TrainConfig, finetune_cnf, objective, sample_batch, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (NonFiniteLossError, NoConvergenceError, NonFiniteGradientError)
_DATA_ERRORS = (
    DegenerateFeaturesError,
    DigestMismatchError,
    ExprSyntaxError,
    FormatError,
    InfeasibleSplitError,
    InsufficientExamplesError,
    InsufficientPrimitivesError,
    InvalidCorrelationError,
    MissingCalibrationError,
    MissingPrimitiveError,
    NoPositivesError,
    ShapeMismatchError,
    SingleClassError,
    SizeExceededError,
    UnknownExpressionError,
    UnknownPrimitiveError,
    VersionMismatchError,
    FileNotFoundError,
)

_METRIC_COLUMNS = ("scorer", "protocol", "complexity", "map", "auc", "eer", "pairs", "positives")


class UsageError(Exception):
    pass


@dataclass
class EvalConfig:
    scorers: tuple[str, ...] = ("chance", "independent", "supervised", "composed")
    macro: bool = False
    renormalize: bool = False
    include_primitive_diagnostics: bool = True


@dataclass
class SweepConfig:
    scorers: tuple[str, ...] = ("chance", "independent", "composed")
    complexities: tuple[int, ...] = (2, 4, 6, 8, 10)
    per_complexity: int = 100
    renormalize: bool = False


_SECTION_TYPES = {
    "synthetic": SyntheticConfig,
    "filter": FilterConfig,
    "splits": SplitConfig,
    "bank": BankConfig,
    "training": TrainConfig,
    "eval": EvalConfig,
    "sweep": SweepConfig,
}


# ---------------------------------------------------------------------------
# configuration plumbing


def _parse_set_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _merge_overrides(base: dict, args) -> dict:
    merged = {k: dict(v) for k, v in base.items()}
    for entry in args.set or []:
        if "=" not in entry:
            raise UsageError(f"--set expects key=value, got {entry!r}")
        key, value = entry.split("=", 1)
        parts = key.split(".")
        if len(parts) < 2:
            raise UsageError(f"--set key must be section.field[...], got {key!r}")
        node = merged.setdefault(parts[0], {})
        for part in parts[1:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set path {key!r} conflicts with a scalar")
        node[parts[-1]] = _parse_set_value(value)
    return merged


def _apply_updates(cfg, updates: dict, path: str):
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    for key, value in updates.items():
        if key not in fields:
            raise UsageError(f"unknown config key {path}.{key}")
        current = getattr(cfg, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            _apply_updates(current, value, f"{path}.{key}")
            continue
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        setattr(cfg, key, value)
    return cfg


def resolve_configs(args) -> dict:
    """Effective config sections from defaults, optional file, then --set."""
    file_data: dict = {}
    if getattr(args, "config", None):
        try:
            file_data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(file_data, dict):
            raise UsageError("config file must hold a JSON object of sections")
    merged = _merge_overrides(file_data, args)
    for section in merged:
        if section not in _SECTION_TYPES:
            raise UsageError(f"unknown config section {section!r}")
    sections = {}
    for name, typ in _SECTION_TYPES.items():
        cfg = typ()
        if name in merged:
            _apply_updates(cfg, merged[name], name)
            if hasattr(cfg, "__post_init__"):
                cfg.__post_init__()  # re-validate after overrides
        sections[name] = cfg
    seed = getattr(args, "seed", None)
    if seed is not None:
        for cfg in sections.values():
            if hasattr(cfg, "seed"):
                cfg.seed = seed
    return sections


def _effective_seed(args, sections) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return 0


def _config_json(sections: dict) -> dict:
    out = {}
    for name, cfg in sections.items():
        raw = dataclasses.asdict(cfg)
        for k, v in raw.items():
            if isinstance(v, tuple):
                raw[k] = list(v)
        out[name] = raw
    return json.loads(json.dumps(out))


# ---------------------------------------------------------------------------
# artifacts and manifests


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _artifact_digest(dir_path: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(dir_path.iterdir()):
        if p.name in ("run.manifest", "timing.json") or p.is_dir():
            continue
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def write_run_manifest(out_dir: Path, command: str, sections: dict, inputs: dict,
                       seed: int, outputs: list[str]) -> None:
    manifest = {
        "format": "boolclf/run",
        "version": 1,
        "tool_version": __version__,
        "command": command,
        "seed": seed,
        "config": _config_json(sections),
        "inputs": inputs,
        "outputs": sorted(outputs),
    }
    (out_dir / "run.manifest").write_text(canonical_json(manifest), encoding="utf-8")


def write_timing(out_dir: Path, wall_s: float) -> None:
    (out_dir / "timing.json").write_text(
        canonical_json({"wall_s": round(wall_s, 3)}), encoding="utf-8"
    )


def _input_entry(path_str: str) -> dict:
    p = Path(path_str)
    return {"path": str(p), "digest": _artifact_digest(p) if p.is_dir() else _file_digest(p)}


def _load_pipeline(args, *, need_split=False, need_bank=False, need_net=False):
    """Load dataset (+split/bank/net) with digest cross-checks."""
    dataset = load_dataset(args.dataset)
    override = getattr(args, "allow_digest_mismatch", False)
    split = bank = net = or_net = None
    net_manifest = None
    if need_split:
        split = load_split(args.split)
        ensure_digest(split.dataset_digest, dataset.digest, "split vs dataset", override)
    if need_bank:
        bank = load_bank(args.bank)
        ensure_digest(bank.dataset_digest, dataset.digest, "bank vs dataset", override)
    if need_net:
        net, or_net, net_manifest = load_net(args.net)
        ensure_digest(net_manifest.get("dataset_digest", dataset.digest), dataset.digest,
                      "net vs dataset", override)
    return dataset, split, bank, net, or_net, net_manifest


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# metrics output


def _metric_row(scorer: str, protocol: str, complexity, report) -> dict:
    return {
        "scorer": scorer,
        "protocol": protocol,
        "complexity": complexity if complexity is not None else "-",
        "map": report.map,
        "auc": report.auc,
        "eer": report.eer,
        "pairs": report.pairs,
        "positives": report.positives,
    }


def write_metrics(out_dir: Path, rows: list[dict], stem: str) -> list[str]:
    jsonl_path = out_dir / f"{stem}.jsonl"
    with jsonl_path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps({"format": "boolclf/metrics", "version": 1, **row},
                                sort_keys=True) + "\n")
    tsv_path = out_dir / f"{stem}.tsv"
    with tsv_path.open("w", encoding="utf-8") as fh:
        fh.write("\t".join(_METRIC_COLUMNS) + "\n")
        for row in rows:
            cells = []
            for col in _METRIC_COLUMNS:
                v = row[col]
                cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
            fh.write("\t".join(cells) + "\n")
    return [jsonl_path.name, tsv_path.name]


def print_metrics(rows: list[dict]) -> None:
    widths = {c: max(len(c), max((len(_fmt_cell(r[c])) for r in rows), default=0))
              for c in _METRIC_COLUMNS}
    header = "  ".join(c.ljust(widths[c]) for c in _METRIC_COLUMNS)
    print(header)
    print("-" * len(header))
    for row in rows:
        print("  ".join(_fmt_cell(row[c]).ljust(widths[c]) for c in _METRIC_COLUMNS))


def _fmt_cell(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    started = time.perf_counter()
    sections = resolve_configs(args)
    cfg: SyntheticConfig = sections["synthetic"]
    dataset = synth_generate(cfg)
    out = _out_dir(args)
    save_dataset(dataset, out)
    write_run_manifest(out, "synth", {"synthetic": cfg}, {}, cfg.seed,
                       ["dataset.manifest", "features.bin", "labels.bin"])
    write_timing(out, time.perf_counter() - started)
    print(f"synthetic dataset: n={dataset.n} d={dataset.d} m={dataset.m} "
          f"digest={dataset.digest[:12]} -> {out}")
    return EXIT_OK


def cmd_splits(args) -> int:
    started = time.perf_counter()
    sections = resolve_configs(args)
    seed = _effective_seed(args, sections)
    dataset = load_dataset(args.dataset)
    candidates = enumerate_binary(dataset.primitives, ("and", "or"))
    spec = make_splits(dataset, candidates, seed, sections["splits"], sections["filter"])
    out = _out_dir(args)
    save_split(spec, out)
    write_run_manifest(out, "splits",
                       {"splits": sections["splits"], "filter": sections["filter"]},
                       {"dataset": _input_entry(args.dataset)}, seed,
                       ["split.manifest", "exprs.train.txt", "exprs.test.txt"])
    write_timing(out, time.perf_counter() - started)
    n_and = sum(isinstance(e, And) for e in spec.train_exprs + spec.test_exprs)
    n_or = sum(isinstance(e, Or) for e in spec.train_exprs + spec.test_exprs)
    print(f"splits: images {len(spec.train_images)}/{len(spec.val_images)}/{len(spec.test_images)}, "
          f"expressions {len(spec.train_exprs)} train + {len(spec.test_exprs)} test "
          f"({n_and} conjunctive, {n_or} disjunctive) -> {out}")
    return EXIT_OK


def cmd_train_primitives(args) -> int:
    started = time.perf_counter()
    sections = resolve_configs(args)
    cfg: BankConfig = sections["bank"]
    dataset, split, _, _, _, _ = _load_pipeline(args, need_split=True)
    bank = train_primitive_bank(dataset, dataset.primitives, cfg, split.train_images)
    out = _out_dir(args)
    save_bank(bank, out)
    write_run_manifest(out, "train-primitives", {"bank": cfg},
                       {"dataset": _input_entry(args.dataset), "split": _input_entry(args.split)},
                       cfg.seed, ["bank.manifest", "bank.bin"])
    write_timing(out, time.perf_counter() - started)
    print(f"primitive bank: {len(bank.names)} classifiers of dim {bank.d}+1 -> {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    started = time.perf_counter()
    sections = resolve_configs(args)
    cfg: BankConfig = sections["bank"]
    dataset, split, bank, _, _, _ = _load_pipeline(args, need_split=True, need_bank=True)
    calibrated = calibrate_bank(dataset, bank, cfg, split.train_images)
    out = Path(args.out) if args.out else Path(args.bank)
    out.mkdir(parents=True, exist_ok=True)
    save_bank(calibrated, out)
    write_run_manifest(out, "calibrate", {"bank": cfg},
                       {"dataset": _input_entry(args.dataset), "split": _input_entry(args.split)},
                       cfg.seed, ["bank.manifest", "bank.bin"])
    write_timing(out, time.perf_counter() - started)
    sample = calibrated.platt[calibrated.names[0]]
    print(f"calibrated {len(calibrated.platt)} primitives "
          f"(e.g. {calibrated.names[0]}: a={sample.a:.4f} b={sample.b:.4f}) -> {out}")
    return EXIT_OK


def _val_metrics_fn(dataset, split, bank, renormalize=False):
    def fn(net) -> dict:
        scorer = ComposedScorer(net, bank, renormalize=renormalize)
        report = evaluate(scorer, split.train_exprs, dataset, split.val_images)
        return {"val_map": report.map, "val_auc": report.auc, "val_eer": report.eer}

    return fn


def _write_history(out: Path, history: list[dict]) -> str:
    path = out / "history.jsonl"
    with path.open("w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return path.name


def cmd_train(args) -> int:
    started = time.perf_counter()
    sections = resolve_configs(args)
    cfg: TrainConfig = sections["training"]
    dataset, split, bank, _, _, _ = _load_pipeline(args, need_split=True, need_bank=True)
    net = init_composition_net(dataset.d, rng_stream(cfg.seed, "net-init"))
    or_net = init_composition_net(dataset.d, rng_stream(cfg.seed, "or-net-init")) \
        if cfg.learn_or_net else None
    result = train(
        net, bank, dataset, split.train_exprs, split.train_images, cfg,
        or_net=or_net, val_metrics=_val_metrics_fn(dataset, split, bank),
    )
    out = _out_dir(args)
    meta = {"dataset_digest": dataset.digest, "stage": "main",
            "training_config": _config_json({"training": cfg})["training"]}
    save_net(result.net, out, or_net=result.or_net, meta=meta)
    outputs = ["net.manifest", "net.bin", _write_history(out, result.history)]
    write_run_manifest(out, "train", {"training": cfg},
                       {"dataset": _input_entry(args.dataset), "split": _input_entry(args.split),
                        "bank": _input_entry(args.bank)},
                       cfg.seed, outputs)
    write_timing(out, time.perf_counter() - started)
    last = result.history[-1]
    print(f"trained {cfg.epochs_main} epochs over {len(split.train_exprs)} expressions; "
          f"final loss {last['loss']:.4f}, val AUC {last.get('val_auc', float('nan')):.4f} -> {out}")
    return EXIT_OK


def cmd_finetune_cnf(args) -> int:
    started = time.perf_counter()
    sections = resolve_configs(args)
    cfg: TrainConfig = sections["training"]
    dataset, split, bank, net, or_net, _ = _load_pipeline(
        args, need_split=True, need_bank=True, need_net=True)
    known_disjunctions = [e for e in split.train_exprs if isinstance(e, Or)]
    result = finetune_cnf(
        net, bank, dataset, known_disjunctions, split.train_images, cfg,
        or_net=or_net, test_exprs=split.test_exprs,
        val_metrics=_val_metrics_fn(dataset, split, bank),
    )
    out = _out_dir(args)
    meta = {"dataset_digest": dataset.digest, "stage": "finetuned",
            "training_config": _config_json({"training": cfg})["training"]}
    save_net(result.net, out, or_net=result.or_net, meta=meta)
    save_expressions(out / "finetune.exprs.txt", result.exprs)
    outputs = ["net.manifest", "net.bin", "finetune.exprs.txt",
               _write_history(out, result.history)]
    write_run_manifest(out, "finetune-cnf", {"training": cfg},
                       {"dataset": _input_entry(args.dataset), "split": _input_entry(args.split),
                        "bank": _input_entry(args.bank), "net": _input_entry(args.net)},
                       cfg.seed, outputs)
    write_timing(out, time.perf_counter() - started)
    print(f"finetuned on {len(result.exprs)} complexity-{cfg.finetune_complexity} expressions "
          f"for {cfg.epochs_finetune} epochs -> {out}")
    return EXIT_OK


def _split_by_op(exprs) -> dict[str, list]:
    out: dict[str, list] = {}
    for e in exprs:
        if isinstance(e, And):
            out.setdefault("conjunctive", []).append(e)
        elif isinstance(e, Or):
            out.setdefault("disjunctive", []).append(e)
        else:
            out.setdefault("other", []).append(e)
    return out


def cmd_eval(args) -> int:
    started = time.perf_counter()
    sections = resolve_configs(args)
    cfg: EvalConfig = sections["eval"]
    seed = _effective_seed(args, sections)
    dataset, split, bank, net, or_net, _ = _load_pipeline(
        args, need_split=True, need_bank=True, need_net=True)

    scorers = {}
    if "chance" in cfg.scorers:
        scorers["chance"] = ChanceScorer(seed)
    if "independent" in cfg.scorers:
        scorers["independent"] = IndependentScorer(bank)
    if "composed" in cfg.scorers:
        scorers["composed"] = ComposedScorer(net, bank, or_net=or_net,
                                             renormalize=cfg.renormalize)
    supervised = None
    if "supervised" in cfg.scorers:
        supervised = baseline_supervised(
            dataset, split.train_exprs, split.train_images,
            sections["bank"].svm, seed=seed,
        )

    rows = []
    known = _split_by_op(split.train_exprs)
    unknown = _split_by_op(split.test_exprs)
    for op, exprs in sorted(known.items()):
        for name, scorer in scorers.items():
            report = evaluate(scorer, exprs, dataset, split.val_images, macro=cfg.macro)
            rows.append(_metric_row(name, f"known-{op}", None, report))
        if supervised is not None:
            report = evaluate(supervised, exprs, dataset, split.val_images, macro=cfg.macro)
            rows.append(_metric_row("supervised", f"known-{op}", None, report))
    for op, exprs in sorted(unknown.items()):
        for name, scorer in scorers.items():
            report = evaluate(scorer, exprs, dataset, split.test_images, macro=cfg.macro)
            rows.append(_metric_row(name, f"unknown-{op}", None, report))
    if cfg.include_primitive_diagnostics:
        prim_exprs = [Primitive(n) for n in dataset.primitives]
        for name, scorer in scorers.items():
            if name == "chance":
                continue
            report = evaluate(scorer, prim_exprs, dataset, split.val_images, macro=cfg.macro)
            rows.append(_metric_row(name, "primitives", None, report))

    out = _out_dir(args)
    outputs = write_metrics(out, rows, "metrics")
    write_run_manifest(out, "eval", {"eval": cfg, "bank": sections["bank"]},
                       {"dataset": _input_entry(args.dataset), "split": _input_entry(args.split),
                        "bank": _input_entry(args.bank), "net": _input_entry(args.net)},
                       seed, outputs)
    write_timing(out, time.perf_counter() - started)
    print_metrics(rows)
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    sections = resolve_configs(args)
    cfg: SweepConfig = sections["sweep"]
    seed = _effective_seed(args, sections)
    dataset, split, bank, net, or_net, _ = _load_pipeline(
        args, need_split=True, need_bank=True, need_net=True)
    clause_pool = [e for e in split.test_exprs if isinstance(e, Or)]
    if not clause_pool:
        raise InsufficientExamplesError("no unknown disjunctive expressions to build CNFs from")
    forbidden = None
    finetune_file = Path(args.net) / "finetune.exprs.txt"
    if finetune_file.exists():
        forbidden = load_expressions(finetune_file)

    scorers = []
    if "chance" in cfg.scorers:
        scorers.append(ChanceScorer(seed))
    if "independent" in cfg.scorers:
        scorers.append(IndependentScorer(bank))
    if "composed" in cfg.scorers:
        scorers.append(ComposedScorer(net, bank, or_net=or_net, renormalize=cfg.renormalize))

    sweep_rows, exprs_by_c = complexity_sweep(
        scorers, dataset, clause_pool, split.test_images,
        complexities=cfg.complexities, per_complexity=cfg.per_complexity,
        seed=seed, forbidden=forbidden,
    )
    rows = [_metric_row(r.scorer, "cnf-sweep", r.complexity, r.report) for r in sweep_rows]
    out = _out_dir(args)
    outputs = write_metrics(out, rows, "sweep")
    for c, exprs in exprs_by_c.items():
        save_expressions(out / f"sweep.exprs.c{c}.txt", exprs)
        outputs.append(f"sweep.exprs.c{c}.txt")
    write_run_manifest(out, "sweep", {"sweep": cfg},
                       {"dataset": _input_entry(args.dataset), "split": _input_entry(args.split),
                        "bank": _input_entry(args.bank), "net": _input_entry(args.net)},
                       seed, outputs)
    write_timing(out, time.perf_counter() - started)
    print_metrics(rows)
    return EXIT_OK


def cmd_score(args) -> int:
    expr = parse(args.expression)
    dataset = load_dataset(args.dataset)
    bank = load_bank(args.bank)
    override = getattr(args, "allow_digest_mismatch", False)
    ensure_digest(bank.dataset_digest, dataset.digest, "bank vs dataset", override)
    net, or_net, net_manifest = load_net(args.net)
    ensure_digest(net_manifest.get("dataset_digest", dataset.digest), dataset.digest,
                  "net vs dataset", override)
    indices = np.arange(dataset.n)
    if args.split:
        split = load_split(args.split)
        ensure_digest(split.dataset_digest, dataset.digest, "split vs dataset", override)
        indices = split.image_splits()[args.images]
    w, _ = compose(net, bank, expr, or_net=or_net)
    scores = score_batch(w, dataset.features[indices])
    labels = expr_label(dataset, expr)[indices]
    order = np.lexsort((indices, -scores))
    k = min(args.k, len(indices))
    print(f"expression: {unparse(expr)}")
    print(f"images scored: {len(indices)} ({int(labels.sum())} positive)")
    print(f"top {k}:")
    print("  rank  image   score        label")
    for rank, idx in enumerate(order[:k], start=1):
        print(f"  {rank:<5d} {indices[idx]:<7d} {scores[idx]: .6f}   {int(labels[idx])}")
    print(f"bottom {k}:")
    for rank, idx in enumerate(order[-k:], start=len(indices) - k + 1):
        print(f"  {rank:<5d} {indices[idx]:<7d} {scores[idx]: .6f}   {int(labels[idx])}")
    return EXIT_OK


def cmd_convert_cnf(args) -> int:
    expr = parse(args.expression)
    print(unparse(to_cnf(expr, max_clauses=args.max_clauses)))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    trials = args.trials
    d = 5
    names = ["a", "b", "c", "d_"]
    rng = rng_stream(seed, "gradcheck")

    from .primitives import Classifier, PrimitiveBank

    bank = PrimitiveBank(
        d=d,
        names=tuple(names),
        classifiers={n: Classifier(rng.standard_normal(d + 1)) for n in names},
    )
    worst_compose = 0.0
    for _ in range(trials):
        net = init_composition_net(d, rng)
        expr = random_expression(names, rng, max_depth=4)
        probe = rng.standard_normal(d + 1)
        _, trace = compose(net, bank, expr)
        grads = compose_backward(net, trace, probe)
        analytic = flatten_grads(grads.net)

        def f(flat: np.ndarray) -> float:
            trial = net.copy()
            assign_params(trial, flat)
            w, _ = compose(trial, bank, expr)
            return float(probe @ w.weights)

        numeric = finite_diff(f, flatten_params(net), h=1e-4)
        denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-12)
        worst_compose = max(worst_compose, float(np.linalg.norm(analytic - numeric)) / denom)

    # objective gradient on a tiny synthetic problem
    data_cfg = SyntheticConfig(m=4, d=d, n=400, blocks=2, rho=0.6, noise=1.0, seed=seed)
    dataset = synth_generate(data_cfg)
    dataset = dataclasses.replace(dataset, primitives=tuple(names))
    tcfg = TrainConfig(pos_per_expr=5, neg_per_expr=5, seed=seed)
    exprs = [parse("a & b"), parse("(a | c) & !d_")]
    batch = sample_batch(dataset, exprs, np.arange(dataset.n), rng, 5, 5)
    net = init_composition_net(d, rng)
    _, grads, _ = objective(net, bank, dataset, batch, tcfg)
    analytic = flatten_grads(grads.net)

    def f_obj(flat: np.ndarray) -> float:
        trial = net.copy()
        assign_params(trial, flat)
        loss, _, _ = objective(trial, bank, dataset, batch, tcfg)
        return loss

    numeric = finite_diff(f_obj, flatten_params(net), h=1e-5)
    denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-12)
    worst_objective = float(np.linalg.norm(analytic - numeric)) / denom

    # exact identities and the operand-order symmetry statistic
    net = init_composition_net(d, rng)
    wa = bank["a"]
    wb = bank["b"]
    identity_ok = np.array_equal(g_not(g_not(wa)).weights, wa.weights) and np.array_equal(
        g_or(net, wa, wb).weights, g_not(g_and(net, g_not(wa), g_not(wb))).weights
    )
    sym = symmetry_statistic(net, wa, wb)

    threshold = 1e-5
    ok = worst_compose < threshold and worst_objective < threshold and identity_ok
    print(f"compose_backward max rel err: {worst_compose:.3e} ({trials} trials)")
    print(f"objective grad rel err:       {worst_objective:.3e}")
    print(f"negation/De Morgan identities exact: {identity_ok}")
    print(f"conjunction operand-order symmetry statistic: {sym:.3f}")
    print(f"gradcheck {'PASS' if ok else 'FAIL'} (threshold {threshold:.0e})")
    if not ok:
        raise NonFiniteGradientError("gradient check exceeded tolerance")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(sub, *, dataset=False, split=False, bank=False, net=False, out=False):
    sub.add_argument("--seed", type=int, default=None, help="override every config seed")
    sub.add_argument("--config", default=None, help="JSON config file of sections")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config value, e.g. training.lr=0.01")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker cap; the current implementation is single-threaded "
                          "and the flag is accepted for interface stability")
    if dataset:
        sub.add_argument("--dataset", required=True, help="dataset directory")
    if split:
        sub.add_argument("--split", required=True, help="split directory")
    if bank:
        sub.add_argument("--bank", required=True, help="primitive bank directory")
    if net:
        sub.add_argument("--net", required=True, help="composition net directory")
    if out:
        sub.add_argument("--out", required=True, help="output directory")
    if dataset:
        sub.add_argument("--allow-digest-mismatch", action="store_true",
                         help="proceed despite artifact/dataset digest mismatch")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="boolclf",
                     description="Compose classifiers for boolean expressions of concepts")
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("synth", help="generate a synthetic dataset")
    _add_common(s, out=True)
    s.set_defaults(func=cmd_synth)

    s = subs.add_parser("splits", help="build image and expression splits")
    _add_common(s, dataset=True, out=True)
    s.set_defaults(func=cmd_splits)

    s = subs.add_parser("train-primitives", help="train one SVM per primitive")
    _add_common(s, dataset=True, split=True, out=True)
    s.set_defaults(func=cmd_train_primitives)

    s = subs.add_parser("calibrate", help="fit sigmoid calibration on held-out images")
    _add_common(s, dataset=True, split=True, bank=True)
    s.add_argument("--out", default=None, help="output directory (default: the bank)")
    s.set_defaults(func=cmd_calibrate)

    s = subs.add_parser("train", help="train the composition network")
    _add_common(s, dataset=True, split=True, bank=True, out=True)
    s.set_defaults(func=cmd_train)

    s = subs.add_parser("finetune-cnf", help="finetune on CNFs of known disjunctions")
    _add_common(s, dataset=True, split=True, bank=True, net=True, out=True)
    s.set_defaults(func=cmd_finetune_cnf)

    s = subs.add_parser("eval", help="known/unknown expression protocols")
    _add_common(s, dataset=True, split=True, bank=True, net=True, out=True)
    s.set_defaults(func=cmd_eval)

    s = subs.add_parser("sweep", help="CNF complexity sweep")
    _add_common(s, dataset=True, split=True, bank=True, net=True, out=True)
    s.set_defaults(func=cmd_sweep)

    s = subs.add_parser("score", help="rank images for one expression")
    s.add_argument("expression", help="expression text, e.g. 'S & (B | R) & !H'")
    _add_common(s, dataset=True, bank=True, net=True)
    s.add_argument("--split", default=None, help="split directory (optional)")
    s.add_argument("--images", choices=("train", "val", "test"), default="test",
                   help="which split images to score (needs --split)")
    s.add_argument("-k", type=int, default=10, help="list size")
    s.set_defaults(func=cmd_score)

    s = subs.add_parser("convert-cnf", help="parse and print the CNF of an expression")
    s.add_argument("expression")
    s.add_argument("--max-clauses", type=int, default=4096)
    s.set_defaults(func=cmd_convert_cnf)

    s = subs.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--trials", type=int, default=20)
    s.set_defaults(func=cmd_gradcheck)

    return parser


def _emit_error(kind: str, exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "kind": kind, "message": str(exc)}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        _emit_error("usage", exc)
        return EXIT_USAGE
    except _NUMERIC_ERRORS as exc:
        _emit_error("numeric", exc)
        return EXIT_NUMERIC
    except _DATA_ERRORS as exc:
        _emit_error("data", exc)
        return EXIT_DATA
    except ValueError as exc:
        _emit_error("usage", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
