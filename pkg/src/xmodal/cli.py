"""``xmodal`` command line: gen-data, train, eval, validate, report.

Exit codes: 0 success, 2 config or usage error, 3 I/O error, 4 numeric failure.
Outputs live under ``--out`` as ``corpus/``, ``ckpt/``, ``reports/`` plus
``manifests/<command>.json`` recording what was run and what it produced.
"""

from __future__ import annotations

import os

_threads = os.environ.get("XMODAL_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import datetime  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import subprocess  # noqa: E402
import sys  # noqa: E402
from dataclasses import replace  # noqa: E402
from pathlib import Path  # noqa: E402

import jsonschema  # noqa: E402

from . import checkpoint  # noqa: E402
from . import validation as V  # noqa: E402
from .batch import DescriptorCache  # noqa: E402
from .corpus import generate_corpus, read_corpus, write_corpus  # noqa: E402
from .encoders import arm_names, make_arm  # noqa: E402
from .retrieval import CANONICAL_POOL, TOY_POOL, PoolQuotaError, RetrievalReport, build_pool, scoreboard  # noqa: E402
from .training import TrainConfig, TrainingAborted, load_model, split_items, train  # noqa: E402

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _read_json(path: str, what: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise CliError(EXIT_CONFIG, f"cannot read {what} {path}: {e.strerror}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise CliError(EXIT_CONFIG, f"{what} {path} is not valid JSON: {e}") from e


def load_config(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    d = _read_json(path, "config")
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError, KeyError) as e:
        raise CliError(EXIT_CONFIG, f"config {path}: {e}") from e


def _arm(name: str):
    try:
        return make_arm(name)
    except KeyError as e:
        raise CliError(EXIT_CONFIG, f"unknown arm {name!r}; valid arms: {', '.join(arm_names())}") from e


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_manifest(out: Path, command: str, config_path, config_hash: str, seed, outputs: list,
                   started: str) -> Path:
    d = out / "manifests"
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"{command}.json"
    path.write_text(json.dumps({
        "command": command, "config_path": str(config_path) if config_path else None,
        "config_hash": config_hash, "seed": seed, "git_describe": _git_describe(),
        "started": started, "finished": _now(), "outputs": [str(p) for p in outputs],
    }, indent=1, sort_keys=True))
    return path


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _mkdir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot create {path}: {e.strerror}") from e
    return path


def _load_corpus(path: Path):
    if not (path / "corpus.json").exists():
        raise CliError(EXIT_IO, f"no corpus at {path}; run `xmodal gen-data` first")
    try:
        return read_corpus(path)
    except (OSError, ValueError, KeyError) as e:
        raise CliError(EXIT_IO, f"cannot read corpus {path}: {e}") from e


def _load_ckpt(path: str):
    try:
        return load_model(path)
    except (OSError, checkpoint.CheckpointError) as e:
        raise CliError(EXIT_IO, f"cannot read checkpoint {path}: {e}") from e


def _run_dir(ckpt: str) -> Path:
    p = Path(ckpt).resolve().parent
    return p.parent if p.name == "ckpt" else p


def _pool_config(spec: str) -> dict:
    if spec == "canonical":
        return dict(CANONICAL_POOL)
    if spec == "toy":
        return dict(TOY_POOL)
    d = _read_json(spec, "pool config")
    d.pop("schema_version", None)
    unknown = set(d) - set(CANONICAL_POOL)
    if unknown:
        raise CliError(EXIT_CONFIG, f"pool config {spec}: unknown field(s) {', '.join(sorted(unknown))}")
    return {**CANONICAL_POOL, **d}


def _eval_items(ckpt_path: str, corpus_dir: str | None, config: TrainConfig):
    corpus = Path(corpus_dir) if corpus_dir else _run_dir(ckpt_path) / "corpus"
    items, _, _ = _load_corpus(corpus)
    return split_items(items, config.val_fraction)[1]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    started = _now()
    config = load_config(args.config)
    seed = config.corpus_seed if args.seed is None else args.seed
    out = _mkdir(Path(args.out))
    try:
        items = generate_corpus(config.corpus, seed)
    except ValueError as e:
        raise CliError(EXIT_CONFIG, f"corpus config: {e}") from e
    try:
        cdir = write_corpus(out / "corpus", items, config.corpus, seed)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot write corpus: {e}") from e
    write_manifest(out, "gen-data", args.config, checkpoint.config_hash(config.corpus.to_dict()), seed,
                   [cdir / "manifest.jsonl", cdir / "audio.f32", cdir / "corpus.json"], started)
    print(f"{len(items)} items written to {cdir}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    config = load_config(args.config)
    if args.arm:
        config = replace(config, arm=_arm(args.arm))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.epochs is not None:
        config = replace(config, epochs=args.epochs)
    out = _mkdir(Path(args.out))
    items, corpus_config, corpus_seed = _load_corpus(Path(args.corpus) if args.corpus else out / "corpus")
    config = replace(config, corpus=corpus_config, corpus_seed=corpus_seed)

    def log(rec):
        val = rec.get("val", {})
        print(f"epoch {rec['epoch']:3d}  loss {rec['loss']['total']:.4f}  val S {val.get('s', float('nan')):.3f}",
              file=sys.stderr)

    try:
        result = train(config, items, out, log=None if args.quiet else log)
    except TrainingAborted as e:
        print(f"training aborted: {e}; last good state saved under {out / 'ckpt'}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        raise CliError(EXIT_CONFIG, str(e)) from e
    ck = out / "ckpt"
    write_manifest(out, "train", args.config, config.hash, config.seed,
                   [ck / "best.xmck", ck / "last.xmck", ck / "history.jsonl"], started)
    print(f"arm {config.arm.name}  best S {result.best_s * 100:.1f}%  best epoch {result.best_epoch}")
    return EXIT_OK


def cmd_eval(args) -> int:
    started = _now()
    model, config, _ = _load_ckpt(args.checkpoint)
    pc = _pool_config(args.pool_config)
    if args.seed is not None:
        pc["seed"] = args.seed
    items = _eval_items(args.checkpoint, args.corpus, config)
    try:
        pool = build_pool(items, pc["pool_size"], pc["n_queries"], pc["n_hard"], pc["n_semihard"], pc["seed"])
    except PoolQuotaError as e:
        raise CliError(EXIT_CONFIG, f"pool config does not fit the evaluation corpus: {e}") from e
    rep = scoreboard(model, items, pool, pc["seed"], config.hash, DescriptorCache())
    out = _mkdir(Path(args.out) if args.out else _run_dir(args.checkpoint)) / "reports"
    _mkdir(out)
    path = out / f"eval_{config.arm.name}_pool{pc['seed']}.json"
    path.write_text(rep.to_json())
    write_manifest(out.parent, "eval", args.checkpoint, config.hash, pc["seed"], [path], started)
    print(rep.to_json())
    return EXIT_OK


def run_test(test: str, model, config: TrainConfig, items, pool, cache, out: Path) -> dict:
    arm = config.arm
    seed = config.seed
    inputs = {"n_items": len(items), "pool_size": pool.pool_size, "n_queries": pool.n_queries}
    if test == "t01":
        metrics = {}
        for desc in ("a4", "d4"):
            if not V.arm_descriptor_fields(arm, desc):
                continue
            for mode in ("zero", "noise", "shuffle"):
                metrics[f"{desc}_{mode}"] = V.ablate(model, items, pool, V.AblationSpec(desc, mode, seed), cache,
                                                     seed)
        if not metrics:
            raise V.NotApplicable(f"arm {arm.name} has no descriptors to ablate")
    elif test == "t02":
        controls = V.param_matched_controls(arm)
        corpus_items = generate_corpus(config.corpus, config.corpus_seed)
        metrics = {"real_s": V._s(model, items, pool, cache, seed)}
        for name, carm in controls.items():
            res = train(replace(config, arm=carm), corpus_items, cache=cache)
            metrics[name] = V._s(res.best_model(), items, pool, cache, seed)
    elif test == "t03":
        from .retrieval import embed_items
        za, zm = embed_items(model, items, cache, control_seed=seed)
        metrics = {}
        for target in V.PROBE_TARGETS:
            y = V.probe_targets(items, target, arm.audio.nfft, arm.audio.hop)
            for src, z in (("audio_embedding", za), ("midi_embedding", zm)):
                metrics[f"{src}->{target}"] = V.linear_probe(z, y, seed=seed)
    elif test == "t04":
        metrics = V.transposition_sweep(model, items, pool, cache=cache, control_seed=seed)
    elif test == "t06":
        metrics = V.cka_matrix(model, items, cache, seed)
    elif test == "t08":
        metrics = V.band_sensitivity(model, items, 0.1, cache, seed)
    elif test == "t09":
        metrics = V.invariance_suite(model, items, pool, cache, seed, noise_seed=seed)
    elif test == "t10":
        from .retrieval import embed_items
        za, zm = embed_items(model, items, cache, control_seed=seed)
        metrics = V.cosine_alignment(za, zm)
        path = out / f"embeddings_{arm.name}.csv"
        V.export_embeddings(model, items, len(items), path, cache, seed)
        metrics["export"] = path.name
    else:
        raise CliError(EXIT_CONFIG, f"unknown test {test!r}; valid tests: {', '.join(V.TESTS)}")
    return V.validation_report(test, arm.name, config.hash, seed, inputs, metrics)


def cmd_validate(args) -> int:
    started = _now()
    tests = [t.strip() for t in args.tests.split(",") if t.strip()]
    bad = [t for t in tests if t not in V.TESTS]
    if bad:
        raise CliError(EXIT_CONFIG, f"unknown test(s) {', '.join(bad)}; valid tests: {', '.join(V.TESTS)}")
    model, config, _ = _load_ckpt(args.checkpoint)
    items = _eval_items(args.checkpoint, args.corpus, config)
    pc = _pool_config(args.pool_config)
    try:
        pool = build_pool(items, pc["pool_size"], pc["n_queries"], pc["n_hard"], pc["n_semihard"], pc["seed"])
    except PoolQuotaError as e:
        raise CliError(EXIT_CONFIG, f"pool config does not fit the evaluation corpus: {e}") from e
    out = _mkdir((Path(args.out) if args.out else _run_dir(args.checkpoint)) / "reports")
    cache = DescriptorCache()
    reports, outputs = [], []
    for test in tests:
        try:
            rep = run_test(test, model, config, items, pool, cache, out)
        except V.NotApplicable as e:
            rep = V.validation_report(test, config.arm.name, config.hash, config.seed, {}, {"reason": str(e)},
                                      status="not-applicable")
        path = out / f"{test}_{config.arm.name}.json"
        V.write_json(path, rep)
        reports.append(rep)
        outputs.append(path)
        print(f"{test}: {rep['status']}")
    dash = out / f"dashboard_{config.arm.name}.json"
    V.write_json(dash, V.dashboard(reports))
    write_manifest(out.parent, "validate", args.checkpoint, config.hash, config.seed, outputs + [dash], started)
    return EXIT_OK


REPORT_COLUMNS = (("s", "S (%)"), ("r1_am", "R@1 a->m"), ("r1_ma", "R@1 m->a"), ("r10_am", "R@10 a->m"),
                  ("r10_ma", "R@10 m->a"), ("mrr_am", "MRR a->m"), ("mrr_ma", "MRR m->a"), ("hardneg", "Hard neg (%)"))


def cmd_report(args) -> int:
    reports = []
    versions = set()
    for path in args.inputs:
        d = _read_json(path, "report")
        versions.add(d.get("schema_version"))
        try:
            reports.append(RetrievalReport.from_dict(d))
        except jsonschema.ValidationError as e:
            raise CliError(EXIT_CONFIG, f"report {path} does not match the report schema: {e.message}") from e
    if len(versions) > 1:
        raise CliError(EXIT_CONFIG, f"mixed report schema versions: {sorted(map(str, versions))}")
    rows = [{"arm": r.arm, "seed": r.seed, **{k: 100.0 * r.metrics[k] for k, _ in REPORT_COLUMNS}} for r in reports]
    if args.format == "json":
        print(json.dumps(rows, indent=1))
    else:
        print(render_table(rows))
    return EXIT_OK


def render_table(rows: list[dict]) -> str:
    head = ["Arm", "Seed"] + [title for _, title in REPORT_COLUMNS]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in rows:
        cells = [r["arm"], str(r["seed"])] + [f"{r[k]:.1f}" for k, _ in REPORT_COLUMNS]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xmodal", description="Descriptor-injection audio/MIDI retrieval lab")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic corpus")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one arm")
    t.add_argument("--config")
    t.add_argument("--arm")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--corpus", help="corpus directory (default OUT/corpus)")
    t.add_argument("--out", required=True)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="structured-pool retrieval scoreboard")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--pool-config", default="canonical", help="'canonical', 'toy' or a JSON file")
    e.add_argument("--seed", type=int, help="pool seed")
    e.add_argument("--corpus")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("validate", help="run the validation battery")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--tests", default=",".join(V.TESTS))
    v.add_argument("--pool-config", default="toy")
    v.add_argument("--corpus")
    v.add_argument("--out")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("report", help="merge retrieval reports into a table")
    r.add_argument("--inputs", nargs="+", required=True)
    r.add_argument("--format", choices=("json", "markdown-table"), default="markdown-table")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    if _threads is not None and not (_threads.isdigit() and int(_threads) > 0):
        print(f"xmodal: XMODAL_THREADS must be a positive integer, got {_threads!r}", file=sys.stderr)
        return EXIT_CONFIG
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"xmodal: {e}", file=sys.stderr)
        return e.code


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


if __name__ == "__main__":
    sys.exit(main())
