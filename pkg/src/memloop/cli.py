"""Command line: synth | filter | eval | score | export-traj | train-toy | cost | report.

Every command writes ``manifest.json`` next to its outputs.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import cost as costmod
from . import dapo, tasks
from .gateway import EndpointConfig, HttpGateway, make_mock
from .tokens import TokenCounter
from .verifiers import near_miss, score as score_answer
from .workflow import Budgets, EpisodeAborted, read_traces, run_episode, write_traces

logger = logging.getLogger("memloop")


class ConfigError(ValueError):
    pass


# manifests

def git_blob_hash(path) -> str:
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class RunManifest:
    run_id: str
    command: str
    config: dict
    seeds: dict
    inputs: dict
    outputs: dict
    started: str
    ended: str

    def verify(self, root) -> list[str]:
        """Outputs that are missing or no longer match their recorded hash."""
        bad = []
        for name, digest in self.outputs.items():
            p = Path(root) / name
            if not p.exists() or git_blob_hash(p) != digest:
                bad.append(name)
        return bad


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, command, config, seeds, inputs, outputs, started) -> RunManifest:
    out_dir = Path(out_dir)
    blob = json.dumps({"command": command, "config": config, "seeds": seeds}, sort_keys=True, default=str)
    m = RunManifest(
        run_id=hashlib.sha1(blob.encode()).hexdigest()[:12],
        command=command,
        config=config,
        seeds=seeds,
        inputs={str(p): git_blob_hash(p) for p in inputs},
        outputs={str(Path(p).relative_to(out_dir)): git_blob_hash(p) for p in sorted(outputs)},
        started=started,
        ended=_now(),
    )
    (out_dir / "manifest.json").write_text(json.dumps(asdict(m), indent=2, sort_keys=True, default=str) + "\n")
    return m


def read_manifest(path) -> RunManifest:
    return RunManifest(**json.loads(Path(path).read_text()))


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _counter(cfg: dict) -> TokenCounter:
    c = cfg.get("counter", "whitespace")
    if isinstance(c, dict):
        return TokenCounter(c.get("mode", "whitespace"), c.get("vocab_path"))
    return TokenCounter(c)


# synth

def _read_questions(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                for key in ("question_id", "question", "answers", "golden_ids"):
                    if key not in rec:
                        raise KeyError(key)
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad question record ({exc})") from exc
            out.append(rec)
    return out


def synthesize(spec: dict, out_dir, seed: int | None = None) -> list[Path]:
    """Write one dataset JSONL per (family, length) described by ``spec``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = spec.get("seed", 0) if seed is None else seed
    counter = _counter(spec)
    families = spec.get("families", [])
    if not families:
        logger.warning("synth config lists no families; nothing to do")
    written = []
    for i, fam in enumerate(families):
        name = fam.get("family")
        if name not in tasks.FAMILIES:
            raise ConfigError(f"families[{i}]: unknown family {name!r}")
        n = int(fam.get("samples", 1))
        params = dict(fam.get("params", {}))
        if name == "qa_haystack":
            for key in ("corpus", "questions", "article_counts"):
                if key not in fam:
                    raise ConfigError(f"families[{i}]: qa_haystack needs {key!r}")
            corpus = tasks.read_corpus(fam["corpus"], counter)
            by_id = {a.article_id: a for a in corpus}
            questions = _read_questions(fam["questions"])[:n]
            lengths = tasks.LengthSchedule(fam["article_counts"], "articles")
            for count in lengths:
                insts = []
                for q in questions:
                    missing = [g for g in q["golden_ids"] if g not in by_id]
                    if missing:
                        raise ConfigError(f"question {q['question_id']}: golden articles {missing} not in corpus")
                    insts.append(tasks.build_qa_haystack(
                        q["question"], q["answers"], [by_id[g] for g in q["golden_ids"]], corpus, count,
                        seed, counter, instance_id=f"qa_haystack-{count}-{q['question_id']}"))
                path = tasks.dataset_path(out_dir, name, count)
                tasks.write_dataset(path, insts)
                written.append(path)
            continue
        lengths = tasks.LengthSchedule(fam.get("lengths", list(tasks.TOKEN_SCHEDULE)))
        for length in lengths:
            insts = [tasks.generate(name, length, seed * 1_000_003 + j, counter,
                                    instance_id=f"{name}-{length}-{j}", **params) for j in range(n)]
            path = tasks.dataset_path(out_dir, name, length)
            tasks.write_dataset(path, insts)
            written.append(path)
    return written


def cmd_synth(args) -> int:
    started = _now()
    spec = _load_json(args.config)
    outs = synthesize(spec, args.out, args.seed)
    seed = spec.get("seed", 0) if args.seed is None else args.seed
    write_manifest(args.out, "synth", spec, {"seed": seed}, [args.config], outs, started)
    print(f"wrote {len(outs)} dataset files to {args.out}")
    return 0


# gateways

def build_gateway(args, cfg: dict, seed: int = 0):
    if getattr(args, "mock", None):
        return make_mock(args.mock, seed=seed, max_in_flight=args.concurrency)
    ep = dict(cfg.get("endpoint", {}))
    if args.endpoint:
        ep["base_url"] = args.endpoint
    if getattr(args, "model", None):
        ep["model_name"] = args.model
    if "base_url" not in ep:
        raise ConfigError("no model: pass --mock <behavior> or --endpoint <url>")
    ep.setdefault("model_name", "default")
    ep["max_in_flight"] = args.concurrency
    return HttpGateway(EndpointConfig(**ep))


# filter

def cmd_filter(args) -> int:
    started = _now()
    cfg = _load_json(args.config) if args.config else {}
    gw = build_gateway(args, cfg, args.seed or 0)
    insts = tasks.read_dataset(args.dataset)
    report = tasks.filter_known_questions(insts, gw, attempts=args.attempts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kept = out / Path(args.dataset).name
    tasks.write_dataset(kept, report.kept)
    summary = out / "filter_report.json"
    summary.write_text(json.dumps({
        "total": len(insts), "kept": len(report.kept), "dropped": len(report.dropped),
        "unfiltered": len(report.unfiltered), "drop_rate": report.drop_rate,
        "dropped_ids": [i.instance_id for i in report.dropped],
    }, indent=2) + "\n")
    write_manifest(out, "filter", {**cfg, "mock": args.mock, "attempts": args.attempts},
                   {"seed": args.seed or 0}, [args.dataset], [kept, summary], started)
    print(f"kept {len(report.kept)} of {len(insts)} (drop rate {report.drop_rate:.1%})")
    return 0


# eval

def evaluate(instances, gateway, out_dir, budgets: Budgets = Budgets(), counter: TokenCounter = TokenCounter(),
             concurrency: int = 4, group_size: int = 1, seed: int = 0) -> dict:
    """Run every (instance, episode) not already present in ``out_dir/traces.jsonl``.

    Completed episodes are appended as they finish, so an interrupted run can
    be resumed; at the end the file is rewritten in dataset order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / "traces.jsonl"
    timing_path = out_dir / "timings.jsonl"
    fail_path = out_dir / "failures.jsonl"
    done = {}
    if trace_path.exists():
        for tr in read_traces(trace_path, complete_only=True):
            done[(tr.sample_id, tr.episode_index)] = tr
        write_traces(trace_path, done.values())
    todo = [(inst, g) for inst in instances for g in range(group_size)
            if (inst.instance_id, g) not in done]
    lock = threading.Lock()
    failures = []

    def work(item):
        inst, g = item
        gw = gateway.with_seed(seed + g) if hasattr(gateway, "with_seed") else gateway
        try:
            tr = run_episode(inst, gw, budgets, counter, episode_index=g)
        except EpisodeAborted as exc:
            with lock:
                failures.append({"sample_id": inst.instance_id, "episode_index": g, "error": str(exc.cause),
                                 "completed_conversations": len(exc.trace.conversations)})
            return
        except ValueError as exc:
            with lock:
                failures.append({"sample_id": inst.instance_id, "episode_index": g, "error": str(exc)})
            return
        with lock:
            write_traces(trace_path, [tr], mode="a")
            with open(timing_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"sample_id": tr.sample_id, "episode_index": g,
                                     "wall_clock_ms": tr.wall_clock_ms}) + "\n")
            done[(tr.sample_id, g)] = tr

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        list(pool.map(work, todo))

    order = {(inst.instance_id, g): k for k, (inst, g) in
             enumerate((i, g) for i in instances for g in range(group_size))}
    write_traces(trace_path, sorted(done.values(), key=lambda t: order.get((t.sample_id, t.episode_index), 1 << 60)))
    if failures:
        with open(fail_path, "a", encoding="utf-8") as fh:
            for f in failures:
                fh.write(json.dumps(f) + "\n")
    return {"episodes": len(done), "failed": len(failures), "ran": len(todo)}


def cmd_eval(args) -> int:
    started = _now()
    cfg = _load_json(args.config) if args.config else {}
    counter = _counter(cfg)
    budgets = Budgets(**{**cfg.get("budgets", {}), **{k: v for k, v in (
        ("query", args.query), ("chunk", args.chunk), ("memory", args.memory), ("output", args.output))
        if v is not None}})
    gw = build_gateway(args, cfg, args.seed or 0)
    instances = [i for p in args.dataset for i in tasks.read_dataset(p)]
    ids = [i.instance_id for i in instances]
    if len(set(ids)) != len(ids):
        dup = sorted({x for x in ids if ids.count(x) > 1})
        raise ConfigError(f"duplicate instance ids across datasets: {dup[:5]}")
    stats = evaluate(instances, gw, args.out, budgets, counter, args.concurrency, args.group_size, args.seed or 0)
    out = Path(args.out)
    write_manifest(out, "eval", {**cfg, "budgets": asdict(budgets), "mock": args.mock, "endpoint": args.endpoint,
                                 "group_size": args.group_size, "concurrency": args.concurrency},
                   {"seed": args.seed or 0}, args.dataset, [out / "traces.jsonl"], started)
    print(f"{stats['episodes']} episodes complete ({stats['ran']} run now, {stats['failed']} failed)")
    return 0 if stats["failed"] == 0 else 1


# score

def length_of(inst: tasks.TaskInstance) -> int:
    if inst.family == "qa_haystack" and "n_articles" in inst.tags:
        return int(inst.tags["n_articles"])
    return inst.target_token_count


def wilson_interval(p: float, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return (0.0, 0.0)
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


@dataclass
class ResultRow:
    model: str
    family: str
    length: int
    accuracy: float
    n_samples: int
    mean_wall_clock_ms: float
    ci_low: float
    ci_high: float


def score_traces(traces, instances, model: str, timings: dict | None = None):
    by_id = {i.instance_id: i for i in instances}
    rows = []
    for tr in traces:
        inst = by_id.get(tr.sample_id)
        if inst is None:
            raise ConfigError(f"trace {tr.sample_id} has no matching dataset instance")
        res = score_answer(tr.final_answer, inst.answer_set)
        ms = sum((timings or {}).get((tr.sample_id, tr.episode_index), []))
        rows.append({"model": model, "family": inst.family, "length": length_of(inst),
                     "instance_id": tr.sample_id, "episode_index": tr.episode_index, "score": res.score,
                     "extraction_ok": res.extraction_ok,
                     "near_miss": near_miss(tr.final_answer, inst.answer_set), "wall_clock_ms": ms})
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["model"], r["family"], r["length"]), []).append(r)
    summary = []
    for (m, fam, length), rs in sorted(groups.items()):
        mean = float(np.mean([r["score"] for r in rs]))
        lo, hi = wilson_interval(mean, len(rs))
        summary.append(ResultRow(m, fam, length, 100.0 * mean, len(rs),
                                 float(np.mean([r["wall_clock_ms"] for r in rs])), 100.0 * lo, 100.0 * hi))
    return rows, summary


def read_timings(path) -> dict:
    out = {}
    if Path(path).exists():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    out[(rec["sample_id"], rec["episode_index"])] = rec["wall_clock_ms"]
    return out


def write_rows(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def read_summary(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        return [ResultRow(r["model"], r["family"], int(r["length"]), float(r["accuracy"]), int(r["n_samples"]),
                          float(r["mean_wall_clock_ms"]), float(r["ci_low"]), float(r["ci_high"]))
                for r in csv.DictReader(fh)]


def cmd_score(args) -> int:
    started = _now()
    instances = [i for p in args.dataset for i in tasks.read_dataset(p)]
    traces = read_traces(args.traces, complete_only=True)
    timings = read_timings(args.timings or Path(args.traces).with_name("timings.jsonl"))
    rows, summary = score_traces(traces, instances, args.model, timings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "scores.csv", [{k: v for k, v in r.items() if k != "wall_clock_ms"} for r in rows])
    write_rows(out / "summary.csv", [asdict(s) for s in summary])
    write_manifest(out, "score", {"model": args.model}, {}, [args.traces, *args.dataset],
                   [out / "scores.csv"], started)
    for s in summary:
        print(f"{s.model}\t{s.family}\t{s.length}\t{s.accuracy:.2f}\t(n={s.n_samples})")
    return 0


# export-traj

def cmd_export(args) -> int:
    started = _now()
    instances = {i.instance_id: i for p in args.dataset for i in tasks.read_dataset(p)}
    traces = read_traces(args.traces, complete_only=True)
    rewards = []
    for tr in traces:
        if tr.sample_id not in instances:
            raise ConfigError(f"trace {tr.sample_id} has no matching dataset instance")
        rewards.append(score_answer(tr.final_answer, instances[tr.sample_id].answer_set).score)
    records = dapo.export_trajectories(traces, rewards)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "trajectories.jsonl"
    dapo.write_jsonl(path, records)
    write_manifest(out, "export-traj", {}, {}, [args.traces, *args.dataset], [path], started)
    print(f"exported {len(records)} conversation records from {len(traces)} episodes")
    return 0


# train-toy

def cmd_train_toy(args) -> int:
    started = _now()
    game = dapo.CopyMemoryGame(args.symbols, args.blank_chunks)
    policy = dapo.SoftmaxPolicy(np.zeros((game.num_states, game.n_symbols)))
    cfg = dapo.DapoConfig(group_size=args.group_size)
    curve = dapo.train_toy(game, policy, cfg, steps=args.steps, lr=args.lr, seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "curve.csv"
    dapo.write_curve(path, curve)
    write_manifest(out, "train-toy", {**asdict(cfg), "steps": args.steps, "lr": args.lr,
                                      "symbols": args.symbols, "blank_chunks": args.blank_chunks},
                   {"seed": args.seed or 0}, [], [path], started)
    tail = curve[-min(50, len(curve)):]
    print(f"mean reward: first step {curve[0].mean_reward:.3f}, last {len(tail)} steps "
          f"{np.mean([p.mean_reward for p in tail]):.3f}")
    return 0


# cost

def cmd_cost(args) -> int:
    started = _now()
    cfg = _load_json(args.config) if args.config else {}
    if "shape" in cfg:
        shape = costmod.ModelShape(**cfg["shape"])
    elif args.shape == "qwen2.5-14b":
        shape = costmod.ModelShape.qwen2_5_14b()
    else:
        shape = costmod.ModelShape.qwen2_5_7b()
    grid = cfg.get("c_grid", list(costmod.DEFAULT_C_GRID))
    rows = costmod.compare(shape, args.q, args.o, args.N, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outs = [out / "cost.csv"]
    costmod.write_csv(outs[0], rows)
    if args.svg:
        costmod.write_svg(args.svg, rows)
        if Path(args.svg).resolve().parent == out.resolve():
            outs.append(Path(args.svg))
    from .templates import ANSWER_TEMPLATE, MEMORY_UPDATE_TEMPLATE, template_overhead
    counter = _counter(cfg)
    overheads = {"update_assumed": costmod.UPDATE_OVERHEAD, "final_assumed": costmod.FINAL_OVERHEAD,
                 "update_measured": template_overhead(counter, MEMORY_UPDATE_TEMPLATE),
                 "final_measured": template_overhead(counter, ANSWER_TEMPLATE)}
    (out / "overheads.json").write_text(json.dumps(overheads, indent=2) + "\n")
    outs.append(out / "overheads.json")
    write_manifest(out, "cost", {"shape": asdict(shape), "q": args.q, "o": args.o, "N": args.N, "c_grid": grid},
                   {}, [args.config] if args.config else [], outs, started)
    for r in rows:
        print(f"{r.c}\t{r.baseline:.3e}\t{r.memory_loop:.3e}\t{r.ratio:.2f}")
    print(f"crossover: {costmod.crossover(rows)}; prompt overheads {overheads}")
    return 0


# report

def render_report(rows: list[ResultRow]) -> tuple[str, list[str]]:
    warnings = []
    lines = []
    for fam in sorted({r.family for r in rows}):
        fam_rows = [r for r in rows if r.family == fam]
        lengths = sorted({r.length for r in fam_rows})
        models = sorted({r.model for r in fam_rows})
        cell = {(r.model, r.length): r for r in fam_rows}
        for m in models:
            missing = [L for L in lengths if (m, L) not in cell]
            if missing:
                warnings.append(f"{fam}: model {m} has no results at lengths {missing}")
        lines.append(f"## {fam}\n")
        lines.append("| Model | " + " | ".join(_fmt_len(L, fam) for L in lengths) + " |")
        lines.append("|---|" + "---|" * len(lengths))
        for m in models:
            cells = []
            for L in lengths:
                r = cell.get((m, L))
                cells.append("" if r is None else f"{r.accuracy:.2f} [{r.ci_low:.1f}, {r.ci_high:.1f}]")
            lines.append(f"| {m} | " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines), warnings


def _fmt_len(n: int, family: str) -> str:
    if family == "qa_haystack":
        return f"{n} docs"
    if n >= 1024 * 1024 and n % (1024 * 1024) == 0:
        return f"{n // (1024 * 1024)}M"
    if n >= 1024 and n % 1024 == 0:
        return f"{n // 1024}K"
    return str(n)


def write_accuracy_chart(path, rows: list[ResultRow], family: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for m in sorted({r.model for r in rows if r.family == family}):
        rs = sorted((r for r in rows if r.family == family and r.model == m), key=lambda r: r.length)
        xs = [r.length for r in rs]
        ax.plot(xs, [r.accuracy for r in rs], marker="o", label=m)
        ax.fill_between(xs, [r.ci_low for r in rs], [r.ci_high for r in rs], alpha=0.2)
    ax.set_xscale("log")
    ax.set_ylim(0, 105)
    ax.set_xlabel("context length")
    ax.set_ylabel("accuracy (%)")
    ax.set_title(family)
    ax.legend()
    fig.tight_layout()
    # fixed salt keeps element ids, and so the file bytes, reproducible
    with matplotlib.rc_context({"svg.hashsalt": "memloop"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_report(args) -> int:
    started = _now()
    rows = [r for p in args.scores for r in read_summary(p)]
    text, warnings = render_report(rows)
    for w in warnings:
        logger.warning(w)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    md = out / "report.md"
    md.write_text("# Accuracy (%) by context length\n\n" + text)
    outs = [md]
    for fam in sorted({r.family for r in rows}):
        p = out / f"accuracy_{fam}.svg"
        write_accuracy_chart(p, rows, fam)
        outs.append(p)
    write_manifest(out, "report", {}, {}, args.scores, outs, started)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memloop", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, model=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")
        if model:
            p.add_argument("--endpoint", help="base URL of an OpenAI-compatible server")
            p.add_argument("--model", help="model name sent to the endpoint")
            p.add_argument("--mock", help="mock behavior, e.g. perfect_extractor, lossy:0.3, fixed_answer:TEXT")
            p.add_argument("--concurrency", type=int, default=4)

    p = sub.add_parser("synth", help="generate datasets")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("filter", help="drop questions answerable without context")
    common(p, model=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--attempts", type=int, default=2)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval", help="run episodes over datasets")
    common(p, model=True)
    p.add_argument("--dataset", nargs="+", required=True)
    p.add_argument("--group-size", type=int, default=1)
    for name in ("query", "chunk", "memory", "output"):
        p.add_argument(f"--{name}", type=int, default=None, help=f"{name} token budget")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score traces against datasets")
    common(p)
    p.add_argument("--traces", required=True)
    p.add_argument("--dataset", nargs="+", required=True)
    p.add_argument("--timings")
    p.add_argument("--model", default="model")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("export-traj", help="write trainer JSONL with rewards and advantages")
    common(p)
    p.add_argument("--traces", required=True)
    p.add_argument("--dataset", nargs="+", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("train-toy", help="train the toy policy on the copy-memory game")
    common(p)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--group-size", type=int, default=8)
    p.add_argument("--symbols", type=int, default=2)
    p.add_argument("--blank-chunks", type=int, default=0)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("cost", help="FLOPs of full-context vs memory workflow")
    common(p)
    p.add_argument("--shape", default="qwen2.5-7b", choices=["qwen2.5-7b", "qwen2.5-14b"])
    p.add_argument("--q", type=int, default=1024)
    p.add_argument("--o", type=int, default=1024)
    p.add_argument("--N", type=int, default=5000)
    p.add_argument("--svg", help="write a log-log chart here")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("report", help="Markdown table and charts from score summaries")
    common(p)
    p.add_argument("--scores", nargs="+", required=True, help="summary.csv files")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, tasks.GenerationError, dapo.ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
