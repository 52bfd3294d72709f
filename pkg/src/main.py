"""
amss command-line entry point.

    amss [--config F] [--seed K] [--debug] [--jobs N] <group> <command> ...

Groups: aml (grammar tools), dsp (oracle editing), triples (dataset synthesis),
model (init / forward / gradcheck / train-micro) and bench (benchmark runs).
Exit codes: 0 success, 1 domain error, 2 usage error.
"""

import sys
import json
import logging
import argparse
import traceback
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

# Internal Imports
import config
import storage
from engines.aml_engine import (
    AmssDescription, Direction, Grammar, default_grammar, enumerate_queries, generate_random, interpret, parse, render,
)
from engines.dsp_engine import apply_plan, mix
from engines.metrics_engine import (
    METRICS, IdentitySystem, ModelSystem, OracleSystem, SilenceSystem, evaluate_benchmark,
)
from engines.triple_engine import build_generators, generate_triples
from errors import AmssError, MetricsError

logger = logging.getLogger("amss")

# ANSI Color Codes
RESET = "\033[0m"
BOLD = "\033[1m"
GREEN = "\033[92m"
YELLOW = "\033[93m"
RED = "\033[91m"
CYAN = "\033[96m"
GRAY = "\033[90m"

GRAD_TOLERANCE = 1e-4


class UsageError(Exception):
    """Bad argument values that argparse itself cannot detect."""


def _status(message: str, color: str = GRAY) -> None:
    print(f"{color}{message}{RESET}", file=sys.stderr)


def _csv(value: Optional[str]) -> Optional[List[str]]:
    if value is None:
        return None
    return [v.strip() for v in value.split(",") if v.strip()]


def _int_list(value: Optional[str]) -> List[int]:
    try:
        return [int(v) for v in _csv(value) or []]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got '{value}'") from None


def _tasks(value: Optional[str]) -> Optional[List[str]]:
    tasks = _csv(value)
    for task in tasks or []:
        if task not in config.TASK_IDS:
            raise UsageError(f"unknown task '{task}', expected one of {', '.join(config.TASK_IDS)}")
    return tasks


def _grammar(cfg: config.ToolConfig, tasks: Optional[str] = None) -> Grammar:
    return default_grammar(cfg.sources, _tasks(tasks))


def _write_output(path: str, track, cfg: config.ToolConfig, pcm16: bool = False, **extra) -> None:
    storage.write_wav(path, track, "PCM_16" if pcm16 else "FLOAT")
    storage.write_sidecar(path, cfg.config_hash, cfg.seed, extra)
    _status(f"[✓] Wrote {path}", GREEN)


# --- AML ---

def _emit(query: str, desc: Optional[AmssDescription] = None) -> None:
    """One JSON object per line: the query text and, when it is a full description, its AST."""
    payload = {"query": query}
    if desc is not None:
        payload["ast"] = desc.to_dict()
    print(json.dumps(payload))


def cmd_aml_parse(args: argparse.Namespace, cfg: config.ToolConfig) -> int:
    desc = parse(args.query, _grammar(cfg))
    payload = {"description": desc.to_dict(), "canonical": render(desc)}
    if args.plan:
        payload["plan"] = interpret(desc, cfg.level_table).to_dict()
    print(json.dumps(payload, indent=2))
    return 0


def cmd_aml_render(args: argparse.Namespace, cfg: config.ToolConfig) -> int:
    try:
        desc = AmssDescription.from_dict(json.loads(args.json))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise UsageError(f"invalid JSON description: {e}") from e
    _emit(render(desc), desc)
    return 0


def cmd_aml_gen(args: argparse.Namespace, cfg: config.ToolConfig) -> int:
    if args.count < 0:
        raise UsageError(f"--count must be non-negative, got {args.count}")
    grammar = _grammar(cfg, args.tasks)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(args.count):
        text, desc = generate_random(grammar, rng)
        _emit(text, desc)
    return 0


def cmd_aml_enum(args: argparse.Namespace, cfg: config.ToolConfig) -> int:
    grammar = _grammar(cfg, args.tasks)
    if args.symbol:
        # Fragments below the start symbol have no AST of their own.
        for fragment in enumerate_queries(grammar.restricted_to(args.symbol)):
            _emit(fragment)
        return 0
    for query in enumerate_queries(grammar):
        _emit(query, parse(query, grammar))
    return 0


# --- DSP ---

def cmd_dsp_apply(args: argparse.Namespace, cfg: config.ToolConfig) -> int:
    mt = storage.read_stems(args.stems, cfg.sources, args.allow_any_rate or None, cfg.sample_rate)
    plan = interpret(parse(args.query, _grammar(cfg)), cfg.level_table)
    if plan.direction == Direction.REMOVE:
        # The stems are the dry sources, so the removal result is their plain mixture.
        _status("[!] Removal query: writing the dry mixture of the stems", YELLOW)
        out = mix(mt)
    else:
        out = apply_plan(mt, plan, cfg.reverb)
    _write_output(args.out, out, cfg, args.pcm16, query=args.query, plan=plan.to_dict())
    return 0


# --- TRIPLES ---

def cmd_triples_gen(args: argparse.Namespace, cfg: config.ToolConfig) -> int:
    if args.count < 0:
        raise UsageError(f"--count must be non-negative, got {args.count}")
    tracks = storage.read_stem_tracks(args.stems, cfg.sources, args.allow_any_rate or None, cfg.sample_rate)
    gens = build_generators(_tasks(args.tasks), cfg.sources)
    _status(f"[*] Generating {args.count} triples from {len(tracks)} multitracks...", CYAN)
    triples = generate_triples(
        tracks, gens, args.count, cfg.seed, args.jobs,
        segment_s=args.segment, augment=not args.no_augment, cfg=cfg,
    )
    storage.write_dataset(
        triples, args.out, cfg.config_hash, cfg.seed,
        extra={"augment": not args.no_augment, "tasks": _tasks(args.tasks) or list(config.TASK_IDS)},
    )
    _status(f"[✓] Dataset written to {args.out}", GREEN)
    return 0


# --- MODEL ---

def _parse_keep_latent(value: Optional[str]) -> Optional[Tuple[int, int]]:
    if value is None:
        return None
    try:
        head, channel = (int(v) for v in value.split(":"))
    except ValueError:
        raise UsageError(f"--keep-latent expects HEAD:CHANNEL, got '{value}'") from None
    return head, channel


def cmd_model_init(args: argparse.Namespace, cfg: config.ToolConfig) -> int:
    from network.amss_net import init_params
    from network.description_encoder import build_vocabulary

    dims = cfg.micro_model if args.micro else cfg.model
    if args.decoder:
        dims = replace(dims, decoder=args.decoder)
    params = init_params(dims, cfg.seed, build_vocabulary(_grammar(cfg)), cfg.config_hash)
    params.save(args.out)
    print(f"{BOLD}{dims.decoder}{RESET} model: {params.n_parameters} parameters -> {args.out}")
    return 0


def cmd_model_forward(args: argparse.Namespace, cfg: config.ToolConfig) -> int:
    from network.amss_net import ModelParams, forward, progressive

    params = ModelParams.load(args.ckpt)
    audio = storage.read_wav(args.input, cfg.sample_rate, args.allow_any_rate or None)
    keep = _parse_keep_latent(args.keep_latent)
    if args.times > 1:
        if keep is not None:
            raise UsageError("--keep-latent cannot be combined with --times")
        out = progressive(audio, args.query, params, args.times)[-1]
    else:
        out = forward(audio, args.query, params, keep)
    _write_output(args.out, out, cfg, query=args.query, checkpoint=args.ckpt, times=args.times,
                  keep_latent=args.keep_latent)
    return 0


def cmd_model_gradcheck(args: argparse.Namespace, cfg: config.ToolConfig) -> int:
    from network.gradcheck import OPS, grad_check

    ops = [args.op] if args.op else list(OPS)
    for op in ops:
        if op not in OPS:
            raise UsageError(f"unknown op '{op}', expected one of {', '.join(OPS)}")
    failed = 0
    for op in ops:
        err = grad_check(op, seed=cfg.seed)
        ok = err <= args.tolerance
        failed += not ok
        color = GREEN if ok else RED
        print(f"  {op:<28} {err:.3e}  {color}{'PASS' if ok else 'FAIL'}{RESET}")
    return 0 if failed == 0 else 1


def cmd_model_train_micro(args: argparse.Namespace, cfg: config.ToolConfig) -> int:
    from network.amss_net import ModelParams, init_params
    from network.description_encoder import build_vocabulary
    from solver import Solver

    if args.steps <= 0:
        raise UsageError(f"--steps must be positive, got {args.steps}")
    triples, _ = storage.read_dataset(args.data, cfg.sources)
    validation = storage.read_dataset(args.val, cfg.sources)[0] if args.val else None
    if args.ckpt:
        params = ModelParams.load(args.ckpt)
    else:
        params = init_params(cfg.micro_model, cfg.seed, build_vocabulary(_grammar(cfg)), cfg.config_hash)

    _status(f"[*] Training {params.n_parameters} parameters on {len(triples)} triples...", CYAN)
    solver = Solver(params, cfg.training, args.jobs)
    result = solver.train(
        triples, steps=args.steps, lr=args.lr, batch_size=args.batch, validation=validation,
        restart_at=_int_list(args.halve_restart_at), seed=cfg.seed,
    )
    print(f"{BOLD}initial loss{RESET} {result.losses[0]:.6f}  {BOLD}final loss{RESET} {result.losses[-1]:.6f}")

    if args.out:
        result.params.extra = {"steps": args.steps, "losses": [float(x) for x in result.losses]}
        result.params.config_hash = cfg.config_hash
        result.params.save(args.out)
        _status(f"[✓] Checkpoint saved to {args.out}", GREEN)
    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        from visualizer import Visualizer

        viz = Visualizer()
        viz.save(viz.plot_loss_curve(result.losses, result.val_losses, result.restarts), args.plot)
        _status(f"[✓] Loss curve saved to {args.plot}", GREEN)
    return 0


# --- BENCH ---

def _system(spec: str, triples, cfg: config.ToolConfig, stems_dir: Optional[str], manifest: Dict[str, Any]):
    if spec == "identity":
        return IdentitySystem()
    if spec == "silence":
        return SilenceSystem()
    if spec == "oracle":
        if not stems_dir:
            return OracleSystem(triples, cfg=cfg)
        if manifest.get("augment", True):
            raise MetricsError(
                "--stems needs a dataset generated with --no-augment; augmented inputs are not mixes of the raw stems"
            )
        return OracleSystem(triples, storage.read_stems(stems_dir, cfg.sources, sample_rate=cfg.sample_rate), cfg)
    if spec.startswith("model:"):
        from network.amss_net import ModelParams
        return ModelSystem(ModelParams.load(spec.split(":", 1)[1]))
    raise UsageError(f"unknown system '{spec}' (oracle | identity | silence | model:CKPT)")


def _pairs(value: Optional[str]) -> Optional[List[Tuple[str, str]]]:
    if value is None:
        return None
    pairs = []
    for item in value.split(";"):
        task, sep, source = item.partition(":")
        if not sep:
            raise UsageError(f"--pairs expects task:source entries separated by ';', got '{item}'")
        pairs.append((task.strip(), source.strip()))
    return pairs


def cmd_bench_run(args: argparse.Namespace, cfg: config.ToolConfig) -> int:
    triples, manifest = storage.read_dataset(args.data, cfg.sources)
    system = _system(args.system, triples, cfg, args.stems, manifest)
    seeds = _int_list(args.seeds) or [cfg.seed + i for i in range(args.runs or 1)]
    if args.runs is not None and len(seeds) != args.runs:
        raise UsageError(f"--runs {args.runs} disagrees with {len(seeds)} --seeds")

    report = evaluate_benchmark(
        system, triples, _pairs(args.pairs), args.metric, seeds, args.jobs, cfg.config_hash, cfg,
    )
    report.metadata["seed"] = cfg.seed
    report.to_json(args.out)
    if args.table:
        print(report.format_table())
    _status(f"[✓] Report written to {args.out}", GREEN)
    return 0


# --- PARSER ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amss", description="Audio manipulation on specific sources toolkit.")
    parser.add_argument("--config", help="JSON tool configuration (default: $AMSS_CONFIG or config/amss.json)")
    parser.add_argument("--seed", type=int, help="Seed for every random draw (overrides the config)")
    parser.add_argument("--debug", action="store_true", default=config.DEBUG, help="Print stack traces on errors")
    parser.add_argument("--jobs", type=int, default=1, help="Worker threads (default 1)")
    groups = parser.add_subparsers(dest="group", metavar="<group>", required=True)

    # aml
    aml = groups.add_parser("aml", help="Audio manipulation language tools").add_subparsers(dest="command", required=True)
    p = aml.add_parser("parse", help="Parse a query into its description")
    p.add_argument("query")
    p.add_argument("--plan", action="store_true", help="Also print the DSP plan")
    p.set_defaults(handler=cmd_aml_parse)
    p = aml.add_parser("render", help="Render a JSON description canonically")
    p.add_argument("json")
    p.set_defaults(handler=cmd_aml_render)
    p = aml.add_parser("gen", help="Sample random queries")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--tasks")
    p.set_defaults(handler=cmd_aml_gen)
    p = aml.add_parser("enum", help="List every query of the grammar")
    p.add_argument("--symbol", help="Enumerate from this non-terminal instead of the start symbol")
    p.add_argument("--tasks")
    p.set_defaults(handler=cmd_aml_enum)

    # dsp
    dsp = groups.add_parser("dsp", help="Ground-truth DSP editing").add_subparsers(dest="command", required=True)
    p = dsp.add_parser("apply", help="Apply a query to a stem folder")
    p.add_argument("--stems", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--allow-any-rate", action="store_true")
    p.add_argument("--pcm16", action="store_true", help="Write 16-bit PCM instead of 32-bit float")
    p.set_defaults(handler=cmd_dsp_apply)

    # triples
    triples = groups.add_parser("triples", help="Training triple datasets").add_subparsers(dest="command", required=True)
    p = triples.add_parser("gen", help="Generate a dataset from stem folders")
    p.add_argument("--stems", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--tasks")
    p.add_argument("--segment", type=float, help="Segment length in seconds for augmentation")
    p.add_argument("--no-augment", action="store_true", help="Use whole multitracks without remixing")
    p.add_argument("--allow-any-rate", action="store_true")
    p.set_defaults(handler=cmd_triples_gen)

    # model
    model = groups.add_parser("model", help="AMSS network").add_subparsers(dest="command", required=True)
    p = model.add_parser("init", help="Write randomly initialized parameters")
    p.add_argument("--out", required=True)
    p.add_argument("--micro", action="store_true")
    p.add_argument("--decoder", choices=config.DECODER_VARIANTS)
    p.set_defaults(handler=cmd_model_init)
    p = model.add_parser("forward", help="Manipulate a WAV with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--times", type=int, default=1, help="Progressive manipulation: apply the query N times")
    p.add_argument("--keep-latent", help="HEAD:CHANNEL of the last decoding block to keep")
    p.add_argument("--allow-any-rate", action="store_true")
    p.set_defaults(handler=cmd_model_forward)
    p = model.add_parser("gradcheck", help="Finite-difference check of the backward passes")
    p.add_argument("--op")
    p.add_argument("--tolerance", type=float, default=GRAD_TOLERANCE)
    p.set_defaults(handler=cmd_model_gradcheck)
    p = model.add_parser("train-micro", help="Adam training of the micro model")
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--lr", type=float, required=True)
    p.add_argument("--batch", type=int)
    p.add_argument("--val", help="Held-out dataset for validation L1")
    p.add_argument("--ckpt", help="Start from this checkpoint instead of a fresh micro model")
    p.add_argument("--out")
    p.add_argument("--plot")
    p.add_argument("--halve-restart-at", help="Comma-separated steps for halve-and-restart")
    p.set_defaults(handler=cmd_model_train_micro)

    # bench
    bench = groups.add_parser("bench", help="Benchmark evaluation").add_subparsers(dest="command", required=True)
    p = bench.add_parser("run", help="Score a system on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--system", required=True)
    p.add_argument("--metric", choices=METRICS, default="auto")
    p.add_argument("--runs", type=int, help="Number of runs (default: one per seed)")
    p.add_argument("--seeds")
    p.add_argument("--pairs", help="task:source entries separated by ';' (default: every bucket in the data)")
    p.add_argument("--stems", help="Ground-truth stems for the oracle system")
    p.add_argument("--out", required=True)
    p.add_argument("--table", action="store_true")
    p.set_defaults(handler=cmd_bench_run)
    return parser


def configure_logging(debug: bool = False) -> None:
    level = logging.DEBUG if debug else getattr(logging, config.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(
        level=level, stream=sys.stderr, force=True,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2

    configure_logging(args.debug)
    previous = config.active_config()
    try:
        cfg = config.load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        # Engine defaults must agree with the config stamped into the outputs.
        config.use_config(cfg)
        logger.debug(f"config {cfg.path or '<defaults>'} | hash {cfg.config_hash} | seed {cfg.seed}")
        return args.handler(args, cfg)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"{RED}usage error:{RESET} {e}", file=sys.stderr)
        return 2
    except AmssError as e:
        if args.debug:
            traceback.print_exc()
        print(f"{RED}{BOLD}error:{RESET} {RED}{e}{RESET}", file=sys.stderr)
        return 1
    except Exception as e:
        if args.debug:
            traceback.print_exc()
        print(f"{RED}{BOLD}unexpected error ({type(e).__name__}):{RESET} {RED}{e}{RESET}", file=sys.stderr)
        return 1
    finally:
        config.use_config(previous)


def main() -> None:
    try:
        sys.exit(dispatch(sys.argv[1:]))
    except KeyboardInterrupt:
        print("\n\n[!] Operation cancelled by user.")
        sys.exit(130)


if __name__ == "__main__":
    main()
