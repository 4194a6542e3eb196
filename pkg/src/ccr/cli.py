"""Command line entry point: ``ccr {gen-synth,train,eval,ablate,grad-check,replay}``.

Every file a command writes gets a ``<output>.manifest.json`` companion that
records the command line, effective configuration, seed, package version,
input/output checksums and wall time.  ``ccr replay <manifest>`` re-runs the
recorded command and checks that the outputs come out byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .config import HyperParams, load_json
from .errors import CCRError, ConfigError, DataError, NumericFailure

SEED_ENV = "LECCR_SEED"
EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(CCRError):
    category = "usage-error"


def _sha256(path) -> str:
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(str(f.relative_to(path)).encode())
            h.update(f.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _resolve_seed(flag, config_seed=None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return 0 if config_seed is None else config_seed


def _write_manifests(command: str, argv, outputs: dict, inputs: list, config: dict,
                     seed: int, started: float) -> None:
    record = {
        "command": command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "seed": seed,
        "config": config,
        "version": __version__,
        "wall_time_s": round(time.time() - started, 3),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {flag: {"path": str(p), "sha256": _sha256(p)} for flag, p in outputs.items()},
    }
    for path in outputs.values():
        Path(f"{path}.manifest.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _read_config(path, data_flag):
    raw = load_json(path)
    data = raw.pop("data", None)
    hp = HyperParams.from_dict(raw)
    return hp, data_flag or data


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_synth(args, argv, started) -> int:
    from .features import MODALITIES, SynthSpec, generate_synthetic, save_features

    seed = _resolve_seed(args.seed)
    spec = SynthSpec(
        n_items=args.n_items, n_test=args.n_test, latent_dim=args.latent_dim,
        dims={m: args.dim for m in MODALITIES}, sigma_en=args.sigma_en,
        sigma_noneng=args.sigma_noneng, sigma_visual=args.sigma_visual,
        sigma_description=args.sigma_description, n_facets=args.n_facets,
        facets_per_description=args.facets)
    dataset = generate_synthetic(spec, seed)
    save_features(args.out, dataset, extra={"synth_spec": spec.to_dict(), "seed": seed})
    print(f"wrote {len(dataset)} items to {args.out}")
    _write_manifests("gen-synth", argv, {"--out": args.out}, [], spec.to_dict(), seed, started)
    return EXIT_OK


def cmd_train(args, argv, started) -> int:
    from .features import load_features
    from .model import save_checkpoint
    from .trainer import fit

    hp, data = _read_config(args.config, args.data)
    if data is None:
        raise ConfigError("no training data: pass --data or set \"data\" in the config")
    hp = hp.replace(seed=_resolve_seed(args.seed, hp.seed))
    dataset = load_features(data).subset(args.split)
    log_every = max(1, args.log_every)

    def progress(step, rec):
        if step % log_every == 0:
            print(f"step {step:5d} lr {rec['lr']:.4g} loss {rec['L_total']:.5f}", flush=True)

    try:
        model, log = fit(dataset, hp, callback=None if args.quiet else progress)
    except NumericFailure as exc:
        from .model import RetrievalModel
        from .features import MODALITIES

        if exc.params is not None:
            model = RetrievalModel(hp, {m: dataset.shape(m)[1] for m in MODALITIES})
            model.load_state(exc.params)
            save_checkpoint(args.out, model, extra={"aborted": str(exc)})
        raise
    save_checkpoint(args.out, model)
    log_path = Path(f"{args.out}.trainlog.json")
    log_path.write_text(json.dumps(log.records) + "\n")
    print(f"final loss {log.records[-1]['L_total']:.6f}" if len(log) else "no steps run")
    _write_manifests("train", argv, {"--out": args.out, "trainlog": log_path}, [args.config, data],
                     hp.to_dict(), hp.seed, started)
    return EXIT_OK


def cmd_eval(args, argv, started) -> int:
    from .evaluation import evaluate_dataset, write_report
    from .features import load_features
    from .interaction import dump_attention
    from .model import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    dataset = load_features(args.data).subset(args.split)
    beta = model.hp.beta if args.beta is None else args.beta
    ev = evaluate_dataset(model, dataset, beta=beta)
    row = ev.row(Path(args.checkpoint).stem, beta, model.hp.seed)
    outputs = {}
    if args.report:
        write_report(args.report, [row])
        outputs["--report"] = args.report
    if args.dump_attn:
        if ev.v2c_attention is None:
            raise ConfigError("this checkpoint has no interaction module; nothing to dump")
        dump_attention(ev.v2c_attention, args.dump_attn, dataset.ids)
        outputs["--dump-attn"] = args.dump_attn
    for rep in (ev.t2v, ev.v2t):
        print(rep.direction, " ".join(f"R@{k}={v:.4f}" for k, v in rep.recalls.items()))
    print(f"SumR {ev.sumr:.2f}")
    if outputs:
        _write_manifests("eval", argv, outputs, [args.checkpoint, args.data],
                         dict(model.hp.to_dict(), beta=beta), model.hp.seed, started)
    return EXIT_OK


def cmd_ablate(args, argv, started) -> int:
    from .evaluation import ablation_config, ablation_sweep, write_report
    from .features import load_features

    hp, data = _read_config(args.config, args.data)
    if data is None:
        raise ConfigError("no data: pass --data or set \"data\" in the config")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values is empty")
    for v in values:
        ablation_config(hp, args.axis, v)
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
    else:
        seeds = [_resolve_seed(None, hp.seed)]
    dataset = load_features(data)
    train, test = dataset.subset(args.train_split), dataset.subset(args.test_split)
    rows = ablation_sweep(hp, args.axis, values, train, test, seeds,
                          progress=lambda r: print(f"{r['config_id']} seed {r['seed']}: SumR {r['sumr']:.2f}",
                                                   flush=True))
    write_report(args.report, rows)
    _write_manifests("ablate", argv, {"--report": args.report}, [args.config, data],
                     dict(hp.to_dict(), axis=args.axis, values=values, seeds=seeds), seeds[0], started)
    return EXIT_OK


def cmd_grad_check(args, argv, started) -> int:
    from .gradsuite import run_suite

    seed = _resolve_seed(args.seed)
    failed = False
    for s in range(seed, seed + args.n_seeds):
        for name, rep in run_suite(s, tolerance=args.tolerance).items():
            status = "pass" if rep.passed else "FAIL"
            failed |= not rep.passed
            print(f"seed {s} {name}: max relative error {rep.max_error:.3e} {status}")
    if failed:
        raise NumericFailure("gradient check failed")
    return EXIT_OK


def cmd_replay(args, argv, started) -> int:
    ok = replay(args.manifest, args.out_dir)
    print("replay reproduced every output" if ok else "replay outputs DIFFER")
    return EXIT_OK if ok else EXIT_ERROR


def replay(manifest_path, out_dir=None) -> bool:
    """Re-run a recorded command, writing outputs under ``out_dir``; True iff all outputs match."""
    record = json.loads(Path(manifest_path).read_text())
    cwd = Path(record["cwd"])
    for path, digest in record["inputs"].items():
        full = Path(path) if Path(path).is_absolute() else cwd / path
        if _sha256(full) != digest:
            raise DataError(f"input {path} changed since the recorded run")
    out_dir = Path(out_dir or tempfile.mkdtemp(prefix="ccr-replay-")).resolve()
    out_dir.mkdir(parents=True, exist_ok=True)
    argv = list(record["argv"])
    # pin the seed explicitly so an environment override cannot change the rerun
    if record["command"] in ("gen-synth", "train", "grad-check") and "--seed" not in argv:
        argv += ["--seed", str(record["seed"])]
    if record["command"] == "ablate" and "--seeds" not in argv:
        argv += ["--seeds", ",".join(str(s) for s in record["config"]["seeds"])]
    new_paths = {}
    for flag, info in record["outputs"].items():
        target = out_dir / Path(info["path"]).name
        new_paths[flag] = target
        if flag.startswith("--"):
            argv[argv.index(flag) + 1] = str(target)
    prev = os.getcwd()
    os.chdir(cwd)
    try:
        code = run_cli(argv)
    finally:
        os.chdir(prev)
    if code != EXIT_OK:
        return False
    if record["command"] == "train":
        new_paths["trainlog"] = Path(f"{new_paths['--out']}.trainlog.json")
    return all(_sha256(new_paths[flag]) == info["sha256"] for flag, info in record["outputs"].items())


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ccr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic triplet dataset")
    p.add_argument("--n-items", type=int, required=True)
    p.add_argument("--n-test", type=int, default=0, help="items reserved for the test split")
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma-en", type=float, default=0.1)
    p.add_argument("--sigma-noneng", type=float, default=0.2)
    p.add_argument("--sigma-visual", type=float, default=0.1)
    p.add_argument("--sigma-description", type=float, default=0.05)
    p.add_argument("--facets", type=int, default=3, help="facets per description")
    p.add_argument("--n-facets", type=int, default=4)
    p.add_argument("--latent-dim", type=int, default=128)
    p.add_argument("--dim", type=int, default=128, help="feature dim of every modality")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--data")
    p.add_argument("--split", default="train")
    p.add_argument("--seed", type=int)
    p.add_argument("--log-every", type=int, default=100)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (t2v and v2t recall)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--beta", type=float)
    p.add_argument("--dump-attn", help="directory for per-sample, per-head V2C attention CSVs")
    p.add_argument("--report", help="CSV report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate one run per value of an ablation axis")
    p.add_argument("--axis", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--report", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--train-split", default="train")
    p.add_argument("--test-split", default="test")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference check of every loss")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-seeds", type=int, default=1)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("replay", help="re-run a recorded command and compare outputs")
    p.add_argument("manifest")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_replay)
    return parser


def run_cli(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    started = time.time()
    try:
        return args.func(args, argv, started)
    except UsageError as exc:
        print(f"[{exc.category}] {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"[{exc.category}] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"[{exc.category}] {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CCRError as exc:
        print(f"[{exc.category}] {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"[io-error] {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run_cli())
