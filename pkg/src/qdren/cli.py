"""Command-line entry point: gen, train, eval, gates, gradcheck, search,
compare. Every run is reproducible from its resolved config plus seed.

Exit codes: 0 success, 1 input/config error, 2 usage error, 3 check failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__
from .data import (RawStory, SplitDataset, Vocabulary, apply_input_style,
                   encode_story, gen_entity_cloze, gen_single_fact,
                   parse_babi, serialize_babi)
from .gradcheck import MAX_D, MAX_Z, gradient_check
from .model import (CheckpointError, ModelConfig, forward, load_checkpoint,
                    save_checkpoint)
from .training import SearchSpace, compare_modes, evaluate, random_search, train

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_USAGE = 2
EXIT_CHECK = 3

CONFIG_EXTRA_KEYS = {"data_dir", "out_dir", "patience"}


def _load_run_config(path: str, overrides: dict) -> tuple[ModelConfig, dict]:
    """Flat JSON config; unknown keys rejected; CLI flags override."""
    with open(path) as f:
        raw = json.load(f)
    model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = set(raw) - model_keys - CONFIG_EXTRA_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    extra = {k: raw.pop(k) for k in list(raw) if k in CONFIG_EXTRA_KEYS}
    raw.update({k: v for k, v in overrides.items() if v is not None and k in model_keys})
    extra.update({k: v for k, v in overrides.items() if v is not None and k in CONFIG_EXTRA_KEYS})
    return ModelConfig.from_dict(raw), extra


def _write_resolved_config(out_dir: str, config: ModelConfig, extra: dict):
    os.makedirs(out_dir, exist_ok=True)
    resolved = dict(config.to_dict(), **extra)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(resolved, f, indent=1, sort_keys=True)


def _load_split_files(data_dir: str, input_style: str, window: int) -> SplitDataset:
    from .data import prepare_dataset

    splits = []
    for name in ("train.txt", "valid.txt", "test.txt"):
        path = os.path.join(data_dir, name)
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing data file {path}")
        with open(path) as f:
            splits.append(parse_babi(f.read()))
    return prepare_dataset(*splits, input_style=input_style, window=window)


def _model_overrides(args) -> dict:
    return {
        "mode": args.mode.upper() if getattr(args, "mode", None) else None,
        "z": getattr(args, "blocks", None),
        "d": getattr(args, "d", None),
        "lr": getattr(args, "lr", None),
        "l2": getattr(args, "l2", None),
        "dropout": getattr(args, "dropout", None),
        "window": getattr(args, "window", None),
        "optimizer": getattr(args, "optimizer", None),
        "batch_size": getattr(args, "batch", None),
        "seed": getattr(args, "seed", None),
        "max_epochs": getattr(args, "epochs", None),
        "input_style": getattr(args, "input_style", None),
        "phi_out": getattr(args, "phi_out", None),
        "patience": getattr(args, "patience", None),
        "data_dir": getattr(args, "data", None),
        "out_dir": getattr(args, "out", None),
    }


# ---------------------------------------------------------------------------
# Commands


def cmd_gen(args) -> int:
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    names = ["train.txt", "valid.txt", "test.txt"]
    paths = [os.path.join(out_dir, n) for n in names]
    if not args.force:
        existing = [p for p in paths if os.path.exists(p)]
        if existing:
            print(f"refusing to overwrite {existing}; pass --force", file=sys.stderr)
            return EXIT_INPUT
    sizes = [args.n, args.n_valid or max(1, args.n // 5),
             args.n_test or max(1, args.n // 5)]
    child_seeds = [int(s) for s in np.random.SeedSequence(args.seed).generate_state(3)]
    header = (f"qdren gen v{__version__} task={args.task} seed={args.seed} "
              f"n={sizes} entities={args.entities} locations={args.locations} "
              f"story_len={args.story_len} facts={args.facts}")
    for path, size, child in zip(paths, sizes, child_seeds):
        if args.task == "single-fact":
            stories = gen_single_fact(child, size, args.entities, args.locations,
                                      story_len=args.story_len)
        else:
            stories = gen_entity_cloze(child, size, args.entities, n_facts=args.facts)
        with open(path, "w") as f:
            f.write(serialize_babi(stories, header=header))
    print(f"wrote {', '.join(paths)}")
    return EXIT_OK


def cmd_train(args) -> int:
    config, extra = _load_run_config(args.config, _model_overrides(args))
    data_dir = extra.get("data_dir")
    out_dir = extra.get("out_dir", ".")
    if not data_dir:
        raise ValueError("config must provide data_dir (or pass --data)")
    dataset = _load_split_files(data_dir, config.input_style, config.window)
    config = config.for_dataset(dataset)
    patience = int(extra.get("patience", 50))
    _write_resolved_config(out_dir, config, {"data_dir": data_dir,
                                             "out_dir": out_dir,
                                             "patience": patience})
    params, report = train(config, dataset, patience=patience)
    save_checkpoint(params, config, os.path.join(out_dir, "checkpoint"),
                    vocab=dataset.vocab)
    with open(os.path.join(out_dir, "report.csv"), "w") as f:
        f.write(report.to_csv())
    print(f"best epoch {report.best_epoch}: val_acc={report.best_val_acc:.4f} "
          f"({report.stopping_reason})")
    return EXIT_OK


def _load_eval_stories(path: str, config: ModelConfig, vocab: Vocabulary):
    with open(path) as f:
        raw = parse_babi(f.read())
    raw = apply_input_style(raw, config.input_style, config.window)
    missing = sorted({s.answer for s in raw if s.answer not in vocab})
    if missing:
        raise ValueError(
            f"vocabulary mismatch: answers not in checkpoint vocabulary: {missing[:10]}")
    return [encode_story(r, vocab) for r in raw]


def cmd_eval(args) -> int:
    params, config, vocab = load_checkpoint(args.checkpoint)
    if vocab is None:
        raise CheckpointError("checkpoint carries no vocabulary; cannot evaluate")
    stories = _load_eval_stories(args.data, config, vocab)
    acc, err = evaluate(params, stories, config)
    print(f"accuracy={acc:.4f} error={err:.4f} n={len(stories)}")
    if args.predictions:
        from .training import _predict_story
        with open(args.predictions, "w") as f:
            f.write("story,prediction,answer,correct\n")
            for i, s in enumerate(stories):
                p = _predict_story(params, s, config)
                f.write(f"{i},{vocab.decode(p)},{vocab.decode(s.answer)},{int(p == s.answer)}\n")
    return EXIT_OK


def cmd_gates(args) -> int:
    params, config, vocab = load_checkpoint(args.checkpoint)
    if vocab is None:
        raise CheckpointError("checkpoint carries no vocabulary")
    stories = _load_eval_stories(args.data, config, vocab)
    if not 0 <= args.story < len(stories):
        raise ValueError(f"story index {args.story} out of range ({len(stories)} stories)")
    story = stories[args.story]
    _, trace, _ = forward(params, story, config, training=False)
    labels = [" ".join(vocab.decode(t) for t in s) for s in story.sentences]
    lines = ["block,step,sentence,gate"]
    for i in range(trace.z):
        for t in range(trace.t):
            lines.append(f'{i},{t},"{labels[t]}",{trace.gates[i, t]:.6f}')
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out} ({trace.z * trace.t} rows)")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_gradcheck(args, parser) -> int:
    if args.d > MAX_D or args.blocks > MAX_Z:
        parser.error(f"gradcheck requires d<={MAX_D} and blocks<={MAX_Z}")
    modes = ["REN", "QDREN"] if args.mode == "both" else [args.mode.upper()]
    phis = ["sigmoid", "prelu"] if args.phi == "both" else [args.phi]
    styles = ["sentences", "windows"] if args.style == "both" else [args.style]
    threshold = 1e-3
    worst = (0.0, None)
    ok = True
    for mode in modes:
        for style in styles:
            for phi in phis:
                results = gradient_check(mode=mode, input_style=style, phi=phi,
                                         d=args.d, z=args.blocks, eps=args.eps,
                                         seed=args.seed, corrupt=args.corrupt)
                for group, err in results.items():
                    status = "ok" if err < threshold else "FAIL"
                    print(f"{mode:5s} {style:9s} {phi:7s} {group:10s} "
                          f"max_rel_err={err:.3e} {status}")
                    if err >= threshold:
                        ok = False
                    if err > worst[0]:
                        worst = (err, (mode, style, phi, group))
    if not ok:
        print(f"worst: {worst[1]} max_rel_err={worst[0]:.3e}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_search(args) -> int:
    config, extra = _load_run_config(args.config, _model_overrides(args))
    data_dir = extra.get("data_dir")
    if not data_dir:
        raise ValueError("config must provide data_dir (or pass --data)")
    out_dir = extra.get("out_dir", ".")
    dataset = _load_split_files(data_dir, config.input_style, config.window)
    space = SearchSpace()
    trials = random_search(space, args.budget, dataset, config,
                           train_subsample=args.subsample, seed=args.seed,
                           patience=int(extra.get("patience", 10)))
    _write_resolved_config(out_dir, config, {"data_dir": data_dir,
                                             "budget": args.budget,
                                             "search_seed": args.seed})
    lines = ["rank,trial,val_acc,val_loss,best_epoch,draw"]
    for rank, t in enumerate(trials):
        lines.append(f"{rank},{t.index},{t.val_acc:.4f},{t.val_loss:.4f},"
                     f"{t.best_epoch},\"{json.dumps(t.draw)}\"")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "trials.csv"), "w") as f:
        f.write(text)
    print(text, end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    config, extra = _load_run_config(args.config, _model_overrides(args))
    data_dir = extra.get("data_dir")
    if not data_dir:
        raise ValueError("config must provide data_dir (or pass --data)")
    dataset = _load_split_files(data_dir, config.input_style, config.window)
    seeds = [int(s) for s in args.seeds.split(",")]
    result = compare_modes(dataset, config, seeds,
                           patience=int(extra.get("patience", 20)))
    print("seed,ren_acc,qdren_acc,delta")
    for s, r, q, dl in zip(result.seeds, result.ren_acc, result.qdren_acc, result.deltas):
        print(f"{s},{r:.4f},{q:.4f},{dl:+.4f}")
    print(f"mean_delta={result.mean_delta:+.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdren", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_model_flags(sp):
        sp.add_argument("--mode", choices=["ren", "qdren", "REN", "QDREN"])
        sp.add_argument("--blocks", type=int)
        sp.add_argument("--d", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--l2", type=float)
        sp.add_argument("--dropout", type=float)
        sp.add_argument("--window", type=int)
        sp.add_argument("--optimizer", choices=["adam", "rmsprop"])
        sp.add_argument("--batch", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--patience", type=int)
        sp.add_argument("--input-style", dest="input_style",
                        choices=["sentences", "windows"])
        sp.add_argument("--phi-out", dest="phi_out",
                        choices=["prelu", "sigmoid", "relu", "tanh", "identity"])
        sp.add_argument("--data")
        sp.add_argument("--out")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--task", required=True, choices=["single-fact", "entity-cloze"])
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--n-valid", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--entities", type=int, default=5)
    g.add_argument("--locations", type=int, default=6)
    g.add_argument("--story-len", type=int, default=5)
    g.add_argument("--facts", type=int, default=6)
    g.add_argument("--window", type=int, default=5)
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true")

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    add_model_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a data file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--predictions")

    ga = sub.add_parser("gates", help="export a gate-activation trace as CSV")
    ga.add_argument("--checkpoint", required=True)
    ga.add_argument("--data", required=True)
    ga.add_argument("--story", type=int, default=0)
    ga.add_argument("--out")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient oracle")
    gc.add_argument("--mode", default="both", choices=["both", "ren", "qdren", "REN", "QDREN"])
    gc.add_argument("--phi", default="both", choices=["both", "sigmoid", "prelu"])
    gc.add_argument("--style", default="both", choices=["both", "sentences", "windows"])
    gc.add_argument("--d", type=int, default=8)
    gc.add_argument("--blocks", type=int, default=4)
    gc.add_argument("--eps", type=float, default=1e-3)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    s = sub.add_parser("search", help="random hyperparameter search")
    s.add_argument("--config", required=True)
    s.add_argument("--budget", type=int, default=10)
    s.add_argument("--subsample", type=int)
    add_model_flags(s)

    c = sub.add_parser("compare", help="paired REN vs QDREN comparison")
    c.add_argument("--config", required=True)
    c.add_argument("--seeds", default="0,1,2")
    add_model_flags(c)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "gates":
            return cmd_gates(args)
        if args.command == "gradcheck":
            return cmd_gradcheck(args, parser)
        if args.command == "search":
            return cmd_search(args)
        if args.command == "compare":
            return cmd_compare(args)
        parser.error(f"unknown command {args.command!r}")
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_USAGE


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
