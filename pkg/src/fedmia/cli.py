"""Command-line interface.

Subcommands: train (checkpoint a target model), attack (run the
membership-inference attack against a checkpoint), sweep (full
experiment run to CSV), summarize (aggregate a results CSV).

Exit codes: 0 success, 2 config error, 3 data/format error, 4 numeric
failure.
"""

import argparse
import sys
from dataclasses import replace

from . import attack as attack_mod
from . import experiment, nn
from .errors import ConfigError, FormatError, InputError, NumericError, ShapeError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedmia")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a target model and checkpoint it")
    train.add_argument("--config", required=True, help="experiment config file")
    train.add_argument("--seed", type=int, help="override the config seed list with one seed")
    train.add_argument("--mode", choices=("centralized", "federated"), help="override the training mode")
    train.add_argument("--clients", type=int, help="client count for federated mode")
    train.add_argument("--out", default="target.params", help="checkpoint path")

    atk = sub.add_parser("attack", help="run the attack against a checkpointed target")
    atk.add_argument("checkpoint", help="target checkpoint written by `train`")
    atk.add_argument("--config", required=True, help="experiment config file")
    atk.add_argument("--seed", type=int, help="override the config seed list with one seed")
    atk.add_argument("--batch-size", type=int, help="attack batch-wise with this batch size only")
    atk.add_argument("--samplewise", action="store_true", help="attack sample-wise only")

    sweep = sub.add_parser("sweep", help="run the full experiment sweep to CSV")
    sweep.add_argument("--config", required=True, help="experiment config file")
    sweep.add_argument("--seed", type=int, help="override the config seed list with one seed")
    sweep.add_argument("--out", help="results CSV path (default: config output)")

    summ = sub.add_parser("summarize", help="aggregate a results CSV")
    summ.add_argument("results", help="results CSV produced by `sweep`")
    summ.add_argument("--group-by", default="training_mode,n_clients,attack_mode,batch_size",
                      help="comma-separated ResultRow fields")
    summ.add_argument("--out", help="summary CSV path (default: stdout)")
    return parser


def _load_config(args) -> experiment.ExperimentConfig:
    cfg = experiment.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def _pick_training_mode(cfg, args) -> experiment.TrainingMode:
    if args.mode == "centralized":
        return experiment.CENTRALIZED
    if args.mode == "federated":
        if args.clients is not None:
            return experiment.federated_mode(args.clients)
        for mode in cfg.training_modes:
            if mode.kind == "federated":
                return mode
        raise ConfigError("--mode federated needs --clients or a federated config mode")
    if args.clients is not None:
        return experiment.federated_mode(args.clients)
    return cfg.training_modes[0]


def _cmd_train(args) -> None:
    cfg = _load_config(args)
    mode = _pick_training_mode(cfg, args)
    seed = cfg.seeds[0]
    source = experiment.materialize_source(cfg, seed)
    slices = experiment.carve_slices(source, cfg, seed)
    spec = experiment.model_spec_for(cfg, source)
    params = experiment.train_target(cfg, mode, slices.target_train, spec, seed)
    nn.save_params(params, args.out)
    train_acc, _ = nn.evaluate(params, slices.target_train)
    test_acc, _ = nn.evaluate(params, slices.nonmembers)
    clients = f" n_clients={mode.n_clients}" if mode.n_clients else ""
    print(f"trained {mode.kind}{clients} seed={seed} "
          f"train_acc={train_acc:.6f} test_acc={test_acc:.6f}")
    print(f"checkpoint written to {args.out}")


def _attack_modes_from_args(cfg, args) -> tuple:
    modes = []
    if args.samplewise:
        modes.append(attack_mod.SAMPLEWISE)
    if args.batch_size is not None:
        modes.append(attack_mod.batchwise(args.batch_size))
    return tuple(modes) or cfg.attack_modes


def _cmd_attack(args) -> None:
    cfg = _load_config(args)
    seed = cfg.seeds[0]
    target = nn.load_params(args.checkpoint)
    source = experiment.materialize_source(cfg, seed)
    slices = experiment.carve_slices(source, cfg, seed)
    spec = experiment.model_spec_for(cfg, source)
    if not target.conforms_to(spec):
        raise ShapeError(
            f"checkpoint layer dims {target.dims()} do not match the config model {spec.dims}"
        )
    ensemble = experiment.build_shadow_ensemble(cfg, slices.shadow_master, spec, seed)
    query = experiment.make_query(target)
    samplewise_acc = None
    for mode in sorted(set(_attack_modes_from_args(cfg, args)),
                       key=lambda m: -1 if m.kind == "samplewise" else m.batch_size):
        _, model = experiment.build_attack_model(cfg, ensemble, mode, seed)
        acc = attack_mod.evaluate_attack(model, query, slices.target_train,
                                         slices.nonmembers, mode)
        if mode.kind == "samplewise":
            samplewise_acc = acc
            print(f"samplewise attack_accuracy={acc:.6f}")
        else:
            line = f"batchwise B={mode.batch_size} attack_accuracy={acc:.6f}"
            if samplewise_acc is not None:
                line += f" advantage={attack_mod.attacker_advantage(acc, samplewise_acc):.6f}"
            print(line)


def _cmd_sweep(args) -> None:
    cfg = _load_config(args)
    rows = experiment.run_experiment(cfg)
    out = args.out or cfg.output_path
    experiment.write_results_csv(rows, out)
    print(f"wrote {len(rows)} rows to {out}")


def _cmd_summarize(args) -> None:
    group_keys = [k.strip() for k in args.group_by.split(",") if k.strip()]
    rows = experiment.read_results_csv(args.results)
    summary = experiment.summarize(rows, group_keys)
    text = experiment.summary_to_csv_text(summary, group_keys)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print(f"wrote {len(summary)} groups to {args.out}")
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "attack": _cmd_attack,
        "sweep": _cmd_sweep,
        "summarize": _cmd_summarize,
    }
    try:
        handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, InputError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
