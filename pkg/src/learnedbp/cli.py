"""Command-line front end.

Verbs: gen-data, train, reconstruct, evaluate, export-weights, phantom.
Exit codes: 0 success, 1 usage error, 2 data or shape error, 3 I/O
error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import fileio, metrics, training
from .errors import ConfigError, DivergenceError, FormatError, ShapeMismatchError
from .forward import ForwardOperator, SensorData
from .phantoms import Image, PhantomParams, generate_phantom
from .recon import BackprojectionOperator, WeightTensor

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; the interface here
    reserves 2 for data errors, so usage errors are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _scenario_signature(scenario):
    det = scenario.detectors
    return (
        scenario.label,
        scenario.grid.n,
        scenario.grid.extent,
        det.n_s,
        det.radius,
        scenario.time.n_t,
        scenario.time.t_final,
        scenario.directivity_enabled,
        scenario.sound_speed,
    )


def _resolve_scenario(args, dataset=None):
    """Scenario from --scenario, falling back to (and cross-checked
    against) the dataset's own config."""
    scenario = seed = None
    if args.scenario is not None:
        scenario, seed = fileio.load_scenario_cfg(args.scenario)
    if dataset is not None:
        if scenario is None:
            scenario = dataset.scenario
        elif _scenario_signature(scenario) != _scenario_signature(dataset.scenario):
            raise ShapeMismatchError(
                f"--scenario {_scenario_signature(scenario)} does not match dataset "
                f"{_scenario_signature(dataset.scenario)}"
            )
    if scenario is None:
        raise ConfigError("--scenario is required for this command")
    return scenario, seed


def _load_weights(path, scenario) -> WeightTensor:
    values = fileio.read_patb(path)
    expected = (scenario.grid.n, scenario.grid.n, scenario.detectors.n_s)
    if values.shape != expected:
        raise ShapeMismatchError(f"weights shape {values.shape} does not match scenario {expected}")
    return WeightTensor(values, scenario.grid)


def cmd_gen_data(args) -> int:
    scenario, cfg_seed = _resolve_scenario(args)
    base_seed = args.seed if args.seed is not None else (cfg_seed if cfg_seed is not None else 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    op = ForwardOperator(scenario, n_angles=args.n_angles, n_r_per_dt=args.n_r_per_dt)
    stems = [fileio.Dataset.stem(i) for i in range(args.count)]
    written = []
    try:
        for i in range(args.count):
            phantom = generate_phantom(PhantomParams(seed=base_seed + i), scenario.grid)
            data = op.simulate(phantom)
            if args.noise > 0:
                rng = np.random.default_rng([base_seed + i, 0x6E])
                scale = args.noise * np.abs(data.values).max()
                noisy = data.values + rng.normal(0.0, scale, data.values.shape)
                data = SensorData(noisy, scenario.time, scenario.detectors)
            written.append(out / f"phantom_{i:05d}.patb")
            written.append(out / f"data_{i:05d}.patb")
            fileio.write_sample(out, i, phantom, data)
        written.append(out / fileio.Dataset.SCENARIO)
        fileio.atomic_write_bytes(out / fileio.Dataset.SCENARIO, Path(args.scenario).read_bytes())
        written.append(out / fileio.Dataset.MANIFEST)
        dataset = fileio.Dataset(out, scenario, args.split, stems)
        dataset.write_manifest()
        dataset.validate()
    except BaseException:
        for path in written:
            Path(path).unlink(missing_ok=True)
        raise
    print(f"wrote {args.count} sample pairs to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    train_set = fileio.Dataset.open(args.data)
    scenario, _ = _resolve_scenario(args, dataset=train_set)
    heldout_pairs = fileio.Dataset.open(args.heldout).pairs() if args.heldout else []

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    op = BackprojectionOperator.from_scenario(scenario)
    cfg = training.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        init=args.init,
        shuffle_seed=args.seed if args.seed is not None else 0,
        checkpoint_every=args.checkpoint_every,
        weight_grid=args.weight_grid,
    )
    log_path = out / "train.log"

    def checkpoint(epoch, weights):
        fileio.write_patb(out / f"weights_epoch{epoch:04d}.patb", weights.values)

    def log(epoch, train_loss, heldout_loss, lr, wall):
        with open(log_path, "a") as fh:
            fh.write(f"{epoch}, {train_loss!r}, {heldout_loss!r}, {lr!r}, {wall:.3f}\n")

    state = training.sgd_train(
        train_set.pairs(),
        heldout_pairs,
        cfg,
        op,
        checkpoint=checkpoint,
        log=log,
        weight_reader=fileio.read_patb,
    )
    print(f"trained {state.epoch} epochs, lr={state.learning_rate!r}, checkpoints in {out}")
    if state.heldout_losses:
        print(f"final held-out loss {state.heldout_losses[-1]!r}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    scenario, _ = _resolve_scenario(args)
    values = fileio.read_patb(args.data)
    data = SensorData(values, scenario.time, scenario.detectors)
    if args.ones:
        weights = WeightTensor.ones(scenario.grid, scenario.detectors.n_s)
    else:
        weights = _load_weights(args.weights, scenario)
    op = BackprojectionOperator.from_scenario(scenario, exact=args.exact)
    image = op.apply(weights, data)
    base = Path(args.out)
    fileio.write_patb(base.with_suffix(".patb"), image.values)
    fileio.write_pgm(base.with_suffix(".pgm"), image.values)
    print(f"wrote {base.with_suffix('.patb')} and {base.with_suffix('.pgm')}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    dataset = fileio.Dataset.open(args.data)
    scenario, _ = _resolve_scenario(args, dataset=dataset)
    weights = _load_weights(args.weights, scenario) if args.weights else None
    op = BackprojectionOperator.from_scenario(scenario, exact=args.exact)
    report = metrics.evaluate(weights, dataset.pairs(), op, scenario.label, squared=args.squared)
    fileio.atomic_write_bytes(args.out, metrics.report_csv(report).encode("ascii"))
    print(metrics.format_report(report))
    return EXIT_OK


def cmd_export_weights(args) -> int:
    values = fileio.read_patb(args.weights)
    if values.ndim != 3:
        raise ShapeMismatchError(f"weight files hold 3-d tensors, got ndim={values.ndim}")
    if not 0 <= args.detector < values.shape[2]:
        raise ConfigError(f"detector index {args.detector} out of range [0, {values.shape[2]})")
    fileio.write_pgm(args.out, values[:, :, args.detector])
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_phantom(args) -> int:
    scenario, cfg_seed = _resolve_scenario(args)
    seed = args.seed if args.seed is not None else (cfg_seed if cfg_seed is not None else 0)
    phantom = generate_phantom(PhantomParams(seed=seed), scenario.grid)
    base = Path(args.out)
    fileio.write_patb(base.with_suffix(".patb"), phantom.values)
    fileio.write_pgm(base.with_suffix(".pgm"), phantom.values)
    print(f"wrote {base.with_suffix('.patb')} and {base.with_suffix('.pgm')}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="learnedbp", description="backprojection toolkit with trainable weights")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, scenario_required=True):
        p.add_argument("--scenario", required=scenario_required, help="scenario config file")
        p.add_argument("--seed", type=int, default=None, help="base random seed (overrides config)")
        p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("gen-data", help="generate a paired phantom/sensor-data set")
    common(p)
    p.add_argument("--count", type=int, required=True, help="number of sample pairs")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--noise", type=float, default=0.0, help="relative Gaussian noise level")
    p.add_argument("--n-angles", type=int, default=None, help="angular quadrature nodes")
    p.add_argument("--n-r-per-dt", type=int, default=4, help="radial nodes per time step")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="learn backprojection weights by SGD")
    common(p, scenario_required=False)
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--heldout", default=None, help="held-out dataset directory")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=None, help="learning rate (default: pre-scan)")
    p.add_argument("--init", default="ones", help="ones | constant:<v> | <weights.patb>")
    p.add_argument("--checkpoint-every", type=int, default=0, help="checkpoint cadence in epochs")
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--weight-grid", type=int, default=None, help="train weights on a coarser m x m grid")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="backproject one sensor-data file")
    common(p)
    p.add_argument("--data", required=True, help="sensor data (.patb)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--weights", help="weight tensor (.patb)")
    group.add_argument("--ones", action="store_true", help="use the unweighted backprojection")
    p.add_argument("--exact", action="store_true", help="per-pixel quadrature instead of table lookup")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="relative errors over a test set")
    common(p, scenario_required=False)
    p.add_argument("--data", required=True, help="test dataset directory")
    p.add_argument("--weights", default=None, help="weight tensor (.patb)")
    p.add_argument("--squared", action="store_true", help="report squared relative errors")
    p.add_argument("--exact", action="store_true", help="per-pixel quadrature instead of table lookup")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-weights", help="export one detector's weight slice as PGM")
    common(p, scenario_required=False)
    p.add_argument("--weights", required=True, help="weight tensor (.patb)")
    p.add_argument("--detector", type=int, required=True, help="detector index")
    p.set_defaults(func=cmd_export_weights)

    p = sub.add_parser("phantom", help="emit one random phantom")
    common(p)
    p.set_defaults(func=cmd_phantom)

    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ShapeMismatchError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
