"""Learn backprojection weights on a small training set and compare.

Scaled down from the full protocol so it finishes in about a minute:
a 32 pixel grid, 25 training and 5 held-out phantoms, 30 epochs. The
learned weighted backprojection should beat the unweighted one on the
held-out phantoms by a clear margin; run the acceptance suite for the
full-size numbers.
"""

import argparse

from learnedbp.fileio import write_pgm
from learnedbp.forward import ForwardOperator
from learnedbp.geometry import make_scenario
from learnedbp.metrics import evaluate, format_report
from learnedbp.phantoms import PhantomParams, generate_phantom
from learnedbp.recon import BackprojectionOperator
from learnedbp.training import TrainConfig, sgd_train


def simulate_pairs(scenario, seeds):
    op = ForwardOperator(scenario)
    phantoms = [generate_phantom(PhantomParams(seed=s), scenario.grid) for s in seeds]
    return list(zip(op.simulate_batch(phantoms), phantoms))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--label", default="A_limited_view",
                        choices=("A_limited_view", "B_sparse", "C_limited_sparse"))
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--train-count", type=int, default=25)
    parser.add_argument("--out", default=None, help="optional PGM prefix for a weight slice")
    args = parser.parse_args()

    scenario = make_scenario(args.label, n=32, n_s=20)
    print(f"simulating {args.train_count} training and 5 held-out phantoms...")
    train_pairs = simulate_pairs(scenario, range(args.train_count))
    test_pairs = simulate_pairs(scenario, range(500, 505))

    op = BackprojectionOperator.from_scenario(scenario)

    def log(epoch, train_loss, heldout, lr, wall):
        if epoch == 1 or epoch % 10 == 0:
            print(f"  epoch {epoch:3d}  train loss {train_loss:9.4f}  "
                  f"held-out {heldout:9.4f}  lr {lr:g}")

    state = sgd_train(train_pairs, test_pairs, TrainConfig(epochs=args.epochs), op, log=log)

    report = evaluate(state.weights, test_pairs, op, scenario_label=args.label)
    print()
    print(format_report(report))
    ubp, weighted = report.mean("UBP"), report.mean("weighted-UBP")
    print(f"improvement: {100.0 * (1.0 - weighted / ubp):.1f}%")

    if args.out:
        # detector 0 sits at the start of the arc; its weight slice shows
        # which pixels the training kept and which it silenced
        write_pgm(f"{args.out}.weights0.pgm", state.weights.values[:, :, 0])
        print(f"wrote {args.out}.weights0.pgm")


if __name__ == "__main__":
    main()
