"""Simulate one phantom and reconstruct it with the plain backprojection.

Walks the shortest path through the library: build a scenario, draw a
random phantom, simulate detector data, backproject, and report the
relative error. Writes the phantom and the reconstruction as PGM images
next to --out.
"""

import argparse
from pathlib import Path

from learnedbp.fileio import write_pgm
from learnedbp.forward import ForwardOperator
from learnedbp.geometry import make_scenario
from learnedbp.metrics import rel_error
from learnedbp.phantoms import PhantomParams, generate_phantom
from learnedbp.recon import BackprojectionOperator


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--label", default="C_limited_sparse",
                        choices=("A_limited_view", "B_sparse", "C_limited_sparse"))
    parser.add_argument("--n", type=int, default=64, help="grid side length")
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--out", default="quickstart", help="output file prefix")
    args = parser.parse_args()

    scenario = make_scenario(args.label, n=args.n)
    print(f"scenario {args.label}: {scenario.detectors.n_s} detectors, "
          f"{scenario.time.n_t} time samples, directivity on")

    phantom = generate_phantom(PhantomParams(seed=args.seed), scenario.grid)
    data = ForwardOperator(scenario).simulate(phantom)
    print(f"simulated data: {data.values.shape[0]} x {data.values.shape[1]}, "
          f"peak {abs(data.values).max():.3f}")

    recon = BackprojectionOperator.from_scenario(scenario).standard(data)
    print(f"plain backprojection rel l2 error: {rel_error(recon, phantom):.4f}")
    print("(limited view and sparse detectors leave artifacts; "
          "demos/train_demo.py learns weights that suppress them)")

    base = Path(args.out)
    write_pgm(base.with_suffix(".phantom.pgm"), phantom.values)
    write_pgm(base.with_suffix(".recon.pgm"), recon.values)
    print(f"wrote {base.with_suffix('.phantom.pgm')} and {base.with_suffix('.recon.pgm')}")


if __name__ == "__main__":
    main()
