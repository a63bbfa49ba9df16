"""Why AMG: iteration counts and timings of CG on a refined unit cube.

Plain CG needs roughly twice as many iterations per uniform refinement,
because the condition number grows like h^-2. AMG-preconditioned CG keeps
the count flat and its cost grows with the number of unknowns.

    python3 demos/amg_scaling.py [--cells 8] [--levels 2] [--amg classical|sa]
"""

import argparse

from thermomech.bench import run_bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=8)
    ap.add_argument("--levels", type=int, default=2)
    ap.add_argument("--amg", choices=("classical", "sa"), default="classical")
    args = ap.parse_args()

    print(f"{'level':>5} {'n':>9} {'CG its':>7} {'AMG its':>8} {'CG s':>8} {'AMG s':>8} {'op.cx':>6}")
    prev = None
    for r in run_bench(args.cells, args.levels, amg=args.amg):
        print(f"{r.level:>5} {r.n:>9} {r.cg_iterations:>7} {r.amg_iterations:>8} "
              f"{r.cg_seconds:>8.4f} {r.amg_seconds:>8.4f} {r.operator_complexity:>6.2f}")
        if prev is not None:
            print(f"      n x{r.n / prev.n:.1f}: CG iterations x{r.cg_iterations / prev.cg_iterations:.2f}, "
                  f"AMG time x{r.amg_seconds / prev.amg_seconds:.1f}")
        prev = r


if __name__ == "__main__":
    main()
