"""Write a synthetic county panel (deaths, cases, adjacency, demographics,
hospitals) to a directory so the CLI can be exercised end to end."""
import argparse

from clepcast.synthetic import epidemic_panel, write_inputs


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out")
    ap.add_argument("--counties", type=int, default=100)
    ap.add_argument("--days", type=int, default=90)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    panel, pairs = epidemic_panel(args.counties, args.days, seed=args.seed)
    for name, path in write_inputs(panel, pairs, args.out, seed=args.seed).items():
        print(f"{name:13s} {path}")


if __name__ == "__main__":
    main()
