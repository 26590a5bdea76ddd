"""Train the sort-task checkpoints that the learnability and parallel-speed acceptance tests load.

    python3 scripts/train_acceptance_models.py [--orders l2r r2l ...] [--out tests/fixtures/acceptance]

Writes ``<order>.ckpt`` and ``<order>.log`` (metrics log plus wall-clock time) per order.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from insertion_order.recipes import LEARNABILITY_ORDERS, sort_data, train_learnability


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--orders", nargs="+", default=list(LEARNABILITY_ORDERS), choices=LEARNABILITY_ORDERS)
    parser.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "tests/fixtures/acceptance"))
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = sort_data()
    for order in args.orders:
        start = time.perf_counter()
        lines: list[str] = []

        def on_log(line: str) -> None:
            print(f"{order} {line}", flush=True)
            lines.append(line)

        train_learnability(order, out / f"{order}.ckpt", data, on_log=on_log)
        elapsed = time.perf_counter() - start
        lines.append(f"# wall_clock_seconds {elapsed:.0f}")
        (out / f"{order}.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"{order} done in {elapsed:.0f}s", flush=True)


if __name__ == "__main__":
    main()
