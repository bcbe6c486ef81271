#!/usr/bin/env python3
"""Small-scale benchmark run: every method, both sampling conditions.

A scaled-down version of the full experiment (fewer users and sessions)
that finishes in a few seconds and prints the same metrics the CLI
writes to metrics.csv.  For the full-scale run use:

    kaczpref simulate --out results/
"""

from dataclasses import replace

from kaczpref.simulator import SimConfig, noise_sweep, run_experiment


def print_metrics(result, title):
    print(f"== {title} ==")
    print(f"  {'method':10s} {'like':>6s} {'a@20':>7s} {'stab':>7s} {'final':>7s}")
    for name, m in result.metrics.items():
        print(
            f"  {name:10s} {m.like_rate:6.3f} {m.align_at_20:7.3f} "
            f"{m.direction_stability:7.3f} {m.final_alignment:7.3f}"
        )
    print()


def main():
    config = SimConfig(
        population=400,
        active_users=20,
        sessions=50,
        swipes_per_session=16,
        master_seed=7,
    )

    print_metrics(run_experiment(config, workers=2), "row-norm sampling")

    adaptive = config.adaptive_variant()
    print_metrics(
        run_experiment(adaptive, workers=2),
        "adaptive cosine subsampling (sessions doubled, swipes halved)",
    )

    print("== noise sweep (final alignment vs flip ratio) ==")
    sweep = noise_sweep(replace(config, sessions=40), flips=(0.0, 0.1, 0.2, 0.3),
                        workers=2)
    header = "  " + "method".ljust(10) + "".join(f"  p={p:.1f}" for p in sweep.flips)
    print(header)
    for name, points in sweep.curves.items():
        row = "  " + name.ljust(10) + "".join(f"  {m:5.3f}" for _, m, _ in points)
        print(row)


if __name__ == "__main__":
    main()
