"""Door leaf behind a doorway: joint compatibility alone versus with segment validation."""

from __future__ import annotations

from linemaps.bench import run_door_wall_benchmark


def main() -> None:
    runs = run_door_wall_benchmark(range(50))
    for mode, trials in runs.items():
        wrong = [t.seed for t in trials if t.wrong_merge]
        print(f"{mode:7s} wrong merges {len(wrong):2d}/50  seeds {wrong[:10]}")
    t = next(t for t in runs["JCT"] if t.wrong_merge)
    sv = runs["JCT+SV"][t.seed]
    print(f"seed {t.seed}: door NIS {t.door_nis:.2f} passes the gate, match probability {sv.door_sv_prob:.2f} rejects it")


if __name__ == "__main__":
    main()
