"""Compare the compiled and pure-Python simulation kernels.

    python benchmarks/bench_kernels.py [--repeat 5] [--programs 40]

Each workload is timed per backend with timeit; the best of --repeat runs is
reported along with the speed-up over the pure-Python kernel.
"""

from __future__ import annotations

import argparse
import random
import timeit

from pfqsim import scenarios
from pfqsim.campaign import Campaign, SweepGrid, sweep
from pfqsim.isa import assemble_text
from pfqsim.memhier import CacheConfig, cycles_to_ns
from pfqsim.simulator import Simulator, available_backends

RAM_REG_VALUE = {12: 0x2000_0000}


def _program(rng: random.Random, n: int):
    ops = ["add.w r{d}, r{s}, #5", "sub.w r{d}, r{s}, #1", "eor.w r{d}, r{s}, r{d}",
           "ldr.w r{d}, [r12, #8]", "str.w r{d}, [r12, #16]", "mov.w r{d}, #255"]
    lines = [rng.choice(ops).format(d=rng.randrange(12), s=rng.randrange(12)) for _ in range(n)]
    return assemble_text("\n".join(lines) + "\nbkpt #0\n")


def golden_runs(backend: str, programs) -> None:
    for program in programs:
        sim = Simulator(program, CacheConfig(), backend=backend)
        sim.run(sim.initial_state(RAM_REG_VALUE))


def every_arm_cycle(backend: str, programs) -> None:
    for program in programs:
        camp = Campaign(program, CacheConfig(), values=RAM_REG_VALUE, backend=backend)
        for cycle in range(camp.golden.cycles + 1):
            camp.execute(cycle, True)


def full_sweep(backend: str, _programs) -> None:
    camp = scenarios.get("add-sequence-0").campaign(backend=backend)
    grid = SweepGrid.build(delay_stop_ns=cycles_to_ns(camp.golden.cycles), delay_step_ns=2,
                           power_start_dbm=0, reps=50)
    sweep(camp, grid, 0, reuse=False)


WORKLOADS = {
    "golden runs": golden_runs,
    "fault at every cycle": every_arm_cycle,
    "sweep without reuse": full_sweep,
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--programs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    programs = [_program(rng, rng.randint(8, 32)) for _ in range(args.programs)]
    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernel not built; timing the pure-Python kernel only")

    print(f"{'workload':24s}" + "".join(f"{b:>12s}" for b in backends) + "     speed-up")
    for name, fn in WORKLOADS.items():
        times = {b: min(timeit.repeat(lambda b=b: fn(b, programs), number=1, repeat=args.repeat))
                 for b in backends}
        row = f"{name:24s}" + "".join(f"{times[b]:11.4f}s" for b in backends)
        if "cython" in times:
            row += f"  {times['python'] / times['cython']:10.1f}x"
        print(row)


if __name__ == "__main__":
    main()
