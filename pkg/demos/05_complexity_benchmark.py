"""How encoder time grows with session length t and embedding size d.

The importance module compares every pair of items, so for long sessions the
cost should grow roughly with t squared; at fixed t it grows with d.  Timings
are medians over 30 repetitions of encoding a batch of 256 sessions on one
thread.

Run:  python3 demos/05_complexity_benchmark.py
"""
from sriem.bench import bench_dims, bench_forward
from sriem.model import ModelConfig

for variant in ("iem", "sat", "stamp"):
    cfg = ModelConfig(n_items=1000, d=32, l=16, variant=variant)
    records, slope = bench_forward(cfg, [8, 16, 32, 64, 128])
    times = ", ".join(f"t={r.t}: {r.median_ns / 1e6:.2f} ms" for r in records)
    print(f"{variant:6s} time ~ t^{slope:.2f}   ({times})")

records, slope = bench_dims(ModelConfig(n_items=1000, d=32, l=16), [16, 32, 64, 128], t=16)
print(f"iem    time ~ d^{slope:.2f} at t=16 ({', '.join(f'd={r.d}: {r.median_ns / 1e6:.2f} ms' for r in records)})")
