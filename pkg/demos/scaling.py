# Runtime against problem size: the lattice grows linearly, the dense oracle quadratically.
from pamlattice.cli import run_bench

rows, slopes = run_bench({"lattice": [1000, 10000, 100000], "dense": [100, 300, 1000, 2000]}, d=5, reps=3)
for r in rows:
    print(f"{r['method']:8s} n={r['n']:7d}  {r['seconds'] * 1e3:9.2f} ms")
for m, s in slopes.items():
    print(f"log-log slope {m}: {s:.2f}")
# the full 10^3..10^6 sweep: `pamlattice bench --check`
