# Where points land on the permutohedral lattice.
import numpy as np

from pamlattice.lattice import build_lattice, elevate, find_simplex, make_embedding, simplex_vertex_key

np.set_printoptions(precision=4, suppress=True)

d = 2
emb = make_embedding(d)
print("scales", emb.scales)  # (sqrt 3, 1) for d = 2
print("elevation matrix\n", emb.matrix)

f = np.array([[0.3, -0.2]])
y = elevate(emb, f)
print("elevated", y, "sum", y.sum())

rec = find_simplex(y)
print("base vertex", rec.rem0[0], "rank", rec.rank[0])
for k in range(d + 1):
    print(f"vertex {k}", simplex_vertex_key(rec.rem0, rec.rank, k)[0], "weight", rec.barycentric[0, k])

# the weights rebuild the point exactly
V = np.stack([simplex_vertex_key(rec.rem0, rec.rank, k) for k in range(d + 1)], axis=1)
print("rebuilt", np.einsum("nk,nkc->nc", rec.barycentric, V))

# a cloud of points touches far fewer vertices than points x (d + 1)
rng = np.random.default_rng(0)
for n in (100, 1000, 10000):
    table, _ = build_lattice(make_embedding(3), rng.standard_normal((n, 3)))
    print(f"n={n:6d}  vertices={len(table):6d}  per point={len(table) / n:.2f}")
