# Backward pass of the filter, checked against central differences.
import numpy as np

from pamlattice.filter import FilterOptions, filter_with_tape
from pamlattice.gradients import finite_difference_check, vjp_descriptors, vjp_features
from pamlattice.lattice import make_embedding

rng = np.random.default_rng(1)
f = rng.standard_normal((40, 3))
v = rng.standard_normal((40, 2))
emb = make_embedding(3)

out, tape = filter_with_tape(emb, f, v)
g = rng.standard_normal(out.shape)  # upstream gradient
dv = vjp_descriptors(tape, g)
df = vjp_features(tape, v, g)
print("dL/dv", dv.shape, "dL/df", df.shape)

for normalize in (True, False):
    rep = finite_difference_check(emb, f, v, FilterOptions(normalize=normalize), seed=3)
    print(f"normalize={normalize}")
    for line in rep.lines():
        print("  " + line)

# a wrong sign in the feature gradient does not slip through
flipped = finite_difference_check(emb, f, v, feature_vjp=lambda t, d, g: -vjp_features(t, d, g))
print("sign-flipped feature VJP passes?", flipped.passed)
