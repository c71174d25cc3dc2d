# Edge-preserving smoothing of a noisy step image.
import os
import tempfile

import numpy as np

from pamlattice import io as pio
from pamlattice.cli import bilateral_image, main

rng = np.random.default_rng(2)
a = np.full((64, 64), 60.0)
a[:, 32:] = 190.0
img = pio.Image(np.clip(np.rint(a + rng.normal(0, 12, a.shape)), 0, 255).astype(np.uint8))

for sigma_r in (0.255, 10.0, 40.0, 1000.0):
    out = bilateral_image(img, 4.0, sigma_r).samples.astype(float)
    left, right = out[:, :32], out[:, 32:]
    edge = out[:, 33].mean() - out[:, 30].mean()
    print(f"sigma_r={sigma_r:7.3f}  var left={left.var():6.1f} right={right.var():6.1f}  edge step={edge:6.1f}")
print(f"input            var left={img.samples[:, :32].var():6.1f} right={img.samples[:, 32:].var():6.1f}")

# same thing through the command line, on files
with tempfile.TemporaryDirectory() as tmp:
    src, dst = os.path.join(tmp, "step.pgm"), os.path.join(tmp, "smooth.pgm")
    pio.write_image(img, src)
    main(["bilateral", src, "--out", dst, "--bandwidth", "4", "30"])
    print("round trip", pio.read_image(dst).samples.shape)
