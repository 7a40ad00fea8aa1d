"""Shows how interleaved frames merge into one fully sampled reference.

    python demos/merge_and_masks.py
"""

import numpy as np

from cinerecon.data import acquire_and_merge, generate_phantom, random_phantom
from cinerecon.encoding import (
    EncodingConfig,
    encode,
    full_mask,
    make_gaussian_random_mask,
    make_uniform_interleaved_mask,
    simulate_coil_sensitivities,
)
from cinerecon.errors import CoverageError

ny, nt = 32, 8
uni = make_uniform_interleaved_mask(4, ny, nt, 4)
gau = make_gaussian_random_mask(4, ny, nt, 4, seed=0)

print("uniform R=4 (rows ky, centred; columns t)")
for row in uni.pattern:
    print("".join("#" if v else "." for v in row))
print("lines per frame:", uni.lines_per_frame())

# a static object merges to exactly the fully sampled k-space
p = random_phantom(ny, ny, nt, 0)
p.amp = 0.0
vol = generate_phantom(p)
csm = simulate_coil_sensitivities(ny, ny, 4)
merged = acquire_and_merge(vol, csm, uni)
full = encode(vol[:, :, :1], EncodingConfig(full_mask(ny, 1), csm))
print("static merge error:", np.abs(merged - full).max())

# a random mask over so few frames usually leaves holes
try:
    acquire_and_merge(vol, csm, gau)
    print("gaussian mask covered every line")
except CoverageError as exc:
    print("gaussian merge refused:", exc)
