"""
One embedding, many sensors
===========================

The same HyperEmbedding weights turn cubes with 50 to 425 bands into the
same number of tokens. The hypernetworks read each band's wavelength and
bandwidth, so nothing in the parameter set depends on the band count.
"""

import numpy as np

from specaware import HyperEmbedding, MetaEncoder, ModelConfig, TextEmbeddingProvider, get_sensor, subset
from specaware.numerics import Tensor
from specaware.sensors import BandSelection

cfg = ModelConfig(img_size=32)
rng = np.random.default_rng(0)
meta = MetaEncoder(cfg.d, rng)
embed = HyperEmbedding(cfg, rng)
provider = TextEmbeddingProvider.default()

print(f"hypernetwork parameters: {embed.hyper.num_parameters():,}")

# slice the 425-band AVIRIS-NG grid into shorter sensors
ng = get_sensor("AVIRIS-NG", "L1")
for c in (50, 100, 224, 284, 425):
    spec = subset(ng, BandSelection(0, c))
    cube = rng.normal(size=(1, c, 32, 32)).astype(np.float32)
    tokens, factors = embed(Tensor(cube), meta(spec, provider).values)
    lo, hi = spec.wavelengths_um[0], spec.wavelengths_um[-1]
    print(f"C={c:3d}  {lo:.3f}-{hi:.3f} um  U {factors.U.shape}  tokens {tokens.shape}")

# shuffling the bands (and their metadata together) leaves the tokens unchanged
spec = subset(ng, BandSelection(0, 12))
cube = rng.normal(size=(1, 12, 32, 32)).astype(np.float32)
perm = rng.permutation(12)
a, _ = embed(Tensor(cube), meta(spec, provider).values)
b, _ = embed(Tensor(cube[:, perm]), meta(spec.permuted(perm), provider).values)
print("max |tokens - shuffled tokens| =", float(np.max(np.abs(a.data - b.data))))
