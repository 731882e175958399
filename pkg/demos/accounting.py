"""
Parameter and FLOP budget
=========================

Compares the hyper-embedding against a plain per-channel patch embedding at
ViT-Base scale. The plain layer grows with the band count; the hypernetwork
budget does not.
"""

from specaware import ModelConfig, flops_report, param_count
from specaware.hyper import vanilla_patch_embed_params

cfg = ModelConfig.vit_base()
print(f"{'C':>4} {'plain embed':>12} {'hyper total':>12} {'hypernet share':>15} {'GFLOPs':>7}")
for c in (50, 100, 224, 284, 425):
    rep = param_count(cfg, c)
    fl = flops_report(cfg, c, 784)
    print(f"{c:4d} {vanilla_patch_embed_params(c, cfg.patch, cfg.width):12,d} {rep['total']:12,d} "
          f"{rep['hypernetwork'] / rep['total']:15.3f} {fl['total'] / 1e9:7.3f}")

fl = flops_report(cfg, 100, 784)
print(f"\nat C=100 the embedding costs {100 * fl['ratio_to_vit_base']:.2f}% of a ViT-Base forward pass")
for key, value in fl.items():
    print(f"  {key}: {value:,.0f}" if value > 1 else f"  {key}: {value:.4f}")
