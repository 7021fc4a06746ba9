"""Bit-operations cost model on the bundled layer manifests.

BOPs weight each layer's MACs by the square of the operand bitwidth, so
INT4 compute is 4x cheaper than INT8 and 16x cheaper than BF16.  The two
bundled manifests reproduce published uniform-precision totals.
"""

from fliqs.arch import arch_for
from fliqs.costmodel import load_manifest, model_cost, uniform_cost

GBOPS = 1e9

for name in ["resnet18", "mobilenetv2"]:
    manifest = load_manifest(name)
    macs = sum(l.macs for l in manifest.layers)
    print(f"{name}: {len(manifest.layers)} layers, {macs / 1e6:.1f} MMACs")
    for fmt in ["BF16", "INT8", "INT4"]:
        print(f"  uniform {fmt:5s} {uniform_cost(manifest, fmt) / GBOPS:8.2f} GBOPs")
    print()

# Mixed assignments price each layer at its own bitwidth.  Keeping the
# stem and classifier in INT8 while the middle blocks drop to INT4 lands
# between the two uniform totals.

manifest = load_manifest("resnet18")
archs = []
for layer in manifest.layers:
    wide = layer.name in ("conv1", "fc") or layer.name.startswith("layer4")
    archs.append(arch_for("INT8" if wide else "INT4"))

mixed = model_cost(manifest, archs) / GBOPS
print(f"resnet18 with INT8 stem/tail and INT4 body: {mixed:.2f} GBOPs")
print(f"  (uniform INT4 {uniform_cost(manifest, 'INT4') / GBOPS:.2f}, "
      f"uniform INT8 {uniform_cost(manifest, 'INT8') / GBOPS:.2f})")
