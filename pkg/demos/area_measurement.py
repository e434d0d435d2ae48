"""Physical area measurement from a reference component of known size.

Given the pixel extent of a component whose real dimensions are known, a
units-per-pixel scale converts predicted damage masks into physical areas.
The conversion assumes the surface is roughly parallel to the image plane,
and the result carries that caveat explicitly.
"""

import numpy as np

from towervision import Instance, ReferenceScale, measure_area
from towervision.core import ClassLabel

frame = (1200, 800)

# A crossarm of known physical length spans a measured number of pixels.
scale = ReferenceScale(reference_length=1800.0, reference_extent_px=950.0, units="mm")
print(f"reference: 1800 mm across 950 px -> {scale.units_per_pixel:.4f} mm/px")

rng = np.random.default_rng(11)
damages = []
for i in range(3):
    w, h = int(rng.integers(18, 80)), int(rng.integers(18, 80))
    x, y = int(rng.integers(0, frame[0] - w)), int(rng.integers(0, frame[1] - h))
    mask = np.zeros((frame[1], frame[0]), dtype=bool)
    mask[y : y + h, x : x + w] = True
    damages.append(Instance(label=ClassLabel.DAMAGE, mask=mask))

print("\n  instance   pixels      area")
for i, instance in enumerate(damages):
    measurement = measure_area(instance, scale)
    print(
        f"  damage_{i}   {instance.area():6d}  {measurement.area:9.1f} {measurement.units}^2"
    )

measurement = measure_area(damages[0], scale)
print(f"\nfronto-parallel assumption flagged: {measurement.fronto_parallel_assumed}")

# Sanity property: measuring the same damage at doubled resolution (mask
# area x4, reference extent x2) yields the same physical area.
doubled_mask = np.kron(damages[0].mask, np.ones((2, 2), dtype=bool))
doubled_scale = ReferenceScale(1800.0, 1900.0, units="mm")
again = measure_area(Instance(ClassLabel.DAMAGE, doubled_mask), doubled_scale)
print(f"resolution invariance: {measurement.area:.1f} == {again.area:.1f}")
