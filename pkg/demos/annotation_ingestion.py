"""Walk through annotation ingestion: VIA project -> typed set -> split.

Builds a small VIA-2 style project in memory, parses it, rasterizes one
polygon to a pixel mask, and performs the seeded train/validation split.
Artifacts land in demos/output/annotations/.
"""

import json
from pathlib import Path

import numpy as np

from towervision import parse_via, rasterize, split_manifest, write_image_manifest
from towervision.annot import write_dataset_manifest

out = Path(__file__).parent / "output" / "annotations"
out.mkdir(parents=True, exist_ok=True)

# A VIA project holds one entry per image; each region is a polygon with
# parallel x/y arrays and a class attribute filled in by the annotator.
project = {"_via_img_metadata": {}}
rng = np.random.default_rng(0)
for i in range(12):
    x0, y0 = rng.integers(5, 40, size=2)
    project["_via_img_metadata"][f"tower_{i:02d}.jpg"] = {
        "filename": f"tower_{i:02d}.jpg",
        "regions": [
            {
                "shape_attributes": {
                    "name": "polygon",
                    "all_points_x": [int(x0), int(x0) + 20, int(x0) + 12],
                    "all_points_y": [int(y0), int(y0), int(y0) + 16],
                },
                "region_attributes": {"class": "damage" if i % 3 else "dirt"},
            }
        ],
    }

images = parse_via(json.dumps(project))
print(f"parsed {len(images)} images, "
      f"{sum(len(i.instances) for i in images)} labeled regions")

# Polygons become pixel masks via even-odd pixel-center rasterization.
first = images[0].instances[0]
mask = rasterize(first.points, 64, 64)
print(f"first region: class={first.label.value}, rasterized area={mask.sum()} px")

# The split is deterministic for a fixed seed and keeps the sets disjoint.
manifest = split_manifest(images, validation_fraction=0.25, seed=7)
print(f"split: {len(manifest.training)} training / {len(manifest.validation)} validation")

write_image_manifest(out / "images.json", images)
write_dataset_manifest(out / "split.json", manifest)
print(f"manifests written under {out}")
