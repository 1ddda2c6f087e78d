"""
Synthetic footprint scenes and boundary targets
===============================================

Render a scene, look at its footprint and boundary masks, augment it and
write a small dataset directory to disk.
"""

import tempfile

import numpy as np

from mtlseg.data import SceneConfig, SplitSpec, augment, extract_boundary, generate_scene, load_dataset, write_dataset


def show(mask):
    for row in mask[0, 0]:
        print("".join("#" if v else "." for v in row))


# a 32x32 scene with two or three buildings; the same (seed, index) always renders the same scene
cfg = SceneConfig(size=32, count_min=2, count_max=3, size_min=6, size_max=10, seed=4)
scene = generate_scene(cfg, 0)
print("image", scene.image.shape, "range", scene.image.min().round(3), scene.image.max().round(3))
print("footprint mask:")
show(scene.seg_mask)

# the boundary target is the inner 4-neighbour edge, thickened by a disk
print("boundary, radius 0:")
show(extract_boundary(scene.seg_mask, 0))
print("boundary, radius 1:")
show(extract_boundary(scene.seg_mask, 1))

# augmentation moves image and masks together and rebuilds the boundary
out = augment(scene, np.random.default_rng(1))
print("augmented footprint pixels:", int(out.seg_mask.sum()), "original:", int(scene.seg_mask.sum()))

# a 10 scene dataset split 7:2:1
with tempfile.TemporaryDirectory() as tmp:
    write_dataset(tmp, cfg, 10, SplitSpec((0.7, 0.2, 0.1), seed=4))
    samples, split = load_dataset(tmp)
    print("split:", {k: v for k, v in split.items()})
