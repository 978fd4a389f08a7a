# %% [markdown]
# # Patches around a reference
#
# A patch is the neighbourhood the network sees for one reference element:
# the nearest textruns and widgets under a distance that weighs vertical
# offsets ten times more than horizontal ones.

# %%
from pathlib import Path

import numpy as np
from PIL import Image

from formgraph.mmpan import preset
from formgraph.patcher import build_patch, distance, make_labels
from formgraph.synthgen import GenConfig, generate_pages

OUT = Path(__file__).with_name("out")
OUT.mkdir(exist_ok=True)

page = generate_pages(GenConfig(pages=1, seed=3))[0]
cfg = preset("desk", 1)
ref = page.of_kind("textrun")[3]
print("reference", ref.id, ref.words)

# %% [markdown]
# Ranking by that distance.  Elements on the reference's own row come first
# because a single row of vertical offset costs as much as a wide gap.

# %%
ranked = sorted(page.elements, key=lambda e: (distance(ref, e), e.id))
for e in ranked[:8]:
    print(f"{e.id:>3} {e.kind.value:<8} {distance(ref, e):8.1f}")

# %% [markdown]
# The patch keeps at most `k1` textruns and `k2` widgets, ordered left to
# right and top to bottom, with boxes normalised to the patch frame.

# %%
patch = build_patch(page, ref.id, cfg)
labels = make_labels(page, patch, 1)
for slot, cid in enumerate(patch.candidate_ids):
    box = np.round(patch.norm_bboxes[slot], 2)
    print(slot, cid, page.element(cid).kind.value, box, "same block" if labels.tb_assoc[slot] else "")

# %% [markdown]
# One five-channel raster per candidate: RGB with the reference in blue and
# the candidate in green, plus two coordinate channels.

# %%
strip = np.concatenate([patch.raster(i)[..., :3] for i in range(patch.n_valid)], axis=0)
Image.fromarray((strip * 255).astype(np.uint8)).save(OUT / "patch_rasters.png")
print("wrote", OUT / "patch_rasters.png", strip.shape)
