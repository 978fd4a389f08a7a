# %% [markdown]
# # Synthetic form pages
#
# Generates a handful of seeded pages, looks at what one page contains and
# how the step-2 view folds textruns into textblocks.  Writes a PNG of the
# first page with its gold groups outlined to `demos/out/`.

# %%
from pathlib import Path

from formgraph.cli import render_page
from formgraph.docmodel import ElementKind, GroupKind
from formgraph.synthgen import GenConfig, derive_step2_page, generate_pages

OUT = Path(__file__).with_name("out")
OUT.mkdir(exist_ok=True)

pages = generate_pages(GenConfig(pages=4, seed=0))
page = pages[0]
print(page.page_id, f"{page.width}x{page.height}")

# %% [markdown]
# Every page mixes plain textblocks, text fields (caption plus widgets) and
# choice groups (an optional title plus two or more choice fields).

# %%
for kind in (ElementKind.TEXTRUN, ElementKind.WIDGET):
    print(f"element {kind.value:<12} {len(page.of_kind(kind))}")
for kind in GroupKind:
    print(f"group   {kind.value:<12} {len(page.groups(kind))}")

group = page.groups(GroupKind.CHOICEGROUP)[0]
if group.title_id is not None:
    print("choice group title:", " ".join(page.element(group.title_id).words))
for cid in group.child_group_ids:
    child = next(a for a in page.annotations if a.group_id == cid)
    print("  option:", " ".join(page.element(child.caption_id).words))

# %% [markdown]
# Step 2 works on textblocks and widgets.  Each tagged textblock becomes one
# element whose box is the union of its lines.

# %%
s2 = derive_step2_page(page)
print(len(page.elements), "elements before,", len(s2.elements), "after")
field = s2.groups(GroupKind.TEXTFIELD)[0]
print("text field members in the step-2 view:", field.member_ids)

# %%
path = OUT / "page0_gold.png"
render_page(page, page).save(path)
print("wrote", path)
