# %% [markdown]
# # A short training run
#
# Trains the desk-size step-1 model for a few hundred steps on four pages,
# then predicts textblocks on those pages.  Expect a few minutes on one CPU
# core; raise `STEPS` toward 600 for near-perfect textblocks.

# %%
import logging

from formgraph.evaluator import evaluate_pages
from formgraph.mmpan import preset
from formgraph.synthgen import GenConfig, generate_pages
from formgraph.trainer import TrainConfig, predict_page, train

logging.basicConfig(level=logging.INFO, format="%(message)s")
STEPS = 200

pages = generate_pages(GenConfig(pages=4, seed=0))
result = train(pages, preset("desk", 1), TrainConfig(lr=1e-3, max_steps=STEPS, eval_every=50))
print("first loss", round(result.losses[0], 4), "last loss", round(result.losses[-1], 4))

# %% [markdown]
# Only textblocks are predicted without a step-2 model, so the other rows
# of the table show zero recall.

# %%
preds = [predict_page(p, result.model) for p in pages]
print(evaluate_pages(preds, pages).table())
