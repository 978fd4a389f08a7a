"""The multi-modal patch association network.

Per candidate the network combines a CNN view of the highlighted patch
raster, an LSTM encoding of the candidate's words, and a bidirectional
context encoding over the whole candidate sequence.  A recurrent decoder
with additive attention then emits one association decision per candidate.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import netcore as nc
from .docmodel import Element, ElementKind, FormPage, MAX_WORDS, atomic_write
from .netcore.init import attention_params, conv_params, dense_params, lstm_params
from .netcore.layers import pool_padding
from .patcher import Patch, PatchLabels, Step

MAGIC = b"MMPANCK1"


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    step: int = 1
    k1: int = 6
    k2: int = 4
    H: int = 40
    W: int = 160
    conv_blocks: tuple = ((1, 8, 5), (1, 16, 3), (1, 16, 3), (1, 32, 3))
    fc_c: int = 64
    text_embed_dim: int = 16
    te_hidden: int = 16
    te_out: int = 16
    ce_hidden: int = 16
    sam_hidden: int = 64
    attn_size: int = 32
    preset_name: str = "desk"

    def __post_init__(self):
        object.__setattr__(self, "step", int(Step(self.step)))
        object.__setattr__(self, "conv_blocks", tuple(tuple(b) for b in self.conv_blocks))
        if 2 * self.ce_hidden != self.conv_blocks[-1][1]:
            raise ValueError(
                f"context encoder output 2*{self.ce_hidden} must equal the last conv filter count {self.conv_blocks[-1][1]}"
            )
        if any(k % 2 == 0 for _, _, k in self.conv_blocks):
            raise ValueError("conv kernels must be odd")
        if self.k1 < 1 or self.k2 < 0:
            raise ValueError("k1 must be >= 1 and k2 >= 0")

    @property
    def slots(self) -> int:
        return self.k1 + self.k2

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        h, w = self.H, self.W
        for _ in self.conv_blocks:
            h, w = pool_padding(h)[0], pool_padding(w)[0]
        return h, w, self.conv_blocks[-1][1]

    @property
    def fused_dim(self) -> int:
        h, w, _ = self.feature_shape
        return h * w

    @property
    def prev_dim(self) -> int:
        return 1 if self.step == Step.STEP1 else 4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


_PRESETS = {
    "paper": dict(
        H=160,
        W=640,
        conv_blocks=((2, 32, 5), (2, 64, 3), (3, 96, 3), (3, 128, 3), (3, 256, 3)),
        fc_c=1024,
        text_embed_dim=100,
        te_hidden=100,
        te_out=100,
        ce_hidden=128,
        sam_hidden=1000,
        attn_size=500,
    ),
    "desk": dict(
        H=40,
        W=160,
        conv_blocks=((1, 8, 5), (1, 16, 3), (1, 16, 3), (1, 32, 3)),
        fc_c=64,
        text_embed_dim=16,
        te_hidden=16,
        te_out=16,
        ce_hidden=16,
        sam_hidden=64,
        attn_size=32,
    ),
}
_STEP_K = {1: (6, 4), 2: (10, 4)}


def preset(name: str, step: int = 1, **overrides) -> ModelConfig:
    if name not in _PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    k1, k2 = _STEP_K[int(step)]
    kw = dict(_PRESETS[name], step=int(step), k1=k1, k2=k2, preset_name=name)
    kw.update(overrides)
    return ModelConfig(**kw)


# ---------------------------------------------------------------------------
# text
# ---------------------------------------------------------------------------


@lru_cache(maxsize=65536)
def _embed_cached(word: str, dim: int) -> np.ndarray:
    vec = np.zeros(dim)
    padded = f"<{word}>"
    for i in range(len(padded) - 2):
        h = int.from_bytes(hashlib.blake2b(padded[i:i + 3].encode("utf-8"), digest_size=8).digest(), "little")
        vec[h % dim] += 1.0 if h % 2 == 0 else -1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    vec.setflags(write=False)
    return vec


def embed_word(word: str, dim: int) -> np.ndarray:
    """Signed character-trigram hashing embedding with unit L2 norm (or zero)."""
    return _embed_cached(word, dim).copy()


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    images: np.ndarray  # (Nv, H, W, 5) rasters of valid slots
    valid_index: np.ndarray  # (Nv,) flat positions in B*n
    norm_bboxes: np.ndarray  # (B, n, 4)
    ref_flags: np.ndarray  # (B, n)
    valid: np.ndarray  # (B, n)
    texts: list  # unique non-empty word tuples
    text_index: np.ndarray  # (B, n) into texts, -1 for empty/padding
    tb: np.ndarray | None = None
    field_class: np.ndarray | None = None
    chgp: np.ndarray | None = None

    @property
    def size(self) -> tuple[int, int]:
        return self.valid.shape


def collate(items: Sequence[tuple[FormPage, Patch, PatchLabels | None]]) -> Batch:
    """Stack ``(page, patch, labels)`` triples into one padded batch."""
    b = len(items)
    n = items[0][1].slots
    nb = np.stack([p.norm_bboxes for _, p, _ in items])
    ref = np.stack([p.ref_flags for _, p, _ in items])
    valid = np.stack([p.valid_mask for _, p, _ in items])
    images, flat = [], []
    texts: dict[tuple, int] = {}
    tidx = np.full((b, n), -1, dtype=np.int64)
    for bi, (page, patch, _) in enumerate(items):
        for s, cid in enumerate(patch.candidate_ids):
            images.append(patch.raster(s))
            flat.append(bi * n + s)
            words = tuple(page.element(cid).words[:MAX_WORDS])
            if words and page.element(cid).kind != ElementKind.WIDGET:
                tidx[bi, s] = texts.setdefault(words, len(texts))
    batch = Batch(np.stack(images), np.array(flat), nb, ref, valid, list(texts), tidx)
    labels = [lab for _, _, lab in items]
    if all(lab is not None for lab in labels):
        if labels[0].step == Step.STEP1:
            batch.tb = np.stack([lab.tb_assoc for lab in labels])
        else:
            batch.field_class = np.stack([lab.field_class for lab in labels]).astype(np.int64)
            batch.chgp = np.stack([lab.chgp_assoc for lab in labels])
    return batch


@dataclass
class AssociationResult:
    reference_id: int
    candidate_ids: tuple[int, ...]
    valid_mask: np.ndarray
    aux_tb_prob: np.ndarray | None = None
    seq_tb_prob: np.ndarray | None = None
    aux_field_probs: np.ndarray | None = None
    seq_field_probs: np.ndarray | None = None
    aux_chgp_prob: np.ndarray | None = None
    seq_chgp_prob: np.ndarray | None = None


@dataclass
class Outputs:
    aux: dict = field(default_factory=dict)  # head -> Tensor over valid slots
    seq: dict = field(default_factory=dict)  # head -> Tensor (B, n, ...)
    feature: nc.Tensor | None = None
    context: nc.Tensor | None = None
    fused: nc.Tensor | None = None


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


class MMPAN:
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.conv = []
        cin = 5
        for bi, (layers, filters, k) in enumerate(cfg.conv_blocks):
            block = []
            for li in range(layers):
                block.append(conv_params(rng, f"ie.conv{bi}_{li}", k, cin, filters, dtype))
                cin = filters
            self.conv.append(block)
        h, w, c = cfg.feature_shape
        self.aux_fc1 = dense_params(rng, "ie.fc1", h * w * c, cfg.fc_c, dtype)
        self.aux_fc2 = dense_params(rng, "ie.fc2", cfg.fc_c, cfg.fc_c, dtype)
        self.te = lstm_params(rng, "te.lstm", cfg.text_embed_dim, cfg.te_hidden, dtype)
        self.te_fc = dense_params(rng, "te.fc", cfg.te_hidden, cfg.te_out, dtype)
        ce_in = 4 + cfg.te_out + 1
        self.ce_fwd = lstm_params(rng, "ce.fwd", ce_in, cfg.ce_hidden, dtype)
        self.ce_bwd = lstm_params(rng, "ce.bwd", ce_in, cfg.ce_hidden, dtype)
        self.sam = lstm_params(rng, "sam.lstm", 4 + cfg.fused_dim + cfg.prev_dim, cfg.sam_hidden, dtype)
        self.attn = attention_params(rng, "sam.attn", cfg.sam_hidden, c, cfg.attn_size, dtype)
        dec = cfg.sam_hidden + c
        self.heads = {}
        names = ("tb",) if cfg.step == Step.STEP1 else ("field", "chgp")
        for name in names:
            out = 3 if name == "field" else 1
            self.heads[f"aux.{name}"] = dense_params(rng, f"head.aux.{name}", cfg.fc_c, out, dtype)
            self.heads[f"seq.{name}"] = dense_params(rng, f"head.seq.{name}", dec, out, dtype)

    # -- parameter plumbing ------------------------------------------------

    def params(self) -> list[nc.Param]:
        ps = [p for block in self.conv for pair in block for p in pair]
        ps += [*self.aux_fc1, *self.aux_fc2, *self.te.params(), *self.te_fc]
        ps += self.ce_fwd.params() + self.ce_bwd.params() + self.sam.params() + self.attn.params()
        for pair in self.heads.values():
            ps += list(pair)
        return ps

    def named_params(self) -> dict[str, nc.Param]:
        return {p.name: p for p in self.params()}

    @property
    def dtype(self):
        return self.params()[0].dtype

    def astype(self, dtype) -> MMPAN:
        for p in self.params():
            p.astype(dtype)
        return self

    # -- encoders ----------------------------------------------------------

    def image_encoder(self, images: np.ndarray) -> nc.Tensor:
        # the coordinate channels are identical for every raster, so the first
        # convolution handles them once per batch
        x = nc.Tensor(images[..., :3].astype(self.dtype))
        mesh = images[0, ..., 3:]
        for bi, block in enumerate(self.conv):
            for li, (w, b) in enumerate(block):
                conv = nc.conv2d_shared(x, mesh, w, b) if bi == li == 0 else nc.conv2d(x, w, b)
                x = nc.relu(conv)
            x = nc.maxpool(x)
        return x

    def encode_texts(self, texts: Sequence[tuple[str, ...]]) -> nc.Tensor:
        """Text features for each word tuple plus a trailing row for "no text"."""
        cfg, dt = self.cfg, self.dtype
        texts = [tuple(t[:MAX_WORDS]) for t in texts]
        zero = nc.Tensor(np.zeros((1, cfg.te_hidden), dtype=dt))
        if texts:
            lengths = np.array([len(t) for t in texts])
            steps = int(lengths.max())
            emb = np.zeros((len(texts), steps, cfg.text_embed_dim), dtype=dt)
            for i, t in enumerate(texts):
                for j, w in enumerate(t):
                    emb[i, j] = _embed_cached(w, cfg.text_embed_dim)
            h, c = nc.lstm_zero_state(len(texts), cfg.te_hidden, dt)
            for j in range(steps):
                h, c = nc.lstm_step(nc.Tensor(emb[:, j]), h, c, self.te, lengths > j)
            cells = nc.concat([c, zero], axis=0)
        else:
            cells = zero
        return nc.relu(nc.dense(cells, *self.te_fc))

    def _decode_heads(self, o: nc.Tensor, prefix: str) -> dict:
        out = {}
        for name, (w, b) in self.heads.items():
            if not name.startswith(prefix):
                continue
            head = name.split(".", 1)[1]
            logits = nc.dense(o, w, b)
            out[head] = nc.softmax(logits) if head == "field" else nc.sigmoid(logits)
        return out

    # -- forward -----------------------------------------------------------

    def forward(self, batch: Batch, teacher_forcing: bool = True) -> Outputs:
        cfg, dt = self.cfg, self.dtype
        bsz, n = batch.size
        h_, w_, c_ = cfg.feature_shape
        valid = batch.valid.astype(bool)
        if teacher_forcing and batch.tb is None and batch.field_class is None:
            raise ValueError("teacher forcing needs labels in the batch")
        if n != cfg.slots:
            raise ValueError(f"batch has {n} slots, config expects {cfg.slots}")

        # image encoder and its auxiliary branch
        fv = self.image_encoder(batch.images)
        flat = nc.reshape(fv, (fv.shape[0], h_ * w_ * c_))
        fp = nc.relu(nc.dense(nc.relu(nc.dense(flat, *self.aux_fc1)), *self.aux_fc2))
        aux = self._decode_heads(fp, "aux.")

        # text and context encoders
        text = self.encode_texts(batch.texts)
        tidx = np.where(batch.text_index < 0, len(batch.texts), batch.text_index)
        ft = nc.reshape(nc.gather(text, tidx.reshape(-1)), (bsz, n, cfg.te_out))
        bbn = batch.norm_bboxes.astype(dt)
        ce_in = nc.concat([nc.Tensor(bbn), ft, nc.Tensor(batch.ref_flags.astype(dt)[:, :, None])])
        memory = nc.bilstm(ce_in, self.ce_fwd, self.ce_bwd, batch.valid)

        # fusion: context vector as a 1x1 filter over the image features
        kernels = nc.gather(nc.reshape(memory, (bsz * n, c_)), batch.valid_index)
        fused_valid = nc.fuse(fv, kernels)
        fused = nc.reshape(nc.scatter(fused_valid, batch.valid_index, bsz * n), (bsz, n, h_ * w_))

        # sequential association decoder
        prev = np.zeros((bsz, cfg.prev_dim), dtype=dt)
        h, c = nc.lstm_zero_state(bsz, cfg.sam_hidden, dt)
        per_step: dict[str, list] = {}
        for t in range(n):
            x = nc.concat([nc.Tensor(bbn[:, t]), nc.take(fused, (slice(None), t)), nc.Tensor(prev)])
            h, c = nc.lstm_step(x, h, c, self.sam)
            ctx, _ = nc.bahdanau_attention(h, memory, self.attn, valid)
            heads = self._decode_heads(nc.concat([h, ctx]), "seq.")
            for k, v in heads.items():
                per_step.setdefault(k, []).append(v)
            if teacher_forcing:
                prev = self._label_prev(batch, t)
            else:
                prev = self._self_prev(heads)
        seq = {k: nc.stack(v, axis=1) for k, v in per_step.items()}
        for k in ("tb", "chgp"):
            if k in seq:
                seq[k] = nc.reshape(seq[k], (bsz, n))
                aux[k] = nc.reshape(aux[k], (aux[k].shape[0],))
        return Outputs(aux=aux, seq=seq, feature=fv, context=memory, fused=fused)

    def _label_prev(self, batch: Batch, t: int) -> np.ndarray:
        dt = self.dtype
        if self.cfg.step == Step.STEP1:
            return batch.tb[:, t:t + 1].astype(dt)
        onehot = np.eye(3, dtype=dt)[batch.field_class[:, t]]
        return np.concatenate([onehot, batch.chgp[:, t:t + 1].astype(dt)], axis=1)

    def _self_prev(self, heads: dict) -> np.ndarray:
        dt = self.dtype
        if self.cfg.step == Step.STEP1:
            return (heads["tb"].data >= 0.5).astype(dt)
        onehot = np.eye(3, dtype=dt)[heads["field"].data.argmax(axis=1)]
        return np.concatenate([onehot, (heads["chgp"].data >= 0.5).astype(dt)], axis=1)

    # -- inference -----------------------------------------------------------

    def associate(self, page: FormPage, patches: Sequence[Patch], batch_size: int = 16) -> list[AssociationResult]:
        """Self-fed predictions for every patch of ``page``."""
        results = []
        for start in range(0, len(patches), batch_size):
            chunk = patches[start:start + batch_size]
            batch = collate([(page, p, None) for p in chunk])
            out = self.forward(batch, teacher_forcing=False)
            results.extend(unpack_results(out, batch, chunk))
        return results


def unpack_results(out: Outputs, batch: Batch, patches: Sequence[Patch]) -> list[AssociationResult]:
    bsz, n = batch.size
    aux_full = {}
    for k, t in out.aux.items():
        shape = (bsz * n,) + t.shape[1:]
        full = np.zeros(shape)
        full[batch.valid_index] = t.data
        aux_full[k] = full.reshape((bsz, n) + t.shape[1:])
    results = []
    for i, p in enumerate(patches):
        r = AssociationResult(p.reference_id, p.candidate_ids, p.valid_mask.copy())
        for k, v in aux_full.items():
            setattr(r, f"aux_{k}_prob" if k != "field" else "aux_field_probs", v[i].astype(np.float64))
        for k, v in out.seq.items():
            setattr(r, f"seq_{k}_prob" if k != "field" else "seq_field_probs", v.data[i].astype(np.float64))
        results.append(r)
    return results


def encode_text(element: Element, model: MMPAN) -> np.ndarray:
    """Text feature of one element; widgets and empty text use the zero cell state."""
    words = () if element.kind == ElementKind.WIDGET else tuple(element.words[:MAX_WORDS])
    feats = model.encode_texts([words] if words else [])
    return feats.data[0] if words else feats.data[-1]


def forward(patch: Patch, page: FormPage, model: MMPAN, prev_pred_source: str = "self", labels: PatchLabels | None = None) -> AssociationResult:
    """Single-patch convenience wrapper; ``prev_pred_source`` is "labels" or "self"."""
    if prev_pred_source not in ("labels", "self"):
        raise ValueError(f"prev_pred_source must be 'labels' or 'self', got {prev_pred_source!r}")
    if patch.slots != model.cfg.slots or patch.height != model.cfg.H or patch.width != model.cfg.W:
        raise ValueError("patch was built for a different model configuration")
    batch = collate([(page, patch, labels)])
    out = model.forward(batch, teacher_forcing=prev_pred_source == "labels")
    return unpack_results(out, batch, [patch])[0]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def checkpoint_bytes(model: MMPAN) -> bytes:
    tensors, payload, offset = {}, [], 0
    for p in model.params():
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        tensors[p.name] = {"shape": list(arr.shape), "dtype": "float32", "offset": offset}
        payload.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"config": model.cfg.to_dict(), "params": tensors}, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<I", len(manifest)) + manifest + b"".join(payload)


def save_checkpoint(model: MMPAN, path) -> None:
    atomic_write(Path(path), checkpoint_bytes(model))


def load_checkpoint(path) -> MMPAN:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    if len(raw) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (mlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + mlen:
        raise CheckpointError(f"{path}: manifest length {mlen} exceeds file size")
    manifest = json.loads(raw[12:12 + mlen])
    payload = raw[12 + mlen:]
    model = MMPAN(ModelConfig.from_dict(manifest["config"]))
    named = model.named_params()
    expected = 0
    for name, meta in manifest["params"].items():
        if name not in named:
            raise CheckpointError(f"{path}: unknown parameter {name!r}")
        count = int(np.prod(meta["shape"], dtype=np.int64))
        expected = max(expected, meta["offset"] + 4 * count)
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, manifest describes {expected}")
    missing = set(named) - set(manifest["params"])
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    for name, meta in manifest["params"].items():
        p = named[name]
        count = int(np.prod(meta["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=meta["offset"]).reshape(meta["shape"])
        if arr.shape != p.shape:
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, model expects {p.shape}")
        p.data = arr.astype(np.float32)
    return model
