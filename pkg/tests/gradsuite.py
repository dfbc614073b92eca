"""Tiny embedder variants and batches for finite-difference gradient checks."""
from __future__ import annotations

import numpy as np

from casediar import ndiff as nd
from casediar.content import WordTable, character_inventory, phone_inventory, word_inventory
from casediar.models.data import ContentEncoder, WindowBatch
from casediar.models.embedder import Embedder, EmbedderConfig

VARIANTS = {
    "baseline": ((), "plain"),
    "case-p": (("phone",), "plain"),
    "case-c": (("character",), "plain"),
    "case-pc": (("phone", "character"), "plain"),
    "case-w": (("word",), "plain"),
    "case-wpc": (("phone", "character", "word"), "plain"),
    "multitask": ((), "multitask"),
    "adversarial": ((), "adversarial"),
}

WORDS = [f"w{i}" for i in range(6)]


def encoder() -> ContentEncoder:
    inv = {"phone": phone_inventory(), "character": character_inventory(), "word": word_inventory(WORDS)}
    return ContentEncoder(inv, WordTable(WORDS, seed=1))


def tiny_config(levels, mode, **kw) -> EmbedderConfig:
    base = dict(acoustic_dim=3, levels=levels, left=1, right=1, hidden=(5, 4), dvector_dim=4,
                word_proj=3, heads=2, attention_hidden=3, mode=mode, adv_lambda=0.7, aux_weight=1.0)
    base.update(kw)
    return EmbedderConfig(**base)


def tiny_batch(cfg: EmbedderConfig, seed: int = 0, B: int = 3, T: int = 6) -> WindowBatch:
    rng = np.random.default_rng(seed)
    ids = {"phone": rng.integers(-1, 48, size=B * T), "character": rng.integers(-1, 27, size=B * T),
           "word": rng.integers(-1, len(WORDS), size=B * T)}
    content = encoder().encode(ids, cfg.levels) if cfg.levels else None
    return WindowBatch(rng.normal(size=(B * T, cfg.acoustic_dim)), content, T,
                       rng.integers(0, 3, size=B), ids["phone"])


def tiny_model(name: str, seed: int = 0) -> tuple[Embedder, WindowBatch]:
    levels, mode = VARIANTS[name]
    cfg = tiny_config(levels, mode)
    model = Embedder(cfg, ["a", "b", "c"], seed)
    # zero-initialised biases would put rows with dead units exactly on a ReLU
    # kink, where the derivative is undefined; random values avoid that
    rng = np.random.default_rng(100 + seed)
    for _, t in model.params.items():
        t.value[...] = rng.normal(scale=0.6, size=t.value.shape)
    return model, tiny_batch(cfg, seed)


def check_variant(name: str, seed: int = 0) -> float:
    model, batch = tiny_model(name, seed)
    return nd.finite_diff_check(model, batch, epsilon=1e-5, max_entries=None)


def reversal_sign_ok(seed: int = 0, entries: int = 6) -> bool:
    """Below the reversal the auxiliary gradient is -lambda times d(aux)/dW; above it, +1 times."""
    model, batch = tiny_model("adversarial", seed)
    lam = model.cfg.adv_lambda
    model.params.zero_grad()
    _, aux = model._losses(batch)
    aux.backward()
    ok = True
    for name, factor in (("tdnn.0.W", -lam), ("phone_head.W", 1.0)):
        analytic = model.params.grad(name).reshape(-1).copy()
        flat = model.params[name].value.reshape(-1)
        for i in range(entries):
            orig = flat[i]
            with nd.no_grad():
                flat[i] = orig + 1e-5
                up = model._losses(batch)[1].item()
                flat[i] = orig - 1e-5
                down = model._losses(batch)[1].item()
            flat[i] = orig
            numeric = (up - down) / 2e-5
            ok &= abs(analytic[i] - factor * numeric) <= 1e-6 * max(1.0, abs(numeric))
        ok &= bool(np.any(np.abs(analytic) > 1e-8))
    return bool(ok)
