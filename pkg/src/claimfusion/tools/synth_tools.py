# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Synthetic claims with a planted cross-modal fraud signal.

Each claim draws a visual latent `z_v = [z_cds, z_ud]` and a tabular latent `z_t = [z_spud, z_struct]`.
With `s(z) = Σz / √dim`, the fraud log-odds are

    b0 + α_v·s(z_v) + α_t·s(z_t) + β·(s(z_cds)·s(z_spud) + s(z_ud)·s(z_struct))

so the interaction terms can only be read by combining a visual feature with a tabular one.
`b0` is set by bisection so that the mean fraud probability equals the requested rate.

Observations are noisy functions of the latents:
CDS/UD image embeddings follow `z_cds`/`z_ud`; per-part damage scores follow `z_spud`;
the struct one-hot follows `z_struct`; part visibility is pure nuisance; text is nuisance plus a weak leak.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
from dataclasses import dataclass
from typing import Any, Self

import numpy as np
from numpy.typing import NDArray

from claimfusion.core.enums import CleverEnum
from claimfusion.core.exceptions import ConfigInvalidError, ValueOutOfRangeError
from claimfusion.core.records import EMBEDDING_DIM, N_PARTS, STRUCT_DIM, TEXT_DIM, ClaimRecord, ImageRecord

__all__ = ["STRUCT_CARDINALITIES", "Knowledge", "SynthConfig", "SynthDraw", "SynthUtils", "SynthTools"]

logger = logging.getLogger("claimfusion")

STRUCT_CARDINALITIES = (2, 2, 3, 3, 4, 5, 6, 7, 8, 9, 10, 12, 16)
# logistic approximation of the normal CDF
_PROBIT_SCALE = 1.702


class Knowledge(CleverEnum):
    """Which latent summaries an oracle may see."""

    BOTH = enum.auto()
    VISUAL = enum.auto()
    TABULAR = enum.auto()


@dataclass(slots=True, frozen=True, kw_only=True)
class SynthConfig:
    """
    Attributes:
        n_claims: Number of claims
        fraud_rate: Target share of fraudulent claims, in (0, 1)
        images: Inclusive range of images per claim
        visual_dim: Size of `z_v` (split evenly between CDS and UD)
        tabular_dim: Size of `z_t` (split evenly between SPUD and Struct)
        beta: Cross-modal interaction strength
        alpha_visual: Visual-only signal strength
        alpha_tabular: Tabular-only signal strength
        sigma: Observation noise
        text_leak: Strength of the latent summaries in the text embedding
        absent_rate: Per image and part, probability that the part is not shown
        text_missing: Probability that a claim has no text
        seed: Seed
    """

    n_claims: int = 20000
    fraud_rate: float = 0.03
    images: tuple[int, int] = (1, 6)
    visual_dim: int = 8
    tabular_dim: int = 8
    beta: float = 2.0
    alpha_visual: float = 0.5
    alpha_tabular: float = 0.5
    sigma: float = 0.5
    text_leak: float = 0.05
    absent_rate: float = 0.1
    text_missing: float = 0.0
    seed: int = 0

    def __post_init__(self: Self) -> None:
        object.__setattr__(self, "images", tuple(int(i) for i in self.images))
        if not 0 < self.fraud_rate < 1:
            msg = f"fraud_rate {self.fraud_rate} is not in (0, 1)"
            raise ValueOutOfRangeError(msg, value=self.fraud_rate, minimum=0, maximum=1)
        for key in ("absent_rate", "text_missing"):
            value = getattr(self, key)
            if not 0 <= value < 1:
                msg = f"{key} {value} is not in [0, 1)"
                raise ValueOutOfRangeError(msg, value=value, minimum=0, maximum=1)
        if self.n_claims < 1:
            msg = f"n_claims must be positive, not {self.n_claims}"
            raise ConfigInvalidError(msg, key="n_claims", value=self.n_claims)
        if len(self.images) != 2 or not 1 <= self.images[0] <= self.images[1]:
            msg = f"images must be a range (lo, hi) with 1 ≤ lo ≤ hi, not {self.images}"
            raise ConfigInvalidError(msg, key="images", value=self.images)
        for key in ("visual_dim", "tabular_dim"):
            value = getattr(self, key)
            if value < 2 or value % 2 != 0:
                msg = f"{key} must be even and at least 2, not {value}"
                raise ConfigInvalidError(msg, key=key, value=value)
        for key in ("beta", "sigma", "alpha_visual", "alpha_tabular", "text_leak"):
            if getattr(self, key) < 0:
                msg = f"{key} must be non-negative, not {getattr(self, key)}"
                raise ConfigInvalidError(msg, key=key, value=getattr(self, key))

    def replace(self: Self, **kwargs: Any) -> SynthConfig:
        return dataclasses.replace(self, **kwargs)

    def to_dict(self: Self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["images"] = list(self.images)
        return d


@dataclass(slots=True, frozen=True)
class SynthDraw:
    """
    Generated claims plus the hidden quantities behind them.

    Attributes:
        records: Claims, in index order
        summaries: `(n, 4)` latent summaries `s(z_cds), s(z_ud), s(z_spud), s(z_struct)`
        logits: True fraud log-odds
        intercept: Calibrated `b0`
        config: Generator settings
    """

    records: list[ClaimRecord]
    summaries: NDArray[np.float64]
    logits: NDArray[np.float64]
    intercept: float
    config: SynthConfig

    @property
    def labels(self: Self) -> NDArray[np.int64]:
        return np.array([r.label for r in self.records], dtype=np.int64)


def _sigmoid(x: NDArray) -> NDArray[np.float64]:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass(slots=True, frozen=True)
class SynthUtils:
    def linear_logits(self: Self, summaries: NDArray[np.float64], cfg: SynthConfig) -> NDArray[np.float64]:
        """Log-odds without the intercept."""
        s_cds, s_ud, s_spud, s_struct = summaries.T
        s_v = (s_cds + s_ud) / math.sqrt(2)
        s_t = (s_spud + s_struct) / math.sqrt(2)
        return cfg.alpha_visual * s_v + cfg.alpha_tabular * s_t + cfg.beta * (s_cds * s_spud + s_ud * s_struct)

    def calibrate_intercept(self: Self, logits: NDArray[np.float64], rate: float, *, tol: float = 1e-12) -> float:
        """Bisection for `b0` with `mean(sigmoid(b0 + logits)) = rate`."""
        lo, hi = -50.0 - float(np.max(logits)), 50.0 - float(np.min(logits))
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if np.mean(_sigmoid(mid + logits)) < rate:
                lo = mid
            else:
                hi = mid
            if hi - lo < tol:
                break
        return 0.5 * (lo + hi)

    def _mixing(self: Self, cfg: SynthConfig) -> dict[str, NDArray[np.float64]]:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0, 1]))
        v, t = cfg.visual_dim // 2, cfg.tabular_dim // 2

        def unit_columns(shape: tuple[int, int]) -> NDArray[np.float64]:
            m = rng.normal(size=shape)
            return m / np.linalg.norm(m, axis=0, keepdims=True)

        text = rng.normal(size=(2, TEXT_DIM))
        return {
            "cds": unit_columns((v, EMBEDDING_DIM)),
            "ud": unit_columns((v, EMBEDDING_DIM)),
            "spud": unit_columns((t, N_PARTS)),
            "struct": unit_columns((t, len(STRUCT_CARDINALITIES))),
            # unit rows: one direction per latent summary
            "text": text / np.linalg.norm(text, axis=1, keepdims=True),
        }

    def _struct_onehot(self: Self, u: NDArray[np.float64]) -> NDArray[np.float64]:
        onehot = np.zeros(STRUCT_DIM)
        offset = 0
        for value, card in zip(u, STRUCT_CARDINALITIES, strict=True):
            category = min(int(math.floor(float(_sigmoid(_PROBIT_SCALE * value)) * card)), card - 1)
            onehot[offset + category] = 1.0
            offset += card
        return onehot

    def generate_synthetic(self: Self, cfg: SynthConfig) -> SynthDraw:
        """
        Draws claims; the same config always gives identical claims.
        Claim `i` takes its observation noise from its own stream, keyed by the seed and `i`.
        """
        v, t = cfg.visual_dim // 2, cfg.tabular_dim // 2
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0, 0]))
        z_cds = rng.normal(size=(cfg.n_claims, v))
        z_ud = rng.normal(size=(cfg.n_claims, v))
        z_spud = rng.normal(size=(cfg.n_claims, t))
        z_struct = rng.normal(size=(cfg.n_claims, t))
        summaries = np.stack(
            [
                z_cds.sum(axis=1) / math.sqrt(v),
                z_ud.sum(axis=1) / math.sqrt(v),
                z_spud.sum(axis=1) / math.sqrt(t),
                z_struct.sum(axis=1) / math.sqrt(t),
            ],
            axis=1,
        )
        linear = self.linear_logits(summaries, cfg)
        b0 = self.calibrate_intercept(linear, cfg.fraud_rate)
        logits = b0 + linear
        labels = (rng.random(cfg.n_claims) < _sigmoid(logits)).astype(np.int64)
        mix = self._mixing(cfg)
        records = []
        for i in range(cfg.n_claims):
            r = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, i]))
            n_img = int(r.integers(cfg.images[0], cfg.images[1] + 1))
            images = []
            cds_mean = z_cds[i] @ mix["cds"]
            ud_mean = z_ud[i] @ mix["ud"]
            damage = z_spud[i] @ mix["spud"]
            for _ in range(n_img):
                absent = np.flatnonzero(r.random(N_PARTS) < cfg.absent_rate)
                vis = r.random(N_PARTS)
                ud_score = _sigmoid(_PROBIT_SCALE * damage + cfg.sigma * r.normal(size=N_PARTS))
                vis[absent], ud_score[absent] = 0.0, 0.0
                images.append(
                    ImageRecord(
                        cds=cds_mean + cfg.sigma * r.normal(size=EMBEDDING_DIM),
                        ud=ud_mean + cfg.sigma * r.normal(size=EMBEDDING_DIM),
                        part_vis=vis,
                        ud_score=ud_score,
                        absent_parts=frozenset(absent.tolist()),
                    )
                )
            u = (z_struct[i] @ mix["struct"] + cfg.sigma * r.normal(size=len(STRUCT_CARDINALITIES))) / math.sqrt(
                1 + cfg.sigma**2
            )
            s_v = (summaries[i, 0] + summaries[i, 1]) / math.sqrt(2)
            s_t = (summaries[i, 2] + summaries[i, 3]) / math.sqrt(2)
            text = r.normal(size=TEXT_DIM) + cfg.text_leak * (s_v * mix["text"][0] + s_t * mix["text"][1]) * math.sqrt(
                TEXT_DIM
            )
            has_text = r.random() >= cfg.text_missing
            records.append(
                ClaimRecord(
                    claim_id=f"claim-{i:07d}",
                    label=int(labels[i]),
                    images=tuple(images),
                    struct_onehot=self._struct_onehot(u),
                    text_emb=text if has_text else None,
                )
            )
        logger.info(
            f"Generated {cfg.n_claims} claims with {int(labels.sum())} fraudulent ({labels.mean():.2%}); b0 = {b0:.4f}"
        )
        return SynthDraw(records, summaries, logits, b0, cfg)

    def oracle_scores(
        self: Self,
        draw: SynthDraw,
        use: Knowledge | str = Knowledge.BOTH,
        *,
        n_nodes: int = 48,
    ) -> NDArray[np.float64]:
        """
        Fraud probabilities given some of the latent summaries.
        The unknown pair of summaries is integrated out with Gauss–Hermite quadrature;
        given the known pair the log-odds are normal in the unknown ones.
        """
        use = Knowledge.of(use)
        cfg = draw.config
        s_cds, s_ud, s_spud, s_struct = draw.summaries.T
        if use is Knowledge.BOTH:
            return _sigmoid(draw.logits)
        if use is Knowledge.VISUAL:
            known = cfg.alpha_visual * (s_cds + s_ud) / math.sqrt(2)
            c1 = cfg.alpha_tabular / math.sqrt(2) + cfg.beta * s_cds
            c2 = cfg.alpha_tabular / math.sqrt(2) + cfg.beta * s_ud
        else:
            known = cfg.alpha_tabular * (s_spud + s_struct) / math.sqrt(2)
            c1 = cfg.alpha_visual / math.sqrt(2) + cfg.beta * s_spud
            c2 = cfg.alpha_visual / math.sqrt(2) + cfg.beta * s_struct
        mu = draw.intercept + known
        sd = np.sqrt(c1**2 + c2**2)
        nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
        weights = weights / math.sqrt(2 * math.pi)
        return _sigmoid(mu[:, None] + sd[:, None] * nodes[None, :]) @ weights

    def expected_fraud_band(self: Self, cfg: SynthConfig, n_sd: float = 3.0) -> tuple[float, float]:
        """The fraud count `n·rate ± n_sd` binomial standard deviations."""
        mean = cfg.n_claims * cfg.fraud_rate
        sd = math.sqrt(cfg.n_claims * cfg.fraud_rate * (1 - cfg.fraud_rate))
        return mean - n_sd * sd, mean + n_sd * sd


SynthTools = SynthUtils()
