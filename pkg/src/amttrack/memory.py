"""Long-/short-term dynamic template memory.

A :class:`TemplateMemory` is a deterministic state machine driven once per
frame by :meth:`TemplateMemory.step`. Short-term (ST) entries are replaced
first-in first-out; long-term (LT) entries are admitted only when they are
dissimilar enough from everything already stored, and the LT store is reset
to the static template periodically.
"""

from dataclasses import dataclass, field, replace
import json
from pathlib import Path

import numpy as np

from .exceptions import DegenerateInputError, ParameterError, ShapeError
from .hopfield import hopfield_lookup
from .validation import check_unit_interval


@dataclass(frozen=True)
class TemplateEntry:
    """One template: per-modality crops and tokens plus a unit embedding.

    ``tokens`` maps modality name to an ``N_z x D`` matrix; ``crops`` holds
    the corresponding 128 x 128 images and may be empty when only tokens are
    needed.
    """

    embedding: np.ndarray
    score: float = 1.0
    frame_idx: int = 0
    tokens: dict = field(default_factory=dict)
    crops: dict = field(default_factory=dict)
    static: bool = False

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64).ravel()
        norm = np.linalg.norm(emb)
        if norm == 0.0:
            raise DegenerateInputError("template embedding has zero norm")
        object.__setattr__(self, "embedding", emb / norm)
        object.__setattr__(self, "score", check_unit_interval(self.score, "score"))


@dataclass
class StepRecord:
    n: int
    score: float
    st_action: str = "none"
    lt_action: str = "none"
    div_scale: float = None

    def as_dict(self):
        return {
            "n": self.n,
            "score": self.score,
            "st_action": self.st_action,
            "lt_action": self.lt_action,
            "div_scale": self.div_scale,
        }


class TemplateMemory:
    """Associative ST/LT template memory initialised from the static template.

    Parameters
    ----------
    z_s : TemplateEntry
        Static template; it seeds both stores and is never evicted from LT.
    st_capacity, lt_capacity : int
    st_interval, lt_interval : int
        ST updates happen on frames where ``n % st_interval == 0`` and the
        score exceeds ``tau``; LT updates additionally require
        ``n % lt_interval == 0``.
    theta : float
        Similarity bound: a candidate enters LT only if its maximum cosine
        similarity to the current LT entries is below ``theta``.
    tau : float
        Response threshold.
    reinit_interval : int
        LT is reset to ``[z_s]`` on frames where ``n % reinit_interval == 0``.
    """

    def __init__(self, z_s, st_capacity=5, lt_capacity=10, st_interval=10, lt_interval=20,
                 theta=0.5, tau=0.7, reinit_interval=500):
        for name, v in (("st_capacity", st_capacity), ("lt_capacity", lt_capacity),
                        ("st_interval", st_interval), ("lt_interval", lt_interval),
                        ("reinit_interval", reinit_interval)):
            if int(v) < 1:
                raise ParameterError(f"{name} must be >= 1")
        self.static = z_s if z_s.static else replace(z_s, static=True)
        self.st_capacity = int(st_capacity)
        self.lt_capacity = int(lt_capacity)
        self.st_interval = int(st_interval)
        self.lt_interval = int(lt_interval)
        self.theta = float(theta)
        self.tau = float(tau)
        self.reinit_interval = int(reinit_interval)
        self.ST = [self.static]
        self.LT = [self.static]
        self.n = 0
        self.trace = []

    @classmethod
    def from_config(cls, z_s, config):
        return cls(z_s, config.st_capacity, config.lt_capacity, config.st_interval, config.lt_interval,
                   config.theta, config.tau, config.reinit_interval)

    def wants_candidate(self, score):
        """Whether the next :meth:`step` with ``score`` would consume a candidate."""
        return score > self.tau and (self.n + 1) % self.st_interval == 0

    def _lt_similarities(self):
        E = np.stack([e.embedding for e in self.LT])
        return E @ E.T

    def step(self, score, candidate=None):
        """Advance one frame; returns the :class:`StepRecord` of what changed."""
        score = check_unit_interval(score, "score")
        self.n += 1
        rec = StepRecord(self.n, score)
        if self.n % self.reinit_interval == 0 and len(self.LT) > 1:
            self.LT = [self.static]
            rec.lt_action = "reinit"
        if score > self.tau and self.n % self.st_interval == 0:
            if candidate is None:
                raise ParameterError(f"frame {self.n} updates the memory but no candidate was given")
            self.ST.append(candidate)
            rec.st_action = "push"
            if len(self.ST) > self.st_capacity:
                self.ST.pop(0)
                rec.st_action = "push_evict"
            E = np.stack([e.embedding for e in self.LT])
            div_scale = 1.0 - float(np.max(np.clip(E @ candidate.embedding, -1.0, 1.0)))
            rec.div_scale = div_scale
            if self.n % self.lt_interval == 0:
                rec.lt_action = self._update_lt(candidate, div_scale)
        self.trace.append(rec)
        return rec

    def _update_lt(self, candidate, div_scale):
        if not div_scale > 1.0 - self.theta:
            return "reject"
        action = "insert"
        if len(self.LT) >= self.lt_capacity:
            S = self._lt_similarities()
            k = len(self.LT)
            mean_sim = (S.sum(axis=1) - np.diag(S)) / max(k - 1, 1)
            # ties go to the oldest entry; the static template is never evicted
            order = sorted(
                (i for i, e in enumerate(self.LT) if not e.static),
                key=lambda i: (-mean_sim[i], self.LT[i].frame_idx),
            )
            if not order:
                return "reject"
            self.LT.pop(order[0])
            action = "insert_evict"
        self.LT.append(candidate)
        return action

    def resample(self):
        """Return ``(z_LT, z_ST)``: the most diverse LT entry and the newest ST entry."""
        z_st = self.ST[-1]
        if len(self.LT) == 1:
            return self.LT[0], z_st
        S = self._lt_similarities()
        k = len(self.LT)
        mean_sim = (S.sum(axis=1) - np.diag(S)) / (k - 1)
        best = min(range(k), key=lambda i: (mean_sim[i], self.LT[i].frame_idx))
        return self.LT[best], z_st

    def snapshot(self):
        """Frame indices held by ST and LT, oldest first."""
        return {"n": self.n, "ST": [e.frame_idx for e in self.ST], "LT": [e.frame_idx for e in self.LT]}

    def write_trace(self, path):
        with Path(path).open("w", encoding="utf-8") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec.as_dict()) + "\n")


def enhance(z_lt, z_st, lookup_keys=None, lookup_values=None, beta=4.0):
    """Pass each template's tokens through the prototype lookup layer.

    Without prototypes (identity mode) the templates are returned unchanged.
    """
    if lookup_keys is None:
        return z_lt, z_st
    values = lookup_keys if lookup_values is None else lookup_values

    def lift(entry):
        return replace(entry, tokens={m: hopfield_lookup(t, lookup_keys, values, beta) for m, t in entry.tokens.items()})

    return lift(z_lt), lift(z_st)


def assemble(z_lt, z_st, z_s, modality):
    """Template block for one modality, rows ordered ``[static | LT | ST]``."""
    blocks = [z_s.tokens[modality], z_lt.tokens[modality], z_st.tokens[modality]]
    if len({b.shape[1] for b in blocks}) != 1:
        raise ShapeError(f"template widths differ: {[b.shape for b in blocks]}")
    return np.vstack(blocks)
