"""Greedy, beam, and ensemble decoding.

Decoding runs outside any tape (pure numpy forward passes). Search drives
a stepper object exposing ``start`` and ``step``; the model-backed stepper
below averages softmax distributions across an ensemble, and tests drive
the same search code with hand-built table steppers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data.vocab import BOS_ID, EOS_ID
from .errors import ConfigError, ShapeError
from .model import DecoderState, TranslationModel


@dataclass
class Hypothesis:
    """A (possibly finished) decoder output with its cumulative log-prob."""

    tokens: list[int] = field(default_factory=list)
    logprob: float = 0.0
    finished: bool = False

    def score(self, length_norm: float) -> float:
        n = max(len(self.tokens), 1)
        return self.logprob / (n**length_norm)


def ensemble_step(models: list[TranslationModel], prepared, states, y_prev, stats=None):
    """Advance every model one step and average their token distributions.

    Returns (mean probabilities (B, V), new per-model states).
    """
    vocab_sizes = {m.params["emb.tgt"].shape[0] for m in models}
    if len(vocab_sizes) != 1:
        raise ShapeError(f"ensemble models disagree on vocabulary size: {sorted(vocab_sizes)}")
    probs = None
    new_states = []
    for model, prep, state in zip(models, prepared, states):
        out = model.step(prep, y_prev, state, stats=stats)
        p = T.softmax(out.logits, axis=1).data
        probs = p if probs is None else probs + p
        new_states.append(out.state)
    return probs / len(models), new_states


class ModelStepper:
    """Search interface over one source batch for one or more models."""

    def __init__(
        self,
        models: TranslationModel | list[TranslationModel],
        src_ids: np.ndarray,
        src_mask: np.ndarray,
        features: np.ndarray | None = None,
        stats: dict | None = None,
    ):
        self.models = [models] if isinstance(models, TranslationModel) else list(models)
        if not self.models:
            raise ConfigError("need at least one model to decode")
        self.stats = stats
        self.batch = src_ids.shape[0]
        self.prepared = [
            m.prepare(src_ids, src_mask, features if m.uses_features else None)
            for m in self.models
        ]

    def start(self) -> list[DecoderState]:
        return [m.initial_state(self.batch) for m in self.models]

    def step(self, states, y_prev: np.ndarray):
        """Returns (log probabilities (B, V), new states)."""
        probs, new_states = ensemble_step(self.models, self.prepared, states, y_prev, stats=self.stats)
        return np.log(np.maximum(probs, 1e-38)), new_states

    def reorder(self, states, parents: np.ndarray):
        """Reindex recurrent states along the batch axis (beam bookkeeping)."""
        out = []
        for state in states:
            out.append(
                DecoderState(
                    h1=None if state.h1 is None else T.Tensor(state.h1.data[parents]),
                    h2=T.Tensor(state.h2.data[parents]),
                    t=state.t,
                )
            )
        return out


def greedy_decode_batch(stepper, max_len: int) -> list[list[int]]:
    """Argmax decoding for a whole batch; rows stop at their end marker."""
    states = stepper.start()
    batch = stepper.batch
    y = np.full(batch, BOS_ID, dtype=np.int64)
    done = np.zeros(batch, dtype=bool)
    outputs: list[list[int]] = [[] for _ in range(batch)]
    for _ in range(max_len):
        logp, states = stepper.step(states, y)
        y = logp.argmax(axis=1)
        for row in range(batch):
            if not done[row]:
                if y[row] == EOS_ID:
                    done[row] = True
                else:
                    outputs[row].append(int(y[row]))
        if done.all():
            break
    return outputs


def greedy_decode(models, src_ids, src_mask, features=None, max_len: int = 100, stats=None):
    """Per-sentence greedy decoding (identical to beam size 1)."""
    hyps = []
    for i in range(src_ids.shape[0]):
        feats = None if features is None else features[i : i + 1]
        stepper = ModelStepper(models, src_ids[i : i + 1], src_mask[i : i + 1], feats, stats=stats)
        hyps.append(greedy_decode_batch(stepper, max_len)[0])
    return hyps


def beam_search(stepper, beam: int, max_len: int, length_norm: float = 0.6) -> Hypothesis:
    """Best-first decoding keeping the top ``beam`` expansions per step.

    End-marker expansions compete for beam slots and move to the finished
    pool. The result is the highest-scoring hypothesis over the finished
    pool together with any hypotheses still active at ``max_len``; active
    branches provably unable to beat the finished pool are pruned early
    (log-probabilities never increase, so ``logprob / max_len**norm``
    bounds every continuation's score).
    """
    if beam < 1:
        raise ConfigError(f"beam size must be at least 1, got {beam}")
    if stepper.batch != 1:
        raise ShapeError("beam_search expects a single-sentence stepper")

    states = stepper.start()
    active = [Hypothesis()]
    finished: list[Hypothesis] = []
    y = np.array([BOS_ID], dtype=np.int64)
    parents = np.zeros(1, dtype=np.int64)
    ran_to_max_len = True

    for _ in range(max_len):
        logp, states = stepper.step(stepper.reorder(states, parents), y)
        vocab = logp.shape[1]
        scores = np.array([h.logprob for h in active])[:, None] + logp
        flat = scores.ravel()
        take = min(beam, flat.size)
        top = np.argpartition(-flat, take - 1)[:take]
        top = top[np.argsort(-flat[top], kind="stable")]

        next_active: list[Hypothesis] = []
        next_parents: list[int] = []
        next_tokens: list[int] = []
        for idx in top:
            parent, token = divmod(int(idx), vocab)
            hyp = Hypothesis(
                tokens=active[parent].tokens + [token],
                logprob=float(flat[idx]),
            )
            if token == EOS_ID:
                hyp.finished = True
                finished.append(hyp)
            else:
                next_active.append(hyp)
                next_parents.append(parent)
                next_tokens.append(token)

        if finished and next_active:
            best_done = max(h.score(length_norm) for h in finished)
            horizon = float(max_len) ** length_norm
            keep = [
                i for i, h in enumerate(next_active)
                if (h.logprob / horizon if h.logprob < 0 else h.logprob) > best_done
            ]
            if len(keep) != len(next_active):
                next_active = [next_active[i] for i in keep]
                next_parents = [next_parents[i] for i in keep]
                next_tokens = [next_tokens[i] for i in keep]

        active = next_active
        if not active:
            ran_to_max_len = False
            break
        parents = np.array(next_parents, dtype=np.int64)
        y = np.array(next_tokens, dtype=np.int64)

    pool = finished + (active if ran_to_max_len else [])
    return max(pool, key=lambda h: h.score(length_norm))


def beam_decode(models, src_ids, src_mask, features=None, beam: int = 6,
                max_len: int = 100, length_norm: float = 0.6) -> list[list[int]]:
    """Beam-search every sentence; returns token lists without end markers."""
    hyps = []
    for i in range(src_ids.shape[0]):
        feats = None if features is None else features[i : i + 1]
        stepper = ModelStepper(models, src_ids[i : i + 1], src_mask[i : i + 1], feats)
        best = beam_search(stepper, beam=beam, max_len=max_len, length_norm=length_norm)
        tokens = best.tokens[:-1] if best.finished else best.tokens
        hyps.append(tokens)
    return hyps
