"""Sequence generation: ancestral sampling, greedy decoding, beam search.

Generation stops when eos is emitted or when max_len symbols have been
produced without it (recorded as truncated). Hypothesis scores are length
normalized: total log-prob divided by the grapheme count plus one, counting
the eos step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import (DecoderState, EncoderStates, ModelConfig, decode_step,
                    default_max_len, encode, initial_decoder_state)


@dataclass(frozen=True)
class Hypothesis:
    """One decoded sequence. graphemes excludes eos; step_log_probs includes
    the eos step when the sequence terminated."""

    graphemes: tuple[int, ...]
    step_log_probs: tuple[float, ...]
    total_log_prob: float
    normalized_score: float
    truncated: bool = False
    # tape handles for the picked log-probs, kept when sampling under grad
    lp_nodes: tuple[Tensor, ...] | None = field(default=None, repr=False, compare=False)


def _finish(graphemes: list[int], lps: list[float], truncated: bool,
            nodes: list[Tensor] | None) -> Hypothesis:
    total = 0.0
    for v in lps:
        total += v
    return Hypothesis(
        graphemes=tuple(graphemes),
        step_log_probs=tuple(lps),
        total_log_prob=total,
        normalized_score=total / (len(graphemes) + 1),
        truncated=truncated,
        lp_nodes=tuple(nodes) if nodes is not None else None,
    )


@dataclass(frozen=True)
class SampleBatch:
    """M sampled hypotheses for one utterance with their RNG substream keys."""

    utterance_index: int
    samples: tuple[Hypothesis, ...]
    seeds: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.samples) < 1:
            raise ValueError("a sample batch needs at least one sample")
        if len(self.seeds) != len(self.samples):
            raise ValueError("seeds and samples must align")


def _as_seed_sequence(rng) -> np.random.SeedSequence:
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, (int, np.integer)):
        return np.random.SeedSequence(int(rng))
    return np.random.SeedSequence([int(v) for v in rng])


def _substream(root: np.random.SeedSequence, index: int) -> np.random.SeedSequence:
    # deterministic child derivation, independent of how often the root is used
    return np.random.SeedSequence(entropy=root.entropy, spawn_key=root.spawn_key + (index,))


def _draw(rng: np.random.Generator, log_probs: np.ndarray) -> int:
    probs = np.exp(log_probs)
    cum = np.cumsum(probs)
    u = rng.random() * cum[-1]
    return min(int(np.searchsorted(cum, u, side="right")), log_probs.shape[0] - 1)


def _rollout(enc: EncoderStates, params, config: ModelConfig, max_len: int,
             choose) -> Hypothesis:
    """Drive the decoder with a choice function (log_probs, step) -> symbol id."""
    state = initial_decoder_state(config)
    prev = config.sos_id
    graphemes: list[int] = []
    lps: list[float] = []
    nodes: list[Tensor] = []
    truncated = True
    for step in range(max_len):
        log_probs, state = decode_step(prev, state, enc, params, config)
        y = int(choose(log_probs.data, step))
        node = ad.pick(log_probs, y)
        nodes.append(node)
        lps.append(float(node.data))
        if y == config.eos_id:
            truncated = False
            break
        graphemes.append(y)
        prev = y
    return _finish(graphemes, lps, truncated, nodes)


def sample_sequences(features, params, config: ModelConfig, num_samples: int,
                     max_len: int | None, rng, utterance_index: int = 0) -> SampleBatch:
    """Draw num_samples sequences, each conditioned on its own predictions.

    ``rng`` seeds a root stream; sample m uses the deterministic substream
    (root, m), so the batch is reproducible regardless of evaluation order.
    Sampling records the tape so the picked log-probs stay differentiable.
    """
    if num_samples < 1:
        raise ValueError(f"num_samples must be at least 1, got {num_samples}")
    root = _as_seed_sequence(rng)
    enc = encode(features, params, config)
    if max_len is None:
        max_len = default_max_len(enc.source_length, config)
    if max_len < 1:
        raise ValueError(f"max_len must be at least 1, got {max_len}")
    samples = []
    seeds = []
    for m in range(num_samples):
        child = _substream(root, m)
        gen = np.random.default_rng(child)
        samples.append(_rollout(enc, params, config, max_len,
                                lambda lp, _step, g=gen: _draw(g, lp)))
        seeds.append(tuple(int(k) for k in child.spawn_key))
    return SampleBatch(utterance_index=utterance_index, samples=tuple(samples),
                       seeds=tuple(seeds))


def forced_decode(features, params, config: ModelConfig, graphemes,
                  terminated: bool = True, enc: EncoderStates | None = None) -> Hypothesis:
    """Score a fixed emission sequence through the sampling path.

    Used by enumeration oracles: the decoder is driven exactly as during
    sampling but the "draws" are prescribed.
    """
    symbols = [int(g) for g in graphemes] + ([config.eos_id] if terminated else [])
    if not symbols:
        raise ValueError("forced_decode needs at least one emission")
    if enc is None:
        enc = encode(features, params, config)
    return _rollout(enc, params, config, len(symbols),
                    lambda _lp, step: symbols[step])


def greedy_decode(features, params, config: ModelConfig,
                  max_len: int | None = None) -> Hypothesis:
    """Pick the argmax symbol at every step (ties to the smaller id)."""
    with ad.no_grad():
        enc = encode(features, params, config)
        if max_len is None:
            max_len = default_max_len(enc.source_length, config)
        return _rollout(enc, params, config, max_len,
                        lambda lp, _step: int(np.argmax(lp)))


def beam_search(features, params, config: ModelConfig, beam: int = 5,
                max_len: int | None = None) -> Hypothesis:
    """Beam search over grapheme expansions, maximizing the normalized score.

    At each step all expansions of the live hypotheses are pooled and ranked
    by cumulative log-prob; the top ``beam`` survive. Survivors ending in eos
    are finalized, as is anything still alive at max_len (truncated). Ties
    break toward the lexicographically smaller grapheme sequence.
    """
    if beam < 1:
        raise ValueError(f"beam width must be at least 1, got {beam}")
    with ad.no_grad():
        enc = encode(features, params, config)
        if max_len is None:
            max_len = default_max_len(enc.source_length, config)

        # live items: (graphemes, lps, cumulative, state, prev_id)
        live = [((), (), 0.0, initial_decoder_state(config), config.sos_id)]
        finished: list[Hypothesis] = []
        for _ in range(max_len):
            pool = []
            for graphemes, lps, cum, state, prev in live:
                log_probs, new_state = decode_step(prev, state, enc, params, config)
                for y in range(config.vocab_size):
                    lp = float(log_probs.data[y])
                    emitted = graphemes + (y,)
                    pool.append((cum + lp, emitted, lps + (lp,), new_state, y))
            pool.sort(key=lambda item: (-item[0], item[1]))
            live = []
            for cum, emitted, lps, state, y in pool[:beam]:
                if y == config.eos_id:
                    finished.append(_finish(list(emitted[:-1]), list(lps), False, None))
                else:
                    live.append((emitted, lps, cum, state, y))
            if not live:
                break
        for graphemes, lps, _cum, _state, _prev in live:
            finished.append(_finish(list(graphemes), list(lps), True, None))
        finished.sort(key=lambda h: (-h.normalized_score, h.graphemes))
        return finished[0]
