"""Beam-search decoding, parenthesis repair, and accuracy evaluation.

Write and copy actions that emit the same surface token are merged by summing
their probabilities, so beam scores measure the same marginalized quantity the
training objective optimizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import EOS


class ExecutorError(Exception):
    """Raised by executors on malformed or unevaluable logical forms."""


@dataclass
class Hypothesis:
    tokens: tuple
    score: float
    s: np.ndarray = None
    cdec: np.ndarray = None
    finished: bool = False


def _step_distribution(model, enc, mask, s):
    """Merged surface-token distribution for one decoder state.

    Returns (token -> probability, context vector c). Copy probabilities are
    added onto the surface form of the copied input word.
    """
    params = model.params
    B = enc.b
    t = params.W_a.T @ s
    e = B @ t
    emax = e.max()
    a = np.exp(e - emax)
    alpha = a / a.sum()
    c = alpha @ B
    sc = np.concatenate([s, c])
    write_logits = params.U @ sc
    logits = np.concatenate([write_logits, np.where(mask, e, -np.inf)])
    top = logits.max()
    q = np.exp(logits - top)
    q /= q.sum()
    V = len(write_logits)
    merged = {}
    for w, tok in enumerate(model.output_vocab.tokens):
        merged[tok] = q[w]
    for i, surface in enumerate(enc.surfaces):
        if mask[i]:
            merged[surface] = merged.get(surface, 0.0) + q[V + i]
    return merged, c


@dataclass
class _EncodedInput:
    b: np.ndarray
    surfaces: tuple


def beam_search(model, utterance, beam_size=5, max_len=None):
    """Decode `utterance`; returns up to beam_size finished hypotheses sorted
    by score, best first. Hypotheses finish on </s> or at max_len. Ties break
    toward earlier-generated hypotheses (stable sort)."""
    from .neural import encode, lstm_step

    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    utterance = tuple(utterance)
    if max_len is None:
        max_len = 4 * len(utterance) + 20
    params = model.params
    H = params.hidden_dim
    xin = [model.input_vocab.id(t) for t in utterance]
    raw = encode(params, xin)
    enc = _EncodedInput(b=raw.b, surfaces=utterance)
    mask = model.copy_mask(utterance)
    u0 = np.concatenate([raw.h_last_fwd, raw.h_first_bwd])
    s1 = np.tanh(params.W_s @ u0)

    live = [Hypothesis(tokens=(), score=0.0, s=s1, cdec=np.zeros(H))]
    finished = []
    for _ in range(max_len):
        if not live:
            break
        candidates = []
        for hyp in live:
            dist, c = _step_distribution(model, enc, mask, hyp.s)
            for tok, p in dist.items():
                if p <= 0.0:
                    continue
                score = hyp.score + float(np.log(p))
                if tok == EOS:
                    finished.append(Hypothesis(hyp.tokens, score, finished=True))
                else:
                    candidates.append((score, hyp, tok, c))
        candidates.sort(key=lambda item: -item[0])
        live = []
        for score, hyp, tok, c in candidates[:beam_size]:
            feed_id = model.output_vocab.id(tok)
            feed = np.concatenate([params.emb_out[feed_id], c])
            s2, cd2, _ = lstm_step(params.dec_W, params.dec_b, feed, hyp.s, hyp.cdec)
            live.append(Hypothesis(hyp.tokens + (tok,), score, s=s2, cdec=cd2))
    # hypotheses still live at max_len count as finished
    for hyp in live:
        finished.append(Hypothesis(hyp.tokens, hyp.score, finished=True))
    finished.sort(key=lambda h: -h.score)
    return finished[:beam_size]


@dataclass
class BalanceResult:
    tokens: tuple
    unbalanced: bool = False  # had a close paren with no matching open


def balance_parentheses(tokens):
    """Append the right parens needed to close unclosed opens. Input with a
    prefix where closes outnumber opens is returned unchanged and flagged."""
    tokens = tuple(tokens)
    depth = 0
    for tok in tokens:
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth -= 1
            if depth < 0:
                return BalanceResult(tokens, unbalanced=True)
    return BalanceResult(tokens + (")",) * depth)


@dataclass
class EvalRecord:
    example_id: int
    correct: bool
    gold: tuple
    predicted: tuple
    score: float


@dataclass
class EvalResult:
    accuracy: float
    records: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("example_id,correct,gold,predicted,score\n")
            for r in self.records:
                f.write("%d,%d,%s,%s,%.6f\n" % (
                    r.example_id, int(r.correct),
                    " ".join(r.gold), " ".join(r.predicted), r.score))
            f.write("# accuracy %.6f\n" % self.accuracy)


def _judge(mode, hyps, example, executor):
    """(correct, predicted, score) for one example's beam under one mode."""
    correct = False
    predicted = ()
    score = float("-inf")
    if mode == "exact":
        if hyps:
            predicted = balance_parentheses(hyps[0].tokens).tokens
            score = hyps[0].score
            correct = predicted == example.logical_form
    else:
        try:
            gold_denotation = executor(example.logical_form)
        except ExecutorError:
            gold_denotation = None
        for hyp in hyps:
            cand = balance_parentheses(hyp.tokens).tokens
            try:
                denotation = executor(cand)
            except ExecutorError:
                continue
            predicted = cand
            score = hyp.score
            correct = gold_denotation is not None and denotation == gold_denotation
            break
    return correct, predicted, score


def evaluate_modes(model, dataset, modes, executor=None, beam_size=5,
                   max_len=None):
    """Accuracy over a dataset for several modes sharing one beam search per
    example. Returns mode -> EvalResult.

    exact mode: the top beam hypothesis, after parenthesis balancing, must
    match the gold logical form token for token. denotation mode: scan the
    beam top-down, skip candidates the executor rejects, and compare
    denotations. Any failure counts the example as incorrect.
    """
    for mode in modes:
        if mode not in ("exact", "denotation"):
            raise ValueError("unknown evaluation mode %r" % mode)
        if mode == "denotation" and executor is None:
            raise ValueError("denotation mode needs an executor")
    records = {mode: [] for mode in modes}
    correct_counts = dict.fromkeys(modes, 0)
    for idx, ex in enumerate(dataset):
        hyps = beam_search(model, ex.utterance, beam_size=beam_size, max_len=max_len)
        for mode in modes:
            correct, predicted, score = _judge(mode, hyps, ex, executor)
            if correct:
                correct_counts[mode] += 1
            records[mode].append(
                EvalRecord(idx, correct, ex.logical_form, predicted, score))
    n = max(len(dataset), 1)
    return {mode: EvalResult(accuracy=correct_counts[mode] / n,
                             records=records[mode])
            for mode in modes}


def evaluate(model, dataset, mode="exact", executor=None, beam_size=5, max_len=None):
    """Single-mode accuracy over a dataset; see evaluate_modes."""
    return evaluate_modes(model, dataset, (mode,), executor=executor,
                          beam_size=beam_size, max_len=max_len)[mode]
