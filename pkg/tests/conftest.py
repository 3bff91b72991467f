"""Shared fixtures: the grammar-induction figure examples and tiny models."""

import numpy as np
import pytest

from semparse.corpus import (DomainConfig, Example, Vocabulary,
                             load_domain_config)
from semparse.neural import Model, init_params

import os

GEO_CONFIG_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                               os.pardir, "configs", "geo.yaml")

# one "ACCEPTANCE <criterion>: PASS|FAIL" line per acceptance test, echoed in
# the terminal summary (in-test prints are swallowed by output capture)
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

# The two Geo examples from the grammar-induction figure, tokenized.
TEXAS_X = "what states border texas ?"
TEXAS_Y = ("answer ( NV , ( state ( V0 ) , next_to ( V0 , NV ) , "
           "const ( V0 , stateid ( texas ) ) ) )")
MOUNTAIN_X = "what is the highest mountain in ohio ?"
MOUNTAIN_Y = ("answer ( NV , highest ( V0 , ( mountain ( V0 ) , "
              "loc ( V0 , NV ) , const ( V0 , stateid ( ohio ) ) ) ) )")


def tok(s):
    return tuple(s.split())


def figure_examples():
    return [Example(tok(TEXAS_X), tok(TEXAS_Y)),
            Example(tok(MOUNTAIN_X), tok(MOUNTAIN_Y))]


@pytest.fixture(scope="session")
def geo_config():
    return load_domain_config(GEO_CONFIG_PATH)


@pytest.fixture
def figure_dataset():
    from semparse.corpus import build_dataset
    return build_dataset(figure_examples())


def tiny_model(rng, input_tokens, output_tokens, d=2, H=3, use_copy=True,
               config=None):
    """A small random model over explicit vocabularies."""
    iv = Vocabulary(input_tokens)
    ov = Vocabulary(output_tokens)
    params = init_params(len(iv), len(ov), d, H, rng)
    if config is None:
        config = DomainConfig()
    return Model(params, iv, ov, config=config, use_copy=use_copy)


def random_tiny_case(rng, d=2, H=3, max_m=3, max_n=3, max_vout=4):
    """Random model + example for gradient / marginalization checks: one
    output token shares a surface with an input word so copy and write
    genuinely overlap."""
    m = int(rng.integers(1, max_m + 1))
    n = int(rng.integers(1, max_n + 1))
    n_out = int(rng.integers(2, max_vout + 1))
    in_words = ["w%d" % i for i in range(max_m + 2)]
    out_words = ["o%d" % i for i in range(n_out)] + [in_words[1]]
    model = tiny_model(rng, in_words, out_words, d=d, H=H)
    utterance = tuple(in_words[int(rng.integers(len(in_words)))]
                      for _ in range(m))
    emittable = list(out_words)
    lf = tuple(emittable[int(rng.integers(len(emittable)))] for _ in range(n))
    return model, Example(utterance, lf)
