"""Datasets of tokenized utterance / logical-form pairs.

File format: UTF-8, one example per line, utterance and logical form
separated by a single tab, tokens separated by single spaces.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field

import yaml

UNK = "<unk>"
EOS = "</s>"
RESERVED = (UNK, EOS)


class CorpusError(Exception):
    pass


class ParseError(CorpusError):
    def __init__(self, path, lineno, message):
        super().__init__("%s:%d: %s" % (path, lineno, message))
        self.path = path
        self.lineno = lineno


class ConfigError(CorpusError):
    pass


def _check_tokens(tokens):
    if not tokens:
        raise ValueError("empty token sequence")
    for tok in tokens:
        if not tok or any(ch.isspace() for ch in tok):
            raise ValueError("bad token %r: tokens must be nonempty and whitespace-free" % tok)


@dataclass(frozen=True)
class Example:
    """One (x, y) pair: a tokenized utterance and its logical form."""

    utterance: tuple
    logical_form: tuple

    def __post_init__(self):
        object.__setattr__(self, "utterance", tuple(self.utterance))
        object.__setattr__(self, "logical_form", tuple(self.logical_form))
        _check_tokens(self.utterance)
        _check_tokens(self.logical_form)

    def to_line(self):
        return " ".join(self.utterance) + "\t" + " ".join(self.logical_form)


class Vocabulary:
    """Bijection between tokens and dense ids; always contains <unk> and </s>."""

    def __init__(self, tokens):
        self.tokens = []
        self.index = {}
        for tok in list(RESERVED) + list(tokens):
            if tok not in self.index:
                self.index[tok] = len(self.tokens)
                self.tokens.append(tok)
        self.unk_id = self.index[UNK]
        self.eos_id = self.index[EOS]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id(self, token):
        """Dense id of `token`, falling back to the <unk> id."""
        return self.index.get(token, self.unk_id)

    def get(self, token):
        """Dense id of `token`, or None if absent (no <unk> fallback)."""
        return self.index.get(token)

    def token(self, idx):
        return self.tokens[idx]


@dataclass(frozen=True)
class Dataset:
    examples: tuple
    input_vocab: Vocabulary
    output_vocab: Vocabulary

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


def build_dataset(examples, input_vocab=None, output_vocab=None):
    examples = tuple(examples)
    if input_vocab is None:
        input_vocab = Vocabulary(t for ex in examples for t in ex.utterance)
    if output_vocab is None:
        output_vocab = Vocabulary(t for ex in examples for t in ex.logical_form)
    return Dataset(examples, input_vocab, output_vocab)


def load_dataset(path, input_vocab=None, output_vocab=None):
    """Load a tab-separated dataset file; vocabularies built from its tokens
    unless supplied (supply the training vocabularies when loading test data)."""
    examples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ParseError(path, lineno, "expected utterance<TAB>logical_form")
            utt, _, lf = line.partition("\t")
            if not utt.strip() or not lf.strip():
                raise ParseError(path, lineno, "empty utterance or logical form")
            examples.append(Example(tuple(utt.split()), tuple(lf.split())))
    if not examples:
        raise ParseError(path, 0, "empty dataset file")
    return build_dataset(examples, input_vocab, output_vocab)


def save_dataset(dataset, path):
    with open(path, "w", encoding="utf-8") as f:
        for ex in dataset.examples:
            f.write(ex.to_line() + "\n")


def token_frequencies(examples):
    counts = collections.Counter()
    for ex in examples:
        counts.update(ex.utterance)
    return counts


def replace_singletons(dataset):
    """Map input tokens that occur exactly once in the corpus to <unk>.

    Implemented by dropping singletons from the input vocabulary, so id
    lookups fall back to <unk> while the examples keep their surface forms
    (needed for copying and for byte-exact serialization). Output tokens are
    never replaced. Idempotent.
    """
    counts = token_frequencies(dataset.examples)
    kept = [t for t in dataset.input_vocab.tokens
            if t in RESERVED or counts.get(t, 0) >= 2]
    return Dataset(dataset.examples, Vocabulary(kept), dataset.output_vocab)


@dataclass(frozen=True)
class EntityRule:
    """An entity: its utterance phrase, logical-form token, and type category."""

    utterance: tuple
    lf: str
    type: str


@dataclass(frozen=True)
class TypeRule:
    """How entities of one type appear in logical forms.

    `wrapper` is the token pattern surrounding an entity mention (ENTITY marks
    the entity token); `set_span` is the token pattern of the whole set-typed
    expression built from the entity, replaced wholesale when abstracting
    phrases; `set_type` is the category of that set.
    """

    name: str
    wrapper: tuple = ("ENTITY",)
    set_type: str = None
    set_span: tuple = None


@dataclass(frozen=True)
class PhraseTypeRule:
    """Recognizes logical forms that evaluate to a typed set.

    A form matches when it equals prefix + inner + suffix and `inner` starts
    with `inner_prefix`; the created rule maps `set_type` to the inner
    expression, with question identifiers stripped from the utterance.
    """

    set_type: str
    prefix: tuple = ()
    suffix: tuple = ()
    inner_prefix: tuple = ()
    strip_prefixes: tuple = ()
    strip_suffixes: tuple = ()


ENTITY_SLOT = "ENTITY"
RESERVED_CATEGORIES = ("Root", "Sent")


@dataclass(frozen=True)
class DomainConfig:
    """Declarative domain knowledge: entity typing, phrase typing, copyability."""

    entities: tuple = ()
    types: dict = field(default_factory=dict)
    phrase_types: tuple = ()
    copy_disallow_prefixes: tuple = ("_",)

    def __post_init__(self):
        for ent in self.entities:
            if ent.type not in self.types:
                raise ConfigError("entity %r has undeclared type %r" % (ent.lf, ent.type))
        categories = set(self.types)
        categories.update(t.set_type for t in self.types.values() if t.set_type)
        categories.update(p.set_type for p in self.phrase_types)
        for cat in categories:
            if cat in RESERVED_CATEGORIES:
                raise ConfigError("type name %r collides with a reserved category" % cat)

    def copyable(self, token):
        """Whether an output token may be produced by copying an input word."""
        return not any(token.startswith(p) for p in self.copy_disallow_prefixes)


def _phrase(value):
    if isinstance(value, str):
        return tuple(value.split())
    return tuple(value)


def load_domain_config(path):
    with open(path, encoding="utf-8") as f:
        raw = yaml.safe_load(f)
    return domain_config_from_dict(raw, source=path)


def domain_config_from_dict(raw, source="<config>"):
    if not isinstance(raw, dict):
        raise ConfigError("%s: expected a mapping at top level" % source)
    version = raw.get("version")
    if version != 1:
        raise ConfigError("%s: unsupported config version %r" % (source, version))
    types = {}
    for name, spec in (raw.get("types") or {}).items():
        spec = spec or {}
        types[name] = TypeRule(
            name=name,
            wrapper=_phrase(spec.get("wrapper", [ENTITY_SLOT])),
            set_type=spec.get("set_type"),
            set_span=_phrase(spec["set_span"]) if spec.get("set_span") else None,
        )
    entities = []
    for spec in raw.get("entities") or []:
        utt = _phrase(spec["utterance"])
        lf = spec.get("lf")
        if lf is None:
            if len(utt) != 1:
                raise ConfigError("%s: multi-word entity %r needs an explicit lf token"
                                  % (source, spec["utterance"]))
            lf = utt[0]
        entities.append(EntityRule(utterance=utt, lf=lf, type=spec["type"]))
    phrase_types = []
    for spec in raw.get("phrase_types") or []:
        phrase_types.append(PhraseTypeRule(
            set_type=spec["set_type"],
            prefix=_phrase(spec.get("prefix", [])),
            suffix=_phrase(spec.get("suffix", [])),
            inner_prefix=_phrase(spec.get("inner_prefix", [])),
            strip_prefixes=tuple(_phrase(p) for p in spec.get("strip_prefixes", [])),
            strip_suffixes=tuple(_phrase(p) for p in spec.get("strip_suffixes", [])),
        ))
    copy = raw.get("copy") or {}
    return DomainConfig(
        entities=tuple(entities),
        types=types,
        phrase_types=tuple(phrase_types),
        copy_disallow_prefixes=tuple(copy.get("disallow_prefixes", ["_"])),
    )
