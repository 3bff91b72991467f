"""Synchronous context-free grammars: induction strategies and sampling.

A grammar rule rewrites a category to an aligned pair of symbol sequences
(utterance side, logical-form side). Induction starts from one Root rule per
training pair; strategies rewrite an input grammar into a richer one and can
be composed. Sampling picks rules uniformly at random, expanding aligned
nonterminals with the same choice on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import ENTITY_SLOT, EOS, Example

ROOT = "Root"
SENT = "Sent"


class GrammarError(Exception):
    pass


class UnproductiveCategoryError(GrammarError):
    def __init__(self, category):
        super().__init__("no rule has lhs %r" % category)
        self.category = category


class DepthLimitError(GrammarError):
    pass


@dataclass(frozen=True)
class Term:
    token: str


@dataclass(frozen=True)
class NonTerm:
    category: str
    slot: int


def _side_nonterms(side):
    return [s for s in side if isinstance(s, NonTerm)]


@dataclass(frozen=True)
class ScfgRule:
    lhs: str
    alpha: tuple
    beta: tuple

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(self.alpha))
        object.__setattr__(self, "beta", tuple(self.beta))
        for side in (self.alpha, self.beta):
            if not side:
                raise GrammarError("empty rule side in %r -> ..." % self.lhs)
            nts = _side_nonterms(side)
            slots = [nt.slot for nt in nts]
            if len(slots) != len(set(slots)):
                raise GrammarError("duplicate alignment slot in rule %r" % (self,))
        a = {(nt.category, nt.slot) for nt in _side_nonterms(self.alpha)}
        b = {(nt.category, nt.slot) for nt in _side_nonterms(self.beta)}
        if a != b:
            raise GrammarError("misaligned nonterminals in rule %r" % (self,))

    @property
    def is_terminal(self):
        return not _side_nonterms(self.alpha)


def terminal_rule(lhs, alpha_tokens, beta_tokens):
    return ScfgRule(lhs, tuple(Term(t) for t in alpha_tokens),
                    tuple(Term(t) for t in beta_tokens))


@dataclass(frozen=True)
class Grammar:
    rules: tuple
    root: str = ROOT

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))

    def rules_by_lhs(self):
        by = {}
        for rule in self.rules:
            by.setdefault(rule.lhs, []).append(rule)
        return by

    def categories_on_rhs(self):
        cats = set()
        for rule in self.rules:
            cats.update(nt.category for nt in _side_nonterms(rule.alpha))
        return cats

    def check(self):
        """Raise unless every RHS category is productive and derivations from
        the root have finite depth (no category cycle)."""
        by = self.rules_by_lhs()
        for cat in sorted(self.categories_on_rhs()):
            if cat not in by:
                raise UnproductiveCategoryError(cat)
        # cycle detection over the category reachability graph
        state = {}  # 0 = visiting, 1 = done

        def visit(cat, stack):
            if state.get(cat) == 1:
                return
            if state.get(cat) == 0:
                raise GrammarError("category cycle: %s" % " -> ".join(stack + [cat]))
            state[cat] = 0
            for rule in by.get(cat, ()):
                for nt in _side_nonterms(rule.alpha):
                    visit(nt.category, stack + [cat])
            state[cat] = 1

        visit(self.root, [])


def _dedup(rules):
    seen = set()
    out = []
    for rule in rules:
        if rule not in seen:
            seen.add(rule)
            out.append(rule)
    return out


def init_grammar(dataset):
    """One all-terminal Root rule per training example, in dataset order."""
    if not len(dataset):
        raise GrammarError("cannot induce a grammar from an empty dataset")
    rules = [terminal_rule(ROOT, ex.utterance, ex.logical_form) for ex in dataset]
    return Grammar(_dedup(rules))


def _fresh_slot(rule):
    slots = [nt.slot for nt in _side_nonterms(rule.alpha)]
    return max(slots, default=-1) + 1


def _find_terminal_spans(side, tokens):
    """Start indices where `tokens` occurs as a contiguous terminal run."""
    n = len(tokens)
    hits = []
    for i in range(len(side) - n + 1):
        window = side[i:i + n]
        if all(isinstance(s, Term) and s.token == t for s, t in zip(window, tokens)):
            hits.append(i)
    return hits


def _pattern_tokens(pattern, entity_lf):
    return tuple(entity_lf if t == ENTITY_SLOT else t for t in pattern)


def _replace_span(side, start, length, replacement):
    return side[:start] + (replacement,) + side[start + length:]


def _abstract_pairs(rule, entity, beta_pattern, category, whole_span=False):
    """All rules obtained by replacing one aligned (utterance, logical-form)
    occurrence pair of `entity` with a `category` nonterminal.

    The logical-form side must match `beta_pattern` (ENTITY standing for the
    entity token); by default only the ENTITY token is replaced, keeping the
    surrounding wrapper, while whole_span=True replaces the entire match.
    """
    a_hits = _find_terminal_spans(rule.alpha, entity.utterance)
    pattern = _pattern_tokens(beta_pattern, entity.lf)
    ent_off = beta_pattern.index(ENTITY_SLOT)
    b_start, b_len = (0, len(pattern)) if whole_span else (ent_off, 1)
    b_hits = _find_terminal_spans(rule.beta, pattern)
    out = []
    for ai in a_hits:
        for bi in b_hits:
            nt = NonTerm(category, _fresh_slot(rule))
            out.append(ScfgRule(
                rule.lhs,
                _replace_span(rule.alpha, ai, len(entity.utterance), nt),
                _replace_span(rule.beta, bi + b_start, b_len, nt),
            ))
    return out


def abs_entities(grammar, config):
    """Abstract entity mentions with their types.

    Each rule whose utterance side contains an entity that also occurs (inside
    its wrapper pattern) on the logical-form side yields an abstracted copy of
    the rule plus a type-to-entity rule. Original rules are retained.
    """
    out = list(grammar.rules)
    for rule in grammar.rules:
        for ent in config.entities:
            trule = config.types[ent.type]
            created = _abstract_pairs(rule, ent, trule.wrapper, ent.type)
            if created:
                out.extend(created)
                out.append(terminal_rule(ent.type, ent.utterance, (ent.lf,)))
    return Grammar(_dedup(out), grammar.root)


def _match_phrase_type(rule, pt):
    beta = rule.beta
    k, s = len(pt.prefix), len(pt.suffix)
    if len(beta) <= k + s:
        return None
    head = beta[:k]
    inner = beta[k:len(beta) - s] if s else beta[k:]
    tail = beta[len(beta) - s:] if s else ()
    if not all(isinstance(sym, Term) and sym.token == t for sym, t in zip(head, pt.prefix)):
        return None
    if s and not all(isinstance(sym, Term) and sym.token == t for sym, t in zip(tail, pt.suffix)):
        return None
    guard = inner[:len(pt.inner_prefix)]
    if len(guard) < len(pt.inner_prefix):
        return None
    if not all(isinstance(sym, Term) and sym.token == t for sym, t in zip(guard, pt.inner_prefix)):
        return None
    return inner


def _strip_question_identifiers(alpha, pt):
    for pre in sorted(pt.strip_prefixes, key=len, reverse=True):
        if len(alpha) > len(pre) and all(
                isinstance(s, Term) and s.token == t for s, t in zip(alpha, pre)):
            alpha = alpha[len(pre):]
            break
    for suf in sorted(pt.strip_suffixes, key=len, reverse=True):
        if len(alpha) > len(suf) and all(
                isinstance(s, Term) and s.token == t
                for s, t in zip(alpha[len(alpha) - len(suf):], suf)):
            alpha = alpha[:len(alpha) - len(suf)]
            break
    return alpha


def abs_whole_phrases(grammar, config):
    """Abstract entities with their set types and whole set-typed phrases.

    For each rule, emit up to two new rules: (a) the rule with one entity's
    set-typed span replaced by the set-type nonterminal, and (b) when the whole
    logical-form side is recognized as a typed set, a rule mapping that type to
    the inner expression paired with the question-identifier-stripped
    utterance. Original rules are retained.
    """
    out = list(grammar.rules)
    for rule in grammar.rules:
        for ent in config.entities:
            trule = config.types[ent.type]
            if trule.set_type and trule.set_span:
                out.extend(_abstract_pairs(rule, ent, trule.set_span,
                                           trule.set_type, whole_span=True))
        for pt in config.phrase_types:
            inner = _match_phrase_type(rule, pt)
            if inner is not None:
                out.append(ScfgRule(pt.set_type,
                                    _strip_question_identifiers(rule.alpha, pt),
                                    inner))
    return Grammar(_dedup(out), grammar.root)


def concat_k(grammar, k):
    """Root rewrites to k Sent's separated by </s> on both sides; every
    root-level rule of the input becomes a Sent rule; non-root rules carry
    through."""
    if k < 2:
        raise GrammarError("concat requires k >= 2, got %r" % k)
    sep = Term(EOS)
    seq = []
    for i in range(1, k + 1):
        if i > 1:
            seq.append(sep)
        seq.append(NonTerm(SENT, i))
    seq = tuple(seq)
    out = [ScfgRule(grammar.root, seq, seq)]
    for rule in grammar.rules:
        if rule.lhs == grammar.root:
            out.append(ScfgRule(SENT, rule.alpha, rule.beta))
        else:
            out.append(rule)
    return Grammar(_dedup(out), grammar.root)


def compose(f1, f2):
    """Strategy composition: (f1 . f2)(g) = f1(f2(g)), rule-level throughout."""
    return lambda grammar: f1(f2(grammar))


def identity(grammar):
    return grammar


def strategy_from_name(name, config=None):
    """Resolve a CLI strategy name: abs-entities, abs-whole-phrases, concat:k."""
    if name == "abs-entities":
        if config is None:
            raise GrammarError("abs-entities needs a domain config")
        return lambda g: abs_entities(g, config)
    if name == "abs-whole-phrases":
        if config is None:
            raise GrammarError("abs-whole-phrases needs a domain config")
        return lambda g: abs_whole_phrases(g, config)
    if name.startswith("concat:"):
        try:
            k = int(name.split(":", 1)[1])
        except ValueError:
            raise GrammarError("bad concat strategy %r" % name)
        return lambda g: concat_k(g, k)
    raise GrammarError("unknown strategy %r" % name)


def compose_named(names, config=None):
    """Compose strategies listed outermost-first, e.g. the list
    [abs-whole-phrases, abs-entities, concat:2] applies concat:2 first."""
    strategy = identity
    for name in names:
        strategy = compose(strategy_from_name(name, config), strategy)
    return strategy


def sample_example(grammar, rng, max_depth=20):
    """Draw one (utterance, logical form) pair top-down, choosing rules
    uniformly at random; aligned nonterminals share the same sub-derivation."""
    by = grammar.rules_by_lhs()

    def expand(category, depth):
        if depth > max_depth:
            raise DepthLimitError("derivation exceeded depth %d at %r" % (max_depth, category))
        rules = by.get(category)
        if not rules:
            raise UnproductiveCategoryError(category)
        rule = rules[int(rng.integers(len(rules)))]
        subs = {}
        for nt in _side_nonterms(rule.alpha):
            subs[nt.slot] = expand(nt.category, depth + 1)

        def flatten(side, which):
            toks = []
            for sym in side:
                if isinstance(sym, Term):
                    toks.append(sym.token)
                else:
                    toks.extend(subs[sym.slot][which])
            return tuple(toks)

        return flatten(rule.alpha, 0), flatten(rule.beta, 1)

    x, y = expand(grammar.root, 1)
    return Example(x, y)


def enumerate_derivations(grammar, max_depth=20):
    """All (Example, probability) pairs derivable under uniform rule choice.

    Exponential in grammar size; intended as a test oracle on small grammars.
    Probabilities of distinct derivations of the same pair are summed.
    """
    by = grammar.rules_by_lhs()

    def expand(category, depth):
        if depth > max_depth:
            raise DepthLimitError("enumeration exceeded depth %d" % max_depth)
        rules = by.get(category)
        if not rules:
            raise UnproductiveCategoryError(category)
        results = []
        for rule in rules:
            nts = {nt.slot: nt.category for nt in _side_nonterms(rule.alpha)}
            sub_results = {slot: expand(cat, depth + 1) for slot, cat in nts.items()}
            combos = [({}, 1.0 / len(rules))]
            for slot in sorted(nts):
                combos = [({**ch, slot: pair}, p * q)
                          for ch, p in combos
                          for pair, q in sub_results[slot]]
            for choice, p in combos:
                def flatten(side, which):
                    toks = []
                    for sym in side:
                        if isinstance(sym, Term):
                            toks.append(sym.token)
                        else:
                            toks.extend(choice[sym.slot][which])
                    return tuple(toks)
                results.append(((flatten(rule.alpha, 0), flatten(rule.beta, 1)), p))
        return results

    merged = {}
    for pair, p in expand(grammar.root, 1):
        merged[pair] = merged.get(pair, 0.0) + p
    return [(Example(x, y), p) for (x, y), p in merged.items()]


def serialize_grammar(grammar):
    """Text form, one rule per line: `LHS -> alpha ||| beta`, nonterminals
    written @Category:slot. Round-trips exactly."""
    def fmt(sym):
        if isinstance(sym, NonTerm):
            return "@%s:%d" % (sym.category, sym.slot)
        if sym.token.startswith("@") or sym.token == "|||" or sym.token == "->":
            raise GrammarError("terminal %r is not serializable" % sym.token)
        return sym.token

    lines = ["# scfg v1", "# root %s" % grammar.root]
    for rule in grammar.rules:
        lines.append("%s -> %s ||| %s" % (
            rule.lhs,
            " ".join(fmt(s) for s in rule.alpha),
            " ".join(fmt(s) for s in rule.beta),
        ))
    return "\n".join(lines) + "\n"


def parse_grammar(text):
    root = ROOT
    rules = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("# root "):
                root = line[len("# root "):].strip()
            continue
        try:
            lhs, rest = line.split(" -> ", 1)
            alpha_s, beta_s = rest.split(" ||| ", 1)
        except ValueError:
            raise GrammarError("line %d: malformed rule %r" % (lineno, line))

        def parse_side(s):
            syms = []
            for tok in s.split():
                if tok.startswith("@") and ":" in tok:
                    cat, _, slot = tok[1:].rpartition(":")
                    syms.append(NonTerm(cat, int(slot)))
                else:
                    syms.append(Term(tok))
            return tuple(syms)

        rules.append(ScfgRule(lhs, parse_side(alpha_s), parse_side(beta_s)))
    return Grammar(tuple(rules), root)


def save_grammar(grammar, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_grammar(grammar))


def load_grammar(path):
    with open(path, encoding="utf-8") as f:
        return parse_grammar(f.read())
