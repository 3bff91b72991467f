"""An artificial domain: entities, binary relations, and depth-n queries.

Utterances look like "rel:12 of rel:17 of ent:14" and logical forms like
"( _rel:12 ( _rel:17 _ent:14 ) )". The executor maps a logical form to the
set of entities it denotes, enabling denotation-based evaluation, and the
domain plugs into the grammar induction strategies through a generated
DomainConfig.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .corpus import (DomainConfig, EntityRule, Example, PhraseTypeRule,
                     TypeRule)
from .decoding import ExecutorError
from .streams import substream

ENTITY_TYPE = "EntId"
ENTITY_SET_TYPE = "Ent"


@dataclass(frozen=True)
class World:
    entities: tuple
    relations: dict = field(default_factory=dict)  # name -> frozenset of (src, dst)

    def image(self, relation, sources):
        pairs = self.relations[relation]
        return frozenset(dst for src, dst in pairs if src in sources)

    def to_json(self):
        return json.dumps({
            "entities": list(self.entities),
            "relations": {name: sorted(map(list, pairs))
                          for name, pairs in sorted(self.relations.items())},
        }, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        return cls(
            entities=tuple(raw["entities"]),
            relations={name: frozenset(map(tuple, pairs))
                       for name, pairs in raw["relations"].items()},
        )


def save_world(world, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(world.to_json() + "\n")


def load_world(path):
    with open(path, encoding="utf-8") as f:
        return World.from_json(f.read())


def generate_world(num_entities, num_relations, rng, extra_edge_prob=0.1):
    """Random world in which every entity has at least one outgoing edge per
    relation, so compositions never denote the empty set."""
    if num_entities < 1 or num_relations < 1:
        raise ValueError("need at least one entity and one relation")
    entities = tuple("ent:%02d" % i for i in range(num_entities))
    relations = {}
    for r in range(num_relations):
        pairs = set()
        for src in entities:
            pairs.add((src, entities[int(rng.integers(num_entities))]))
            for dst in entities:
                if rng.random() < extra_edge_prob / num_entities:
                    pairs.add((src, dst))
        relations["rel:%02d" % r] = frozenset(pairs)
    return World(entities, relations)


def make_example(relations, entity, underscore_entities=True):
    """Build the depth-n example applying `relations` (outermost first) to
    `entity`."""
    utterance = []
    for rel in relations:
        utterance.extend([rel, "of"])
    utterance.append(entity)
    ent_tok = "_" + entity if underscore_entities else entity
    lf = [ent_tok]
    for rel in reversed(relations):
        lf = ["(", "_" + rel] + lf + [")"]
    return Example(tuple(utterance), tuple(lf))


def example_depth(example):
    """Number of relation applications in a generated-format example."""
    return sum(1 for t in example.utterance if t.startswith("rel:"))


def generate_examples(world, depth, count, rng, underscore_entities=True):
    """`count` distinct depth-`depth` examples, sampled uniformly without
    replacement from all (relation sequence, entity) combinations."""
    if depth < 1 or count < 1:
        raise ValueError("depth and count must be >= 1")
    rels = sorted(world.relations)
    n_rel = len(rels)
    n_ent = len(world.entities)
    total = n_rel ** depth * n_ent
    if count > total:
        raise ValueError("requested %d examples but only %d distinct depth-%d "
                         "combinations exist" % (count, total, depth))
    chosen = []
    seen = set()
    while len(chosen) < count:
        idx = int(rng.integers(total))
        if idx in seen:
            continue
        seen.add(idx)
        chosen.append(idx)
    examples = []
    for idx in chosen:
        ent = world.entities[idx % n_ent]
        idx //= n_ent
        seq = []
        for _ in range(depth):
            seq.append(rels[idx % n_rel])
            idx //= n_rel
        examples.append(make_example(seq, ent, underscore_entities))
    return examples


def _strip(token):
    return token[1:] if token.startswith("_") else token


def execute(world, logical_form):
    """Denotation of a logical form: the innermost entity's singleton set
    mapped through each relation's image, inside out."""
    tokens = list(logical_form)
    pos = 0

    def parse():
        nonlocal pos
        if pos >= len(tokens):
            raise ExecutorError("unexpected end of logical form")
        tok = tokens[pos]
        if tok == "(":
            pos += 1
            if pos >= len(tokens):
                raise ExecutorError("dangling open paren")
            rel = _strip(tokens[pos])
            if rel not in world.relations:
                raise ExecutorError("unknown relation %r" % tokens[pos])
            pos += 1
            inner = parse()
            if pos >= len(tokens) or tokens[pos] != ")":
                raise ExecutorError("missing close paren")
            pos += 1
            return world.image(rel, inner)
        name = _strip(tok)
        if name not in world.entities:
            raise ExecutorError("unknown symbol %r" % tok)
        pos += 1
        return frozenset([name])

    result = parse()
    if pos != len(tokens):
        raise ExecutorError("trailing tokens after logical form")
    return result


def world_domain_config(world, underscore_entities=True):
    """DomainConfig wiring the artificial entities and whole-query phrases
    into the grammar induction strategies."""
    prefix = "_" if underscore_entities else ""
    entities = tuple(
        EntityRule(utterance=(ent,), lf=prefix + ent, type=ENTITY_TYPE)
        for ent in world.entities)
    types = {ENTITY_TYPE: TypeRule(name=ENTITY_TYPE, wrapper=("ENTITY",),
                                   set_type=ENTITY_SET_TYPE, set_span=("ENTITY",))}
    phrase_types = (PhraseTypeRule(set_type=ENTITY_SET_TYPE, inner_prefix=("(",)),)
    return DomainConfig(entities=entities, types=types, phrase_types=phrase_types,
                        copy_disallow_prefixes=("_",))


def seed_datasets(world, seed_size, test_size, pool_size, rng, depth=2,
                  underscore_entities=True):
    """Disjoint seed / test / addition-pool splits of distinct depth-2
    examples, plus a separate depth-4 pool for the longer conditions."""
    shallow = generate_examples(world, depth, seed_size + test_size + pool_size,
                                rng, underscore_entities)
    seed = shallow[:seed_size]
    test = shallow[seed_size:seed_size + test_size]
    pool = shallow[seed_size + test_size:]
    deep = generate_examples(world, depth * 2, pool_size, rng, underscore_entities)
    return seed, test, pool, deep


CONDITIONS = ("same-indep", "longer-indep", "same-recomb", "longer-recomb")
BASELINE = "baseline"


@dataclass
class ExperimentConfig:
    num_entities: int = 20
    num_relations: int = 40
    world_seed: int = 0
    seed_size: int = 100
    test_size: int = 500
    addition_counts: tuple = (300,)
    seeds: tuple = (0, 1, 2, 3, 4)
    depth: int = 2
    epochs: int = 30
    initial_lr: float = 0.1
    hidden_dim: int = 200
    embed_dim: int = 100
    grad_clip: float = 5.0
    beam_size: int = 5
    # bare entities: copying is enabled for entities (relations stay
    # non-copyable through the underscore prefix)
    underscore_entities: bool = False
    use_copy: bool = True
    workers: int = 1


@dataclass
class ExperimentRow:
    condition: str
    added: int
    seed: int
    exact_acc: float
    denotation_acc: float


def write_experiment_csv(rows, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("condition,added,seed,exact_acc,denotation_acc\n")
        for r in rows:
            f.write("%s,%d,%d,%.6f,%.6f\n"
                    % (r.condition, r.added, r.seed, r.exact_acc, r.denotation_acc))


def aggregate_rows(rows):
    """Mean accuracies over seeds, keyed by (condition, added)."""
    groups = {}
    for r in rows:
        groups.setdefault((r.condition, r.added), []).append(r)
    return {
        key: (sum(r.exact_acc for r in rs) / len(rs),
              sum(r.denotation_acc for r in rs) / len(rs))
        for key, rs in groups.items()
    }


def write_aggregate_csv(rows, path):
    agg = aggregate_rows(rows)
    with open(path, "w", encoding="utf-8") as f:
        f.write("condition,added,mean_exact_acc,mean_denotation_acc\n")
        for (condition, added) in sorted(agg):
            exact, denot = agg[(condition, added)]
            f.write("%s,%d,%.6f,%.6f\n" % (condition, added, exact, denot))


def sample_recombinant(grammar, count, rng, depth_filter=None, max_tries_factor=500):
    """Sample `count` examples from the grammar, optionally keeping only a
    given depth (the longer condition wants depth-4 samples only)."""
    from . import scfg

    out = []
    tries = 0
    limit = max_tries_factor * count
    while len(out) < count:
        tries += 1
        if tries > limit:
            raise RuntimeError("could not sample %d depth-%s examples from the "
                               "grammar" % (count, depth_filter))
        ex = scfg.sample_example(grammar, rng)
        if depth_filter is None or example_depth(ex) == depth_filter:
            out.append(ex)
    return out


def _induced_grammars(seed_examples, config):
    from . import scfg
    from .corpus import build_dataset

    base = scfg.init_grammar(build_dataset(seed_examples))
    same = scfg.abs_entities(base, config)
    # longer: AbsWholePhrases first, then AbsEntities
    longer = scfg.abs_entities(scfg.abs_whole_phrases(base, config), config)
    return same, longer


def _run_arm(args):
    (cfg, world, condition, added, seed, seed_examples, additions, test_examples) = args
    from functools import partial

    from .corpus import build_dataset
    from .decoding import evaluate_modes
    from .neural import Model, init_params
    from .training import TrainConfig, train

    config = world_domain_config(world, cfg.underscore_entities)
    train_ds = build_dataset(tuple(seed_examples) + tuple(additions))
    init_rng = substream(seed, "init")
    params = init_params(len(train_ds.input_vocab), len(train_ds.output_vocab),
                         cfg.embed_dim, cfg.hidden_dim, init_rng)
    model = Model(params, train_ds.input_vocab, train_ds.output_vocab,
                  config=config, use_copy=cfg.use_copy)
    tcfg = TrainConfig(epochs=cfg.epochs, initial_lr=cfg.initial_lr,
                       rng_seed=seed, grad_clip=cfg.grad_clip)
    train(train_ds, None, model, tcfg)
    test_ds = build_dataset(test_examples, train_ds.input_vocab, train_ds.output_vocab)
    executor = partial(execute, world)
    results = evaluate_modes(model, test_ds, ("exact", "denotation"),
                             executor=executor, beam_size=cfg.beam_size)
    return ExperimentRow(condition, added, seed,
                         results["exact"].accuracy,
                         results["denotation"].accuracy)


def run_longer_examples_experiment(cfg, progress=None):
    """The four-condition experiment: train on the depth-2 seed set plus
    added examples (independent or recombinant, same-length or longer) and
    evaluate on held-out depth-2 examples. Recombinant examples are sampled
    once per run and fixed across epochs. Returns one row per
    (condition, count, seed), including a shared 0-added baseline."""
    world = generate_world(cfg.num_entities, cfg.num_relations,
                           substream(cfg.world_seed, "world-gen"))
    config = world_domain_config(world, cfg.underscore_entities)
    max_count = max(cfg.addition_counts) if cfg.addition_counts else 0
    jobs = []
    for seed in cfg.seeds:
        data_rng = substream(seed, "artificial-data")
        seed_examples, test_examples, shallow_pool, deep_pool = seed_datasets(
            world, cfg.seed_size, cfg.test_size, max(max_count, 1), data_rng,
            depth=cfg.depth, underscore_entities=cfg.underscore_entities)
        same_grammar, longer_grammar = _induced_grammars(seed_examples, config)
        recomb_rng = substream(seed, "recombinant-sampling")
        same_recomb = sample_recombinant(same_grammar, max(max_count, 1), recomb_rng)
        longer_recomb = sample_recombinant(longer_grammar, max(max_count, 1),
                                           recomb_rng, depth_filter=cfg.depth * 2)
        pools = {
            "same-indep": shallow_pool,
            "longer-indep": deep_pool,
            "same-recomb": same_recomb,
            "longer-recomb": longer_recomb,
        }
        jobs.append((cfg, world, BASELINE, 0, seed, seed_examples, (),
                     test_examples))
        for added in cfg.addition_counts:
            for condition in CONDITIONS:
                jobs.append((cfg, world, condition, added, seed, seed_examples,
                             pools[condition][:added], test_examples))

    rows = []
    if cfg.workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for row in pool.map(_run_arm, jobs):
                rows.append(row)
                if progress is not None:
                    progress(row)
    else:
        for job in jobs:
            row = _run_arm(job)
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows

