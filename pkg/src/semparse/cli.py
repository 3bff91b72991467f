"""Command-line surface for the full pipeline.

Subcommands: induce, sample, train, eval, and artificial {gen-world,
gen-data, experiment}. Every run writes a JSON manifest next to its outputs.
Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from functools import partial

from . import artificial, checkpoint, corpus, decoding, scfg, training
from .manifest import RunManifest
from .neural import Model, init_params
from .streams import substream


class ValidationError(Exception):
    pass


def _require_file(path, what):
    if not os.path.isfile(path):
        raise ValidationError("%s not found: %s" % (what, path))


def _manifest_path(out_path):
    return out_path + ".manifest.json"


def cmd_induce(args):
    _require_file(args.train, "training file")
    strategies = [s for s in args.strategies.split(",") if s]
    if not strategies:
        raise ValidationError("--strategies must list at least one strategy")
    config = None
    if args.domain_config:
        _require_file(args.domain_config, "domain config")
        config = corpus.load_domain_config(args.domain_config)
    needs_config = any(s.startswith("abs-") for s in strategies)
    if needs_config and config is None:
        raise ValidationError("abstraction strategies need --domain-config")
    for name in strategies:  # validate names before touching outputs
        scfg.strategy_from_name(name, config)

    manifest = RunManifest("induce", vars(args))
    manifest.add_input(args.train)
    if args.domain_config:
        manifest.add_input(args.domain_config)
    dataset = corpus.load_dataset(args.train)
    grammar = scfg.init_grammar(dataset)
    print("initial grammar: %d rules" % len(grammar.rules))
    # the command line lists strategies outermost-first; apply right-to-left
    for name in reversed(strategies):
        grammar = scfg.strategy_from_name(name, config)(grammar)
        print("after %s: %d rules" % (name, len(grammar.rules)))
    grammar.check()
    scfg.save_grammar(grammar, args.out)
    manifest.add_output(args.out)
    manifest.write(_manifest_path(args.out))


def cmd_sample(args):
    _require_file(args.grammar, "grammar file")
    manifest = RunManifest("sample", vars(args), seed=args.seed)
    manifest.add_input(args.grammar)
    grammar = scfg.load_grammar(args.grammar)
    grammar.check()
    rng = substream(args.seed, "grammar-sampling")
    with open(args.out, "w", encoding="utf-8") as f:
        for _ in range(args.count):
            f.write(scfg.sample_example(grammar, rng).to_line() + "\n")
    manifest.add_output(args.out)
    manifest.write(_manifest_path(args.out))


def cmd_train(args):
    _require_file(args.train, "training file")
    if args.grammar:
        _require_file(args.grammar, "grammar file")
    config = corpus.DomainConfig()
    if args.domain_config:
        _require_file(args.domain_config, "domain config")
        config = corpus.load_domain_config(args.domain_config)

    manifest = RunManifest("train", vars(args), seed=args.seed)
    manifest.add_input(args.train)
    dataset = corpus.replace_singletons(corpus.load_dataset(args.train))
    grammar = None
    if args.grammar:
        manifest.add_input(args.grammar)
        grammar = scfg.load_grammar(args.grammar)
    params = init_params(len(dataset.input_vocab), len(dataset.output_vocab),
                         args.embed, args.hidden, substream(args.seed, "init"))
    model = Model(params, dataset.input_vocab, dataset.output_vocab,
                  config=config, use_copy=not args.no_copy)
    tcfg = training.TrainConfig(
        epochs=args.epochs, initial_lr=args.lr, rng_seed=args.seed,
        recombinant_per_epoch=args.recombinant_per_epoch,
        grad_clip=None if args.grad_clip <= 0 else args.grad_clip)

    def on_epoch(row, model):
        print("epoch %d lr %.4g mean_loglik %.4f (%.1fs)"
              % (row.epoch, row.lr, row.mean_train_loglik, row.seconds))
        if args.checkpoint_every_epoch:
            checkpoint.save_checkpoint(model, args.out_checkpoint)

    metrics = training.train(dataset, grammar, model, tcfg, on_epoch=on_epoch)
    checkpoint.save_checkpoint(model, args.out_checkpoint)
    training.write_metrics_csv(metrics, args.metrics)
    manifest.add_output(args.out_checkpoint)
    manifest.add_output(args.metrics)
    manifest.write(_manifest_path(args.out_checkpoint))


def cmd_eval(args):
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.test, "test file")
    executor = None
    if args.mode == "denotation":
        if not args.world:
            raise ValidationError("denotation mode needs --world")
        _require_file(args.world, "world file")
        executor = partial(artificial.execute, artificial.load_world(args.world))

    manifest = RunManifest("eval", vars(args))
    manifest.add_input(args.checkpoint)
    manifest.add_input(args.test)
    model = checkpoint.load_checkpoint(args.checkpoint)
    test = corpus.load_dataset(args.test, model.input_vocab, model.output_vocab)
    result = decoding.evaluate(model, test, mode=args.mode, executor=executor,
                               beam_size=args.beam)
    result.write_csv(args.report)
    print("accuracy %.4f over %d examples" % (result.accuracy, len(result.records)))
    manifest.add_output(args.report)
    manifest.write(_manifest_path(args.report))


def cmd_artificial_gen_world(args):
    manifest = RunManifest("artificial gen-world", vars(args), seed=args.seed)
    world = artificial.generate_world(args.entities, args.relations,
                                      substream(args.seed, "world-gen"))
    artificial.save_world(world, args.out)
    manifest.add_output(args.out)
    manifest.write(_manifest_path(args.out))


def cmd_artificial_gen_data(args):
    _require_file(args.world, "world file")
    manifest = RunManifest("artificial gen-data", vars(args), seed=args.seed)
    manifest.add_input(args.world)
    world = artificial.load_world(args.world)
    examples = artificial.generate_examples(
        world, args.depth, args.count, substream(args.seed, "artificial-data"),
        underscore_entities=not args.bare_entities)
    with open(args.out, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(ex.to_line() + "\n")
    manifest.add_output(args.out)
    manifest.write(_manifest_path(args.out))


def cmd_artificial_experiment(args):
    manifest = RunManifest("artificial experiment", vars(args), seed=args.seed)
    cfg = artificial.ExperimentConfig(
        num_entities=args.entities,
        num_relations=args.relations,
        world_seed=args.seed,
        seed_size=args.seed_size,
        test_size=args.test_size,
        addition_counts=tuple(int(c) for c in args.addition_counts.split(",")),
        seeds=tuple(range(args.num_seeds)),
        epochs=args.epochs,
        hidden_dim=args.hidden,
        embed_dim=args.embed,
        beam_size=args.beam,
        use_copy=not args.no_copy,
        workers=args.workers,
    )

    def progress(row):
        print("%s added=%d seed=%d exact=%.3f denotation=%.3f"
              % (row.condition, row.added, row.seed, row.exact_acc, row.denotation_acc))

    rows = artificial.run_longer_examples_experiment(cfg, progress=progress)
    artificial.write_experiment_csv(rows, args.out)
    agg_path = os.path.splitext(args.out)[0] + ".means.csv"
    artificial.write_aggregate_csv(rows, agg_path)
    manifest.add_output(args.out)
    manifest.add_output(agg_path)
    manifest.write(_manifest_path(args.out))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="semparse",
        description="Grammar-based data recombination for neural semantic parsing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("induce", help="induce a grammar from a dataset")
    p.add_argument("--train", required=True)
    p.add_argument("--domain-config")
    p.add_argument("--strategies", required=True,
                   help="comma list, outermost first: abs-whole-phrases,"
                        "abs-entities,concat:2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_induce)

    p = sub.add_parser("sample", help="sample pairs from a grammar")
    p.add_argument("--grammar", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train the seq2seq model")
    p.add_argument("--train", required=True)
    p.add_argument("--grammar", help="optional grammar for recombinant sampling")
    p.add_argument("--domain-config")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=200)
    p.add_argument("--embed", type=int, default=100)
    p.add_argument("--recombinant-per-epoch", type=int, default=None,
                   help="defaults to the training set size")
    p.add_argument("--grad-clip", type=float, default=5.0,
                   help="global gradient norm cap; <= 0 disables")
    p.add_argument("--no-copy", action="store_true",
                   help="disable copy actions entirely")
    p.add_argument("--checkpoint-every-epoch", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--mode", choices=["exact", "denotation"], default="exact")
    p.add_argument("--world", help="world file for denotation mode")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("artificial", help="artificial-world tooling")
    asub = p.add_subparsers(dest="subcommand", required=True)

    q = asub.add_parser("gen-world")
    q.add_argument("--entities", type=int, default=20)
    q.add_argument("--relations", type=int, default=40)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_artificial_gen_world)

    q = asub.add_parser("gen-data")
    q.add_argument("--world", required=True)
    q.add_argument("--depth", type=int, default=2)
    q.add_argument("--count", type=int, required=True)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--bare-entities", action="store_true",
                   help="emit entity tokens without the leading underscore "
                        "(makes entities copyable)")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_artificial_gen_data)

    q = asub.add_parser("experiment")
    q.add_argument("--entities", type=int, default=20)
    q.add_argument("--relations", type=int, default=40)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--seed-size", type=int, default=100)
    q.add_argument("--test-size", type=int, default=500)
    q.add_argument("--addition-counts", default="300")
    q.add_argument("--num-seeds", type=int, default=5)
    q.add_argument("--epochs", type=int, default=30)
    q.add_argument("--hidden", type=int, default=200)
    q.add_argument("--embed", type=int, default=100)
    q.add_argument("--beam", type=int, default=5)
    q.add_argument("--no-copy", action="store_true")
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_artificial_experiment)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ValidationError, corpus.CorpusError, scfg.GrammarError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print("runtime error: %s" % exc, file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
