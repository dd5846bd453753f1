"""Command-line entry point: ``copyne {gen-data,train,decode,eval,gamma-sweep}``."""

from __future__ import annotations

import argparse
import logging
import shlex
import sys
from dataclasses import replace
from pathlib import Path

from . import network as net
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .corpus import ParseError, gen_corpus, load_dictionary, load_manifest, read_lexicon, write_corpus
from .decoding import decode_utterances, format_decode_line, parse_decode_file
from .metrics import cer, score
from .training import NonFiniteLoss, train

log = logging.getLogger("copyne")

EXIT_CONFIG, EXIT_IO, EXIT_NONFINITE, EXIT_NO_DICT, EXIT_ID_MISMATCH = 2, 3, 4, 5, 6


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- config plumbing -----------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser, *flags: str) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    for flag in flags:
        kind = {"epochs": int, "beam-width": int, "seed": int, "gamma": float}.get(flag, str)
        if flag == "no-copy-loss":
            p.add_argument("--no-copy-loss", action="store_true", default=None)
        else:
            p.add_argument(f"--{flag}", type=kind)


def resolve_config(args) -> RunConfig:
    """File values, then ``--set`` items, then dedicated flags; later wins."""
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        items = {}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            items[key.strip()] = value.strip()
        for key in ("epochs", "beam_width", "seed", "gamma", "mode", "no_copy_loss"):
            value = getattr(args, key, None)
            if value is not None:
                items[key] = str(value)
        return cfg.with_items(items)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config: {exc}") from None
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from None


def echo_config(cfg: RunConfig, path: Path, argv) -> None:
    """Write the effective config; the header records the invoking command."""
    path.write_text(f"# copyne {shlex.join(argv)}\n" + cfg.to_text(), encoding="utf-8")


# -- commands ------------------------------------------------------------------------


def cmd_gen_data(args, argv) -> None:
    cfg = resolve_config(args)
    out = Path(args.out or cfg.corpus_dir)
    corpus = gen_corpus(cfg.synth_config())
    write_corpus(corpus, out)
    echo_config(cfg, out / "config.txt", argv)
    log.info("wrote corpus to %s (%d train, %d dev, %d test utterances)", out,
             len(corpus.splits["train"]), len(corpus.splits["dev"]), len(corpus.splits["test"]))


def cmd_train(args, argv) -> None:
    cfg = resolve_config(args)
    root = Path(args.corpus or cfg.corpus_dir)
    out = Path(args.out or cfg.out_dir)
    vocab = net.Vocab(read_lexicon(root / "lexicon.bin").chars)
    train_utts = load_manifest(root / "train.tsv")
    dev_utts = load_manifest(root / "dev.tsv")
    train_ents = load_dictionary(root / "dict.train.txt", vocab)
    dev_ents = load_dictionary(root / "dict.test.txt", vocab)
    mcfg = cfg.model_config()
    if mcfg.frame_dim != train_utts[0].frames.shape[1]:
        raise CliError(EXIT_CONFIG, f"frame_dim={mcfg.frame_dim} but corpus frames have "
                                    f"{train_utts[0].frames.shape[1]} dims")
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out / "config.txt", argv)
    model = net.init_model(mcfg, vocab, cfg.seed)
    try:
        history = train(model, train_utts, dev_utts, train_ents, dev_ents, cfg.train_config(), out)
    except NonFiniteLoss as exc:
        raise CliError(EXIT_NONFINITE, str(exc)) from None
    if not history:  # zero epochs: still leave a loadable checkpoint behind
        save_checkpoint(out / "best.ckpt", model, {"epoch": 0})


def _load_entities(dict_path, vocab, required: bool) -> list[tuple[int, ...]] | None:
    if dict_path is None:
        if required:
            raise CliError(EXIT_NO_DICT, "copyne decoding needs --dict")
        return None
    if not Path(dict_path).exists():
        if required:
            raise CliError(EXIT_NO_DICT, f"dictionary {dict_path} does not exist")
        return None
    ents = load_dictionary(dict_path, vocab)
    if required and not ents:
        log.warning("dictionary %s is empty; decoding with the no-copy entry only", dict_path)
    return [tuple(vocab.encode(e)) for e in ents]


def _decode_setup(args):
    model, _ = load_checkpoint(args.checkpoint)
    mode = getattr(args, "mode", None) or model.config.mode
    if mode != model.config.mode:
        raise CliError(EXIT_CONFIG, f"checkpoint was trained in {model.config.mode} mode, not {mode}")
    ents = _load_entities(args.dict, model.vocab, mode == "copyne")
    utts = load_manifest(args.manifest)
    return model, mode, ents, utts


def cmd_decode(args, argv) -> None:
    cfg = resolve_config(args)
    model, mode, ents, utts = _decode_setup(args)
    results = decode_utterances(model, [u.frames for u in utts], cfg.beam_config(mode), ents)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for u, r in zip(utts, results):
            fh.write(format_decode_line(u.utt_id, model.vocab.decode(r.tokens), r))
    echo_config(cfg, out.with_name(out.name + ".config.txt"), argv)
    truncated = sum(r.truncated for r in results)
    if truncated:
        log.warning("%d of %d utterances hit max_actions without eos", truncated, len(results))


def cmd_eval(args, argv) -> None:
    refs = {u.utt_id: (u.transcript, u.spans) for u in load_manifest(args.ref, load_frames=False)}
    hyps = {k: v[0] for k, v in parse_decode_file(args.hyp).items()}
    if set(refs) != set(hyps):
        missing, extra = sorted(set(refs) - set(hyps)), sorted(set(hyps) - set(refs))
        raise CliError(EXIT_ID_MISMATCH, f"utterance ids differ: {len(missing)} missing from hyp "
                                         f"{missing[:3]}, {len(extra)} unknown {extra[:3]}")
    report = score(refs, hyps).report()
    sys.stdout.write(report)
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")


def cmd_gamma_sweep(args, argv) -> None:
    cfg = resolve_config(args)
    model, mode, ents, utts = _decode_setup(args)
    if mode != "copyne":
        raise CliError(EXIT_CONFIG, "gamma-sweep needs a copyne checkpoint")
    gammas = [float(g) for g in args.gammas.split(",")]
    if any(not 0.0 <= g <= 1.0 for g in gammas):
        raise CliError(EXIT_CONFIG, "gammas must lie in [0, 1]")
    refs = [u.transcript for u in utts]
    rows = ["gamma\tcer\n"]
    for g in gammas:
        bcfg = replace(cfg.beam_config(mode), gamma=g)
        results = decode_utterances(model, [u.frames for u in utts], bcfg, ents)
        value = cer(refs, [model.vocab.decode(r.tokens) for r in results])
        rows.append(f"{g:g}\t{value:.4f}\n")
        log.info("gamma %g  CER %.4f", g, value)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(rows), encoding="utf-8")
    echo_config(cfg, out.with_name(out.name + ".config.txt"), argv)


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copyne", description="Contextual ASR with an entity copy mechanism.")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    _add_config_flags(p, "seed")
    p.add_argument("--out", help="corpus directory (default: corpus_dir)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a baseline or copyne model")
    _add_config_flags(p, "seed", "epochs", "mode", "gamma", "no-copy-loss")
    p.add_argument("--corpus", help="corpus directory (default: corpus_dir)")
    p.add_argument("--out", help="run directory (default: out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="beam-search decode a manifest")
    _add_config_flags(p, "gamma", "beam-width", "mode")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--dict", help="entity dictionary, one entity per line")
    p.add_argument("--out", required=True, help="hypothesis file")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score a hypothesis file against a manifest")
    p.add_argument("--ref", required=True, help="reference manifest")
    p.add_argument("--hyp", required=True, help="hypothesis file written by decode")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gamma-sweep", help="CER as a function of the copy threshold")
    _add_config_flags(p, "beam-width")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--dict")
    p.add_argument("--gammas", default="0,0.3,0.6,0.9,1.0")
    p.add_argument("--out", required=True, help="TSV of gamma and CER")
    p.set_defaults(func=cmd_gamma_sweep)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        args.func(args, argv)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, (ParseError, CheckpointError)):
            log.error("%s", exc)
            return EXIT_IO
        log.error("invalid configuration: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
