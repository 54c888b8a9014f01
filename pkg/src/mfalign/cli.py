"""Command-line interface: ``mfalign {fit,eval,translate,sample,synth,dict}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import CcaModel, LinearMap, fit_cca, fit_least_squares, fit_procrustes
from .corpus import (
    DEFAULT_VOCAB_LIMIT,
    build_multi_pairs,
    build_pairs,
    intersect_dictionaries,
    load_dictionary,
    load_embeddings,
    load_multi_dictionary,
    load_similarity_dataset,
    pseudo_dictionary,
    save_dictionary,
    word_similarity,
)
from .errors import FormatError, MfaError, ParameterError
from .models import IbfaModel, MbfaModel, fit_ibfa, fit_mbfa
from .pipeline import evaluate_translation, map_view, sample_word_pairs, sha256_file, translate_words
from .retrieval import sentence_retrieval
from .storage import load_model, model_kind, save_model
from .synth import METHODS, NOISE_KINDS, Scenario, format_report, run_scenario

log = logging.getLogger("mfalign")


def _header(args, inputs) -> dict:
    """Resolved configuration, library version and input checksums."""
    out = {"version": __version__}
    for key, value in sorted(vars(args).items()):
        if key in ("func",):
            continue
        if isinstance(value, list):
            value = ",".join(map(str, value))
        out[f"config.{key}"] = value
    for path in inputs:
        out[f"sha256.{Path(path).name}"] = sha256_file(path)
    return out


def _header_text(header: dict) -> str:
    return "".join(f"{k}: {v}\n" for k, v in header.items())


def _emit(text: str, path) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_spaces(args):
    return [load_embeddings(p, limit=args.limit) for p in args.emb]


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    if args.views is not None and args.views != len(args.emb):
        raise ParameterError(f"--views {args.views} but {len(args.emb)} embedding files given")
    if len(args.emb) < 2 and args.method != "mbfa":
        raise ParameterError(f"{args.method} needs exactly two --emb files")
    spaces = _load_spaces(args)
    if args.pseudo:
        if len(spaces) != 2:
            raise ParameterError("--pseudo builds a two-language dictionary")
        dictionary = pseudo_dictionary(spaces[0], spaces[1])
        data = build_pairs(dictionary, spaces[0], spaces[1])
    elif args.dict is None:
        raise ParameterError("either --dict or --pseudo is required")
    elif len(spaces) == 2:
        data = build_pairs(load_dictionary(args.dict, dedup=args.dedup), spaces[0], spaces[1])
    else:
        entries = load_multi_dictionary(args.dict, arity=len(spaces)).entries
        if args.dedup:
            entries = list(dict.fromkeys(entries))
        data = build_multi_pairs(entries, spaces)

    lines = [f"method: {args.method}", f"pairs_used: {data.n}", f"pairs_dropped: {data.dropped}"]
    if args.method == "ibfa":
        model = fit_ibfa(data.views[0], data.views[1], args.k)
        p = model.p
        lines += [f"latent_dim: {model.k}",
                  f"canonical_correlations: max={p[0]:.6f} mean={p.mean():.6f} min={p[-1]:.6f}"]
    elif args.method == "mbfa":
        if len(spaces) > 2 and len(data.views) != len(spaces):
            raise ParameterError("dictionary arity does not match the number of views")
        model = fit_mbfa(data.views, args.k, max_iters=args.iters, rel_tol=args.tol,
                         init=args.init, seed=args.seed, diagonal_psi=args.diagonal_psi)
        trace = model.nll_trace
        monotone = bool(np.all(np.diff(trace) <= 1e-9))
        lines += [f"latent_dim: {model.k}", f"iterations: {model.iterations_run}",
                  f"nll_initial: {float(trace[0])!r}", f"nll_final: {float(trace[-1])!r}", f"nll_monotone: {monotone}"]
        if args.trace:
            rows = "".join(f"{i}\t{float(v)!r}\n" for i, v in enumerate(trace))
            Path(args.trace).write_text("iteration\tnll\n" + rows, encoding="utf-8")
    elif args.method in ("lsq", "procrustes"):
        x, y = data.views
        model = fit_least_squares(x, y) if args.method == "lsq" else fit_procrustes(x, y)
        residual = np.linalg.norm(model.apply(x) - y) / np.linalg.norm(y)
        lines.append(f"relative_residual: {residual:.3e}")
    elif args.method == "cca":
        model = fit_cca(data.views[0], data.views[1], args.k)
        c = model.correlations
        lines += [f"latent_dim: {len(c)}", f"canonical_correlations: max={c[0]:.6f} mean={c.mean():.6f} min={c[-1]:.6f}"]
    else:
        raise ParameterError(f"unknown method {args.method!r}")
    save_model(args.out, model)
    inputs = list(args.emb) + ([args.dict] if args.dict else [])
    text = "# mfalign fit\n" + "".join(line + "\n" for line in lines) + _header_text(_header(args, inputs))
    _emit(text, args.report)
    return 0


# ---------------------------------------------------------------------------
# eval / translate
# ---------------------------------------------------------------------------


def _aligned_pair(args):
    model = load_model(args.model)
    src, tgt = _load_spaces(args)
    return model, map_view(model, src, args.src_view, "src"), map_view(model, tgt, args.tgt_view, "tgt")


def cmd_eval(args) -> int:
    if len(args.emb) != 2:
        raise ParameterError("eval needs --emb SRC --emb TGT")
    modes = sum(x is not None for x in (args.dict, args.sentences, args.similarity))
    if modes != 1:
        raise ParameterError("give exactly one of --dict, --sentences or --similarity")
    model, src, tgt = _aligned_pair(args)
    method = model_kind(model).lower()
    inputs = [args.model, *args.emb]
    if args.dict:
        report = evaluate_translation(src, tgt, load_dictionary(args.dict), args.metric, args.csls_k, method)
        inputs.append(args.dict)
    elif args.sentences:
        src_sents = _read_sentences(args.sentences[0])
        tgt_sents = _read_sentences(args.sentences[1])
        report = sentence_retrieval(src_sents, tgt_sents, src, tgt, args.n_queries, args.n_targets,
                                    args.seed, args.metric, args.csls_k, method)
        inputs += list(args.sentences)
    else:
        pairs = load_similarity_dataset(args.similarity)
        space = src if args.similarity_side == "src" else tgt
        lookup = space.index
        rho, used, dropped = word_similarity(pairs, lambda w: space.matrix[lookup[w]] if w in lookup else None)
        inputs.append(args.similarity)
        text = (f"# mfalign word similarity\nmethod: {method}\nspearman: {rho!r}\n"
                f"pairs_used: {used}\npairs_dropped: {dropped}\n") + _header_text(_header(args, inputs))
        _emit(text, args.out)
        return 0
    report.header.update(_header(args, inputs))
    _emit(report.to_text(per_query=args.per_query), args.out)
    return 0


def _read_sentences(path) -> list:
    with open(path, encoding="utf-8", errors="surrogateescape") as f:
        return [line.split() for line in f]


def cmd_translate(args) -> int:
    if len(args.emb) != 2:
        raise ParameterError("translate needs --emb SRC --emb TGT")
    _, src, tgt = _aligned_pair(args)
    results, missing = translate_words(src, tgt, args.word, args.topk, args.metric, args.csls_k)
    out = ["query\trank\tcandidate\tscore"]
    for word, ranked in results.items():
        out += [f"{word}\t{i + 1}\t{cand}\t{score:.6f}" for i, (cand, score) in enumerate(ranked)]
    sys.stdout.write("\n".join(out) + "\n")
    for word in missing:
        log.warning("%s is not in the source vocabulary", word)
    return 0


# ---------------------------------------------------------------------------
# sample / synth / dict
# ---------------------------------------------------------------------------


def cmd_sample(args) -> int:
    if len(args.emb) != 2:
        raise ParameterError("sample needs --emb SRC --emb TGT")
    model = load_model(args.model)
    if not isinstance(model, IbfaModel):
        raise ParameterError("sample needs an IBFA model file")
    src, tgt = _load_spaces(args)
    rows = sample_word_pairs(model, src, tgt, args.count, args.seed)
    text = "rank\tsrc_word\ttgt_word\tlogp\n" + "".join(f"{r}\t{a}\t{b}\t{lp!r}\n" for r, a, b, lp in rows)
    _emit(text, args.out)
    return 0


def cmd_synth(args) -> int:
    methods = tuple(args.methods.split(",")) if args.methods else METHODS
    scenario = Scenario(
        d=args.d, k=args.k, n_train=args.n_train, n_test=args.n_test, noise=args.noise,
        noise_scale=args.noise_scale, condition=args.condition, seed=args.seed,
        mbfa_iters=args.iters, metric=args.metric, neighborhood=args.csls_k, methods=methods,
    )
    rows = run_scenario(scenario)
    _emit(format_report(scenario, rows, {"version": __version__}), args.out)
    return 0


def cmd_dict(args) -> int:
    if args.mode == "pseudo":
        a = load_embeddings(args.emb[0], limit=args.limit)
        b = load_embeddings(args.emb[1], limit=args.limit)
        entries = pseudo_dictionary(a, b).entries
    else:
        dicts = [load_dictionary(p) for p in (args.ab, args.ba, args.ac, args.ca, args.bc, args.cb)]
        entries = intersect_dictionaries(*dicts).entries
    save_dictionary(args.out, entries)
    log.info("%d entries written to %s", len(entries), args.out)
    print(f"entries: {len(entries)}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfalign", description="Align word embeddings with latent factor models")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def spaces(p, n_help="embedding file in word2vec text format (repeat per language)"):
        p.add_argument("--emb", action="append", required=True, help=n_help)
        p.add_argument("--limit", type=int, default=DEFAULT_VOCAB_LIMIT, help="vocabulary size per language")

    def retrieval_opts(p):
        p.add_argument("--metric", choices=("nn", "csls"), default="nn")
        p.add_argument("--csls-k", type=int, default=10, help="CSLS neighbourhood size")

    p = sub.add_parser("fit", help="fit an alignment model and write an MFA1 file")
    spaces(p)
    p.add_argument("--method", choices=("ibfa", "mbfa", "lsq", "procrustes", "cca"), default="ibfa")
    p.add_argument("--dict", help="training dictionary (pairs, or v-tuples for mbfa)")
    p.add_argument("--pseudo", action="store_true", help="train on identically spelled tokens")
    p.add_argument("--dedup", action="store_true", help="drop repeated dictionary lines")
    p.add_argument("--k", type=int, default=None, help="latent dimension (default: smallest view dimension)")
    p.add_argument("--views", type=int, default=None, help="expected number of views")
    p.add_argument("--iters", type=int, default=20000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--init", choices=("ibfa", "random"), default="ibfa")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--diagonal-psi", action="store_true")
    p.add_argument("--trace", help="write the MBFA NLL trace as TSV")
    p.add_argument("--report", help="write fit diagnostics here instead of stdout")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="word or sentence translation precision, or word similarity")
    spaces(p)
    retrieval_opts(p)
    p.add_argument("--model", required=True)
    p.add_argument("--src-view", type=int, default=0)
    p.add_argument("--tgt-view", type=int, default=1)
    p.add_argument("--dict", help="evaluation dictionary")
    p.add_argument("--sentences", nargs=2, metavar=("SRC", "TGT"), help="parallel tokenised corpus")
    p.add_argument("--similarity", help="word-similarity dataset 'w1 w2 score'")
    p.add_argument("--similarity-side", choices=("src", "tgt"), default="src")
    p.add_argument("--n-queries", type=int, default=2000)
    p.add_argument("--n-targets", type=int, default=200000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-query", action="store_true", help="append per-query rankings")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("translate", help="top-k translations of single words")
    spaces(p)
    retrieval_opts(p)
    p.add_argument("--model", required=True)
    p.add_argument("--src-view", type=int, default=0)
    p.add_argument("--tgt-view", type=int, default=1)
    p.add_argument("--word", action="append", required=True)
    p.add_argument("--topk", type=int, default=10)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("sample", help="generate word pairs from an IBFA model")
    spaces(p)
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("synth", help="planted-model benchmark of all methods")
    retrieval_opts(p)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--noise", choices=NOISE_KINDS, default="anisotropic")
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--condition", type=float, default=100.0)
    p.add_argument("--iters", type=int, default=1000, help="EM iterations for mbfa")
    p.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dict", help="build pseudo-dictionaries or triple intersections")
    dsub = p.add_subparsers(dest="mode", required=True)
    q = dsub.add_parser("pseudo", help="identical-token dictionary of two vocabularies")
    spaces(q)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_dict)
    q = dsub.add_parser("triples", help="triples supported by all six directed dictionaries")
    for name in ("ab", "ba", "ac", "ca", "bc", "cb"):
        q.add_argument(f"--{name}", required=True, help=f"dictionary {name[0].upper()}->{name[1].upper()}")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_dict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MfaError as exc:
        print(f"mfalign: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"mfalign: error: {exc}", file=sys.stderr)
        return FormatError.exit_code


if __name__ == "__main__":
    sys.exit(main())
