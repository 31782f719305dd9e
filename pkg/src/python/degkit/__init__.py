#! /usr/bin/env python
import argparse
import json
import importlib.metadata

from sourmash.plugins import CommandLinePlugin
from sourmash.logging import notify

from . import pipeline
from . import prettyprint
from .core import DATA_TYPES, SCORED_COLUMNS
from .curation import LINKAGE_METHODS, SplitSizes
from .ensemble import GAConfig
from .evaluation import SNFilterThresholds
from .neuralreg import NeuralHyperparams, TrainConfig
from .exceptions import DegkitError
from .utils import default_seed, set_thread_pool

try:
    __version__ = importlib.metadata.version("degkit")
except importlib.metadata.PackageNotFoundError:
    __version__ = "unknown"


def print_version():
    notify(f"=> degkit {__version__}; RNA degradation modeling toolkit\n")


def log_config(args):
    "Log the fully resolved configuration of a command."
    resolved = {
        k: v for k, v in sorted(vars(args).items()) if k not in ("cmd", "config_values")
    }
    notify("resolved config: {}", json.dumps(resolved, sort_keys=True, default=str))


def _arg_type(fn):
    "Report DegkitErrors from an argparse type as usage errors."

    def convert(text):
        try:
            return fn(text)
        except DegkitError as exc:
            raise argparse.ArgumentTypeError(exc.message)

    convert.__name__ = fn.__name__
    return convert


parse_columns = _arg_type(pipeline.parse_columns)
parse_sizes = _arg_type(SplitSizes.parse)


def add_common_args(p, seed=False):
    p.add_argument(
        "--config",
        default=None,
        help="key = value file of defaults for this command's options",
    )
    p.add_argument(
        "-c",
        "--cores",
        "--threads",
        dest="cores",
        default=0,
        type=int,
        help="number of cores to use (default is all available)",
    )
    if seed:
        p.add_argument(
            "--seed",
            default=default_seed(),
            type=int,
            help="random seed (default: $DEGKIT_SEED or 7)",
        )


def _start(args, summary):
    print_version()
    notify(summary)
    log_config(args)
    return set_thread_pool(args.cores)


class Degkit_Ingest(CommandLinePlugin):
    command = "ingest"
    description = "validate a construct dataset and summarize it"

    def __init__(self, p):
        super().__init__(p)
        p.add_argument("--data", required=True, help="JSON Lines construct dataset")
        p.add_argument("--bpp-dir", default=None, help="directory of <id>.bpp matrices")
        p.add_argument("-o", "--out", default=None, help="write the normalized dataset here")
        p.add_argument(
            "--recompute-loops",
            action="store_true",
            help="replace loop labels with ones computed from the structure",
        )
        p.add_argument("--summary", default=None, help="also write the summary JSON here")
        add_common_args(p)

    def main(self, args):
        num_threads = _start(args, f"data: '{args.data}' / bpp-dir: {args.bpp_dir}")
        notify(f"validating '{args.data}' using {num_threads} threads")
        super().main(args)
        status = pipeline.do_ingest(
            args.data, args.bpp_dir, args.out, args.recompute_loops, args.summary
        )
        if status == 0:
            notify(f"...ingest is done! results in '{args.out or 'stdout'}'")
        return status


class Degkit_Featurize(CommandLinePlugin):
    command = "featurize"
    description = "compute structure-derived per-nucleotide features"

    def __init__(self, p):
        super().__init__(p)
        p.add_argument("--data", required=True, help="JSON Lines construct dataset")
        p.add_argument("--bpp-dir", default=None, help="directory of <id>.bpp matrices")
        p.add_argument(
            "-o",
            "--out",
            required=True,
            help="output directory for <id>.loops, <id>.feat.csv and <id>.gdist",
        )
        p.add_argument(
            "--max-distance",
            default=None,
            type=int,
            help="cap graph distances at this value (default: exact)",
        )
        p.add_argument(
            "--table",
            default=None,
            help="also write one combined per-nucleotide CSV here",
        )
        add_common_args(p)

    def main(self, args):
        _start(args, f"data: '{args.data}' / max-distance: {args.max_distance}")
        super().main(args)
        status = pipeline.do_featurize(
            args.data, args.bpp_dir, args.out, args.max_distance, args.table
        )
        if status == 0:
            notify(f"...featurize is done! results in '{args.out}'")
        return status


class Degkit_Filter(CommandLinePlugin):
    command = "filter"
    description = "apply signal-to-noise and value-range quality filters"

    def __init__(self, p):
        super().__init__(p)
        defaults = SNFilterThresholds()
        p.add_argument("--data", required=True, help="JSON Lines construct dataset")
        p.add_argument("-o", "--out", required=True, help="write kept constructs here")
        p.add_argument("--rejected", default=None, help="write rejected constructs here")
        p.add_argument(
            "--min-value",
            default=defaults.min_value,
            type=float,
            help=f"every profile value must exceed this (default: {defaults.min_value}; the public release uses -0.5)",
        )
        p.add_argument(
            "--max-value",
            default=defaults.max_value,
            type=float,
            help=f"every profile value must be below this (default: {defaults.max_value})",
        )
        p.add_argument(
            "--sn-min",
            default=defaults.sn_min,
            type=float,
            help=f"reactivity signal/noise must exceed this (default: {defaults.sn_min})",
        )
        add_common_args(p)

    def main(self, args):
        _start(
            args,
            f"min-value: {args.min_value} / max-value: {args.max_value} / sn-min: {args.sn_min}",
        )
        super().main(args)
        thresholds = SNFilterThresholds(
            min_value=args.min_value, max_value=args.max_value, sn_min=args.sn_min
        )
        status = pipeline.do_filter(args.data, args.out, args.rejected, thresholds)
        if status == 0:
            notify(f"...filter is done! results in '{args.out}'")
        return status


class Degkit_Split(CommandLinePlugin):
    command = "split"
    description = "cluster constructs and assign train/public/private splits"

    def __init__(self, p):
        super().__init__(p)
        p.add_argument("--data", required=True, help="JSON Lines construct dataset")
        p.add_argument(
            "-t",
            "--threshold",
            default=0.5,
            type=float,
            help="cophenetic distance at which to cut the dendrogram (default: 0.5)",
        )
        p.add_argument(
            "--linkage",
            default="ward",
            choices=LINKAGE_METHODS,
            help="agglomeration method (default: ward)",
        )
        p.add_argument(
            "--mode",
            default="distance",
            choices=["distance", "vector"],
            help="cluster Hamming distances or one-hot vectors (default: distance)",
        )
        p.add_argument(
            "--sizes",
            required=True,
            type=parse_sizes,
            help="target sizes as train,public,private",
        )
        p.add_argument("-o", "--out", required=True, help="CSV output file 'id,cluster_id,split'")
        p.add_argument(
            "--datasets-prefix",
            default=None,
            help="also write <prefix>.<split>.jsonl datasets",
        )
        add_common_args(p, seed=True)

    def main(self, args):
        _start(
            args,
            f"threshold: {args.threshold} / linkage: {args.linkage} / mode: {args.mode} / seed: {args.seed}",
        )
        super().main(args)
        status = pipeline.do_split(
            args.data,
            args.threshold,
            args.linkage,
            args.mode,
            args.sizes,
            args.seed,
            args.out,
            args.datasets_prefix,
        )
        if status == 0:
            notify(f"...split is done! results in '{args.out}'")
        return status


class Degkit_TrainLinear(CommandLinePlugin):
    command = "train-linear"
    description = "fit the windowed linear degradation model"

    def __init__(self, p):
        super().__init__(p)
        p.add_argument("--data", required=True, help="JSON Lines training dataset")
        p.add_argument(
            "--targets",
            "--target",
            dest="targets",
            default="deg_Mg_pH10",
            type=parse_columns,
            help="comma-separated data types to fit (default: deg_Mg_pH10)",
        )
        p.add_argument(
            "-w",
            "--window",
            default=12,
            type=int,
            help="window half-width (default: 12)",
        )
        p.add_argument(
            "--lambda",
            dest="lam",
            default=0.1,
            type=float,
            help="ridge weight (default: 0.1)",
        )
        p.add_argument("-o", "--out", required=True, help="model JSON output file")
        add_common_args(p)

    def main(self, args):
        _start(
            args,
            f"targets: {','.join(args.targets)} / window: {args.window} / lambda: {args.lam}",
        )
        super().main(args)
        status = pipeline.do_train_linear(args.data, args.targets, args.window, args.lam, args.out)
        if status == 0:
            notify(f"...train-linear is done! results in '{args.out}'")
        return status


class Degkit_TrainNeural(CommandLinePlugin):
    command = "train-neural"
    description = "train the reference neural regressor"

    def __init__(self, p):
        super().__init__(p)
        hp = NeuralHyperparams()
        tc = TrainConfig()
        p.add_argument("--data", required=True, help="JSON Lines training dataset")
        p.add_argument("--bpp-dir", default=None, help="directory of <id>.bpp matrices")
        p.add_argument("--valid", default=None, help="JSON Lines validation dataset")
        p.add_argument("--valid-bpp-dir", default=None, help="BPP directory for --valid")
        p.add_argument(
            "--extra-data",
            default=None,
            help="additional (e.g. pseudo-labelled) training dataset",
        )
        p.add_argument("--extra-bpp-dir", default=None, help="BPP directory for --extra-data")
        p.add_argument("--hidden", default=hp.hidden, type=int, help=f"hidden width (default: {hp.hidden})")
        p.add_argument("--depth", default=hp.depth, type=int, help=f"message-passing layers (default: {hp.depth})")
        p.add_argument(
            "--recurrent-layers",
            default=hp.recurrent_layers,
            type=int,
            help=f"bidirectional GRU layers (default: {hp.recurrent_layers})",
        )
        p.add_argument("--epochs", default=tc.epochs, type=int, help=f"training epochs (default: {tc.epochs})")
        p.add_argument(
            "--learning-rate",
            default=tc.learning_rate,
            type=float,
            help=f"Adam learning rate (default: {tc.learning_rate})",
        )
        p.add_argument("--batch-size", default=tc.batch_size, type=int, help=f"constructs per step (default: {tc.batch_size})")
        p.add_argument(
            "--columns",
            default=",".join(DATA_TYPES),
            type=parse_columns,
            help="data types that contribute to the loss (default: all five)",
        )
        p.add_argument(
            "--reverse-augment",
            action="store_true",
            help="also train on 5'<->3' reversed constructs",
        )
        p.add_argument(
            "--sn-weight-cap",
            default=None,
            type=float,
            help="weight constructs by min(signal_to_noise, cap)/cap",
        )
        p.add_argument("--init", default=None, help="continue training from this checkpoint")
        p.add_argument("-o", "--out", required=True, help="checkpoint output file")
        p.add_argument("--history", default=None, help="CSV of per-epoch losses")
        add_common_args(p, seed=True)

    def main(self, args):
        _start(
            args,
            f"hidden: {args.hidden} / depth: {args.depth} / recurrent-layers: {args.recurrent_layers} / epochs: {args.epochs} / seed: {args.seed}",
        )
        super().main(args)
        hyperparams = NeuralHyperparams(
            hidden=args.hidden,
            depth=args.depth,
            recurrent_layers=args.recurrent_layers,
            seed=args.seed,
        )
        config = TrainConfig(
            epochs=args.epochs,
            learning_rate=args.learning_rate,
            batch_size=args.batch_size,
            columns=args.columns,
            reverse_augment=args.reverse_augment,
            sn_weight_cap=args.sn_weight_cap,
            seed=args.seed,
        )
        status = pipeline.do_train_neural(
            args.data,
            args.bpp_dir,
            args.valid,
            args.valid_bpp_dir,
            args.extra_data,
            args.extra_bpp_dir,
            hyperparams,
            config,
            args.init,
            args.out,
            args.history,
        )
        if status == 0:
            notify(f"...train-neural is done! results in '{args.out}'")
        return status


class Degkit_Predict(CommandLinePlugin):
    command = "predict"
    description = "predict per-nucleotide profiles with a trained model"

    def __init__(self, p):
        super().__init__(p)
        p.add_argument("--model", required=True, help="linear model JSON or neural checkpoint")
        p.add_argument("--data", required=True, help="JSON Lines construct dataset")
        p.add_argument("--bpp-dir", default=None, help="directory of <id>.bpp matrices")
        p.add_argument("-o", "--out", required=True, help="CSV output file for predictions")
        p.add_argument(
            "--all-columns",
            action="store_true",
            help="write every predicted data type, not just the three scored ones",
        )
        add_common_args(p)

    def main(self, args):
        _start(args, f"model: '{args.model}' / data: '{args.data}'")
        super().main(args)
        status = pipeline.do_predict(
            args.model, args.data, args.bpp_dir, args.out, all_columns=args.all_columns
        )
        if status == 0:
            notify(f"...predict is done! results in '{args.out}'")
        return status


class Degkit_Score(CommandLinePlugin):
    command = "score"
    description = "score predictions by MCRMSE"

    def __init__(self, p):
        super().__init__(p)
        p.add_argument("--preds", required=True, help="prediction CSV")
        p.add_argument("--data", required=True, help="JSON Lines truth dataset")
        p.add_argument(
            "--columns",
            default=",".join(SCORED_COLUMNS),
            type=parse_columns,
            help="scored data types (default: reactivity,deg_Mg_pH10,deg_Mg_50C)",
        )
        p.add_argument("-o", "--out", default=None, help="also write the report JSON here")
        p.add_argument(
            "-P",
            "--pretty-print",
            action="store_true",
            help="display a readable summary after the JSON",
        )
        add_common_args(p)

    def main(self, args):
        _start(args, f"preds: '{args.preds}' / columns: {','.join(args.columns)}")
        super().main(args)
        status = pipeline.do_score(args.preds, args.data, args.columns, args.out, args.pretty_print)
        if status == 0:
            notify(f"...score is done! results in '{args.out or 'stdout'}'")
        return status


class Degkit_Ensemble(CommandLinePlugin):
    command = "ensemble"
    description = "search blend weights over candidate predictions with a genetic algorithm"

    def __init__(self, p):
        super().__init__(p)
        ga = GAConfig()
        p.add_argument("--candidates", required=True, help="directory of prediction CSVs")
        p.add_argument("--truth", required=True, help="public JSON Lines truth dataset")
        p.add_argument("--private", default=None, help="held-out JSON Lines truth dataset")
        p.add_argument("--max-members", default=ga.max_members, type=int, help=f"(default: {ga.max_members})")
        p.add_argument("--pool-limit", default=ga.pool_limit, type=int, help=f"(default: {ga.pool_limit})")
        p.add_argument("--population", default=ga.population, type=int, help=f"(default: {ga.population})")
        p.add_argument("--generations", default=ga.generations, type=int, help=f"(default: {ga.generations})")
        p.add_argument(
            "--mutation-sigma", default=ga.mutation_sigma, type=float, help=f"(default: {ga.mutation_sigma})"
        )
        p.add_argument(
            "--crossover-rate", default=ga.crossover_rate, type=float, help=f"(default: {ga.crossover_rate})"
        )
        p.add_argument(
            "--columns",
            default=",".join(SCORED_COLUMNS),
            type=parse_columns,
            help="scored data types (default: reactivity,deg_Mg_pH10,deg_Mg_50C)",
        )
        p.add_argument("-o", "--out", required=True, help="ensemble spec JSON output")
        p.add_argument("--blend-out", default=None, help="write the blended predictions here")
        p.add_argument("--top-k", default=2, type=int, help="size of the simple-average baseline (default: 2)")
        p.add_argument("--top-k-out", default=None, help="write the top-k average predictions here")
        add_common_args(p, seed=True)

    def main(self, args):
        _start(
            args,
            f"max-members: {args.max_members} / population: {args.population} / generations: {args.generations} / seed: {args.seed}",
        )
        super().main(args)
        config = GAConfig(
            max_members=args.max_members,
            pool_limit=args.pool_limit,
            population=args.population,
            generations=args.generations,
            mutation_sigma=args.mutation_sigma,
            crossover_rate=args.crossover_rate,
            seed=args.seed,
        )
        status = pipeline.do_ensemble(
            args.candidates,
            args.truth,
            args.private,
            config,
            args.columns,
            args.out,
            args.blend_out,
            args.top_k,
            args.top_k_out,
        )
        if status == 0:
            notify(f"...ensemble is done! results in '{args.out}'")
        return status


class Degkit_Aggregate(CommandLinePlugin):
    command = "aggregate"
    description = "sum per-nucleotide predictions into mRNA rates and rank them"

    def __init__(self, p):
        super().__init__(p)
        p.add_argument("--model", required=True, help="linear model JSON or neural checkpoint")
        p.add_argument("--mrnas", required=True, help="mRNA table CSV")
        p.add_argument(
            "--column",
            default="deg_Mg_pH10",
            choices=DATA_TYPES,
            help="degradation column to sum (default: deg_Mg_pH10)",
        )
        p.add_argument(
            "--per-nucleotide",
            action="store_true",
            help="divide window sums by window length",
        )
        p.add_argument("--n-boot", default=1000, type=int, help="bootstrap resamples (default: 1000)")
        p.add_argument("-o", "--out", required=True, help="CSV output file for the rank table")
        p.add_argument("--summary", default=None, help="write spearman and noise ceiling JSON here")
        p.add_argument(
            "-P",
            "--pretty-print",
            action="store_true",
            default=True,
            help="display results after aggregation finishes (default: True)",
        )
        p.add_argument(
            "-N",
            "--no-pretty-print",
            action="store_false",
            dest="pretty_print",
            help="do not display results",
        )
        add_common_args(p, seed=True)

    def main(self, args):
        _start(
            args,
            f"column: {args.column} / per-nucleotide: {args.per_nucleotide} / n-boot: {args.n_boot} / seed: {args.seed}",
        )
        super().main(args)
        status = pipeline.do_aggregate(
            args.model,
            args.mrnas,
            args.column,
            args.per_nucleotide,
            args.n_boot,
            args.seed,
            args.out,
            args.summary,
        )
        if status == 0:
            notify(f"...aggregate is done! results in '{args.out}'")

            if args.pretty_print:
                prettyprint.pretty_print_ranks(args.out)
        return status


class Degkit_Report(CommandLinePlugin):
    command = "report"
    description = "write score tables and SVG summary plots"

    def __init__(self, p):
        super().__init__(p)
        p.add_argument("--preds", nargs="*", default=[], help="prediction CSVs, one per model")
        p.add_argument("--public", default=None, help="public JSON Lines truth dataset")
        p.add_argument("--private", default=None, help="private JSON Lines truth dataset")
        p.add_argument("--ranks", default=None, help="rank table CSV from 'aggregate'")
        p.add_argument(
            "--column",
            default="deg_Mg_pH10",
            choices=DATA_TYPES,
            help="data type for the motif summary (default: deg_Mg_pH10)",
        )
        p.add_argument("-o", "--out-dir", required=True, help="directory for tables and plots")
        p.add_argument(
            "-P",
            "--pretty-print",
            action="store_true",
            default=True,
            help="display the score table (default: True)",
        )
        p.add_argument(
            "-N",
            "--no-pretty-print",
            action="store_false",
            dest="pretty_print",
            help="do not display the score table",
        )
        add_common_args(p)

    def main(self, args):
        _start(args, f"{len(args.preds)} prediction files / column: {args.column}")
        super().main(args)
        status = pipeline.do_report(
            args.preds, args.public, args.private, args.ranks, args.column, args.out_dir
        )
        if status == 0:
            notify(f"...report is done! results in '{args.out_dir}'")

            scores = f"{args.out_dir}/scores.csv"
            if args.pretty_print and args.preds:
                prettyprint.pretty_print_scores(scores)
        return status


class Degkit_RandomSeqs(CommandLinePlugin):
    command = "random-seqs"
    description = "write uniformly random sequences as FASTA for external folding"

    def __init__(self, p):
        super().__init__(p)
        p.add_argument("-n", "--count", required=True, type=int, help="number of sequences")
        p.add_argument("-l", "--length", required=True, type=int, help="sequence length")
        p.add_argument("--prefix", default="random", help="FASTA name prefix (default: random)")
        p.add_argument("-o", "--out", required=True, help="FASTA output file")
        add_common_args(p, seed=True)

    def main(self, args):
        _start(args, f"count: {args.count} / length: {args.length} / seed: {args.seed}")
        super().main(args)
        status = pipeline.do_random_seqs(args.count, args.length, args.seed, args.prefix, args.out)
        if status == 0:
            notify(f"...random-seqs is done! results in '{args.out}'")
        return status


class Degkit_PseudoLabel(CommandLinePlugin):
    command = "pseudo-label"
    description = "attach neural-model predictions to unlabelled constructs"

    def __init__(self, p):
        super().__init__(p)
        p.add_argument("--model", required=True, help="neural checkpoint")
        p.add_argument("--data", required=True, help="unlabelled JSON Lines dataset")
        p.add_argument("--bpp-dir", required=True, help="directory of <id>.bpp matrices")
        p.add_argument("-o", "--out", required=True, help="pseudo-labelled dataset output")
        add_common_args(p)

    def main(self, args):
        _start(args, f"model: '{args.model}' / data: '{args.data}'")
        super().main(args)
        status = pipeline.do_pseudo_label(args.model, args.data, args.bpp_dir, args.out)
        if status == 0:
            notify(f"...pseudo-label is done! results in '{args.out}'")
        return status


COMMANDS = (
    Degkit_Ingest,
    Degkit_Featurize,
    Degkit_Filter,
    Degkit_Split,
    Degkit_TrainLinear,
    Degkit_TrainNeural,
    Degkit_Predict,
    Degkit_Score,
    Degkit_Ensemble,
    Degkit_Aggregate,
    Degkit_Report,
    Degkit_RandomSeqs,
    Degkit_PseudoLabel,
)
