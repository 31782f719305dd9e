"""The work behind each command: read inputs, call the library, write outputs.

Every do_* function returns 0 on success and raises a DegkitError on bad
input.
"""
import csv
import json
import os
from dataclasses import replace

import numpy as np
from sourmash.logging import notify

from . import (
    aggregate,
    curation,
    degscore,
    ensemble,
    evaluation,
    neuralreg,
    plots,
    prettyprint,
    structfeat,
)
from .core import (
    DATA_TYPES,
    PredictionSet,
    parse_dataset,
    read_predictions,
    summarize_dataset,
    write_dataset,
    write_predictions,
)
from .exceptions import DegkitError, ModelFormatError, ValidationError
from .utils import atomic_write, parallel_map


def parse_columns(text):
    columns = [c.strip() for c in text.split(",") if c.strip()]
    for col in columns:
        if col not in DATA_TYPES:
            raise ValidationError(col, f"unknown data type; expected one of {', '.join(DATA_TYPES)}")
    if not columns:
        raise ValidationError("columns", "at least one column is required")
    return tuple(columns)


def write_json(doc, path):
    with atomic_write(path) as fp:
        json.dump(doc, fp, indent=1, sort_keys=True)
        fp.write("\n")


def do_ingest(data, bpp_dir, output, recompute_loops, summary):
    constructs = parse_dataset(data, bpp_dir=bpp_dir)
    if recompute_loops:
        changed = 0
        fixed = []
        for c in constructs:
            loops = structfeat.annotate_loops(structfeat.pair_table(c.structure))
            if loops != c.loop_string:
                changed += 1
                c = replace(c, loop_string=loops)
            fixed.append(c)
        constructs = fixed
        notify(f"recomputed loop labels; {changed} constructs changed")

    doc = summarize_dataset(constructs)
    print(json.dumps(doc, sort_keys=True))
    if summary:
        write_json(doc, summary)
    if output:
        write_dataset(constructs, output)
    return 0


FEATURE_COLUMNS = ["dist_to_paired", "dist_to_unpaired", "bpp_rowsum", "bpp_zeros"]


def write_construct_features(c, f, out_dir):
    "Write <id>.loops, <id>.feat.csv and <id>.gdist for one construct."
    base = os.path.join(out_dir, c.id)
    with atomic_write(base + ".loops") as fp:
        fp.write(f.loop_string + "\n")
    with atomic_write(base + ".feat.csv", newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(FEATURE_COLUMNS)
        for k in range(f.n):
            w.writerow(
                [
                    int(f.dist_to_paired[k]),
                    int(f.dist_to_unpaired[k]),
                    f"{f.bpp_rowsum[k]:.6g}",
                    f"{f.bpp_zeros[k]:.6g}",
                ]
            )
    with atomic_write(base + ".gdist") as fp:
        np.savetxt(fp, f.graph_dist, fmt="%d", delimiter=" ")


def write_feature_table(constructs, bundles, path):
    "One combined per-nucleotide CSV across all constructs."
    fields = ["id_seqpos", "nucleotide", "loop_type", "paired"] + FEATURE_COLUMNS
    with atomic_write(path, newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(fields)
        for c, f in zip(constructs, bundles):
            for k in range(c.seq_length):
                w.writerow(
                    [
                        f"{c.id}_{k}",
                        c.sequence[k],
                        f.loop_string[k],
                        int(c.structure[k] != "."),
                        int(f.dist_to_paired[k]),
                        int(f.dist_to_unpaired[k]),
                        f"{f.bpp_rowsum[k]:.6g}",
                        f"{f.bpp_zeros[k]:.6g}",
                    ]
                )


def do_featurize(data, bpp_dir, out_dir, max_distance, table):
    constructs = parse_dataset(data, bpp_dir=bpp_dir)
    if os.path.exists(out_dir) and not os.path.isdir(out_dir):
        raise DegkitError(f"featurize output '{out_dir}' exists and is not a directory")
    os.makedirs(out_dir, exist_ok=True)

    n_fallback = sum(1 for c in constructs if c.bpp is None)
    if n_fallback:
        notify(f"warning: {n_fallback} constructs have no BPP; using their MFE pairs instead")

    bundles = parallel_map(
        lambda c: structfeat.featurize(c, max_distance=max_distance), constructs
    )
    for c, f in zip(constructs, bundles):
        write_construct_features(c, f, out_dir)
    notify(f"wrote features for {len(constructs)} constructs to '{out_dir}'")

    if table:
        write_feature_table(constructs, bundles, table)
    return 0


def do_filter(data, output, rejected_path, thresholds):
    constructs = parse_dataset(data)
    kept, rejected = evaluation.sn_filter(constructs, thresholds)
    write_dataset(kept, output)
    if rejected_path:
        write_dataset(rejected, rejected_path)
    return 0


def do_split(data, threshold, linkage, mode, sizes, seed, output, datasets_prefix):
    constructs = parse_dataset(data)
    clusters = curation.cluster_sequences(
        [c.sequence for c in constructs], threshold=threshold, method=linkage, mode=mode
    )
    notify(f"{len(constructs)} constructs form {len(set(clusters.tolist()))} clusters")
    assignment = curation.assign_splits(
        clusters, sizes, seed, ids=[c.id for c in constructs]
    )
    notify("split sizes: {}", json.dumps(assignment.counts()))
    curation.write_splits(assignment, output)

    if datasets_prefix:
        by_id = dict(zip(assignment.ids, assignment.splits))
        for split in curation.SPLITS:
            write_dataset(
                [c for c in constructs if by_id[c.id] == split],
                f"{datasets_prefix}.{split}.jsonl",
            )
    return 0


def do_train_linear(data, targets, window, lam, output):
    constructs = parse_dataset(data)
    models = [degscore.train_ridge(constructs, t, w=window, lam=lam) for t in targets]
    degscore.save_linear_models(models, output)
    return 0


def do_train_neural(data, bpp_dir, valid, valid_bpp_dir, extra_data, extra_bpp_dir,
                    hyperparams, config, init, output, history_path):
    constructs = parse_dataset(data, bpp_dir=bpp_dir)
    if extra_data:
        extra = parse_dataset(extra_data, bpp_dir=extra_bpp_dir)
        notify(f"adding {len(extra)} constructs from '{extra_data}'")
        constructs = constructs + extra
    validation = None
    if valid:
        validation = parse_dataset(valid, bpp_dir=valid_bpp_dir)

    if init:
        model = neuralreg.load_neural_model(init)
        notify(f"continuing from '{init}' at step {model.step}")
    else:
        model = neuralreg.init_model(hyperparams)
    trained, history = neuralreg.train(model, constructs, config, validation=validation)
    neuralreg.save_neural_model(trained, output)

    if history_path:
        with atomic_write(history_path, newline="") as fp:
            w = csv.DictWriter(fp, fieldnames=["epoch", "train_loss", "valid_loss"], lineterminator="\n")
            w.writeheader()
            for row in history:
                w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return 0


def load_model(path):
    "A neural checkpoint or a linear model file (one target, or a list of them)."
    with open(path, encoding="utf-8") as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not a model file ({exc.msg})")
    kind = doc.get("model") if isinstance(doc, dict) else None
    if kind == "neuralreg":
        return neuralreg.neural_model_from_doc(doc)
    elif degscore.is_linear_doc(doc):
        return degscore.linear_models_from_doc(doc)
    raise ModelFormatError(f"{path}: unknown model type {kind!r}")


def predict_constructs(model, constructs, model_name):
    entries = {}
    if isinstance(model, neuralreg.NeuralModel):
        for c in constructs:
            pred = neuralreg.predict_neural(model, c)
            entries[c.id] = {col: pred[:, j] for j, col in enumerate(DATA_TYPES)}
    else:
        for c in constructs:
            entries[c.id] = {m.target: degscore.predict_linear(m, c) for m in model}
    return PredictionSet(model_name, entries)


def _model_name(path):
    return os.path.splitext(os.path.basename(path))[0]


def do_predict(model_path, data, bpp_dir, output, all_columns=False):
    model = load_model(model_path)
    constructs = parse_dataset(data, bpp_dir=bpp_dir)
    preds = predict_constructs(model, constructs, _model_name(model_path))
    write_predictions(preds, output, all_columns=all_columns)
    return 0


def do_score(preds_path, data, columns, output, pretty_print):
    preds = read_predictions(preds_path)
    truth = parse_dataset(data)
    report = evaluation.mcrmse(preds, truth, columns)
    doc = report.as_dict()
    print(json.dumps(doc, sort_keys=True))
    if output:
        write_json(doc, output)
    if pretty_print:
        prettyprint.pretty_print_report(report)
    return 0


def do_ensemble(candidates_dir, truth_path, private_path, config, columns, output,
                blend_output, top_k, top_k_output):
    candidates = ensemble.load_candidates(candidates_dir)
    truth = parse_dataset(truth_path)
    private = parse_dataset(private_path) if private_path else None
    result = ensemble.ga_optimize(candidates, truth, config, truth_private=private, columns=columns)
    ensemble.save_spec(result, output)
    if blend_output:
        write_predictions(ensemble.blend(result.spec, candidates), blend_output)
    if top_k_output:
        spec, blended = ensemble.top_k_average(candidates, truth, k=top_k, columns=columns)
        write_predictions(blended, top_k_output)
        notify(f"top-{top_k} average of {', '.join(spec.names)} written to '{top_k_output}'")
    return 0


def do_aggregate(model_path, mrnas_path, column, per_nucleotide, n_boot, seed, output, summary):
    model = load_model(model_path)
    mrnas = aggregate.load_mrnas(mrnas_path)
    if not isinstance(model, neuralreg.NeuralModel) and column not in [m.target for m in model]:
        raise ValidationError("column", f"linear model '{model_path}' does not predict {column}")
    constructs = [m.to_construct() for m in mrnas]
    preds = predict_constructs(model, constructs, _model_name(model_path))
    result = aggregate.rank_eval(
        preds, mrnas, column=column, n_boot=n_boot, seed=seed, per_nucleotide=per_nucleotide
    )
    aggregate.write_rank_table(result, output)
    doc = {
        "column": column,
        "spearman": result.spearman,
        "p_value": result.p_value,
        "p_description": result.p_description,
        "noise_ceiling": result.noise_ceiling,
        "n": len(mrnas),
    }
    notify("spearman: {}; bootstrap noise ceiling {:.3f}", result.p_description, result.noise_ceiling)
    if summary:
        write_json(doc, summary)
    return 0


def do_report(preds_paths, public_path, private_path, ranks_path, column, out_dir):
    if not preds_paths and not ranks_path:
        raise DegkitError("nothing to report: give --preds and/or --ranks")
    os.makedirs(out_dir, exist_ok=True)
    public = parse_dataset(public_path) if public_path else None
    private = parse_dataset(private_path) if private_path else None
    preds = [read_predictions(p) for p in preds_paths]

    rows = []
    for p in preds:
        rows.append(
            {
                "model": p.model_name,
                "public_mcrmse": evaluation.mcrmse(p, public).mcrmse if public else None,
                "private_mcrmse": evaluation.mcrmse(p, private).mcrmse if private else None,
            }
        )
    error_point = None
    if private is not None and all(c.profile_errors for c in private):
        error_point = evaluation.error_mcrmse(private)

    if rows:
        with atomic_write(os.path.join(out_dir, "scores.csv"), newline="") as fp:
            w = csv.DictWriter(fp, fieldnames=["model", "public_mcrmse", "private_mcrmse"], lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: ("" if v is None else v) for k, v in row.items()})
        write_json({"models": rows, "experimental_error_mcrmse": error_point},
                   os.path.join(out_dir, "scores.json"))
        if public is not None and private is not None:
            plots.plot_score_scatter(
                [(r["model"], r["public_mcrmse"], r["private_mcrmse"]) for r in rows],
                os.path.join(out_dir, "mcrmse_scatter.svg"),
                error_point=error_point,
            )

    motif_truth = private if private is not None else public
    if motif_truth is not None:
        tables = {"truth": evaluation.truth_motifs(motif_truth, column)}
        for p in preds:
            tables[p.model_name] = evaluation.prediction_motifs(p, motif_truth, column)
        with atomic_write(os.path.join(out_dir, "motifs.csv"), newline="") as fp:
            w = csv.writer(fp, lineterminator="\n")
            w.writerow(["series", "loop_type", "mean", "count"])
            for name, table in tables.items():
                for label, (mean, count) in table.items():
                    w.writerow([name, label, f"{mean:.6g}", count])
        plots.plot_motif_bars(tables, os.path.join(out_dir, "motifs.svg"), column)

    if ranks_path:
        with open(ranks_path, newline="", encoding="utf-8") as fp:
            table = [
                {k: (v if k == "id" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fp)
            ]
        plots.plot_rate_scatter(table, os.path.join(out_dir, "rates.svg"), column)
    return 0


def do_random_seqs(count, length, seed, prefix, output):
    seqs = neuralreg.random_sequences(count, length, seed)
    neuralreg.write_fasta(seqs, output, prefix=prefix)
    return 0


def do_pseudo_label(model_path, data, bpp_dir, output):
    model = load_model(model_path)
    if not isinstance(model, neuralreg.NeuralModel):
        raise ModelFormatError(f"{model_path}: pseudo-labelling needs a neural checkpoint")
    unlabeled = parse_dataset(data, bpp_dir=bpp_dir)
    labeled = neuralreg.pseudo_label_augment(model, unlabeled)
    write_dataset(labeled, output)
    return 0
