"""Command-line entry point: ``sard gen | train | report | dissect | lemma | sweep``.

Every command reads an experiment config (``--config``); flags override the
file.  Outputs go below ``output_dir`` and each command writes a
``manifest.json`` with the config hash next to its results.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, manifest_hash, parse_value
from .corpus import load_cohort, save_cohort, split_cohort
from .evaluation import MetricReport, auc_prc, auc_roc, delong_test, logit, ppv_at_sensitivity
from .introspection import attention_maps, dissect, visit_importance, write_matrix_csv
from .lemma import lemma_sweep, write_sweep_csv
from .model import SardConfig, cooccurrence_embeddings, init_model, load_model, pack_cohort, predict_proba, save_model
from .plots import plot_heatmap, plot_lines, plot_pr, plot_roc, plot_scatter
from .synthgen import ClaimsGenParams, ClusterParams, gen_claims_cohort, gen_cluster_dataset, gen_cluster_splits
from .training import (MLPConfig, PROCEDURES, TrainConfig, finetune, finetune_alpha_grid, pretrain_rd,
                       run_appendixF_procedures, teacher_probs, write_history_csv)
from .windowed_linear import LinearModel, WindowSet, select_windows

VARIANTS = {"sa": "self_attention", "gru": "gru", "identity": "identity"}
HEAD_FLAGS = {"conv": "conv", "sum": "summing"}


def _out(cfg):
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(path, cfg, command, **extra):
    obj = {"command": command, "config_hash": manifest_hash(cfg), "config": cfg}
    obj.update(extra)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True), encoding="utf-8")


def _gen_params(cfg):
    return ClaimsGenParams.from_json(cfg["generator"])


def _cohort_path(cfg):
    return Path(cfg["output_dir"]) / "cohort.jsonl"


def _splits(cfg):
    cohort = load_cohort(_cohort_path(cfg))
    return split_cohort(cohort, tuple(cfg["split"]["fractions"]), cfg["split"]["seed"])


def _run_name(variant, head, no_rd):
    return f"{variant}_{head}" + ("_nord" if no_rd else "")


# ---------------------------------------------------------------------------


def cmd_gen(cfg, kind="claims"):
    out = _out(cfg)
    seed = cfg["seed"]
    if kind == "claims":
        params = _gen_params(cfg)
        cohort = gen_claims_cohort(params, seed)
        save_cohort(cohort, out / "cohort.jsonl")
        meta = {"params": params.to_json(), "seed": seed,
                "planted_nonzero": [[int(i), float(w)] for i, w in enumerate(params.weight_vector()) if w]}
        (out / "cohort.meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")
        files = ["cohort.jsonl", "cohort.meta.json"]
    elif kind == "cluster":
        data = gen_cluster_dataset(ClusterParams(**cfg["cluster"]), seed)
        data.to_csv(out / "cluster.csv")
        files = ["cluster.csv", "cluster.csv.meta.json"]
    else:
        raise ConfigError(f"unknown kind {kind!r}")
    _manifest(out / f"manifest_gen_{kind}.json", cfg, "gen", files=files)
    return [out / f for f in files]


def _teacher(cfg, train, val):
    cands = [math.inf if o is None else o for o in cfg["windows"]["candidates"]]
    ws, teacher, auc = select_windows(cands, cfg["windows"]["n_windows"], train, val, cfg["lambda_grid"])
    teacher.window_set = ws
    return teacher, auc


def cmd_train(cfg, no_rd=False):
    out = _out(cfg)
    train, val, _ = _splits(cfg)
    mcfg = SardConfig(**cfg["model"])
    tcfg = TrainConfig(**cfg["train"], alpha_grid=cfg["alpha_grid"], seed=cfg["seed"])
    name = _run_name(mcfg.encoder_variant, mcfg.head_variant, no_rd)
    run = out / "models" / name
    run.mkdir(parents=True, exist_ok=True)

    teacher_path = out / "teacher.json"
    if teacher_path.exists():
        teacher = LinearModel.load(teacher_path)
    else:
        teacher, _ = _teacher(cfg, train, val)
        teacher.save(teacher_path)

    phi = cooccurrence_embeddings(train, mcfg.d_e, cfg["seed"]) if cfg["init"] == "cooccurrence" else None
    model = init_model(mcfg, len(train.vocab), cfg["seed"], phi)
    history = []
    if no_rd:
        history.append(dict(phase="pretrain", epoch=0, status="skipped"))
    else:
        model, h = pretrain_rd(model, teacher, train, val, tcfg)
        history += h
        save_model(model, run / "pretrain.npz")
    if cfg["tune_alpha"] and not no_rd:
        model, h, alpha = finetune_alpha_grid(model, teacher, train, val, tcfg)
    else:
        alpha = 0.0 if no_rd else cfg["alpha"]
        model, h = finetune(model, teacher, train, val, tcfg, alpha)
    history += h
    save_model(model, run / "final.npz")
    write_history_csv(history, run / "history.csv")
    val_auc = auc_roc(predict_proba(model, pack_cohort(val, mcfg)), val.labels)
    metrics = {"val_auc": val_auc, "alpha": alpha, "pretrained": not no_rd}
    (run / "metrics.json").write_text(json.dumps(metrics, indent=1), encoding="utf-8")
    _manifest(run / "manifest.json", cfg, "train", run=name)
    return run, metrics


def _runs(out):
    root = out / "models"
    return sorted(p for p in root.iterdir() if (p / "final.npz").exists()) if root.exists() else []


def cmd_report(cfg):
    out = _out(cfg)
    rep = out / "report"
    rep.mkdir(exist_ok=True)
    _, _, test = _splits(cfg)
    teacher = LinearModel.load(out / "teacher.json")
    y = test.labels
    scores = {"teacher": teacher_probs(teacher, test)}
    models = {}
    for run in _runs(out):
        m = load_model(run / "final.npz")
        models[run.name] = m
        scores[run.name] = predict_proba(m, pack_cohort(test, m.config))

    with open(rep / "table.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "auc_roc", "auc_prc"])
        for name, s in scores.items():
            w.writerow([name, f"{auc_roc(s, y):.6f}", f"{auc_prc(s, y):.6f}"])
    with open(rep / "delong.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model_a", "model_b", "auc_a", "auc_b", "z", "p"])
        names = list(scores)
        for i, a in enumerate(names):
            for b in names[i:]:
                r = delong_test(scores[a], scores[b], y)
                w.writerow([a, b, f"{r.auc_a:.6f}", f"{r.auc_b:.6f}", f"{r.z:.6f}", f"{r.p:.6g}"])

    rc = cfg["report"]
    tags = sorted({t for r in test.records for t in r.subgroups})
    with open(rep / "subgroup_ppv.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subgroup", "n", "n_pos", "model", "ppv"])
        for tag in tags:
            idx = np.array([i for i, r in enumerate(test.records) if tag in r.subgroups])
            n_pos = int(y[idx].sum())
            if n_pos < rc["min_positives"]:
                continue
            for name, s in scores.items():
                w.writerow([tag, idx.size, n_pos, name, f"{ppv_at_sensitivity(s[idx], y[idx], rc['ppv_sensitivity']):.6f}"])

    for name, m in models.items():
        plot_scatter(logit(scores["teacher"]), logit(scores[name]), rep / f"logits_{name}.svg")
        if m.config.head_variant == "conv":
            d = dissect(m, teacher, test, rc["dissect_threshold"])
            d.to_csv(rep / f"dissect_{name}.csv", teacher.window_set, test.vocab)
    plot_roc(scores, y, rep / "roc.svg")
    plot_pr(scores, y, rep / "pr.svg")
    MetricReport({k: auc_roc(s, y) for k, s in scores.items()}, {"n": len(y), "prevalence": float(y.mean())}
                 ).to_json(rep / "metrics.json")
    _manifest(rep / "manifest.json", cfg, "report")
    return rep


def cmd_dissect(cfg, run, patient_index=0):
    out = _out(cfg)
    _, _, test = _splits(cfg)
    teacher = LinearModel.load(out / "teacher.json")
    model = load_model(out / "models" / run / "final.npz")
    dst = out / "dissect" / run
    dst.mkdir(parents=True, exist_ok=True)
    rc = cfg["report"]
    if model.config.head_variant == "conv":
        d = dissect(model, teacher, test, rc["dissect_threshold"])
        d.to_csv(dst / "dissection.csv", teacher.window_set, test.vocab)
        d.top_k_csv(dst / "top_k.csv", rc["top_k"])
        vi = visit_importance(model, test.records[patient_index], test)
        with open(dst / "visit_importance.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "days_before", "score"])
            for j in np.flatnonzero(vi.mask):
                w.writerow([j, int(vi.days_before[j]), f"{vi.scores[j]:.8g}"])
    if model.config.encoder_variant == "self_attention":
        maps = attention_maps(model, test.records[patient_index], test)
        n = int(min(len(test.records[patient_index].visits), model.config.n_v))
        for layer, heads in enumerate(maps):
            for h, mat in enumerate(heads):
                write_matrix_csv(mat, dst / f"attention_l{layer}_h{h}.csv")
                plot_heatmap(mat[:n, :n], dst / f"heatmap_l{layer}_h{h}.svg", f"layer {layer}, head {h}")
    _manifest(dst / "manifest.json", cfg, "dissect", run=run, patient_index=patient_index)
    return dst


def cmd_lemma(cfg):
    out = _out(cfg)
    lc = cfg["lemma"]
    gen = dict(cfg["generator"], n_patients=lc["n_patients"], vocab_size=lc["vocab_size"])
    names = ClaimsGenParams(vocab_size=lc["vocab_size"]).code_names
    # keep only planted codes that exist in the smaller vocabulary
    gen["planted_weights"] = {k: {c: v for c, v in ws.items() if c in names}
                              for k, ws in cfg["generator"]["planted_weights"].items()}
    params = ClaimsGenParams.from_json(gen)
    cohort = gen_claims_cohort(params, lc["seed"])
    teacher = LinearModel(params.weight_vector(), params.intercept, math.inf, params.planted_windows)
    rows = lemma_sweep(teacher, cohort, lc["n_freqs"], lc["sharpness"], gain=lc["gain"])
    write_sweep_csv(rows, out / "lemma_sweep.csv")
    plot_lines(rows, "n_freq", ["max_err", "mean_err"], out / "lemma_sweep.svg", logy=True, ylabel="|p_sard - p_linear|")
    _manifest(out / "manifest_lemma.json", cfg, "lemma")
    return rows


def cmd_sweep(cfg, param, values):
    out = _out(cfg)
    key = {"gamma": "gamma", "beta": "beta", "n": "N"}[param]
    mlp = MLPConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg["mlp"].items()})
    rows = []
    for value in values:
        cp = dict(cfg["cluster"], **{key: int(value) if key == "N" else float(value)})
        params = ClusterParams(**cp)
        for seed in cfg["sweep"]["seeds"]:
            res, det = run_appendixF_procedures(gen_cluster_splits(params, seed, mlp.n_val, mlp.n_test), mlp, seed)
            rows.append(dict(param=param, value=value, seed=seed, **{p: res[p] for p in PROCEDURES},
                             teacher=res["teacher"], n_selected=det["n_selected"], alpha=det["alpha"]))
    fields = ["param", "value", "seed", *PROCEDURES, "teacher", "n_selected", "alpha"]
    with open(out / f"sweep_{param}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    summary = []
    for value in values:
        sel = [r for r in rows if r["value"] == value]
        med = {p: float(np.median([r[p] for r in sel])) for p in PROCEDURES}
        summary.append(dict(value=value, **med, rd_minus_nn=med["ReverseDistill"] - med["StandardNN"]))
    plot_lines(summary, "value", list(PROCEDURES), out / f"sweep_{param}_median.svg", xlabel=param, ylabel="median test AUC")
    _manifest(out / f"manifest_sweep_{param}.json", cfg, "sweep", param=param, values=list(values))
    return rows, summary


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="sard", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, help="master seed (overrides seed)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set train.lr=0.001")

    sp = sub.add_parser("gen", help="generate a claims cohort or a cluster dataset")
    common(sp)
    sp.add_argument("--kind", choices=("claims", "cluster"), default="claims")
    sp = sub.add_parser("train", help="teacher, RD pretraining and fine-tuning")
    common(sp)
    sp.add_argument("--no-rd", action="store_true", help="skip reverse-distillation pretraining")
    sp.add_argument("--variant", choices=sorted(VARIANTS))
    sp.add_argument("--head", choices=sorted(HEAD_FLAGS))
    sp = sub.add_parser("report", help="evaluate every trained model on the test split")
    common(sp)
    sp = sub.add_parser("dissect", help="network dissection, visit importance and attention maps")
    common(sp)
    sp.add_argument("--run", required=True, help="model directory name under models/")
    sp.add_argument("--patient", type=int, default=0, help="test-split patient index")
    sp = sub.add_parser("lemma", help="replication-error sweep of the constructed network")
    common(sp)
    sp = sub.add_parser("sweep", help="cluster-data procedures over one parameter")
    common(sp)
    sp.add_argument("--param", choices=("gamma", "beta", "n"), required=True)
    sp.add_argument("--values", type=float, nargs="+", required=True)
    return p


def _config_from_args(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k] = parse_value(v)
    if args.out:
        overrides["output_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "variant", None):
        overrides["model.encoder_variant"] = VARIANTS[args.variant]
    if getattr(args, "head", None):
        overrides["model.head_variant"] = HEAD_FLAGS[args.head]
    return load_config(args.config, overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        # validate every section up front
        SardConfig(**cfg["model"])
        TrainConfig(**cfg["train"], alpha_grid=cfg["alpha_grid"], seed=cfg["seed"])
        WindowSet([math.inf if o is None else o for o in cfg["windows"]["candidates"]])
        ClusterParams(**cfg["cluster"])
    except (ConfigError, TypeError, ValueError) as exc:
        print(f"sard: config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "gen":
        for f in cmd_gen(cfg, args.kind):
            print(f)
    elif args.command == "train":
        run, metrics = cmd_train(cfg, args.no_rd)
        print(run, json.dumps(metrics))
    elif args.command == "report":
        print(cmd_report(cfg))
    elif args.command == "dissect":
        print(cmd_dissect(cfg, args.run, args.patient))
    elif args.command == "lemma":
        for r in cmd_lemma(cfg):
            print(json.dumps(r))
    elif args.command == "sweep":
        _, summary = cmd_sweep(cfg, args.param, args.values)
        for r in summary:
            print(json.dumps(r))
    return 0


if __name__ == "__main__":
    sys.exit(main())
