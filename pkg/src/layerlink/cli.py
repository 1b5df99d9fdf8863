"""Command-line entry point: ``layerlink <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 parse error, 3 fit did not
converge (results are still written), 4 undefined metric.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as lio
from .benchmark import (BenchmarkSpec, PRESETS, generate_benchmark, generate_mixed_structure,
                        preset)
from .em import INIT_STRATEGIES, EmConfig, run_em
from .evaluation import (UndefinedMetricError, cross_validated_auc, make_folds,
                         whole_dataset_auc)
from .interdependence import (cluster_affinity_matrices, greedy_layer_selection,
                              top_down_removal)
from .model import Mode, hard_assignment, normalize_memberships

logger = logging.getLogger("layerlink")

OUTPUT_DIR_ENV = "LAYERLINK_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NOT_CONVERGED, EXIT_UNDEFINED = 0, 1, 2, 3, 4

MODE_CHOICES = [m.value for m in Mode] + ["full", "diagonal"]

# built-in defaults; a --config file overrides these and flags override both
DEFAULTS = {
    "input": None,
    "output_dir": None,
    "k": None,
    "mode": "full",
    "restarts": 5,
    "max_iter": 500,
    "tol": 0.1,
    "window": 10,
    "check_every": 1,
    "init": "portfolio",
    "seed": 0,
    "self_loops": None,
    # generate
    "preset": None,
    "n": 300,
    "layers": 4,
    "p": 0.9,
    "mu": 0.0,
    "gamma": -3.0,
    "kmin": 3,
    "kmax": 30,
    # predict / interdep
    "target_layer": None,
    "training_layers": None,
    "whole_dataset": False,
    "mask_in": None,
    "mask_out": None,
    "direction": "greedy",
    "max_layers": None,
    "min_layers": 1,
    # cluster-layers
    "n_clusters": None,
    "w_file": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("shared options")
    g.add_argument("--input", help="edge-list file")
    g.add_argument("--output-dir", help=f"where to write results (default ${OUTPUT_DIR_ENV} or .)")
    g.add_argument("--k", type=int, help="number of groups")
    g.add_argument("--mode", choices=MODE_CHOICES,
                   help="model variant; 'full'/'diagonal' follow the graph's directedness")
    g.add_argument("--restarts", type=int, help="random restarts (default 5)")
    g.add_argument("--max-iter", type=int, help="iteration cap per restart (default 500)")
    g.add_argument("--tol", type=float, help="convergence tolerance (default 0.1)")
    g.add_argument("--window", type=int, help="checks below tolerance needed to stop (default 10)")
    g.add_argument("--check-every", type=int, help="iterations between objective checks (default 1)")
    g.add_argument("--init", choices=INIT_STRATEGIES, help="restart initialisation scheme")
    g.add_argument("--self-loops", type=_bool, help="include i==i dyads (true/false)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--config", help="JSON file of option values; flags take precedence")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="layerlink", description="Multilayer mixed-membership block model")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    gen = sub.add_parser("generate", parents=[common], help="write a synthetic network")
    gen.add_argument("--preset", choices=sorted(PRESETS), help="mixed-structure preset")
    gen.add_argument("--n", type=int, help="nodes (benchmark, default 300)")
    gen.add_argument("--layers", type=int, help="layers (benchmark, default 4)")
    gen.add_argument("--p", type=float, help="layer interdependence (default 0.9)")
    gen.add_argument("--mu", type=float, help="mixing (default 0)")
    gen.add_argument("--gamma", type=float, help="degree exponent (default -3)")
    gen.add_argument("--kmin", type=int, help="minimum degree (default 3)")
    gen.add_argument("--kmax", type=int, help="maximum degree (default 30)")

    sub.add_parser("fit", parents=[common], help="fit the model")

    pred = sub.add_parser("predict", parents=[common], help="cross-validated link prediction")
    pred.add_argument("--target-layer", help="layer index or name")
    pred.add_argument("--training-layers", help="comma-separated layers (default all)")
    pred.add_argument("--whole-dataset", action="store_true", default=None,
                      help="fit everything and rank all dyads of all layers")
    pred.add_argument("--mask-in", help="reuse a fold mask file")
    pred.add_argument("--mask-out", help="also save the fold mask here")

    inter = sub.add_parser("interdep", parents=[common], help="layer interdependence search")
    inter.add_argument("--target-layer", help="layer index or name")
    inter.add_argument("--direction", choices=["greedy", "topdown"])
    inter.add_argument("--max-layers", type=int, help="greedy stopping size (default L)")
    inter.add_argument("--min-layers", type=int, help="top-down stopping size (default 1)")

    clu = sub.add_parser("cluster-layers", parents=[common], help="cluster affinity matrices")
    clu.add_argument("--n-clusters", type=int)
    clu.add_argument("--w-file", help="affinities from an earlier fit (otherwise fit --input)")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the optional JSON file and explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise lio.ParseError(args.config, exc.lineno, exc.msg) from None
        if not isinstance(data, dict):
            raise lio.ParseError(args.config, 0, "config must be a JSON object")
        for key, val in data.items():
            norm = key.replace("-", "_")
            if norm not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            cfg[norm] = val
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["output_dir"] is None:
        cfg["output_dir"] = os.environ.get(OUTPUT_DIR_ENV, ".")
    cfg["command"] = args.command
    return cfg


def _em_config(cfg: dict, graph, k=None) -> EmConfig:
    k = cfg["k"] if k is None else k
    if k is None:
        raise UsageError("--k is required")
    mode = cfg["mode"]
    if mode in ("full", "diagonal"):
        mode = Mode.for_graph(graph, diagonal=(mode == "diagonal"))
    return EmConfig(
        k_groups=int(k), mode=mode, n_restarts=int(cfg["restarts"]),
        max_iterations=int(cfg["max_iter"]), convergence_window=int(cfg["window"]),
        convergence_tolerance=float(cfg["tol"]), check_every=int(cfg["check_every"]),
        seed=int(cfg["seed"]), init=cfg["init"], allow_self_loops=cfg["self_loops"],
    )


def _load_graph(cfg: dict):
    if not cfg["input"]:
        raise UsageError("--input is required")
    return lio.parse_edge_list(cfg["input"])


def _layer_index(graph, token) -> int:
    token = str(token).strip()
    if token in graph.names:
        return graph.names.index(token)
    try:
        idx = int(token)
    except ValueError:
        raise UsageError(f"unknown layer {token!r}") from None
    if not 0 <= idx < graph.n_layers:
        raise UsageError(f"layer index {idx} out of range [0, {graph.n_layers})")
    return idx


def _target(cfg, graph) -> int:
    if cfg["target_layer"] is None:
        raise UsageError("--target-layer is required")
    return _layer_index(graph, cfg["target_layer"])


def _out(cfg) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report_config(cfg: dict, em: EmConfig | None = None) -> dict:
    rep = {k: v for k, v in cfg.items()}
    if em is not None:
        rep["resolved_mode"] = em.mode.value
    return rep


# ---- commands ------------------------------------------------------------

def cmd_generate(cfg: dict) -> int:
    out = _out(cfg)
    seed = int(cfg["seed"])
    report = {"config": _report_config(cfg)}
    if cfg["preset"]:
        spec = preset(cfg["preset"], seed)
        graph, truth = generate_mixed_structure(spec)
        report["affinities"] = spec.affinities()
    else:
        spec = BenchmarkSpec(
            n_nodes=int(cfg["n"]), n_layers=int(cfg["layers"]),
            k_groups=int(cfg["k"] if cfg["k"] is not None else 5),
            interdependence=float(cfg["p"]), mixing=float(cfg["mu"]),
            degree_exponent=float(cfg["gamma"]), k_min=int(cfg["kmin"]),
            k_max=int(cfg["kmax"]), seed=seed,
        )
        graph, truth = generate_benchmark(spec)
        lio.write_table(["node"] + [f"layer_{a}" for a in graph.names],
                        ([lab] + list(truth.partitions[:, i])
                         for i, lab in enumerate(graph.labels)),
                        out / "partitions.tsv")
    lio.write_edge_list(graph, out / "network.txt")
    lio.write_membership(truth.membership, graph.labels, out / "truth.txt")
    report["n_nodes"] = graph.n_nodes
    report["layer_edge_counts"] = graph.layer_edge_counts()
    lio.write_report(report, out / "generate_report.json")
    return EXIT_OK


def _fit_artifacts(fit, graph, out: Path):
    params = fit.params
    u = normalize_memberships(params.u)
    lio.write_membership(u.values, graph.labels, out / "u.txt")
    if params.mode.directed:
        v = normalize_memberships(params.v)
        lio.write_membership(v.values, graph.labels, out / "v.txt")
    lio.write_affinities(params.w, graph.names, out / "w.txt")
    return u


def cmd_fit(cfg: dict) -> int:
    graph = _load_graph(cfg)
    em = _em_config(cfg, graph)
    fit = run_em(graph, em)
    out = _out(cfg)
    u = _fit_artifacts(fit, graph, out)
    lio.write_report({
        "config": _report_config(cfg, em),
        "objective": fit.objective,
        "log_likelihood": fit.log_likelihood,
        "n_iterations": fit.n_iterations,
        "restart_index": fit.restart_index,
        "restart_objectives": fit.restart_objectives,
        "converged": fit.converged,
        "degenerate_updates": fit.n_degenerate,
        "isolated_nodes": [graph.labels[i] for i in np.flatnonzero(u.isolated)],
        "hard_assignment": hard_assignment(u),
    }, out / "fit_report.json")
    if not fit.converged:
        logger.warning("no restart converged within %d iterations", em.max_iterations)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _score_rows(scores_list, graph):
    labels, names = graph.labels, graph.names
    for fold, s in scores_list:
        for i, j, a, sc, t in zip(s.i, s.j, s.layer, s.score, s.truth):
            yield fold, names[a], labels[i], labels[j], float(sc), int(bool(t))


def cmd_predict(cfg: dict) -> int:
    graph = _load_graph(cfg)
    out = _out(cfg)
    if cfg["whole_dataset"]:
        em = _em_config(cfg, graph)
        value, scores, fit = whole_dataset_auc(graph, em)
        lio.write_table(["fold", "layer", "i", "j", "score", "link"],
                        _score_rows([("all", scores)], graph), out / "scores.tsv")
        lio.write_report({"config": _report_config(cfg, em), "auc": value,
                          "converged": fit.converged}, out / "predict_report.json")
        return EXIT_OK
    target = _target(cfg, graph)
    em = _em_config(cfg, graph)
    layers = (list(range(graph.n_layers)) if cfg["training_layers"] is None
              else [_layer_index(graph, t) for t in str(cfg["training_layers"]).split(",")])
    if target not in layers:
        raise UsageError("--training-layers must include the target layer")
    if cfg["mask_in"]:
        mask = lio.parse_mask(cfg["mask_in"])
        if mask.target_layer != target:
            raise UsageError("mask file was made for a different target layer")
    else:
        mask = make_folds(graph, target, int(cfg["seed"]))
    if cfg["mask_out"]:
        lio.write_mask(mask, cfg["mask_out"])
    res = cross_validated_auc(graph, target, layers, em, mask=mask)
    lio.write_table(["fold", "layer", "i", "j", "score", "link"],
                    _score_rows(enumerate(res.scores), graph), out / "scores.tsv")
    lio.write_report({
        "config": _report_config(cfg, em),
        "target_layer": graph.names[target],
        "training_layers": [graph.names[a] for a in layers],
        "fold_aucs": res.fold_aucs,
        "mean_auc": res.mean,
        "std_auc": res.std,
        "mask_seed": mask.seed,
        "mask_digest": res.mask_digest,
    }, out / "predict_report.json")
    return EXIT_OK


def cmd_interdep(cfg: dict) -> int:
    graph = _load_graph(cfg)
    target = _target(cfg, graph)
    em = _em_config(cfg, graph)
    seed = int(cfg["seed"])
    if cfg["direction"] == "greedy":
        max_layers = graph.n_layers if cfg["max_layers"] is None else int(cfg["max_layers"])
        rep = greedy_layer_selection(graph, target, max_layers, em, seed)
    else:
        rep = top_down_removal(graph, target, int(cfg["min_layers"]), em, seed)
    names = graph.names
    out = _out(cfg)
    lio.write_table(["step", "layers", "mean_auc", "std_auc"],
                    ((step, [names[a] for a in layers], mean, std)
                     for step, layers, mean, std in rep.rows()),
                    out / "interdep.tsv")
    lio.write_report({
        "config": _report_config(cfg, em),
        "target_layer": names[target],
        "direction": rep.direction,
        "selection_order": [names[a] for a in rep.selection_order],
        "candidates": [{names[b]: {"mean": m, "std": s} for b, (m, s) in c.items()}
                       for c in rep.candidates],
        "trajectory": [{"layers": [names[a] for a in t.layers], "mean": t.mean,
                        "std": t.std, "fold_aucs": t.fold_aucs} for t in rep.trajectory],
        "mask_digest": rep.mask_digest,
    }, out / "interdep_report.json")
    return EXIT_OK


def cmd_cluster_layers(cfg: dict) -> int:
    if cfg["n_clusters"] is None:
        raise UsageError("--n-clusters is required")
    n_clusters = int(cfg["n_clusters"])
    report = {"config": _report_config(cfg)}
    if cfg["w_file"]:
        names, w = lio.parse_affinities(cfg["w_file"])
    else:
        graph = _load_graph(cfg)
        em = _em_config(cfg, graph)
        fit = run_em(graph, em)
        names, w = list(graph.names), fit.params.w
        report["config"] = _report_config(cfg, em)
        report["converged"] = fit.converged
    if n_clusters > len(names):
        raise UsageError(f"--n-clusters {n_clusters} exceeds the number of layers ({len(names)})")
    emb = cluster_affinity_matrices(w, n_clusters, int(cfg["seed"]))
    out = _out(cfg)
    lio.write_table(["layer", "vector", "cluster", "pca_x", "pca_y"],
                    ((name, list(pt), int(c), float(xy[0]), float(xy[1]))
                     for name, pt, c, xy in zip(names, emb.points, emb.cluster_labels,
                                                emb.pca_coords)),
                    out / "clusters.tsv")
    report["inertia"] = emb.inertia
    lio.write_report(report, out / "clusters_report.json")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "interdep": cmd_interdep,
    "cluster-layers": cmd_cluster_layers,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except lio.ParseError as exc:
        print(f"layerlink: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except UndefinedMetricError as exc:
        print(f"layerlink: undefined metric: {exc}", file=sys.stderr)
        return EXIT_UNDEFINED
    except (UsageError, ValueError, IndexError, NotImplementedError, OSError) as exc:
        print(f"layerlink: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
