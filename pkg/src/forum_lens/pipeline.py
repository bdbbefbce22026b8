"""Stage orchestration: each stage reads the shared context and writes only its own directory."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from .backbone import (BipartiteIncidence, edge_significance_analytic, edge_significance_montecarlo,
                       filter_backbone, sample_null_networks)
from .config import RunConfig
from .data import EventLog, Kind, link_records, parse_event_log, write_events, write_learners
from .descriptives import activity_series, participation_summary, survey_response_rate
from .dialogue import CodedCorpus, KnowledgePhase, PhaseSchema, agreement, code_distribution, load_codes
from .diffusion import diffusion_summary, random_seed_node, replicate_si, simulate_si_temporal
from .experiment import (EmailSpec, analyze_engagement, assign_treatments, compose_email, read_email_log,
                         select_threads)
from .network import CommNetwork, Scope, build_conetwork, window_slices
from .robustness import attack_curve, critical_set, vulnerability_index
from .seeding import derive_seed
from .typology import FeatureConfig, assign_types, bnmf, build_feature_matrix, profile_types

logger = logging.getLogger(__name__)

STAGES = ("ingest", "describe", "network", "backbone", "vuln", "diffuse", "dialogue", "typology", "experiment",
          "plots")
DEPENDENCIES = {
    "ingest": (),
    "describe": ("ingest",),
    "network": ("ingest",),
    "backbone": ("network",),
    "vuln": ("network",),
    "diffuse": ("network",),
    "dialogue": ("ingest",),
    "typology": ("ingest",),
    "experiment": ("ingest",),
    "plots": (),
}
STAGE_DIRS = {"ingest": "ingest", "describe": "describe", "network": "networks", "backbone": "backbone",
              "vuln": "vuln", "diffuse": "diffusion", "dialogue": "dialogue", "typology": "typology",
              "experiment": "experiment", "plots": "plots"}
EXPERIMENT_ACTIONS = ("assign", "select", "compose", "analyze")
WEEK = 7 * 86400


class PipelineError(RuntimeError):
    pass


@dataclass
class Context:
    cfg: RunConfig
    out: Path
    log: EventLog | None = None
    course_networks: dict[str, CommNetwork] = field(default_factory=dict)
    experiment_actions: tuple[str, ...] = EXPERIMENT_ACTIONS

    def stage_dir(self, stage: str) -> Path:
        d = self.out / STAGE_DIRS[stage]
        if d.exists():
            shutil.rmtree(d)
        d.mkdir(parents=True)
        return d


# --------------------------------------------------------------------------
# writers (stable formatting: sorted keys, repr floats, "\n" line endings)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# shared loaders


def load_inputs(cfg: RunConfig) -> EventLog:
    events = cfg.input_path("events")
    if events is None or not events.exists():
        raise PipelineError(f"events file not found: {events}")
    learners = cfg.input_path("learners")
    log = parse_event_log(events, learners if learners and learners.exists() else None, cfg.course)
    survey = cfg.input_path("survey")
    if survey is not None and survey.exists():
        log = link_records(log, survey)
    return log


def load_corpus(cfg: RunConfig, log: EventLog) -> CodedCorpus | None:
    path = cfg.input_path("codes")
    if path is None or not path.exists():
        return None
    return load_codes(path, log)


def course_scopes(cfg: RunConfig, log: EventLog) -> list[Scope]:
    """Whole-course scopes: all sub-forums together, then each (or the listed) sub-forum."""
    spec = cfg.get("network", "subforums").strip()
    if spec == "all":
        subs: list[str] = []
    elif spec == "each":
        subs = log.subforums()
    else:
        subs = cfg.getlist("network", "subforums")
    return [Scope()] + [Scope(subforum=s) for s in subs]


def build_campaign(cfg: RunConfig, log: EventLog, seed: int | None = None) -> list[EmailSpec]:
    """Weekly emails for every known learner; week w is composed at course start + w weeks."""
    seed = cfg.stage_seed("experiment") if seed is None else seed
    groups = assign_treatments(sorted(log.learners), seed)
    n = cfg.getint("experiment", "threads")
    emails = []
    for week in range(1, cfg.getint("experiment", "weeks") + 1):
        as_of = min(cfg.course.start + week * WEEK, cfg.course.end)
        fixed = {}
        for learner, group in groups.items():
            method = group.selection
            if method in ("most_popular", "highest_reputation"):
                if method not in fixed:
                    fixed[method] = select_threads(log, as_of, method, n, intro_subforums=cfg.intro_subforums)
                sel = fixed[method]
            else:
                sel = select_threads(log, as_of, method, n, derive_seed(seed, week, learner),
                                     intro_subforums=cfg.intro_subforums)
            emails.append(compose_email(learner, group, sel.threads, log, week))
    return emails


# --------------------------------------------------------------------------
# stages


def stage_ingest(ctx: Context) -> None:
    ctx.log = load_inputs(ctx.cfg)
    d = ctx.stage_dir("ingest")
    write_events(ctx.log, d / "events.csv")
    write_learners(ctx.log, d / "learners.csv")
    kinds = {k.value: sum(1 for e in ctx.log.events if e.kind is k) for k in Kind}
    write_json(d / "summary.json", {
        "events": len(ctx.log.events),
        "events_by_kind": kinds,
        "learners": len(ctx.log.learners),
        "enrolled_count": ctx.log.enrolled_count,
        "rejected": [str(r) for r in ctx.log.rejected],
        "survey_unmatched": list(ctx.log.survey_unmatched),
    })


def stage_describe(ctx: Context) -> None:
    log, cfg = ctx.log, ctx.cfg
    d = ctx.stage_dir("describe")
    width = cfg.getint("run", "window")
    series = {k: activity_series(log, {k}, width) for k in Kind}
    starts = series[Kind.POST].bucket_start
    write_csv(d / "activity.csv", ["bucket_start"] + [k.value for k in Kind],
              ([s] + [series[k].counts[i] for k in Kind] for i, s in enumerate(starts)))
    ps = participation_summary(log)
    write_json(d / "participation.json", {
        "posters": ps.posters,
        "viewers_only": ps.viewers_only,
        "inactive_enrolled": ps.inactive_enrolled,
        "enrolled": ps.enrolled,
        "posts_per_poster": None if ps.posts_per_poster is None else vars(ps.posts_per_poster),
    })
    write_json(d / "survey_rate.json", survey_response_rate(log))


def stage_network(ctx: Context) -> None:
    log, cfg = ctx.log, ctx.cfg
    d = ctx.stage_dir("network")
    threshold = cfg.getint("network", "dense_edge_warning")
    scopes = course_scopes(cfg, log)
    windows = window_slices(log, cfg.getint("run", "window"))
    rows = []
    for scope in scopes + [Scope(window=w) for w in windows]:
        net = build_conetwork(log, scope)
        if net.n_edges > threshold:
            logger.warning("network %s has %d edges (> %d); dense networks are hard to interpret",
                           scope.label, net.n_edges, threshold)
        net.write(d / scope.label)
        rows.append([scope.label, scope.subforum or "all", "" if scope.window is None else scope.window.index,
                     net.n_nodes, net.n_edges])
        if scope.window is None:
            ctx.course_networks[scope.label] = net
    write_csv(d / "scopes.csv", ["scope", "subforum", "window", "n_nodes", "n_edges"], rows)


def _analysis_networks(ctx: Context):
    for label, net in ctx.course_networks.items():
        if net.n_nodes == 0:
            logger.info("skipping empty scope %s", label)
            continue
        yield label, net


def stage_backbone(ctx: Context) -> None:
    cfg, log = ctx.cfg, ctx.log
    d = ctx.stage_dir("backbone")
    alpha = cfg.getfloat("backbone", "alpha")
    method = cfg.get("backbone", "method")
    if method not in ("analytic", "mc"):
        raise PipelineError("[backbone] method must be analytic or mc")
    correction = "bonferroni" if cfg.getbool("backbone", "bonferroni") else None
    seed = cfg.stage_seed("backbone")
    summary = []
    for label, net in _analysis_networks(ctx):
        inc = BipartiteIncidence.from_log(log, net.scope)
        meta = {"alpha": alpha, "method": method, "correction": correction, "scope": net.scope.to_dict()}
        if method == "analytic":
            sig = edge_significance_analytic(inc, net)
        else:
            ensemble = sample_null_networks(inc, cfg.getint("backbone", "replicates"), derive_seed(seed, label))
            sig = edge_significance_montecarlo(net, ensemble)
            meta["null"] = ensemble.metadata()
        bb = filter_backbone(net, sig, alpha, correction)
        sd = d / label
        sd.mkdir()
        write_csv(sd / "significance.csv", ["learner_a", "learner_b", "w", "mu", "p", "method"],
                  ([a, b, s.weight, s.expected, s.p_value, s.method] for (a, b), s in sorted(sig.items())))
        write_csv(sd / "edges.csv", ["learner_a", "learner_b", "weight"],
                  ([a, b, w] for (a, b), w in sorted(bb.network.edges.items())))
        meta.update({"retained_edges": bb.retained, "tested_edges": bb.tested, "retention": bb.retention})
        write_json(sd / "backbone.json", meta)
        summary.append([label, bb.tested, bb.retained, bb.retention])
    write_csv(d / "summary.csv", ["scope", "tested_edges", "retained_edges", "retention"], summary)


def stage_vuln(ctx: Context) -> None:
    cfg = ctx.cfg
    d = ctx.stage_dir("vuln")
    strategy = cfg.get("robustness", "strategy")
    eps = cfg.getfloat("robustness", "epsilon")
    reps = cfg.getint("robustness", "replicates")
    seed = cfg.stage_seed("robustness")
    summary = []
    for label, net in _analysis_networks(ctx):
        sub = derive_seed(seed, label)
        curve = attack_curve(net, strategy, reps, sub)
        cs = critical_set(net, strategy, eps, sub)
        vi = vulnerability_index(curve, eps)
        sd = d / label
        sd.mkdir()
        write_csv(sd / "attack_curve.csv", ["strategy", "fraction", "lcc"],
                  ([strategy, f, l] for f, l in curve.points))
        write_json(sd / "critical_set.json", {
            "strategy": strategy, "epsilon": eps, "nodes": list(cs.nodes), "size": len(cs),
            "achieved_lcc": cs.achieved_lcc, "vulnerability_index": vi, "n_nodes": net.n_nodes,
            "replicates": curve.replicates, "seed": sub,
        })
        summary.append([label, net.n_nodes, len(cs), vi])
    write_csv(d / "summary.csv", ["scope", "n_nodes", "critical_set_size", "vulnerability_index"], summary)


def stage_diffuse(ctx: Context) -> None:
    cfg, log = ctx.cfg, ctx.log
    d = ctx.stage_dir("diffuse")
    beta = cfg.getfloat("diffusion", "beta")
    steps = cfg.getint("diffusion", "steps")
    reps = cfg.getint("diffusion", "replicates")
    weighted = cfg.getbool("diffusion", "weighted")
    temporal = cfg.getbool("diffusion", "temporal")
    seeds = cfg.getlist("diffusion", "seeds") or None
    root = cfg.stage_seed("diffusion")
    width = cfg.getint("run", "window")
    summary = []
    for label, net in _analysis_networks(ctx):
        if seeds is not None and not set(seeds) <= net.nodes:
            logger.warning("scope %s lacks some configured seed nodes; skipped", label)
            continue
        sub = derive_seed(root, label)
        if temporal:
            nodes = sorted(net.nodes)
            traces = []
            for r in range(reps):
                rs = derive_seed(sub, "si", r)
                chosen = seeds or [random_seed_node(nodes, rs)]
                traces.append(simulate_si_temporal(log, Scope(subforum=net.scope.subforum), beta, chosen, rs,
                                                   width, weighted))
        else:
            traces = replicate_si(net, beta, steps, reps, sub, seeds, weighted)
        s = diffusion_summary(traces)
        sd = d / label
        sd.mkdir()
        write_csv(sd / "trace.csv", ["replicate", "step", "infected_count"],
                  ([r, step, c] for r, t in enumerate(traces) for step, c in enumerate(t.infected)))
        out = s.to_dict()
        out.update({"beta": beta, "max_steps": steps, "weighted": weighted, "temporal": temporal,
                    "seed_selection": "configured" if seeds else "uniform random single node per replicate",
                    "seeds": seeds, "n_nodes": net.n_nodes, "root_seed": sub})
        write_json(sd / "summary.json", out)
        summary.append([label, net.n_nodes, s.mean_coverage, s.std_coverage, out["mean_time_to_half"]])
    write_csv(d / "summary.csv", ["scope", "n_nodes", "mean_final_coverage", "std_final_coverage",
                                  "mean_time_to_half"], summary)


def stage_dialogue(ctx: Context) -> None:
    cfg, log = ctx.cfg, ctx.log
    corpus = load_corpus(cfg, log)
    if corpus is None:
        raise PipelineError("dialogue stage needs [inputs] codes")
    d = ctx.stage_dir("dialogue")
    coders = corpus.coders
    a = cfg.get("dialogue", "coder_a") or (coders[0] if coders else "")
    b = cfg.get("dialogue", "coder_b") or (coders[1] if len(coders) > 1 else "")
    schema = PhaseSchema.from_config(cfg.sections.get("phases", {}))
    result = {"coders": coders, "responses": len(corpus),
              "phase_labels": {p.value: schema.label(p) for p in KnowledgePhase}}
    if a and b:
        result["agreement"] = {dim: agreement(corpus, a, b, dim).to_dict() for dim in ("phase", "intent")}
        result["coder_a"], result["coder_b"] = a, b
    write_json(d / "agreement.json", result)
    coder = cfg.get("dialogue", "coder") or None
    rows = code_distribution(corpus, log, cfg.get("dialogue", "group_by"), coder=coder,
                             majority=cfg.getbool("dialogue", "majority") and coder is None,
                             width=cfg.getint("run", "window"))
    write_csv(d / "code_distribution.csv", ["group", "dimension", "value", "count", "fraction"],
              ([r.group, r.dimension, r.value, r.count, r.fraction] for r in rows))


def stage_typology(ctx: Context) -> None:
    cfg, log = ctx.cfg, ctx.log
    d = ctx.stage_dir("typology")
    code_cols = cfg.get("typology", "code_columns").strip()
    if code_cols == "auto":
        dims, corpus = None, load_corpus(cfg, log)
    elif code_cols == "none":
        dims, corpus = (), None
    else:
        dims, corpus = tuple(cfg.getlist("typology", "code_columns")), load_corpus(cfg, log)
    majority = len(corpus.coders) > 1 if corpus is not None else False
    fc = FeatureConfig(tuple(cfg.getlist("typology", "behaviours")), dims,
                       coder=cfg.get("dialogue", "coder") or None if corpus else None,
                       majority=majority and not cfg.get("dialogue", "coder"))
    raw = build_feature_matrix(log, corpus, fc)
    fm = raw.scaled() if cfg.getbool("typology", "scale") else raw
    for name, m in (("features.csv", raw), ("features_scaled.csv", raw.scaled())):
        write_csv(d / name, ["learner_id", *m.columns], ([r, *v] for r, v in zip(m.rows, m.values.tolist())))
    k = min(cfg.getint("typology", "kmax"), *fm.values.shape)
    fit = bnmf(fm, k, cfg.getfloat("typology", "a"), cfg.getfloat("typology", "b"),
               cfg.getint("typology", "iters"), cfg.getfloat("typology", "tol"), cfg.stage_seed("typology"),
               cfg.getint("typology", "restarts"))
    types = assign_types(fit)
    write_csv(d / "W.csv", ["learner_id", *(f"c{k}" for k in range(fit.k_max))],
              ([r, *v] for r, v in zip(fm.rows, fit.W.tolist())))
    write_csv(d / "H.csv", ["component", *fm.columns], ([f"c{k}", *v] for k, v in enumerate(fit.H.tolist())))
    write_csv(d / "types.csv", ["learner_id", "type", "component", "strength"],
              ([l, int(t), types.components[int(t)], types.strength_of(l)] for l, t in zip(types.learners, types.types)))
    write_csv(d / "profile.csv", ["type", "variable", "level", "count", "fraction"],
              ([r.type, r.variable, r.level, r.count, r.fraction] for r in profile_types(types, log)))
    info = fit.to_dict()
    info.update({"excluded_learners": list(raw.excluded), "scaled": cfg.getbool("typology", "scale"),
                 "columns": list(fm.columns)})
    write_json(d / "fit.json", info)


def stage_experiment(ctx: Context) -> None:
    cfg, log = ctx.cfg, ctx.log
    d = ctx.stage_dir("experiment")
    actions = ctx.experiment_actions
    seed = cfg.stage_seed("experiment")
    groups = assign_treatments(sorted(log.learners), seed)
    if "assign" in actions:
        write_csv(d / "assignments.csv", ["learner_id", "group_index", "intro", "body", "selection"],
                  ([l, g.index, g.intro, g.body, g.selection] for l, g in sorted(groups.items())))
    emails = None
    if "select" in actions or "compose" in actions:
        emails = build_campaign(cfg, log, seed)
    if "select" in actions:
        write_csv(d / "selections.csv", ["week", "recipient", "method", "threads", "shortfall"],
                  ([e.week, e.recipient, e.group.selection, ";".join(e.threads), str(e.shortfall).lower()]
                   for e in emails))
    if "compose" in actions:
        with open(d / "emails.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for e in emails:
                fh.write(e.to_json() + "\n")
    if "analyze" in actions:
        path = cfg.input_path("email_log")
        if path is None or not path.exists():
            if actions == ("analyze",):
                raise PipelineError("analyze needs [inputs] email_log")
            return
        index = {(e.recipient, e.week): e for e in emails} if emails else None
        report = analyze_engagement(read_email_log(path, index))
        write_csv(d / "engagement.csv", ["table", "level", "sent", "opened", "clicked", "open_rate",
                                         "click_through_rate"],
                  ([r.table, r.level, r.sent, r.opened, r.clicked, r.open_rate, r.click_through_rate]
                   for r in report.rows))
        write_csv(d / "contrasts.csv", ["factor", "level", "baseline", "metric", "difference", "ci_low", "ci_high"],
                  ([c.factor, c.level, c.baseline, c.metric, c.difference, c.ci_low, c.ci_high]
                   for c in report.contrasts))


def emit_plot_data(paths: Iterable[str | Path], out_dir: str | Path) -> dict[str, Path]:
    """Tidy long-format CSVs, one per figure family, from stage artifacts.

    ``attack_curve.csv`` → ``attack_curves.csv`` (scope, strategy, fraction, lcc);
    ``trace.csv`` → ``infection_traces.csv`` (scope, replicate, step, infected_count);
    ``activity.csv`` → ``activity.csv`` (kind, bucket_start, count). The scope
    is the artifact's parent directory name.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise PipelineError("no artifacts given to emit_plot_data")
    for p in paths:
        if not p.exists():
            raise PipelineError(f"missing artifact {p}")
    families: dict[str, list[list]] = {}
    headers = {"attack_curves": ["scope", "strategy", "fraction", "lcc"],
               "infection_traces": ["scope", "replicate", "step", "infected_count"],
               "activity": ["kind", "bucket_start", "count"]}
    for p in sorted(paths):
        with open(p, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        scope = p.parent.name
        if p.name == "attack_curve.csv":
            families.setdefault("attack_curves", []).extend(
                [scope, r["strategy"], r["fraction"], r["lcc"]] for r in rows)
        elif p.name == "trace.csv":
            families.setdefault("infection_traces", []).extend(
                [scope, r["replicate"], r["step"], r["infected_count"]] for r in rows)
        elif p.name == "activity.csv":
            fam = families.setdefault("activity", [])
            for r in rows:
                fam.extend([k, r["bucket_start"], r[k]] for k in r if k != "bucket_start")
        else:
            raise PipelineError(f"no plot family for artifact {p.name}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for fam, rows in sorted(families.items()):
        path = out / f"{fam}.csv"
        write_csv(path, headers[fam], rows)
        written[fam] = path
    return written


def stage_plots(ctx: Context) -> None:
    artifacts = sorted(
        [*ctx.out.glob("describe/activity.csv"), *ctx.out.glob("vuln/*/attack_curve.csv"),
         *ctx.out.glob("diffusion/*/trace.csv")])
    d = ctx.stage_dir("plots")
    emit_plot_data(artifacts, d)


STAGE_FUNCS: dict[str, Callable[[Context], None]] = {
    "ingest": stage_ingest, "describe": stage_describe, "network": stage_network, "backbone": stage_backbone,
    "vuln": stage_vuln, "diffuse": stage_diffuse, "dialogue": stage_dialogue, "typology": stage_typology,
    "experiment": stage_experiment, "plots": stage_plots,
}


# --------------------------------------------------------------------------
# driver


def dependency_closure(stages: Iterable[str]) -> list[str]:
    wanted: set[str] = set()

    def visit(s):
        if s not in DEPENDENCIES:
            raise PipelineError(f"unknown stage {s!r}; stages are {', '.join(STAGES)}")
        if s in wanted:
            return
        wanted.add(s)
        for dep in DEPENDENCIES[s]:
            visit(dep)

    for s in stages:
        visit(s)
    return [s for s in STAGES if s in wanted]


def check_stages(stages: Sequence[str]) -> list[str]:
    for s in stages:
        if s not in DEPENDENCIES:
            raise PipelineError(f"unknown stage {s!r}; stages are {', '.join(STAGES)}")
    chosen = set(stages)
    for s in stages:
        for dep in DEPENDENCIES[s]:
            if dep not in chosen:
                raise PipelineError(f"stage {s!r} requires stage {dep!r}")
    return [s for s in STAGES if s in chosen]


def manifest(cfg: RunConfig, stages: Sequence[str]) -> dict:
    inputs = {}
    for name in sorted(cfg.inputs):
        p = cfg.input_path(name)
        inputs[name] = {"path": cfg.inputs[name], "sha256": _sha256(p) if p is not None and p.exists() else None}
    return {"tool": "forum-lens", "version": __version__, "stages": list(stages), "config": cfg.resolved(),
            "inputs": inputs}


def prepare_output(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise PipelineError(f"output directory {out} is not writable: {exc}") from None


def run_pipeline(cfg: RunConfig, stages: Sequence[str] = STAGES, *, out: Path | None = None,
                 experiment_actions: Sequence[str] = EXPERIMENT_ACTIONS, manifest_only: bool = False) -> Path:
    """Run ``stages`` in canonical order; a failing stage stops the run, earlier outputs stay."""
    ordered = check_stages(list(stages))
    out = Path(out) if out is not None else cfg.output_dir
    prepare_output(out)
    write_json(out / "manifest.json", manifest(cfg, ordered))
    if manifest_only:
        return out
    ctx = Context(cfg, out, experiment_actions=tuple(experiment_actions))
    for stage in ordered:
        logger.info("stage %s", stage)
        try:
            STAGE_FUNCS[stage](ctx)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(f"stage {stage!r} failed: {exc}") from exc
    return out
