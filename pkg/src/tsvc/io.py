"""CSV ingestion, model JSON, Graphviz export and the text report."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SCALES, Branch, CoefficientTree, Column, Dataset, Region, SplitRecord, TreeNode, TsvcModel
from .errors import MissingValue, ParseError, SchemaError, SchemaMismatch
from .glm import Family

SCHEMA_VERSION = "tsvc-model/1"
ROLES = ("response", "predictor", "ignore")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: str = "predictor"
    scale: str = "continuous"

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: role must be one of {ROLES}")
        if self.scale not in SCALES:
            raise SchemaError(f"column {self.name!r}: scale must be one of {SCALES}")


def read_schema(path) -> list:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read schema {path}: {exc}") from exc
    entries = raw["columns"] if isinstance(raw, dict) else raw
    return [ColumnSpec(e["name"], e.get("role", "predictor"), e.get("scale", "continuous")) for e in entries]


def _parse_float(text: str, row: int, column: str) -> float:
    s = text.strip()
    if s == "" or s.upper() in ("NA", "NAN"):
        raise MissingValue(f"missing value in row {row}, column {column!r}", row, column)
    try:
        value = float(s)
    except ValueError:
        raise ParseError(f"non-numeric value {s!r} in row {row}, column {column!r}", row, column) from None
    if not math.isfinite(value):
        raise MissingValue(f"non-finite value in row {row}, column {column!r}", row, column)
    return value


def read_numeric_csv(path, names) -> tuple:
    """Read the named columns of a CSV; returns ``(header, {name: array})``.

    Row numbers in errors count data rows from 1 (the header is row 0).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return None, {name: np.empty(0) for name in names}
        header = [h.strip() for h in header]
        missing = [name for name in names if name not in header]
        if missing:
            raise SchemaError(f"columns {missing} not found in {path}")
        idx = {name: header.index(name) for name in names}
        values = {name: [] for name in names}
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            for name, i in idx.items():
                cell = row[i] if i < len(row) else ""
                values[name].append(_parse_float(cell, row_no, name))
    return header, {name: np.asarray(v, dtype=float) for name, v in values.items()}


def load_csv(path, schema) -> Dataset:
    """Load a CSV into a ``Dataset`` according to ``schema`` (list of ``ColumnSpec``)."""
    responses = [c for c in schema if c.role == "response"]
    if len(responses) != 1:
        raise SchemaError("schema must mark exactly one response column")
    predictors = [c for c in schema if c.role == "predictor"]
    names = [responses[0].name] + [c.name for c in predictors]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate column names in schema")
    _, values = read_numeric_csv(path, names)
    y = values[responses[0].name]
    if y.size == 0:
        raise SchemaError(f"{path} contains no data rows")
    for c in predictors:
        if c.scale == "binary":
            bad = np.flatnonzero((values[c.name] != 0) & (values[c.name] != 1))
            if bad.size:
                raise ParseError(f"binary column {c.name!r} has value {values[c.name][bad[0]]} in row {bad[0] + 1}",
                                 int(bad[0] + 1), c.name)
    cols = tuple(Column(c.name, values[c.name], c.scale) for c in predictors)
    return Dataset(cols, y, responses[0].name)


# --------------------------------------------------------------------------- #
# model JSON


def _tree_to_dict(tree: CoefficientTree, names) -> dict:
    nodes = []
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        entry = {"id": node.id}
        if node.is_leaf:
            entry["coefficient"] = node.coefficient
        else:
            entry.update(modifier=node.modifier, modifier_name=names[node.modifier],
                         split_point=node.split_point, left=node.left, right=node.right)
        nodes.append(entry)
    return {"predictor": tree.predictor, "name": names[tree.predictor], "nodes": nodes}


def _tree_from_dict(d: dict) -> CoefficientTree:
    raw = {e["id"]: e for e in d["nodes"]}
    nodes = {}

    def walk(node_id, region):
        e = raw[node_id]
        node = TreeNode(node_id, region)
        nodes[node_id] = node
        if "left" in e:
            node.modifier, node.split_point = int(e["modifier"]), float(e["split_point"])
            node.left, node.right = int(e["left"]), int(e["right"])
            walk(node.left, Region(region.branches + (Branch(node.modifier, node.split_point, "le"),)))
            walk(node.right, Region(region.branches + (Branch(node.modifier, node.split_point, "gt"),)))
        else:
            node.coefficient = e.get("coefficient")

    walk(0, Region())
    return CoefficientTree(int(d["predictor"]), nodes)


def model_to_dict(model: TsvcModel) -> dict:
    names = model.names
    return {
        "schema": SCHEMA_VERSION,
        "family": model.family.to_dict(),
        "response": model.response_name,
        "columns": [{"name": n, "scale": s} for n, s in zip(names, model.scales)],
        "intercept": model.intercept,
        "trees": [_tree_to_dict(model.trees[j], names) for j in sorted(model.trees)],
        "linear": [{"predictor": j, "name": names[j], "coefficient": model.linear[j]} for j in sorted(model.linear)],
        "excluded": [{"predictor": j, "name": names[j]} for j in sorted(model.excluded)],
        "deviance": model.deviance,
        "aic": model.aic,
        "split_history": [
            {"iteration": r.iteration, "predictor": r.predictor, "node_id": r.node_id, "modifier": r.modifier,
             "split_point": r.split_point, "t_obs": r.t_obs, "p_value": r.p_value, "accepted": r.accepted,
             "deviance": r.deviance}
            for r in model.split_history
        ],
        "config": model.config,
        "seed": model.config.get("seed"),
        "diagnostics": model.diagnostics,
    }


def model_from_dict(d: dict) -> TsvcModel:
    if d.get("schema") != SCHEMA_VERSION:
        raise SchemaMismatch(f"unsupported model schema {d.get('schema')!r}")
    names = [c["name"] for c in d["columns"]]
    scales = [c["scale"] for c in d["columns"]]
    trees = {int(t["predictor"]): _tree_from_dict(t) for t in d["trees"]}
    return TsvcModel(
        intercept=d["intercept"],
        trees=trees,
        linear={int(e["predictor"]): e["coefficient"] for e in d["linear"]},
        excluded=frozenset(int(e["predictor"]) for e in d["excluded"]),
        family=Family(d["family"]["distribution"], d["family"]["link"]),
        names=names,
        scales=scales,
        response_name=d.get("response", "y"),
        deviance=d.get("deviance", float("nan")),
        aic=d.get("aic", float("nan")),
        split_history=[SplitRecord(**r) for r in d.get("split_history", [])],
        config=d.get("config", {}),
        diagnostics=d.get("diagnostics", {}),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dumps_model(model: TsvcModel) -> str:
    return json.dumps(_jsonable(model_to_dict(model)), indent=2, sort_keys=True) + "\n"


def loads_model(text: str) -> TsvcModel:
    return model_from_dict(json.loads(text))


def save_model(model: TsvcModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> TsvcModel:
    return loads_model(Path(path).read_text())


# --------------------------------------------------------------------------- #
# Graphviz and report


def _fmt_split(value: float) -> str:
    return f"{value:.6g}"


def tree_to_dot(tree: CoefficientTree, names) -> str:
    """DOT source for one coefficient tree; leaves show their coefficient."""
    lines = [f'digraph "{names[tree.predictor]}" {{', "  node [fontname=Helvetica];"]
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        if node.is_leaf:
            coef = "NA" if node.coefficient is None else f"{node.coefficient:.3f}"
            lines.append(f'  n{node_id} [shape=box, label="{coef}"];')
        else:
            lines.append(f'  n{node_id} [shape=ellipse, label="{names[node.modifier]}"];')
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        if not node.is_leaf:
            c = _fmt_split(node.split_point)
            lines.append(f'  n{node_id} -> n{node.left} [label="≤ {c}"];')
            lines.append(f'  n{node_id} -> n{node.right} [label="> {c}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def format_report(model: TsvcModel) -> str:
    names = model.names
    width = max(len("covariate"), *(len(n) for n in names))
    lines = [f"TSVC model ({model.family.distribution}/{model.family.link}) for {model.response_name}", ""]
    lines.append(f"{'covariate':<{width}}  estimate")
    lines.append("-" * (width + 12))
    lines.append(f"{'(intercept)':<{width}}  {model.intercept:.3f}")
    for j, name in enumerate(names):
        if j in model.trees:
            mods = sorted(model.trees[j].modifiers(), key=lambda m: m)
            est = "tr(" + ", ".join(names[m] for m in mods) + ")"
        elif j in model.linear:
            est = f"{model.linear[j]:.3f}"
        else:
            est = "---"
        lines.append(f"{name:<{width}}  {est}")
    lines.append("-" * (width + 12))
    lines.append(f"{'deviance':<{width}}  {model.deviance:.1f}")
    lines.append(f"{'AIC':<{width}}  {model.aic:.1f}")
    lines.append("")
    for j in sorted(model.trees):
        tree = model.trees[j]
        lines.append(f"tree for {names[j]}:")
        for leaf in tree.leaves():
            cond = " & ".join(
                f"{names[b.modifier]} {'<=' if b.side == 'le' else '>'} {_fmt_split(b.split_point)}"
                for b in leaf.region.branches
            )
            lines.append(f"  {cond}: {leaf.coefficient:.3f}")
    if model.split_history:
        lines.append("")
        lines.append("split history:")
        for r in model.split_history:
            status = "accepted" if r.accepted else "rejected"
            lines.append(
                f"  {r.iteration}: {names[r.predictor]} node {r.node_id} by {names[r.modifier]} "
                f"at {_fmt_split(r.split_point)}  T={r.t_obs:.3f}  p={r.p_value:.4f}  {status}"
            )
    return "\n".join(lines) + "\n"
