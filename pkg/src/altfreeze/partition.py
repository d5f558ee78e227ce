"""Split trainable parameters into spatial, temporal, and shared groups.

The rule depends only on a parameter's kind and shape: temporal conv kernels
(Ktx1x1, Kt>1) form the temporal group, spatial conv kernels (1xKhxKw with a
spatial extent > 1) form the spatial group, and everything without a
receptive field on both axes at once (pointwise convs, conv biases, batch
norm scales/shifts, linear layers) is shared and participates in every
update phase.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .model import Model, NamedParam

__all__ = ["ParamGroup", "classify_param", "partition", "Partition", "partition_report"]


class ParamGroup(enum.Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"
    SHARED = "shared"


_SHARED_KINDS = {"conv_bias", "bn_gamma", "bn_beta", "linear_weight", "linear_bias"}


def classify_param(p: NamedParam, full_3d_to_shared: bool = False) -> ParamGroup:
    """Classify one parameter by (kind, shape); names are never inspected."""
    if p.kind in _SHARED_KINDS:
        return ParamGroup.SHARED
    if p.kind != "conv_weight":
        raise ValueError(f"unknown parameter kind {p.kind!r} for {p.name}")
    if len(p.shape) != 5:
        raise ValueError(f"conv weight {p.name} must be 5D, got shape {p.shape}")
    kt, kh, kw = p.shape[2], p.shape[3], p.shape[4]
    temporal = kt > 1
    spatial = kh > 1 or kw > 1
    if temporal and spatial:
        if full_3d_to_shared:
            return ParamGroup.SHARED
        raise ValueError(
            f"conv weight {p.name} has kernel {(kt, kh, kw)} with both temporal and "
            "spatial extent; factorized kernels are required"
        )
    if temporal:
        return ParamGroup.TEMPORAL
    if spatial:
        return ParamGroup.SPATIAL
    return ParamGroup.SHARED


@dataclass(frozen=True)
class Partition:
    spatial: tuple[NamedParam, ...]
    temporal: tuple[NamedParam, ...]
    shared: tuple[NamedParam, ...]

    def group_of(self, name: str) -> ParamGroup:
        for group, entries in (
            (ParamGroup.SPATIAL, self.spatial),
            (ParamGroup.TEMPORAL, self.temporal),
            (ParamGroup.SHARED, self.shared),
        ):
            if any(p.name == name for p in entries):
                return group
        raise KeyError(name)


def partition(model: Model, full_3d_to_shared: bool = False) -> Partition:
    """Partition all trainable parameters into the three disjoint groups.

    The union of the groups is exactly the model's parameter set; within
    each group entries are sorted by name.
    """
    groups: dict[ParamGroup, list[NamedParam]] = {g: [] for g in ParamGroup}
    for named, _ in model.named_params():
        try:
            groups[classify_param(named, full_3d_to_shared)].append(named)
        except ValueError as exc:
            raise ValueError(f"cannot partition parameter {named.name}: {exc}") from exc
    return Partition(
        spatial=tuple(sorted(groups[ParamGroup.SPATIAL], key=lambda p: p.name)),
        temporal=tuple(sorted(groups[ParamGroup.TEMPORAL], key=lambda p: p.name)),
        shared=tuple(sorted(groups[ParamGroup.SHARED], key=lambda p: p.name)),
    )


def _count_values(entries) -> int:
    total = 0
    for p in entries:
        n = 1
        for extent in p.shape:
            n *= extent
        total += n
    return total


def partition_report(entries: list[tuple[str, tuple[int, ...], ParamGroup]]) -> str:
    """Plain-text table of (name, shape, group) rows plus per-group totals."""
    name_w = max([len("name")] + [len(n) for n, _, _ in entries])
    shape_w = max([len("shape")] + [len(str(s)) for _, s, _ in entries])
    lines = [f"{'name':<{name_w}}  {'shape':<{shape_w}}  group"]
    for name, shape, group in entries:
        lines.append(f"{name:<{name_w}}  {str(shape):<{shape_w}}  {group.value}")
    lines.append("")
    lines.append(f"{'group':<10}{'tensors':>8}{'values':>10}")
    total_t = total_v = 0
    for group in ParamGroup:
        rows = [(n, s) for n, s, g in entries if g is group]
        values = _count_values([NamedParam(n, "x", s) for n, s in rows])
        lines.append(f"{group.value:<10}{len(rows):>8}{values:>10}")
        total_t += len(rows)
        total_v += values
    lines.append(f"{'total':<10}{total_t:>8}{total_v:>10}")
    return "\n".join(lines)
