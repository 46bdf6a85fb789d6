"""Every tunable constant of the pipeline, in one table.

The CLI prints this table with ``--show-defaults`` and accepts overrides for
a subset of the entries.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class Defaults:
    # platform association
    platform_gap_m: float = 0.05
    platform_overlap_min: float = 0.70
    # neighbour selection
    neighbor_volume_ratio_max: float = (1 / 0.618) ** 3  # ~4.236
    neighbor_height_margin_m: float = 0.05
    above_bottom_max_m: float = 0.20
    # region construction
    sector_angle_deg: float = 90.0
    sector_radius_min_m: float = 0.20
    vertical_shrink: float = 0.80
    free_area_min_m2: float = 0.036
    cell_size_m: float = 0.01
    # sampling quotas
    directional_samples: int = 9000
    directional_min_visible: int = 2000
    vertical_samples: int = 10000
    vertical_min_visible: int = 6000
    # visibility
    visibility_depth_tol_m: float = 0.025
    # rewards
    point_l1_max_px: float = 50.0
    orientation_cos_min: float = 0.8
    size_rel_tol: float = 0.15
    alpha: float = 0.25
    # box matching
    iou_threshold: float = 0.5
    # relation margins
    position_margin_abs_m: float = 0.01
    position_margin_rel: float = 0.05
    touching_gap_m: float = 0.01
    near_diag_factor: float = 3.0
    size_margin_rel: float = 0.05
    facing_cos_min: float = 0.7071067811865476
    upright_tol_deg: float = 15.0
    diversity_sigma_factor: float = 0.5
    # benchmark
    max_steps: int = 5

    def as_dict(self) -> dict:
        return asdict(self)

    def override(self, **changes) -> "Defaults":
        """Return a copy with ``changes`` applied after range validation."""
        from .errors import ConfigurationError

        known = {f.name for f in fields(self)}
        for key, value in changes.items():
            if key not in known:
                raise ConfigurationError(f"unknown default {key!r}")
            if value is None:
                continue
            if key in {"platform_overlap_min", "iou_threshold", "vertical_shrink",
                       "orientation_cos_min"}:
                if not 0 < value <= 1:
                    raise ConfigurationError(f"{key} must lie in (0, 1], got {value}")
            elif key == "alpha":
                if value < 0:
                    raise ConfigurationError(f"alpha must be >= 0, got {value}")
            elif value <= 0:
                raise ConfigurationError(f"{key} must be positive, got {value}")
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


DEFAULTS = Defaults()
