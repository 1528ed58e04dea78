"""Synthetic multiscale crop scenes and the zeroth-order tau-omega emission model.

Scenes are simulated on a sub-pixel lattice (``subpixel`` cells per fine cell
side) and block-averaged to the fine grid, so fine pixels straddling parcel
edges carry mixed LAI/SM/LST just like real 1 km footprints over 200 m fields.
Brightness temperature is then computed from the fine-scale layers.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DomainError, ParseError
from .grid import BARESOIL, CORN, COTTON, LANDCOVER_NAMES, FineGrid, block_mean, block_mode, read_grid, write_grid

SM_MIN, SM_MAX = 0.05, 0.45


@dataclass
class TauOmegaParams:
    """Parameters of the tau-omega model.

    Soil reflectivity follows an affine map from soil moisture, pinned at
    ``reflectivity_dry`` for SM=0.05 and ``reflectivity_wet`` for SM=0.45.
    Setting ``soil_reflectivity`` replaces the map with a constant.
    ``rms_height`` and ``correlation_length`` (cm) describe the surface
    roughness the reflectivity stands for; they are recorded, not used.
    """

    incidence_angle: float = 50.0
    sky_temperature: float = 5.0
    reflectivity_dry: float = 0.05
    reflectivity_wet: float = 0.40
    soil_reflectivity: float | None = None
    b_factor: float = 0.12
    vwc_per_lai: float = 0.5
    single_scattering_albedo: float = 0.05
    rms_height: float = 0.62
    correlation_length: float = 8.72

    def __post_init__(self):
        if not 0 <= self.incidence_angle < 90:
            raise DomainError("incidence_angle must be in [0, 90)")
        if self.sky_temperature < 0:
            raise DomainError("sky_temperature must be >= 0")
        for r in (self.reflectivity_dry, self.reflectivity_wet, self.soil_reflectivity):
            if r is not None and not 0 <= r <= 1:
                raise DomainError("reflectivities must be in [0, 1]")
        if not 0 <= self.single_scattering_albedo < 1:
            raise DomainError("single_scattering_albedo must be in [0, 1)")
        if self.b_factor < 0 or self.vwc_per_lai < 0:
            raise DomainError("b_factor and vwc_per_lai must be >= 0")


def soil_reflectivity(sm, params):
    if params.soil_reflectivity is not None:
        return np.full_like(np.asarray(sm, dtype=float), params.soil_reflectivity)
    slope = (params.reflectivity_wet - params.reflectivity_dry) / (SM_MAX - SM_MIN)
    return np.clip(params.reflectivity_dry + slope * (np.asarray(sm, dtype=float) - SM_MIN), 0.0, 1.0)


def tau_omega_forward(sm, lst, lai, params=None):
    """Brightness temperature (K) of a vegetated soil, isothermal at ``lst``.

    Works elementwise on scalars or arrays.
    """
    params = params or TauOmegaParams()
    lst = np.asarray(lst, dtype=float)
    r = soil_reflectivity(sm, params)
    e = 1.0 - r
    tau = params.b_factor * params.vwc_per_lai * np.asarray(lai, dtype=float)
    gamma = np.exp(-tau / np.cos(np.deg2rad(params.incidence_angle)))
    omega = params.single_scattering_albedo
    tb = (
        gamma * e * lst
        + (1.0 - omega) * (1.0 - gamma) * (1.0 + r * gamma) * lst
        + gamma**2 * r * params.sky_temperature
    )
    return tb if tb.ndim else float(tb)


def forward_model_grid(grid, params=None):
    """Copy of ``grid`` with a TB layer computed from its SM, LST and LAI."""
    grid.require("SM", "LST", "LAI")
    return grid.with_layers(TB=tau_omega_forward(grid["SM"], grid["LST"], grid["LAI"], params))


# --------------------------------------------------------------------------- scenes


@dataclass
class CropSeason:
    crop: str
    plant_day: int
    harvest_day: int
    peak_lai: float


@dataclass
class RainEvent:
    day: int
    mean_mm: float
    correlation_length: float = 8.0


def _default_calendar():
    return [
        CropSeason("corn", 16, 58, 3.0),
        CropSeason("cotton", 28, 100, 4.0),
        CropSeason("corn", 64, 105, 3.0),
    ]


def _default_rain():
    return [RainEvent(d, mm, cl) for d, mm, cl in [
        (6, 18.0, 20.0), (20, 25.0, 25.0), (33, 12.0, 15.0), (41, 30.0, 30.0),
        (52, 15.0, 18.0), (66, 22.0, 22.0), (79, 35.0, 30.0), (91, 10.0, 12.0),
        (103, 20.0, 20.0), (114, 16.0, 16.0),
    ]]


@dataclass
class SceneConfig:
    """Layout, calendar and weather of a synthetic season.

    Correlation lengths are in fine-cell units.  ``crop_calendar`` lists crop
    seasons; each parcel of a crop follows every season listed for that crop.
    Growing crop parcels are irrigated with ``irrigation_mm`` every
    ``irrigation_interval`` days (per-parcel phase); irrigation counts as PPT.
    ``soil_variability`` scales the per-parcel spread of initial moisture and
    dry-down time.
    """

    rows: int = 60
    cols: int = 60
    n_fields: int = 14
    season_days: int = 120
    crop_calendar: list = field(default_factory=_default_calendar)
    rain_events: list = field(default_factory=_default_rain)
    base_lst: float = 295.0
    seasonal_lst_amplitude: float = 8.0
    lst_noise: float = 1.0
    soil_depth_mm: float = 60.0
    drydown_days: float = 10.0
    soil_variability: float = 0.03
    irrigation_mm: float = 12.0
    irrigation_interval: int = 5
    subpixel: int = 5
    cell_size: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.crop_calendar = [c if isinstance(c, CropSeason) else CropSeason(**c) for c in self.crop_calendar]
        self.rain_events = [r if isinstance(r, RainEvent) else RainEvent(**r) for r in self.rain_events]
        self.validate()

    def validate(self):
        if self.rows <= 0 or self.cols <= 0:
            raise DomainError("rows and cols must be > 0")
        if self.n_fields < 1:
            raise DomainError("n_fields must be >= 1")
        if self.season_days < 1:
            raise DomainError("season_days must be >= 1")
        if self.subpixel < 1:
            raise DomainError("subpixel must be >= 1")
        for c in self.crop_calendar:
            if c.crop not in ("corn", "cotton"):
                raise DomainError(f"unknown crop {c.crop!r}")
            if not 1 <= c.plant_day < c.harvest_day <= self.season_days:
                raise DomainError(f"invalid calendar for {c.crop}: need 1 <= plant < harvest <= season_days")
            if not 0 < c.peak_lai <= 8:
                raise DomainError("peak_lai must be in (0, 8]")
        if self.irrigation_mm < 0 or self.irrigation_interval < 1:
            raise DomainError("irrigation_mm must be >= 0 and irrigation_interval >= 1")
        for r in self.rain_events:
            if r.mean_mm < 0 or r.correlation_length <= 0:
                raise DomainError("rain events need mean_mm >= 0 and correlation_length > 0")


@dataclass
class SceneSeries:
    """Daily fine grids of a season plus the sub-pixel land cover they came from."""

    days: list
    subpixel_landcover: np.ndarray
    subpixel: int
    config: SceneConfig

    def __len__(self):
        return len(self.days)

    def __getitem__(self, i):
        return self.days[i]

    def __iter__(self):
        return iter(self.days)

    @property
    def last_harvest_day(self):
        return max((c.harvest_day for c in self.config.crop_calendar), default=0)


def crop_lai(day, season, offset=0.0, peak_scale=1.0):
    """Piecewise-linear phenology: rise to peak at 60% of the season, senesce to
    20% of peak at harvest, zero outside [plant, harvest]."""
    plant = season.plant_day + offset
    harvest = season.harvest_day + offset
    peak_day = plant + 0.6 * (harvest - plant)
    peak = season.peak_lai * peak_scale
    day = np.asarray(day, dtype=float)
    rise = peak * (day - plant) / (peak_day - plant)
    fall = peak * (1.0 - 0.8 * (day - peak_day) / (harvest - peak_day))
    lai = np.where(day <= peak_day, rise, fall)
    return np.where((day < plant) | (day >= harvest), 0.0, np.maximum(lai, 0.0))


def _parcels(rows, cols, n_fields, rng):
    """Guillotine partition of the lattice into ``n_fields`` rectangles."""
    rects = [(0, rows, 0, cols)]
    while len(rects) < n_fields:
        # split the largest splittable rectangle
        order = sorted(range(len(rects)), key=lambda i: -(rects[i][1] - rects[i][0]) * (rects[i][3] - rects[i][2]))
        for i in order:
            r0, r1, c0, c1 = rects[i]
            h, w = r1 - r0, c1 - c0
            if max(h, w) >= 4:
                break
        else:
            break
        rects.pop(i)
        if h >= w:
            cut = r0 + int(rng.integers(max(1, h // 4), h - max(1, h // 4) + 1))
            rects += [(r0, cut, c0, c1), (cut, r1, c0, c1)]
        else:
            cut = c0 + int(rng.integers(max(1, w // 4), w - max(1, w // 4) + 1))
            rects += [(r0, r1, c0, cut), (r0, r1, cut, c1)]
    return sorted(rects)


def _smooth_noise(shape, length, rng):
    z = gaussian_filter(rng.standard_normal(shape), sigma=length, mode="wrap")
    z -= z.mean()
    sd = z.std()
    return z / sd if sd > 0 else z


def generate_scene(config, params=None):
    """Simulate a season of daily fine grids (LST, PPT, LAI, SM, TB, landcover).

    PPT is the 3-day accumulation ending on the day.  Everything is derived
    from one generator seeded with ``config.seed``; ``params`` configures the
    emission model that turns the fine layers into TB.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    s = config.subpixel
    shape = (config.rows * s, config.cols * s)

    # parcel mosaic with a crop label and per-parcel phenology jitter
    rects = _parcels(shape[0], shape[1], config.n_fields, rng)
    labels_cycle = [CORN, COTTON, BARESOIL]
    assign = [labels_cycle[i % 3] for i in range(len(rects))]
    rng.shuffle(assign)
    lc_sub = np.zeros(shape, dtype=np.int64)
    plant_offset = np.zeros(shape)
    peak_scale = np.ones(shape)
    soil = np.zeros(shape)
    irrigation_phase = np.zeros(shape, dtype=np.int64)
    for (r0, r1, c0, c1), lab in zip(rects, assign):
        lc_sub[r0:r1, c0:c1] = lab
        plant_offset[r0:r1, c0:c1] = rng.integers(-3, 4)
        peak_scale[r0:r1, c0:c1] = rng.uniform(0.85, 1.15)
        soil[r0:r1, c0:c1] = rng.uniform(-1.0, 1.0)
        irrigation_phase[r0:r1, c0:c1] = rng.integers(0, config.irrigation_interval)

    # soil properties are set per parcel, with weak within-parcel texture
    soil = config.soil_variability * (soil + 0.2 * _smooth_noise(shape, 2.0 * s, rng))
    sm = np.clip(0.25 + 0.1 * soil, SM_MIN, SM_MAX)
    drydown = config.drydown_days * (1.0 + soil)

    rain_by_day = {}
    for ev in config.rain_events:
        rain_by_day.setdefault(ev.day, []).append(ev)

    daily_ppt = []
    days = []
    lc_fine = block_mode(lc_sub, s)
    params = params or TauOmegaParams()
    for day in range(1, config.season_days + 1):
        lai = np.zeros(shape)
        irrigated = np.zeros(shape, dtype=bool)
        for season in config.crop_calendar:
            code = CORN if season.crop == "corn" else COTTON
            mask = lc_sub == code
            lai[mask] += crop_lai(day, season, plant_offset[mask], peak_scale[mask])
            growing = (day >= season.plant_day + plant_offset) & (day < season.harvest_day + plant_offset)
            irrigated |= mask & growing & ((day + irrigation_phase) % config.irrigation_interval == 0)

        # PPT is the total water input: rain plus irrigation on growing crop parcels
        ppt_today = np.where(irrigated, config.irrigation_mm, 0.0)
        for ev in rain_by_day.get(day, []):
            z = _smooth_noise(shape, ev.correlation_length * s, rng)
            ppt_today += ev.mean_mm * np.exp(0.5 * z - 0.125)
        daily_ppt.append(ppt_today)
        ppt3 = sum(daily_ppt[-3:])

        if day > 1:
            # exponential dry-down toward SM_MIN, faster under transpiring canopy
            tau = drydown / (1.0 + 0.1 * lai)
            sm = SM_MIN + (sm - SM_MIN) * np.exp(-1.0 / tau)
            sm = np.clip(sm + ppt_today / config.soil_depth_mm * 0.5, SM_MIN, SM_MAX)

        seasonal = config.seasonal_lst_amplitude * np.sin(np.pi * day / config.season_days)
        lst = (
            config.base_lst
            + seasonal
            - 40.0 * (sm - 0.25)
            - 1.5 * lai
            + config.lst_noise * rng.standard_normal(shape)
        )

        grid = FineGrid(
            rows=config.rows,
            cols=config.cols,
            cell_size=config.cell_size,
            fields={
                "LST": block_mean(lst, s),
                "PPT": block_mean(ppt3, s),
                "LAI": block_mean(lai, s),
                "SM": block_mean(sm, s),
            },
            landcover=lc_fine,
        )
        days.append(forward_model_grid(grid, params))
    return SceneSeries(days=days, subpixel_landcover=lc_sub, subpixel=s, config=config)


def most_heterogeneous_day(series, layers=("LST", "PPT", "LAI")):
    """1-based day whose layers are spatially most varied.

    Each layer's spatial SD is divided by its season-pooled SD so that the
    layers weigh equally; ties go to the earliest day.
    """
    if len(series) == 0:
        raise DomainError("empty scene")
    score = np.zeros(len(series))
    for name in layers:
        spread = np.array([day[name].std() for day in series])
        pooled = float(np.std(np.stack([day[name] for day in series])))
        if pooled > 0:
            score += spread / pooled
    return int(np.argmax(score)) + 1


def save_scene(series, directory):
    """Write daily truth grids, the sub-pixel land cover and a manifest."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for day, grid in enumerate(series, start=1):
        write_grid(grid, out / f"day_{day:03d}.grid")
    lc = series.subpixel_landcover
    write_grid(FineGrid(lc.shape[0], lc.shape[1], series.config.cell_size / series.subpixel, {}, lc),
               out / "subpixel_landcover.grid")
    manifest = {
        "n_days": len(series),
        "subpixel": series.subpixel,
        "last_harvest_day": series.last_harvest_day,
        "config": asdict(series.config),
    }
    (out / "scene.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_scene(directory):
    """Inverse of :func:`save_scene`."""
    src = Path(directory)
    try:
        manifest = json.loads((src / "scene.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(f"{src} has no scene.json") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"scene.json: {exc.msg}", line=exc.lineno) from None
    config = SceneConfig(**manifest["config"])
    days = [read_grid(src / f"day_{d:03d}.grid") for d in range(1, manifest["n_days"] + 1)]
    lc = read_grid(src / "subpixel_landcover.grid").landcover
    return SceneSeries(days=days, subpixel_landcover=lc, subpixel=manifest["subpixel"], config=config)


__all__ = [
    "LANDCOVER_NAMES",
    "TauOmegaParams",
    "CropSeason",
    "RainEvent",
    "SceneConfig",
    "SceneSeries",
    "tau_omega_forward",
    "forward_model_grid",
    "generate_scene",
    "crop_lai",
    "most_heterogeneous_day",
    "save_scene",
    "load_scene",
]
