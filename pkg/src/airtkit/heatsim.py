"""Synthetic active-thermography sequences from explicit 3-D heat conduction.

A slab of ``nz x ny x nx`` cells is heated on its front (z = 0) or back
(z = nz - 1) face, either by an instantaneous flash or by a constant flux
for ``pulse_duration_s``. The camera always looks at the front face.
Defects are boxes of reduced diffusivity. All boundaries are adiabatic.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericError
from .seqcore import BBox, InspectionSequence, RoiLabels, write_labels, write_sequence

log = logging.getLogger(__name__)

MODES = ("flash_front", "long_pulse_front", "flash_back", "long_pulse_back")
ENERGY_TOL = 1e-3


@dataclass
class DefectSpec:
    box3d: tuple  # (x1, y1, z1, x2, y2, z2) half-open cell indices
    alpha_scale: float = 0.1

    def __post_init__(self):
        self.box3d = tuple(int(v) for v in self.box3d)
        if len(self.box3d) != 6:
            raise FormatError("box3d needs 6 integers (x1, y1, z1, x2, y2, z2)")
        x1, y1, z1, x2, y2, z2 = self.box3d
        if not (x1 < x2 and y1 < y2 and z1 < z2):
            raise FormatError(f"empty or inverted defect box {self.box3d}")
        if not (0 < self.alpha_scale <= 1):
            raise FormatError(f"alpha_scale must lie in (0, 1], got {self.alpha_scale}")


@dataclass
class ExcitationSpec:
    mode: str = "flash_front"
    pulse_duration_s: float = 5.0
    fluence: float = 8000.0  # J/m^2 deposited over the pulse
    nonuniformity: float = 0.0
    noise_std: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise FormatError(f"unknown excitation mode {self.mode!r}; expected one of {MODES}")
        if self.nonuniformity < 0 or self.noise_std < 0:
            raise FormatError("nonuniformity and noise_std must be >= 0")

    @property
    def heats_back(self) -> bool:
        return self.mode.endswith("_back")

    @property
    def is_flash(self) -> bool:
        return self.mode.startswith("flash")


@dataclass
class SlabSpec:
    nx: int = 64
    ny: int = 64
    nz: int = 10
    dx: float = 75e-3 / 64
    dy: float = 75e-3 / 64
    dz: float = 4e-3 / 10
    alpha_base: float = 4e-7
    defects: list = field(default_factory=list)
    excitation: ExcitationSpec = field(default_factory=ExcitationSpec)
    duration_s: float = 40.0
    frame_rate_hz: float = 12.5
    seed: int = 0
    ambient_k: float = 293.15
    heat_capacity: float = 1.6e6  # volumetric, J/(m^3 K)
    pre_trigger_frames: int = 5
    dt: float | None = None  # None: derived from the stability bound

    def __post_init__(self):
        self.defects = [d if isinstance(d, DefectSpec) else DefectSpec(**d) for d in self.defects]
        if isinstance(self.excitation, dict):
            self.excitation = ExcitationSpec(**self.excitation)
        if min(self.nx, self.ny, self.nz) < 1:
            raise FormatError("grid dimensions must be >= 1")
        if min(self.dx, self.dy, self.dz) <= 0 or self.alpha_base <= 0:
            raise FormatError("cell sizes and alpha_base must be > 0")
        if self.duration_s <= 0 or self.frame_rate_hz <= 0:
            raise FormatError("duration_s and frame_rate_hz must be > 0")
        for d in self.defects:
            x1, y1, z1, x2, y2, z2 = d.box3d
            if x1 < 0 or y1 < 0 or z1 < 0 or x2 > self.nx or y2 > self.ny or z2 > self.nz:
                raise FormatError(f"defect {d.box3d} outside slab {self.nx}x{self.ny}x{self.nz}")

    @property
    def n_frames(self) -> int:
        return max(2, int(round(self.duration_s * self.frame_rate_hz)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SlabSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise FormatError(f"unknown SlabSpec keys: {sorted(unknown)}")
        return cls(**d)


def stability_bound(spec: SlabSpec) -> float:
    """Largest FTCS time step that keeps the explicit scheme stable."""
    inv = 1 / spec.dx**2 + 1 / spec.dy**2 + 1 / spec.dz**2
    return 1.0 / (2.0 * spec.alpha_base * inv)


def choose_dt(spec: SlabSpec) -> tuple[float, int]:
    """Time step and substeps per frame; frames land exactly on steps."""
    period = 1.0 / spec.frame_rate_hz
    bound = stability_bound(spec)
    if spec.dt is not None:
        if spec.dt > bound:
            raise NumericError(f"dt={spec.dt:g} s violates FTCS stability; maximum admissible dt is {bound:g} s")
        target = spec.dt
    else:
        target = 0.9 * min(spec.dx, spec.dy, spec.dz) ** 2 / (6.0 * spec.alpha_base)
    n_sub = max(1, math.ceil(period / target - 1e-12))
    return period / n_sub, n_sub


def diffusivity_field(spec: SlabSpec) -> np.ndarray:
    alpha = np.full((spec.nz, spec.ny, spec.nx), spec.alpha_base)
    for d in spec.defects:
        x1, y1, z1, x2, y2, z2 = d.box3d
        alpha[z1:z2, y1:y2, x1:x2] = spec.alpha_base * d.alpha_scale
    return alpha


def _face(a, b):
    # harmonic mean; exact when both sides agree so alpha_scale=1 is a no-op
    return np.where(a == b, a, 2 * a * b / (a + b))


def heating_envelope(spec: SlabSpec, rng: np.random.Generator) -> np.ndarray:
    """Smooth (ny, nx) lamp pattern: 1 + nonuniformity * low-order cosine bump."""
    cx, cy = rng.uniform(0.2, 0.8, size=2)
    u = (np.arange(spec.nx) + 0.5) / spec.nx
    v = (np.arange(spec.ny) + 0.5) / spec.ny
    bump = np.cos(0.5 * np.pi * (v[:, None] - cy)) * np.cos(0.5 * np.pi * (u[None, :] - cx))
    return 1.0 + spec.excitation.nonuniformity * (bump - bump.mean())


class _Solver:
    def __init__(self, spec: SlabSpec, dt: float):
        alpha = diffusivity_field(spec)
        self.kx = _face(alpha[:, :, :-1], alpha[:, :, 1:]) * dt / spec.dx**2
        self.ky = _face(alpha[:, :-1, :], alpha[:, 1:, :]) * dt / spec.dy**2
        self.kz = _face(alpha[:-1], alpha[1:]) * dt / spec.dz**2

    def step(self, T: np.ndarray) -> None:
        dT = np.zeros_like(T)
        if T.shape[2] > 1:
            f = self.kx * (T[:, :, 1:] - T[:, :, :-1])
            dT[:, :, :-1] += f
            dT[:, :, 1:] -= f
        if T.shape[1] > 1:
            f = self.ky * (T[:, 1:, :] - T[:, :-1, :])
            dT[:, :-1, :] += f
            dT[:, 1:, :] -= f
        if T.shape[0] > 1:
            f = self.kz * (T[1:] - T[:-1])
            dT[:-1] += f
            dT[1:] -= f
        T += dT


def run_field(spec: SlabSpec, n_steps: int | None = None, check_energy: bool = True):
    """Simulate the temperature rise and return the observed-face frames.

    Returns ``(frames, energy_drift)`` where frames is a float64
    (n_frames, ny, nx) array of temperature *rise* (ambient excluded) and
    energy_drift the relative change of total heat once the source is off.
    """
    rng = np.random.default_rng(spec.seed)
    env = heating_envelope(spec, rng)
    dt, n_sub = choose_dt(spec)
    ex = spec.excitation
    if not ex.is_flash and ex.pulse_duration_s < dt:
        raise FormatError(f"pulse_duration_s={ex.pulse_duration_s:g} shorter than one time step ({dt:g} s)")

    solver = _Solver(spec, dt)
    T = np.zeros((spec.nz, spec.ny, spec.nx))
    z_heat = spec.nz - 1 if ex.heats_back else 0
    layer_gain = env / (spec.heat_capacity * spec.dz)

    n_frames = spec.n_frames
    pre = min(spec.pre_trigger_frames, n_frames - 1)
    frames = np.zeros((n_frames, spec.ny, spec.nx))
    total_steps = (n_frames - 1 - pre) * n_sub if n_steps is None else n_steps
    n_pulse_steps = 1 if ex.is_flash else int(round(ex.pulse_duration_s / dt))
    flux_per_step = ex.fluence / n_pulse_steps

    energy_ref = None
    step = 0
    k = pre
    if ex.is_flash:
        T[z_heat] += ex.fluence * layer_gain
    frames[k] = T[0]
    for step in range(total_steps):
        if not ex.is_flash and step < n_pulse_steps:
            T[z_heat] += flux_per_step * layer_gain
        elif energy_ref is None:
            energy_ref = T.sum()
        solver.step(T)
        if (step + 1) % n_sub == 0 and k + 1 < n_frames:
            k += 1
            frames[k] = T[0]

    drift = 0.0
    if energy_ref is not None and energy_ref != 0:
        drift = abs(T.sum() - energy_ref) / abs(energy_ref)
        if check_energy and drift > ENERGY_TOL:
            raise NumericError(f"energy drift {drift:.3g} exceeds {ENERGY_TOL:g} under adiabatic boundaries")
    return frames, drift


def sound_box_for(defect: BBox, nx: int, ny: int, side: int | None = None, gap: int = 3) -> BBox:
    """Nearest square region that clears the defect box by ``gap`` cells."""
    side = side or max(5, min(nx, ny) // 8)
    side = min(side, nx, ny)
    grown = BBox(defect.x1 - gap, defect.y1 - gap, defect.x2 + gap, defect.y2 + gap)
    cx, cy = defect.center
    best = None
    for y in range(0, ny - side + 1):
        for x in range(0, nx - side + 1):
            cand = BBox(x, y, x + side, y + side)
            if _overlaps(cand, grown):
                continue
            ccx, ccy = cand.center
            key = ((ccx - cx) ** 2 + (ccy - cy) ** 2, y, x)
            if best is None or key < best[0]:
                best = (key, cand)
    if best is None:
        raise FormatError("no defect-free region large enough for a sound ROI")
    return best[1]


def _overlaps(a: BBox, b: BBox) -> bool:
    return min(a.x2, b.x2) > max(a.x1, b.x1) and min(a.y2, b.y2) > max(a.y1, b.y1)


def simulate(spec: SlabSpec) -> tuple[InspectionSequence, RoiLabels]:
    """Run the slab model and return the noisy sequence with its ROI labels."""
    rise, _ = run_field(spec)
    frames = spec.ambient_k + rise
    if spec.excitation.noise_std > 0:
        noise_rng = np.random.default_rng([spec.seed, 1])
        frames = frames + noise_rng.normal(0.0, spec.excitation.noise_std, size=frames.shape)

    meta = {
        "mode": spec.excitation.mode,
        "seed": spec.seed,
        "pre_trigger_frames": min(spec.pre_trigger_frames, spec.n_frames - 1),
    }
    seq = InspectionSequence(frames.astype(np.float32), spec.frame_rate_hz, meta)

    if spec.defects:
        shallow = min(spec.defects, key=lambda d: (d.box3d[2], d.box3d))
        x1, y1, _, x2, y2, _ = shallow.box3d
        defect_box = BBox(x1, y1, x2, y2)
    else:
        # nothing to find; a centred placeholder keeps the label schema intact
        s = max(1, min(spec.nx, spec.ny) // 4)
        x0, y0 = (spec.nx - s) // 2, (spec.ny - s) // 2
        defect_box = BBox(x0, y0, x0 + s, y0 + s)
    labels = RoiLabels(defect_box, sound_box_for(defect_box, spec.nx, spec.ny), source="heatsim")
    return seq, labels


def suite_spec(index: int, seed: int, base: dict | None = None) -> SlabSpec:
    """Scenario ``index`` of a benchmark suite.

    Excitation modes cycle every sequence; severity alternates every four
    sequences between shallow/strong (high-energy impact analogue) and
    deep/weak (low-energy analogue).
    """
    base = dict(base or {})
    rng = np.random.default_rng([seed, index, 7])
    spec = SlabSpec.from_dict({k: v for k, v in base.items() if k not in ("defects", "excitation")})
    mode = MODES[index % len(MODES)]
    strong = (index // len(MODES)) % 2 == 0

    nx, ny, nz = spec.nx, spec.ny, spec.nz
    frac = rng.uniform(0.05, 0.10)
    side = np.sqrt(frac * nx * ny)
    aspect = rng.uniform(0.75, 1.33)
    w = int(np.clip(round(side * np.sqrt(aspect)), 3, nx - 4))
    h = int(np.clip(round(side / np.sqrt(aspect)), 3, ny - 4))
    margin = 2
    x1 = int(rng.integers(margin, nx - w - margin + 1))
    y1 = int(rng.integers(margin, ny - h - margin + 1))
    if strong:
        z1 = int(rng.integers(1, max(2, nz // 4) + 1))
        scale = float(rng.uniform(0.05, 0.12))
    else:
        z1 = int(rng.integers(max(2, nz // 4) + 1, max(3, nz // 2) + 1))
        scale = float(rng.uniform(0.2, 0.35))
    z1 = min(z1, nz - 1)
    z2 = min(nz, z1 + max(1, nz // 5))
    defect = DefectSpec((x1, y1, z1, x1 + w, y1 + h, z2), scale)

    ex = dict(
        mode=mode,
        pulse_duration_s=5.0,
        fluence=8000.0,
        nonuniformity=float(rng.uniform(0.05, 0.25)),
        noise_std=float(rng.uniform(0.03, 0.06)),
    )
    ex.update(base.get("excitation", {}))
    ex["mode"] = mode
    spec.excitation = ExcitationSpec(**ex)
    spec.defects = [defect]
    spec.seed = int(np.random.default_rng([seed, index]).integers(0, 2**63 - 1))
    return spec


def write_suite(specs, out_dir="."):
    """Simulate each spec and write ``.airt``, labels and spec JSON; returns the path pairs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    for i, spec in enumerate(specs):
        seq, labels = simulate(spec)
        stem = f"seq_{i:03d}_{spec.excitation.mode}"
        seq_path, lab_path = out / f"{stem}.airt", out / f"{stem}.labels.json"
        write_sequence(seq, seq_path)
        write_labels(labels, lab_path)
        (out / f"{stem}.spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
        log.info("wrote %s", seq_path)
        pairs.append((seq_path, lab_path))
    return pairs


def make_benchmark_suite(n_sequences: int = 25, seed: int = 0, out_dir=".", base: dict | None = None):
    """Simulate and write a labelled suite; returns ``[(sequence_path, labels_path), ...]``."""
    if n_sequences < 1:
        raise FormatError("n_sequences must be >= 1")
    return write_suite([suite_spec(i, seed, base) for i in range(n_sequences)], out_dir)
