"""
Synthetic tank experiments: spherical targets, noisy averaged frames and
deliberately mismodeled reconstruction domains.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .dn import assemble_nd_dn, build_basis, eigen_currents
from .errors import ConfigError
from .forward import CEMModel, PatternSet, mean_free_basis
from .geometry import BoxDomain, ElectrodeLayout, build_box_layout, mesh_box, rebuild_layout, tangential_axes

TANK_DIMS = (0.17, 0.255, 0.17)
TANK_PATTERN = {"ends": 4, "sides": 6}
ELECTRODE_SIDE = 0.08
BACKGROUND = 0.024
TARGET_SIGMA = 0.29
TARGET_RADIUS = 0.02635
DEFAULT_SNR_DB = 96.0
DEFAULT_FRAMES = 100
CURRENT_AMPLITUDE = 1e-3

MISMODEL_DIMS = {
    "correct": TANK_DIMS,
    "mid": (0.18, 0.27, 0.19),
    "large": (0.20, 0.35, 0.25),
}


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    sigma: float

    def to_dict(self) -> dict:
        return {"center_m": [float(v) for v in self.center], "radius_m": self.radius, "sigma_S_per_m": self.sigma}


@dataclass(frozen=True)
class Phantom:
    background: float
    spheres: tuple = ()

    def __post_init__(self):
        if self.background <= 0 or any(s.sigma <= 0 or s.radius <= 0 for s in self.spheres):
            raise ConfigError("conductivities and radii must be positive")

    def check_inside(self, domain: BoxDomain) -> None:
        for s in self.spheres:
            c = np.asarray(s.center, float)
            if np.any(c - s.radius < 0) or np.any(c + s.radius > domain.dims):
                raise ConfigError(f"sphere at {c.tolist()} with radius {s.radius} leaves the box")

    def nodal_sigma(self, nodes: np.ndarray) -> np.ndarray:
        """Binary rasterization: sphere value at nodes inside a sphere."""
        sigma = np.full(len(nodes), self.background)
        for s in self.spheres:
            inside = np.linalg.norm(nodes - np.asarray(s.center, float), axis=1) <= s.radius
            sigma[inside] = s.sigma
        return sigma

    def to_dict(self) -> dict:
        return {"background_S_per_m": self.background, "spheres": [s.to_dict() for s in self.spheres]}

    @classmethod
    def from_dict(cls, d) -> "Phantom":
        try:
            spheres = tuple(Sphere(tuple(float(v) for v in s["center_m"]), float(s["radius_m"]),
                                   float(s["sigma_S_per_m"])) for s in d.get("spheres", []))
            return cls(float(d["background_S_per_m"]), spheres)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed phantom description: {exc}") from exc


@dataclass(frozen=True)
class ForwardMeshSpec:
    """Mesh used to synthesize data; jittered so it never coincides with a
    reconstruction mesh."""

    h_far: float = 0.02
    h_electrode: float = 0.008
    jitter: float = 0.2
    seed: int = 7


@dataclass(frozen=True)
class Scenario:
    true_layout: ElectrodeLayout
    model_layout: ElectrodeLayout
    phantom: Phantom
    snr_db: float | None = DEFAULT_SNR_DB
    frames: int = DEFAULT_FRAMES
    seed: int = 0
    mesh: ForwardMeshSpec = field(default_factory=ForwardMeshSpec)
    name: str = "correct"

    def __post_init__(self):
        if self.true_layout.n_electrodes != self.model_layout.n_electrodes or \
                not np.array_equal(self.true_layout.faces, self.model_layout.faces):
            raise ConfigError("modeled layout must have the same electrodes in the same order as the true one")
        if self.frames < 1:
            raise ConfigError("frame count must be at least 1")
        self.phantom.check_inside(self.true_layout.domain)

    @property
    def true_domain(self) -> BoxDomain:
        return self.true_layout.domain

    @property
    def model_domain(self) -> BoxDomain:
        return self.model_layout.domain

    def truth_centers(self) -> np.ndarray:
        """Sphere centres carried into the modeled box."""
        c = np.array([s.center for s in self.phantom.spheres], float).reshape(-1, 3)
        return map_to_model(c, self.true_layout, self.model_layout)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "true_layout": self.true_layout.to_dict(),
            "model_layout": self.model_layout.to_dict(),
            "phantom": self.phantom.to_dict(),
            "snr_db": self.snr_db,
            "frames": self.frames,
            "seed": self.seed,
            "forward_mesh": {"h_far_m": self.mesh.h_far, "h_electrode_m": self.mesh.h_electrode,
                             "jitter": self.mesh.jitter, "seed": self.mesh.seed},
        }

    @classmethod
    def from_dict(cls, d) -> "Scenario":
        try:
            true_layout = ElectrodeLayout.from_dict(d["true_layout"])
            model_layout = ElectrodeLayout.from_dict(d.get("model_layout", d["true_layout"]))
            fm = d.get("forward_mesh", {})
            mesh = ForwardMeshSpec(float(fm.get("h_far_m", 0.02)), float(fm.get("h_electrode_m", 0.008)),
                                   float(fm.get("jitter", 0.2)), int(fm.get("seed", 7)))
            snr = d.get("snr_db", DEFAULT_SNR_DB)
            return cls(true_layout, model_layout, Phantom.from_dict(d["phantom"]),
                       None if snr is None else float(snr), int(d.get("frames", DEFAULT_FRAMES)),
                       int(d.get("seed", 0)), mesh, str(d.get("name", "custom")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed scenario: {exc}") from exc

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load_json(cls, path) -> "Scenario":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse scenario {path}: {exc}") from exc


def tank_layout(dims=TANK_DIMS) -> ElectrodeLayout:
    return build_box_layout(BoxDomain(*dims), TANK_PATTERN, ELECTRODE_SIDE)


def electrode_lattice(layout: ElectrodeLayout) -> list[np.ndarray]:
    """Distinct electrode-centre coordinates along each axis."""
    out = []
    for axis in range(3):
        vals = [c[axis] for c, f in zip(layout.centers, layout.faces) if axis in tangential_axes(int(f))]
        out.append(np.unique(np.round(vals, 12)))
    return out


def lattice_target(layout: ElectrodeLayout, index: tuple[int, int]) -> np.ndarray:
    """Target centre at the crossing of electrode-lattice lines ``index``
    along x and the longest axis, at the height of the lowest electrode row."""
    lat = electrode_lattice(layout)
    return np.array([lat[0][index[0]], lat[1][index[1]], lat[2][0]])


def standard_scenario(targets=((0, 1),), snr_db: float | None = DEFAULT_SNR_DB, frames: int = DEFAULT_FRAMES,
                      seed: int = 0, mesh: ForwardMeshSpec | None = None) -> Scenario:
    """The desk tank with 290 mS/m spheres at electrode-lattice positions in
    24 mS/m saline; ``targets`` index the lattice as in :func:`lattice_target`."""
    layout = tank_layout()
    spheres = tuple(Sphere(tuple(lattice_target(layout, t)), TARGET_RADIUS, TARGET_SIGMA) for t in targets)
    return Scenario(layout, layout, Phantom(BACKGROUND, spheres), snr_db, frames, seed, mesh or ForwardMeshSpec())


def mismodel_scenario(name: str, base: Scenario) -> Scenario:
    if name not in MISMODEL_DIMS:
        raise ConfigError(f"unknown mismodel {name!r}; expected one of {sorted(MISMODEL_DIMS)}")
    dims = MISMODEL_DIMS[name]
    if name == "correct":
        model = base.true_layout
    else:
        model = rebuild_layout(base.true_layout, BoxDomain(*dims))
    return replace(base, model_layout=model, name=name)


def map_to_model(points, true_layout: ElectrodeLayout, model_layout: ElectrodeLayout) -> np.ndarray:
    """Carry points from the true box into the modeled box, piecewise
    linearly per axis through the box walls and the electrode lattice."""
    points = np.atleast_2d(np.asarray(points, float))
    lt, lm = electrode_lattice(true_layout), electrode_lattice(model_layout)
    out = np.empty_like(points)
    for a in range(3):
        kt = np.concatenate([[0.0], lt[a], [true_layout.domain.dims[a]]])
        km = np.concatenate([[0.0], lm[a], [model_layout.domain.dims[a]]])
        if len(kt) != len(km):
            raise ConfigError("true and modeled layouts have different electrode lattices")
        out[:, a] = np.interp(points[:, a], kt, km)
    return out


@dataclass(frozen=True)
class SimulatedFrames:
    data: PatternSet
    reference: PatternSet
    data_frames: np.ndarray         # F x L x K
    reference_frames: np.ndarray


def noise_std(V: np.ndarray, snr_db: float | None) -> float:
    return 0.0 if snr_db is None else float(np.abs(V).max() * 10 ** (-snr_db / 20))


def _noisy_frames(V, snr_db, frames, rng):
    std = noise_std(V, snr_db)
    if std == 0.0:
        return np.broadcast_to(V, (frames,) + V.shape).copy()
    return V[None] + std * rng.standard_normal((frames,) + V.shape)


def simulate_scenario(scenario: Scenario, amplitude: float = CURRENT_AMPLITUDE) -> SimulatedFrames:
    """Noisy frames of the phantom and of the empty tank on the true box.

    Currents are the eigenvectors of the simulated homogeneous ND matrix.
    Noise is iid Gaussian with ``std = max|V| 10^(-snr/20)`` per frame, drawn
    from a Philox stream keyed by the scenario seed.
    """
    spec = scenario.mesh
    layout = scenario.true_layout
    mesh = mesh_box(layout.domain, layout, spec.h_far, spec.h_electrode, jitter=spec.jitter, seed=spec.seed)
    model = CEMModel(mesh, layout)
    bg = np.full(mesh.n_nodes, scenario.phantom.background)
    L = layout.n_electrodes
    probe = model.solve(bg, mean_free_basis(L))
    nd, _ = assemble_nd_dn(probe, build_basis(probe.I))
    I = amplitude * eigen_currents(nd.R)
    ref = model.solve(bg, I).V
    dat = model.solve(scenario.phantom.nodal_sigma(mesh.nodes), I).V if scenario.phantom.spheres else ref
    rng = np.random.Generator(np.random.Philox(key=scenario.seed))
    dframes = _noisy_frames(dat, scenario.snr_db, scenario.frames, rng)
    rframes = _noisy_frames(ref, scenario.snr_db, scenario.frames, rng)
    return SimulatedFrames(PatternSet(I, dframes.mean(axis=0)), PatternSet(I, rframes.mean(axis=0)),
                           dframes, rframes)


def simulate_phantom_frames(scenario: Scenario) -> tuple[PatternSet, PatternSet]:
    sim = simulate_scenario(scenario)
    return sim.data, sim.reference
