"""Synthetic seen/unseen domain-shift experiment.

Each domain is a family of scenes: a bright square moves in one of four
directions (the class) over a textured background that drifts with a
random camera motion. Domains share the classes and differ only in the
background texture and its contrast. Students see simulated event clips;
the teacher sees the ground-truth motion field of the same scenes.
"""

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .encode import make_clip
from .errors import InputError
from .motionlab.net import NetConfig, ToyNet
from .motionlab.optim import TrainConfig
from .motionlab.train import evaluate, train_student_distilled, train_teacher
from .scenes import interval_coverage, periodic_texture, sample_periodic
from .simulate import FrameSequence, SimulatorConfig, adaptive_upsample, simulate_events

DIRECTIONS = np.array([(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)])  # (vx, vy): right, left, down, up


@dataclass(frozen=True)
class Domain:
    name: str
    texture_scale: float
    bg_range: tuple
    fg_level: float = 0.95


DEFAULT_DOMAINS = (
    Domain("D1", texture_scale=1.0, bg_range=(0.05, 0.45)),
    Domain("D2", texture_scale=3.0, bg_range=(0.25, 0.65)),
    Domain("D3", texture_scale=1.8, bg_range=(0.05, 0.75)),
)


@dataclass
class ExperimentSpec:
    domains: tuple = DEFAULT_DOMAINS
    n_classes: int = 4
    size: int = 12
    square: float = 4.0
    frames: int = 9
    duration_us: int = 50_000
    speed: tuple = (0.6, 1.0)        # object speed range, px per frame
    ego_speed: float = 0.1           # camera drift bound, px per frame
    n_train: int = 96
    n_test: int = 160
    segments: int = 5
    bins: int = 3
    clip: float = 0.5
    c_pos: float = 0.15
    c_neg: float = 0.15
    refractory_us: int = 0
    conv_channels: tuple = (8,)
    se_reduction: int = 2
    iterations: int = 1000
    batch_size: int = 16
    lr: float = 0.01
    alpha: float = 100.0
    seeds: tuple = (0, 1, 2, 3, 4)

    def __post_init__(self):
        self.domains = tuple(d if isinstance(d, Domain) else Domain(**d) for d in self.domains)
        if not self.domains:
            raise InputError("experiment needs at least one domain")
        if not 1 <= self.n_classes <= len(DIRECTIONS):
            raise InputError(f"n_classes must lie in [1, {len(DIRECTIONS)}], got {self.n_classes}")
        if self.speed[1] > 1.0 or self.ego_speed + self.speed[1] > 2.0:
            raise InputError("per-frame motion above 1 px aliases the rendered frames")

    def sim_config(self):
        return SimulatorConfig(c_pos=self.c_pos, c_neg=self.c_neg, refractory_us=self.refractory_us)

    def train_config(self, seed, alpha):
        return TrainConfig(lr=self.lr, iterations=self.iterations, batch_size=self.batch_size,
                           alpha=alpha, seed=seed, log_every=max(1, self.iterations // 10))

    def net_config(self, in_channels):
        return NetConfig(in_channels=in_channels, n_classes=self.n_classes, conv_channels=self.conv_channels,
                         se=True, se_reduction=self.se_reduction)


def render_sample(domain: Domain, label, spec: ExperimentSpec, rng):
    """Frames, timestamps and per-frame ground-truth flow ``(K, H, W, 2)`` for one scene."""
    n, k = spec.size, spec.frames
    speed = rng.uniform(*spec.speed)
    v_obj = DIRECTIONS[label] * speed
    ang = rng.uniform(0, 2 * np.pi)
    v_ego = spec.ego_speed * rng.uniform(0, 1) * np.array([np.cos(ang), np.sin(ang)])
    travel = v_obj * (k - 1)
    # start so the square stays inside the view for the whole clip
    lo = np.maximum(0.0, -travel)
    hi = np.minimum(n - spec.square, n - spec.square - travel)
    start = rng.uniform(lo, hi)
    tex = domain.bg_range[0] + (domain.bg_range[1] - domain.bg_range[0]) * periodic_texture(
        rng, 2 * n, domain.texture_scale)
    yy, xx = np.meshgrid(np.arange(n, dtype=np.float64), np.arange(n, dtype=np.float64), indexing="ij")
    frames = np.empty((k, n, n))
    flow = np.empty((k, n, n, 2))
    for f in range(k):
        bg = sample_periodic(tex, yy - v_ego[1] * f, xx - v_ego[0] * f)
        x0, y0 = start + v_obj * f
        cov = interval_coverage(y0, y0 + spec.square, n)[:, None] * interval_coverage(x0, x0 + spec.square, n)[None, :]
        frames[f] = bg * (1.0 - cov) + domain.fg_level * cov
        on_obj = (cov > 0.5)[..., None]
        flow[f] = np.where(on_obj, v_obj, v_ego)
    stamps = np.round(np.linspace(0, spec.duration_us, k)).astype(np.int64)
    return frames, stamps, flow


def flow_clip(flow, stamps, spec: ExperimentSpec):
    """Average the per-frame motion field over each of the clip's segments: ``(T, H, W, 2)``."""
    edges = np.linspace(stamps[0], stamps[-1], spec.segments + 1)
    mid = 0.5 * (stamps[:-1] + stamps[1:])  # motion between consecutive frames
    inter = 0.5 * (flow[:-1] + flow[1:])
    seg = np.clip(np.searchsorted(edges, mid, side="right") - 1, 0, spec.segments - 1)
    out = np.zeros((spec.segments,) + flow.shape[1:])
    for s in range(spec.segments):
        out[s] = inter[seg == s].mean(axis=0)
    return out


def build_domain(domain: Domain, n, spec: ExperimentSpec, seed):
    """Paired event clips ``(N, T, H, W, B)``, flow clips ``(N, T, H, W, 2)`` and labels."""
    rng = np.random.default_rng(seed)
    cfg = spec.sim_config()
    labels = np.arange(n) % spec.n_classes
    rng.shuffle(labels)
    ev = np.empty((n, spec.segments, spec.size, spec.size, spec.bins))
    fl = np.empty((n, spec.segments, spec.size, spec.size, 2))
    bounds = (-spec.clip, spec.clip) if spec.clip > 0 else None
    for i, y in enumerate(labels):
        frames, stamps, flow = render_sample(domain, int(y), spec, rng)
        seq = adaptive_upsample(FrameSequence(frames, stamps), cfg)
        stream = simulate_events(seq, cfg)
        clip = make_clip(stream, "uniform_T", spec.segments, spec.bins, bounds)
        ev[i] = np.moveaxis(clip.to_array(), 1, -1)
        fl[i] = flow_clip(flow, stamps, spec)
    return ev, fl, labels


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)      # per (seed, method, train, test)
    summary: list = field(default_factory=list)   # per method seen/unseen means
    checks: list = field(default_factory=list)    # per (seed, train) teacher checksum / gap record
    seconds: float = 0.0

    def mean(self, method, unseen):
        vals = [r["accuracy"] for r in self.rows if r["method"] == method and (r["train"] != r["test"]) == unseen]
        return float(np.mean(vals)) if vals else float("nan")

    def records(self):
        """JSON-ready rows; timing is kept out so the table is a pure function of the spec."""
        return ([dict(kind="row", **r) for r in self.rows] + [dict(kind="check", **c) for c in self.checks]
                + [dict(kind="summary", **s) for s in self.summary])


def run_experiment(spec: ExperimentSpec = None, progress=None) -> ExperimentResult:
    """Train a CE-only and a distilled student per (seed, training domain); test on every domain."""
    spec = spec or ExperimentSpec()
    t0 = time.perf_counter()
    res = ExperimentResult()
    for seed in spec.seeds:
        data = {}
        for d, dom in enumerate(spec.domains):
            base = 1000 * seed + 10 * d
            data[dom.name] = (build_domain(dom, spec.n_train, spec, base + 1),
                              build_domain(dom, spec.n_test, spec, base + 2))
        for dom in spec.domains:
            (ev, fl, y), _ = data[dom.name]
            teacher = ToyNet(spec.net_config(2), seed=seed + 100)
            teacher = train_teacher(teacher, fl, y, spec.train_config(seed, 0.0)).net.freeze()
            ce = train_student_distilled(ToyNet(spec.net_config(spec.bins), seed=seed), teacher, ev, fl, y,
                                         spec.train_config(seed, 0.0))
            kd = train_student_distilled(ToyNet(spec.net_config(spec.bins), seed=seed), teacher, ev, fl, y,
                                         spec.train_config(seed, spec.alpha))
            gaps = [r.feature_gap for r in kd.log]
            res.checks.append(dict(seed=seed, train=dom.name, teacher_checksum=kd.teacher_checksum_before,
                                   teacher_unchanged=kd.teacher_checksum_before == kd.teacher_checksum_after
                                   == ce.teacher_checksum_after,
                                   gap_first=gaps[0], gap_last=gaps[-1],
                                   gap_start=kd.gap_start, gap_end=kd.gap_end,
                                   teacher_acc=evaluate(teacher, fl, y)))
            for test in spec.domains:
                ev_t, fl_t, y_t = data[test.name][1]
                for method, net in (("ce", ce.net), ("distill", kd.net)):
                    res.rows.append(dict(seed=seed, method=method, train=dom.name, test=test.name,
                                         accuracy=evaluate(net, ev_t, y_t)))
            if progress:
                progress(seed, dom.name, res.rows[-2 * len(spec.domains):])
    for method in ("ce", "distill"):
        res.summary.append(dict(method=method, seen=res.mean(method, False), unseen=res.mean(method, True)))
    res.seconds = time.perf_counter() - t0
    return res


def spec_dict(spec: ExperimentSpec):
    d = asdict(spec)
    d["domains"] = [asdict(x) for x in spec.domains]
    return d


__all__ = ["DEFAULT_DOMAINS", "Domain", "ExperimentResult", "ExperimentSpec", "build_domain", "flow_clip",
           "render_sample", "run_experiment"]
