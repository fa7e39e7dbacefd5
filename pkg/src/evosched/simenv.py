"""Deterministic discrete-event simulator for edge-assisted model evolution.

Each mobile end streams a synthetic frame trace through a drift detector; a
detected drift triggers frame sampling, upload, scheduling on the shared GPU
pool, retraining, and model download, closing one life cycle.  Five scheduling
policies are available, from plain serial FIFO to the full urgency-grouped
knapsack pipeline.  Identical (scenario, seed) inputs give identical outputs.
"""
from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    LifeCycle,
    QoEReport,
    UrgencyInput,
    penalized_average_qoe,
    penalty_weights_for_cycles,
    qoe_single,
    urgency,
)
from .drift import (
    Detection,
    DetectorConfig,
    DriftDetector,
    DriftEvent,
    DriftType,
    FrameRecord,
    write_trace_csv,
)
from .profiler import ModelArch, AccuracyCurve, memory_demand, param_count, MB
from .sampler import (
    GlobalFeatureModel,
    SamplerConfig,
    sample_gradual,
    sample_incremental,
    sample_sudden,
)
from .scheduler import (
    EvolutionTask,
    GpuPool,
    GroupingConfig,
    RunningEntry,
    allocate_compute,
    assign_group,
    decide_capacity,
    group_boundaries,
    group_number,
    select_tasks,
)

SCHEMA_VERSION = 1
ACCURACY_FLOOR = 0.05


class Policy(str, Enum):
    ADAPTIVE = "adaptive"            # grouping + knapsack + proportional compute
    DEFAULT_GPU = "default-gpu"      # FIFO admission, equal compute time-slices
    SERIAL_FIFO = "serial-fifo"      # one task at a time, arrival order
    SERIAL_PRIORITY = "serial-priority"  # one at a time, highest urgency first
    DP_NO_GROUPING = "dp-no-grouping"    # knapsack over the whole queue


@dataclass(frozen=True)
class DriftInjection:
    t: float                # drift onset
    drift_type: DriftType
    magnitude: float        # absolute CLC drop at full transition
    transition_s: float     # onset-to-settled duration
    recovery_s: float = 150.0  # CLC returns to base this long after settling

    def __post_init__(self):
        if self.t < 0 or self.transition_s < 0 or self.recovery_s < 0:
            raise ValueError("times must be non-negative")
        if not 0 < self.magnitude < 1:
            raise ValueError("magnitude must be in (0, 1)")


@dataclass(frozen=True)
class MobileEndSpec:
    end_id: str
    arch: ModelArch
    drift_events: Tuple[DriftInjection, ...]
    frame_rate: float = 1.0
    frame_bytes: float = 200_000.0
    base_accuracy: float = 0.8
    decay: float = 0.002           # accuracy loss per second during a transition
    gain_curve_truth: AccuracyCurve = AccuracyCurve(a_max=0.82, b=0.5, c=1.0)
    work_per_frame: float = 1.0    # compute-seconds per frame per epoch

    def __post_init__(self):
        if self.frame_rate <= 0 or self.frame_bytes <= 0:
            raise ValueError("frame_rate and frame_bytes must be positive")
        if not 0 < self.base_accuracy <= 1:
            raise ValueError("base_accuracy must be in (0, 1]")
        if self.decay < 0 or self.work_per_frame <= 0:
            raise ValueError("decay must be >= 0 and work_per_frame > 0")
        times = [e.t for e in self.drift_events]
        if times != sorted(times):
            raise ValueError("drift events must be time-ordered")
        object.__setattr__(self, "drift_events", tuple(self.drift_events))


@dataclass(frozen=True)
class ServerSpec:
    mem_capacity_mb: float = 8192.0
    compute_capacity: float = 8.0   # compute units per second
    gpu_count: int = 1

    def __post_init__(self):
        if self.mem_capacity_mb <= 0 or self.compute_capacity <= 0 or self.gpu_count < 1:
            raise ValueError("server capacities must be positive")

    @property
    def total_mem_mb(self) -> float:
        return self.mem_capacity_mb * self.gpu_count

    @property
    def total_compute(self) -> float:
        return self.compute_capacity * self.gpu_count


@dataclass(frozen=True)
class Scenario:
    seed: int
    ends: Tuple[MobileEndSpec, ...]
    server: ServerSpec = ServerSpec()
    uplink_mbps: float = 10.0       # MiB per second
    downlink_mbps: float = 20.0
    policy: Policy = Policy.ADAPTIVE
    duration: float = 600.0
    grouping: GroupingConfig = GroupingConfig(sigma=24.0)
    sampler: SamplerConfig = SamplerConfig()
    detector: DetectorConfig = DetectorConfig()
    epochs: int = 10
    data_reduction: float = 1.0
    unfrozen_fraction: float = 0.31
    lookahead_factor: float = 0.1

    def __post_init__(self):
        if not self.ends:
            raise ValueError("scenario needs at least one end")
        if self.uplink_mbps <= 0 or self.downlink_mbps <= 0:
            raise ValueError("bandwidths must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.data_reduction <= 1 or not 0 < self.unfrozen_fraction <= 1:
            raise ValueError("data_reduction and unfrozen_fraction must be in (0, 1]")
        ids = [e.end_id for e in self.ends]
        if len(set(ids)) != len(ids):
            raise ValueError("end ids must be unique")
        object.__setattr__(self, "ends", tuple(self.ends))


# --- trace synthesis --------------------------------------------------------

FEATURE_DIM = 4
PIXEL_OLD_FRACTION = 0.3
PIXEL_NEW_FRACTION = 0.8


def default_centroids() -> GlobalFeatureModel:
    """Two-category feature model used by generated traces."""
    return GlobalFeatureModel(centroids={
        0: ((0.0, 0.0, 0.0, 0.0),),
        1: ((1.0, 1.0, 1.0, 1.0),),
    })


def _stream(seed: int, end_index: int, purpose: int) -> np.random.Generator:
    """Named substream: adding an end or purpose never perturbs the others."""
    return np.random.default_rng(np.random.SeedSequence((seed, end_index, purpose)))


def _clc_level(spec: MobileEndSpec, t: float, mix: float) -> float:
    """Mean CLC at time t; ``mix`` resolves the stochastic gradual regimes."""
    base = spec.base_accuracy
    level = base
    for ev in spec.drift_events:
        settle = ev.t + ev.transition_s
        recover = settle + ev.recovery_s
        if t < ev.t or t >= recover:
            continue
        if t >= settle:
            level = base - ev.magnitude
        elif ev.drift_type is DriftType.SUDDEN:
            level = base - ev.magnitude
        elif ev.drift_type is DriftType.INCREMENTAL:
            frac = (t - ev.t) / ev.transition_s if ev.transition_s > 0 else 1.0
            level = base - ev.magnitude * frac
        else:  # gradual: old/new mixture with rising new-regime probability
            q = (t - ev.t) / ev.transition_s if ev.transition_s > 0 else 1.0
            level = base - ev.magnitude if mix < q else base
    return level


def _pixel_level(spec: MobileEndSpec, t: float, area: float) -> float:
    p_old = PIXEL_OLD_FRACTION * area
    p_new = PIXEL_NEW_FRACTION * area
    level = p_old
    for ev in spec.drift_events:
        settle = ev.t + ev.transition_s
        recover = settle + ev.recovery_s
        if t < ev.t or t >= recover:
            continue
        if ev.drift_type is DriftType.SUDDEN:
            level = p_new
        elif ev.drift_type is DriftType.INCREMENTAL:
            # The scene statistics shift faster than the confidence does, so
            # the early transition already looks like the new distribution.
            ramp = ev.transition_s / 2.0
            frac = min(1.0, (t - ev.t) / ramp) if ramp > 0 else 1.0
            level = p_old + (p_new - p_old) * frac
        else:  # gradual: scene statistics only settle once the mixture does
            level = p_new if t >= settle else p_old
    return level


def _drift_shift(spec: MobileEndSpec, t: float) -> float:
    """Feature-space displacement of detections while a drift is active."""
    for ev in spec.drift_events:
        if ev.t <= t < ev.t + ev.transition_s + ev.recovery_s:
            return ev.magnitude
    return 0.0


def gen_trace(
    spec: MobileEndSpec,
    seed: int,
    end_index: int,
    duration: float,
    sampler_cfg: Optional[SamplerConfig] = None,
) -> List[FrameRecord]:
    """Deterministic per-frame trace realizing the end's declared drifts."""
    cfg = sampler_cfg or SamplerConfig()
    area = float(cfg.frame_w * cfg.frame_h)
    noise_rng = _stream(seed, end_index, 0)
    mix_rng = _stream(seed, end_index, 1)
    det_rng = _stream(seed, end_index, 2)
    model = default_centroids()

    n_frames = int(duration * spec.frame_rate)
    frames = []
    for i in range(n_frames):
        t = (i + 1) / spec.frame_rate
        mix = mix_rng.random()
        level = _clc_level(spec, t, mix)
        clc = min(1.0, max(1e-3, level + noise_rng.normal(0.0, 0.01)))
        root = math.sqrt(clc)
        pixel = max(0.0, _pixel_level(spec, t, area) + noise_rng.normal(0.0, 0.02 * area))
        shift = _drift_shift(spec, t)
        dets = []
        for cat in (0, 1):
            centroid = np.asarray(model.centroids[cat][0])
            feat = centroid + shift + det_rng.normal(0.0, 0.03, size=FEATURE_DIM)
            dets.append(Detection(category=cat, feature=tuple(float(x) for x in feat)))
        frames.append(FrameRecord(t=t, cc=root, lc=root, pixel_diff=pixel,
                                  detections=tuple(dets)))
    return frames


# --- ground-truth retraining cost model -------------------------------------

def ground_truth_retrain_seconds(
    param_mb: float,
    data_count: float,
    unfrozen_layers: float,
    epochs: float,
    batch: float,
) -> float:
    """Reference cost model the time regressor is trained against."""
    return (2.0
            + 0.0008 * param_mb * unfrozen_layers
            + 0.02 * data_count * epochs / math.sqrt(batch))


def synth_regressor_samples(n: int, seed: int) -> List[Tuple[List[float], float]]:
    """Feature/target pairs drawn from the ground-truth cost model."""
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        f = [
            float(rng.uniform(50, 2000)),       # parameter size, MB
            float(rng.uniform(20, 400)),        # retraining-data count
            float(rng.integers(1, 31)),         # unfrozen layers
            float(rng.integers(5, 41)),         # epochs
            float(rng.integers(4, 65)),         # batch size
        ]
        samples.append((f, ground_truth_retrain_seconds(*f)))
    return samples


# --- metrics ----------------------------------------------------------------

@dataclass(frozen=True)
class TaskMetrics:
    task_id: str
    end_id: str
    urgency: float
    trigger_t: float
    t_infer: float
    t_upload: float
    t_schedule: float
    t_retrain: float
    t_download: float
    avg_accuracy: float
    qoe: float

    @property
    def t_evolve(self) -> float:
        return self.t_upload + self.t_schedule + self.t_retrain + self.t_download


@dataclass(frozen=True)
class SimMetrics:
    tasks: Tuple[TaskMetrics, ...]
    report: Optional[QoEReport]
    mean_evolving_time: float
    mean_t_schedule: float
    mean_t_retrain: float

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)


# --- accuracy model ---------------------------------------------------------

class _AccuracyModel:
    """Piecewise-linear served-model accuracy of one end.

    Decays at the end's rate during declared drift transitions, holds
    otherwise, and jumps up at each model download.  Evaluation is anchored at
    the most recent restoration point so simulated downloads simply reset it.
    """

    def __init__(self, spec: MobileEndSpec):
        self._decays = [(ev.t, ev.t + ev.transition_s, spec.decay)
                        for ev in spec.drift_events]
        self._anchor_t = 0.0
        self._anchor_a = spec.base_accuracy

    def at(self, t: float) -> float:
        drop = 0.0
        for lo, hi, rate in self._decays:
            overlap = min(t, hi) - max(self._anchor_t, lo)
            if overlap > 0:
                drop += rate * overlap
        return max(ACCURACY_FLOOR, self._anchor_a - drop)

    def restore(self, t: float, value: float) -> None:
        self._anchor_t = t
        self._anchor_a = max(ACCURACY_FLOOR, min(1.0, value))

    def mean_over(self, a: float, b: float) -> float:
        """Exact time-weighted mean over [a, b] (trapezoid on breakpoints,
        including points where the floor clamp engages)."""
        if b <= a:
            return self.at(a)
        points = {a, b}
        for lo, hi, _ in self._decays:
            for p in (lo, hi):
                if a < p < b:
                    points.add(p)
        grid = sorted(points)
        # clamp crossings: within each segment the unclamped value is linear
        extra = []
        for left, right in zip(grid, grid[1:]):
            va, vb = self._unclamped(left), self._unclamped(right)
            if (va - ACCURACY_FLOOR) * (vb - ACCURACY_FLOOR) < 0:
                frac = (va - ACCURACY_FLOOR) / (va - vb)
                extra.append(left + frac * (right - left))
        grid = sorted(set(grid) | set(extra))
        total = 0.0
        for left, right in zip(grid, grid[1:]):
            total += (self.at(left) + self.at(right)) / 2.0 * (right - left)
        return total / (b - a)

    def _unclamped(self, t: float) -> float:
        drop = 0.0
        for lo, hi, rate in self._decays:
            overlap = min(t, hi) - max(self._anchor_t, lo)
            if overlap > 0:
                drop += rate * overlap
        return self._anchor_a - drop


# --- simulation -------------------------------------------------------------

_EV_FRAME = "frame"
_EV_UPLOAD = "upload"
_EV_RETRAIN = "retrain"
_EV_DOWNLOAD = "download"
_EV_SCHEDULE = "schedule"

BYTES_PER_MB = MB  # bandwidth figures are MiB/s


@dataclass
class _EndState:
    spec: MobileEndSpec
    index: int
    trace: List[FrameRecord]
    detector: DriftDetector
    accuracy: _AccuracyModel
    frame_idx: int = 0
    busy: bool = False
    resume_t: float = 0.0
    cycle_start: float = 0.0
    mem_demand_mb: float = 0.0
    param_bytes: float = 0.0


@dataclass
class _TaskState:
    task: EvolutionTask
    end: _EndState
    trigger_t: float
    t_upload: float
    admit_t: float = 0.0
    t_retrain: float = 0.0
    remaining_work: float = 0.0   # default-gpu engine only


class _Sim:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.pool = GpuPool(
            mem_capacity=scenario.server.total_mem_mb,
            compute_capacity=scenario.server.total_compute,
        )
        self.queue: List[EvolutionTask] = []
        self.tasks: Dict[str, _TaskState] = {}
        self.finished: List[Tuple[TaskMetrics, LifeCycle]] = []
        self.heap: List[tuple] = []
        self._seq = 0
        self._task_counter = 0
        self.feature_model = default_centroids()
        self.boundaries: List[float] = []
        if scenario.policy in (Policy.ADAPTIVE,):
            k = group_number(scenario.grouping)
            g = scenario.grouping
            self.boundaries = group_boundaries(k, g.lambda_min, g.lambda_max, g.sigma)
        # default-gpu processor-sharing engine state
        self._ps_last_t = 0.0
        self._ps_version = 0

        self.ends = []
        for i, spec in enumerate(scenario.ends):
            trace = gen_trace(spec, scenario.seed, i, scenario.duration, scenario.sampler)
            end = _EndState(
                spec=spec, index=i, trace=trace,
                detector=DriftDetector(scenario.detector),
                accuracy=_AccuracyModel(spec),
                mem_demand_mb=memory_demand(spec.arch).total_mb,
                param_bytes=sum(param_count(l) for l in spec.arch.layers) * spec.arch.bitwidth / 8.0,
            )
            self.ends.append(end)
            if trace:
                self._push(trace[0].t, _EV_FRAME, end)

    # -- event plumbing --

    def _push(self, t: float, kind: str, payload) -> None:
        self._seq += 1
        heapq.heappush(self.heap, (t, self._seq, kind, payload))

    def run(self) -> SimMetrics:
        while self.heap:
            t, _, kind, payload = heapq.heappop(self.heap)
            if t > self.sc.duration:
                break
            if kind == _EV_FRAME:
                self._on_frame(t, payload)
            elif kind == _EV_UPLOAD:
                self._on_upload_done(t, payload)
            elif kind == _EV_RETRAIN:
                self._on_retrain_done(t, payload)
            elif kind == _EV_DOWNLOAD:
                self._on_download_done(t, payload)
            elif kind == _EV_SCHEDULE:
                self._admit(t)
        return self._collect()

    # -- mobile side --

    def _on_frame(self, t: float, end: _EndState) -> None:
        frame = end.trace[end.frame_idx]
        end.frame_idx += 1
        if end.frame_idx < len(end.trace):
            self._push(end.trace[end.frame_idx].t, _EV_FRAME, end)
        if end.busy or frame.t < end.resume_t:
            return
        event = end.detector.update(frame)
        if event is not None:
            self._on_trigger(t, end, event)

    def _on_trigger(self, t: float, end: _EndState, event: DriftEvent) -> None:
        window = [f for f in end.trace if event.t1 <= f.t <= event.t3]
        if event.drift_type is DriftType.SUDDEN:
            selected = sample_sudden(window, self.sc.sampler.r_f)
        elif event.drift_type is DriftType.INCREMENTAL:
            selected = sample_incremental(window, self.sc.sampler)
        else:
            selected = sample_gradual(window, self.sc.sampler, self.feature_model)
        n_frames = max(1, len(selected))

        end.busy = True
        t_upload = n_frames * end.spec.frame_bytes / (self.sc.uplink_mbps * BYTES_PER_MB)
        work = (n_frames * self.sc.epochs * end.spec.work_per_frame
                * self.sc.data_reduction)

        current = end.accuracy.at(t)
        lam = urgency(UrgencyInput(
            current_accuracy=current,
            accuracy_drop=max(0.0, end.spec.base_accuracy - current),
        ))
        self._task_counter += 1
        task = EvolutionTask(
            id=f"task{self._task_counter:04d}",
            end_id=end.spec.end_id,
            arrival_t=t + t_upload,
            urgency=lam,
            mem_demand=end.mem_demand_mb,
            predicted_t_r=work / self.pool.compute_capacity,
            work=work,
        )
        if self.boundaries:
            task.group = assign_group(lam, self.boundaries)
        self.tasks[task.id] = _TaskState(task=task, end=end, trigger_t=t,
                                         t_upload=t_upload)
        self._push(t + t_upload, _EV_UPLOAD, task.id)

    # -- edge side --

    def _on_upload_done(self, t: float, task_id: str) -> None:
        self.queue.append(self.tasks[task_id].task)
        self._admit(t)

    def _on_retrain_done(self, t: float, payload) -> None:
        if self.sc.policy is Policy.DEFAULT_GPU:
            task_id, version = payload
            if version != self._ps_version:
                return  # superseded by a later membership change
            self._ps_advance(t)
            done = [tid for tid, e in self.pool.running.items()
                    if self.tasks[tid].remaining_work <= 1e-9]
            for tid in done:
                self._complete(t, tid)
            self._ps_reschedule(t)
            self._admit(t)
            return

        task_id = payload
        entry = self.pool.running.get(task_id)
        if entry is None or abs(entry.completion_t - t) > 1e-9:
            return
        self._complete(t, task_id)
        if self.sc.policy in (Policy.ADAPTIVE, Policy.DP_NO_GROUPING) and self.pool.running:
            _, decision_t = decide_capacity(self.pool, self.sc.lookahead_factor, now=t)
            if decision_t > t + 1e-12:
                self._push(decision_t, _EV_SCHEDULE, None)
                return
        self._admit(t)

    def _complete(self, t: float, task_id: str) -> None:
        self.pool.running.pop(task_id, None)
        ts = self.tasks[task_id]
        ts.t_retrain = t - ts.admit_t
        t_download = (ts.end.param_bytes * self.sc.unfrozen_fraction
                      / (self.sc.downlink_mbps * BYTES_PER_MB))
        self._push(t + t_download, _EV_DOWNLOAD, task_id)

    def _on_download_done(self, t: float, task_id: str) -> None:
        ts = self.tasks[task_id]
        end = ts.end
        restored = min(1.0, end.spec.gain_curve_truth.predict(self.sc.epochs))
        restored = max(restored, end.accuracy.at(t))
        avg_acc = end.accuracy.mean_over(end.cycle_start, t)
        end.accuracy.restore(t, restored)

        task = ts.task
        cycle = LifeCycle(
            t_infer=max(0.0, ts.trigger_t - end.cycle_start),
            t_upload=ts.t_upload,
            t_schedule=ts.admit_t - task.arrival_t,
            t_retrain=ts.t_retrain,
            t_download=t - (ts.admit_t + ts.t_retrain),
            avg_accuracy=avg_acc,
        )
        self.finished.append((TaskMetrics(
            task_id=task.id,
            end_id=task.end_id,
            urgency=task.urgency,
            trigger_t=ts.trigger_t,
            t_infer=cycle.t_infer,
            t_upload=cycle.t_upload,
            t_schedule=cycle.t_schedule,
            t_retrain=cycle.t_retrain,
            t_download=cycle.t_download,
            avg_accuracy=avg_acc,
            qoe=qoe_single(cycle),
        ), cycle))

        end.busy = False
        end.resume_t = t
        end.cycle_start = t
        end.detector = DriftDetector(self.sc.detector)

    # -- admission policies --

    def _admit(self, t: float) -> None:
        if not self.queue:
            return
        policy = self.sc.policy
        if policy in (Policy.ADAPTIVE, Policy.DP_NO_GROUPING):
            self._admit_dp(t)
        elif policy is Policy.DEFAULT_GPU:
            self._admit_default_gpu(t)
        else:
            self._admit_serial(t)

    def _free_compute(self) -> float:
        return self.pool.compute_capacity - sum(e.share for e in self.pool.running.values())

    def _admit_dp(self, t: float) -> None:
        free_mem = self.pool.free_memory_at(t)
        free_compute = self._free_compute()
        if free_mem <= 0 or free_compute <= 1e-9:
            return
        if self.sc.policy is Policy.ADAPTIVE:
            groups = sorted({task.group for task in self.queue})
            chosen = ()
            for g in groups:  # promotion: fall through to the next band if
                candidates = [task for task in self.queue if task.group == g]
                result = select_tasks(candidates, free_mem, decision_t=t)
                if result.selected:
                    chosen = result.selected
                    break
        else:
            result = select_tasks(self.queue, free_mem, decision_t=t)
            chosen = result.selected
        if not chosen:
            return
        picked = [task for task in self.queue if task.id in chosen]
        shares = allocate_compute(picked, free_compute)
        for task in picked:
            self._start(t, task, shares[task.id])
        self.queue = [task for task in self.queue if task.id not in chosen]

    def _admit_serial(self, t: float) -> None:
        for task_id in baseline_step(self.sc.policy, self.queue, self.pool, t):
            task = next(task for task in self.queue if task.id == task_id)
            self._start(t, task, self.pool.compute_capacity)
            self.queue.remove(task)

    def _admit_default_gpu(self, t: float) -> None:
        self._ps_advance(t)
        chosen = baseline_step(self.sc.policy, self.queue, self.pool, t)
        if not chosen:
            return
        for task_id in chosen:
            task = next(task for task in self.queue if task.id == task_id)
            self.queue.remove(task)
            ts = self.tasks[task.id]
            ts.admit_t = t
            ts.remaining_work = task.work
            self.pool.running[task.id] = RunningEntry(
                mem=task.mem_demand, share=0.0, completion_t=math.inf,
                t_r=task.predicted_t_r, started_t=t,
            )
        self._ps_reschedule(t)

    def _start(self, t: float, task: EvolutionTask, share: float) -> None:
        ts = self.tasks[task.id]
        ts.admit_t = t
        duration = task.work / share
        self.pool.running[task.id] = RunningEntry(
            mem=task.mem_demand, share=share, completion_t=t + duration,
            t_r=duration, started_t=t,
        )
        self._push(t + duration, _EV_RETRAIN, task.id)

    # -- processor-sharing engine (default-gpu policy) --

    def _ps_advance(self, t: float) -> None:
        n = len(self.pool.running)
        if n:
            share = self.pool.compute_capacity / n
            dt = t - self._ps_last_t
            for tid in self.pool.running:
                self.tasks[tid].remaining_work = max(
                    0.0, self.tasks[tid].remaining_work - share * dt)
        self._ps_last_t = t

    def _ps_reschedule(self, t: float) -> None:
        self._ps_version += 1
        n = len(self.pool.running)
        if not n:
            return
        share = self.pool.compute_capacity / n
        for tid, entry in self.pool.running.items():
            entry.share = share
            entry.completion_t = t + self.tasks[tid].remaining_work / share
        next_t = min(e.completion_t for e in self.pool.running.values())
        next_id = min(tid for tid, e in self.pool.running.items()
                      if e.completion_t == next_t)
        self._push(next_t, _EV_RETRAIN, (next_id, self._ps_version))

    # -- reporting --

    def _collect(self) -> SimMetrics:
        if not self.finished:
            return SimMetrics(tasks=(), report=None, mean_evolving_time=0.0,
                              mean_t_schedule=0.0, mean_t_retrain=0.0)
        rows = tuple(m for m, _ in self.finished)
        cycles = [c for _, c in self.finished]
        weights = penalty_weights_for_cycles(cycles)
        report = penalized_average_qoe(
            ends=[(m.task_id, m.urgency, m.qoe) for m in rows],
            schedule_times=[m.t_schedule for m in rows],
            retrain_times=[m.t_retrain for m in rows],
            weights=weights,
        )
        n = len(rows)
        return SimMetrics(
            tasks=rows,
            report=report,
            mean_evolving_time=sum(m.t_evolve for m in rows) / n,
            mean_t_schedule=sum(m.t_schedule for m in rows) / n,
            mean_t_retrain=sum(m.t_retrain for m in rows) / n,
        )


def baseline_step(
    policy: Policy,
    queue: Sequence[EvolutionTask],
    pool: GpuPool,
    now: float = 0.0,
) -> List[str]:
    """Task ids a baseline policy would admit from ``queue`` right now.

    Default GPU: arrival order while memory fits, stopping at the first task
    that does not (head-of-line rule).  Serial policies: one task at a time,
    FIFO or highest urgency first.  DP-without-grouping: knapsack selection
    over the whole queue.
    """
    if not queue:
        return []
    free_mem = pool.free_memory_at(now)
    if policy is Policy.DEFAULT_GPU:
        chosen = []
        for task in queue:
            if task.mem_demand > free_mem:
                break
            chosen.append(task.id)
            free_mem -= task.mem_demand
        return chosen
    if policy in (Policy.SERIAL_FIFO, Policy.SERIAL_PRIORITY):
        if pool.running:
            return []
        order = list(queue)
        if policy is Policy.SERIAL_PRIORITY:
            order.sort(key=lambda task: (-task.urgency, task.arrival_t, task.id))
        for task in order:
            if task.mem_demand <= pool.mem_capacity:
                return [task.id]
        return []
    if policy is Policy.DP_NO_GROUPING:
        return list(select_tasks(queue, free_mem, decision_t=now).selected)
    raise ValueError(f"{policy} is not a baseline policy")


def run(scenario: Scenario) -> SimMetrics:
    """Simulate one scenario to completion and return its metrics."""
    return _Sim(scenario).run()


# --- scenario JSON ----------------------------------------------------------

def _arch_doc(arch: ModelArch) -> dict:
    return {
        "bitwidth": arch.bitwidth, "input_w": arch.input_w,
        "input_h": arch.input_h, "batch": arch.batch,
        "layers": [
            {"kind": l.kind.value, "c_in": l.c_in, "c_out": l.c_out,
             "k1": l.k1, "k2": l.k2, "s1": l.s1, "s2": l.s2,
             "p1": l.p1, "p2": l.p2}
            for l in arch.layers
        ],
    }


def _arch_from_doc(doc: dict) -> ModelArch:
    from .profiler import LayerKind, LayerSpec
    layers = tuple(
        LayerSpec(kind=LayerKind(rec["kind"]), c_in=rec["c_in"], c_out=rec["c_out"],
                  k1=rec.get("k1", 1), k2=rec.get("k2", 1),
                  s1=rec.get("s1", 1), s2=rec.get("s2", 1),
                  p1=rec.get("p1", 0), p2=rec.get("p2", 0))
        for rec in doc["layers"]
    )
    return ModelArch(layers=layers, bitwidth=doc.get("bitwidth", 32),
                     input_w=doc.get("input_w", 224), input_h=doc.get("input_h", 224),
                     batch=doc.get("batch", 1))


def scenario_to_json(scenario: Scenario) -> dict:
    g, s, d = scenario.grouping, scenario.sampler, scenario.detector
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": scenario.seed,
        "policy": scenario.policy.value,
        "duration": scenario.duration,
        "uplink_mbps": scenario.uplink_mbps,
        "downlink_mbps": scenario.downlink_mbps,
        "epochs": scenario.epochs,
        "data_reduction": scenario.data_reduction,
        "unfrozen_fraction": scenario.unfrozen_fraction,
        "lookahead_factor": scenario.lookahead_factor,
        "server": {
            "mem_capacity_mb": scenario.server.mem_capacity_mb,
            "compute_capacity": scenario.server.compute_capacity,
            "gpu_count": scenario.server.gpu_count,
        },
        "grouping": {
            "n_max": g.n_max, "n_min": g.n_min, "eps_range": g.eps_range,
            "sigma": g.sigma, "lambda_min": g.lambda_min, "lambda_max": g.lambda_max,
        },
        "sampler": {
            "r_f": s.r_f, "r0": s.r0, "delta_r": s.delta_r, "r_max": s.r_max,
            "eps1": s.eps1, "eps2": s.eps2, "frame_w": s.frame_w, "frame_h": s.frame_h,
        },
        "detector": {
            "window_frames": d.window_frames, "sub_windows": d.sub_windows,
            "temp_window_frames": d.temp_window_frames,
            "rod_threshold": d.rod_threshold,
            "variance_threshold": d.variance_threshold,
            "tau": d.tau, "d0_factor": d.d0_factor,
        },
        "ends": [
            {
                "end_id": e.end_id,
                "arch": _arch_doc(e.arch),
                "frame_rate": e.frame_rate,
                "frame_bytes": e.frame_bytes,
                "base_accuracy": e.base_accuracy,
                "decay": e.decay,
                "work_per_frame": e.work_per_frame,
                "gain_curve": {"a_max": e.gain_curve_truth.a_max,
                               "b": e.gain_curve_truth.b,
                               "c": e.gain_curve_truth.c},
                "drift_events": [
                    {"t": ev.t, "type": ev.drift_type.value,
                     "magnitude": ev.magnitude,
                     "transition_s": ev.transition_s,
                     "recovery_s": ev.recovery_s}
                    for ev in e.drift_events
                ],
            }
            for e in scenario.ends
        ],
    }


def scenario_from_json(doc: dict) -> Scenario:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version!r} "
                         f"(expected {SCHEMA_VERSION})")
    try:
        ends = tuple(
            MobileEndSpec(
                end_id=e["end_id"],
                arch=_arch_from_doc(e["arch"]),
                drift_events=tuple(
                    DriftInjection(t=ev["t"], drift_type=DriftType(ev["type"]),
                                   magnitude=ev["magnitude"],
                                   transition_s=ev["transition_s"],
                                   recovery_s=ev.get("recovery_s", 150.0))
                    for ev in e.get("drift_events", [])
                ),
                frame_rate=e.get("frame_rate", 1.0),
                frame_bytes=e.get("frame_bytes", 200_000.0),
                base_accuracy=e.get("base_accuracy", 0.8),
                decay=e.get("decay", 0.002),
                gain_curve_truth=AccuracyCurve(**e.get(
                    "gain_curve", {"a_max": 0.82, "b": 0.5, "c": 1.0})),
                work_per_frame=e.get("work_per_frame", 1.0),
            )
            for e in doc["ends"]
        )
        server = ServerSpec(**doc.get("server", {}))
        grouping = GroupingConfig(**doc.get("grouping", {"sigma": 24.0}))
        sampler = SamplerConfig(**doc.get("sampler", {}))
        detector = DetectorConfig(**doc.get("detector", {}))
        return Scenario(
            seed=int(doc["seed"]),
            ends=ends,
            server=server,
            uplink_mbps=doc.get("uplink_mbps", 10.0),
            downlink_mbps=doc.get("downlink_mbps", 20.0),
            policy=Policy(doc.get("policy", "adaptive")),
            duration=doc.get("duration", 600.0),
            grouping=grouping,
            sampler=sampler,
            detector=detector,
            epochs=doc.get("epochs", 10),
            data_reduction=doc.get("data_reduction", 1.0),
            unfrozen_fraction=doc.get("unfrozen_fraction", 0.31),
            lookahead_factor=doc.get("lookahead_factor", 0.1),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"invalid scenario: {exc}") from exc


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return scenario_from_json(doc)


def save_scenario(path, scenario: Scenario) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_json(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- metrics output ---------------------------------------------------------

METRICS_COLUMNS = [
    "task_id", "end_id", "urgency", "trigger_t", "t_infer", "t_upload",
    "t_schedule", "t_retrain", "t_download", "avg_accuracy", "qoe",
]


def write_metrics_csv(path, metrics: SimMetrics) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for m in metrics.tasks:
            writer.writerow([
                m.task_id, m.end_id, repr(m.urgency), repr(m.trigger_t),
                repr(m.t_infer), repr(m.t_upload), repr(m.t_schedule),
                repr(m.t_retrain), repr(m.t_download), repr(m.avg_accuracy),
                repr(m.qoe),
            ])


def write_summary_json(path, metrics: SimMetrics, scenario: Scenario) -> None:
    doc = {
        "policy": scenario.policy.value,
        "seed": scenario.seed,
        "n_tasks": metrics.n_tasks,
        "mean_evolving_time": metrics.mean_evolving_time,
        "mean_t_schedule": metrics.mean_t_schedule,
        "mean_t_retrain": metrics.mean_t_retrain,
    }
    if metrics.report is not None:
        doc.update({
            "q_avg": metrics.report.q_avg,
            "q_t": metrics.report.q_t,
            "sd_schedule": metrics.report.sd_schedule,
            "sd_retrain": metrics.report.sd_retrain,
        })
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_traces(out_dir, scenario: Scenario) -> List[str]:
    """Materialize every end's generated trace as CSV; returns file paths."""
    import os
    paths = []
    for i, spec in enumerate(scenario.ends):
        trace = gen_trace(spec, scenario.seed, i, scenario.duration, scenario.sampler)
        path = os.path.join(out_dir, f"trace_{spec.end_id}.csv")
        write_trace_csv(path, trace)
        paths.append(path)
    return paths
