"""Shared helpers: randomized boundary cases and the float64 reference path."""

from dataclasses import dataclass

import numpy as np

import surgiatm
from atmbind import FlatTensorView


@dataclass(frozen=True)
class Case:
    """One end-to-end scenario: float32 tensors plus layer settings."""

    img32: np.ndarray
    raw32: np.ndarray
    tgt32: np.ndarray
    eta: float
    z: int
    apply_sigmoid: bool
    loss: str

    def views(self) -> tuple[FlatTensorView, FlatTensorView, FlatTensorView]:
        return (
            FlatTensorView.from_array(self.img32),
            FlatTensorView.from_array(self.raw32),
            FlatTensorView.from_array(self.tgt32),
        )


def make_case(seed: int) -> Case:
    rng = np.random.default_rng(seed)
    h = int(rng.integers(6, 48))
    w = int(rng.integers(6, 48))
    sig = bool(rng.integers(0, 2))
    raw = rng.normal(0.0, 2.0, (h, w, 3)) if sig else rng.random((h, w, 3))
    return Case(
        img32=rng.random((h, w, 3), dtype=np.float32),
        raw32=raw.astype(np.float32),
        tgt32=rng.random((h, w, 3), dtype=np.float32),
        eta=float(rng.choice([0.0, 0.1, 1.0])),
        z=int(rng.choice([1, 3, 5, 15])),
        apply_sigmoid=sig,
        loss=str(rng.choice(["l1", "l2"])),
    )


def core_state(case: Case) -> surgiatm.AtmForwardState:
    """The reference: widen exactly as the boundary does, run the core."""
    img = surgiatm.ImageBuffer.from_array(case.img32.astype(np.float64))
    cfg = surgiatm.SurgiAtmConfig(
        eta=case.eta, z=case.z, apply_sigmoid=case.apply_sigmoid
    )
    return surgiatm.forward(img, case.raw32.astype(np.float64), cfg)


def core_grad(case: Case, state: surgiatm.AtmForwardState) -> np.ndarray:
    tgt = surgiatm.ImageBuffer.from_array(case.tgt32.astype(np.float64))
    fn = surgiatm.backward_l1 if case.loss == "l1" else surgiatm.backward_l2
    return fn(state, tgt)
