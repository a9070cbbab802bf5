"""Edits in latent space: interpolation, component swaps and re-articulation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import CODE_KINDS, CodeBook, LatentCode
from .renderer import Camera, RenderSettings, render_image


@dataclass(frozen=True)
class CodeSet:
    shape: LatentCode
    appearance: LatentCode
    articulation: LatentCode

    def __post_init__(self):
        for kind in CODE_KINDS:
            if getattr(self, kind).kind != kind:
                raise ValueError(f"{kind} slot holds a {getattr(self, kind).kind} code")

    def as_tuple(self) -> tuple[LatentCode, LatentCode, LatentCode]:
        return self.shape, self.appearance, self.articulation

    @classmethod
    def from_book(cls, book: CodeBook, instance: int = 0, state: int = 0) -> CodeSet:
        return cls(*(c.copy() for c in book.resolve(instance, state)))

    def to_book(self) -> CodeBook:
        return CodeBook(True, {0: self.shape.copy()}, {0: self.appearance.copy()}, {0: self.articulation.copy()})

    @classmethod
    def from_arrays(cls, theta, phi, psi) -> CodeSet:
        return cls(LatentCode("shape", theta), LatentCode("appearance", phi), LatentCode("articulation", psi))


def _check_compatible(a: CodeSet, b: CodeSet):
    for kind in CODE_KINDS:
        ca, cb = getattr(a, kind), getattr(b, kind)
        if len(ca) != len(cb):
            raise ValueError(f"{kind} codes differ in length ({len(ca)} vs {len(cb)})")


def lerp_codes(a: CodeSet, b: CodeSet, t: float) -> CodeSet:
    """(1 - t) a + t b per component; t outside [0, 1] extrapolates."""
    _check_compatible(a, b)
    t = float(t)
    if t == 0.0:
        return CodeSet(*(c.copy() for c in a.as_tuple()))
    if t == 1.0:
        return CodeSet(*(c.copy() for c in b.as_tuple()))
    return CodeSet(*(LatentCode(ca.kind, (1.0 - t) * ca.values + t * cb.values)
                     for ca, cb in zip(a.as_tuple(), b.as_tuple())))


def swap_codes(a: CodeSet, b: CodeSet, which: str) -> CodeSet:
    """``a`` with its ``which`` component taken from ``b``."""
    if which not in CODE_KINDS:
        raise ValueError(f"which must be one of {CODE_KINDS}, got {which!r}")
    _check_compatible(a, b)
    parts = {kind: getattr(a, kind).copy() for kind in CODE_KINDS}
    parts[which] = getattr(b, which).copy()
    return CodeSet(**parts)


@dataclass
class Frame:
    codes: CodeSet
    images: list[tuple[np.ndarray, np.ndarray]]
    mesh: object | None = None


def animate(theta: LatentCode, phi: LatentCode, psi_sequence, cameras: list[Camera], ckpt,
            settings: RenderSettings | None = None, mesh_resolution: int | None = None,
            threads: int = 1) -> list[Frame]:
    """Render the fixed object (theta, phi) under each articulation code in turn."""
    psi_sequence = list(psi_sequence)
    if not psi_sequence:
        raise ValueError("psi_sequence must not be empty")
    settings = settings or RenderSettings(scene_bound_radius=ckpt.config.scene_bound_radius)
    frames = []
    for psi in psi_sequence:
        psi = psi if isinstance(psi, LatentCode) else LatentCode("articulation", psi)
        codes = CodeSet(theta.copy(), phi.copy(), psi.copy())
        images = [render_image(cam, codes.as_tuple(), ckpt.model, settings, threads=threads) for cam in cameras]
        mesh = None
        if mesh_resolution:
            from .geometry import model_mesh

            mesh = model_mesh(ckpt.model, theta, psi, mesh_resolution)
        frames.append(Frame(codes, images, mesh))
    return frames
