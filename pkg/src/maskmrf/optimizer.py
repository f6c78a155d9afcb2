"""Total energy assembly, L-BFGS, and the coarse-to-fine synthesis loop.

The objective is E(x) = alpha_style * sum of per-layer style energies
+ alpha_content * sum of per-layer content energies, evaluated on the
feature maps of the current image estimate x. Nearest-neighbour
assignments are recomputed once per outer iteration and held fixed inside
each L-BFGS solve, keeping every sub-problem piecewise smooth.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from maskmrf import features as features_mod
from maskmrf import mrf, tensor
from maskmrf.masks import SoftMaskSet

DEFAULT_ROTATIONS = (-math.pi / 12.0, 0.0, math.pi / 12.0)
DEFAULT_SCALES = (0.85, 1.0, 1.15)


@dataclass(frozen=True)
class SynthesisConfig:
    """All knobs of a synthesis run.

    beta weights the mask channels during matching (useful range roughly
    15 to 35); alpha_style and alpha_content weight the two energy terms.
    """

    alpha_style: float = 1e-4
    alpha_content: float = 20.0
    beta: float = 20.0
    patch_size: int = 3
    stride: int = 1
    style_layers: tuple = ("relu1_1", "relu2_1")
    content_layers: tuple = ("relu1_1", "relu2_1")
    pyramid_levels: int = 3
    level_scale: float = 0.5
    outer_iterations: int = 10
    lbfgs_iterations: int = 50
    lbfgs_memory: int = 10
    line_search_steps: int = 20
    seed: int = 0
    rotations: tuple = DEFAULT_ROTATIONS
    scales: tuple = DEFAULT_SCALES

    def validate(self) -> None:
        if self.alpha_style < 0 or self.alpha_content < 0:
            raise ValueError("energy weights must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and >= 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if not 0.0 < self.level_scale < 1.0:
            raise ValueError("level_scale must lie in (0, 1)")
        if self.outer_iterations < 0 or self.lbfgs_iterations < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.lbfgs_memory < 1:
            raise ValueError("lbfgs_memory must be >= 1")
        if self.line_search_steps < 1:
            raise ValueError("line_search_steps must be >= 1")
        if not self.style_layers and not self.content_layers:
            raise ValueError("at least one style or content layer is required")
        if not self.rotations or not self.scales:
            raise ValueError("rotations and scales must be non-empty")


class LbfgsResult(NamedTuple):
    x: np.ndarray
    energy: float
    accepted_energies: list
    iterations: int
    status: str


def _two_loop(g, s_hist, y_hist, rho_hist):
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += s * (a - b)
    return q


def lbfgs_minimize(
    f,
    x0,
    memory: int = 10,
    max_iterations: int = 50,
    max_line_search_steps: int = 20,
    gradient_tolerance: float = 1e-10,
) -> LbfgsResult:
    """Two-loop L-BFGS with Armijo backtracking.

    f maps an array shaped like x0 to (energy, gradient). Curvature pairs
    with s.y <= 1e-10 are skipped; a failed line search terminates the run.
    Returns the lowest-energy iterate visited, so f(result) <= f(x0).
    """
    shape = np.shape(x0)
    x = np.asarray(x0, dtype=tensor.DTYPE).reshape(-1).copy()

    def evaluate(flat):
        e, g = f(flat.reshape(shape))
        return float(e), np.asarray(g, dtype=tensor.DTYPE).reshape(-1)

    e, g = evaluate(x)
    if not math.isfinite(e):
        raise ValueError(f"energy is not finite at the starting point ({e})")
    best_x, best_e = x.copy(), e
    accepted = [e]
    s_hist, y_hist, rho_hist = [], [], []
    c1 = 1e-4
    status = "max_iterations"
    iterations = 0
    for _ in range(max_iterations):
        if np.max(np.abs(g)) <= gradient_tolerance:
            status = "converged"
            break
        d = -_two_loop(g, s_hist, y_hist, rho_hist)
        dg = float(d @ g)
        if dg >= 0.0:
            d = -g
            dg = -float(g @ g)
        step = 1.0 if s_hist else min(1.0, 1.0 / float(np.sum(np.abs(g))))
        x_new = e_new = g_new = None
        ok = False
        for _ls in range(max_line_search_steps):
            x_new = x + step * d
            e_new, g_new = evaluate(x_new)
            if math.isfinite(e_new) and e_new <= e + c1 * step * dg:
                ok = True
                break
            step *= 0.5
        if not ok:
            status = "line_search_failed"
            break
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10:
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        x, e, g = x_new, e_new, g_new
        iterations += 1
        accepted.append(e)
        if e < best_e:
            best_x, best_e = x.copy(), e
    return LbfgsResult(
        x=best_x.reshape(shape) if shape else best_x,
        energy=best_e,
        accepted_energies=accepted,
        iterations=iterations,
        status=status,
    )


@dataclass
class LevelContext:
    """Everything fixed within one pyramid level.

    Holds the network, config, per-style-layer dictionaries and
    beta-weighted content-mask maps, per-content-layer feature targets,
    and the current NN assignments (refreshed each outer iteration).
    """

    net: features_mod.FeatureNetwork
    cfg: SynthesisConfig
    capture: tuple
    style_dicts: dict
    weighted_masks: dict
    content_targets: dict
    assignments: dict = field(default_factory=dict)


class EnergyTerms(NamedTuple):
    total: float
    style_concat: float
    style_report: float
    content: float
    grad: np.ndarray


def _energy_terms(x, ctx: LevelContext, want_grad: bool = True) -> EnergyTerms:
    cfg = ctx.cfg
    pyramid = features_mod.forward(ctx.net, x, ctx.capture)
    total = 0.0
    style_concat = 0.0
    style_report = 0.0
    content_total = 0.0
    cotangents = {}
    for layer in cfg.style_layers:
        se = mrf.style_energy_and_grad(
            pyramid[layer],
            ctx.weighted_masks[layer],
            ctx.assignments[layer],
            ctx.style_dicts[layer],
            cfg.patch_size,
            cfg.stride,
        )
        total += cfg.alpha_style * se.energy
        style_concat += se.energy
        style_report += mrf.style_report_value(se.feature_term, se.mask_term, cfg.beta)
        cotangents[layer] = cfg.alpha_style * se.grad
    for layer in cfg.content_layers:
        ce, cg = mrf.content_energy_and_grad(pyramid[layer], ctx.content_targets[layer])
        total += cfg.alpha_content * ce
        content_total += ce
        if layer in cotangents:
            cotangents[layer] = cotangents[layer] + cfg.alpha_content * cg
        else:
            cotangents[layer] = cfg.alpha_content * cg
    grad = None
    if want_grad:
        grad = features_mod.backward_to_input(ctx.net, x, cotangents)
    return EnergyTerms(total, style_concat, style_report, content_total, grad)


def total_energy_and_grad(x, ctx: LevelContext):
    """Objective value and its gradient with respect to the image, with
    the context's NN assignments held fixed."""
    terms = _energy_terms(x, ctx, want_grad=True)
    return terms.total, terms.grad


def refresh_assignments(x, ctx: LevelContext) -> None:
    """Recompute every style layer's NN assignment for the current image."""
    cfg = ctx.cfg
    pyramid = features_mod.forward(ctx.net, x, cfg.style_layers)
    for layer in cfg.style_layers:
        queries, _ = mrf.concatenated_patches(
            pyramid[layer], ctx.weighted_masks[layer], cfg.patch_size, cfg.stride
        )
        ctx.assignments[layer] = mrf.find_nn(queries, ctx.style_dicts[layer])


@dataclass(frozen=True)
class TraceRow:
    """One outer iteration's energies; solve_energies lists the accepted
    L-BFGS energies of the solve that produced this row."""

    level: int
    iteration: int
    e_total: float
    e_style: float
    e_content: float
    elapsed_seconds: float
    solve_energies: tuple = ()


@dataclass(frozen=True)
class SynthesisResult:
    image: np.ndarray
    rows: tuple
    config: SynthesisConfig
    assignment_maps: dict


def _layer_size(net, layer, h, w, what):
    try:
        return net.spatial_size_at(layer, h, w)
    except ValueError as exc:
        raise ValueError(f"{what} is too small at this pyramid level ({exc}); "
                         "use fewer pyramid levels") from exc


def prepare_level(net, cfg, content_level, style_level, content_masks, style_masks) -> LevelContext:
    """Build the per-level context: style dictionaries, beta-weighted
    content-mask maps, and content feature targets, all at this level's
    resolutions."""
    capture = tuple(dict.fromkeys(tuple(cfg.style_layers) + tuple(cfg.content_layers)))
    ch, cw = content_level.shape[:2]
    sh, sw = style_level.shape[:2]
    t = cfg.patch_size

    style_pyramid = features_mod.forward(net, style_level, cfg.style_layers) if cfg.style_layers else {}
    content_pyramid = features_mod.forward(net, content_level, capture)

    style_dicts = {}
    weighted = {}
    for layer in cfg.style_layers:
        slh, slw = _layer_size(net, layer, sh, sw, "the style image")
        xlh, xlw = _layer_size(net, layer, ch, cw, "the content image")
        if min(slh, slw) < t or min(xlh, xlw) < t:
            raise ValueError(
                f"layer {layer!r} yields {slh}x{slw} style and {xlh}x{xlw} "
                f"synthesis maps, smaller than one {t}x{t} patch; "
                "use fewer pyramid levels"
            )
        style_mask_map = tensor.resample_bilinear(style_masks.masks, slh, slw)
        style_dicts[layer] = mrf.build_dictionary(
            style_pyramid[layer], style_mask_map, cfg.beta, t,
            rotations=cfg.rotations, scales=cfg.scales,
        )
        weighted[layer] = cfg.beta * tensor.resample_bilinear(content_masks.masks, xlh, xlw)

    content_targets = {layer: content_pyramid[layer] for layer in cfg.content_layers}
    return LevelContext(
        net=net,
        cfg=cfg,
        capture=capture,
        style_dicts=style_dicts,
        weighted_masks=weighted,
        content_targets=content_targets,
    )


def synthesize(content, style, content_masks: SoftMaskSet, style_masks: SoftMaskSet,
               net: features_mod.FeatureNetwork, cfg: SynthesisConfig) -> SynthesisResult:
    """Coarse-to-fine synthesis.

    Level k runs at content-size * level_scale**k. The coarsest level
    starts from seeded uniform [0,1] noise; each finer level starts from
    the bilinear upsample of the previous result. Per outer iteration:
    refresh NN assignments, run one L-BFGS solve, clamp to [0,1]. The
    output always has the content image's dimensions. The content masks
    also serve as the synthesized image's masks.
    """
    cfg.validate()
    content = tensor.as_tensor(content)
    style = tensor.as_tensor(style)
    if content.shape[2] != 3 or style.shape[2] != 3:
        raise ValueError("content and style images must have 3 channels")
    if set(content_masks.labels) != set(style_masks.labels):
        only_c = sorted(set(content_masks.labels) - set(style_masks.labels))
        only_s = sorted(set(style_masks.labels) - set(content_masks.labels))
        raise ValueError(f"mask label sets differ: content-only {only_c}, style-only {only_s}")
    if content_masks.source_size != content.shape[:2]:
        raise ValueError(
            f"content masks are {content_masks.source_size}, image is {content.shape[:2]}"
        )
    if style_masks.source_size != style.shape[:2]:
        raise ValueError(
            f"style masks are {style_masks.source_size}, image is {style.shape[:2]}"
        )

    rng = np.random.default_rng(cfg.seed)
    rows = []
    x = None
    ctx = None
    for level in range(cfg.pyramid_levels - 1, -1, -1):
        factor = cfg.level_scale**level
        ch = max(1, round(content.shape[0] * factor))
        cw = max(1, round(content.shape[1] * factor))
        sh = max(1, round(style.shape[0] * factor))
        sw = max(1, round(style.shape[1] * factor))
        content_level = tensor.resample_bilinear(content, ch, cw)
        style_level = tensor.resample_bilinear(style, sh, sw)
        ctx = prepare_level(net, cfg, content_level, style_level, content_masks, style_masks)
        if x is None:
            x = rng.random((ch, cw, 3))
        else:
            x = tensor.resample_bilinear(x, ch, cw)
        for it in range(cfg.outer_iterations):
            t0 = time.perf_counter()
            refresh_assignments(x, ctx)
            result = lbfgs_minimize(
                lambda img: total_energy_and_grad(img, ctx),
                x,
                memory=cfg.lbfgs_memory,
                max_iterations=cfg.lbfgs_iterations,
                max_line_search_steps=cfg.line_search_steps,
            )
            x = np.clip(result.x, 0.0, 1.0)
            terms = _energy_terms(x, ctx, want_grad=False)
            rows.append(
                TraceRow(
                    level=level,
                    iteration=it,
                    e_total=terms.total,
                    e_style=terms.style_report,
                    e_content=terms.content,
                    elapsed_seconds=time.perf_counter() - t0,
                    solve_energies=tuple(result.accepted_energies),
                )
            )

    assignment_maps = {}
    if ctx is not None and cfg.style_layers and cfg.outer_iterations > 0:
        refresh_assignments(x, ctx)
        for layer in cfg.style_layers:
            lh, lw = net.spatial_size_at(layer, x.shape[0], x.shape[1])
            nh = (lh - cfg.patch_size) // cfg.stride + 1
            nw = (lw - cfg.patch_size) // cfg.stride + 1
            assignment_maps[layer] = mrf.assignment_as_map(ctx.assignments[layer], nh, nw)
    return SynthesisResult(image=x, rows=tuple(rows), config=cfg, assignment_maps=assignment_maps)
