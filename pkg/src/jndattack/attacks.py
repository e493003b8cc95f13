"""Gradient-descent attack with range/variation regularization, plus the
iterative sign-step, value-step and decision-boundary-projection baselines.

Every attack supports targeted and non-targeted modes (DeepFool is
non-targeted by construction), mutates only its own state, and records
confidence and cost trajectories for each iterate including the start.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .classifier import Model, loss_and_input_gradient, logit_gradients, predict
from .errors import ConfigurationError, InputError, NumericalError
from .regularizers import br_loss, clamp_to_range, tv_loss

STOP_LABEL_FLIP = "first_label_flip"
STOP_CONFIDENCE = "confidence_reached"

# Largest per-pixel step magnitude before the run is treated as divergent:
# a step that saturates the whole intensity range signals a mis-set rate.
MAX_STEP_INF = 255.0

# The cost-descent and value-step dynamics operate on unit-range image
# coordinates (pixel / UNIT_RANGE); their weight and rate presets were tuned
# on that scale, where the quadratic pull toward the original is comparable
# to typical decision-boundary distances. The sign-step epsilon and the
# boundary projection act directly in pixel-intensity units, which is the
# scale their magnitudes refer to. Images enter and leave every attack in
# raw [0, 255] units regardless.
UNIT_RANGE = 255.0


@dataclass(frozen=True)
class AttackConfig:
    """Weights, rates and stopping policy shared by all attack methods."""

    lambda1: float = 10.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 10.0
    alpha: float = 0.05
    epsilon: float = 0.5
    max_iterations: int = 1000
    confidence_threshold: float | None = None
    target_label: int | None = None  # None selects non-targeted mode
    stop_rule: str = STOP_LABEL_FLIP
    deepfool_overshoot: float = 1.02
    run_to_cap: bool = False  # keep iterating past the first fool (trace export)

    def validate(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "alpha", "epsilon"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.max_iterations < 0:
            raise ConfigurationError("max_iterations must be >= 0")
        if self.stop_rule not in (STOP_LABEL_FLIP, STOP_CONFIDENCE):
            raise ConfigurationError(f"unknown stop rule {self.stop_rule!r}")
        if self.stop_rule == STOP_CONFIDENCE:
            if self.confidence_threshold is None:
                raise ConfigurationError("confidence_reached stop rule needs a threshold")
            if not 0.0 <= self.confidence_threshold < 1.0:
                raise ConfigurationError("confidence_threshold must lie in [0, 1)")

    @property
    def targeted(self) -> bool:
        return self.target_label is not None


@dataclass(frozen=True)
class AttackState:
    current_image: np.ndarray
    iteration: int
    original_image: np.ndarray
    true_label: int


@dataclass(frozen=True)
class CostBreakdown:
    """Weighted cost terms; ``total`` is their exact sum."""

    total: float
    loss_term: float
    l2_term: float
    br_term: float
    tv_term: float


@dataclass(frozen=True)
class AttackResult:
    adversarial_image: np.ndarray
    first_fool_iteration: int | None
    success: bool
    confidence_trajectory: list
    cost_trajectory: list
    jnd_l2: float | None
    method: str
    label_trajectory: list

    @property
    def iterations(self) -> int:
        return len(self.confidence_trajectory) - 1


def _mode_sign(config: AttackConfig) -> float:
    """+1 raises the true-label loss, -1 lowers the target-label loss."""
    return -1.0 if config.targeted else 1.0


def _loss_label(config: AttackConfig, true_label: int) -> int:
    return config.target_label if config.targeted else true_label


def _check_mode(config: AttackConfig, true_label: int):
    config.validate()
    if config.targeted and config.target_label == true_label:
        raise ConfigurationError(
            f"targeted attack needs a target different from the true label {true_label}"
        )


def _goal_reached(pred, true_label: int, config: AttackConfig) -> bool:
    if config.targeted:
        fooled = pred.label == config.target_label
        conf = float(pred.full_distribution[config.target_label])
    else:
        fooled = pred.label != true_label
        conf = pred.confidence
    if config.stop_rule == STOP_CONFIDENCE:
        return fooled and conf >= config.confidence_threshold
    return fooled


def _cost_from_ce(ce_value: float, image, original, config: AttackConfig) -> CostBreakdown:
    """Cost terms on unit-range coordinates; see UNIT_RANGE."""
    sign = 1.0 if config.targeted else -1.0
    loss_term = config.lambda1 * sign * ce_value
    diff = (image - original) / UNIT_RANGE
    l2_term = config.lambda2 * float(np.square(diff).sum())
    br_term = config.lambda3 * br_loss(image).value / UNIT_RANGE
    tv_term = config.lambda4 * tv_loss(image).value / UNIT_RANGE ** 2
    return CostBreakdown(
        total=loss_term + l2_term + br_term + tv_term,
        loss_term=loss_term, l2_term=l2_term, br_term=br_term, tv_term=tv_term,
    )


def jnd_cost(state: AttackState, model: Model, config: AttackConfig) -> CostBreakdown:
    """Weighted sum of classification loss, squared distance to the original,
    range penalty and variation penalty at the current iterate.

    In targeted mode the loss term is the cross-entropy toward the target;
    in non-targeted mode it is the negated cross-entropy of the true label,
    so that descending the total drives the model away from it.
    """
    label = _loss_label(config, state.true_label)
    _, ce, _ = loss_and_input_gradient(model, state.current_image, label)
    return _cost_from_ce(ce, state.current_image, state.original_image, config)


def jnd_gradient(state: AttackState, model: Model, config: AttackConfig,
                 ce_grad: np.ndarray | None = None) -> np.ndarray:
    """Analytic gradient of the total cost w.r.t. the unit-range image.

    ``ce_grad`` may carry a precomputed raw-pixel cross-entropy gradient
    toward the mode's loss label; it is converted internally.
    """
    if ce_grad is None:
        label = _loss_label(config, state.true_label)
        _, _, ce_grad = loss_and_input_gradient(model, state.current_image, label)
    sign = 1.0 if config.targeted else -1.0
    # d(CE)/d(x/UNIT) = UNIT * d(CE)/dx; BR and TV gradients convert the same
    # way from the raw-pixel forms returned by the regularizers.
    grad = config.lambda1 * sign * UNIT_RANGE * ce_grad
    grad = grad + config.lambda2 * 2.0 * (state.current_image - state.original_image) / UNIT_RANGE
    if config.lambda3:
        grad = grad + config.lambda3 * br_loss(state.current_image).gradient
    if config.lambda4:
        grad = grad + config.lambda4 * tv_loss(state.current_image).gradient / UNIT_RANGE
    return grad


def _checked_step(step: np.ndarray, method: str) -> np.ndarray:
    """Validate a raw-pixel update step."""
    if not np.isfinite(step).all():
        raise NumericalError(f"{method}: non-finite entries in the update step")
    peak = float(np.abs(step).max()) if step.size else 0.0
    if peak > MAX_STEP_INF:
        raise NumericalError(
            f"{method}: step reaches |{peak:.3g}| > {MAX_STEP_INF}; learning rate looks mis-set"
        )
    return step


def jnd_step(state: AttackState, model: Model, config: AttackConfig,
             ce_grad: np.ndarray | None = None) -> AttackState:
    """One descent step on the cost, followed by clamping into [0, 255].

    The step is alpha times the unit-coordinate cost gradient, applied on
    the unit scale and mapped back to pixels.
    """
    if state.iteration >= config.max_iterations:
        raise InputError("iteration cap already reached")
    step = _checked_step(
        UNIT_RANGE * config.alpha * jnd_gradient(state, model, config, ce_grad), "jnd")
    new_image = clamp_to_range(state.current_image - step)
    return replace(state, current_image=new_image, iteration=state.iteration + 1)


def _start_state(model: Model, image, true_label: int, config: AttackConfig):
    img = np.asarray(image, dtype=np.float64).copy()
    _check_mode(config, true_label)
    pred = predict(model, img)
    if pred.label != true_label:
        raise InputError(
            f"attack requires a correctly classified start (predicted {pred.label}, "
            f"true {true_label})"
        )
    return AttackState(img, 0, img.copy(), true_label)


def _finish(method, state0, best_image, k_fool, confs, costs, labels) -> AttackResult:
    success = k_fool is not None
    adv = best_image if success else state0.current_image
    jnd = float(np.linalg.norm((state0.original_image - adv).ravel())) if success else None
    return AttackResult(
        adversarial_image=adv,
        first_fool_iteration=k_fool,
        success=success,
        confidence_trajectory=confs,
        cost_trajectory=costs,
        jnd_l2=jnd,
        method=method,
        label_trajectory=labels,
    )


def _gradient_attack(model, image, true_label, config, method, step_vector):
    """Shared loop: evaluate, record, stop-check, then apply ``step_vector``.

    ``step_vector(x, ce_grad, x0)`` returns the raw (pre-clamp) additive
    update for the current iterate.
    """
    state0 = _start_state(model, image, true_label, config)
    label = _loss_label(config, true_label)
    x = state0.current_image
    confs, costs, labels = [], [], []
    k_fool, fool_image = None, None
    k = 0
    while True:
        pred, ce, ce_grad = loss_and_input_gradient(model, x, label)
        confs.append(pred.confidence)
        labels.append(pred.label)
        costs.append(_cost_from_ce(ce, x, state0.original_image, config))
        if k > 0 and k_fool is None and _goal_reached(pred, true_label, config):
            k_fool, fool_image = k, x
            if not config.run_to_cap:
                break
        if k >= config.max_iterations:
            break
        step = _checked_step(step_vector(x, ce_grad, state0.original_image), method)
        x = clamp_to_range(x + step)
        k += 1
    final_state = replace(state0, current_image=x, iteration=k)
    return _finish(method, final_state, fool_image, k_fool, confs, costs, labels)


def jnd_attack(model: Model, image, true_label: int, config: AttackConfig) -> AttackResult:
    """Iterate regularized cost descent until the stop rule fires or the cap
    is reached; the first-fool iteration and its image are recorded."""

    def step_vector(x, ce_grad, x0):
        state = AttackState(x, 0, x0, true_label)
        return -UNIT_RANGE * config.alpha * jnd_gradient(state, model, config, ce_grad)

    return _gradient_attack(model, image, true_label, config, "jnd", step_vector)


def fgsm_attack(model: Model, image, true_label: int, config: AttackConfig) -> AttackResult:
    """Iterated sign-of-gradient steps of size epsilon, clamped each iteration."""
    sign = _mode_sign(config)

    def step_vector(x, ce_grad, x0):
        return config.epsilon * np.sign(sign * ce_grad)

    return _gradient_attack(model, image, true_label, config, "fgsm", step_vector)


def fgv_attack(model: Model, image, true_label: int, config: AttackConfig) -> AttackResult:
    """Iterated plain-gradient steps scaled by epsilon (no sign flattening).

    Epsilon multiplies the unit-coordinate loss gradient, like the cost
    attack's rate and unlike the sign attack's raw intensity offset.
    """
    sign = _mode_sign(config)

    def step_vector(x, ce_grad, x0):
        return config.epsilon * sign * UNIT_RANGE ** 2 * ce_grad

    return _gradient_attack(model, image, true_label, config, "fgv", step_vector)


def deepfool_step(model: Model, image, true_label: int):
    """Raw boundary projection: the minimal linearized step and its class.

    For every class c != true, w_c is the logit-gradient difference and
    f_c the logit difference; the step moves |f|/||w||^2 * w toward the
    class minimizing |f_c| / ||w_c||.
    """
    if model.spec.num_classes < 2:
        raise ConfigurationError("decision-boundary projection needs >= 2 classes")
    logits, grads = logit_gradients(model, image)
    best_ratio, best_r = None, None
    for c in range(model.spec.num_classes):
        if c == true_label:
            continue
        w = grads[c] - grads[true_label]
        f = logits[c] - logits[true_label]
        wnorm = float(np.linalg.norm(w.ravel()))
        if wnorm < 1e-12:
            continue
        ratio = abs(f) / wnorm
        if best_ratio is None or ratio < best_ratio:
            best_ratio = ratio
            best_r = (abs(f) / wnorm ** 2) * w
    if best_r is None:
        raise NumericalError("all class-gradient differences vanish; no projection direction")
    return best_r


def deepfool_attack(model: Model, image, true_label: int, config: AttackConfig) -> AttackResult:
    """Iterative projection onto the nearest linearized class boundary with a
    multiplicative overshoot; non-targeted, stops at the first label flip."""
    if config.targeted:
        raise ConfigurationError("deepfool supports only non-targeted mode")
    if config.stop_rule != STOP_LABEL_FLIP:
        raise ConfigurationError("deepfool stops at the first label flip only")
    if model.spec.num_classes < 2:
        raise ConfigurationError("deepfool needs >= 2 classes")
    state0 = _start_state(model, image, true_label, config)
    x0 = state0.original_image
    r_tot = np.zeros_like(x0)
    x = state0.current_image
    confs, costs, labels = [], [], []
    k_fool, fool_image = None, None
    k = 0
    while True:
        pred, ce, _ = loss_and_input_gradient(model, x, true_label)
        confs.append(pred.confidence)
        labels.append(pred.label)
        costs.append(_cost_from_ce(ce, x, x0, config))
        if k > 0 and k_fool is None and _goal_reached(pred, true_label, config):
            k_fool, fool_image = k, x
            break
        if k >= config.max_iterations:
            break
        r_tot = r_tot + _checked_step(deepfool_step(model, x, true_label), "deepfool")
        x = clamp_to_range(x0 + config.deepfool_overshoot * r_tot)
        k += 1
    final_state = replace(state0, current_image=x, iteration=k)
    return _finish("deepfool", final_state, fool_image, k_fool, confs, costs, labels)


ATTACKS = {
    "jnd": jnd_attack,
    "fgsm": fgsm_attack,
    "fgv": fgv_attack,
    "deepfool": deepfool_attack,
}


def run_attack(method: str, model: Model, image, true_label: int,
               config: AttackConfig) -> AttackResult:
    try:
        fn = ATTACKS[method]
    except KeyError:
        raise ConfigurationError(f"unknown attack method {method!r}") from None
    return fn(model, image, true_label, config)
