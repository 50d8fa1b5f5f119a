"""Human-to-robot grasp mapping.

Minimizes a task-space fingertip error plus a direct joint-angle error
over the robot's actuated coordinates:

    E(q) = alpha_task * sum_i ||F_i(human) - F_i(q)||
         + alpha_joint * sum_j |q_human^j - q^j|   (over mapped joints)

Task vectors live in the wrist frame, so the mapping is invariant to
the demonstrated wrist pose, which is copied onto the result. The
solver is projected gradient descent with backtracking; the reported
trace holds the exact (unsmoothed) objective, while gradients smooth
|x| as sqrt(x^2 + eps^2).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .hands.model import (Grasp, actuated_from_q, forward_kinematics,
                          point_jacobian_world)

SMOOTH_EPS = 1e-6
ALPHA_TASK = 1.0
ALPHA_JOINT = 5.0


@dataclass
class RetargetProblem:
    robot: object                       # HandSpec
    human_q: dict                       # human joint name -> radians
    task_points: dict                   # fingertip name -> wrist-frame target
    wrist_rotation: np.ndarray
    wrist_translation: np.ndarray
    alpha_task: float = ALPHA_TASK
    alpha_joint: float = ALPHA_JOINT

    def __post_init__(self):
        if self.alpha_task < 0 or self.alpha_joint < 0:
            raise ConfigurationError("alpha weights must be >= 0")
        missing = [f.name for f in self.robot.fingertip_frames
                   if f.name not in self.task_points]
        if missing:
            raise ConfigurationError(
                f"{self.robot.name}: no task point for fingertips {missing}")


@dataclass
class RetargetResult:
    grasp: Grasp
    trace: list = field(default_factory=list)
    iterations: int = 0

    @property
    def final_cost(self):
        return self.trace[-1] if self.trace else np.nan


def problem_from_demo(demo, robot_spec, alpha_task=ALPHA_TASK,
                      alpha_joint=ALPHA_JOINT):
    return RetargetProblem(robot_spec, dict(demo.q), dict(demo.task_points),
                           np.asarray(demo.wrist_rotation, float),
                           np.asarray(demo.wrist_translation, float),
                           alpha_task=alpha_task, alpha_joint=alpha_joint)


def _mapped_targets(problem):
    """(joint target vector, mask) for robot joints mapped onto human ones."""
    spec = problem.robot
    target = np.zeros(spec.dof)
    mask = np.zeros(spec.dof, dtype=bool)
    for link in spec.links:
        if link.joint_type != "revolute":
            continue
        human_name = spec.human_joint_map.get(link.name)
        if human_name and human_name in problem.human_q:
            target[link.dof_index] = problem.human_q[human_name]
            mask[link.dof_index] = True
    return target, mask


def _direct_init(problem, target, mask):
    spec = problem.robot
    q = np.where(mask, target, 0.0)
    q = np.clip(q, spec.lower, spec.upper)
    return actuated_from_q(spec, q)


def retarget(problem, max_iters=500, tol=1e-6, patience=10,
             step_init=0.05):
    """Solve the mapping; returns the grasp with the demo wrist pose.

    Convergence: objective improvement below ``tol`` for ``patience``
    consecutive iterations, or ``max_iters`` reached. Deterministic
    (initialization is the limit-clamped direct joint mapping).
    """
    spec = problem.robot
    target_q, mask = _mapped_targets(problem)
    tip_names = [f.name for f in spec.fingertip_frames]
    tip_targets = np.array([problem.task_points[n] for n in tip_names])

    a = _direct_init(problem, target_q, mask)
    lo_a = spec.actuated_limits[:, 0]
    hi_a = spec.actuated_limits[:, 1]

    def evaluate(a_vec, with_grad=False):
        q = np.clip(spec.coupling @ a_vec, spec.lower, spec.upper)
        posed = forward_kinematics(spec, Grasp(q, np.array([1.0, 0, 0, 0]),
                                               np.zeros(3)))
        tips = posed.fingertip_points
        residuals = tip_targets - tips
        norms = np.linalg.norm(residuals, axis=1)
        joint_err = np.abs(target_q - q)[mask]
        value = (problem.alpha_task * norms.sum()
                 + problem.alpha_joint * joint_err.sum())
        if not with_grad:
            return value
        grad_q = np.zeros(spec.dof)
        for k, frame in enumerate(spec.fingertip_frames):
            J = point_jacobian_world(spec, posed, frame.link, tips[k])[:, :spec.dof]
            unit = residuals[k] / np.sqrt(norms[k] ** 2 + SMOOTH_EPS ** 2)
            grad_q += problem.alpha_task * (-J.T @ unit)
        diff = q - target_q
        smooth_sign = diff / np.sqrt(diff ** 2 + SMOOTH_EPS ** 2)
        grad_q[mask] += problem.alpha_joint * smooth_sign[mask]
        return value, spec.coupling.T @ grad_q

    value, grad = evaluate(a, with_grad=True)
    trace = [value]
    step = step_init
    stale = 0
    iters = 0
    for iters in range(1, max_iters + 1):
        accepted = False
        for _ in range(30):
            cand = np.clip(a - step * grad, lo_a, hi_a)
            cand_value = evaluate(cand)
            if cand_value < value - 1e-15:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            trace.append(value)
            break
        improvement = value - cand_value
        a = cand
        value = cand_value
        _, grad = evaluate(a, with_grad=True)
        trace.append(value)
        step = min(step * 1.5, 1.0)
        stale = stale + 1 if improvement < tol else 0
        if stale >= patience:
            break

    q = np.clip(spec.coupling @ a, spec.lower, spec.upper)
    grasp = Grasp(q, problem.wrist_rotation.copy(),
                  problem.wrist_translation.copy())
    return RetargetResult(grasp, trace, iters)
