"""
Adjoint-based field inversion of beta_c against reference velocity data.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, gmres, spilu, splu
from scipy.spatial.distance import cdist

from ..errors import AdjointConvergenceError, InvalidArgumentError, SolverError
from ..models.flow import BetaLike, CorrectionField, FlowState, TurbulenceModel, beta_array, equations_for
from ..models.inversion import (
    AdjointCheck,
    AssimilationData,
    InversionProblem,
    InversionResult,
    TerminationReason,
)
from ..models.mesh import Mesh
from .discretization import wall_cells
from .jacobian import colored_jacobian, jacobian_structure
from .solver import (
    clipped_beta,
    perturbation_floors,
    residual_function,
    solve_rans,
    state_terms,
    state_vector,
)


logger = logging.getLogger(__name__)

FD_STEPS = (1e-2, 1e-3, 1e-4)


def _velocity_misfit(state: FlowState, data: AssimilationData) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    cells = data.cells
    du = state.u[cells] - data.u_ref
    dv = state.v[cells] - data.v_ref if data.v_ref is not None else None
    return du, dv


def objective(state: FlowState, problem: InversionProblem, beta_c: BetaLike) -> float:
    """J = mean squared velocity misfit over assimilated cells + (lambda/n) sum (beta_c - 1)^2."""
    data = problem.data
    mesh = problem.mesh
    if data.n_assimilated == 0:
        raise InvalidArgumentError("Assimilation mask selects no cells")
    beta = beta_array(beta_c, mesh.n_cells)
    du, dv = _velocity_misfit(state, data)
    misfit = np.sum(du ** 2)
    if dv is not None:
        misfit += np.sum(dv ** 2)
    regularization = problem.regularization / mesh.n_fluid * np.sum((beta[mesh.fluid] - 1.0) ** 2)
    return float(misfit / data.n_assimilated + regularization)


def objective_state_gradient(state: FlowState, problem: InversionProblem) -> np.ndarray:
    """dJ/dw in the interleaved unknown layout of the residual."""
    mesh = problem.mesh
    data = problem.data
    equations = equations_for(mesh, problem.settings.model)
    du, dv = _velocity_misfit(state, data)
    grad = {name: np.zeros(mesh.n_cells) for name in equations}
    grad["u"][data.cells] = 2.0 * du / data.n_assimilated
    if dv is not None and "v" in grad:
        grad["v"][data.cells] = 2.0 * dv / data.n_assimilated
    return state_vector(grad, equations, mesh)


def _state_fields(state: FlowState) -> Dict[str, np.ndarray]:
    return {name: getattr(state, name) for name in ("u", "v", "p", "k", "omega")}


def assemble_state_jacobian(
    state: FlowState,
    beta_c: BetaLike,
    problem: InversionProblem,
    step: Optional[float] = None
) -> sparse.csr_matrix:
    mesh = problem.mesh
    settings = problem.settings
    equations = equations_for(mesh, settings.model)
    fields = _state_fields(state)
    fun = residual_function(mesh, problem.bc, settings, clipped_beta(beta_c, mesh, settings), fields)
    structure = jacobian_structure(mesh, len(equations))
    w = state_vector(fields, equations, mesh)
    return colored_jacobian(fun, w, structure, step=settings.jacobian_step if step is None else step,
                            typical=perturbation_floors(fields, equations, mesh))


def solve_adjoint(
    jacobian: sparse.spmatrix,
    rhs: np.ndarray,
    method: str = "direct",
    tolerance: float = 1e-8,
    max_iterations: int = 2000
) -> np.ndarray:
    """Solve (dR/dw)^T phi = dJ/dw."""
    rhs = np.asarray(rhs, dtype=float)
    if jacobian.shape != (len(rhs), len(rhs)):
        raise InvalidArgumentError(f"Jacobian shape {jacobian.shape} does not match rhs of length {len(rhs)}")
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)

    transposed = sparse.csc_matrix(jacobian.T)
    history: List[float] = []

    if method == "direct":
        lu = splu(transposed)
        phi = lu.solve(rhs)
        # one step of iterative refinement
        phi += lu.solve(rhs - transposed @ phi)
    elif method == "gmres":
        ilu = spilu(transposed, drop_tol=1e-6, fill_factor=20)
        preconditioner = LinearOperator(transposed.shape, ilu.solve)
        phi, info = gmres(
            transposed, rhs, M=preconditioner, rtol=tolerance, restart=100,
            maxiter=max_iterations, callback=history.append, callback_type="pr_norm",
        )
        if info != 0:
            raise AdjointConvergenceError(
                f"GMRES stopped with info={info} after {len(history)} iterations",
                history=history,
            )
    else:
        raise InvalidArgumentError(f"Unknown adjoint solver: {method}")

    relative = np.linalg.norm(transposed @ phi - rhs) / rhs_norm
    history.append(float(relative))
    if not np.isfinite(relative) or relative > tolerance:
        raise AdjointConvergenceError(
            f"Adjoint residual {relative:.3e} exceeds tolerance {tolerance:.1e}",
            history=history,
        )
    return phi


def beta_sensitivity(state: FlowState, problem: InversionProblem, beta_c: BetaLike) -> np.ndarray:
    """Per-cell dR_omega/d(beta_c); zero where the solver's lower bound is active."""
    mesh = problem.mesh
    if problem.settings.model == TurbulenceModel.LAMINAR:
        return np.zeros(mesh.n_cells)
    beta = beta_array(beta_c, mesh.n_cells)
    terms = state_terms(state, problem.bc)
    sensitivity = terms.production_omega * mesh.volumes
    sensitivity[beta <= problem.settings.beta_min] = 0.0
    # omega is pinned next to walls
    sensitivity[wall_cells(mesh)] = 0.0
    sensitivity[mesh.blanked] = 0.0
    return sensitivity


def total_gradient(phi: np.ndarray, state: FlowState, beta_c: BetaLike,
                   problem: InversionProblem) -> np.ndarray:
    """dJ/dbeta_c = dJ/dbeta_c|explicit - phi^T dR/dbeta_c, zero outside the activity mask."""
    mesh = problem.mesh
    beta = beta_array(beta_c, mesh.n_cells)
    grad = 2.0 * problem.regularization * (beta - 1.0) / mesh.n_fluid

    equations = equations_for(mesh, problem.settings.model)
    if "omega" in equations:
        phi_cells = np.zeros((mesh.n_cells, len(equations)))
        phi_cells[mesh.fluid] = phi.reshape(-1, len(equations))
        grad -= phi_cells[:, equations.index("omega")] * beta_sensitivity(state, problem, beta)

    grad[~problem.active] = 0.0
    return grad


def objective_and_gradient(state: FlowState, beta_c: BetaLike,
                           problem: InversionProblem) -> Tuple[float, np.ndarray]:
    J = objective(state, problem, beta_c)
    rhs = objective_state_gradient(state, problem)
    if np.any(rhs):
        jacobian = assemble_state_jacobian(state, beta_c, problem)
        opt = problem.optimizer
        phi = solve_adjoint(jacobian, rhs, method=opt.adjoint_solver,
                            tolerance=opt.adjoint_tolerance, max_iterations=opt.adjoint_max_iterations)
    else:
        phi = np.zeros_like(rhs)
    return J, total_gradient(phi, state, beta_c, problem)


def _project(beta: np.ndarray, active: np.ndarray, floor: float) -> np.ndarray:
    projected = np.maximum(beta, floor)
    projected[~active] = 1.0
    return projected


def _initial_beta(problem: InversionProblem, initial: Optional[BetaLike]) -> np.ndarray:
    beta = np.ones(problem.mesh.n_cells) if initial is None else beta_array(initial, problem.mesh.n_cells)
    return _project(beta, problem.active, problem.optimizer.beta_floor)


def _plateaued(history: List[float], window: int, tolerance: float) -> bool:
    if len(history) <= window:
        return False
    previous = history[-1 - window]
    if previous == 0.0:
        return True
    return (previous - history[-1]) / abs(previous) < tolerance


def invert(
    problem: InversionProblem,
    initial: Optional[BetaLike] = None,
    initial_state: Optional[FlowState] = None
) -> InversionResult:
    """Minimise J over beta_c on the activity mask.

    Every trial beta_c is fully re-converged, warm-started from the last
    accepted state. A primal failure during the line search halves the step;
    if no step can be taken the partial result is returned.
    """
    mesh = problem.mesh
    active = problem.active & mesh.fluid
    if not np.any(active):
        raise InvalidArgumentError("Activity mask leaves no degrees of freedom")
    opt = problem.optimizer

    beta = _initial_beta(problem, initial)
    state = solve_rans(mesh, problem.bc, beta, problem.settings, initial=initial_state)

    if opt.method == "lbfgs":
        return _invert_lbfgs(problem, beta, state, active)

    J, grad = objective_and_gradient(state, beta, problem)
    objective_history = [J]
    gradient_history = [float(np.linalg.norm(grad))]
    step = opt.initial_step
    reason = TerminationReason.MAX_ITERATIONS
    iterations = 0

    logger.info(
        f"Inversion start: J = {J:.6e}",
        extra={'objective': J, 'active_cells': int(np.count_nonzero(active))}
    )

    for iteration in range(1, opt.max_iterations + 1):
        if J == 0.0 or not np.any(grad):
            reason = TerminationReason.ZERO_GRADIENT
            break

        direction = np.where(active, -grad / mesh.volumes, 0.0)
        direction /= np.max(np.abs(direction))

        accepted = False
        solver_failed = False
        for _ in range(opt.max_halvings + 1):
            trial = _project(beta + step * direction, active, opt.beta_floor)
            try:
                trial_state = solve_rans(mesh, problem.bc, trial, problem.settings, initial=state)
            except SolverError as e:
                logger.debug(f"Trial solve failed at step {step:.3e}: {e}", extra={'step': step})
                solver_failed = True
                step /= 2.0
                continue
            solver_failed = False
            trial_J = objective(trial_state, problem, trial)
            if trial_J <= J + opt.armijo * float(grad @ (trial - beta)):
                accepted = True
                break
            step /= 2.0

        if not accepted:
            reason = TerminationReason.SOLVER_FAILURE if solver_failed else TerminationReason.LINE_SEARCH_FAILED
            logger.warning(
                f"Line search exhausted at iteration {iteration}",
                extra={'iteration': iteration, 'reason': reason.value}
            )
            break

        beta, state = trial, trial_state
        J, grad = objective_and_gradient(state, beta, problem)
        objective_history.append(J)
        gradient_history.append(float(np.linalg.norm(grad)))
        iterations = iteration
        logger.info(
            f"Inversion iteration {iteration}: J = {J:.6e}, step = {step:.3e}",
            extra={'iteration': iteration, 'objective': J, 'step': step}
        )
        step *= 2.0

        if opt.target_reduction is not None and J <= opt.target_reduction * objective_history[0]:
            reason = TerminationReason.TARGET_REDUCTION
            break
        if _plateaued(objective_history, opt.plateau_window, opt.plateau_tolerance):
            reason = TerminationReason.PLATEAU
            break

    return InversionResult(
        beta=CorrectionField(beta=beta),
        state=state,
        objective_history=objective_history,
        gradient_norm_history=gradient_history,
        reason=reason,
        iterations=iterations,
    )


def _invert_lbfgs(problem: InversionProblem, beta0: np.ndarray, state0: FlowState,
                  active: np.ndarray) -> InversionResult:
    """L-BFGS-B on the active cells; returns the best evaluated point.

    objective_history holds the running minimum, so its last entry is the J of
    the returned beta_c.
    """
    mesh = problem.mesh
    opt = problem.optimizer
    last = {"state": state0}
    best = {"J": np.inf, "beta": beta0, "state": state0}
    objective_history: List[float] = []
    gradient_history: List[float] = []

    def expand(x: np.ndarray) -> np.ndarray:
        beta = np.ones(mesh.n_cells)
        beta[active] = x
        return beta

    def fun(x: np.ndarray) -> Tuple[float, np.ndarray]:
        beta = expand(x)
        state = solve_rans(mesh, problem.bc, beta, problem.settings, initial=last["state"])
        J, grad = objective_and_gradient(state, beta, problem)
        last["state"] = state
        if J < best["J"]:
            best.update(J=J, beta=beta, state=state)
            objective_history.append(J)
            gradient_history.append(float(np.linalg.norm(grad)))
        return J, grad[active]

    reason = TerminationReason.OPTIMIZER_CONVERGED
    try:
        result = minimize(
            fun, beta0[active], jac=True, method="L-BFGS-B",
            bounds=[(opt.beta_floor, None)] * int(np.count_nonzero(active)),
            options={"maxiter": opt.max_iterations},
        )
        if result.nit >= opt.max_iterations:
            reason = TerminationReason.MAX_ITERATIONS
        iterations = int(result.nit)
    except SolverError as e:
        logger.warning(f"L-BFGS-B aborted on a failed solve: {e}", extra={'reason': 'solver_failure'})
        reason = TerminationReason.SOLVER_FAILURE
        iterations = len(objective_history)
    else:
        if not np.array_equal(expand(result.x), best["beta"]):
            try:
                fun(result.x)
            except SolverError as e:
                logger.warning(f"Final L-BFGS-B point failed to converge: {e}", extra={'reason': 'solver_failure'})

    if not objective_history:
        objective_history.append(objective(state0, problem, beta0))
        gradient_history.append(0.0)
    return InversionResult(
        beta=CorrectionField(beta=best["beta"]),
        state=best["state"],
        objective_history=objective_history,
        gradient_norm_history=gradient_history,
        reason=reason,
        iterations=iterations,
    )


def _central_difference(problem: InversionProblem, beta: np.ndarray, state: FlowState,
                        cell: int, step: float) -> float:
    values = []
    for sign in (1.0, -1.0):
        perturbed = beta.copy()
        perturbed[cell] += sign * step
        perturbed_state = solve_rans(problem.mesh, problem.bc, perturbed, problem.settings, initial=state)
        values.append(objective(perturbed_state, problem, perturbed))
    return (values[0] - values[1]) / (2.0 * step)


def check_adjoint_gradient(
    problem: InversionProblem,
    beta_c: BetaLike,
    cells: Iterable[int],
    steps: Sequence[float] = FD_STEPS,
    state: Optional[FlowState] = None,
    workers: int = 1
) -> AdjointCheck:
    """Compare adjoint dJ/dbeta_c with central differences from full re-solves.

    For each cell the finite difference is taken from the adjacent pair of
    steps that agree best, using the smaller step of that pair.
    """
    if len(steps) < 2:
        raise InvalidArgumentError("Need at least two finite-difference steps")
    mesh = problem.mesh
    beta = beta_array(beta_c, mesh.n_cells)
    cells = np.asarray(list(cells), dtype=int)
    if state is None:
        state = solve_rans(mesh, problem.bc, beta, problem.settings)
    _, grad = objective_and_gradient(state, beta, problem)

    def sweep(cell: int) -> Tuple[float, float]:
        estimates = [_central_difference(problem, beta, state, cell, h) for h in steps]
        gaps = [abs(estimates[i] - estimates[i + 1]) for i in range(len(steps) - 1)]
        best = int(np.argmin(gaps))
        pair = (best, best + 1)
        chosen = min(pair, key=lambda i: steps[i])
        return estimates[chosen], steps[chosen]

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(sweep, cells))

    fd = np.array([r[0] for r in results])
    used = np.array([r[1] for r in results])
    adjoint = grad[cells]
    floor = 1e-2 * np.max(np.abs(fd)) if len(fd) else 0.0
    scale = np.maximum(np.abs(fd), max(floor, 1e-300))
    relative = np.abs(adjoint - fd) / scale
    logger.info(
        f"Adjoint check on {len(cells)} cells: max relative error {np.max(relative, initial=0.0):.3e}",
        extra={'n_cells': len(cells), 'max_relative_error': float(np.max(relative, initial=0.0))}
    )
    return AdjointCheck(cells=cells, adjoint=adjoint, finite_difference=fd,
                        relative_error=relative, steps=used)


# reference data


def twin_beta(mesh: Mesh, depth: float = 0.5, center: float = 0.5, width: float = 0.15) -> CorrectionField:
    """Gaussian dip of beta_c across the channel height, for twin experiments."""
    height = float(mesh.y_nodes[-1] - mesh.y_nodes[0])
    eta = (mesh.centers[:, 1] - mesh.y_nodes[0]) / height
    beta = 1.0 - depth * np.exp(-((eta - center) / width) ** 2)
    beta[mesh.blanked] = 1.0
    return CorrectionField(beta=beta)


def assimilation_from_state(reference: FlowState, mask: Optional[np.ndarray] = None,
                            source: str = "twin", include_v: bool = False) -> AssimilationData:
    mesh = reference.mesh
    mask = mesh.fluid.copy() if mask is None else np.asarray(mask, dtype=bool) & mesh.fluid
    cells = np.flatnonzero(mask)
    return AssimilationData(
        mask=mask,
        u_ref=reference.u[cells].copy(),
        v_ref=reference.v[cells].copy() if include_v else None,
        source=source,
    )


def box_mask(mesh: Mesh, box: Sequence[float]) -> np.ndarray:
    """Fluid cells whose centres lie in [x0, x1] x [y0, y1]."""
    if len(box) != 4:
        raise InvalidArgumentError(f"Box needs four bounds (x0, x1, y0, y1), got {len(box)}")
    x0, x1, y0, y1 = box
    x, y = mesh.centers[:, 0], mesh.centers[:, 1]
    return mesh.fluid & (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def assimilation_from_samples(mesh: Mesh, samples: pd.DataFrame, source: str = "reference") -> AssimilationData:
    """Nearest-cell sampling of reference points (columns x, y, u_ref and optional v_ref).

    Samples falling into the same cell are averaged.
    """
    missing = {"x", "y", "u_ref"} - set(samples.columns)
    if missing:
        raise InvalidArgumentError(f"Reference samples lack columns: {sorted(missing)}")
    fluid_cells = np.flatnonzero(mesh.fluid)
    distance = cdist(samples[["x", "y"]].to_numpy(dtype=float), mesh.centers[fluid_cells])
    frame = samples.assign(cell=fluid_cells[np.argmin(distance, axis=1)])
    columns = ["u_ref"] + (["v_ref"] if "v_ref" in samples.columns else [])
    grouped = frame.groupby("cell")[columns].mean().sort_index()
    if len(grouped) < len(frame):
        logger.warning(
            f"{len(frame) - len(grouped)} reference samples shared a cell and were averaged",
            extra={'source': source}
        )
    mask = np.zeros(mesh.n_cells, dtype=bool)
    mask[grouped.index.to_numpy()] = True
    return AssimilationData(
        mask=mask,
        u_ref=grouped["u_ref"].to_numpy(),
        v_ref=grouped["v_ref"].to_numpy() if "v_ref" in grouped else None,
        source=source,
    )
