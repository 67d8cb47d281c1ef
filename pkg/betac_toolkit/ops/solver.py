"""
Steady RANS solver with a beta_c-scaled omega production term.

The 1D channel is solved by pseudo-transient Newton on the coupled discrete
residual; 2D domains use SIMPLE pressure-velocity coupling with segregated
k and omega solves. Both converge to the zero of the same residual.
"""
import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from ..errors import InvalidArgumentError, NumericalFailureError, SolverDivergenceError, SolverError
from ..models.flow import (
    BetaLike,
    BoundaryConditions,
    FlowState,
    SolverSettings,
    TurbulenceModel,
    beta_array,
    equations_for,
)
from ..models.mesh import FaceTag, Mesh
from .discretization import (
    TINY,
    SystemAssembly,
    assemble_system,
    bc_gradient,
    boundary_spec,
    constants_for,
    face_geometry,
    near_wall_omega,
    TurbulenceTerms,
    turbulence_terms,
    wall_cells,
)
from .jacobian import colored_jacobian, jacobian_structure
from .mesh import green_gauss


logger = logging.getLogger(__name__)

FIELDS = ("u", "v", "p", "k", "omega")
CLIP_FRACTION = 0.2
MAX_REJECTIONS = 20
REJECT_GROWTH = 10.0
# accepted steps within this fraction of the previous norm count as flat
FLAT_BAND = 0.1
FLAT_CFL_GROWTH = 2.0
MAX_CFL_GROWTH = 10.0
# a warm start must halve its best norm within this many iterations
STALL_WINDOW = 25
STALL_REDUCTION = 0.5
# finite-difference step floor, as a fraction of each field's peak magnitude
STEP_FLOOR = 1e-2


def _check_bc(mesh: Mesh, bc: BoundaryConditions, model: TurbulenceModel) -> None:
    has_inlet = np.any(mesh.face_tag == FaceTag.INLET)
    if mesh.dimensionality == 1 and bc.forcing <= 0:
        raise InvalidArgumentError("1D channel needs a positive driving pressure gradient (forcing)")
    if has_inlet and bc.inlet_velocity is None:
        raise InvalidArgumentError("Inlet faces present but inlet_velocity is not set")
    if has_inlet and model != TurbulenceModel.LAMINAR and (bc.inlet_k is None or bc.inlet_omega is None):
        raise InvalidArgumentError("Turbulent runs with an inlet require inlet_k and inlet_omega")


def clipped_beta(beta_c: BetaLike, mesh: Mesh, settings: SolverSettings) -> np.ndarray:
    return np.maximum(beta_array(beta_c, mesh.n_cells), settings.beta_min)


def _fields(state: FlowState) -> Dict[str, np.ndarray]:
    return {name: getattr(state, name) for name in FIELDS}


def _assemble(mesh: Mesh, bc: BoundaryConditions, settings: SolverSettings,
              beta: np.ndarray, fields: Dict[str, np.ndarray]) -> SystemAssembly:
    return assemble_system(
        mesh, settings.model, bc, beta,
        fields["u"], fields["v"], fields["p"], fields["k"], fields["omega"],
        scheme=settings.scheme, forcing=bc.forcing,
    )


def _residual_columns(asm: SystemAssembly, fields: Dict[str, np.ndarray],
                      equations: Tuple[str, ...], mesh: Mesh) -> np.ndarray:
    columns = []
    for name in equations:
        if name == "p":
            columns.append(asm.continuity)
        else:
            columns.append(asm.equations[name].residual(fields[name]))
    R = np.column_stack(columns)
    R[mesh.blanked] = 0.0
    return R


def _norms(asm: SystemAssembly, R: np.ndarray, fields: Dict[str, np.ndarray],
           equations: Tuple[str, ...], mesh: Mesh) -> Dict[str, float]:
    fluid = mesh.fluid
    norms = {}
    for col, name in enumerate(equations):
        if name == "p":
            scale = asm.continuity_scale
        else:
            scale = asm.equations[name].scale(fields[name], fluid)
        norms[name] = float(np.sum(np.abs(R[fluid, col])) / max(scale, TINY))
    return norms


def _combined(norms: Dict[str, float]) -> float:
    return max(norms.values())


def residual(
    state: FlowState,
    beta_c: BetaLike,
    mesh: Mesh,
    bc: BoundaryConditions,
    settings: Optional[SolverSettings] = None
) -> np.ndarray:
    """Discrete residual R, shape (n_cells, n_equations); blanked rows are zero."""
    settings = settings or SolverSettings(model=state.model)
    if state.u.shape != (mesh.n_cells,):
        raise InvalidArgumentError(f"State has {state.u.shape[0]} cells, mesh has {mesh.n_cells}")
    fields = _fields(state)
    asm = _assemble(mesh, bc, settings, clipped_beta(beta_c, mesh, settings), fields)
    return _residual_columns(asm, fields, equations_for(mesh, settings.model), mesh)


def residual_norms(
    state: FlowState,
    beta_c: BetaLike,
    mesh: Mesh,
    bc: BoundaryConditions,
    settings: Optional[SolverSettings] = None
) -> Dict[str, float]:
    settings = settings or SolverSettings(model=state.model)
    fields = _fields(state)
    equations = equations_for(mesh, settings.model)
    asm = _assemble(mesh, bc, settings, clipped_beta(beta_c, mesh, settings), fields)
    return _norms(asm, _residual_columns(asm, fields, equations, mesh), fields, equations, mesh)


def state_terms(state: FlowState, bc: Optional[BoundaryConditions] = None) -> Optional[TurbulenceTerms]:
    if state.model == TurbulenceModel.LAMINAR:
        return None
    mesh = state.mesh
    bc = bc or state.bc or BoundaryConditions(nu=state.nu, forcing=state.forcing)
    geom = face_geometry(mesh)
    constants = constants_for(state.model)
    grads = {}
    for name in ("u", "v", "k", "omega"):
        kind, value = boundary_spec(geom, name, bc, constants)
        grads[name] = bc_gradient(getattr(state, name), mesh, geom, kind, value)
    return turbulence_terms(mesh, state.model, constants, state.nu, grads["u"], grads["v"],
                            state.k, state.omega, grads["k"], grads["omega"])


def omega_production(state: FlowState, beta_c: BetaLike) -> np.ndarray:
    """beta_c times the omega production per unit volume (gamma * P_k / nu_t)."""
    beta = beta_array(beta_c, state.mesh.n_cells)
    terms = state_terms(state)
    if terms is None:
        return np.zeros(state.mesh.n_cells)
    source = beta * terms.production_omega
    source[state.mesh.blanked] = 0.0
    return source


def eddy_viscosity(state: FlowState) -> np.ndarray:
    terms = state_terms(state)
    if terms is None:
        return np.zeros(state.mesh.n_cells)
    return terms.nu_t


# state <-> unknown vector, interleaved per fluid cell


def state_vector(fields: Dict[str, np.ndarray], equations: Tuple[str, ...], mesh: Mesh) -> np.ndarray:
    return np.column_stack([fields[name] for name in equations])[mesh.fluid].ravel()


def fields_from_vector(w: np.ndarray, template: Dict[str, np.ndarray],
                       equations: Tuple[str, ...], mesh: Mesh) -> Dict[str, np.ndarray]:
    fields = {name: values.copy() for name, values in template.items()}
    block = w.reshape(-1, len(equations))
    for col, name in enumerate(equations):
        fields[name][mesh.fluid] = block[:, col]
    return fields


def residual_function(
    mesh: Mesh,
    bc: BoundaryConditions,
    settings: SolverSettings,
    beta: np.ndarray,
    template: Dict[str, np.ndarray]
) -> Callable[[np.ndarray], np.ndarray]:
    """R(w) over fluid rows, flattened in the same interleaved order as w."""
    equations = equations_for(mesh, settings.model)

    def fun(w: np.ndarray) -> np.ndarray:
        fields = fields_from_vector(w, template, equations, mesh)
        asm = _assemble(mesh, bc, settings, beta, fields)
        return _residual_columns(asm, fields, equations, mesh)[mesh.fluid].ravel()

    return fun


def perturbation_floors(fields: Dict[str, np.ndarray], equations: Tuple[str, ...], mesh: Mesh) -> np.ndarray:
    """Smallest finite-difference step scale per unknown, in the interleaved order of w.

    Steps are relative to |w| above min(1, STEP_FLOOR * peak of the field), so
    small k near walls is perturbed in proportion to itself.
    """
    floors = []
    for name in equations:
        peak = float(np.max(np.abs(fields[name][mesh.fluid]), initial=0.0))
        floors.append(min(1.0, STEP_FLOOR * peak) if peak > 0 else 1.0)
    return np.tile(floors, mesh.n_fluid)


# initial fields


def _reichardt(y_plus: np.ndarray, kappa: float) -> np.ndarray:
    return (np.log1p(kappa * y_plus) / kappa
            + 7.8 * (1.0 - np.exp(-y_plus / 11.0) - (y_plus / 11.0) * np.exp(-y_plus / 3.0)))


def initial_fields(mesh: Mesh, bc: BoundaryConditions, model: TurbulenceModel) -> Dict[str, np.ndarray]:
    n = mesh.n_cells
    fields = {name: np.zeros(n) for name in FIELDS}
    fields["omega"] = np.ones(n)
    c = constants_for(model)

    if mesh.dimensionality == 1:
        if model == TurbulenceModel.LAMINAR:
            return fields
        h = float(mesh.y_nodes[-1])
        u_tau = np.sqrt(bc.forcing * h)
        y = mesh.wall_distance
        y_plus = y * u_tau / bc.nu
        fields["u"] = u_tau * _reichardt(y_plus, c.kappa)
        ramp = np.minimum(1.0, (y_plus / 10.0) ** 2)
        fields["k"] = np.maximum(u_tau ** 2 / np.sqrt(c.beta_star) * ramp, 1e-10 * u_tau ** 2)
        fields["omega"] = np.sqrt((6.0 * bc.nu / (c.beta1 * y ** 2)) ** 2
                                  + (u_tau / (np.sqrt(c.beta_star) * c.kappa * y)) ** 2)
        near_wall = wall_cells(mesh)
        fields["omega"][near_wall] = near_wall_omega(bc.nu, y[near_wall], c)
        return fields

    fluid = mesh.fluid
    fields["u"][fluid] = bc.inlet_velocity or 0.0
    fields["p"][fluid] = bc.outlet_pressure
    if model != TurbulenceModel.LAMINAR:
        fields["k"][fluid] = bc.inlet_k
        fields["omega"][fluid] = bc.inlet_omega
        near_wall = wall_cells(mesh)
        fields["omega"][near_wall] = near_wall_omega(bc.nu, mesh.wall_distance[near_wall], c)
    return fields


def _build_state(mesh: Mesh, bc: BoundaryConditions, settings: SolverSettings,
                 fields: Dict[str, np.ndarray], norms: Dict[str, float],
                 history: List[Dict[str, float]], clip_events: int, iterations: int) -> FlowState:
    state = FlowState(
        mesh=mesh,
        nu=bc.nu,
        model=settings.model,
        u=fields["u"],
        v=fields["v"],
        p=fields["p"],
        k=fields["k"],
        omega=fields["omega"],
        nu_t=np.zeros(mesh.n_cells),
        forcing=bc.forcing,
        residual_norms=norms,
        history=history,
        clip_events=clip_events,
        iterations=iterations,
        bc=bc,
    )
    if np.all(np.isfinite(state.k)) and np.all(np.isfinite(state.omega)):
        state.nu_t = eddy_viscosity(state)
    return state


def _clip_turbulence(new: Dict[str, np.ndarray], old: Dict[str, np.ndarray], fluid: np.ndarray) -> int:
    events = 0
    for name in ("k", "omega"):
        floor = CLIP_FRACTION * old[name]
        low = fluid & (new[name] < floor)
        events += int(np.count_nonzero(low))
        new[name][low] = floor[low]
    return events


def _record(history: List[Dict[str, float]], iteration: int, norms: Dict[str, float], **extra) -> None:
    entry = {"iteration": float(iteration)}
    entry.update(norms)
    entry.update(extra)
    history.append(entry)


def _converged(norms: Dict[str, float], tolerance: float) -> bool:
    return all(value <= tolerance for value in norms.values())


def _solve_newton(mesh: Mesh, bc: BoundaryConditions, settings: SolverSettings,
                  beta: np.ndarray, fields: Dict[str, np.ndarray],
                  stall_window: Optional[int] = None) -> FlowState:
    """Pseudo-transient Newton with switched-evolution CFL control.

    With stall_window set, raises SolverDivergenceError once the best norm has
    not halved for that many iterations.
    """
    equations = equations_for(mesh, settings.model)
    turbulent = settings.model != TurbulenceModel.LAMINAR
    fluid = mesh.fluid
    structure = jacobian_structure(mesh, len(equations))

    def evaluate(f: Dict[str, np.ndarray]) -> Tuple[np.ndarray, Dict[str, float]]:
        asm = _assemble(mesh, bc, settings, beta, f)
        R = _residual_columns(asm, f, equations, mesh)
        return R, _norms(asm, R, f, equations, mesh)

    R, norms = evaluate(fields)
    if not np.all(np.isfinite(R)):
        raise NumericalFailureError("Non-finite residual at the initial state")
    combined = _combined(norms)
    best = combined
    cfl = settings.cfl_initial
    history: List[Dict[str, float]] = []
    clip_events = 0
    rejections = 0
    mark, mark_iteration = combined, 0
    _record(history, 0, norms, cfl=cfl)

    iteration = 0
    while not _converged(norms, settings.tolerance):
        if iteration >= settings.max_iterations:
            raise SolverDivergenceError(
                f"No convergence after {iteration} iterations (max norm {combined:.3e})",
                partial_state=_build_state(mesh, bc, settings, fields, norms, history, clip_events, iteration),
                history=history,
            )
        iteration += 1

        w = state_vector(fields, equations, mesh)
        fun = residual_function(mesh, bc, settings, beta, fields)
        jac = colored_jacobian(fun, w, structure, step=settings.jacobian_step,
                               typical=perturbation_floors(fields, equations, mesh))
        pseudo_time = sparse.diags(np.abs(jac.diagonal()) / cfl)
        dw = spsolve((pseudo_time - jac).tocsc(), R[fluid].ravel())
        if not np.all(np.isfinite(dw)):
            raise NumericalFailureError(
                "Newton update is not finite",
                partial_state=_build_state(mesh, bc, settings, fields, norms, history, clip_events, iteration),
                history=history,
            )

        trial = fields_from_vector(w + dw, fields, equations, mesh)
        clipped = _clip_turbulence(trial, fields, fluid) if turbulent else 0
        R_trial, norms_trial = evaluate(trial)
        combined_trial = _combined(norms_trial)

        if not np.isfinite(combined_trial) or combined_trial > REJECT_GROWTH * combined:
            rejections += 1
            cfl /= 4.0
            logger.debug(
                f"Rejected Newton step {iteration}, cfl reduced to {cfl:.3e}",
                extra={'iteration': iteration, 'cfl': cfl}
            )
            if rejections > MAX_REJECTIONS:
                error_type = NumericalFailureError if not np.isfinite(combined_trial) else SolverDivergenceError
                raise error_type(
                    f"Newton steps rejected {rejections} times in a row",
                    partial_state=_build_state(mesh, bc, settings, fields, norms, history, clip_events, iteration),
                    history=history,
                )
            continue

        rejections = 0
        growth = combined / combined_trial if combined_trial > 0 else np.inf
        if growth < 1.0 - FLAT_BAND:
            cfl *= max(0.5, growth)
        else:
            cfl *= min(MAX_CFL_GROWTH, max(FLAT_CFL_GROWTH, growth))
        cfl = min(cfl, settings.cfl_max)
        fields, R, norms, combined = trial, R_trial, norms_trial, combined_trial
        clip_events += clipped
        _record(history, iteration, norms, cfl=cfl)
        logger.debug(
            f"Newton iteration {iteration}: max norm {combined:.3e}",
            extra={'iteration': iteration, 'residual_norms': norms, 'cfl': cfl}
        )

        if combined > settings.divergence_factor * best:
            raise SolverDivergenceError(
                f"Residual grew beyond {settings.divergence_factor:g} times its best value",
                partial_state=_build_state(mesh, bc, settings, fields, norms, history, clip_events, iteration),
                history=history,
            )
        best = min(best, combined)

        if combined <= STALL_REDUCTION * mark:
            mark, mark_iteration = combined, iteration
        elif stall_window is not None and iteration - mark_iteration >= stall_window:
            raise SolverDivergenceError(
                f"Residual stalled near {combined:.3e} for {stall_window} iterations",
                partial_state=_build_state(mesh, bc, settings, fields, norms, history, clip_events, iteration),
                history=history,
            )

    if clip_events:
        logger.warning(f"Clipped k/omega {clip_events} times", extra={'clip_events': clip_events})
    return _build_state(mesh, bc, settings, fields, norms, history, clip_events, iteration)


def _relaxed_solve(coeffs, geom, phi: np.ndarray, relax: float) -> np.ndarray:
    fluid = geom.fluid_cells
    rhs = coeffs.b[fluid] + (1.0 - relax) / relax * coeffs.a_p[fluid] * phi[fluid]
    out = phi.copy()
    out[fluid] = spsolve(coeffs.matrix(geom, relax).tocsc(), rhs)
    return out


def _pressure_correction(mesh: Mesh, geom, asm: SystemAssembly, d_relaxed: np.ndarray) -> np.ndarray:
    idx = geom.fluid_index
    n = len(geom.fluid_cells)
    d_f = geom.w * d_relaxed[geom.P] + (1.0 - geom.w) * d_relaxed[geom.N]
    c = geom.area * d_f / geom.d_PN
    diag = np.zeros(mesh.n_cells)
    np.add.at(diag, geom.P, c)
    np.add.at(diag, geom.N, c)

    outlet = geom.b_tag == FaceTag.OUTLET
    np.add.at(diag, geom.bP[outlet], geom.b_area[outlet] * d_relaxed[geom.bP[outlet]] / geom.b_dist[outlet])

    rhs = asm.continuity[geom.fluid_cells].copy()
    rows = np.concatenate([np.arange(n), idx[geom.P], idx[geom.N]])
    cols = np.concatenate([np.arange(n), idx[geom.N], idx[geom.P]])
    vals = np.concatenate([diag[geom.fluid_cells], -c, -c])
    matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n)).tolil()
    if not np.any(outlet):
        # pressure level is free without an outlet; pin the first fluid cell
        matrix[0, :] = 0.0
        matrix[0, 0] = 1.0
        rhs[0] = 0.0

    p_corr = np.zeros(mesh.n_cells)
    p_corr[geom.fluid_cells] = spsolve(matrix.tocsc(), rhs)
    return p_corr


def _correction_gradient(p_corr: np.ndarray, mesh: Mesh, geom) -> np.ndarray:
    values = p_corr[geom.bP].copy()
    values[geom.b_tag == FaceTag.OUTLET] = 0.0
    return green_gauss(p_corr, mesh, values)


def _solve_simple(mesh: Mesh, bc: BoundaryConditions, settings: SolverSettings,
                  beta: np.ndarray, fields: Dict[str, np.ndarray]) -> FlowState:
    equations = equations_for(mesh, settings.model)
    turbulent = settings.model != TurbulenceModel.LAMINAR
    geom = face_geometry(mesh)
    fluid = mesh.fluid
    history: List[Dict[str, float]] = []
    clip_events = 0
    best = np.inf

    iteration = 0
    while True:
        asm = _assemble(mesh, bc, settings, beta, fields)
        R = _residual_columns(asm, fields, equations, mesh)
        if not np.all(np.isfinite(R)):
            raise NumericalFailureError(
                f"Non-finite residual at SIMPLE iteration {iteration}",
                partial_state=_build_state(mesh, bc, settings, fields, {}, history, clip_events, iteration),
                history=history,
            )
        norms = _norms(asm, R, fields, equations, mesh)
        combined = _combined(norms)
        _record(history, iteration, norms)
        logger.debug(
            f"SIMPLE iteration {iteration}: max norm {combined:.3e}",
            extra={'iteration': iteration, 'residual_norms': norms}
        )
        if _converged(norms, settings.tolerance):
            break
        if iteration >= settings.max_iterations or combined > settings.divergence_factor * best:
            raise SolverDivergenceError(
                f"SIMPLE stopped at iteration {iteration} with max norm {combined:.3e}",
                partial_state=_build_state(mesh, bc, settings, fields, norms, history, clip_events, iteration),
                history=history,
            )
        best = min(best, combined)
        iteration += 1

        old = {name: values.copy() for name, values in fields.items()}
        alpha_u = settings.relax_momentum
        fields["u"] = _relaxed_solve(asm.equations["u"], geom, fields["u"], alpha_u)
        fields["v"] = _relaxed_solve(asm.equations["v"], geom, fields["v"], alpha_u)

        predicted = _assemble(mesh, bc, settings, beta, fields)
        d_relaxed = np.where(fluid, alpha_u * mesh.volumes / predicted.momentum_diag, 0.0)
        p_corr = _pressure_correction(mesh, geom, predicted, d_relaxed)
        grad_corr = _correction_gradient(p_corr, mesh, geom)
        fields["u"] = fields["u"] - d_relaxed * grad_corr[:, 0]
        fields["v"] = fields["v"] - d_relaxed * grad_corr[:, 1]
        fields["p"] = fields["p"] + settings.relax_pressure * p_corr

        if turbulent:
            alpha_t = settings.relax_turbulence
            fields["k"] = _relaxed_solve(predicted.equations["k"], geom, fields["k"], alpha_t)
            fields["omega"] = _relaxed_solve(predicted.equations["omega"], geom, fields["omega"], alpha_t)
            clip_events += _clip_turbulence(fields, old, fluid)

    if clip_events:
        logger.warning(f"Clipped k/omega {clip_events} times", extra={'clip_events': clip_events})
    return _build_state(mesh, bc, settings, fields, norms, history, clip_events, iteration)


def solve_rans(
    mesh: Mesh,
    bc: BoundaryConditions,
    beta_c: BetaLike = 1.0,
    settings: Optional[SolverSettings] = None,
    initial: Optional[FlowState] = None
) -> FlowState:
    """Converge the RANS system at a frozen beta_c.

    Raises SolverDivergenceError or NumericalFailureError carrying the partial
    state and the residual history. A 1D warm start that stalls or fails is
    retried once from the default initial fields.
    """
    settings = settings or SolverSettings()
    _check_bc(mesh, bc, settings.model)
    beta = clipped_beta(beta_c, mesh, settings)

    if initial is not None:
        if initial.u.shape != (mesh.n_cells,):
            raise InvalidArgumentError("Initial state does not belong to this mesh")
        fields = {name: values.copy() for name, values in _fields(initial).items()}
    else:
        fields = initial_fields(mesh, bc, settings.model)

    logger.debug(
        f"Solving {settings.model.value} flow on {mesh.n_fluid} cells",
        extra={'model': settings.model.value, 'n_cells': mesh.n_fluid, 'dimensionality': mesh.dimensionality}
    )
    if mesh.dimensionality == 1 and initial is None:
        state = _solve_newton(mesh, bc, settings, beta, fields)
    elif mesh.dimensionality == 1:
        try:
            state = _solve_newton(mesh, bc, settings, beta, fields, stall_window=STALL_WINDOW)
        except SolverError as exc:
            logger.warning(
                f"Warm start failed ({exc}), restarting from default initial fields",
                extra={'model': settings.model.value, 'n_cells': mesh.n_fluid}
            )
            state = _solve_newton(mesh, bc, settings, beta, initial_fields(mesh, bc, settings.model))
    else:
        state = _solve_simple(mesh, bc, settings, beta, fields)
    logger.info(
        f"Converged in {state.iterations} iterations",
        extra={'iterations': state.iterations, 'residual_norms': state.residual_norms}
    )
    return state


# wall diagnostics


def skin_friction(state: FlowState, reference_velocity: float) -> Tuple[np.ndarray, np.ndarray]:
    """Wall face centres and c_f = nu * du_t/dn / (0.5 U_ref^2).

    The tangential component is u on y-normal walls and v on x-normal walls.
    """
    mesh = state.mesh
    geom = face_geometry(mesh)
    wall = geom.b_tag == FaceTag.WALL
    P = geom.bP[wall]
    y_normal = np.abs(geom.b_normal[wall, 1]) > 0.5
    tangential = np.where(y_normal, state.u[P], state.v[P])
    tau = state.nu * tangential / geom.b_dist[wall]
    return geom.b_center[wall], tau / (0.5 * reference_velocity ** 2)


def wall_units(state: FlowState) -> Tuple[np.ndarray, np.ndarray, float]:
    """(y+, u+, u_tau) of a 1D channel, with u_tau from the wall shear."""
    mesh = state.mesh
    if mesh.dimensionality != 1:
        raise InvalidArgumentError("Wall units are defined for the 1D channel")
    y = mesh.wall_distance
    first = int(np.argmin(y))
    u_tau = float(np.sqrt(state.nu * state.u[first] / y[first]))
    return y * u_tau / state.nu, state.u / u_tau, u_tau


def fit_log_law(y_plus: np.ndarray, u_plus: np.ndarray,
                lower: float = 30.0, upper: float = 100.0) -> Tuple[float, float]:
    """Least-squares kappa and B of u+ = ln(y+)/kappa + B over lower < y+ < upper."""
    band = (y_plus > lower) & (y_plus < upper)
    if np.count_nonzero(band) < 2:
        raise InvalidArgumentError(f"Fewer than two points with {lower} < y+ < {upper}")
    slope, intercept = np.polyfit(np.log(y_plus[band]), u_plus[band], 1)
    return float(1.0 / slope), float(intercept)
